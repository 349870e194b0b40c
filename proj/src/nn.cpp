// Copyright 2026 The divhf Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "divhf/nn.hpp"

#include <cmath>

#include "divhf/errors.hpp"

namespace divhf::nn {

std::string to_string(Activation a)
{
    switch (a) {
    case Activation::identity: return "identity";
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    }
    return "identity";
}

Activation activation_from_string(const std::string& s)
{
    if (s == "identity")
        return Activation::identity;
    if (s == "tanh")
        return Activation::tanh;
    if (s == "relu")
        return Activation::relu;
    throw ValidationError("unknown activation '" + s + "'");
}

DenseLayer make_dense(std::size_t in, std::size_t out, Activation activation, Rng& rng)
{
    if (in == 0 || out == 0)
        throw DimensionError("dense layer sizes must be positive");
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> u(-limit, limit);
    DenseLayer layer;
    layer.weights.resize(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r)
        for (Eigen::Index c = 0; c < layer.weights.cols(); ++c)
            layer.weights(r, c) = u(rng);
    layer.bias = Vector::Zero(static_cast<Eigen::Index>(out));
    layer.activation = activation;
    return layer;
}

std::size_t Mlp::parameter_count() const
{
    std::size_t n = 0;
    for (const auto& l : layers)
        n += static_cast<std::size_t>(l.weights.size() + l.bias.size());
    return n;
}

namespace {

void apply_activation(Activation a, const Matrix& pre, Matrix& out)
{
    switch (a) {
    case Activation::identity: out = pre; break;
    case Activation::tanh: out = pre.array().tanh().matrix(); break;
    case Activation::relu: out = pre.cwiseMax(0.0); break;
    }
}

// dL/dpre given dL/dout and the cached pre-activation.
void activation_backward(Activation a, const Matrix& pre, Matrix& grad)
{
    switch (a) {
    case Activation::identity: break;
    case Activation::tanh: grad.array() *= 1.0 - pre.array().tanh().square(); break;
    case Activation::relu: grad.array() *= (pre.array() > 0.0).cast<double>(); break;
    }
}

void check_input(const Mlp& mlp, const Matrix& input)
{
    if (mlp.layers.empty())
        throw DimensionError("network has no layers");
    if (static_cast<std::size_t>(input.cols()) != mlp.in_dim())
        throw DimensionError("input width " + std::to_string(input.cols()) + " does not match network input "
                             + std::to_string(mlp.in_dim()));
}

} // namespace

ForwardResult forward(const Mlp& mlp, const Matrix& input)
{
    check_input(mlp, input);
    ForwardResult res;
    res.cache.revision = mlp.revision;
    res.cache.inputs.reserve(mlp.layers.size());
    res.cache.pre_activations.reserve(mlp.layers.size());
    Matrix x = input;
    for (const auto& layer : mlp.layers) {
        if (static_cast<std::size_t>(x.cols()) != layer.in())
            throw DimensionError("inconsistent layer shapes");
        Matrix pre = x * layer.weights.transpose();
        pre.rowwise() += layer.bias.transpose();
        Matrix out;
        apply_activation(layer.activation, pre, out);
        res.cache.inputs.push_back(std::move(x));
        res.cache.pre_activations.push_back(std::move(pre));
        x = std::move(out);
    }
    res.output = std::move(x);
    return res;
}

Matrix predict(const Mlp& mlp, const Matrix& input)
{
    check_input(mlp, input);
    Matrix x = input;
    for (const auto& layer : mlp.layers) {
        Matrix pre = x * layer.weights.transpose();
        pre.rowwise() += layer.bias.transpose();
        apply_activation(layer.activation, pre, x);
    }
    return x;
}

Vector predict(const Mlp& mlp, const Vector& input)
{
    Matrix row = input.transpose();
    return predict(mlp, row).row(0).transpose();
}

MlpGrads MlpGrads::zeros_like(const Mlp& mlp)
{
    MlpGrads g;
    g.layers.reserve(mlp.layers.size());
    for (const auto& l : mlp.layers)
        g.layers.push_back({Matrix::Zero(l.weights.rows(), l.weights.cols()), Vector::Zero(l.bias.size())});
    return g;
}

MlpGrads& MlpGrads::operator+=(const MlpGrads& other)
{
    if (other.layers.size() != layers.size())
        throw DimensionError("gradient shapes differ");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        layers[i].weights += other.layers[i].weights;
        layers[i].bias += other.layers[i].bias;
    }
    return *this;
}

MlpGrads& MlpGrads::operator*=(double s)
{
    for (auto& l : layers) {
        l.weights *= s;
        l.bias *= s;
    }
    return *this;
}

bool MlpGrads::all_finite() const
{
    for (const auto& l : layers)
        if (!l.weights.allFinite() || !l.bias.allFinite())
            return false;
    return true;
}

double MlpGrads::max_abs() const
{
    double m = 0.0;
    for (const auto& l : layers) {
        if (l.weights.size() > 0)
            m = std::max(m, l.weights.cwiseAbs().maxCoeff());
        if (l.bias.size() > 0)
            m = std::max(m, l.bias.cwiseAbs().maxCoeff());
    }
    return m;
}

Matrix backward(const Mlp& mlp, const MlpCache& cache, const Matrix& grad_output, MlpGrads& grads)
{
    if (cache.revision != mlp.revision || cache.inputs.size() != mlp.layers.size()
        || cache.pre_activations.size() != mlp.layers.size())
        throw ContractError("activation cache does not belong to this network state");
    if (grads.layers.size() != mlp.layers.size())
        throw ContractError("gradient accumulator does not match the network");
    if (grad_output.rows() != cache.pre_activations.back().rows()
        || static_cast<std::size_t>(grad_output.cols()) != mlp.out_dim())
        throw DimensionError("output gradient shape does not match the cached forward pass");

    Matrix g = grad_output;
    for (std::size_t li = mlp.layers.size(); li-- > 0;) {
        const auto& layer = mlp.layers[li];
        const Matrix& pre = cache.pre_activations[li];
        const Matrix& in = cache.inputs[li];
        if (pre.cols() != layer.weights.rows() || in.cols() != layer.weights.cols())
            throw ContractError("activation cache shapes do not match the network");
        activation_backward(layer.activation, pre, g);
        grads.layers[li].weights.noalias() += g.transpose() * in;
        grads.layers[li].bias.noalias() += g.colwise().sum().transpose();
        g = g * layer.weights;
    }
    return g;
}

OptimState make_optim_state(const Mlp& mlp, const AdamParams& params)
{
    OptimState s;
    s.params = params;
    auto zeros = MlpGrads::zeros_like(mlp);
    s.first_moment = zeros.layers;
    s.second_moment = std::move(zeros.layers);
    return s;
}

void adam_update(std::span<double> params, std::span<const double> grads, std::span<double> m,
                 std::span<double> v, std::uint64_t step, const AdamParams& hp)
{
    if (grads.size() != params.size() || m.size() != params.size() || v.size() != params.size())
        throw DimensionError("optimizer buffers do not match parameter shape");
    const double t = static_cast<double>(step);
    const double c1 = 1.0 - std::pow(hp.beta1, t);
    const double c2 = 1.0 - std::pow(hp.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * grads[i];
        v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * grads[i] * grads[i];
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        params[i] -= hp.step_size * mhat / (std::sqrt(vhat) + hp.epsilon);
    }
}

namespace {

template <typename Derived>
std::span<double> flat(Eigen::PlainObjectBase<Derived>& x)
{
    return {x.data(), static_cast<std::size_t>(x.size())};
}

template <typename Derived>
std::span<const double> flat(const Eigen::PlainObjectBase<Derived>& x)
{
    return {x.data(), static_cast<std::size_t>(x.size())};
}

} // namespace

void optim_step(Mlp& mlp, const MlpGrads& grads, OptimState& state)
{
    if (grads.layers.size() != mlp.layers.size() || state.first_moment.size() != mlp.layers.size()
        || state.second_moment.size() != mlp.layers.size())
        throw DimensionError("optimizer state does not match the network");
    if (!grads.all_finite())
        throw TrainingError("non-finite gradient");
    const std::uint64_t step = state.step + 1;
    for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
        auto& layer = mlp.layers[i];
        adam_update(flat(layer.weights), flat(grads.layers[i].weights), flat(state.first_moment[i].weights),
                    flat(state.second_moment[i].weights), step, state.params);
        adam_update(flat(layer.bias), flat(grads.layers[i].bias), flat(state.first_moment[i].bias),
                    flat(state.second_moment[i].bias), step, state.params);
    }
    state.step = step;
    ++mlp.revision;
}

namespace {

nlohmann::json matrix_json(const Matrix& m)
{
    return {{"rows", m.rows()}, {"cols", m.cols()},
            {"data", std::vector<double>(m.data(), m.data() + m.size())}};
}

Matrix matrix_from_json(const nlohmann::json& j)
{
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto data = j.at("data").get<std::vector<double>>();
    if (rows < 0 || cols < 0 || static_cast<std::size_t>(rows * cols) != data.size())
        throw ValidationError("matrix payload does not match its shape");
    Matrix m(rows, cols);
    std::copy(data.begin(), data.end(), m.data());
    return m;
}

nlohmann::json grads_json(const std::vector<LayerGrad>& g)
{
    auto arr = nlohmann::json::array();
    for (const auto& l : g)
        arr.push_back({{"weights", matrix_json(l.weights)},
                       {"bias", std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size())}});
    return arr;
}

std::vector<LayerGrad> grads_from_json(const nlohmann::json& j)
{
    std::vector<LayerGrad> out;
    for (const auto& l : j) {
        LayerGrad g;
        g.weights = matrix_from_json(l.at("weights"));
        const auto b = l.at("bias").get<std::vector<double>>();
        g.bias = Eigen::Map<const Vector>(b.data(), static_cast<Eigen::Index>(b.size()));
        out.push_back(std::move(g));
    }
    return out;
}

} // namespace

void to_json(nlohmann::json& j, const Mlp& mlp)
{
    j = nlohmann::json::array();
    for (const auto& l : mlp.layers)
        j.push_back({{"in", l.in()},
                     {"out", l.out()},
                     {"activation", to_string(l.activation)},
                     {"weights", matrix_json(l.weights)},
                     {"bias", std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size())}});
}

void from_json(const nlohmann::json& j, Mlp& mlp)
{
    mlp.layers.clear();
    mlp.revision = 0;
    for (const auto& lj : j) {
        DenseLayer l;
        l.activation = activation_from_string(lj.at("activation").get<std::string>());
        l.weights = matrix_from_json(lj.at("weights"));
        const auto b = lj.at("bias").get<std::vector<double>>();
        l.bias = Eigen::Map<const Vector>(b.data(), static_cast<Eigen::Index>(b.size()));
        if (l.in() != lj.at("in").get<std::size_t>() || l.out() != lj.at("out").get<std::size_t>()
            || static_cast<std::size_t>(l.bias.size()) != l.out())
            throw ValidationError("layer shape metadata disagrees with its parameters");
        if (!mlp.layers.empty() && mlp.layers.back().out() != l.in())
            throw ValidationError("consecutive layers have inconsistent shapes");
        if (!l.weights.allFinite() || !l.bias.allFinite())
            throw ValidationError("layer parameters must be finite");
        mlp.layers.push_back(std::move(l));
    }
}

void to_json(nlohmann::json& j, const OptimState& s)
{
    j = {{"step_size", s.params.step_size},
         {"beta1", s.params.beta1},
         {"beta2", s.params.beta2},
         {"epsilon", s.params.epsilon},
         {"step", s.step},
         {"first_moment", grads_json(s.first_moment)},
         {"second_moment", grads_json(s.second_moment)}};
}

void from_json(const nlohmann::json& j, OptimState& s)
{
    s.params.step_size = j.at("step_size").get<double>();
    s.params.beta1 = j.at("beta1").get<double>();
    s.params.beta2 = j.at("beta2").get<double>();
    s.params.epsilon = j.at("epsilon").get<double>();
    s.step = j.at("step").get<std::uint64_t>();
    s.first_moment = grads_from_json(j.at("first_moment"));
    s.second_moment = grads_from_json(j.at("second_moment"));
}

} // namespace divhf::nn
