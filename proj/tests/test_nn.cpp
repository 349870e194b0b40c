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

#include <doctest.h>

#include <cmath>

#include "divhf/errors.hpp"
#include "divhf/nn.hpp"

using namespace divhf;
using namespace divhf::nn;

namespace {

double act(Activation a, double x)
{
    switch (a) {
    case Activation::tanh:
        return std::tanh(x);
    case Activation::relu:
        return x > 0.0 ? x : 0.0;
    default:
        return x;
    }
}

// Hand-rolled composition with plain loops, independent of Eigen expressions.
std::vector<double> straight_line(const Mlp& mlp, const std::vector<double>& x)
{
    std::vector<double> cur = x;
    for (const auto& L : mlp.layers) {
        std::vector<double> next(L.out(), 0.0);
        for (std::size_t o = 0; o < L.out(); ++o) {
            double s = L.bias[static_cast<Eigen::Index>(o)];
            for (std::size_t i = 0; i < L.in(); ++i)
                s += L.weights(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(i)) * cur[i];
            next[o] = act(L.activation, s);
        }
        cur = std::move(next);
    }
    return cur;
}

Mlp random_mlp(std::vector<std::size_t> sizes, std::vector<Activation> acts, std::uint64_t seed)
{
    Rng rng(seed);
    Mlp m;
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i)
        m.layers.push_back(make_dense(sizes[i], sizes[i + 1], acts[i], rng));
    // Non-zero biases so bias gradients are exercised.
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (auto& L : m.layers)
        for (Eigen::Index j = 0; j < L.bias.size(); ++j)
            L.bias[j] = u(rng);
    return m;
}

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed)
{
    Rng rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j)
            m(i, j) = n(rng);
    return m;
}

// Scalar objective sum(W .* forward(x)) with fixed random W.
double objective(const Mlp& mlp, const Matrix& x, const Matrix& w)
{
    return (predict(mlp, x).array() * w.array()).sum();
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b))); }

} // namespace

TEST_CASE("identity layer passes input through; zero tanh layer outputs zero")
{
    Mlp id;
    id.layers.push_back({Matrix::Identity(3, 3), Vector::Zero(3), Activation::identity});
    Vector x(3);
    x << 1.5, -2.0, 0.25;
    CHECK(predict(id, x) == x);

    Mlp z;
    z.layers.push_back({Matrix::Zero(2, 3), Vector::Zero(2), Activation::tanh});
    CHECK(predict(z, x) == Vector::Zero(2));
}

TEST_CASE("forward matches a straight-line recomputation")
{
    const auto mlp = random_mlp({5, 7, 3}, {Activation::tanh, Activation::identity}, 9);
    const Matrix x = random_matrix(4, 5, 10);
    const Matrix y = forward(mlp, x).output;
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        std::vector<double> row(x.row(r).data(), x.row(r).data() + x.cols());
        const auto ref = straight_line(mlp, row);
        for (std::size_t c = 0; c < ref.size(); ++c)
            CHECK(y(r, static_cast<Eigen::Index>(c)) == doctest::Approx(ref[c]).epsilon(1e-13));
    }
}

TEST_CASE("backward: zero upstream gradient and the linear-map derivative")
{
    const auto mlp = random_mlp({3, 4, 2}, {Activation::tanh, Activation::relu}, 1);
    const Matrix x = random_matrix(5, 3, 2);
    auto fr = forward(mlp, x);
    auto grads = MlpGrads::zeros_like(mlp);
    const Matrix gin = backward(mlp, fr.cache, Matrix::Zero(5, 2), grads);
    CHECK(gin.isZero(0.0));
    CHECK(grads.max_abs() == 0.0);

    Mlp lin;
    lin.layers.push_back({random_matrix(2, 3, 4), Vector::Zero(2), Activation::identity});
    const Matrix x1 = random_matrix(1, 3, 5);
    const Matrix g = random_matrix(1, 2, 6);
    auto lf = forward(lin, x1);
    auto lg = MlpGrads::zeros_like(lin);
    backward(lin, lf.cache, g, lg);
    const Matrix outer = g.transpose() * x1;
    CHECK((lg.layers[0].weights - outer).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((lg.layers[0].bias - g.row(0).transpose()).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("analytic gradients match central finite differences for every activation")
{
    constexpr double h = 1e-5;
    constexpr double tol = 1e-4;
    for (Activation a : {Activation::identity, Activation::tanh, Activation::relu}) {
        CAPTURE(to_string(a));
        auto mlp = random_mlp({4, 6, 3}, {a, Activation::tanh}, 21);
        const Matrix x = random_matrix(3, 4, 22);
        const Matrix w = random_matrix(3, 3, 23);
        auto fr = forward(mlp, x);
        auto grads = MlpGrads::zeros_like(mlp);
        const Matrix gin = backward(mlp, fr.cache, w, grads);

        double worst = 0.0;
        for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
            auto& W = mlp.layers[l].weights;
            for (Eigen::Index i = 0; i < W.size(); ++i) {
                const double keep = W.data()[i];
                W.data()[i] = keep + h;
                const double up = objective(mlp, x, w);
                W.data()[i] = keep - h;
                const double down = objective(mlp, x, w);
                W.data()[i] = keep;
                worst = std::max(worst, rel_err((up - down) / (2 * h), grads.layers[l].weights.data()[i]));
            }
            auto& b = mlp.layers[l].bias;
            for (Eigen::Index i = 0; i < b.size(); ++i) {
                const double keep = b[i];
                b[i] = keep + h;
                const double up = objective(mlp, x, w);
                b[i] = keep - h;
                const double down = objective(mlp, x, w);
                b[i] = keep;
                worst = std::max(worst, rel_err((up - down) / (2 * h), grads.layers[l].bias[i]));
            }
        }
        Matrix xp = x;
        for (Eigen::Index i = 0; i < xp.size(); ++i) {
            const double keep = xp.data()[i];
            xp.data()[i] = keep + h;
            const double up = objective(mlp, xp, w);
            xp.data()[i] = keep - h;
            const double down = objective(mlp, xp, w);
            xp.data()[i] = keep;
            worst = std::max(worst, rel_err((up - down) / (2 * h), gin.data()[i]));
        }
        CHECK(worst < tol);
    }
}

TEST_CASE("stale caches and mismatched shapes are rejected")
{
    auto mlp = random_mlp({3, 2}, {Activation::tanh}, 2);
    auto fr = forward(mlp, random_matrix(2, 3, 3));
    auto grads = MlpGrads::zeros_like(mlp);
    CHECK_THROWS_AS(backward(mlp, fr.cache, Matrix::Ones(2, 5), grads), DimensionError);
    auto state = make_optim_state(mlp, {});
    backward(mlp, fr.cache, Matrix::Ones(2, 2), grads);
    optim_step(mlp, grads, state);
    CHECK_THROWS_AS(backward(mlp, fr.cache, Matrix::Ones(2, 2), grads), ContractError);
    CHECK_THROWS_AS(forward(mlp, random_matrix(2, 4, 1)), DimensionError);
}

TEST_CASE("Adam update")
{
    SUBCASE("one step from zero with unit gradient")
    {
        AdamParams hp;
        hp.step_size = 0.1;
        std::vector<double> p{0.0}, g{1.0}, m{0.0}, v{0.0};
        adam_update(p, g, m, v, 1, hp);
        // m_hat = 1, v_hat = 1 -> p = -0.1 / (1 + eps)
        const double m_hat = (1 - hp.beta1) * 1.0 / (1 - hp.beta1);
        const double v_hat = (1 - hp.beta2) * 1.0 / (1 - hp.beta2);
        CHECK(p[0] == doctest::Approx(-hp.step_size * m_hat / (std::sqrt(v_hat) + hp.epsilon)).epsilon(1e-15));
        CHECK(p[0] == doctest::Approx(-0.1).epsilon(1e-6));
    }
    SUBCASE("zero gradients leave parameters unchanged")
    {
        auto mlp = random_mlp({3, 4, 2}, {Activation::tanh, Activation::identity}, 7);
        const auto before = mlp;
        auto state = make_optim_state(mlp, {});
        optim_step(mlp, MlpGrads::zeros_like(mlp), state);
        for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
            CHECK(mlp.layers[l].weights == before.layers[l].weights);
            CHECK(mlp.layers[l].bias == before.layers[l].bias);
        }
    }
    SUBCASE("identical state and gradients give identical results")
    {
        auto a = random_mlp({3, 2}, {Activation::tanh}, 8);
        auto b = a;
        auto sa = make_optim_state(a, {});
        auto sb = make_optim_state(b, {});
        auto fr = forward(a, random_matrix(4, 3, 9));
        auto g = MlpGrads::zeros_like(a);
        backward(a, fr.cache, Matrix::Ones(4, 2), g);
        optim_step(a, g, sa);
        optim_step(b, g, sb);
        CHECK(a.layers[0].weights == b.layers[0].weights);
        CHECK(sa.step == 1);
    }
    SUBCASE("non-finite gradients are refused without touching parameters")
    {
        auto mlp = random_mlp({2, 2}, {Activation::identity}, 1);
        const auto before = mlp.layers[0].weights;
        auto state = make_optim_state(mlp, {});
        auto g = MlpGrads::zeros_like(mlp);
        g.layers[0].weights(0, 0) = std::nan("");
        CHECK_THROWS_AS(optim_step(mlp, g, state), TrainingError);
        CHECK(mlp.layers[0].weights == before);
        CHECK(state.step == 0);
    }
}

TEST_CASE("network and optimizer state round-trip through JSON")
{
    auto mlp = random_mlp({3, 5, 2}, {Activation::relu, Activation::identity}, 4);
    auto state = make_optim_state(mlp, {});
    auto fr = forward(mlp, random_matrix(2, 3, 1));
    auto g = MlpGrads::zeros_like(mlp);
    backward(mlp, fr.cache, Matrix::Ones(2, 2), g);
    optim_step(mlp, g, state);

    nlohmann::json j = mlp;
    const auto back = j.get<Mlp>();
    REQUIRE(back.layers.size() == mlp.layers.size());
    for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
        CHECK(back.layers[l].weights == mlp.layers[l].weights);
        CHECK(back.layers[l].bias == mlp.layers[l].bias);
        CHECK(back.layers[l].activation == mlp.layers[l].activation);
    }
    nlohmann::json js = state;
    const auto sback = js.get<OptimState>();
    CHECK(sback.step == state.step);
    CHECK(sback.first_moment[0].weights == state.first_moment[0].weights);
    CHECK(sback.second_moment[1].bias == state.second_moment[1].bias);
}
