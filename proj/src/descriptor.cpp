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

#include "divhf/descriptor.hpp"

#include <cmath>
#include <fstream>
#include <string>
#include <unordered_map>

#include "divhf/errors.hpp"

namespace divhf::desc {

std::string to_string(Pooling p)
{
    return p == Pooling::mean_max ? "mean_max" : "bidirectional";
}

Pooling pooling_from_string(const std::string& s)
{
    if (s == "mean_max")
        return Pooling::mean_max;
    if (s == "bidirectional")
        return Pooling::bidirectional;
    throw ValidationError("unknown pooling mode '" + s + "'");
}

std::size_t pooling_factor(Pooling p) { return p == Pooling::mean_max ? 2 : 4; }

namespace {

// Weights w such that w . rows equals the average over t of the forward
// prefix means (first) and of the backward suffix means (second).
std::pair<Vector, Vector> directional_weights(Eigen::Index rows)
{
    const double n = static_cast<double>(rows);
    Vector fwd(rows), bwd(rows);
    double acc = 0.0;
    for (Eigen::Index s = rows; s-- > 0;) {
        acc += 1.0 / static_cast<double>(s + 1);
        fwd[s] = acc / n;
    }
    acc = 0.0;
    for (Eigen::Index s = 0; s < rows; ++s) {
        acc += 1.0 / static_cast<double>(rows - s);
        bwd[s] = acc / n;
    }
    return {fwd, bwd};
}

Matrix features_matrix(const env::Trajectory& trajectory)
{
    if (trajectory.features.size() != trajectory.horizon * trajectory.width || trajectory.horizon == 0)
        throw DimensionError("trajectory feature matrix does not match its shape");
    return Eigen::Map<const Matrix>(trajectory.features.data(), static_cast<Eigen::Index>(trajectory.horizon),
                                    static_cast<Eigen::Index>(trajectory.width));
}

} // namespace

Pooled pool(const Matrix& rows, Pooling pooling)
{
    const Eigen::Index R = rows.rows();
    const Eigen::Index H = rows.cols();
    if (R == 0)
        throw DimensionError("cannot pool an empty sequence");
    Pooled out;
    out.values.resize(H * static_cast<Eigen::Index>(pooling_factor(pooling)));
    out.values.segment(0, H) = rows.colwise().mean().transpose();
    out.argmax.resize(static_cast<std::size_t>(H));
    for (Eigen::Index c = 0; c < H; ++c) {
        Eigen::Index best = 0;
        for (Eigen::Index r = 1; r < R; ++r)
            if (rows(r, c) > rows(best, c))
                best = r;
        out.argmax[static_cast<std::size_t>(c)] = best;
        out.values[H + c] = rows(best, c);
    }
    if (pooling == Pooling::bidirectional) {
        const auto [fwd, bwd] = directional_weights(R);
        out.values.segment(2 * H, H) = rows.transpose() * fwd;
        out.values.segment(3 * H, H) = rows.transpose() * bwd;
    }
    return out;
}

Matrix pool_backward(const Vector& grad_pooled, const Pooled& pooled, Eigen::Index rows, Pooling pooling)
{
    const auto H = static_cast<Eigen::Index>(pooled.argmax.size());
    if (grad_pooled.size() != H * static_cast<Eigen::Index>(pooling_factor(pooling)))
        throw DimensionError("pooled gradient has the wrong width");
    Matrix g(rows, H);
    g.rowwise() = (grad_pooled.segment(0, H) / static_cast<double>(rows)).transpose();
    for (Eigen::Index c = 0; c < H; ++c)
        g(pooled.argmax[static_cast<std::size_t>(c)], c) += grad_pooled[H + c];
    if (pooling == Pooling::bidirectional) {
        const auto [fwd, bwd] = directional_weights(rows);
        g.noalias() += fwd * grad_pooled.segment(2 * H, H).transpose();
        g.noalias() += bwd * grad_pooled.segment(3 * H, H).transpose();
    }
    return g;
}

CompressedSequence compress(const env::Trajectory& trajectory, Pooling pooling)
{
    const Matrix full = features_matrix(trajectory);
    const Eigen::Index T = full.rows();
    const Eigen::Index F = full.cols();
    const Eigen::Index L = pooling == Pooling::mean_max ? 1 : 3;
    std::pair<Vector, Vector> directional;
    if (pooling == Pooling::bidirectional)
        directional = directional_weights(T);

    std::unordered_map<std::string, Eigen::Index> seen;
    std::vector<Eigen::Index> first_row;
    std::vector<Eigen::Index> slot(static_cast<std::size_t>(T));
    for (Eigen::Index t = 0; t < T; ++t) {
        std::string key(reinterpret_cast<const char*>(full.row(t).data()), sizeof(double) * static_cast<std::size_t>(F));
        auto [it, fresh] = seen.emplace(std::move(key), static_cast<Eigen::Index>(first_row.size()));
        if (fresh)
            first_row.push_back(t);
        slot[static_cast<std::size_t>(t)] = it->second;
    }

    CompressedSequence out;
    out.length = T;
    const auto U = static_cast<Eigen::Index>(first_row.size());
    out.rows.resize(U, F);
    for (Eigen::Index u = 0; u < U; ++u)
        out.rows.row(u) = full.row(first_row[static_cast<std::size_t>(u)]);
    out.weights = Matrix::Zero(U, L);
    const double inv_t = 1.0 / static_cast<double>(T);
    for (Eigen::Index t = 0; t < T; ++t) {
        const Eigen::Index u = slot[static_cast<std::size_t>(t)];
        out.weights(u, 0) += inv_t;
        if (L == 3) {
            out.weights(u, 1) += directional.first[t];
            out.weights(u, 2) += directional.second[t];
        }
    }
    return out;
}

Pooled pool_compressed(const Matrix& rows, const Matrix& weights, Pooling pooling)
{
    const Eigen::Index U = rows.rows();
    const Eigen::Index H = rows.cols();
    if (U == 0 || weights.rows() != U)
        throw DimensionError("compressed sequence and weights disagree");
    Pooled out;
    out.values.resize(H * static_cast<Eigen::Index>(pooling_factor(pooling)));
    out.values.segment(0, H) = rows.transpose() * weights.col(0);
    out.argmax.resize(static_cast<std::size_t>(H));
    for (Eigen::Index c = 0; c < H; ++c) {
        Eigen::Index best = 0;
        for (Eigen::Index r = 1; r < U; ++r)
            if (rows(r, c) > rows(best, c))
                best = r;
        out.argmax[static_cast<std::size_t>(c)] = best;
        out.values[H + c] = rows(best, c);
    }
    if (pooling == Pooling::bidirectional) {
        out.values.segment(2 * H, H) = rows.transpose() * weights.col(1);
        out.values.segment(3 * H, H) = rows.transpose() * weights.col(2);
    }
    return out;
}

Matrix pool_compressed_backward(const Vector& grad_pooled, const Pooled& pooled, const Matrix& weights,
                                Pooling pooling)
{
    const auto H = static_cast<Eigen::Index>(pooled.argmax.size());
    if (grad_pooled.size() != H * static_cast<Eigen::Index>(pooling_factor(pooling)))
        throw DimensionError("pooled gradient has the wrong width");
    Matrix g = weights.col(0) * grad_pooled.segment(0, H).transpose();
    for (Eigen::Index c = 0; c < H; ++c)
        g(pooled.argmax[static_cast<std::size_t>(c)], c) += grad_pooled[H + c];
    if (pooling == Pooling::bidirectional) {
        g.noalias() += weights.col(1) * grad_pooled.segment(2 * H, H).transpose();
        g.noalias() += weights.col(2) * grad_pooled.segment(3 * H, H).transpose();
    }
    return g;
}

Vector pooled_summary(const env::Trajectory& trajectory, Pooling pooling)
{
    return pool(features_matrix(trajectory), pooling).values;
}

DescriptorModel make_descriptor(std::size_t feature_width, std::size_t hidden, std::size_t output_dim,
                                Pooling pooling, std::uint64_t seed)
{
    if (output_dim == 0)
        throw DimensionError("descriptor output dimension must be positive");
    Rng rng(seed);
    DescriptorModel m;
    m.pooling = pooling;
    m.embedder.layers.push_back(nn::make_dense(feature_width, hidden, nn::Activation::tanh, rng));
    m.head.layers.push_back(nn::make_dense(hidden * pooling_factor(pooling), hidden, nn::Activation::tanh, rng));
    m.head.layers.push_back(nn::make_dense(hidden, output_dim, nn::Activation::identity, rng));
    return m;
}

namespace {

void check_width(const DescriptorModel& model, const env::Trajectory& trajectory)
{
    if (trajectory.width != model.feature_width())
        throw DimensionError("trajectory width " + std::to_string(trajectory.width)
                             + " does not match descriptor input " + std::to_string(model.feature_width()));
}

} // namespace

Vector encode(const DescriptorModel& model, const env::Trajectory& trajectory)
{
    check_width(model, trajectory);
    const auto seq = compress(trajectory, model.pooling);
    const Matrix emb = nn::predict(model.embedder, seq.rows);
    return nn::predict(model.head, Vector(pool_compressed(emb, seq.weights, model.pooling).values));
}

Encoded encode_with_cache(const DescriptorModel& model, const env::Trajectory& trajectory)
{
    check_width(model, trajectory);
    Encoded res;
    auto seq = compress(trajectory, model.pooling);
    auto emb = nn::forward(model.embedder, seq.rows);
    res.cache.pooled = pool_compressed(emb.output, seq.weights, model.pooling);
    res.cache.weights = std::move(seq.weights);
    res.cache.embed = std::move(emb.cache);
    auto head = nn::forward(model.head, Matrix(res.cache.pooled.values.transpose()));
    res.output = head.output.row(0).transpose();
    res.cache.head = std::move(head.cache);
    return res;
}

DescriptorGrads DescriptorGrads::zeros_like(const DescriptorModel& model)
{
    return {nn::MlpGrads::zeros_like(model.embedder), nn::MlpGrads::zeros_like(model.head)};
}

DescriptorGrads& DescriptorGrads::operator+=(const DescriptorGrads& other)
{
    embedder += other.embedder;
    head += other.head;
    return *this;
}

DescriptorGrads& DescriptorGrads::operator*=(double s)
{
    embedder *= s;
    head *= s;
    return *this;
}

bool DescriptorGrads::all_finite() const { return embedder.all_finite() && head.all_finite(); }

void encode_backward(const DescriptorModel& model, const EncodeCache& cache, const Vector& grad_output,
                     DescriptorGrads& grads)
{
    const Matrix g_pooled = nn::backward(model.head, cache.head, Matrix(grad_output.transpose()), grads.head);
    const Matrix g_rows =
        pool_compressed_backward(g_pooled.row(0).transpose(), cache.pooled, cache.weights, model.pooling);
    nn::backward(model.embedder, cache.embed, g_rows, grads.embedder);
}

Matrix encode_batch_serial(const DescriptorModel& model, std::span<const env::Trajectory> trajectories)
{
    Matrix out(static_cast<Eigen::Index>(trajectories.size()), static_cast<Eigen::Index>(model.output_dim()));
    for (std::size_t i = 0; i < trajectories.size(); ++i)
        out.row(static_cast<Eigen::Index>(i)) = encode(model, trajectories[i]).transpose();
    return out;
}

Matrix encode_batch(const DescriptorModel& model, std::span<const env::Trajectory> trajectories)
{
    Matrix out(static_cast<Eigen::Index>(trajectories.size()), static_cast<Eigen::Index>(model.output_dim()));
    for (const auto& t : trajectories)
        check_width(model, t);
    const auto n = static_cast<std::ptrdiff_t>(trajectories.size());
#pragma omp parallel for schedule(dynamic, 16)
    for (std::ptrdiff_t i = 0; i < n; ++i)
        out.row(i) = encode(model, trajectories[static_cast<std::size_t>(i)]).transpose();
    return out;
}

double cosine_sim(const Vector& a, const Vector& b)
{
    if (a.size() != b.size())
        throw DimensionError("cosine similarity of vectors with different lengths");
    const double na = std::max(a.norm(), cosine_epsilon);
    const double nb = std::max(b.norm(), cosine_epsilon);
    return a.dot(b) / (na * nb);
}

double cosine_sim(std::span<const double> a, std::span<const double> b)
{
    if (a.size() != b.size())
        throw DimensionError("cosine similarity of vectors with different lengths");
    const auto n = static_cast<Eigen::Index>(a.size());
    return cosine_sim(Vector(Eigen::Map<const Vector>(a.data(), n)), Vector(Eigen::Map<const Vector>(b.data(), n)));
}

CosineGrad cosine_sim_grad(const Vector& a, const Vector& b)
{
    if (a.size() != b.size())
        throw DimensionError("cosine similarity of vectors with different lengths");
    const double ra = a.norm();
    const double rb = b.norm();
    const double na = std::max(ra, cosine_epsilon);
    const double nb = std::max(rb, cosine_epsilon);
    const double dot = a.dot(b);
    CosineGrad g;
    g.value = dot / (na * nb);
    g.grad_a = b / (na * nb);
    g.grad_b = a / (na * nb);
    if (ra > cosine_epsilon)
        g.grad_a -= (g.value / (ra * ra)) * a;
    if (rb > cosine_epsilon)
        g.grad_b -= (g.value / (rb * rb)) * b;
    return g;
}

AutoencoderModel make_autoencoder(std::size_t feature_width, std::size_t hidden, std::size_t output_dim,
                                  Pooling pooling, std::uint64_t seed)
{
    AutoencoderModel m;
    m.encoder = make_descriptor(feature_width, hidden, output_dim, pooling, seed);
    Rng rng(derive_seed(seed, {1}));
    m.decoder.layers.push_back(nn::make_dense(output_dim, hidden, nn::Activation::tanh, rng));
    m.decoder.layers.push_back(
        nn::make_dense(hidden, feature_width * pooling_factor(pooling), nn::Activation::identity, rng));
    return m;
}

double autoencode_loss(const AutoencoderModel& model, const env::Trajectory& trajectory)
{
    const Vector code = encode(model.encoder, trajectory);
    const Vector target = pooled_summary(trajectory, model.encoder.pooling);
    const Vector recon = nn::predict(model.decoder, code);
    if (recon.size() != target.size())
        throw DimensionError("decoder output does not match the pooled summary width");
    return (recon - target).squaredNorm() / static_cast<double>(target.size());
}

AutoencoderGrads AutoencoderGrads::zeros_like(const AutoencoderModel& model)
{
    return {DescriptorGrads::zeros_like(model.encoder), nn::MlpGrads::zeros_like(model.decoder)};
}

AutoencoderGrads& AutoencoderGrads::operator+=(const AutoencoderGrads& other)
{
    encoder += other.encoder;
    decoder += other.decoder;
    return *this;
}

AutoencoderGrads& AutoencoderGrads::operator*=(double s)
{
    encoder *= s;
    decoder *= s;
    return *this;
}

double autoencode_loss_grad(const AutoencoderModel& model, const env::Trajectory& trajectory,
                            AutoencoderGrads& grads)
{
    auto enc = encode_with_cache(model.encoder, trajectory);
    const Vector target = pooled_summary(trajectory, model.encoder.pooling);
    auto dec = nn::forward(model.decoder, Matrix(enc.output.transpose()));
    const Vector recon = dec.output.row(0).transpose();
    if (recon.size() != target.size())
        throw DimensionError("decoder output does not match the pooled summary width");
    const Vector diff = recon - target;
    const double n = static_cast<double>(target.size());
    const Matrix g_recon = (2.0 / n) * diff.transpose();
    const Matrix g_code = nn::backward(model.decoder, dec.cache, g_recon, grads.decoder);
    encode_backward(model.encoder, enc.cache, g_code.row(0).transpose(), grads.encoder);
    return diff.squaredNorm() / n;
}

DescriptorOptim make_optim(const DescriptorModel& model, const nn::AdamParams& params)
{
    return {nn::make_optim_state(model.embedder, params), nn::make_optim_state(model.head, params), std::nullopt};
}

DescriptorOptim make_optim(const AutoencoderModel& model, const nn::AdamParams& params)
{
    auto o = make_optim(model.encoder, params);
    o.decoder = nn::make_optim_state(model.decoder, params);
    return o;
}

void optim_step(DescriptorModel& model, const DescriptorGrads& grads, DescriptorOptim& optim)
{
    if (!grads.all_finite())
        throw TrainingError("non-finite gradient");
    nn::optim_step(model.embedder, grads.embedder, optim.embedder);
    nn::optim_step(model.head, grads.head, optim.head);
}

void optim_step(AutoencoderModel& model, const AutoencoderGrads& grads, DescriptorOptim& optim)
{
    if (!optim.decoder)
        throw ContractError("optimizer state has no decoder entry");
    if (!grads.encoder.all_finite() || !grads.decoder.all_finite())
        throw TrainingError("non-finite gradient");
    optim_step(model.encoder, grads.encoder, optim);
    nn::optim_step(model.decoder, grads.decoder, *optim.decoder);
}

void save_checkpoint(const Checkpoint& ck, const std::string& path)
{
    nlohmann::json j;
    j["format"] = "divhf-descriptor";
    j["version"] = Checkpoint::format_version;
    j["method"] = ck.method;
    j["seed"] = ck.seed;
    j["metadata"] = {{"output_dim", ck.model.output_dim()},
                     {"feature_width", ck.model.feature_width()},
                     {"pooling", to_string(ck.model.pooling)},
                     {"feature_layout", ck.feature_layout},
                     {"feature_layout_hash", ck.feature_layout_hash},
                     {"unit_normalize", ck.unit_normalize}};
    j["embedder"] = ck.model.embedder;
    j["head"] = ck.model.head;
    if (ck.decoder)
        j["decoder"] = *ck.decoder;
    if (ck.optim) {
        nlohmann::json o;
        o["embedder"] = ck.optim->embedder;
        o["head"] = ck.optim->head;
        if (ck.optim->decoder)
            o["decoder"] = *ck.optim->decoder;
        j["optimizer"] = std::move(o);
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw StorageError("cannot open " + path + " for writing");
    out << j.dump() << '\n';
    if (!out)
        throw StorageError("failed writing " + path);
}

Checkpoint load_checkpoint(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw MissingInputError("cannot open checkpoint " + path);
    Checkpoint ck;
    try {
        const auto j = nlohmann::json::parse(in);
        if (j.at("format").get<std::string>() != "divhf-descriptor")
            throw ValidationError("not a descriptor checkpoint: " + path);
        if (j.at("version").get<int>() != Checkpoint::format_version)
            throw ValidationError("unsupported checkpoint version in " + path);
        ck.method = j.at("method").get<std::string>();
        ck.seed = j.at("seed").get<std::uint64_t>();
        const auto& meta = j.at("metadata");
        ck.feature_layout = meta.at("feature_layout").get<std::string>();
        ck.feature_layout_hash = meta.at("feature_layout_hash").get<std::uint64_t>();
        ck.unit_normalize = meta.at("unit_normalize").get<bool>();
        ck.model.pooling = pooling_from_string(meta.at("pooling").get<std::string>());
        ck.model.embedder = j.at("embedder").get<nn::Mlp>();
        ck.model.head = j.at("head").get<nn::Mlp>();
        if (ck.model.output_dim() != meta.at("output_dim").get<std::size_t>()
            || ck.model.feature_width() != meta.at("feature_width").get<std::size_t>()
            || ck.model.head.in_dim() != ck.model.pooled_dim())
            throw ValidationError("checkpoint metadata disagrees with its layers");
        if (j.contains("decoder"))
            ck.decoder = j.at("decoder").get<nn::Mlp>();
        if (j.contains("optimizer")) {
            const auto& o = j.at("optimizer");
            DescriptorOptim opt;
            opt.embedder = o.at("embedder").get<nn::OptimState>();
            opt.head = o.at("head").get<nn::OptimState>();
            if (o.contains("decoder"))
                opt.decoder = o.at("decoder").get<nn::OptimState>();
            ck.optim = std::move(opt);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("malformed checkpoint " + path + ": " + e.what());
    }
    return ck;
}

} // namespace divhf::desc
