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
#include <fstream>

#include "divhf/descriptor.hpp"
#include "divhf/errors.hpp"
#include "support.hpp"

using namespace divhf;
using namespace divhf::desc;

namespace {

env::Trajectory sample_trajectory(std::uint64_t seed, std::size_t horizon = 50)
{
    env::EnvConfig cfg;
    cfg.horizon = horizon;
    Rng rng(seed);
    return env::simulate(env::random_solution(0, cfg, 5.0, rng), cfg);
}

std::vector<double> dense(const nn::DenseLayer& L, const std::vector<double>& x)
{
    std::vector<double> y(L.out());
    for (std::size_t o = 0; o < L.out(); ++o) {
        double s = L.bias[static_cast<Eigen::Index>(o)];
        for (std::size_t i = 0; i < L.in(); ++i)
            s += L.weights(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(i)) * x[i];
        y[o] = L.activation == nn::Activation::tanh ? std::tanh(s) : s;
    }
    return y;
}

// Embed every timestep, pool over time by definition, apply the head.
std::vector<double> straight_line_encode(const DescriptorModel& m, const env::Trajectory& t)
{
    const std::size_t T = t.horizon;
    std::vector<std::vector<double>> e;
    for (std::size_t s = 0; s < T; ++s) {
        std::vector<double> x(t.row(s).begin(), t.row(s).end());
        e.push_back(dense(m.embedder.layers[0], x));
    }
    const std::size_t H = e[0].size();
    std::vector<double> pooled;
    for (std::size_t c = 0; c < H; ++c) {
        double s = 0.0;
        for (std::size_t u = 0; u < T; ++u)
            s += e[u][c];
        pooled.push_back(s / T);
    }
    for (std::size_t c = 0; c < H; ++c) {
        double mx = e[0][c];
        for (std::size_t u = 1; u < T; ++u)
            mx = std::max(mx, e[u][c]);
        pooled.push_back(mx);
    }
    if (m.pooling == Pooling::bidirectional) {
        for (int dir = 0; dir < 2; ++dir)
            for (std::size_t c = 0; c < H; ++c) {
                double avg = 0.0;
                for (std::size_t u = 0; u < T; ++u) {
                    const std::size_t lo = dir == 0 ? 0 : u;
                    const std::size_t hi = dir == 0 ? u : T - 1;
                    double s = 0.0;
                    for (std::size_t v = lo; v <= hi; ++v)
                        s += e[v][c];
                    avg += s / static_cast<double>(hi - lo + 1);
                }
                pooled.push_back(avg / T);
            }
    }
    auto y = pooled;
    for (const auto& L : m.head.layers)
        y = dense(L, y);
    return y;
}

void zero_all(nn::Mlp& m)
{
    for (auto& L : m.layers) {
        L.weights.setZero();
        L.bias.setZero();
    }
}

} // namespace

TEST_CASE("encode matches a straight-line recomputation for both poolings")
{
    for (Pooling p : {Pooling::mean_max, Pooling::bidirectional}) {
        CAPTURE(to_string(p));
        const auto m = make_descriptor(8, 6, 3, p, 17);
        for (std::uint64_t s = 0; s < 4; ++s) {
            const auto t = sample_trajectory(100 + s, 37);
            const Vector y = encode(m, t);
            const auto ref = straight_line_encode(m, t);
            REQUIRE(static_cast<std::size_t>(y.size()) == ref.size());
            for (std::size_t i = 0; i < ref.size(); ++i)
                CHECK(y[static_cast<Eigen::Index>(i)] == doctest::Approx(ref[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("compressed pooling equals pooling over every timestep")
{
    for (Pooling p : {Pooling::mean_max, Pooling::bidirectional}) {
        const auto t = sample_trajectory(5, 120);
        const auto m = make_descriptor(8, 5, 2, p, 3);
        const Matrix full = Eigen::Map<const Matrix>(t.features.data(), 120, 8);
        const Matrix emb_full = nn::predict(m.embedder, full);
        const auto ref = pool(emb_full, p);

        const auto seq = compress(t, p);
        CHECK(seq.rows.rows() < 120);
        const Matrix emb = nn::predict(m.embedder, seq.rows);
        const auto got = pool_compressed(emb, seq.weights, p);
        CHECK((got.values - ref.values).cwiseAbs().maxCoeff() < 1e-12);

        // Backward through the compressed form equals the full form summed
        // over duplicate rows.
        Rng rng(2);
        std::normal_distribution<double> n(0.0, 1.0);
        Vector g(ref.values.size());
        for (Eigen::Index i = 0; i < g.size(); ++i)
            g[i] = n(rng);
        const Matrix g_full = pool_backward(g, ref, 120, p);
        const Matrix g_comp = pool_compressed_backward(g, got, seq.weights, p);
        // Map each full row to its distinct row and accumulate.
        Matrix acc = Matrix::Zero(g_comp.rows(), g_comp.cols());
        for (Eigen::Index r = 0; r < 120; ++r) {
            for (Eigen::Index u = 0; u < seq.rows.rows(); ++u) {
                if (seq.rows.row(u) == full.row(r)) {
                    acc.row(u) += g_full.row(r);
                    break;
                }
            }
        }
        CHECK((acc - g_comp).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("zero-parameter model outputs zero; identical trajectories give identical behaviour")
{
    auto m = make_descriptor(8, 4, 3, Pooling::mean_max, 1);
    const auto t = sample_trajectory(9);
    CHECK(encode(m, t) == encode(m, t));
    zero_all(m.embedder);
    zero_all(m.head);
    CHECK(encode(m, t).isZero(0.0));
}

TEST_CASE("encode gradients match central finite differences")
{
    constexpr double h = 1e-5;
    for (Pooling p : {Pooling::mean_max, Pooling::bidirectional}) {
        CAPTURE(to_string(p));
        auto m = make_descriptor(8, 16, 4, p, 29);
        const auto t = sample_trajectory(31, 50);
        Vector w(4);
        w << 0.3, -1.2, 0.7, 2.0;
        auto obj = [&] { return encode(m, t).dot(w); };
        auto enc = encode_with_cache(m, t);
        auto grads = DescriptorGrads::zeros_like(m);
        encode_backward(m, enc.cache, w, grads);
        double worst = 0.0;
        for (auto [net, g] : {std::pair{&m.embedder, &grads.embedder}, std::pair{&m.head, &grads.head}}) {
            for (std::size_t l = 0; l < net->layers.size(); ++l) {
                auto& W = net->layers[l].weights;
                for (Eigen::Index i = 0; i < W.size(); ++i) {
                    const double keep = W.data()[i];
                    W.data()[i] = keep + h;
                    const double up = obj();
                    W.data()[i] = keep - h;
                    const double down = obj();
                    W.data()[i] = keep;
                    const double fd = (up - down) / (2 * h);
                    const double an = g->layers[l].weights.data()[i];
                    worst = std::max(worst, std::abs(fd - an) / std::max(1.0, std::max(std::abs(fd), std::abs(an))));
                }
            }
        }
        CHECK(worst < 1e-4);
    }
}

TEST_CASE("cosine similarity")
{
    Vector v(3), a(2), b(2), c(2);
    v << 0.5, -2.0, 3.0;
    a << 1, 0;
    b << 0, 1;
    c << -1, 0;
    CHECK(cosine_sim(v, v) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(cosine_sim(a, b) == 0.0);
    CHECK(cosine_sim(a, c) == -1.0);
    Vector u(3);
    u << 1.0, 2.0, -0.5;
    CHECK(cosine_sim(u, v) == doctest::Approx(cosine_sim(v, u)).epsilon(1e-15));
    CHECK(cosine_sim(Vector(7.5 * u), v) == doctest::Approx(cosine_sim(u, v)).epsilon(1e-14));
    CHECK(cosine_sim(Vector::Zero(3), v) == 0.0);
    CHECK_THROWS_AS(cosine_sim(a, v), DimensionError);

    const double h = 1e-6;
    const auto g = cosine_sim_grad(u, v);
    for (Eigen::Index i = 0; i < 3; ++i) {
        Vector up = u, dn = u;
        up[i] += h;
        dn[i] -= h;
        CHECK(g.grad_a[i] == doctest::Approx((cosine_sim(up, v) - cosine_sim(dn, v)) / (2 * h)).epsilon(1e-7));
    }
}

TEST_CASE("auto-encoder reconstruction loss")
{
    auto ae = make_autoencoder(8, 6, 3, Pooling::mean_max, 4);
    const auto t = sample_trajectory(8);
    const Vector target = pooled_summary(t, Pooling::mean_max);
    CHECK(target.size() == 16);

    SUBCASE("independent MSE recomputation")
    {
        const Vector recon = nn::predict(ae.decoder, encode(ae.encoder, t));
        double s = 0.0;
        for (Eigen::Index i = 0; i < target.size(); ++i)
            s += (recon[i] - target[i]) * (recon[i] - target[i]);
        CHECK(autoencode_loss(ae, t) == doctest::Approx(s / 16.0).epsilon(1e-14));
    }
    SUBCASE("zero decoder gives mean squared target")
    {
        zero_all(ae.decoder);
        CHECK(autoencode_loss(ae, t) == doctest::Approx(target.squaredNorm() / 16.0).epsilon(1e-14));
    }
    SUBCASE("decoder bias equal to the summary gives zero")
    {
        for (auto& L : ae.decoder.layers)
            L.weights.setZero();
        ae.decoder.layers.back().bias = target;
        CHECK(autoencode_loss(ae, t) == doctest::Approx(0.0).epsilon(1e-30));
    }
    SUBCASE("gradient against finite differences")
    {
        auto grads = AutoencoderGrads::zeros_like(ae);
        autoencode_loss_grad(ae, t, grads);
        double worst = 0.0;
        auto& W = ae.encoder.embedder.layers[0].weights;
        for (Eigen::Index i = 0; i < W.size(); ++i) {
            const double keep = W.data()[i];
            W.data()[i] = keep + 1e-5;
            const double up = autoencode_loss(ae, t);
            W.data()[i] = keep - 1e-5;
            const double down = autoencode_loss(ae, t);
            W.data()[i] = keep;
            const double fd = (up - down) / 2e-5;
            const double an = grads.encoder.embedder.layers[0].weights.data()[i];
            worst = std::max(worst, std::abs(fd - an) / std::max(1.0, std::abs(fd)));
        }
        CHECK(worst < 1e-4);
    }
}

TEST_CASE("parallel batch encoding equals the serial reference")
{
    const auto m = make_descriptor(8, 8, 4, Pooling::bidirectional, 6);
    env::EnvConfig cfg;
    const auto ds = env::collect(64, cfg, 5.0, 12);
    std::vector<env::Trajectory> ts;
    for (const auto& r : ds.records())
        ts.push_back(r.trajectory);
    CHECK(encode_batch(m, ts) == encode_batch_serial(m, ts));
}

TEST_CASE("width mismatch is a dimension error")
{
    const auto m = make_descriptor(6, 4, 2, Pooling::mean_max, 1);
    CHECK_THROWS_AS(encode(m, sample_trajectory(1)), DimensionError);
}

TEST_CASE("checkpoints round-trip and reject bad files")
{
    testing::TempDir dir("ckpt");
    env::EnvConfig env;
    auto ae = make_autoencoder(8, 5, 3, Pooling::bidirectional, 2);
    Checkpoint ck;
    ck.method = "autoencoder";
    ck.seed = 2;
    ck.feature_layout = env::feature_layout(env);
    ck.feature_layout_hash = env::feature_layout_hash(env);
    ck.model = ae.encoder;
    ck.decoder = ae.decoder;
    ck.optim = make_optim(ae, nn::AdamParams{});
    const auto path = (dir / "ck.json").string();
    save_checkpoint(ck, path);
    const auto back = load_checkpoint(path);
    CHECK(back.method == "autoencoder");
    CHECK(back.feature_layout_hash == ck.feature_layout_hash);
    CHECK(back.model.pooling == Pooling::bidirectional);
    REQUIRE(back.decoder.has_value());
    const auto t = sample_trajectory(3);
    CHECK(encode(back.model, t) == encode(ck.model, t));
    CHECK(nn::predict(*back.decoder, encode(back.model, t)) == nn::predict(ae.decoder, encode(ae.encoder, t)));

    CHECK_THROWS_AS(load_checkpoint((dir / "absent.json").string()), MissingInputError);
    std::ofstream((dir / "bad.json")) << "{\"format\": \"something-else\"}";
    CHECK_THROWS_AS(load_checkpoint((dir / "bad.json").string()), ValidationError);
    std::ofstream((dir / "junk.json")) << "not json";
    CHECK_THROWS_AS(load_checkpoint((dir / "junk.json").string()), ValidationError);
}
