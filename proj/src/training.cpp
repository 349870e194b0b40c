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

#include "divhf/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "divhf/random.hpp"

namespace divhf::train {

std::string to_string(LossKind k) { return k == LossKind::vanilla ? "vanilla" : "cross_entropy"; }

LossKind loss_kind_from_string(const std::string& s)
{
    if (s == "vanilla")
        return LossKind::vanilla;
    if (s == "cross_entropy")
        return LossKind::cross_entropy;
    throw ValidationError("unknown loss kind '" + s + "'");
}

void LossConfig::validate() const
{
    if (!(temperature > 0.0) || !std::isfinite(temperature))
        throw ValidationError("temperature must be positive");
    if (batch_size < 1)
        throw ValidationError("batch size must be at least 1");
    if (!(learning_rate > 0.0))
        throw ValidationError("learning rate must be positive");
    if (!(heldout_fraction >= 0.0 && heldout_fraction < 1.0))
        throw ValidationError("held-out fraction must lie in [0, 1)");
}

Canonical canonicalize(const PreferenceRecord& record)
{
    pref::validate(record);
    const auto& s = record.most_similar;
    const auto& d = record.most_diverse;
    // Two distinct pairs of a three-element set always share exactly one id.
    Id anchor;
    if (d.contains(s.first))
        anchor = s.first;
    else if (d.contains(s.second))
        anchor = s.second;
    else
        throw ContractError("labelled pairs share no element");
    return {anchor, s.first == anchor ? s.second : s.first, d.first == anchor ? d.second : d.first};
}

double preference_prob(double s_ij, double s_ik, double temperature)
{
    const double a = temperature * s_ij;
    const double b = temperature * s_ik;
    const double m = std::max(a, b);
    const double ea = std::exp(a - m);
    const double eb = std::exp(b - m);
    return ea / (ea + eb);
}

double neg_log_preference(double s_similar, double s_diverse, double temperature)
{
    const double z = temperature * (s_similar - s_diverse);
    return std::max(-z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

double vanilla_loss(const DescriptorModel& model, const PreferenceRecord& record, const env::Dataset& dataset)
{
    const auto c = canonicalize(record);
    const auto ya = desc::encode(model, dataset.trajectory(c.anchor));
    const auto ys = desc::encode(model, dataset.trajectory(c.similar));
    const auto yd = desc::encode(model, dataset.trajectory(c.diverse));
    return desc::cosine_sim(ya, yd) - desc::cosine_sim(ya, ys);
}

double preference_prob(const DescriptorModel& model, const env::Trajectory& xi, const env::Trajectory& xj,
                       const env::Trajectory& xk, double temperature)
{
    const auto yi = desc::encode(model, xi);
    return preference_prob(desc::cosine_sim(yi, desc::encode(model, xj)),
                           desc::cosine_sim(yi, desc::encode(model, xk)), temperature);
}

namespace {

double record_loss(double s_similar, double s_diverse, LossKind kind, double temperature)
{
    return kind == LossKind::vanilla ? s_diverse - s_similar : neg_log_preference(s_similar, s_diverse, temperature);
}

// Encodes each distinct trajectory referenced by the records once.
struct EncodedSet {
    std::unordered_map<Id, Eigen::Index> row;
    nn::Matrix values;

    Eigen::VectorXd operator[](Id id) const { return values.row(row.at(id)).transpose(); }
};

EncodedSet encode_referenced(const DescriptorModel& model, std::span<const PreferenceRecord> records,
                             const env::Dataset& dataset)
{
    EncodedSet set;
    std::vector<env::Trajectory> trajs;
    for (const auto& r : records)
        for (Id id : r.triplet.ids)
            if (set.row.emplace(id, static_cast<Eigen::Index>(trajs.size())).second)
                trajs.push_back(dataset.trajectory(id));
    set.values = desc::encode_batch(model, trajs);
    return set;
}

double mean_loss(const DescriptorModel& model, std::span<const PreferenceRecord> records,
                 const env::Dataset& dataset, LossKind kind, double temperature)
{
    if (records.empty())
        throw ValidationError("loss over an empty batch");
    const auto enc = encode_referenced(model, records, dataset);
    double total = 0.0;
    for (const auto& r : records) {
        const auto c = canonicalize(r);
        const auto ya = enc[c.anchor];
        total += record_loss(desc::cosine_sim(ya, enc[c.similar]), desc::cosine_sim(ya, enc[c.diverse]), kind,
                             temperature);
    }
    return total / static_cast<double>(records.size());
}

double record_loss_and_grad(const DescriptorModel& model, const PreferenceRecord& record,
                            const env::Dataset& dataset, LossKind kind, double temperature,
                            desc::DescriptorGrads& grads)
{
    const auto c = canonicalize(record);
    const auto ea = desc::encode_with_cache(model, dataset.trajectory(c.anchor));
    const auto es = desc::encode_with_cache(model, dataset.trajectory(c.similar));
    const auto ed = desc::encode_with_cache(model, dataset.trajectory(c.diverse));
    const auto sim_s = desc::cosine_sim_grad(ea.output, es.output);
    const auto sim_d = desc::cosine_sim_grad(ea.output, ed.output);

    double d_sim_s, d_sim_d;
    if (kind == LossKind::vanilla) {
        d_sim_s = -1.0;
        d_sim_d = 1.0;
    } else {
        const double miss = 1.0 - preference_prob(sim_s.value, sim_d.value, temperature);
        d_sim_s = -temperature * miss;
        d_sim_d = temperature * miss;
    }
    desc::encode_backward(model, ea.cache, d_sim_s * sim_s.grad_a + d_sim_d * sim_d.grad_a, grads);
    desc::encode_backward(model, es.cache, d_sim_s * sim_s.grad_b, grads);
    desc::encode_backward(model, ed.cache, d_sim_d * sim_d.grad_b, grads);
    return record_loss(sim_s.value, sim_d.value, kind, temperature);
}

} // namespace

double ce_loss(const DescriptorModel& model, std::span<const PreferenceRecord> batch, const env::Dataset& dataset,
               double temperature)
{
    return mean_loss(model, batch, dataset, LossKind::cross_entropy, temperature);
}

double batch_loss(const DescriptorModel& model, std::span<const PreferenceRecord> batch,
                  const env::Dataset& dataset, LossKind kind, double temperature)
{
    return mean_loss(model, batch, dataset, kind, temperature);
}

LossGrad batch_loss_and_grad_serial(const DescriptorModel& model, std::span<const PreferenceRecord> batch,
                                    const env::Dataset& dataset, LossKind kind, double temperature)
{
    if (batch.empty())
        throw ValidationError("loss over an empty batch");
    LossGrad out{0.0, desc::DescriptorGrads::zeros_like(model)};
    for (const auto& r : batch) {
        auto g = desc::DescriptorGrads::zeros_like(model);
        out.loss += record_loss_and_grad(model, r, dataset, kind, temperature, g);
        out.grads += g;
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    out.loss *= inv;
    out.grads *= inv;
    return out;
}

LossGrad batch_loss_and_grad(const DescriptorModel& model, std::span<const PreferenceRecord> batch,
                             const env::Dataset& dataset, LossKind kind, double temperature)
{
    if (batch.empty())
        throw ValidationError("loss over an empty batch");
    for (const auto& r : batch)
        canonicalize(r);
    const auto n = static_cast<std::ptrdiff_t>(batch.size());
    std::vector<desc::DescriptorGrads> per_record(batch.size());
    std::vector<double> losses(batch.size());
    std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic, 4)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const auto u = static_cast<std::size_t>(i);
        try {
            per_record[u] = desc::DescriptorGrads::zeros_like(model);
            losses[u] = record_loss_and_grad(model, batch[u], dataset, kind, temperature, per_record[u]);
        } catch (...) {
#pragma omp critical(divhf_train_failure)
            if (!failure)
                failure = std::current_exception();
        }
    }
    if (failure)
        std::rethrow_exception(failure);

    // Same summation order as the serial reference.
    LossGrad out{0.0, desc::DescriptorGrads::zeros_like(model)};
    for (std::size_t i = 0; i < batch.size(); ++i) {
        out.loss += losses[i];
        out.grads += per_record[i];
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    out.loss *= inv;
    out.grads *= inv;
    return out;
}

AccuracyReport evaluate_accuracy(std::span<const PreferenceRecord> records, const PairSimilarity& similarity)
{
    if (records.empty())
        throw ValidationError("accuracy over an empty record set");
    std::size_t sim_ok = 0, div_ok = 0, both_ok = 0, pair_ok = 0;
    for (const auto& r : records) {
        pref::validate(r);
        const auto pairs = pref::pairs_of(r.triplet);
        std::array<double, 3> sims{};
        std::array<double, 3> dist{};
        for (std::size_t p = 0; p < 3; ++p) {
            sims[p] = similarity(pairs[p].first, pairs[p].second);
            dist[p] = -sims[p];
        }
        const auto predicted = pref::label_from_distances(r.triplet, dist);
        const bool s = predicted.most_similar == r.most_similar;
        const bool d = predicted.most_diverse == r.most_diverse;
        sim_ok += s;
        div_ok += d;
        both_ok += s && d;

        auto index_of = [&](const pref::Pair& p) {
            return static_cast<std::size_t>(std::find(pairs.begin(), pairs.end(), p) - pairs.begin());
        };
        const std::size_t is = index_of(r.most_similar);
        const std::size_t id = index_of(r.most_diverse);
        const std::size_t im = 3 - is - id;
        pair_ok += (sims[is] > sims[im]) + (sims[is] > sims[id]) + (sims[im] > sims[id]);
    }
    const double n = static_cast<double>(records.size());
    return {static_cast<double>(sim_ok) / n, static_cast<double>(div_ok) / n, static_cast<double>(both_ok) / n,
            static_cast<double>(pair_ok) / (3.0 * n), records.size()};
}

AccuracyReport evaluate_accuracy(const DescriptorModel& model, std::span<const PreferenceRecord> records,
                                 const env::Dataset& dataset)
{
    if (records.empty())
        throw ValidationError("accuracy over an empty record set");
    const auto enc = encode_referenced(model, records, dataset);
    return evaluate_accuracy(records, [&enc](Id a, Id b) { return desc::cosine_sim(enc[a], enc[b]); });
}

Split split_records(std::span<const PreferenceRecord> records, double heldout_fraction, std::uint64_t seed)
{
    std::vector<std::size_t> order(records.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, {0x5917}));
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_heldout = static_cast<std::size_t>(std::floor(static_cast<double>(records.size()) * heldout_fraction));
    Split s;
    for (std::size_t i = 0; i < order.size(); ++i)
        (i < n_heldout ? s.heldout : s.train).push_back(records[order[i]]);
    return s;
}

namespace {

bool finite_model(const DescriptorModel& m)
{
    for (const auto* mlp : {&m.embedder, &m.head})
        for (const auto& l : mlp->layers)
            if (!l.weights.allFinite() || !l.bias.allFinite())
                return false;
    return true;
}

} // namespace

TrainResult train(DescriptorModel model, const Split& split, const env::Dataset& dataset, const LossConfig& cfg)
{
    cfg.validate();
    if (split.train.empty())
        throw ValidationError("training needs at least one preference record");
    const auto& eval_set = split.heldout.empty() ? split.train : split.heldout;

    TrainResult res;
    res.optim = desc::make_optim(model, nn::AdamParams{cfg.learning_rate});
    const double initial = mean_loss(model, split.train, dataset, cfg.kind, cfg.temperature);
    if (!std::isfinite(initial))
        throw TrainingDiverged("initial loss is not finite", model, 0);
    res.history.push_back({0, initial, evaluate_accuracy(model, eval_set, dataset)});

    Rng rng(derive_seed(cfg.seed, {0x7a41}));
    std::vector<std::size_t> order(split.train.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<PreferenceRecord> batch;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            batch.clear();
            for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i)
                batch.push_back(split.train[order[i]]);
            auto lg = batch_loss_and_grad(model, batch, dataset, cfg.kind, cfg.temperature);
            if (!std::isfinite(lg.loss) || !lg.grads.all_finite())
                throw TrainingDiverged("loss diverged in epoch " + std::to_string(epoch), model, epoch);
            auto candidate = model;
            desc::optim_step(candidate, lg.grads, res.optim);
            if (!finite_model(candidate))
                throw TrainingDiverged("parameters diverged in epoch " + std::to_string(epoch), model, epoch);
            model = std::move(candidate);
        }
        const double loss = mean_loss(model, split.train, dataset, cfg.kind, cfg.temperature);
        if (!std::isfinite(loss))
            throw TrainingDiverged("loss diverged in epoch " + std::to_string(epoch), model, epoch);
        res.history.push_back({epoch, loss, evaluate_accuracy(model, eval_set, dataset)});
    }
    res.model = std::move(model);
    return res;
}

namespace {

double mean_reconstruction(const desc::AutoencoderModel& model, const env::Dataset& dataset)
{
    const auto n = static_cast<std::ptrdiff_t>(dataset.size());
    std::vector<double> losses(dataset.size());
#pragma omp parallel for schedule(dynamic, 16)
    for (std::ptrdiff_t i = 0; i < n; ++i)
        losses[static_cast<std::size_t>(i)] =
            desc::autoencode_loss(model, dataset[static_cast<std::size_t>(i)].trajectory);
    return std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(dataset.size());
}

} // namespace

AutoencoderTrainResult train_autoencoder(desc::AutoencoderModel model, const env::Dataset& dataset,
                                         std::span<const PreferenceRecord> heldout, const LossConfig& cfg)
{
    cfg.validate();
    if (dataset.empty())
        throw ValidationError("auto-encoder training needs trajectories");
    AutoencoderTrainResult res;
    res.optim = desc::make_optim(model, nn::AdamParams{cfg.learning_rate});
    auto report = [&](const desc::AutoencoderModel& m) {
        return heldout.empty() ? AccuracyReport{} : evaluate_accuracy(m.encoder, heldout, dataset);
    };
    res.history.push_back({0, mean_reconstruction(model, dataset), report(model)});

    Rng rng(derive_seed(cfg.seed, {0xae}));
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
            const auto n = static_cast<std::ptrdiff_t>(stop - start);
            std::vector<desc::AutoencoderGrads> per_item(static_cast<std::size_t>(n));
            std::vector<double> losses(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(dynamic, 4)
            for (std::ptrdiff_t i = 0; i < n; ++i) {
                const auto u = static_cast<std::size_t>(i);
                per_item[u] = desc::AutoencoderGrads::zeros_like(model);
                losses[u] = desc::autoencode_loss_grad(model, dataset[order[start + u]].trajectory, per_item[u]);
            }
            auto grads = desc::AutoencoderGrads::zeros_like(model);
            double loss = 0.0;
            for (std::size_t i = 0; i < per_item.size(); ++i) {
                grads += per_item[i];
                loss += losses[i];
            }
            grads *= 1.0 / static_cast<double>(n);
            if (!std::isfinite(loss) || !grads.encoder.all_finite() || !grads.decoder.all_finite())
                throw TrainingDiverged("reconstruction loss diverged in epoch " + std::to_string(epoch),
                                       model.encoder, epoch);
            desc::optim_step(model, grads, res.optim);
        }
        res.history.push_back({epoch, mean_reconstruction(model, dataset), report(model)});
    }
    res.model = std::move(model);
    return res;
}

} // namespace divhf::train
