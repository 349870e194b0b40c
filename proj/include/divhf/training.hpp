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

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "divhf/descriptor.hpp"
#include "divhf/env.hpp"
#include "divhf/errors.hpp"
#include "divhf/preference.hpp"

namespace divhf::train {

using desc::DescriptorModel;
using pref::Id;
using pref::PreferenceRecord;

enum class LossKind { vanilla, cross_entropy };

std::string to_string(LossKind k);
LossKind loss_kind_from_string(const std::string& s);

struct LossConfig {
    LossKind kind = LossKind::cross_entropy;
    double temperature = 1.0;
    std::size_t batch_size = 64;
    std::size_t epochs = 30;
    std::uint64_t seed = 0;
    double learning_rate = 3e-3;
    double heldout_fraction = 0.1;

    void validate() const;
};

/// Record relabelled so that (anchor, similar) is the most similar pair and
/// (anchor, diverse) the most diverse one.
struct Canonical {
    Id anchor = 0;
    Id similar = 0;
    Id diverse = 0;
};

Canonical canonicalize(const PreferenceRecord& record);

/// sim(d(x1), d(x3)) - sim(d(x1), d(x2)) for one record.
double vanilla_loss(const DescriptorModel& model, const PreferenceRecord& record, const env::Dataset& dataset);

/// Probability that (xi, xj) is judged more similar than (xi, xk), given the
/// two cosine similarities: a two-way softmax over temperature-scaled scores.
double preference_prob(double s_ij, double s_ik, double temperature);
double preference_prob(const DescriptorModel& model, const env::Trajectory& xi, const env::Trajectory& xj,
                       const env::Trajectory& xk, double temperature);

/// -log P[(x1,x2) > (x1,x3)] as a function of the two similarities, computed
/// without overflow.
double neg_log_preference(double s_similar, double s_diverse, double temperature);

/// Batch-mean cross-entropy. Throws ValidationError on an empty batch.
double ce_loss(const DescriptorModel& model, std::span<const PreferenceRecord> batch, const env::Dataset& dataset,
               double temperature);

/// Batch-mean loss of the configured kind.
double batch_loss(const DescriptorModel& model, std::span<const PreferenceRecord> batch,
                  const env::Dataset& dataset, LossKind kind, double temperature);

struct LossGrad {
    double loss = 0.0;
    desc::DescriptorGrads grads;
};

/// Batch-mean loss and its parameter gradient. Records are processed in
/// parallel and reduced in record order, so the result does not depend on
/// the thread count.
LossGrad batch_loss_and_grad(const DescriptorModel& model, std::span<const PreferenceRecord> batch,
                             const env::Dataset& dataset, LossKind kind, double temperature);
LossGrad batch_loss_and_grad_serial(const DescriptorModel& model, std::span<const PreferenceRecord> batch,
                                    const env::Dataset& dataset, LossKind kind, double temperature);

struct AccuracyReport {
    double most_similar_acc = 0.0;
    double most_diverse_acc = 0.0;
    double preference_acc = 0.0;
    double pairwise_acc = 0.0;
    std::size_t n_triplets = 0;
};

/// Predicted similarity of two trajectories; larger means more alike.
using PairSimilarity = std::function<double(Id, Id)>;

// Pairwise accuracy: the two labels order the triplet's pairs as
// similar > middle > diverse; each of the three pair-of-pairs comparisons
// counts as correct when the predicted similarities are strictly ordered the
// same way.
AccuracyReport evaluate_accuracy(std::span<const PreferenceRecord> records, const PairSimilarity& similarity);
AccuracyReport evaluate_accuracy(const DescriptorModel& model, std::span<const PreferenceRecord> records,
                                 const env::Dataset& dataset);

struct Split {
    std::vector<PreferenceRecord> train;
    std::vector<PreferenceRecord> heldout;
};

/// Seeded shuffle, then floor(n * heldout_fraction) records held out.
Split split_records(std::span<const PreferenceRecord> records, double heldout_fraction, std::uint64_t seed);

struct EpochMetrics {
    std::size_t epoch = 0; // 0 is the untrained model
    double loss = 0.0;
    AccuracyReport heldout;
};

struct TrainResult {
    DescriptorModel model;
    desc::DescriptorOptim optim;
    std::vector<EpochMetrics> history;
};

/// Raised when a loss or gradient stops being finite; carries the last model
/// whose loss was finite.
class TrainingDiverged : public TrainingError {
public:
    TrainingDiverged(const std::string& what, DescriptorModel last_valid, std::size_t epoch)
        : TrainingError(what), last_valid(std::move(last_valid)), epoch(epoch)
    {
    }

    DescriptorModel last_valid;
    std::size_t epoch;
};

/// Seeded mini-batch Adam on the preference loss. Accuracy is measured on
/// split.heldout, or on split.train when nothing was held out.
TrainResult train(DescriptorModel model, const Split& split, const env::Dataset& dataset, const LossConfig& cfg);

struct AutoencoderTrainResult {
    desc::AutoencoderModel model;
    desc::DescriptorOptim optim;
    std::vector<EpochMetrics> history; // loss is the reconstruction MSE
};

/// Reconstruction training over every trajectory of the dataset; preference
/// labels are only used (when given) to report accuracy.
AutoencoderTrainResult train_autoencoder(desc::AutoencoderModel model, const env::Dataset& dataset,
                                         std::span<const PreferenceRecord> heldout, const LossConfig& cfg);

} // namespace divhf::train
