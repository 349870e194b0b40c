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
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "divhf/env.hpp"
#include "divhf/nn.hpp"

namespace divhf::desc {

using nn::Matrix;
using nn::Vector;

/// Temporal pooling over per-timestep embeddings.
///  mean_max:      [mean_t e_t, max_t e_t]
///  bidirectional: [mean, max, mean of forward prefix means, mean of backward
///                  suffix means]; the last two weight early and late
///                  timesteps respectively.
enum class Pooling { mean_max, bidirectional };

std::string to_string(Pooling p);
Pooling pooling_from_string(const std::string& s);
std::size_t pooling_factor(Pooling p);

struct Pooled {
    Vector values;
    std::vector<Eigen::Index> argmax; // per channel, first maximising row
};

Pooled pool(const Matrix& rows, Pooling pooling);
/// Gradient of the pooled vector with respect to every pooled row.
Matrix pool_backward(const Vector& grad_pooled, const Pooled& pooled, Eigen::Index rows, Pooling pooling);

/// A sequence reduced to its distinct rows (first-occurrence order) plus,
/// per distinct row, the summed linear pooling weights of every timestep
/// holding it: one column for mean pooling, and for bidirectional pooling two
/// more for the directional means. Pooling a compressed sequence equals
/// pooling the full one; periodic gaits have few distinct rows.
struct CompressedSequence {
    Matrix rows;
    Matrix weights;
    Eigen::Index length = 0;
};

CompressedSequence compress(const env::Trajectory& trajectory, Pooling pooling);

Pooled pool_compressed(const Matrix& rows, const Matrix& weights, Pooling pooling);
Matrix pool_compressed_backward(const Vector& grad_pooled, const Pooled& pooled, const Matrix& weights,
                                Pooling pooling);

/// Pooled summary of the raw trajectory features; the reconstruction target
/// of the auto-encoder baseline.
Vector pooled_summary(const env::Trajectory& trajectory, Pooling pooling);

struct DescriptorModel {
    nn::Mlp embedder; // per-timestep, feature_width -> hidden
    Pooling pooling = Pooling::mean_max;
    nn::Mlp head; // pooled -> hidden -> output_dim

    std::size_t feature_width() const { return embedder.in_dim(); }
    std::size_t output_dim() const { return head.out_dim(); }
    std::size_t pooled_dim() const { return embedder.out_dim() * pooling_factor(pooling); }
};

DescriptorModel make_descriptor(std::size_t feature_width, std::size_t hidden, std::size_t output_dim,
                                Pooling pooling, std::uint64_t seed);

Vector encode(const DescriptorModel& model, const env::Trajectory& trajectory);

struct EncodeCache {
    nn::MlpCache embed;
    Pooled pooled;
    Matrix weights; // pooling weights of the distinct rows
    nn::MlpCache head;
};

struct Encoded {
    Vector output;
    EncodeCache cache;
};

Encoded encode_with_cache(const DescriptorModel& model, const env::Trajectory& trajectory);

struct DescriptorGrads {
    nn::MlpGrads embedder;
    nn::MlpGrads head;

    static DescriptorGrads zeros_like(const DescriptorModel& model);
    DescriptorGrads& operator+=(const DescriptorGrads& other);
    DescriptorGrads& operator*=(double s);
    bool all_finite() const;
};

void encode_backward(const DescriptorModel& model, const EncodeCache& cache, const Vector& grad_output,
                     DescriptorGrads& grads);

/// Encodes every trajectory into one row of the result. OpenMP over
/// trajectories.
Matrix encode_batch(const DescriptorModel& model, std::span<const env::Trajectory> trajectories);
/// Single-threaded reference for encode_batch.
Matrix encode_batch_serial(const DescriptorModel& model, std::span<const env::Trajectory> trajectories);

inline constexpr double cosine_epsilon = 1e-12;

double cosine_sim(std::span<const double> a, std::span<const double> b);
double cosine_sim(const Vector& a, const Vector& b);

struct CosineGrad {
    double value = 0.0;
    Vector grad_a;
    Vector grad_b;
};

CosineGrad cosine_sim_grad(const Vector& a, const Vector& b);

struct AutoencoderModel {
    DescriptorModel encoder;
    nn::Mlp decoder; // output_dim -> hidden -> pooled summary width
};

AutoencoderModel make_autoencoder(std::size_t feature_width, std::size_t hidden, std::size_t output_dim,
                                  Pooling pooling, std::uint64_t seed);

/// Mean squared error between the decoded code and the pooled raw summary.
double autoencode_loss(const AutoencoderModel& model, const env::Trajectory& trajectory);

struct AutoencoderGrads {
    DescriptorGrads encoder;
    nn::MlpGrads decoder;

    static AutoencoderGrads zeros_like(const AutoencoderModel& model);
    AutoencoderGrads& operator+=(const AutoencoderGrads& other);
    AutoencoderGrads& operator*=(double s);
};

/// Returns the loss and accumulates its gradient.
double autoencode_loss_grad(const AutoencoderModel& model, const env::Trajectory& trajectory,
                            AutoencoderGrads& grads);

struct DescriptorOptim {
    nn::OptimState embedder;
    nn::OptimState head;
    std::optional<nn::OptimState> decoder;
};

DescriptorOptim make_optim(const DescriptorModel& model, const nn::AdamParams& params);
DescriptorOptim make_optim(const AutoencoderModel& model, const nn::AdamParams& params);
void optim_step(DescriptorModel& model, const DescriptorGrads& grads, DescriptorOptim& optim);
void optim_step(AutoencoderModel& model, const AutoencoderGrads& grads, DescriptorOptim& optim);

/// Versioned on-disk container for a trained descriptor.
struct Checkpoint {
    static constexpr int format_version = 1;

    std::string method;
    std::uint64_t seed = 0;
    std::string feature_layout;
    std::uint64_t feature_layout_hash = 0;
    // Behaviours fed to MAP-Elites are projected onto the unit sphere, the
    // geometry cosine-trained descriptors are defined on.
    bool unit_normalize = false;
    DescriptorModel model;
    std::optional<nn::Mlp> decoder;
    std::optional<DescriptorOptim> optim;
};

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

} // namespace divhf::desc
