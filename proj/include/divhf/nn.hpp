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
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "divhf/random.hpp"

// Minimal dense network: affine layers with elementwise activations, exact
// reverse-mode gradients and an Adam optimizer. Inputs are batched as rows.

namespace divhf::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

enum class Activation { identity, tanh, relu };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

struct DenseLayer {
    Matrix weights; // out x in
    Vector bias;    // out
    Activation activation = Activation::identity;

    std::size_t in() const { return static_cast<std::size_t>(weights.cols()); }
    std::size_t out() const { return static_cast<std::size_t>(weights.rows()); }
};

/// Uniform init in +-sqrt(6 / (in + out)), zero bias.
DenseLayer make_dense(std::size_t in, std::size_t out, Activation activation, Rng& rng);

struct Mlp {
    std::vector<DenseLayer> layers;
    // Bumped on every parameter update; caches remember the revision they
    // were produced under.
    std::uint64_t revision = 0;

    std::size_t in_dim() const { return layers.empty() ? 0 : layers.front().in(); }
    std::size_t out_dim() const { return layers.empty() ? 0 : layers.back().out(); }
    std::size_t parameter_count() const;
};

struct MlpCache {
    std::uint64_t revision = 0;
    std::vector<Matrix> inputs;          // input to each layer
    std::vector<Matrix> pre_activations; // affine output of each layer
};

struct ForwardResult {
    Matrix output;
    MlpCache cache;
};

ForwardResult forward(const Mlp& mlp, const Matrix& input);
Matrix predict(const Mlp& mlp, const Matrix& input); // forward without a cache
Vector predict(const Mlp& mlp, const Vector& input);

struct LayerGrad {
    Matrix weights;
    Vector bias;
};

struct MlpGrads {
    std::vector<LayerGrad> layers;

    static MlpGrads zeros_like(const Mlp& mlp);
    MlpGrads& operator+=(const MlpGrads& other);
    MlpGrads& operator*=(double s);
    bool all_finite() const;
    double max_abs() const;
};

/// Accumulates parameter gradients into `grads` and returns the gradient with
/// respect to the input batch. Throws ContractError if the cache does not
/// belong to this network state.
Matrix backward(const Mlp& mlp, const MlpCache& cache, const Matrix& grad_output, MlpGrads& grads);

struct AdamParams {
    double step_size = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct OptimState {
    AdamParams params;
    std::uint64_t step = 0;
    std::vector<LayerGrad> first_moment;
    std::vector<LayerGrad> second_moment;
};

OptimState make_optim_state(const Mlp& mlp, const AdamParams& params = {});

/// Elementwise bias-corrected Adam update on flat buffers; `step` is the
/// 1-based step number after increment.
void adam_update(std::span<double> params, std::span<const double> grads, std::span<double> m,
                 std::span<double> v, std::uint64_t step, const AdamParams& hp);

/// Throws TrainingError on non-finite gradients (parameters untouched).
void optim_step(Mlp& mlp, const MlpGrads& grads, OptimState& state);

void to_json(nlohmann::json& j, const Mlp& mlp);
void from_json(const nlohmann::json& j, Mlp& mlp);
void to_json(nlohmann::json& j, const OptimState& state);
void from_json(const nlohmann::json& j, OptimState& state);

} // namespace divhf::nn
