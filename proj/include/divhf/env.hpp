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
#include <unordered_map>
#include <vector>

#include "divhf/random.hpp"

// Kinematic contact-pattern environment. A solution assigns every foot a duty
// cycle and a phase; simulating it yields a T x F feature matrix whose first
// k columns are binary contact indicators and whose last k columns are
// trailing moving averages of those indicators (F = 2k).

namespace divhf::env {

struct EnvConfig {
    std::size_t feet = 4;
    std::size_t horizon = 200;
    std::size_t period = 20;
    std::size_t window = 5;

    std::size_t gene_count() const { return 2 * feet; }
    std::size_t feature_width() const { return 2 * feet; }

    // Throws ValidationError on any non-positive size or horizon < 2.
    void validate() const;
};

/// Fixed description of the feature layout; hashed into descriptor
/// checkpoints so a model is never applied to trajectories it was not
/// trained on.
std::string feature_layout(const EnvConfig& cfg);
std::uint64_t feature_layout_hash(const EnvConfig& cfg);

struct Solution {
    std::int64_t id = 0;
    std::vector<double> genes; // per foot: duty-cycle gene, phase gene
};

struct Trajectory {
    std::int64_t solution_id = 0;
    std::size_t horizon = 0;
    std::size_t width = 0;
    std::vector<double> features; // horizon x width, row-major

    std::size_t feet() const { return width / 2; }
    double at(std::size_t t, std::size_t f) const { return features[t * width + f]; }
    std::span<const double> row(std::size_t t) const
    {
        return {features.data() + t * width, width};
    }
};

using OracleBehavior = std::vector<double>;

double logistic(double x);

Trajectory simulate(const Solution& solution, const EnvConfig& cfg);

/// Per-foot fraction of timesteps spent in contact.
OracleBehavior oracle_behavior(const Trajectory& trajectory);

/// Fraction of timesteps where at least one foot, but not every foot, is in
/// contact. Always in [0, 1].
double fitness(const Trajectory& trajectory);

void validate(const Trajectory& trajectory);

Solution random_solution(std::int64_t id, const EnvConfig& cfg, double gene_bound, Rng& rng);
void clamp_genes(Solution& solution, double gene_bound);

struct DatasetRecord {
    Solution solution;
    Trajectory trajectory;
    OracleBehavior oracle;
    double fitness = 0.0;
};

DatasetRecord evaluate(const Solution& solution, const EnvConfig& cfg);

/// Offline trajectory dataset with id lookup.
class Dataset {
public:
    Dataset() = default;
    explicit Dataset(std::vector<DatasetRecord> records);

    std::size_t size() const { return records_.size(); }
    bool empty() const { return records_.empty(); }
    const std::vector<DatasetRecord>& records() const { return records_; }
    const DatasetRecord& operator[](std::size_t i) const { return records_[i]; }

    bool contains(std::int64_t id) const { return index_.contains(id); }
    // Throws ValidationError for unknown ids.
    const DatasetRecord& by_id(std::int64_t id) const;
    const Trajectory& trajectory(std::int64_t id) const { return by_id(id).trajectory; }

private:
    std::vector<DatasetRecord> records_;
    std::unordered_map<std::int64_t, std::size_t> index_;
};

/// Simulates `count` uniformly random solutions with ids 0..count-1.
Dataset collect(std::size_t count, const EnvConfig& cfg, double gene_bound, std::uint64_t seed);

// Line-delimited JSON; one record per line with keys
// id, genes, horizon, width, features, oracle_behavior, fitness.
void write_dataset(const Dataset& dataset, const std::string& path);
Dataset read_dataset(const std::string& path);

} // namespace divhf::env
