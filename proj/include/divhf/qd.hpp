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
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "divhf/descriptor.hpp"
#include "divhf/env.hpp"
#include "divhf/nn.hpp"

// CVT MAP-Elites: a fixed set of centroids partitions behaviour space into
// Voronoi cells, and the archive keeps the fittest solution seen per cell.

namespace divhf::qd {

using nn::Matrix;
using Behavior = std::vector<double>;

struct KMeansOptions {
    std::size_t max_iterations = 100;
    double tolerance = 1e-9; // stop once no centroid moves farther than this
};

struct Centroids {
    Matrix points; // M x dim
    std::uint64_t seed = 0;
    std::size_t iterations = 0;
    double sse = 0.0; // within-cluster sum of squares on the build samples

    std::size_t size() const { return static_cast<std::size_t>(points.rows()); }
    std::size_t dim() const { return static_cast<std::size_t>(points.cols()); }
};

/// k-means with k-means++ seeding. Throws ConstructionError when the samples
/// hold fewer than `cells` distinct points.
Centroids build_centroids(const Matrix& samples, std::size_t cells, std::uint64_t seed,
                          const KMeansOptions& options = {});

/// n points drawn uniformly from [0, 1]^dim.
Matrix uniform_samples(std::size_t n, std::size_t dim, std::uint64_t seed);

/// Nearest centroid by Euclidean distance, lowest index on ties.
std::size_t cell_index(std::span<const double> behavior, const Centroids& centroids);

/// Nearest-centroid assignment of every row of `points`; OpenMP over rows.
std::vector<std::size_t> assign_cells(const Matrix& points, const Matrix& centroids);
/// Single-threaded reference for assign_cells.
std::vector<std::size_t> assign_cells_serial(const Matrix& points, const Matrix& centroids);

double within_cluster_sse(const Matrix& samples, const Matrix& centroids);

struct Elite {
    env::Solution solution;
    Behavior behavior;
    double fitness = 0.0;
};

enum class InsertOutcome { inserted_new, replaced, rejected };

class Archive {
public:
    explicit Archive(std::shared_ptr<const Centroids> centroids);

    /// Strict improvement: an occupied cell only changes hands for a strictly
    /// fitter solution. Throws ContractError on negative or non-finite
    /// fitness and DimensionError on a behaviour of the wrong width.
    InsertOutcome try_insert(const env::Solution& solution, const Behavior& behavior, double fitness);

    const std::optional<Elite>& cell(std::size_t index) const { return cells_.at(index); }
    std::size_t size() const { return cells_.size(); }
    std::size_t coverage() const { return coverage_; }
    std::vector<std::size_t> occupied() const;
    const Centroids& centroids() const { return *centroids_; }

private:
    std::shared_ptr<const Centroids> centroids_;
    std::vector<std::optional<Elite>> cells_;
    std::size_t coverage_ = 0;
};

struct QDMetrics {
    double qd_score = 0.0;
    std::size_t coverage = 0;
    double max_fitness = 0.0;

    bool operator==(const QDMetrics&) const = default;
};

QDMetrics qd_metrics(const Archive& archive);

/// Behaviour descriptor as seen by MAP-Elites.
class BehaviorDescriptor {
public:
    virtual ~BehaviorDescriptor() = default;
    virtual std::size_t dim() const = 0;
    virtual Behavior describe(const env::DatasetRecord& evaluated) const = 0;
};

class OracleDescriptor final : public BehaviorDescriptor {
public:
    explicit OracleDescriptor(std::size_t feet) : feet_(feet) {}
    std::size_t dim() const override { return feet_; }
    Behavior describe(const env::DatasetRecord& evaluated) const override { return evaluated.oracle; }

private:
    std::size_t feet_;
};

class LearnedDescriptor final : public BehaviorDescriptor {
public:
    LearnedDescriptor(desc::DescriptorModel model, bool unit_normalize)
        : model_(std::move(model)), unit_normalize_(unit_normalize)
    {
    }
    std::size_t dim() const override { return model_.output_dim(); }
    Behavior describe(const env::DatasetRecord& evaluated) const override;

private:
    desc::DescriptorModel model_;
    bool unit_normalize_;
};

/// Descriptor outputs for every dataset record, one per row.
Matrix describe_dataset(const BehaviorDescriptor& descriptor, const env::Dataset& dataset);

struct MeConfig {
    std::size_t generations = 50;
    std::size_t batch = 64;
    double sigma = 0.2;
    double gene_bound = 5.0;
    std::uint64_t seed = 0;

    void validate() const;
};

struct Offspring {
    env::DatasetRecord evaluated;
    Behavior behavior;
};

/// Simulates and describes a batch of solutions; OpenMP over solutions.
std::vector<Offspring> evaluate_offspring(std::span<const env::Solution> solutions, const env::EnvConfig& env,
                                          const BehaviorDescriptor& descriptor);
/// Single-threaded reference for evaluate_offspring.
std::vector<Offspring> evaluate_offspring_serial(std::span<const env::Solution> solutions,
                                                 const env::EnvConfig& env, const BehaviorDescriptor& descriptor);

struct GenerationMetrics {
    std::size_t generation = 0;
    QDMetrics learned;
    QDMetrics oracle;
};

struct MeResult {
    Archive learned;
    Archive oracle; // accumulates every evaluated offspring
    std::vector<GenerationMetrics> trace;
};

/// Runs MAP-Elites with `descriptor` over `learned` centroids and mirrors
/// every offspring into an oracle-behaviour archive over `oracle` centroids.
/// Offspring are bred from per-offspring derived seeds and inserted in a
/// fixed order, so the result is independent of the thread count.
MeResult run_me(const BehaviorDescriptor& descriptor, std::shared_ptr<const Centroids> learned,
                std::shared_ptr<const Centroids> oracle, const env::EnvConfig& env, const MeConfig& cfg);

// One JSON line per occupied cell: cell, centroid, id, genes, behavior, fitness.
void write_archive(const Archive& archive, const std::string& path);

} // namespace divhf::qd
