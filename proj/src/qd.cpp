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

#include "divhf/qd.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include <json.hpp>

#include "divhf/errors.hpp"
#include "divhf/random.hpp"

namespace divhf::qd {

namespace {

double squared_distance(const double* a, const double* b, Eigen::Index dim)
{
    double s = 0.0;
    for (Eigen::Index d = 0; d < dim; ++d) {
        const double diff = a[d] - b[d];
        s += diff * diff;
    }
    return s;
}

std::size_t nearest(const double* point, const Matrix& centroids)
{
    const Eigen::Index dim = centroids.cols();
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
        const double d = squared_distance(point, centroids.row(c).data(), dim);
        if (d < best_d) {
            best_d = d;
            best = static_cast<std::size_t>(c);
        }
    }
    return best;
}

void check_shapes(const Matrix& points, const Matrix& centroids)
{
    if (centroids.rows() == 0)
        throw DimensionError("no centroids");
    if (points.cols() != centroids.cols())
        throw DimensionError("points and centroids have different dimensions");
}

std::size_t count_distinct(const Matrix& samples)
{
    std::set<std::vector<double>> seen;
    for (Eigen::Index r = 0; r < samples.rows(); ++r)
        seen.emplace(samples.row(r).data(), samples.row(r).data() + samples.cols());
    return seen.size();
}

} // namespace

std::vector<std::size_t> assign_cells_serial(const Matrix& points, const Matrix& centroids)
{
    check_shapes(points, centroids);
    std::vector<std::size_t> out(static_cast<std::size_t>(points.rows()));
    for (Eigen::Index r = 0; r < points.rows(); ++r)
        out[static_cast<std::size_t>(r)] = nearest(points.row(r).data(), centroids);
    return out;
}

std::vector<std::size_t> assign_cells(const Matrix& points, const Matrix& centroids)
{
    check_shapes(points, centroids);
    std::vector<std::size_t> out(static_cast<std::size_t>(points.rows()));
    const Eigen::Index n = points.rows();
#pragma omp parallel for schedule(static)
    for (Eigen::Index r = 0; r < n; ++r)
        out[static_cast<std::size_t>(r)] = nearest(points.row(r).data(), centroids);
    return out;
}

double within_cluster_sse(const Matrix& samples, const Matrix& centroids)
{
    const auto cells = assign_cells(samples, centroids);
    double sse = 0.0;
    for (Eigen::Index r = 0; r < samples.rows(); ++r)
        sse += squared_distance(samples.row(r).data(), centroids.row(static_cast<Eigen::Index>(cells[r])).data(),
                                samples.cols());
    return sse;
}

Matrix uniform_samples(std::size_t n, std::size_t dim, std::uint64_t seed)
{
    Rng rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Matrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
    for (Eigen::Index i = 0; i < m.size(); ++i)
        m.data()[i] = u(rng);
    return m;
}

Centroids build_centroids(const Matrix& samples, std::size_t cells, std::uint64_t seed,
                          const KMeansOptions& options)
{
    if (samples.rows() == 0 || samples.cols() == 0)
        throw ConstructionError("no samples to build centroids from");
    if (cells == 0)
        throw ConstructionError("at least one cell is required");
    if (!samples.allFinite())
        throw ConstructionError("samples must be finite");
    if (count_distinct(samples) < cells)
        throw ConstructionError("fewer distinct samples than requested cells");

    const Eigen::Index n = samples.rows();
    const Eigen::Index dim = samples.cols();
    const auto M = static_cast<Eigen::Index>(cells);
    Rng rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    // k-means++ seeding.
    Matrix centers(M, dim);
    std::vector<double> d2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
    Eigen::Index first = std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng);
    centers.row(0) = samples.row(first);
    for (Eigen::Index c = 1; c < M; ++c) {
        double total = 0.0;
        for (Eigen::Index r = 0; r < n; ++r) {
            auto& d = d2[static_cast<std::size_t>(r)];
            d = std::min(d, squared_distance(samples.row(r).data(), centers.row(c - 1).data(), dim));
            total += d;
        }
        const double target = unit(rng) * total;
        double acc = 0.0;
        Eigen::Index pick = -1;
        for (Eigen::Index r = 0; r < n; ++r) {
            const double d = d2[static_cast<std::size_t>(r)];
            if (d <= 0.0)
                continue;
            acc += d;
            pick = r;
            if (acc > target)
                break;
        }
        centers.row(c) = samples.row(pick);
    }

    // Lloyd iterations.
    Centroids out;
    out.seed = seed;
    for (std::size_t it = 0; it < options.max_iterations; ++it) {
        const auto assign = assign_cells(samples, centers);
        Matrix sums = Matrix::Zero(M, dim);
        std::vector<std::size_t> counts(static_cast<std::size_t>(M), 0);
        for (Eigen::Index r = 0; r < n; ++r) {
            sums.row(static_cast<Eigen::Index>(assign[r])) += samples.row(r);
            ++counts[assign[r]];
        }
        Matrix next = centers;
        std::vector<bool> taken(static_cast<std::size_t>(n), false);
        for (Eigen::Index c = 0; c < M; ++c) {
            if (counts[static_cast<std::size_t>(c)] > 0) {
                next.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
                continue;
            }
            // Empty cell: move it onto the sample worst served by its centroid.
            Eigen::Index worst = 0;
            double worst_d = -1.0;
            for (Eigen::Index r = 0; r < n; ++r) {
                if (taken[static_cast<std::size_t>(r)])
                    continue;
                const double d = squared_distance(samples.row(r).data(),
                                                  centers.row(static_cast<Eigen::Index>(assign[r])).data(), dim);
                if (d > worst_d) {
                    worst_d = d;
                    worst = r;
                }
            }
            taken[static_cast<std::size_t>(worst)] = true;
            next.row(c) = samples.row(worst);
        }
        const double shift = (next - centers).rowwise().norm().maxCoeff();
        centers = std::move(next);
        out.iterations = it + 1;
        if (shift <= options.tolerance)
            break;
    }
    out.points = std::move(centers);
    out.sse = within_cluster_sse(samples, out.points);
    return out;
}

std::size_t cell_index(std::span<const double> behavior, const Centroids& centroids)
{
    if (behavior.size() != centroids.dim())
        throw DimensionError("behaviour has " + std::to_string(behavior.size()) + " components, centroids have "
                             + std::to_string(centroids.dim()));
    if (centroids.size() == 0)
        throw DimensionError("no centroids");
    return nearest(behavior.data(), centroids.points);
}

Archive::Archive(std::shared_ptr<const Centroids> centroids) : centroids_(std::move(centroids))
{
    if (!centroids_ || centroids_->size() == 0)
        throw ConstructionError("archive needs at least one centroid");
    cells_.resize(centroids_->size());
}

InsertOutcome Archive::try_insert(const env::Solution& solution, const Behavior& behavior, double fitness)
{
    if (!(fitness >= 0.0) || !std::isfinite(fitness))
        throw ContractError("archive fitness must be finite and non-negative");
    const std::size_t idx = cell_index(behavior, *centroids_);
    auto& slot = cells_[idx];
    if (!slot) {
        slot = Elite{solution, behavior, fitness};
        ++coverage_;
        return InsertOutcome::inserted_new;
    }
    if (fitness > slot->fitness) {
        *slot = Elite{solution, behavior, fitness};
        return InsertOutcome::replaced;
    }
    return InsertOutcome::rejected;
}

std::vector<std::size_t> Archive::occupied() const
{
    std::vector<std::size_t> out;
    out.reserve(coverage_);
    for (std::size_t i = 0; i < cells_.size(); ++i)
        if (cells_[i])
            out.push_back(i);
    return out;
}

QDMetrics qd_metrics(const Archive& archive)
{
    QDMetrics m;
    for (std::size_t i = 0; i < archive.size(); ++i) {
        const auto& e = archive.cell(i);
        if (!e)
            continue;
        m.qd_score += e->fitness;
        ++m.coverage;
        m.max_fitness = std::max(m.max_fitness, e->fitness);
    }
    return m;
}

Behavior LearnedDescriptor::describe(const env::DatasetRecord& evaluated) const
{
    Eigen::VectorXd y = desc::encode(model_, evaluated.trajectory);
    if (unit_normalize_)
        y /= std::max(y.norm(), desc::cosine_epsilon);
    return {y.data(), y.data() + y.size()};
}

Matrix describe_dataset(const BehaviorDescriptor& descriptor, const env::Dataset& dataset)
{
    Matrix out(static_cast<Eigen::Index>(dataset.size()), static_cast<Eigen::Index>(descriptor.dim()));
    const auto n = static_cast<std::ptrdiff_t>(dataset.size());
    std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic, 16)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        try {
            const auto b = descriptor.describe(dataset[static_cast<std::size_t>(i)]);
            if (b.size() != descriptor.dim())
                throw DimensionError("descriptor produced a behaviour of the wrong width");
            out.row(i) = Eigen::Map<const Eigen::RowVectorXd>(b.data(), static_cast<Eigen::Index>(b.size()));
        } catch (...) {
#pragma omp critical(divhf_describe_failure)
            if (!failure)
                failure = std::current_exception();
        }
    }
    if (failure)
        std::rethrow_exception(failure);
    return out;
}

void MeConfig::validate() const
{
    if (batch == 0)
        throw ValidationError("MAP-Elites batch size must be positive");
    if (!(sigma >= 0.0) || !std::isfinite(sigma))
        throw ValidationError("mutation sigma must be non-negative");
    if (!(gene_bound > 0.0))
        throw ValidationError("gene bound must be positive");
}

std::vector<Offspring> evaluate_offspring_serial(std::span<const env::Solution> solutions,
                                                 const env::EnvConfig& env, const BehaviorDescriptor& descriptor)
{
    std::vector<Offspring> out;
    out.reserve(solutions.size());
    for (const auto& s : solutions) {
        Offspring o;
        o.evaluated = env::evaluate(s, env);
        o.behavior = descriptor.describe(o.evaluated);
        out.push_back(std::move(o));
    }
    return out;
}

std::vector<Offspring> evaluate_offspring(std::span<const env::Solution> solutions, const env::EnvConfig& env,
                                          const BehaviorDescriptor& descriptor)
{
    std::vector<Offspring> out(solutions.size());
    const auto n = static_cast<std::ptrdiff_t>(solutions.size());
    std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic, 4)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const auto u = static_cast<std::size_t>(i);
        try {
            out[u].evaluated = env::evaluate(solutions[u], env);
            out[u].behavior = descriptor.describe(out[u].evaluated);
        } catch (...) {
#pragma omp critical(divhf_offspring_failure)
            if (!failure)
                failure = std::current_exception();
        }
    }
    if (failure)
        std::rethrow_exception(failure);
    return out;
}

MeResult run_me(const BehaviorDescriptor& descriptor, std::shared_ptr<const Centroids> learned,
                std::shared_ptr<const Centroids> oracle, const env::EnvConfig& env, const MeConfig& cfg)
{
    cfg.validate();
    env.validate();
    if (!learned || !oracle)
        throw ValidationError("both centroid sets are required");
    if (descriptor.dim() != learned->dim())
        throw DimensionError("descriptor dimension " + std::to_string(descriptor.dim())
                             + " does not match learned centroids " + std::to_string(learned->dim()));
    if (oracle->dim() != env.feet)
        throw DimensionError("oracle centroids must have one component per foot");

    MeResult res{Archive(std::move(learned)), Archive(std::move(oracle)), {}};
    std::vector<env::Solution> batch(cfg.batch);
    for (std::size_t gen = 0; gen < cfg.generations; ++gen) {
        const auto parents = res.learned.occupied();
        for (std::size_t i = 0; i < cfg.batch; ++i) {
            Rng rng(derive_seed(cfg.seed, {gen, i}));
            const auto id = static_cast<std::int64_t>(gen * cfg.batch + i);
            if (parents.empty()) {
                batch[i] = env::random_solution(id, env, cfg.gene_bound, rng);
                continue;
            }
            const auto pick = std::uniform_int_distribution<std::size_t>(0, parents.size() - 1)(rng);
            env::Solution child = res.learned.cell(parents[pick])->solution;
            child.id = id;
            std::normal_distribution<double> noise(0.0, cfg.sigma);
            for (double& g : child.genes)
                g += noise(rng);
            env::clamp_genes(child, cfg.gene_bound);
            batch[i] = std::move(child);
        }
        const auto evaluated = evaluate_offspring(batch, env, descriptor);
        for (const auto& o : evaluated) {
            res.learned.try_insert(o.evaluated.solution, o.behavior, o.evaluated.fitness);
            res.oracle.try_insert(o.evaluated.solution, o.evaluated.oracle, o.evaluated.fitness);
        }
        res.trace.push_back({gen + 1, qd_metrics(res.learned), qd_metrics(res.oracle)});
    }
    return res;
}

void write_archive(const Archive& archive, const std::string& path)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw StorageError("cannot open " + path + " for writing");
    for (std::size_t i = 0; i < archive.size(); ++i) {
        const auto& e = archive.cell(i);
        if (!e)
            continue;
        const auto& c = archive.centroids().points;
        nlohmann::ordered_json j;
        j["cell"] = i;
        j["centroid"] = std::vector<double>(c.row(static_cast<Eigen::Index>(i)).data(),
                                            c.row(static_cast<Eigen::Index>(i)).data() + c.cols());
        j["id"] = e->solution.id;
        j["genes"] = e->solution.genes;
        j["behavior"] = e->behavior;
        j["fitness"] = e->fitness;
        out << j.dump() << '\n';
    }
    if (!out)
        throw StorageError("failed writing " + path);
}

} // namespace divhf::qd
