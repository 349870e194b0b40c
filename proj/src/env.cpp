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

#include "divhf/env.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "divhf/errors.hpp"

namespace divhf::env {

void EnvConfig::validate() const
{
    if (feet == 0 || period == 0 || window == 0)
        throw ValidationError("environment sizes must be positive");
    if (horizon < 2)
        throw ValidationError("horizon must be at least 2");
}

std::string feature_layout(const EnvConfig& cfg)
{
    std::ostringstream os;
    os << "contacts+trailing_mean;feet=" << cfg.feet << ";horizon=" << cfg.horizon
       << ";period=" << cfg.period << ";window=" << cfg.window;
    return os.str();
}

std::uint64_t feature_layout_hash(const EnvConfig& cfg)
{
    // FNV-1a, stable across platforms (std::hash is not).
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : feature_layout(cfg)) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

double logistic(double x)
{
    if (x >= 0.0)
        return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

namespace {

double frac(double x) { return x - std::floor(x); }

void check_solution(const Solution& solution, const EnvConfig& cfg)
{
    if (solution.genes.size() != cfg.gene_count())
        throw DimensionError("solution has " + std::to_string(solution.genes.size()) + " genes, expected "
                             + std::to_string(cfg.gene_count()));
    for (double g : solution.genes)
        if (!std::isfinite(g))
            throw ValidationError("solution genes must be finite");
}

} // namespace

Trajectory simulate(const Solution& solution, const EnvConfig& cfg)
{
    cfg.validate();
    check_solution(solution, cfg);

    const std::size_t k = cfg.feet;
    const std::size_t T = cfg.horizon;
    Trajectory traj;
    traj.solution_id = solution.id;
    traj.horizon = T;
    traj.width = 2 * k;
    traj.features.assign(T * traj.width, 0.0);

    const double period = static_cast<double>(cfg.period);
    for (std::size_t i = 0; i < k; ++i) {
        const double duty = logistic(solution.genes[2 * i]);
        const double phase = frac(solution.genes[2 * i + 1]);
        double window_sum = 0.0;
        for (std::size_t t = 0; t < T; ++t) {
            const double c = frac(static_cast<double>(t) / period + phase) < duty ? 1.0 : 0.0;
            traj.features[t * traj.width + i] = c;
            window_sum += c;
            if (t >= cfg.window)
                window_sum -= traj.features[(t - cfg.window) * traj.width + i];
            const std::size_t n = std::min(t + 1, cfg.window);
            traj.features[t * traj.width + k + i] = window_sum / static_cast<double>(n);
        }
    }
    return traj;
}

void validate(const Trajectory& trajectory)
{
    if (trajectory.width == 0 || trajectory.width % 2 != 0)
        throw DimensionError("trajectory width must be a positive even number");
    if (trajectory.horizon < 1 || trajectory.features.size() != trajectory.horizon * trajectory.width)
        throw DimensionError("trajectory feature matrix does not match its shape");
    const std::size_t k = trajectory.feet();
    for (std::size_t t = 0; t < trajectory.horizon; ++t) {
        for (std::size_t i = 0; i < k; ++i) {
            const double c = trajectory.at(t, i);
            if (c != 0.0 && c != 1.0)
                throw ValidationError("contact columns must be 0 or 1");
            const double s = trajectory.at(t, k + i);
            if (!(s >= 0.0 && s <= 1.0))
                throw ValidationError("smoothed contact columns must lie in [0, 1]");
        }
    }
}

OracleBehavior oracle_behavior(const Trajectory& trajectory)
{
    validate(trajectory);
    const std::size_t k = trajectory.feet();
    OracleBehavior b(k, 0.0);
    for (std::size_t t = 0; t < trajectory.horizon; ++t)
        for (std::size_t i = 0; i < k; ++i)
            b[i] += trajectory.at(t, i);
    for (double& v : b)
        v /= static_cast<double>(trajectory.horizon);
    return b;
}

double fitness(const Trajectory& trajectory)
{
    validate(trajectory);
    const std::size_t k = trajectory.feet();
    std::size_t stable = 0;
    for (std::size_t t = 0; t < trajectory.horizon; ++t) {
        std::size_t down = 0;
        for (std::size_t i = 0; i < k; ++i)
            down += trajectory.at(t, i) == 1.0 ? 1 : 0;
        if (down >= 1 && down + 1 <= k)
            ++stable;
    }
    return static_cast<double>(stable) / static_cast<double>(trajectory.horizon);
}

Solution random_solution(std::int64_t id, const EnvConfig& cfg, double gene_bound, Rng& rng)
{
    std::uniform_real_distribution<double> gene(-gene_bound, gene_bound);
    Solution s;
    s.id = id;
    s.genes.resize(cfg.gene_count());
    for (double& g : s.genes)
        g = gene(rng);
    return s;
}

void clamp_genes(Solution& solution, double gene_bound)
{
    for (double& g : solution.genes)
        g = std::clamp(g, -gene_bound, gene_bound);
}

DatasetRecord evaluate(const Solution& solution, const EnvConfig& cfg)
{
    DatasetRecord r;
    r.solution = solution;
    r.trajectory = simulate(solution, cfg);
    r.oracle = oracle_behavior(r.trajectory);
    r.fitness = fitness(r.trajectory);
    return r;
}

Dataset::Dataset(std::vector<DatasetRecord> records) : records_(std::move(records))
{
    index_.reserve(records_.size());
    for (std::size_t i = 0; i < records_.size(); ++i) {
        if (!index_.emplace(records_[i].solution.id, i).second)
            throw ValidationError("duplicate solution id " + std::to_string(records_[i].solution.id));
    }
}

const DatasetRecord& Dataset::by_id(std::int64_t id) const
{
    auto it = index_.find(id);
    if (it == index_.end())
        throw ValidationError("unknown trajectory id " + std::to_string(id));
    return records_[it->second];
}

Dataset collect(std::size_t count, const EnvConfig& cfg, double gene_bound, std::uint64_t seed)
{
    cfg.validate();
    Rng rng(seed);
    std::vector<Solution> solutions;
    solutions.reserve(count);
    for (std::size_t i = 0; i < count; ++i)
        solutions.push_back(random_solution(static_cast<std::int64_t>(i), cfg, gene_bound, rng));

    std::vector<DatasetRecord> records(count);
    const auto n = static_cast<std::ptrdiff_t>(count);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i)
        records[static_cast<std::size_t>(i)] = evaluate(solutions[static_cast<std::size_t>(i)], cfg);
    return Dataset(std::move(records));
}

void write_dataset(const Dataset& dataset, const std::string& path)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw StorageError("cannot open " + path + " for writing");
    for (const auto& r : dataset.records()) {
        nlohmann::ordered_json j;
        j["id"] = r.solution.id;
        j["genes"] = r.solution.genes;
        j["horizon"] = r.trajectory.horizon;
        j["width"] = r.trajectory.width;
        j["features"] = r.trajectory.features;
        j["oracle_behavior"] = r.oracle;
        j["fitness"] = r.fitness;
        out << j.dump() << '\n';
    }
    out.flush();
    if (!out)
        throw StorageError("failed writing " + path);
}

Dataset read_dataset(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw StorageError("cannot open " + path);
    std::vector<DatasetRecord> records;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty())
            continue;
        try {
            const auto j = nlohmann::json::parse(line);
            DatasetRecord r;
            r.solution.id = j.at("id").get<std::int64_t>();
            r.solution.genes = j.at("genes").get<std::vector<double>>();
            r.trajectory.solution_id = r.solution.id;
            r.trajectory.horizon = j.at("horizon").get<std::size_t>();
            r.trajectory.width = j.at("width").get<std::size_t>();
            r.trajectory.features = j.at("features").get<std::vector<double>>();
            r.oracle = j.at("oracle_behavior").get<std::vector<double>>();
            r.fitness = j.at("fitness").get<double>();
            validate(r.trajectory);
            records.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return Dataset(std::move(records));
}

} // namespace divhf::env
