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

#include "divhf/env.hpp"
#include "divhf/errors.hpp"
#include "support.hpp"

using namespace divhf;
using namespace divhf::env;

namespace {

Solution uniform_genes(std::size_t feet, double duty_gene, double phase_gene)
{
    Solution s;
    for (std::size_t i = 0; i < feet; ++i) {
        s.genes.push_back(duty_gene);
        s.genes.push_back(phase_gene);
    }
    return s;
}

// Straight counting of the contact rule for one foot.
int brute_contacts(double duty, double phase, std::size_t period, std::size_t horizon)
{
    int n = 0;
    for (std::size_t t = 0; t < horizon; ++t) {
        double x = static_cast<double>(t) / static_cast<double>(period) + phase;
        x -= std::floor(x);
        n += x < duty ? 1 : 0;
    }
    return n;
}

} // namespace

TEST_CASE("saturated duty cycle keeps every foot on the ground")
{
    EnvConfig cfg;
    const auto t = simulate(uniform_genes(cfg.feet, 100.0, 0.3), cfg);
    for (std::size_t s = 0; s < t.horizon; ++s)
        for (std::size_t i = 0; i < cfg.feet; ++i) {
            CHECK(t.at(s, i) == 1.0);
            CHECK(t.at(s, cfg.feet + i) == 1.0);
        }
    const auto b = oracle_behavior(t);
    for (double v : b)
        CHECK(v == 1.0);
    CHECK(fitness(t) == 0.0);
}

TEST_CASE("zero genes give half duty when the period divides the horizon")
{
    EnvConfig cfg; // T = 200, P = 20
    const auto t = simulate(uniform_genes(cfg.feet, 0.0, 0.0), cfg);
    const int expected = brute_contacts(0.5, 0.0, cfg.period, cfg.horizon);
    CHECK(expected == 100);
    for (std::size_t i = 0; i < cfg.feet; ++i) {
        int n = 0;
        for (std::size_t s = 0; s < t.horizon; ++s)
            n += static_cast<int>(t.at(s, i));
        CHECK(n == expected);
    }
    for (double v : oracle_behavior(t))
        CHECK(v == doctest::Approx(0.5).epsilon(1e-15));

    // All feet share the phase, so feet in contact is 0 or k at every step.
    int mixed = 0;
    for (std::size_t s = 0; s < t.horizon; ++s) {
        int c = 0;
        for (std::size_t i = 0; i < cfg.feet; ++i)
            c += static_cast<int>(t.at(s, i));
        mixed += (c >= 1 && c <= static_cast<int>(cfg.feet) - 1) ? 1 : 0;
    }
    CHECK(fitness(t) == doctest::Approx(static_cast<double>(mixed) / cfg.horizon));
}

TEST_CASE("random solutions match brute-force contact counts and smoothing")
{
    EnvConfig cfg;
    cfg.horizon = 73;
    cfg.period = 11;
    cfg.window = 4;
    Rng rng(5);
    for (int rep = 0; rep < 20; ++rep) {
        const auto sol = random_solution(rep, cfg, 5.0, rng);
        const auto t = simulate(sol, cfg);
        CHECK_NOTHROW(validate(t));
        std::vector<std::string> strips(cfg.feet, std::string(cfg.horizon, '0'));
        for (std::size_t i = 0; i < cfg.feet; ++i) {
            const double duty = 1.0 / (1.0 + std::exp(-sol.genes[2 * i]));
            const double phase = sol.genes[2 * i + 1] - std::floor(sol.genes[2 * i + 1]);
            for (std::size_t s = 0; s < cfg.horizon; ++s) {
                double x = static_cast<double>(s) / cfg.period + phase;
                x -= std::floor(x);
                strips[i][s] = x < duty ? '1' : '0';
            }
        }
        const auto ref = testing::trajectory_from_contacts(strips, cfg.window);
        REQUIRE(ref.features.size() == t.features.size());
        for (std::size_t j = 0; j < t.features.size(); ++j)
            CHECK(t.features[j] == doctest::Approx(ref.features[j]).epsilon(1e-12));
    }
}

TEST_CASE("oracle behaviour and fitness on hand-built contact patterns")
{
    SUBCASE("all zeros")
    {
        const auto t = testing::trajectory_from_contacts({"0000", "0000"}, 2);
        CHECK(oracle_behavior(t) == OracleBehavior{0.0, 0.0});
        CHECK(fitness(t) == 0.0);
    }
    SUBCASE("exactly one foot down at every step")
    {
        const auto t = testing::trajectory_from_contacts({"1010", "0101", "0000"}, 3);
        CHECK(fitness(t) == 1.0);
        const auto b = oracle_behavior(t);
        CHECK(b[0] == 0.5);
        CHECK(b[1] == 0.5);
        CHECK(b[2] == 0.0);
    }
    SUBCASE("mixed")
    {
        const auto t = testing::trajectory_from_contacts({"1100", "1000"}, 2);
        // feet down per step: 2, 1, 0, 0 -> only step 1 counts
        CHECK(fitness(t) == 0.25);
    }
}

TEST_CASE("simulation is deterministic and validates its input")
{
    EnvConfig cfg;
    Rng rng(11);
    const auto sol = random_solution(0, cfg, 5.0, rng);
    const auto a = simulate(sol, cfg);
    const auto b = simulate(sol, cfg);
    CHECK(a.features == b.features);

    Solution bad = sol;
    bad.genes.pop_back();
    CHECK_THROWS_AS(simulate(bad, cfg), DimensionError);
    bad = sol;
    bad.genes[0] = std::nan("");
    CHECK_THROWS_AS(simulate(bad, cfg), ValidationError);
    EnvConfig zero = cfg;
    zero.period = 0;
    CHECK_THROWS_AS(simulate(sol, zero), ValidationError);
}

TEST_CASE("behaviour and fitness stay in the unit interval")
{
    EnvConfig cfg;
    cfg.horizon = 50;
    Rng rng(3);
    for (int rep = 0; rep < 200; ++rep) {
        const auto t = simulate(random_solution(rep, cfg, 8.0, rng), cfg);
        for (double v : oracle_behavior(t)) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
        const double f = fitness(t);
        CHECK(f >= 0.0);
        CHECK(f <= 1.0);
    }
}

TEST_CASE("collect is reproducible and round-trips through disk")
{
    EnvConfig cfg;
    cfg.horizon = 30;
    const auto a = collect(10, cfg, 5.0, 42);
    const auto b = collect(10, cfg, 5.0, 42);
    REQUIRE(a.size() == 10);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].solution.id == static_cast<std::int64_t>(i));
        CHECK(a[i].solution.genes == b[i].solution.genes);
        CHECK(a[i].trajectory.features == b[i].trajectory.features);
        for (double g : a[i].solution.genes)
            CHECK(std::abs(g) <= 5.0);
    }

    testing::TempDir dir("env");
    write_dataset(a, (dir / "a.jsonl").string());
    write_dataset(b, (dir / "b.jsonl").string());
    CHECK(testing::slurp(dir / "a.jsonl") == testing::slurp(dir / "b.jsonl"));
    const auto back = read_dataset((dir / "a.jsonl").string());
    REQUIRE(back.size() == a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(back[i].solution.genes == a[i].solution.genes);
        CHECK(back[i].trajectory.features == a[i].trajectory.features);
        CHECK(back[i].oracle == a[i].oracle);
        CHECK(back[i].fitness == a[i].fitness);
    }
    CHECK(back.by_id(3).solution.id == 3);
    CHECK_THROWS_AS(back.by_id(99), ValidationError);
}

TEST_CASE("feature layout hash tracks every environment parameter")
{
    EnvConfig a;
    EnvConfig b = a;
    CHECK(feature_layout_hash(a) == feature_layout_hash(b));
    b.window = 6;
    CHECK(feature_layout_hash(a) != feature_layout_hash(b));
    b = a;
    b.feet = 3;
    CHECK(feature_layout_hash(a) != feature_layout_hash(b));
}
