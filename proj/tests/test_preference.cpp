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

#include <algorithm>
#include <cmath>
#include <mutex>
#include <set>
#include <thread>

#include "divhf/errors.hpp"
#include "divhf/preference.hpp"
#include "support.hpp"

using namespace divhf;
using namespace divhf::pref;

namespace {

PreferenceRecord record(Id a, Id b, Id c, Pair sim, Pair div)
{
    return {Triplet{{a, b, c}}, sim, div, Source::oracle, 0};
}

double dist(const env::OracleBehavior& x, const env::OracleBehavior& y)
{
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i)
        s += (x[i] - y[i]) * (x[i] - y[i]);
    return std::sqrt(s);
}

} // namespace

TEST_CASE("triplet sampling")
{
    SUBCASE("three items admit one index set")
    {
        const auto ts = sample_triplets(3, 1, 7);
        REQUIRE(ts.size() == 1);
        auto ids = ts[0].ids;
        std::sort(ids.begin(), ids.end());
        CHECK(ids == std::array<Id, 3>{0, 1, 2});
    }
    SUBCASE("deterministic per seed")
    {
        CHECK(sample_triplets(50, 20, 3) == sample_triplets(50, 20, 3));
        CHECK(sample_triplets(50, 20, 3) != sample_triplets(50, 20, 4));
    }
    SUBCASE("too few items")
    {
        CHECK_THROWS_AS(sample_triplets(2, 1, 0), InsufficientDataError);
    }
    SUBCASE("inclusion frequency is uniform within 5 sigma")
    {
        constexpr std::size_t N = 100, n = 10000;
        std::vector<int> hits(N, 0);
        for (const auto& t : sample_triplets(N, n, 99)) {
            CHECK(t.ids[0] != t.ids[1]);
            CHECK(t.ids[0] != t.ids[2]);
            CHECK(t.ids[1] != t.ids[2]);
            for (auto id : t.ids)
                ++hits[static_cast<std::size_t>(id)];
        }
        const double p = 3.0 / N;
        const double mean = n * p;
        const double sd = std::sqrt(n * p * (1 - p));
        for (int h : hits)
            CHECK(std::abs(h - mean) < 5 * sd);
    }
}

TEST_CASE("oracle labels")
{
    const Triplet t{{1, 2, 3}};
    SUBCASE("tie between two diverse candidates goes to the smaller pair")
    {
        const auto l = oracle_label(t, {0, 0}, {0, 0}, {1, 1});
        CHECK(l.most_similar == Pair{1, 2});
        CHECK(l.most_diverse == Pair{1, 3});
        CHECK(l.tie);
    }
    SUBCASE("distances 0.1, 1.0, 0.9")
    {
        const auto l = oracle_label(t, {0, 0}, {0.1, 0}, {1, 0});
        CHECK(l.most_similar == Pair{1, 2});
        CHECK(l.most_diverse == Pair{1, 3});
        CHECK_FALSE(l.tie);
    }
    SUBCASE("brute force over random behaviours and all presentation orders")
    {
        Rng rng(5);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (int rep = 0; rep < 500; ++rep) {
            std::array<env::OracleBehavior, 3> b;
            for (auto& v : b)
                v = {u(rng), u(rng), u(rng)};
            const std::array<Id, 3> ids{10, 20, 30};
            // Exhaustive: the closest pair is most similar, the farthest
            // pair among the rest is most diverse.
            std::vector<std::pair<double, Pair>> d;
            for (int i = 0; i < 3; ++i)
                for (int j = i + 1; j < 3; ++j)
                    d.push_back({dist(b[i], b[j]), Pair::of(ids[i], ids[j])});
            std::sort(d.begin(), d.end());
            std::array<int, 3> perm{0, 1, 2};
            do {
                const Triplet p{{ids[perm[0]], ids[perm[1]], ids[perm[2]]}};
                const auto l = oracle_label(p, b[perm[0]], b[perm[1]], b[perm[2]]);
                CHECK(l.most_similar == d[0].second);
                CHECK(l.most_diverse == d[2].second);
            } while (std::next_permutation(perm.begin(), perm.end()));
        }
    }
}

TEST_CASE("record validation and JSON round-trip")
{
    CHECK_NOTHROW(validate(record(1, 2, 3, Pair{1, 2}, Pair{1, 3})));
    CHECK_THROWS_AS(validate(record(1, 2, 3, Pair{1, 2}, Pair{1, 2})), ValidationError);
    CHECK_THROWS_AS(validate(record(1, 2, 3, Pair{1, 2}, Pair{1, 4})), ValidationError);
    CHECK_THROWS_AS(validate(record(1, 1, 3, Pair{1, 3}, Pair{1, 1})), ValidationError);
    auto r = record(4, 9, 2, Pair{2, 9}, Pair{4, 9});
    r.source = Source::human;
    r.timestamp = 12;
    CHECK(record_from_json(to_json(r)) == r);
}

TEST_CASE("preference store")
{
    testing::TempDir dir("store");
    const auto path = (dir / "p.jsonl").string();
    PreferenceStore store(path, true);
    const auto r = record(1, 2, 3, Pair{1, 2}, Pair{2, 3});
    store.append(r);
    CHECK(store.load() == std::vector<PreferenceRecord>{r});
    CHECK_THROWS_AS(store.append(record(1, 2, 3, Pair{1, 2}, Pair{1, 2})), ValidationError);
    CHECK(store.size() == 1);

    PreferenceStore big((dir / "big.jsonl").string(), true);
    for (int i = 0; i < 1000; ++i) {
        auto x = record(i, i + 1, i + 2, Pair{i, i + 1}, Pair{i, i + 2});
        x.timestamp = i;
        big.append(x);
    }
    const auto loaded = load_preferences((dir / "big.jsonl").string());
    REQUIRE(loaded.size() == 1000);
    for (int i = 0; i < 1000; ++i)
        CHECK(loaded[static_cast<std::size_t>(i)].triplet.ids[0] == i);

    PreferenceStore reopened(path, false);
    CHECK(reopened.size() == 1);
}

TEST_CASE("query queue")
{
    SUBCASE("empty")
    {
        QueryQueue q({});
        CHECK_FALSE(q.next_query().has_value());
    }
    SUBCASE("single triplet, then none")
    {
        QueryQueue q({Triplet{{1, 2, 3}}});
        const auto a = q.next_query();
        REQUIRE(a.has_value());
        CHECK(a->triplet == Triplet{{1, 2, 3}});
        CHECK_FALSE(q.next_query().has_value());
    }
    SUBCASE("submission lifecycle")
    {
        testing::TempDir dir("queue");
        PreferenceStore store((dir / "p.jsonl").string(), true);
        QueryQueue q({Triplet{{1, 2, 3}}, Triplet{{4, 5, 6}}}, &store);
        CHECK(q.progress().pending == 2);
        const auto a = q.next_query();
        const auto rec = q.submit_label(a->id, Pair{1, 2}, Pair{2, 3}, Source::human);
        CHECK(rec.source == Source::human);
        CHECK(q.progress().answered == 1);
        CHECK(q.progress().pending == 1);
        CHECK(store.load() == std::vector<PreferenceRecord>{rec});
        CHECK_THROWS_AS(q.submit_label(a->id, Pair{1, 2}, Pair{2, 3}, Source::human), ConflictError);
        CHECK_THROWS_AS(q.submit_label(99, Pair{1, 2}, Pair{2, 3}, Source::human), NotFoundError);
        CHECK_THROWS_AS(q.submit_label(1, Pair{4, 5}, Pair{1, 6}, Source::human), ValidationError);
        CHECK(q.progress().answered == 1);

        QueryQueue resumed({Triplet{{1, 2, 3}}, Triplet{{4, 5, 6}}}, &store);
        resumed.resume_from(store.load());
        CHECK(resumed.progress().answered == 1);
        const auto next = resumed.next_query();
        REQUIRE(next.has_value());
        CHECK(next->triplet == Triplet{{4, 5, 6}});
    }
    SUBCASE("concurrent consumers never share a query")
    {
        std::vector<Triplet> ts;
        for (Id i = 0; i < 2000; ++i)
            ts.push_back(Triplet{{3 * i, 3 * i + 1, 3 * i + 2}});
        testing::TempDir dir("stress");
        PreferenceStore store((dir / "p.jsonl").string(), true);
        QueryQueue q(ts, &store);
        std::mutex m;
        std::vector<std::size_t> seen;
        std::vector<std::thread> workers;
        for (int w = 0; w < 8; ++w) {
            workers.emplace_back([&] {
                while (auto job = q.next_query()) {
                    const auto& id = job->triplet.ids;
                    q.submit_label(job->id, Pair::of(id[0], id[1]), Pair::of(id[0], id[2]), Source::human);
                    std::lock_guard lock(m);
                    seen.push_back(job->id);
                }
            });
        }
        for (auto& w : workers)
            w.join();
        CHECK(seen.size() == ts.size());
        CHECK(std::set<std::size_t>(seen.begin(), seen.end()).size() == ts.size());
        CHECK(q.progress().answered == ts.size());
        const auto stored = store.load();
        CHECK(stored.size() == ts.size());
        for (std::size_t i = 0; i < stored.size(); ++i)
            CHECK(stored[i].timestamp == static_cast<std::int64_t>(i));
    }
}
