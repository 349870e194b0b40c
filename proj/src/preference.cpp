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

#include "divhf/preference.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "divhf/errors.hpp"
#include "divhf/random.hpp"

namespace divhf::pref {

std::array<Pair, 3> pairs_of(const Triplet& t)
{
    return {Pair::of(t.ids[0], t.ids[1]), Pair::of(t.ids[0], t.ids[2]), Pair::of(t.ids[1], t.ids[2])};
}

void validate(const Triplet& t)
{
    if (t.ids[0] == t.ids[1] || t.ids[0] == t.ids[2] || t.ids[1] == t.ids[2])
        throw ValidationError("triplet ids must be pairwise distinct");
}

std::string to_string(Source s) { return s == Source::oracle ? "oracle" : "human"; }

Source source_from_string(const std::string& s)
{
    if (s == "oracle")
        return Source::oracle;
    if (s == "human")
        return Source::human;
    throw ValidationError("unknown preference source '" + s + "'");
}

void validate(const PreferenceRecord& record)
{
    validate(record.triplet);
    const auto pairs = pairs_of(record.triplet);
    auto in_triplet = [&](const Pair& p) { return std::find(pairs.begin(), pairs.end(), p) != pairs.end(); };
    if (!in_triplet(record.most_similar) || !in_triplet(record.most_diverse))
        throw ValidationError("labelled pairs must be drawn from the triplet");
    if (record.most_similar == record.most_diverse)
        throw ValidationError("most similar and most diverse pairs must differ");
}

nlohmann::ordered_json to_json(const PreferenceRecord& r)
{
    nlohmann::ordered_json j;
    j["triplet"] = r.triplet.ids;
    j["most_similar"] = {r.most_similar.first, r.most_similar.second};
    j["most_diverse"] = {r.most_diverse.first, r.most_diverse.second};
    j["source"] = to_string(r.source);
    j["timestamp"] = r.timestamp;
    return j;
}

namespace {

Pair pair_from_json(const nlohmann::json& j)
{
    const auto v = j.get<std::vector<Id>>();
    if (v.size() != 2)
        throw ValidationError("a pair must have exactly two ids");
    return Pair::of(v[0], v[1]);
}

} // namespace

PreferenceRecord record_from_json(const nlohmann::json& j)
{
    PreferenceRecord r;
    try {
        const auto ids = j.at("triplet").get<std::vector<Id>>();
        if (ids.size() != 3)
            throw ValidationError("a triplet must have exactly three ids");
        r.triplet.ids = {ids[0], ids[1], ids[2]};
        r.most_similar = pair_from_json(j.at("most_similar"));
        r.most_diverse = pair_from_json(j.at("most_diverse"));
        r.source = source_from_string(j.at("source").get<std::string>());
        r.timestamp = j.at("timestamp").get<std::int64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed preference record: ") + e.what());
    }
    validate(r);
    return r;
}

std::vector<Triplet> sample_triplets(std::size_t dataset_size, std::size_t n, std::uint64_t seed)
{
    if (dataset_size < 3)
        throw InsufficientDataError("need at least three trajectories to form a triplet");
    Rng rng(seed);
    auto draw = [&rng](std::size_t bound) { return std::uniform_int_distribution<std::size_t>(0, bound - 1)(rng); };
    std::vector<Triplet> out;
    out.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
        // Sequential draws from the shrinking index set, no rejection.
        std::size_t a = draw(dataset_size);
        std::size_t b = draw(dataset_size - 1);
        if (b >= a)
            ++b;
        std::size_t c = draw(dataset_size - 2);
        const std::size_t lo = std::min(a, b);
        const std::size_t hi = std::max(a, b);
        if (c >= lo)
            ++c;
        if (c >= hi)
            ++c;
        out.push_back({{static_cast<Id>(a), static_cast<Id>(b), static_cast<Id>(c)}});
    }
    return out;
}

Labels label_from_distances(const Triplet& t, const std::array<double, 3>& distances)
{
    validate(t);
    const auto pairs = pairs_of(t);
    std::array<std::size_t, 3> order{0, 1, 2};
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        if (distances[x] != distances[y])
            return distances[x] < distances[y];
        return pairs[x] < pairs[y];
    });
    Labels l;
    l.most_similar = pairs[order[0]];
    // Farthest of the remaining two; equal distances prefer the smaller pair.
    const std::size_t u = order[1], v = order[2];
    std::size_t div = v;
    if (distances[u] == distances[v] && pairs[u] < pairs[v])
        div = u;
    l.most_diverse = pairs[div];
    l.tie = distances[order[0]] == distances[order[1]] || distances[order[1]] == distances[order[2]];
    return l;
}

namespace {

double euclidean(const env::OracleBehavior& a, const env::OracleBehavior& b)
{
    if (a.size() != b.size())
        throw DimensionError("oracle behaviours have different lengths");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

} // namespace

Labels oracle_label(const Triplet& t, const env::OracleBehavior& a, const env::OracleBehavior& b,
                    const env::OracleBehavior& c)
{
    return label_from_distances(t, {euclidean(a, b), euclidean(a, c), euclidean(b, c)});
}

Labels oracle_label(const Triplet& t, const env::Dataset& dataset)
{
    return oracle_label(t, dataset.by_id(t.ids[0]).oracle, dataset.by_id(t.ids[1]).oracle,
                        dataset.by_id(t.ids[2]).oracle);
}

PreferenceStore::PreferenceStore(std::string path, bool truncate) : path_(std::move(path))
{
    if (truncate) {
        std::ofstream out(path_, std::ios::trunc);
        if (!out)
            throw StorageError("cannot create " + path_);
    } else {
        std::ifstream probe(path_);
        if (probe)
            count_ = load().size();
        else {
            std::ofstream out(path_, std::ios::app);
            if (!out)
                throw StorageError("cannot create " + path_);
        }
    }
}

void PreferenceStore::append(const PreferenceRecord& record)
{
    validate(record);
    const std::string line = to_json(record).dump() + "\n";
    std::lock_guard lock(mutex_);
    std::ofstream out(path_, std::ios::app | std::ios::binary);
    if (!out)
        throw StorageError("cannot open " + path_ + " for appending");
    out.write(line.data(), static_cast<std::streamsize>(line.size()));
    out.flush();
    if (!out)
        throw StorageError("failed appending to " + path_);
    ++count_;
}

std::vector<PreferenceRecord> PreferenceStore::load() const { return load_preferences(path_); }

std::size_t PreferenceStore::size() const
{
    std::lock_guard lock(mutex_);
    return count_;
}

std::vector<PreferenceRecord> load_preferences(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw StorageError("cannot open " + path);
    std::vector<PreferenceRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        try {
            out.push_back(record_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(path + ": " + e.what());
        }
    }
    return out;
}

QueryQueue::QueryQueue(std::vector<Triplet> triplets, PreferenceStore* store) : store_(store)
{
    queries_.reserve(triplets.size());
    for (std::size_t i = 0; i < triplets.size(); ++i) {
        validate(triplets[i]);
        queries_.push_back({i, triplets[i], QueryStatus::pending});
    }
}

std::optional<Query> QueryQueue::next_query()
{
    std::lock_guard lock(mutex_);
    while (cursor_ < queries_.size() && queries_[cursor_].status != QueryStatus::pending)
        ++cursor_;
    if (cursor_ == queries_.size())
        return std::nullopt;
    auto& q = queries_[cursor_++];
    q.status = QueryStatus::in_flight;
    return q;
}

PreferenceRecord QueryQueue::submit_label(std::size_t query_id, Pair most_similar, Pair most_diverse,
                                          Source source)
{
    std::lock_guard lock(mutex_);
    if (query_id >= queries_.size())
        throw NotFoundError("unknown query " + std::to_string(query_id));
    auto& q = queries_[query_id];
    if (q.status == QueryStatus::answered)
        throw ConflictError("query " + std::to_string(query_id) + " was already answered");
    PreferenceRecord r{q.triplet, most_similar, most_diverse, source, 0};
    validate(r);
    if (store_) {
        r.timestamp = static_cast<std::int64_t>(store_->size());
        store_->append(r);
    } else {
        r.timestamp = static_cast<std::int64_t>(answered_);
    }
    q.status = QueryStatus::answered;
    ++answered_;
    return r;
}

void QueryQueue::resume_from(std::span<const PreferenceRecord> records)
{
    std::lock_guard lock(mutex_);
    std::map<std::array<Id, 3>, std::size_t> remaining;
    for (const auto& r : records) {
        auto key = r.triplet.ids;
        std::sort(key.begin(), key.end());
        ++remaining[key];
    }
    for (auto& q : queries_) {
        if (q.status == QueryStatus::answered)
            continue;
        auto key = q.triplet.ids;
        std::sort(key.begin(), key.end());
        auto it = remaining.find(key);
        if (it != remaining.end() && it->second > 0) {
            --it->second;
            q.status = QueryStatus::answered;
            ++answered_;
        }
    }
}

std::optional<Query> QueryQueue::query(std::size_t query_id) const
{
    std::lock_guard lock(mutex_);
    if (query_id >= queries_.size())
        return std::nullopt;
    return queries_[query_id];
}

Progress QueryQueue::progress() const
{
    std::lock_guard lock(mutex_);
    return {answered_, queries_.size() - answered_};
}

} // namespace divhf::pref
