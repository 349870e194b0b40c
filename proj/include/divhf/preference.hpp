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

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "divhf/env.hpp"

namespace divhf::pref {

using Id = std::int64_t;

/// Unordered pair of trajectory ids, stored sorted.
struct Pair {
    Id first = 0;
    Id second = 0;

    static Pair of(Id a, Id b) { return a < b ? Pair{a, b} : Pair{b, a}; }
    bool contains(Id id) const { return first == id || second == id; }
    auto operator<=>(const Pair&) const = default;
};

struct Triplet {
    std::array<Id, 3> ids{};

    bool operator==(const Triplet&) const = default;
};

/// The three unordered pairs of a triplet, in position order (0,1) (0,2) (1,2).
std::array<Pair, 3> pairs_of(const Triplet& t);
void validate(const Triplet& t);

enum class Source { oracle, human };

std::string to_string(Source s);
Source source_from_string(const std::string& s);

struct PreferenceRecord {
    Triplet triplet;
    Pair most_similar;
    Pair most_diverse;
    Source source = Source::oracle;
    std::int64_t timestamp = 0; // logical: position in the preference store

    bool operator==(const PreferenceRecord&) const = default;
};

/// Throws ValidationError unless the ids are distinct, both pairs belong to
/// the triplet and the two pairs differ.
void validate(const PreferenceRecord& record);

nlohmann::ordered_json to_json(const PreferenceRecord& record);
PreferenceRecord record_from_json(const nlohmann::json& j);

/// n triplets of distinct indices in [0, dataset_size), each drawn uniformly
/// without replacement. Throws InsufficientDataError if dataset_size < 3.
std::vector<Triplet> sample_triplets(std::size_t dataset_size, std::size_t n, std::uint64_t seed);

struct Labels {
    Pair most_similar;
    Pair most_diverse;
    bool tie = false; // some distance comparison that decided a label was exact
};

/// Picks the closest pair as most similar and the farthest remaining pair as
/// most diverse. `distances` follow pairs_of order. Ties go to the
/// lexicographically smallest sorted id pair, which keeps labels independent
/// of presentation order.
Labels label_from_distances(const Triplet& t, const std::array<double, 3>& distances);

/// Synthetic oracle: Euclidean distances between oracle behaviours.
Labels oracle_label(const Triplet& t, const env::OracleBehavior& a, const env::OracleBehavior& b,
                    const env::OracleBehavior& c);
Labels oracle_label(const Triplet& t, const env::Dataset& dataset);

/// Append-only line-delimited preference dataset.
class PreferenceStore {
public:
    /// Opens (and with `truncate`, empties) the store at `path`.
    explicit PreferenceStore(std::string path, bool truncate = false);

    /// Validates and appends one line. Thread-safe.
    void append(const PreferenceRecord& record);
    std::vector<PreferenceRecord> load() const;
    std::size_t size() const;
    const std::string& path() const { return path_; }

private:
    std::string path_;
    mutable std::mutex mutex_;
    std::size_t count_ = 0;
};

std::vector<PreferenceRecord> load_preferences(const std::string& path);

enum class QueryStatus { pending, in_flight, answered };

struct Query {
    std::size_t id = 0;
    Triplet triplet;
    QueryStatus status = QueryStatus::pending;
};

struct Progress {
    std::size_t answered = 0;
    std::size_t pending = 0; // not yet answered, including in-flight
};

/// Work queue of triplet queries shared by labeling clients. All state
/// transitions happen under one lock.
class QueryQueue {
public:
    /// `store` may be null, in which case records are only returned.
    explicit QueryQueue(std::vector<Triplet> triplets, PreferenceStore* store = nullptr);

    /// Hands out the lowest pending query and marks it in flight.
    std::optional<Query> next_query();

    /// Throws NotFoundError for unknown ids, ConflictError for queries that
    /// were already answered and ValidationError for bad pairs.
    PreferenceRecord submit_label(std::size_t query_id, Pair most_similar, Pair most_diverse, Source source);

    /// Marks queries already answered in a previous session (matched by
    /// triplet) so serving can resume.
    void resume_from(std::span<const PreferenceRecord> records);

    std::optional<Query> query(std::size_t query_id) const;
    Progress progress() const;
    std::size_t size() const { return queries_.size(); }

private:
    mutable std::mutex mutex_;
    std::vector<Query> queries_;
    std::size_t cursor_ = 0;
    std::size_t answered_ = 0;
    PreferenceStore* store_;
};

} // namespace divhf::pref
