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

#include <memory>
#include <string>
#include <thread>

#include "divhf/env.hpp"
#include "divhf/preference.hpp"

namespace httplib {
class Server;
}

namespace divhf::pref {

/// HTTP front end of a QueryQueue for the browser labeling client.
///
///   GET  /api/query/next        200 {"done": false, "query": {...}} or {"done": true}
///   POST /api/query/{id}/label  body {"most_similar": [a, b], "most_diverse": [c, d]}
///                               200 record | 404 unknown | 409 duplicate | 422 invalid
///   GET  /api/progress          200 {"answered": n, "pending": m}
///
/// Pair members are trajectory ids taken from the served triplet. Every
/// response body is JSON.
class LabelingService {
public:
    LabelingService(QueryQueue& queue, const env::Dataset& dataset);
    ~LabelingService();

    LabelingService(const LabelingService&) = delete;
    LabelingService& operator=(const LabelingService&) = delete;

    /// Binds to host:port (port 0 picks a free port) and serves on a
    /// background thread. Returns the bound port.
    int start(const std::string& host, int port);
    void stop();

private:
    void install_routes();

    QueryQueue& queue_;
    const env::Dataset& dataset_;
    std::unique_ptr<httplib::Server> server_;
    std::thread thread_;
};

/// JSON payload served for one query: the triplet plus, per trajectory, the
/// contact timeline of every foot and an oracle-free summary.
nlohmann::ordered_json query_payload(const Query& query, const env::Dataset& dataset);

} // namespace divhf::pref
