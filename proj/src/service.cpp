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

#include "divhf/service.hpp"

#include <httplib.h>

#include "divhf/errors.hpp"

namespace divhf::pref {

namespace {

void reply(httplib::Response& res, int status, const nlohmann::ordered_json& body)
{
    res.status = status;
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_content(body.dump(), "application/json");
}

nlohmann::ordered_json error_body(const std::string& message) { return {{"error", message}}; }

Pair parse_pair(const nlohmann::json& j, const char* key)
{
    if (!j.contains(key))
        throw ValidationError(std::string("missing '") + key + "'");
    const auto& v = j.at(key);
    if (!v.is_array() || v.size() != 2 || !v[0].is_number_integer() || !v[1].is_number_integer())
        throw ValidationError(std::string("'") + key + "' must be a pair of trajectory ids");
    return Pair::of(v[0].get<Id>(), v[1].get<Id>());
}

} // namespace

nlohmann::ordered_json query_payload(const Query& query, const env::Dataset& dataset)
{
    nlohmann::ordered_json q;
    q["id"] = query.id;
    q["triplet"] = query.triplet.ids;
    auto trajs = nlohmann::ordered_json::array();
    for (Id id : query.triplet.ids) {
        const auto& rec = dataset.by_id(id);
        const auto& t = rec.trajectory;
        std::vector<std::vector<int>> contacts(t.feet(), std::vector<int>(t.horizon));
        for (std::size_t step = 0; step < t.horizon; ++step)
            for (std::size_t foot = 0; foot < t.feet(); ++foot)
                contacts[foot][step] = t.at(step, foot) == 1.0 ? 1 : 0;
        nlohmann::ordered_json tj;
        tj["id"] = id;
        tj["contacts"] = contacts;
        tj["summary"] = {{"horizon", t.horizon}, {"feet", t.feet()}, {"fitness", rec.fitness}};
        trajs.push_back(std::move(tj));
    }
    q["trajectories"] = std::move(trajs);
    return q;
}

LabelingService::LabelingService(QueryQueue& queue, const env::Dataset& dataset)
    : queue_(queue), dataset_(dataset), server_(std::make_unique<httplib::Server>())
{
    install_routes();
}

LabelingService::~LabelingService() { stop(); }

void LabelingService::install_routes()
{
    server_->Get("/api/query/next", [this](const httplib::Request&, httplib::Response& res) {
        const auto q = queue_.next_query();
        if (!q) {
            reply(res, 200, {{"done", true}});
            return;
        }
        reply(res, 200, {{"done", false}, {"query", query_payload(*q, dataset_)}});
    });

    server_->Post(R"(/api/query/(\d+)/label)", [this](const httplib::Request& req, httplib::Response& res) {
        std::size_t id = 0;
        try {
            id = std::stoull(req.matches[1].str());
        } catch (const std::exception&) {
            reply(res, 404, error_body("unknown query"));
            return;
        }
        try {
            const auto body = nlohmann::json::parse(req.body);
            if (!body.is_object())
                throw ValidationError("label body must be a JSON object");
            const auto rec = queue_.submit_label(id, parse_pair(body, "most_similar"),
                                                 parse_pair(body, "most_diverse"), Source::human);
            reply(res, 200, to_json(rec));
        } catch (const NotFoundError& e) {
            reply(res, 404, error_body(e.what()));
        } catch (const ConflictError& e) {
            reply(res, 409, error_body(e.what()));
        } catch (const ValidationError& e) {
            reply(res, 422, error_body(e.what()));
        } catch (const nlohmann::json::exception& e) {
            reply(res, 422, error_body(std::string("malformed body: ") + e.what()));
        } catch (const StorageError& e) {
            reply(res, 500, error_body(e.what()));
        }
    });

    server_->Get("/api/progress", [this](const httplib::Request&, httplib::Response& res) {
        const auto p = queue_.progress();
        reply(res, 200, {{"answered", p.answered}, {"pending", p.pending}});
    });

    server_->Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) {
        res.set_header("Access-Control-Allow-Origin", "*");
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        res.set_header("Access-Control-Allow-Headers", "Content-Type");
        res.status = 204;
    });
}

int LabelingService::start(const std::string& host, int port)
{
    if (thread_.joinable())
        throw ContractError("labeling service already running");
    int bound = port;
    if (port == 0)
        bound = server_->bind_to_any_port(host);
    else if (!server_->bind_to_port(host, port))
        bound = -1;
    if (bound < 0)
        throw StorageError("cannot bind labeling service to " + host + ":" + std::to_string(port));
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    return bound;
}

void LabelingService::stop()
{
    if (server_)
        server_->stop();
    if (thread_.joinable())
        thread_.join();
}

} // namespace divhf::pref
