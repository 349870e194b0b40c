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

#include "divhf/config.hpp"

#include <fstream>
#include <set>

#include "divhf/errors.hpp"

namespace divhf::cli {

namespace {

using json = nlohmann::json;

void reject_unknown(const json& j, const std::string& where, std::initializer_list<const char*> known)
{
    if (!j.is_object())
        throw ConfigError("'" + where + "' must be an object");
    std::set<std::string> allowed(known.begin(), known.end());
    for (const auto& [key, _] : j.items())
        if (!allowed.contains(key))
            throw ConfigError("unknown key '" + (where.empty() ? key : where + "." + key) + "'");
}

template <typename T>
void read(const json& j, const char* key, T& out)
{
    if (j.contains(key))
        out = j.at(key).get<T>();
}

} // namespace

void RunConfig::validate() const
{
    if (schema_version != config_schema_version)
        throw ConfigError("unsupported config schema_version " + std::to_string(schema_version));
    if (env.feet == 0 || env.horizon < 2 || env.period == 0 || env.window == 0)
        throw ConfigError("environment sizes must be positive (horizon >= 2)");
    if (dataset.trajectories == 0)
        throw ConfigError("dataset.trajectories must be positive");
    if (dataset.queries == 0)
        throw ConfigError("dataset.queries must be positive");
    if (!(dataset.gene_bound > 0.0))
        throw ConfigError("dataset.gene_bound must be positive");
    if (descriptor.dim == 0 || descriptor.hidden == 0)
        throw ConfigError("descriptor sizes must be positive");
    if (!(training.temperature > 0.0))
        throw ConfigError("training.temperature must be positive");
    if (training.batch_size == 0)
        throw ConfigError("training.batch_size must be positive");
    if (!(training.learning_rate > 0.0))
        throw ConfigError("training.learning_rate must be positive");
    if (!(training.heldout_fraction >= 0.0 && training.heldout_fraction < 1.0))
        throw ConfigError("training.heldout_fraction must lie in [0, 1)");
    if (map_elites.cells == 0 || map_elites.batch == 0 || map_elites.cvt_samples < map_elites.cells)
        throw ConfigError("map_elites sizes must be positive with cvt_samples >= cells");
    if (!(map_elites.sigma >= 0.0))
        throw ConfigError("map_elites.sigma must be non-negative");
    if (service.port < 0 || service.port > 65535)
        throw ConfigError("service.port out of range");
}

nlohmann::ordered_json to_json(const RunConfig& c)
{
    nlohmann::ordered_json j;
    j["schema_version"] = c.schema_version;
    j["output_dir"] = c.output_dir;
    j["env"] = {{"feet", c.env.feet}, {"horizon", c.env.horizon}, {"period", c.env.period}, {"window", c.env.window}};
    j["dataset"] = {{"trajectories", c.dataset.trajectories},
                    {"queries", c.dataset.queries},
                    {"drop_ties", c.dataset.drop_ties},
                    {"gene_bound", c.dataset.gene_bound}};
    j["descriptor"] = {{"dim", c.descriptor.dim},
                       {"hidden", c.descriptor.hidden},
                       {"pooling", desc::to_string(c.descriptor.pooling)}};
    j["training"] = {{"temperature", c.training.temperature},
                     {"batch_size", c.training.batch_size},
                     {"epochs", c.training.epochs},
                     {"learning_rate", c.training.learning_rate},
                     {"heldout_fraction", c.training.heldout_fraction}};
    j["map_elites"] = {{"cells", c.map_elites.cells},
                       {"generations", c.map_elites.generations},
                       {"batch", c.map_elites.batch},
                       {"sigma", c.map_elites.sigma},
                       {"cvt_samples", c.map_elites.cvt_samples}};
    j["seeds"] = {{"collect", c.seeds.collect}, {"label", c.seeds.label}, {"train", c.seeds.train}, {"me", c.seeds.me}};
    j["service"] = {{"host", c.service.host}, {"port", c.service.port}};
    return j;
}

RunConfig config_from_json(const json& j)
{
    RunConfig c;
    try {
        reject_unknown(j, "",
                       {"schema_version", "output_dir", "env", "dataset", "descriptor", "training", "map_elites",
                        "seeds", "service"});
        read(j, "schema_version", c.schema_version);
        read(j, "output_dir", c.output_dir);
        if (j.contains("env")) {
            const auto& e = j.at("env");
            reject_unknown(e, "env", {"feet", "horizon", "period", "window"});
            read(e, "feet", c.env.feet);
            read(e, "horizon", c.env.horizon);
            read(e, "period", c.env.period);
            read(e, "window", c.env.window);
        }
        if (j.contains("dataset")) {
            const auto& d = j.at("dataset");
            reject_unknown(d, "dataset", {"trajectories", "queries", "drop_ties", "gene_bound"});
            read(d, "trajectories", c.dataset.trajectories);
            read(d, "queries", c.dataset.queries);
            read(d, "drop_ties", c.dataset.drop_ties);
            read(d, "gene_bound", c.dataset.gene_bound);
        }
        if (j.contains("descriptor")) {
            const auto& d = j.at("descriptor");
            reject_unknown(d, "descriptor", {"dim", "hidden", "pooling"});
            read(d, "dim", c.descriptor.dim);
            read(d, "hidden", c.descriptor.hidden);
            if (d.contains("pooling"))
                c.descriptor.pooling = desc::pooling_from_string(d.at("pooling").get<std::string>());
        }
        if (j.contains("training")) {
            const auto& t = j.at("training");
            reject_unknown(t, "training", {"temperature", "batch_size", "epochs", "learning_rate", "heldout_fraction"});
            read(t, "temperature", c.training.temperature);
            read(t, "batch_size", c.training.batch_size);
            read(t, "epochs", c.training.epochs);
            read(t, "learning_rate", c.training.learning_rate);
            read(t, "heldout_fraction", c.training.heldout_fraction);
        }
        if (j.contains("map_elites")) {
            const auto& m = j.at("map_elites");
            reject_unknown(m, "map_elites", {"cells", "generations", "batch", "sigma", "cvt_samples"});
            read(m, "cells", c.map_elites.cells);
            read(m, "generations", c.map_elites.generations);
            read(m, "batch", c.map_elites.batch);
            read(m, "sigma", c.map_elites.sigma);
            read(m, "cvt_samples", c.map_elites.cvt_samples);
        }
        if (j.contains("seeds")) {
            const auto& s = j.at("seeds");
            reject_unknown(s, "seeds", {"collect", "label", "train", "me"});
            read(s, "collect", c.seeds.collect);
            read(s, "label", c.seeds.label);
            read(s, "train", c.seeds.train);
            read(s, "me", c.seeds.me);
        }
        if (j.contains("service")) {
            const auto& s = j.at("service");
            reject_unknown(s, "service", {"host", "port"});
            read(s, "host", c.service.host);
            read(s, "port", c.service.port);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("invalid config: ") + e.what());
    } catch (const ValidationError& e) {
        throw ConfigError(e.what());
    }
    c.validate();
    return c;
}

RunConfig load_config(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot read config " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("config " + path + " is not valid JSON: " + e.what());
    }
    return config_from_json(j);
}

void save_config(const RunConfig& cfg, const std::string& path)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw StorageError("cannot write " + path);
    out << to_json(cfg).dump(2) << '\n';
}

} // namespace divhf::cli
