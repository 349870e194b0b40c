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
#include <string>

#include <json.hpp>

#include "divhf/descriptor.hpp"
#include "divhf/env.hpp"

namespace divhf::cli {

inline constexpr int config_schema_version = 1;

struct DatasetConfig {
    std::size_t trajectories = 5000;
    std::size_t queries = 5000;
    bool drop_ties = false;
    double gene_bound = 5.0;
};

struct DescriptorConfig {
    std::size_t dim = 4;
    std::size_t hidden = 32;
    desc::Pooling pooling = desc::Pooling::mean_max;
};

struct TrainingConfig {
    double temperature = 1.0;
    std::size_t batch_size = 64;
    std::size_t epochs = 30;
    double learning_rate = 3e-3;
    double heldout_fraction = 0.1;
};

struct MapElitesConfig {
    std::size_t cells = 256;
    std::size_t generations = 50;
    std::size_t batch = 64;
    double sigma = 0.2;
    std::size_t cvt_samples = 10000;
};

struct Seeds {
    std::uint64_t collect = 1;
    std::uint64_t label = 2;
    std::uint64_t train = 3;
    std::uint64_t me = 4;
};

struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
};

struct RunConfig {
    int schema_version = config_schema_version;
    std::string output_dir = "runs/default";
    env::EnvConfig env;
    DatasetConfig dataset;
    DescriptorConfig descriptor;
    TrainingConfig training;
    MapElitesConfig map_elites;
    Seeds seeds;
    ServiceConfig service;

    /// Throws ConfigError on any non-positive size or inconsistent value.
    void validate() const;
};

nlohmann::ordered_json to_json(const RunConfig& cfg);
/// Missing keys keep their defaults; unknown keys and wrong types raise
/// ConfigError.
RunConfig config_from_json(const nlohmann::json& j);

RunConfig load_config(const std::string& path);
void save_config(const RunConfig& cfg, const std::string& path);

} // namespace divhf::cli
