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

#include <atomic>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "divhf/config.hpp"

namespace divhf::cli {

namespace fs = std::filesystem;

// Process exit codes of the command-line front end.
enum ExitCode : int {
    exit_ok = 0,
    exit_io = 1,
    exit_bad_config = 2,
    exit_missing_input = 3,
    exit_training_failure = 4,
    exit_dimension_mismatch = 5,
};

/// Maps the library error hierarchy onto exit codes.
int exit_code_for(const std::exception& e);

// Descriptor training methods; run-me additionally accepts "oracle".
inline const std::vector<std::string> train_methods = {"divhf", "divhf_vanilla", "autoencoder", "random"};
inline const std::vector<std::string> me_methods = {"oracle", "divhf", "divhf_vanilla", "autoencoder", "random"};

/// File layout of one run directory.
struct RunPaths {
    fs::path root;

    fs::path config() const { return root / "config.json"; }
    fs::path manifest() const { return root / "manifest.json"; }
    fs::path trajectories() const { return root / "trajectories.jsonl"; }
    fs::path preferences() const { return root / "preferences.jsonl"; }
    fs::path model_dir(const std::string& method) const { return root / "models" / method; }
    fs::path checkpoint(const std::string& method) const { return model_dir(method) / "checkpoint.json"; }
    fs::path me_dir(const std::string& method) const { return root / "me" / method; }
    fs::path report_dir() const { return root / "report"; }
};

/// Lower-case hex SHA-256 of a file's bytes.
std::string sha256_file(const fs::path& path);

/// Shortest round-trip decimal form of a double.
std::string format_double(double v);

/// Sets every seed from one base seed through independent derived streams.
void override_seeds(RunConfig& cfg, std::uint64_t seed);

/// Simulates the trajectory dataset.
void collect(const RunConfig& cfg);

struct LabelSummary {
    std::size_t written = 0;
    std::size_t ties = 0;
    std::size_t dropped = 0;
};

/// Labels sampled triplets with the oracle; replaces any preference file.
LabelSummary label_oracle(const RunConfig& cfg);

/// Serves the pending triplet queries over HTTP until `stop` is set or every
/// query is answered. Resumes from an existing preference file.
/// `on_ready` receives the bound port.
void label_serve(const RunConfig& cfg, const std::atomic<bool>& stop, const std::function<void(int)>& on_ready = {});

/// Trains one descriptor method and writes its checkpoint, per-epoch metrics
/// and held-out accuracy. On divergence the last finite model is written
/// as last_valid_checkpoint.json before the error propagates.
void train(const RunConfig& cfg, const std::string& method);

/// Runs MAP-Elites with one descriptor. `checkpoint` overrides the method's
/// default checkpoint path.
void run_me(const RunConfig& cfg, const std::string& method, const std::string& checkpoint = {});

/// Aggregates every finished method into report/summary.csv and
/// report/curves.csv. Throws MissingInputError when nothing has been run.
void report(const RunConfig& cfg);

/// Every step for the given methods, in order, with oracle labels.
void run_all(const RunConfig& cfg, const std::vector<std::string>& methods);

} // namespace divhf::cli
