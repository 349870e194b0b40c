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
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <unistd.h>

#include "divhf/env.hpp"

namespace divhf::testing {

namespace fs = std::filesystem;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "t")
    {
        static std::atomic<int> counter{0};
        path_ = fs::temp_directory_path() /
                ("divhf-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir()
    {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

inline std::string slurp(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Trajectory built directly from per-foot contact strings such as "1100".
/// Smoothed columns use the same trailing window definition, recomputed
/// here from scratch.
inline env::Trajectory trajectory_from_contacts(const std::vector<std::string>& feet, std::size_t window)
{
    env::Trajectory t;
    t.horizon = feet.front().size();
    t.width = 2 * feet.size();
    t.features.assign(t.horizon * t.width, 0.0);
    const std::size_t k = feet.size();
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t s = 0; s < t.horizon; ++s) {
            t.features[s * t.width + i] = feet[i][s] == '1' ? 1.0 : 0.0;
            const std::size_t lo = s + 1 >= window ? s + 1 - window : 0;
            double sum = 0.0;
            for (std::size_t u = lo; u <= s; ++u)
                sum += feet[i][u] == '1' ? 1.0 : 0.0;
            t.features[s * t.width + k + i] = sum / static_cast<double>(s - lo + 1);
        }
    }
    return t;
}

} // namespace divhf::testing
