// Copyright 2026 The pianoalign Authors.
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

#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace pianoalign {

/// Frames x dimensions, one frame per row.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

inline constexpr int kSampleRate = 44100;
inline constexpr int kHopSize = 441;
inline constexpr int kFramesPerSecond = 100;
inline constexpr int kLowestPitch = 21;
inline constexpr int kHighestPitch = 108;
inline constexpr int kNumKeys = 88;
inline constexpr int kNumChroma = 12;

/// Output representation of a transcription network or feature block.
enum class Mode { kNote88, kChroma12, kOnset12 };

std::string_view mode_name(Mode mode);
Mode parse_mode(std::string_view name);

/// Number of columns of the frame-level block for `mode` (88 or 12).
int mode_width(Mode mode);

/// Raised when an input file or argument violates a documented contract.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 64-bit FNV-1a, used for configuration and file fingerprints.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t value);

/// Uniform draw in [0, 1) with 53 random bits; identical on every platform,
/// unlike std::uniform_real_distribution.
inline double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path);
std::string read_text_file(const std::filesystem::path& path);
void write_binary_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace pianoalign
