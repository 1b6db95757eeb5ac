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


// Shared generators for the test binaries.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "pianoalign/common.hpp"
#include "pianoalign/midi.hpp"

namespace pianoalign::testing {

inline int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return lo + static_cast<int>(unit_uniform(rng) * (hi - lo + 1));
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * unit_uniform(rng); }

inline Matrix random_matrix(std::mt19937_64& rng, int rows, int cols, double lo = -1.0, double hi = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = uniform(rng, lo, hi);
  return m;
}

/// Onsets on a grid of `grid` seconds, durations in [min_dur, max_dur].
inline NoteList random_notes(std::mt19937_64& rng, int count, double span_seconds, double grid = 0.01,
                             double min_dur = 0.05, double max_dur = 1.0) {
  std::vector<NoteEvent> notes;
  const int slots = std::max(1, static_cast<int>(span_seconds / grid));
  for (int k = 0; k < count; ++k) {
    NoteEvent n;
    n.pitch = uniform_int(rng, kLowestPitch, kHighestPitch);
    n.onset = uniform_int(rng, 0, slots - 1) * grid;
    n.offset = n.onset + uniform(rng, min_dur, max_dur);
    n.velocity = uniform_int(rng, 1, 127);
    notes.push_back(n);
  }
  return NoteList(std::move(notes));
}

/// A piece of `seconds` with `rate` notes per second on a 10 ms grid.
inline NoteList synthetic_piece(std::uint64_t seed, double seconds = 60.0, double rate = 4.0) {
  std::mt19937_64 rng(seed);
  return random_notes(rng, static_cast<int>(seconds * rate), seconds, 0.01, 0.1, 1.0);
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("pianoalign_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace pianoalign::testing
