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

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "pianoalign/common.hpp"
#include "pianoalign/midi.hpp"

namespace pianoalign {

/// Monotone alignment of score frames (i) to performance frames (j).
struct WarpingPath {
  std::vector<std::pair<int, int>> pairs;
  double total_cost = 0.0;
};

/// Counts local-cost evaluations, summed over every level of fastdtw.
struct DtwStats {
  std::size_t cells = 0;
};

/// Raised when an exact DTW problem exceeds the configured cell cap.
class DtwMemoryError : public InputError {
 public:
  using InputError::InputError;
};

inline constexpr std::size_t kDefaultCellCap = 64'000'000;

/// Checks start/end cells and that every step is (1,0), (0,1) or (1,1).
bool is_valid_path(const WarpingPath& path, int n, int m, std::string* why = nullptr);

/// Euclidean distance between row i of a and row j of b.
double local_cost(const Matrix& a, int i, const Matrix& b, int j);

/// Full dynamic programme with unit step weights. Backtracking prefers the
/// diagonal, then (1,0), then (0,1) on ties.
WarpingPath dtw_exact(const Matrix& a, const Matrix& b, DtwStats* stats = nullptr,
                      std::size_t max_cells = kDefaultCellCap);

/// Admissible cells: one contiguous column range [begin, end) per row.
struct SearchWindow {
  int rows = 0;
  int cols = 0;
  std::vector<std::pair<int, int>> ranges;

  static SearchWindow full(int rows, int cols);
  /// |i * (cols - 1) / (rows - 1) - j| <= half_width around the main
  /// diagonal, widened where needed to keep consecutive rows connected.
  static SearchWindow diagonal(int rows, int cols, int half_width);

  bool contains(int i, int j) const;
  std::size_t cells() const;
};

/// Optimal path restricted to `window`; throws InputError when the window
/// does not connect (0, 0) to (n - 1, m - 1).
WarpingPath dtw_windowed(const Matrix& a, const Matrix& b, const SearchWindow& window, DtwStats* stats = nullptr);

/// Halves the frame rate by averaging adjacent rows; an odd last row is kept.
Matrix coarsen(const Matrix& x);

/// Projects a path on the coarse grid to the fine grid and widens it by
/// `radius` cells in every direction.
SearchWindow expand_window(const WarpingPath& coarse, int rows, int cols, int radius);

/// Multi-level approximation: exact DTW when min(n, m) <= 2 radius + 2,
/// otherwise coarsen, recurse, project and refine within the window.
WarpingPath fastdtw(const Matrix& a, const Matrix& b, int radius = 10, DtwStats* stats = nullptr);

/// Piecewise-linear score-time -> performance-time map.
class TimeMap {
 public:
  TimeMap() = default;
  /// Anchors must be strictly increasing in score time and non-decreasing
  /// in performance time.
  explicit TimeMap(std::vector<std::pair<double, double>> anchors);

  /// Queries outside [first, last] anchor are clamped; `clamped` reports it.
  double operator()(double score_time, bool* clamped = nullptr) const;
  const std::vector<std::pair<double, double>>& anchors() const { return anchors_; }
  double domain_end() const { return anchors_.empty() ? 0.0 : anchors_.back().first; }

 private:
  std::vector<std::pair<double, double>> anchors_;
};

/// One anchor per score frame at its centre, mapped to the mean centre time
/// of its matched performance frames, bracketed by (0, 0) and
/// (n / fps, m / fps).
TimeMap path_to_time_map(const WarpingPath& path, int fps = kFramesPerSecond);

struct OnsetEstimate {
  NoteEvent note;
  double estimated_onset = 0.0;
  bool clamped = false;
};

/// Maps every score onset through `map`, keeping score order.
std::vector<OnsetEstimate> transfer_onsets(const NoteList& score, const TimeMap& map);

/// Score notes with onsets and offsets moved to performance time.
NoteList warp_notes(const NoteList& score, const TimeMap& map);

std::string path_to_csv(const WarpingPath& path);
std::string time_map_to_csv(const TimeMap& map);

}  // namespace pianoalign
