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


#include "pianoalign/aligner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace pianoalign {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_inputs(const Matrix& a, const Matrix& b) {
  if (a.rows() < 1 || b.rows() < 1) throw InputError("DTW needs at least one frame on each side");
  if (a.cols() != b.cols())
    throw InputError("feature dimensions differ: " + std::to_string(a.cols()) + " vs " + std::to_string(b.cols()));
}

// Walks back from the last cell. `at(i, j)` returns the accumulated cost or
// +inf outside the admissible region.
template <typename Lookup>
std::vector<std::pair<int, int>> backtrack(int n, int m, Lookup at) {
  std::vector<std::pair<int, int>> pairs;
  pairs.reserve(static_cast<std::size_t>(n + m));
  int i = n - 1;
  int j = m - 1;
  pairs.emplace_back(i, j);
  while (i > 0 || j > 0) {
    const double diag = (i > 0 && j > 0) ? at(i - 1, j - 1) : kInf;
    const double up = i > 0 ? at(i - 1, j) : kInf;
    const double left = j > 0 ? at(i, j - 1) : kInf;
    if (diag <= up && diag <= left) {
      --i;
      --j;
    } else if (up <= left) {
      --i;
    } else {
      --j;
    }
    pairs.emplace_back(i, j);
  }
  std::reverse(pairs.begin(), pairs.end());
  return pairs;
}

}  // namespace

double local_cost(const Matrix& a, int i, const Matrix& b, int j) { return (a.row(i) - b.row(j)).norm(); }

bool is_valid_path(const WarpingPath& path, int n, int m, std::string* why) {
  auto fail = [&](const std::string& msg) {
    if (why != nullptr) *why = msg;
    return false;
  };
  if (path.pairs.empty()) return fail("empty path");
  if (path.pairs.front() != std::pair{0, 0}) return fail("path does not start at (0, 0)");
  if (path.pairs.back() != std::pair{n - 1, m - 1}) return fail("path does not end at (n-1, m-1)");
  for (std::size_t k = 1; k < path.pairs.size(); ++k) {
    const int di = path.pairs[k].first - path.pairs[k - 1].first;
    const int dj = path.pairs[k].second - path.pairs[k - 1].second;
    if (di < 0 || dj < 0 || di > 1 || dj > 1 || (di == 0 && dj == 0))
      return fail("invalid step at index " + std::to_string(k));
  }
  if (!(path.total_cost >= 0.0)) return fail("negative or NaN cost");
  return true;
}

WarpingPath dtw_exact(const Matrix& a, const Matrix& b, DtwStats* stats, std::size_t max_cells) {
  check_inputs(a, b);
  const auto n = static_cast<int>(a.rows());
  const auto m = static_cast<int>(b.rows());
  const std::size_t cells = static_cast<std::size_t>(n) * static_cast<std::size_t>(m);
  if (cells > max_cells)
    throw DtwMemoryError("exact DTW over " + std::to_string(n) + " x " + std::to_string(m) +
                         " frames exceeds the cell cap of " + std::to_string(max_cells) + "; use fastdtw");
  std::vector<double> acc(cells);
  auto at = [&](int i, int j) -> double& { return acc[static_cast<std::size_t>(i) * m + j]; };
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      double best = 0.0;
      if (i > 0 || j > 0) {
        best = kInf;
        if (i > 0 && j > 0) best = std::min(best, at(i - 1, j - 1));
        if (i > 0) best = std::min(best, at(i - 1, j));
        if (j > 0) best = std::min(best, at(i, j - 1));
      }
      at(i, j) = best + local_cost(a, i, b, j);
    }
  }
  if (stats != nullptr) stats->cells += cells;
  WarpingPath path;
  path.total_cost = at(n - 1, m - 1);
  path.pairs = backtrack(n, m, [&](int i, int j) { return at(i, j); });
  return path;
}

SearchWindow SearchWindow::full(int rows, int cols) {
  SearchWindow w{rows, cols, {}};
  w.ranges.assign(static_cast<std::size_t>(rows), {0, cols});
  return w;
}

SearchWindow SearchWindow::diagonal(int rows, int cols, int half_width) {
  SearchWindow w{rows, cols, {}};
  for (int i = 0; i < rows; ++i) {
    const double center = rows > 1 ? static_cast<double>(i) * (cols - 1) / (rows - 1) : 0.0;
    const int begin = std::max(0, static_cast<int>(std::ceil(center - half_width - 1e-9)));
    const int end = std::min(cols, static_cast<int>(std::floor(center + half_width + 1e-9)) + 1);
    w.ranges.emplace_back(begin, std::max(begin, end));
  }
  // Steep or flat bands are widened so every row reaches the next one.
  w.ranges.front().first = 0;
  w.ranges.back().second = cols;
  for (int i = 1; i < rows; ++i) {
    auto& [begin, end] = w.ranges[static_cast<std::size_t>(i)];
    begin = std::min(begin, w.ranges[static_cast<std::size_t>(i) - 1].second);
    end = std::max(end, begin + 1);
  }
  return w;
}

bool SearchWindow::contains(int i, int j) const {
  if (i < 0 || i >= rows) return false;
  const auto& [begin, end] = ranges[static_cast<std::size_t>(i)];
  return j >= begin && j < end;
}

std::size_t SearchWindow::cells() const {
  std::size_t n = 0;
  for (const auto& [begin, end] : ranges) n += static_cast<std::size_t>(std::max(0, end - begin));
  return n;
}

WarpingPath dtw_windowed(const Matrix& a, const Matrix& b, const SearchWindow& window, DtwStats* stats) {
  check_inputs(a, b);
  const auto n = static_cast<int>(a.rows());
  const auto m = static_cast<int>(b.rows());
  if (window.rows != n || window.cols != m || window.ranges.size() != static_cast<std::size_t>(n))
    throw InputError("search window shape does not match the inputs");
  if (!window.contains(0, 0) || !window.contains(n - 1, m - 1))
    throw InputError("search window must contain both corner cells");

  std::vector<std::size_t> offset(static_cast<std::size_t>(n) + 1, 0);
  for (int i = 0; i < n; ++i) {
    const auto& [begin, end] = window.ranges[i];
    if (begin < 0 || end > m) throw InputError("search window range outside the grid");
    offset[i + 1] = offset[i] + static_cast<std::size_t>(std::max(0, end - begin));
  }
  std::vector<double> acc(offset[n], kInf);
  auto at = [&](int i, int j) -> double {
    const auto& [begin, end] = window.ranges[i];
    return (j >= begin && j < end) ? acc[offset[i] + (j - begin)] : kInf;
  };
  for (int i = 0; i < n; ++i) {
    const auto [begin, end] = window.ranges[i];
    for (int j = begin; j < end; ++j) {
      double best = 0.0;
      if (i > 0 || j > 0) {
        best = kInf;
        if (i > 0 && j > 0) best = std::min(best, at(i - 1, j - 1));
        if (i > 0) best = std::min(best, at(i - 1, j));
        if (j > begin) best = std::min(best, acc[offset[i] + (j - 1 - begin)]);
      }
      if (best < kInf) acc[offset[i] + (j - begin)] = best + local_cost(a, i, b, j);
    }
  }
  if (stats != nullptr) stats->cells += offset[n];
  WarpingPath path;
  path.total_cost = at(n - 1, m - 1);
  if (!std::isfinite(path.total_cost)) throw InputError("search window does not connect the corner cells");
  path.pairs = backtrack(n, m, at);
  return path;
}

Matrix coarsen(const Matrix& x) {
  const Eigen::Index half = (x.rows() + 1) / 2;
  Matrix out(half, x.cols());
  for (Eigen::Index r = 0; r < half; ++r) {
    if (2 * r + 1 < x.rows()) {
      out.row(r) = 0.5 * (x.row(2 * r) + x.row(2 * r + 1));
    } else {
      out.row(r) = x.row(2 * r);
    }
  }
  return out;
}

SearchWindow expand_window(const WarpingPath& coarse, int rows, int cols, int radius) {
  std::vector<int> lo(static_cast<std::size_t>(rows), cols);
  std::vector<int> hi(static_cast<std::size_t>(rows), -1);
  for (const auto& [ci, cj] : coarse.pairs) {
    for (int i = 2 * ci; i <= std::min(2 * ci + 1, rows - 1); ++i) {
      lo[i] = std::min(lo[i], 2 * cj);
      hi[i] = std::max(hi[i], std::min(2 * cj + 1, cols - 1));
    }
  }
  SearchWindow w{rows, cols, {}};
  w.ranges.reserve(static_cast<std::size_t>(rows));
  for (int i = 0; i < rows; ++i) {
    int begin = cols;
    int end = -1;
    for (int k = std::max(0, i - radius); k <= std::min(rows - 1, i + radius); ++k) {
      if (hi[k] < 0) continue;
      begin = std::min(begin, lo[k]);
      end = std::max(end, hi[k]);
    }
    if (end < 0) throw InputError("coarse path does not cover every fine row");
    w.ranges.emplace_back(std::max(0, begin - radius), std::min(cols, end + radius + 1));
  }
  return w;
}

WarpingPath fastdtw(const Matrix& a, const Matrix& b, int radius, DtwStats* stats) {
  check_inputs(a, b);
  if (radius < 0) throw InputError("radius must be non-negative");
  const auto n = static_cast<int>(a.rows());
  const auto m = static_cast<int>(b.rows());
  if (std::min(n, m) <= 2 * radius + 2) return dtw_exact(a, b, stats);
  const WarpingPath coarse = fastdtw(coarsen(a), coarsen(b), radius, stats);
  return dtw_windowed(a, b, expand_window(coarse, n, m, radius), stats);
}

// ---------------------------------------------------------------------------
// Time maps

TimeMap::TimeMap(std::vector<std::pair<double, double>> anchors) : anchors_(std::move(anchors)) {
  if (anchors_.empty()) throw InputError("time map needs anchors");
  for (std::size_t k = 1; k < anchors_.size(); ++k)
    if (!(anchors_[k].first > anchors_[k - 1].first) || anchors_[k].second < anchors_[k - 1].second)
      throw InputError("time map anchors must increase");
}

double TimeMap::operator()(double score_time, bool* clamped) const {
  if (clamped != nullptr) *clamped = false;
  if (anchors_.empty()) return score_time;
  if (score_time <= anchors_.front().first || score_time >= anchors_.back().first) {
    const bool below = score_time <= anchors_.front().first;
    const double edge = below ? anchors_.front().first : anchors_.back().first;
    if (clamped != nullptr) *clamped = score_time != edge;
    return below ? anchors_.front().second : anchors_.back().second;
  }
  auto it = std::upper_bound(anchors_.begin(), anchors_.end(), score_time,
                             [](double t, const auto& a) { return t < a.first; });
  const auto& [s1, p1] = *it;
  const auto& [s0, p0] = *std::prev(it);
  return p0 + (score_time - s0) * (p1 - p0) / (s1 - s0);
}

TimeMap path_to_time_map(const WarpingPath& path, int fps) {
  if (path.pairs.empty()) throw InputError("empty warping path");
  const int n = path.pairs.back().first + 1;
  const int m = path.pairs.back().second + 1;
  std::vector<double> sum(static_cast<std::size_t>(n), 0.0);
  std::vector<int> count(static_cast<std::size_t>(n), 0);
  for (const auto& [i, j] : path.pairs) {
    sum[i] += (j + 0.5) / fps;
    ++count[i];
  }
  std::vector<std::pair<double, double>> anchors;
  anchors.reserve(static_cast<std::size_t>(n) + 2);
  anchors.emplace_back(0.0, 0.0);
  for (int i = 0; i < n; ++i) {
    if (count[i] == 0) throw InputError("warping path skips a score frame");
    const double perf = std::max(anchors.back().second, sum[i] / count[i]);
    anchors.emplace_back((i + 0.5) / fps, perf);
  }
  anchors.emplace_back(static_cast<double>(n) / fps, std::max(anchors.back().second, static_cast<double>(m) / fps));
  return TimeMap(std::move(anchors));
}

std::vector<OnsetEstimate> transfer_onsets(const NoteList& score, const TimeMap& map) {
  std::vector<OnsetEstimate> out;
  out.reserve(score.size());
  for (const auto& note : score) {
    OnsetEstimate e{note, 0.0, false};
    e.estimated_onset = map(note.onset, &e.clamped);
    out.push_back(e);
  }
  return out;
}

NoteList warp_notes(const NoteList& score, const TimeMap& map) {
  std::vector<NoteEvent> out;
  out.reserve(score.size());
  for (const auto& note : score) {
    NoteEvent n = note;
    n.onset = std::max(0.0, map(note.onset));
    n.offset = std::max(map(note.offset), n.onset + 1e-3);
    out.push_back(n);
  }
  return NoteList(std::move(out));
}

std::string path_to_csv(const WarpingPath& path) {
  std::ostringstream out;
  out << "score_frame,performance_frame\n";
  for (const auto& [i, j] : path.pairs) out << i << ',' << j << '\n';
  return out.str();
}

std::string time_map_to_csv(const TimeMap& map) {
  std::ostringstream out;
  out.precision(10);
  out << "score_time_s,performance_time_s\n";
  for (const auto& [s, p] : map.anchors()) out << s << ',' << p << '\n';
  return out.str();
}

}  // namespace pianoalign
