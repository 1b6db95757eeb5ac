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

#include <array>
#include <span>
#include <string>
#include <vector>

#include "pianoalign/aligner.hpp"
#include "pianoalign/midi.hpp"

namespace pianoalign {

/// Thresholds of the summary table columns.
inline constexpr std::array<double, 4> kTableThresholdsMs = {10.0, 30.0, 50.0, 100.0};
/// Align-rate curve: 0, 10, ..., 200 ms.
inline constexpr int kCurvePoints = 21;
inline constexpr double kCurveStepMs = 10.0;

/// |estimate - truth| in milliseconds, paired by position.
std::vector<double> onset_errors(std::span<const double> estimates_s, std::span<const double> truth_s);
/// Estimates in score order against the ground-truth notes in the same order.
std::vector<double> onset_errors(const std::vector<OnsetEstimate>& estimates, const NoteList& truth);

/// Pairs two renderings of the same note set: the k-th note of a pitch in
/// `a` with the k-th note of that pitch in `b`. Returns errors in ms in the
/// order of `b`. Throws if the per-pitch counts differ.
std::vector<double> paired_onset_errors(const NoteList& a, const NoteList& b);

/// Percentage of errors <= threshold.
double align_rate(std::span<const double> errors_ms, double threshold_ms);

struct AlignmentReport {
  std::string piece;
  std::size_t notes = 0;
  std::vector<double> errors_ms;  // empty for aggregates
  double mean_ms = 0.0;
  double median_ms = 0.0;
  double std_ms = 0.0;  // population
  std::array<double, 4> rates{};  // at kTableThresholdsMs, percent
  std::vector<double> curve;      // kCurvePoints values, percent

  friend bool operator==(const AlignmentReport&, const AlignmentReport&) = default;
};

/// Throws InputError on an empty error list.
AlignmentReport piecewise_stats(std::span<const double> errors_ms, std::string piece = {});

struct CorpusSummary {
  std::vector<AlignmentReport> pieces;
  AlignmentReport piecewise;  // unweighted mean of each piece statistic
  AlignmentReport pooled;     // statistics of all notes together

  friend bool operator==(const CorpusSummary&, const CorpusSummary&) = default;
};

CorpusSummary aggregate(std::vector<AlignmentReport> pieces);

enum class ReportFormat { kJson, kCsv, kMarkdown };

/// JSON follows docs/report-schema.md; CSV has a header and one row per
/// piece; markdown uses the column order Mean, Median, Std, <=10, <=30,
/// <=50, <=100 ms.
std::string render_report(const CorpusSummary& summary, ReportFormat format);

CorpusSummary summary_from_json(const std::string& text);

/// Structural check of a JSON report; fills `error` on failure.
bool validate_report_json(const std::string& text, std::string* error = nullptr);

}  // namespace pianoalign
