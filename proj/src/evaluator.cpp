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


#include "pianoalign/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace pianoalign {

std::vector<double> onset_errors(std::span<const double> estimates_s, std::span<const double> truth_s) {
  if (estimates_s.size() != truth_s.size())
    throw InputError("estimate count " + std::to_string(estimates_s.size()) + " differs from reference count " +
                     std::to_string(truth_s.size()));
  std::vector<double> out(estimates_s.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = std::abs(estimates_s[k] - truth_s[k]) * 1000.0;
  return out;
}

std::vector<double> onset_errors(const std::vector<OnsetEstimate>& estimates, const NoteList& truth) {
  std::vector<double> est, ref;
  for (const auto& e : estimates) est.push_back(e.estimated_onset);
  for (const auto& n : truth) ref.push_back(n.onset);
  return onset_errors(est, ref);
}

std::vector<double> paired_onset_errors(const NoteList& a, const NoteList& b) {
  if (a.size() != b.size())
    throw InputError("note counts differ: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  std::map<int, std::vector<double>> by_pitch;
  for (const auto& n : a) by_pitch[n.pitch].push_back(n.onset);
  std::map<int, std::size_t> used;
  std::vector<double> out;
  out.reserve(b.size());
  for (const auto& n : b) {
    auto& onsets = by_pitch[n.pitch];
    std::size_t& k = used[n.pitch];
    if (k >= onsets.size()) throw InputError("pitch " + std::to_string(n.pitch) + " occurs more often in the reference");
    out.push_back(std::abs(onsets[k++] - n.onset) * 1000.0);
  }
  return out;
}

double align_rate(std::span<const double> errors_ms, double threshold_ms) {
  if (errors_ms.empty()) throw InputError("no errors to rate");
  const auto hits = std::count_if(errors_ms.begin(), errors_ms.end(), [&](double e) { return e <= threshold_ms; });
  return 100.0 * static_cast<double>(hits) / static_cast<double>(errors_ms.size());
}

AlignmentReport piecewise_stats(std::span<const double> errors_ms, std::string piece) {
  if (errors_ms.empty()) throw InputError("cannot summarize an empty error list");
  AlignmentReport r;
  r.piece = std::move(piece);
  r.notes = errors_ms.size();
  r.errors_ms.assign(errors_ms.begin(), errors_ms.end());
  const double n = static_cast<double>(errors_ms.size());
  r.mean_ms = std::accumulate(errors_ms.begin(), errors_ms.end(), 0.0) / n;
  double sq = 0.0;
  for (double e : errors_ms) sq += (e - r.mean_ms) * (e - r.mean_ms);
  r.std_ms = std::sqrt(sq / n);
  std::vector<double> sorted(errors_ms.begin(), errors_ms.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t mid = sorted.size() / 2;
  r.median_ms = sorted.size() % 2 == 1 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
  for (std::size_t k = 0; k < kTableThresholdsMs.size(); ++k) r.rates[k] = align_rate(errors_ms, kTableThresholdsMs[k]);
  for (int k = 0; k < kCurvePoints; ++k) r.curve.push_back(align_rate(errors_ms, k * kCurveStepMs));
  return r;
}

CorpusSummary aggregate(std::vector<AlignmentReport> pieces) {
  if (pieces.empty()) throw InputError("no piece reports to aggregate");
  CorpusSummary s;
  s.pieces = std::move(pieces);
  const double count = static_cast<double>(s.pieces.size());
  AlignmentReport& mean = s.piecewise;
  mean.piece = "piecewise mean";
  mean.curve.assign(kCurvePoints, 0.0);
  std::vector<double> all;
  for (const auto& p : s.pieces) {
    if (p.curve.size() != static_cast<std::size_t>(kCurvePoints)) throw InputError("piece report lacks a full curve");
    mean.notes += p.notes;
    mean.mean_ms += p.mean_ms / count;
    mean.median_ms += p.median_ms / count;
    mean.std_ms += p.std_ms / count;
    for (std::size_t k = 0; k < mean.rates.size(); ++k) mean.rates[k] += p.rates[k] / count;
    for (int k = 0; k < kCurvePoints; ++k) mean.curve[k] += p.curve[k] / count;
    all.insert(all.end(), p.errors_ms.begin(), p.errors_ms.end());
  }
  if (!all.empty()) {
    s.pooled = piecewise_stats(all, "pooled");
    s.pooled.errors_ms.clear();
  }
  return s;
}

// ---------------------------------------------------------------------------
// Rendering

namespace {

constexpr const char* kSchemaTag = "pianoalign-alignment-report";

nlohmann::json report_json(const AlignmentReport& r, bool with_errors) {
  nlohmann::json j = {{"piece", r.piece},       {"notes", r.notes},   {"mean_ms", r.mean_ms},
                      {"median_ms", r.median_ms}, {"std_ms", r.std_ms}, {"rates", r.rates},
                      {"curve", r.curve}};
  if (with_errors) j["errors_ms"] = r.errors_ms;
  return j;
}

AlignmentReport report_from(const nlohmann::json& j) {
  AlignmentReport r;
  r.piece = j.at("piece").get<std::string>();
  r.notes = j.at("notes").get<std::size_t>();
  r.mean_ms = j.at("mean_ms").get<double>();
  r.median_ms = j.at("median_ms").get<double>();
  r.std_ms = j.at("std_ms").get<double>();
  r.rates = j.at("rates").get<std::array<double, 4>>();
  r.curve = j.at("curve").get<std::vector<double>>();
  if (j.contains("errors_ms")) r.errors_ms = j.at("errors_ms").get<std::vector<double>>();
  return r;
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

std::string render_report(const CorpusSummary& summary, ReportFormat format) {
  std::ostringstream out;
  switch (format) {
    case ReportFormat::kJson: {
      nlohmann::json j;
      j["schema"] = kSchemaTag;
      j["version"] = 1;
      j["std"] = "population";
      j["rate_comparison"] = "<=";
      j["table_thresholds_ms"] = kTableThresholdsMs;
      std::vector<double> curve_ms;
      for (int k = 0; k < kCurvePoints; ++k) curve_ms.push_back(k * kCurveStepMs);
      j["curve_thresholds_ms"] = curve_ms;
      j["default_aggregation"] = "piecewise";
      j["summary"] = {{"piecewise", report_json(summary.piecewise, false)},
                      {"pooled", report_json(summary.pooled, false)}};
      j["pieces"] = nlohmann::json::array();
      for (const auto& p : summary.pieces) j["pieces"].push_back(report_json(p, true));
      out << j.dump(2) << '\n';
      break;
    }
    case ReportFormat::kCsv: {
      out << "piece,notes,mean_ms,median_ms,std_ms,rate_10ms,rate_30ms,rate_50ms,rate_100ms\n";
      for (const auto& p : summary.pieces) {
        out << p.piece << ',' << p.notes << ',' << fixed(p.mean_ms, 4) << ',' << fixed(p.median_ms, 4) << ','
            << fixed(p.std_ms, 4);
        for (double r : p.rates) out << ',' << fixed(r, 4);
        out << '\n';
      }
      break;
    }
    case ReportFormat::kMarkdown: {
      out << "| Piece | Mean | Median | Std | <= 10 ms | <= 30 ms | <= 50 ms | <= 100 ms |\n";
      out << "|---|---|---|---|---|---|---|---|\n";
      auto row = [&](const AlignmentReport& r, const std::string& name) {
        out << "| " << name << " | " << fixed(r.mean_ms, 2) << " | " << fixed(r.median_ms, 2) << " | "
            << fixed(r.std_ms, 2);
        for (double v : r.rates) out << " | " << fixed(v, 2);
        out << " |\n";
      };
      for (const auto& p : summary.pieces) row(p, p.piece);
      row(summary.piecewise, "**piecewise mean**");
      row(summary.pooled, "**pooled**");
      break;
    }
  }
  return out.str();
}

CorpusSummary summary_from_json(const std::string& text) {
  std::string error;
  if (!validate_report_json(text, &error)) throw InputError("invalid report: " + error);
  const auto j = nlohmann::json::parse(text);
  CorpusSummary s;
  for (const auto& p : j.at("pieces")) s.pieces.push_back(report_from(p));
  s.piecewise = report_from(j.at("summary").at("piecewise"));
  s.pooled = report_from(j.at("summary").at("pooled"));
  return s;
}

bool validate_report_json(const std::string& text, std::string* error) {
  auto fail = [&](const std::string& msg) {
    if (error != nullptr) *error = msg;
    return false;
  };
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    return fail(std::string("not JSON: ") + e.what());
  }
  if (!j.is_object() || j.value("schema", "") != kSchemaTag) return fail("missing schema tag");
  if (!j.contains("version") || j["version"] != 1) return fail("unsupported version");
  if (j.value("std", "") != "population" || j.value("rate_comparison", "") != "<=")
    return fail("missing statistic conventions");
  auto check_report = [&](const nlohmann::json& r, const std::string& where) -> bool {
    for (const char* key : {"mean_ms", "median_ms", "std_ms"})
      if (!r.contains(key) || !r[key].is_number() || r[key].get<double>() < 0.0)
        return fail(where + "." + key + " must be a non-negative number");
    if (!r.contains("piece") || !r["piece"].is_string()) return fail(where + ".piece must be a string");
    if (!r.contains("notes") || !r["notes"].is_number_unsigned()) return fail(where + ".notes must be a count");
    if (!r.contains("rates") || !r["rates"].is_array() || r["rates"].size() != kTableThresholdsMs.size())
      return fail(where + ".rates must hold 4 values");
    if (!r.contains("curve") || !r["curve"].is_array() || r["curve"].size() != static_cast<std::size_t>(kCurvePoints))
      return fail(where + ".curve must hold 21 values");
    double prev = -1.0;
    for (const auto& v : r["curve"]) {
      if (!v.is_number() || v.get<double>() < prev - 1e-9 || v.get<double>() > 100.0 + 1e-9)
        return fail(where + ".curve must be non-decreasing percentages");
      prev = v.get<double>();
    }
    if (r.contains("errors_ms") && !r["errors_ms"].is_array()) return fail(where + ".errors_ms must be an array");
    return true;
  };
  if (!j.contains("summary") || !j["summary"].is_object()) return fail("missing summary");
  for (const char* key : {"piecewise", "pooled"}) {
    if (!j["summary"].contains(key)) return fail(std::string("missing summary.") + key);
    if (!check_report(j["summary"][key], std::string("summary.") + key)) return false;
  }
  if (!j.contains("pieces") || !j["pieces"].is_array() || j["pieces"].empty()) return fail("pieces must be a non-empty array");
  for (std::size_t k = 0; k < j["pieces"].size(); ++k)
    if (!check_report(j["pieces"][k], "pieces[" + std::to_string(k) + "]")) return false;
  return true;
}

}  // namespace pianoalign
