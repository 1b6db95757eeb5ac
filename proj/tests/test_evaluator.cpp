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


#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "pianoalign/evaluator.hpp"
#include "support.hpp"

using namespace pianoalign;
using pianoalign::testing::uniform;

TEST_CASE("onset errors in milliseconds") {
  const std::vector<double> est{1.005, 2.0}, truth{1.0, 2.0};
  const auto e = onset_errors(est, truth);
  CHECK(e[0] == doctest::Approx(5.0));
  CHECK(e[1] == 0.0);
  CHECK(onset_errors(truth, truth) == std::vector<double>{0.0, 0.0});
  const std::vector<double> one{1.0};
  CHECK_THROWS_AS(onset_errors(one, truth), InputError);
}

TEST_CASE("errors ignore a common shift") {
  std::mt19937_64 rng(1);
  std::vector<double> est(50), truth(50), est_s(50), truth_s(50);
  for (int k = 0; k < 50; ++k) {
    truth[k] = uniform(rng, 0.0, 60.0);
    est[k] = truth[k] + uniform(rng, -0.1, 0.1);
    est_s[k] = est[k] + 3.25;
    truth_s[k] = truth[k] + 3.25;
  }
  const auto a = onset_errors(est, truth), b = onset_errors(est_s, truth_s);
  for (int k = 0; k < 50; ++k) CHECK(a[k] == doctest::Approx(b[k]).epsilon(1e-9));
}

TEST_CASE("onset estimates pair with notes by position") {
  const NoteList truth({{60, 1.0, 2.0, 64}, {64, 1.5, 2.0, 64}});
  std::vector<OnsetEstimate> est{{truth[0], 1.01, false}, {truth[1], 1.49, false}};
  const auto e = onset_errors(est, truth);
  CHECK(e[0] == doctest::Approx(10.0));
  CHECK(e[1] == doctest::Approx(10.0));
}

TEST_CASE("per-pitch ordinal pairing") {
  const NoteList truth({{60, 1.0, 2.0, 64}, {60, 3.0, 4.0, 64}, {67, 1.0, 2.0, 64}});
  // The second 60 and the 67 collapsed onto one time: order by pitch changes.
  const NoteList aligned({{60, 1.01, 2.0, 64}, {67, 2.0, 3.0, 64}, {60, 2.0, 4.0, 64}});
  const auto e = paired_onset_errors(truth, aligned);
  REQUIRE(e.size() == 3);
  CHECK(e[0] == doctest::Approx(10.0));
  CHECK(e[1] == doctest::Approx(1000.0));  // 60 at 2.0 vs 3.0
  CHECK(e[2] == doctest::Approx(1000.0));  // 67 at 2.0 vs 1.0
  CHECK_THROWS_AS(paired_onset_errors(truth, NoteList({{61, 1.0, 2.0, 64}, {60, 1.0, 2.0, 64}, {67, 1.0, 2.0, 64}})),
                  InputError);
}

TEST_CASE("statistics of 0, 10 and 20 ms") {
  const std::vector<double> e{0.0, 10.0, 20.0};
  const AlignmentReport r = piecewise_stats(e, "x");
  CHECK(r.mean_ms == 10.0);
  CHECK(r.median_ms == 10.0);
  CHECK(r.std_ms == doctest::Approx(std::sqrt(200.0 / 3.0)));
  CHECK(r.rates[0] == doctest::Approx(200.0 / 3.0));
  CHECK(r.rates[1] == 100.0);
  CHECK(r.notes == 3);
  CHECK(r.curve.size() == 21);
  CHECK(r.curve[0] == doctest::Approx(100.0 / 3.0));
  CHECK(r.curve[20] == 100.0);
}

TEST_CASE("perfect alignment rates 100 everywhere") {
  const AlignmentReport r = piecewise_stats(std::vector<double>(7, 0.0));
  for (double v : r.rates) CHECK(v == 100.0);
  for (double v : r.curve) CHECK(v == 100.0);
  CHECK(r.std_ms == 0.0);
}

TEST_CASE("empty error list is rejected") {
  CHECK_THROWS_AS(piecewise_stats(std::vector<double>{}), InputError);
  CHECK_THROWS_AS(align_rate(std::vector<double>{}, 10.0), InputError);
  CHECK_THROWS_AS(aggregate({}), InputError);
}

TEST_CASE("statistics match a brute-force recomputation") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> e(static_cast<std::size_t>(pianoalign::testing::uniform_int(rng, 1, 200)));
    for (double& v : e) v = std::abs(uniform(rng, -1.0, 1.0)) * uniform(rng, 0.0, 300.0);
    const AlignmentReport r = piecewise_stats(e);
    double sum = 0.0;
    for (double v : e) sum += v;
    const double mean = sum / e.size();
    double sq = 0.0;
    for (double v : e) sq += (v - mean) * (v - mean);
    // Median by counting: a value with at most half below and half above.
    std::vector<double> s = e;
    std::sort(s.begin(), s.end());
    const double median = s.size() % 2 ? s[s.size() / 2] : (s[s.size() / 2 - 1] + s[s.size() / 2]) / 2.0;
    CHECK(r.mean_ms == doctest::Approx(mean).epsilon(1e-12));
    CHECK(r.std_ms == doctest::Approx(std::sqrt(sq / e.size())).epsilon(1e-12));
    CHECK(r.median_ms == doctest::Approx(median).epsilon(1e-12));
    for (std::size_t k = 0; k < kTableThresholdsMs.size(); ++k) {
      const auto hits = std::count_if(e.begin(), e.end(), [&](double v) { return v <= kTableThresholdsMs[k]; });
      CHECK(r.rates[k] == doctest::Approx(100.0 * hits / e.size()).epsilon(1e-12));
    }
    for (std::size_t k = 1; k < r.curve.size(); ++k) CHECK(r.curve[k] >= r.curve[k - 1]);
    CHECK(align_rate(e, std::numeric_limits<double>::infinity()) == 100.0);
  }
}

TEST_CASE("aggregation averages pieces and pools notes") {
  const AlignmentReport a = piecewise_stats(std::vector<double>{0.0, 0.0, 0.0, 0.0, 50.0}, "a");  // 80% at 10 ms
  const AlignmentReport b = piecewise_stats(std::vector<double>{5.0}, "b");                     // 100%
  const CorpusSummary s = aggregate({a, b});
  CHECK(s.piecewise.rates[0] == doctest::Approx(90.0));
  CHECK(s.piecewise.mean_ms == doctest::Approx((10.0 + 5.0) / 2.0));
  CHECK(s.pooled.mean_ms == doctest::Approx(55.0 / 6.0));
  CHECK(s.pooled.notes == 6);
  CHECK(s.piecewise.notes == 6);
  for (std::size_t k = 1; k < s.piecewise.curve.size(); ++k) CHECK(s.piecewise.curve[k] >= s.piecewise.curve[k - 1]);

  const CorpusSummary single = aggregate({a});
  CHECK(single.piecewise.mean_ms == a.mean_ms);
  CHECK(single.piecewise.median_ms == a.median_ms);
  CHECK(single.piecewise.std_ms == a.std_ms);
  CHECK(single.piecewise.rates == a.rates);
  CHECK(single.piecewise.curve == a.curve);
}

TEST_CASE("rendered reports") {
  const CorpusSummary s = aggregate({piecewise_stats(std::vector<double>{1.0, 12.0}, "first"),
                                     piecewise_stats(std::vector<double>{40.0, 3.0, 90.0}, "second")});
  SUBCASE("JSON round trips and validates") {
    const std::string json = render_report(s, ReportFormat::kJson);
    std::string error;
    CHECK(validate_report_json(json, &error));
    CHECK(error.empty());
    const CorpusSummary back = summary_from_json(json);
    CHECK(back.pieces.size() == 2);
    CHECK(back.pieces[1].errors_ms == s.pieces[1].errors_ms);
    CHECK(back.piecewise.mean_ms == s.piecewise.mean_ms);
    CHECK(render_report(back, ReportFormat::kJson) == json);
  }
  SUBCASE("JSON validation catches structural errors") {
    auto j = nlohmann::json::parse(render_report(s, ReportFormat::kJson));
    j["pieces"][0]["curve"].erase(0);
    CHECK_FALSE(validate_report_json(j.dump()));
    j = nlohmann::json::parse(render_report(s, ReportFormat::kJson));
    j["summary"]["pooled"]["mean_ms"] = -1.0;
    CHECK_FALSE(validate_report_json(j.dump()));
    CHECK_FALSE(validate_report_json("not json"));
    CHECK_THROWS_AS(summary_from_json("{}"), InputError);
  }
  SUBCASE("CSV has one row per piece plus a header") {
    const std::string csv = render_report(s, ReportFormat::kCsv);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
    CHECK(csv.rfind("piece,notes,mean_ms,median_ms,std_ms,rate_10ms,rate_30ms,rate_50ms,rate_100ms\n", 0) == 0);
  }
  SUBCASE("markdown columns follow the table order") {
    const std::string md = render_report(s, ReportFormat::kMarkdown);
    const std::string header = md.substr(0, md.find('\n'));
    const std::vector<std::string> order{"Mean", "Median", "Std", "<= 10 ms", "<= 30 ms", "<= 50 ms", "<= 100 ms"};
    std::size_t at = 0;
    for (const auto& col : order) {
      const auto next = header.find(col, at);
      REQUIRE(next != std::string::npos);
      at = next + col.size();
    }
  }
  SUBCASE("rendering is deterministic") {
    for (auto f : {ReportFormat::kJson, ReportFormat::kCsv, ReportFormat::kMarkdown})
      CHECK(render_report(s, f) == render_report(s, f));
  }
}
