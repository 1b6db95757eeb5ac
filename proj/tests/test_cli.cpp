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


#include <cmath>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "pianoalign/cli.hpp"
#include "pianoalign/evaluator.hpp"
#include "pianoalign/features.hpp"
#include "pianoalign/frontend.hpp"
#include "pianoalign/midi.hpp"
#include "pianoalign/transcriber.hpp"
#include "support.hpp"

using namespace pianoalign;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::vector<double> csv_column(const fs::path& path, const std::string& name) {
  std::istringstream in(read_text_file(path));
  std::string line, cell;
  std::getline(in, line);
  std::istringstream header(line);
  int index = 0, wanted = -1;
  while (std::getline(header, cell, ',')) {
    if (cell == name) wanted = index;
    ++index;
  }
  REQUIRE(wanted >= 0);
  std::vector<double> values;
  while (std::getline(in, line)) {
    std::istringstream row(line);
    for (int k = 0; k <= wanted; ++k) std::getline(row, cell, ',');
    values.push_back(std::stod(cell));
  }
  return values;
}

// A short piece and a distorted performance of it, written as MIDI.
struct PieceFiles {
  fs::path dir, score, performance;
};

PieceFiles make_piece(const std::string& name, std::uint64_t seed, double seconds = 20.0) {
  PieceFiles p;
  p.dir = testing::scratch_dir(name);
  p.score = p.dir / "score.mid";
  write_midi_file(p.score, testing::synthetic_piece(seed, seconds));
  const Run d = run({"distort", "--score", p.score.string(), "--seed", std::to_string(seed), "--out",
                     (p.dir / "distorted").string()});
  REQUIRE(d.code == kExitOk);
  p.performance = p.dir / "distorted" / "distorted.mid";
  return p;
}

// Tiny training set: two synthesized pieces plus a manifest.
fs::path make_dataset(const fs::path& dir) {
  json manifest = {{"train", json::array()}, {"validation", json::array()}};
  for (int k = 0; k < 2; ++k) {
    const NoteList notes = testing::synthetic_piece(100 + k, 3.0, 3.0);
    const std::string stem = "piece" + std::to_string(k);
    write_midi_file(dir / (stem + ".mid"), notes);
    save_audio(dir / (stem + ".wav"), synthesize_notes(notes));
    manifest[k == 0 ? "train" : "validation"].push_back({{"audio", stem + ".wav"}, {"midi", stem + ".mid"}});
  }
  write_text_file(dir / "dataset.json", manifest.dump());
  return dir / "dataset.json";
}

}  // namespace

TEST_CASE("usage errors exit with the input code") {
  CHECK(run({}).code == kExitInput);
  CHECK(run({"nonsense"}).code == kExitInput);
  CHECK(run({"align", "--score"}).code == kExitInput);
  CHECK(run({"--help"}).code == kExitOk);
  const Run bad_mode = run({"align", "--score", "x.mid", "--out", "y", "--mode", "onset12", "--oracle"});
  CHECK(bad_mode.code == kExitInput);
}

TEST_CASE("missing inputs name the failing stage and file") {
  const PieceFiles p = make_piece("cli_missing", 1, 5.0);
  const Run r = run({"align", "--score", p.score.string(), "--audio", (p.dir / "none.wav").string(), "--frame-model",
                     (p.dir / "absent.model").string(), "--onset-model", (p.dir / "absent2.model").string(), "--out",
                     (p.dir / "out").string()});
  CHECK(r.code == kExitInput);
  CHECK(r.err.find("[load-model]") != std::string::npos);
  CHECK(r.err.find("absent.model") != std::string::npos);

  const Run s = run({"align", "--score", (p.dir / "nope.mid").string(), "--oracle", "--performance",
                     p.performance.string(), "--out", (p.dir / "out").string()});
  CHECK(s.code == kExitInput);
  CHECK(s.err.find("[read-score]") != std::string::npos);
}

TEST_CASE("oracle alignment of an undistorted score is near exact") {
  const PieceFiles p = make_piece("cli_identity", 2);
  const fs::path out = p.dir / "aligned";
  const Run r = run({"align", "--score", p.score.string(), "--performance", p.score.string(), "--oracle", "--out",
                     out.string()});
  REQUIRE(r.code == kExitOk);
  const auto est = csv_column(out / "onsets.csv", "estimated_onset");
  const auto ref = csv_column(out / "onsets.csv", "score_onset");
  REQUIRE(est.size() == ref.size());
  for (std::size_t k = 0; k < est.size(); ++k) CHECK(std::abs(est[k] - ref[k]) <= 0.010 + 1e-9);
  for (const char* name : {"aligned.mid", "path.csv", "timemap.csv", "manifest.json"}) CHECK(fs::exists(out / name));
  CHECK_FALSE(fs::exists(out / "score_features.pafm"));
}

TEST_CASE("oracle alignment recovers a distorted performance") {
  const PieceFiles p = make_piece("cli_distorted", 3);
  const fs::path out = p.dir / "aligned";
  REQUIRE(run({"align", "--score", p.score.string(), "--performance", p.performance.string(), "--oracle", "--out",
               out.string(), "--emit-intermediates"})
              .code == kExitOk);
  const Run e = run({"evaluate", "--estimates", (out / "onsets.csv").string(), "--truth", p.performance.string(),
                     "--out", (p.dir / "report").string()});
  REQUIRE(e.code == kExitOk);
  const CorpusSummary s = summary_from_json(read_text_file(p.dir / "report" / "report.json"));
  CHECK(s.piecewise.mean_ms < 20.0);
  CHECK(s.piecewise.rates[3] > 95.0);

  const Matrix ref = read_matrix_file(out / "score_features.pafm");
  const Matrix perf = read_matrix_file(out / "performance_features.pafm");
  CHECK(ref.cols() == 100);
  CHECK(perf.cols() == 100);
  const json manifest = json::parse(read_text_file(out / "manifest.json"));
  CHECK(manifest["score_frames"] == ref.rows());
  CHECK(manifest["performance_frames"] == perf.rows());
}

TEST_CASE("alignment output is byte-identical across runs") {
  const PieceFiles p = make_piece("cli_rerun", 4, 10.0);
  auto align = [&](const std::string& sub) {
    const fs::path out = p.dir / sub;
    REQUIRE(run({"align", "--score", p.score.string(), "--performance", p.performance.string(), "--oracle",
                 "--jitter", "0.2", "--seed", "9", "--out", out.string(), "--emit-intermediates"})
                .code == kExitOk);
    return out;
  };
  const fs::path a = align("a"), b = align("b");
  for (const char* name : {"aligned.mid", "path.csv", "timemap.csv", "onsets.csv", "manifest.json",
                           "score_features.pafm", "performance_features.pafm"})
    CHECK(read_binary_file(a / name) == read_binary_file(b / name));
  const json manifest = json::parse(read_text_file(a / "manifest.json"));
  CHECK(manifest["outputs"]["onsets.csv"] == hex64(fnv1a64(read_text_file(a / "onsets.csv"))));
  CHECK(manifest["inputs"]["score"]["fnv1a64"] == hex64(fnv1a64(read_text_file(p.score))));
}

TEST_CASE("distort is seeded and bounded") {
  const fs::path dir = testing::scratch_dir("cli_distort");
  const fs::path score = dir / "score.mid";
  write_midi_file(score, testing::synthetic_piece(5, 10.0));
  auto distort = [&](const std::string& sub, const std::vector<std::string>& extra) {
    std::vector<std::string> args{"distort", "--score", score.string(), "--out", (dir / sub).string()};
    args.insert(args.end(), extra.begin(), extra.end());
    REQUIRE(run(args).code == kExitOk);
    return dir / sub;
  };
  const fs::path a = distort("a", {"--seed", "7"}), b = distort("b", {"--seed", "7"}), c = distort("c", {"--seed", "8"});
  CHECK(read_binary_file(a / "distorted.mid") == read_binary_file(b / "distorted.mid"));
  CHECK(read_binary_file(a / "distortion.csv") == read_binary_file(b / "distortion.csv"));
  CHECK(read_binary_file(a / "distortion.csv") != read_binary_file(c / "distortion.csv"));
  for (double f : csv_column(a / "distortion.csv", "factor")) {
    CHECK(f >= 0.7);
    CHECK(f <= 1.3);
  }
  const fs::path id = distort("identity", {"--min-factor", "1", "--max-factor", "1"});
  CHECK(read_midi_file(id / "distorted.mid").notes == read_midi_file(score).notes);
  CHECK(run({"distort", "--score", score.string(), "--out", (dir / "x").string(), "--min-factor", "0"}).code ==
        kExitInput);
}

TEST_CASE("evaluate reports, formats and batches") {
  const fs::path dir = testing::scratch_dir("cli_evaluate");
  const NoteList truth = testing::synthetic_piece(6, 10.0);
  write_midi_file(dir / "truth.mid", truth);

  SUBCASE("perfect alignment has zero error") {
    const Run r = run({"evaluate", "--aligned", (dir / "truth.mid").string(), "--truth", (dir / "truth.mid").string(),
                       "--out", (dir / "report").string(), "--piece", "self"});
    REQUIRE(r.code == kExitOk);
    const std::string text = read_text_file(dir / "report" / "report.json");
    CHECK(validate_report_json(text));
    const CorpusSummary s = summary_from_json(text);
    CHECK(s.pieces.at(0).piece == "self");
    CHECK(s.piecewise.mean_ms == 0.0);
    CHECK(s.piecewise.rates[0] == 100.0);
    CHECK(r.out.find("| Piece |") != std::string::npos);
    CHECK(fs::exists(dir / "report" / "report.csv"));
    CHECK(fs::exists(dir / "report" / "report.md"));
  }
  SUBCASE("format selection") {
    REQUIRE(run({"evaluate", "--aligned", (dir / "truth.mid").string(), "--truth", (dir / "truth.mid").string(),
                 "--out", (dir / "only").string(), "--format", "csv"})
                .code == kExitOk);
    CHECK(fs::exists(dir / "only" / "report.csv"));
    CHECK_FALSE(fs::exists(dir / "only" / "report.json"));
    CHECK(run({"evaluate", "--aligned", (dir / "truth.mid").string(), "--truth", (dir / "truth.mid").string(),
               "--format", "xml"})
              .code == kExitInput);
  }
  SUBCASE("batch directory") {
    const fs::path batch = dir / "batch";
    for (int k = 0; k < 3; ++k) {
      const fs::path piece = batch / ("p" + std::to_string(k));
      fs::create_directories(piece);
      write_midi_file(piece / "truth.mid", truth);
      std::vector<NoteEvent> shifted(truth.begin(), truth.end());
      for (auto& n : shifted) {
        n.onset += 0.001 * (k + 1);
        n.offset += 0.001 * (k + 1);
      }
      write_midi_file(piece / "aligned.mid", NoteList(std::move(shifted)));
    }
    auto evaluate = [&](const std::string& workers, const std::string& sub) {
      REQUIRE(run({"evaluate", "--batch-dir", batch.string(), "--workers", workers, "--out", (dir / sub).string()})
                  .code == kExitOk);
      return read_text_file(dir / sub / "report.json");
    };
    const std::string serial = evaluate("1", "serial");
    CHECK(evaluate("4", "parallel") == serial);
    const CorpusSummary s = summary_from_json(serial);
    REQUIRE(s.pieces.size() == 3);
    CHECK(s.pieces[0].piece == "p0");
    CHECK(s.pieces[2].mean_ms == doctest::Approx(3.0).epsilon(0.2));
  }
  SUBCASE("count mismatch is an input error") {
    NoteList fewer(std::vector<NoteEvent>(truth.begin(), truth.begin() + 3));
    write_midi_file(dir / "fewer.mid", fewer);
    const Run r = run({"evaluate", "--aligned", (dir / "fewer.mid").string(), "--truth", (dir / "truth.mid").string()});
    CHECK(r.code == kExitInput);
    CHECK(r.err.find("[evaluate]") != std::string::npos);
  }
}

TEST_CASE("train, resume and transcribe a toy model") {
  const fs::path dir = testing::scratch_dir("cli_train");
  const fs::path manifest = make_dataset(dir);
  const fs::path model = dir / "onset.model";
  const Run t = run({"train", "--manifest", manifest.string(), "--mode", "onset12", "--out", model.string(),
                     "--layers", "4,3", "--max-epochs", "4", "--batch-size", "4", "--seed", "3"});
  REQUIRE(t.code == kExitOk);
  const fs::path log = dir / "onset.log.csv";
  REQUIRE(fs::exists(log));
  const auto best = csv_column(log, "best_validation");
  const auto val = csv_column(log, "validation_loss");
  REQUIRE(best.size() == 4);
  for (std::size_t k = 0; k < best.size(); ++k) {
    CHECK(best[k] <= val[k] + 1e-12);
    if (k > 0) CHECK(best[k] <= best[k - 1]);
  }
  const ModelWeights trained = load_model(model);
  CHECK(trained.mode == Mode::kOnset12);
  CHECK(trained.network.layers.size() == 2);

  SUBCASE("resume keeps standardization") {
    const fs::path resumed = dir / "resumed.model";
    REQUIRE(run({"train", "--manifest", manifest.string(), "--mode", "onset12", "--out", resumed.string(), "--resume",
                 model.string(), "--max-epochs", "2", "--batch-size", "4"})
                .code == kExitOk);
    CHECK(load_model(resumed).standardization == trained.standardization);
    const Run wrong = run({"train", "--manifest", manifest.string(), "--mode", "note88", "--out",
                           (dir / "w.model").string(), "--resume", model.string(), "--max-epochs", "1"});
    CHECK(wrong.code == kExitInput);
  }
  SUBCASE("transcribe writes activations and thresholded copies") {
    const fs::path act = dir / "act.pafm", lo = dir / "lo.pafm", hi = dir / "hi.pafm";
    const Run a = run({"transcribe", "--audio", (dir / "piece0.wav").string(), "--model", model.string(), "--out",
                       act.string(), "--binarized", lo.string(), "--threshold", "0.3", "--reference",
                       (dir / "piece0.mid").string()});
    REQUIRE(a.code == kExitOk);
    const json summary = json::parse(a.out);
    CHECK(summary.contains("f_score"));
    const Matrix values = read_matrix_file(act);
    CHECK(values.cols() == 12);
    CHECK(values.rows() == summary["frames"].get<int>());
    CHECK(values.rows() == stft_frame_count(load_audio(dir / "piece0.wav").samples.size()));
    REQUIRE(run({"transcribe", "--audio", (dir / "piece0.wav").string(), "--model", model.string(), "--out",
                 (dir / "act2.pafm").string(), "--binarized", hi.string(), "--threshold", "0.7"})
                .code == kExitOk);
    CHECK(read_binary_file(act) == read_binary_file(dir / "act2.pafm"));
    const Matrix a_lo = read_matrix_file(lo), a_hi = read_matrix_file(hi);
    for (Eigen::Index k = 0; k < values.size(); ++k) {
      CHECK(a_lo.data()[k] == (values.data()[k] >= 0.3 ? 1.0 : 0.0));
      CHECK(a_hi.data()[k] == (values.data()[k] >= 0.7 ? 1.0 : 0.0));
    }
  }
  SUBCASE("features from audio through the models") {
    const fs::path out = dir / "perf.csv";
    // onset12 cannot serve as the frame model.
    CHECK(run({"features", "--audio", (dir / "piece0.wav").string(), "--frame-model", model.string(), "--onset-model",
               model.string(), "--out", out.string()})
              .code == kExitInput);
  }
}

TEST_CASE("invalid training manifests are input errors") {
  const fs::path dir = testing::scratch_dir("cli_bad_manifest");
  write_text_file(dir / "a.json", "{not json");
  write_text_file(dir / "b.json", R"({"train": []})");
  write_text_file(dir / "c.json", R"({"train": [{"audio": 3}]})");
  for (const char* name : {"a.json", "b.json", "c.json"}) {
    const Run r = run({"train", "--manifest", (dir / name).string(), "--out", (dir / "m.model").string()});
    CHECK(r.code == kExitInput);
    CHECK(r.err.find("[read-manifest]") != std::string::npos);
  }
  CHECK(run({"train", "--manifest", (dir / "a.json").string(), "--out", (dir / "m.model").string(), "--layers", "4,x"})
            .code == kExitInput);
}

TEST_CASE("configuration files with command-line overrides") {
  const fs::path dir = testing::scratch_dir("cli_config");
  const fs::path score = dir / "score.mid";
  write_midi_file(score, testing::synthetic_piece(8, 10.0));
  write_text_file(dir / "run.toml", "[distort]\nseed = 11\nmin-factor = 0.9\nmax-factor = 1.1\n");
  REQUIRE(run({"--config", (dir / "run.toml").string(), "distort", "--score", score.string(), "--out",
               (dir / "from_file").string()})
              .code == kExitOk);
  REQUIRE(run({"distort", "--score", score.string(), "--seed", "11", "--min-factor", "0.9", "--max-factor", "1.1",
               "--out", (dir / "from_flags").string()})
              .code == kExitOk);
  CHECK(read_binary_file(dir / "from_file" / "distortion.csv") ==
        read_binary_file(dir / "from_flags" / "distortion.csv"));

  REQUIRE(run({"--config", (dir / "run.toml").string(), "distort", "--score", score.string(), "--out",
               (dir / "override").string(), "--seed", "12"})
              .code == kExitOk);
  CHECK(read_binary_file(dir / "override" / "distortion.csv") !=
        read_binary_file(dir / "from_file" / "distortion.csv"));
  for (double f : csv_column(dir / "override" / "distortion.csv", "factor")) {
    CHECK(f >= 0.9);
    CHECK(f <= 1.1);
  }
  CHECK(run({"--config", (dir / "missing.toml").string(), "distort", "--score", score.string(), "--out", "x"}).code ==
        kExitInput);
}
