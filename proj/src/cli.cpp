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


#include "pianoalign/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "pianoalign/aligner.hpp"
#include "pianoalign/evaluator.hpp"
#include "pianoalign/features.hpp"
#include "pianoalign/frontend.hpp"
#include "pianoalign/midi.hpp"
#include "pianoalign/transcriber.hpp"

namespace pianoalign {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const fs::path& file, const std::string& what, int exit_code)
      : std::runtime_error("[" + stage + "] " + (file.empty() ? std::string() : file.string() + ": ") + what),
        exit_code_(exit_code) {}
  int exit_code() const { return exit_code_; }

 private:
  int exit_code_;
};

/// Runs `f`, tagging any failure with the pipeline stage and file.
template <class F>
decltype(auto) at_stage(const std::string& stage, const fs::path& file, F&& f) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const InputError& e) {
    throw StageError(stage, file, e.what(), kExitInput);
  } catch (const std::exception& e) {
    throw StageError(stage, file, e.what(), kExitInternal);
  }
}

std::string num(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string file_hash(const fs::path& path) {
  const auto bytes = read_binary_file(path);
  return hex64(fnv1a64(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size())));
}

std::string text_hash(std::string_view text) { return hex64(fnv1a64(text)); }

NoteList read_notes(const std::string& stage, const fs::path& path) {
  return at_stage(stage, path, [&] { return read_midi_file(path).notes; });
}

ModelWeights read_model(const fs::path& path, std::optional<Mode> expected) {
  ModelWeights model = at_stage("load-model", path, [&] { return load_model(path); });
  if (expected && model.mode != *expected)
    throw StageError("load-model", path,
                     "model mode " + std::string(mode_name(model.mode)) + " does not match requested " +
                         std::string(mode_name(*expected)),
                     kExitInput);
  return model;
}

int default_workers() { return std::max(1, static_cast<int>(std::thread::hardware_concurrency())); }

/// Runs job(k) for k in [0, count) on at most `workers` threads.
template <class Job>
void parallel_for(std::size_t count, int workers, Job job) {
  std::vector<std::exception_ptr> failures(count);
  std::atomic<std::size_t> next{0};
  {
    std::vector<std::jthread> pool;
    const auto n = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, workers)), count);
    for (std::size_t w = 0; w < n; ++w)
      pool.emplace_back([&] {
        for (std::size_t k = next++; k < count; k = next++) {
          try {
            job(k);
          } catch (...) {
            failures[k] = std::current_exception();
          }
        }
      });
  }
  for (const auto& f : failures)
    if (f) std::rethrow_exception(f);
}

// ---------------------------------------------------------------------------
// features

struct FeaturesArgs {
  std::string audio, midi, frame_model, onset_model, out, mode = "note88";
  bool no_onset_block = false;
  bool csv = false;
  int threads = 1;
};

CombinedFeature compute_performance_features(const fs::path& audio_path, const fs::path& frame_path,
                                             const fs::path& onset_path, Mode mode, const FeatureOptions& options,
                                             std::map<std::string, std::string>* hashes) {
  const ModelWeights frame_model = read_model(frame_path, mode);
  const ModelWeights onset_model = read_model(onset_path, Mode::kOnset12);
  const AudioBuffer audio = at_stage("read-audio", audio_path, [&] { return load_audio(audio_path); });
  if (hashes != nullptr) {
    (*hashes)["audio"] = file_hash(audio_path);
    (*hashes)["frame_model"] = file_hash(frame_path);
    (*hashes)["onset_model"] = file_hash(onset_path);
  }
  return at_stage("transcribe", audio_path,
                  [&] { return performance_features(audio, frame_model, onset_model, options); });
}

int cmd_features(const FeaturesArgs& a, std::ostream& out) {
  const Mode mode = at_stage("config", {}, [&] { return parse_mode(a.mode); });
  FeatureOptions options;
  options.onset_block = !a.no_onset_block;
  options.threads = a.threads;
  CombinedFeature features;
  if (!a.midi.empty()) {
    const NoteList notes = read_notes("read-midi", a.midi);
    features = at_stage("features", a.midi, [&] { return score_features(notes, mode, options); });
  } else if (!a.audio.empty()) {
    if (a.frame_model.empty() || a.onset_model.empty())
      throw StageError("config", {}, "--audio needs --frame-model and --onset-model", kExitInput);
    features = compute_performance_features(a.audio, a.frame_model, a.onset_model, mode, options, nullptr);
  } else {
    throw StageError("config", {}, "give --midi or --audio", kExitInput);
  }
  at_stage("write", a.out, [&] {
    if (a.csv)
      write_text_file(a.out, matrix_to_csv(features.values));
    else
      write_matrix_file(a.out, features.values);
  });
  out << features.values.rows() << " frames x " << features.values.cols() << " columns -> " << a.out << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// align

struct AlignArgs {
  std::string score, audio, performance, frame_model, onset_model, out, mode = "note88";
  int radius = 10;
  bool oracle = false;
  bool no_onset_block = false;
  bool emit_intermediates = false;
  std::uint64_t seed = 0;
  double jitter = 0.0;
  int threads = 1;
};

std::string onsets_csv(const std::vector<OnsetEstimate>& estimates) {
  std::string s = "index,pitch,score_onset,estimated_onset,clamped\n";
  for (std::size_t k = 0; k < estimates.size(); ++k) {
    const auto& e = estimates[k];
    s += std::to_string(k) + ',' + std::to_string(e.note.pitch) + ',' + num(e.note.onset) + ',' +
         num(e.estimated_onset) + ',' + (e.clamped ? "1" : "0") + '\n';
  }
  return s;
}

int cmd_align(const AlignArgs& a, std::ostream& out) {
  const Mode mode = at_stage("config", {}, [&] { return parse_mode(a.mode); });
  if (mode == Mode::kOnset12) throw StageError("config", {}, "align mode must be note88 or chroma12", kExitInput);
  if (a.radius < 0) throw StageError("config", {}, "--radius must be non-negative", kExitInput);
  if (a.jitter < 0.0 || a.jitter > 1.0) throw StageError("config", {}, "--jitter must lie in [0, 1]", kExitInput);
  FeatureOptions options;
  options.onset_block = !a.no_onset_block;
  options.threads = a.threads;

  std::map<std::string, std::string> inputs;
  const NoteList score = read_notes("read-score", a.score);
  inputs["score"] = file_hash(a.score);

  CombinedFeature perf;
  if (a.oracle) {
    if (a.performance.empty()) throw StageError("config", {}, "--oracle needs --performance", kExitInput);
    const NoteList truth = read_notes("read-performance", a.performance);
    inputs["performance"] = file_hash(a.performance);
    perf = at_stage("features", a.performance, [&] { return oracle_features(truth, mode, options); });
  } else {
    if (a.audio.empty() || a.frame_model.empty() || a.onset_model.empty())
      throw StageError("config", {}, "give --audio, --frame-model and --onset-model, or use --oracle", kExitInput);
    perf = compute_performance_features(a.audio, a.frame_model, a.onset_model, mode, options, &inputs);
  }
  if (a.jitter > 0.0) perf = jitter_frame_block(perf, a.jitter, 2, a.seed);
  const CombinedFeature ref = at_stage("features", a.score, [&] { return score_features(score, mode, options); });

  const WarpingPath path = at_stage("align", {}, [&] { return fastdtw(ref.values, perf.values, a.radius); });
  const TimeMap map = path_to_time_map(path);
  const NoteList aligned = at_stage("warp", {}, [&] { return warp_notes(score, map); });
  const auto estimates = transfer_onsets(score, map);

  const fs::path dir = a.out;
  std::map<std::string, std::string> outputs;
  at_stage("write", dir, [&] {
    fs::create_directories(dir);
    auto put_text = [&](const std::string& name, const std::string& text) {
      write_text_file(dir / name, text);
      outputs[name] = text_hash(text);
    };
    auto put_bytes = [&](const std::string& name, const std::vector<std::uint8_t>& bytes) {
      write_binary_file(dir / name, bytes);
      outputs[name] = text_hash(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
    };
    put_bytes("aligned.mid", write_smf(aligned));
    put_text("path.csv", path_to_csv(path));
    put_text("timemap.csv", time_map_to_csv(map));
    put_text("onsets.csv", onsets_csv(estimates));
    if (a.emit_intermediates) {
      put_bytes("score_features.pafm", encode_matrix(ref.values));
      put_bytes("performance_features.pafm", encode_matrix(perf.values));
    }
    json manifest = {
        {"tool", "pianoalign"},
        {"manifest_version", 1},
        {"command", "align"},
        {"config",
         {{"mode", std::string(mode_name(mode))},
          {"radius", a.radius},
          {"onset_block", options.onset_block},
          {"oracle", a.oracle},
          {"seed", a.seed},
          {"jitter", a.jitter},
          {"emit_intermediates", a.emit_intermediates}}},
        {"inputs", json::object()},
        {"outputs", outputs},
        {"frontend_hash", frontend_config_hash()},
        {"path_cost", path.total_cost},
        {"score_frames", ref.values.rows()},
        {"performance_frames", perf.values.rows()},
    };
    auto add_input = [&](const char* key, const std::string& p) {
      if (!p.empty() && inputs.count(key)) manifest["inputs"][key] = {{"path", p}, {"fnv1a64", inputs[key]}};
    };
    add_input("score", a.score);
    add_input("performance", a.performance);
    add_input("audio", a.audio);
    add_input("frame_model", a.frame_model);
    add_input("onset_model", a.onset_model);
    write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
  });
  out << "aligned " << score.size() << " notes over " << path.pairs.size() << " path steps -> " << dir.string()
      << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// distort

struct DistortArgs {
  std::string score, out;
  std::uint64_t seed = 0;
  double min_factor = 0.7;
  double max_factor = 1.3;
};

int cmd_distort(const DistortArgs& a, std::ostream& out) {
  if (!(a.min_factor > 0.0) || a.max_factor < a.min_factor)
    throw StageError("config", {}, "need 0 < --min-factor <= --max-factor", kExitInput);
  const NoteList notes = read_notes("read-score", a.score);
  DistortionOptions options;
  options.min_factor = a.min_factor;
  options.max_factor = a.max_factor;
  const DistortedScore d = at_stage("distort", a.score, [&] { return distort_score(notes, a.seed, options); });
  std::string csv = "segment,original_begin,original_end,distorted_begin,distorted_end,factor\n";
  const auto& anchors = d.map.anchors();
  for (std::size_t k = 0; k + 1 < anchors.size(); ++k)
    csv += std::to_string(k) + ',' + num(anchors[k].first, 9) + ',' + num(anchors[k + 1].first, 9) + ',' +
           num(anchors[k].second, 9) + ',' + num(anchors[k + 1].second, 9) + ',' + num(d.map.factors()[k], 9) + '\n';
  const fs::path dir = a.out;
  at_stage("write", dir, [&] {
    fs::create_directories(dir);
    write_midi_file(dir / "distorted.mid", d.notes);
    write_text_file(dir / "distortion.csv", csv);
  });
  out << "distorted " << notes.size() << " notes over " << d.map.factors().size() << " segments -> "
      << dir.string() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateArgs {
  std::string aligned, estimates, truth, batch_dir, out, piece;
  std::vector<std::string> formats{"json", "csv", "markdown"};
  int workers = 0;
};

std::vector<double> read_estimates_csv(const fs::path& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  if (!std::getline(in, line)) throw InputError("empty estimates file");
  std::vector<std::string> header;
  {
    std::istringstream h(line);
    for (std::string cell; std::getline(h, cell, ',');) header.push_back(cell);
  }
  const auto it = std::find(header.begin(), header.end(), "estimated_onset");
  if (it == header.end()) throw InputError("estimates file lacks an estimated_onset column");
  const auto column = static_cast<std::size_t>(it - header.begin());
  std::vector<double> values;
  for (std::size_t row = 2; std::getline(in, line); ++row) {
    if (line.empty()) continue;
    std::istringstream r(line);
    std::string cell;
    for (std::size_t c = 0; c <= column; ++c)
      if (!std::getline(r, cell, ',')) throw InputError("row " + std::to_string(row) + " is too short");
    try {
      values.push_back(std::stod(cell));
    } catch (const std::exception&) {
      throw InputError("row " + std::to_string(row) + ": '" + cell + "' is not a number");
    }
  }
  return values;
}

/// Errors for one piece: aligned MIDI is paired by per-pitch order, an
/// estimates CSV by score order.
AlignmentReport evaluate_piece(const fs::path& estimate_path, bool is_csv, const fs::path& truth_path,
                               const std::string& name) {
  const NoteList truth = read_notes("read-truth", truth_path);
  std::vector<double> errors;
  if (is_csv) {
    const auto est = at_stage("read-estimates", estimate_path, [&] { return read_estimates_csv(estimate_path); });
    std::vector<double> ref;
    for (const auto& n : truth) ref.push_back(n.onset);
    errors = at_stage("evaluate", estimate_path, [&] { return onset_errors(est, ref); });
  } else {
    const NoteList aligned = read_notes("read-aligned", estimate_path);
    errors = at_stage("evaluate", estimate_path, [&] { return paired_onset_errors(truth, aligned); });
  }
  return at_stage("evaluate", estimate_path, [&] { return piecewise_stats(errors, name); });
}

int cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
  std::vector<AlignmentReport> reports;
  if (!a.batch_dir.empty()) {
    const fs::path root = a.batch_dir;
    if (!fs::is_directory(root)) throw StageError("read-batch", root, "not a directory", kExitInput);
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(root))
      if (entry.is_directory() && fs::exists(entry.path() / "truth.mid")) dirs.push_back(entry.path());
    std::sort(dirs.begin(), dirs.end());
    if (dirs.empty()) throw StageError("read-batch", root, "no piece directories with truth.mid", kExitInput);
    reports.resize(dirs.size());
    parallel_for(dirs.size(), a.workers > 0 ? a.workers : default_workers(), [&](std::size_t k) {
      const bool has_mid = fs::exists(dirs[k] / "aligned.mid");
      reports[k] = evaluate_piece(dirs[k] / (has_mid ? "aligned.mid" : "onsets.csv"), !has_mid, dirs[k] / "truth.mid",
                                  dirs[k].filename().string());
    });
  } else {
    if (a.truth.empty() || a.aligned.empty() == a.estimates.empty())
      throw StageError("config", {}, "give --truth and one of --aligned or --estimates, or --batch-dir", kExitInput);
    const bool is_csv = !a.estimates.empty();
    const fs::path est = is_csv ? a.estimates : a.aligned;
    const std::string name = a.piece.empty() ? fs::path(a.truth).stem().string() : a.piece;
    reports.push_back(evaluate_piece(est, is_csv, a.truth, name));
  }
  const CorpusSummary summary = aggregate(std::move(reports));
  if (!a.out.empty()) {
    const fs::path dir = a.out;
    at_stage("write", dir, [&] {
      fs::create_directories(dir);
      for (const auto& f : a.formats) {
        if (f == "json") write_text_file(dir / "report.json", render_report(summary, ReportFormat::kJson));
        if (f == "csv") write_text_file(dir / "report.csv", render_report(summary, ReportFormat::kCsv));
        if (f == "markdown") write_text_file(dir / "report.md", render_report(summary, ReportFormat::kMarkdown));
      }
    });
  }
  out << render_report(summary, ReportFormat::kMarkdown);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string manifest, out, log, resume, mode = "note88", layers;
  TrainingConfig config;
  int threads = 1;
};

struct DatasetEntry {
  fs::path audio;
  fs::path midi;
};

std::vector<DatasetEntry> parse_split(const json& j, const char* key, const fs::path& base) {
  std::vector<DatasetEntry> entries;
  if (!j.contains(key)) return entries;
  if (!j[key].is_array()) throw InputError(std::string("'") + key + "' must be an array");
  for (const auto& e : j[key]) {
    if (!e.is_object() || !e.contains("audio") || !e.contains("midi") || !e["audio"].is_string() ||
        !e["midi"].is_string())
      throw InputError(std::string("every '") + key + "' entry needs string fields audio and midi");
    entries.push_back({base / e["audio"].get<std::string>(), base / e["midi"].get<std::string>()});
  }
  return entries;
}

std::vector<int> parse_layers(const std::string& text) {
  std::vector<int> layers;
  std::istringstream in(text);
  for (std::string cell; std::getline(in, cell, ',');) {
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(cell, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != cell.size() || v <= 0) throw InputError("--layers expects positive integers such as 200,200");
    layers.push_back(v);
  }
  if (layers.empty()) throw InputError("--layers is empty");
  return layers;
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  const Mode mode = at_stage("config", {}, [&] { return parse_mode(a.mode); });
  TrainingConfig config = a.config;
  if (!a.layers.empty()) config.layers = at_stage("config", {}, [&] { return parse_layers(a.layers); });
  at_stage("config", {}, [&] { config.validate(); });

  const fs::path manifest_path = a.manifest;
  std::vector<DatasetEntry> train_set, val_set;
  at_stage("read-manifest", manifest_path, [&] {
    json j;
    try {
      j = json::parse(read_text_file(manifest_path));
    } catch (const json::exception& e) {
      throw InputError(std::string("not JSON: ") + e.what());
    }
    if (!j.is_object()) throw InputError("manifest must be a JSON object");
    train_set = parse_split(j, "train", manifest_path.parent_path());
    val_set = parse_split(j, "validation", manifest_path.parent_path());
    if (train_set.empty()) throw InputError("manifest lists no training pieces");
  });

  std::optional<ModelWeights> resumed;
  if (!a.resume.empty()) resumed = read_model(a.resume, mode);

  auto load_split = [&](const std::vector<DatasetEntry>& entries) {
    std::vector<std::pair<InputMatrix, NoteList>> loaded;
    for (const auto& e : entries) {
      const AudioBuffer audio = at_stage("read-audio", e.audio, [&] { return load_audio(e.audio); });
      InputMatrix input = at_stage("frontend", e.audio, [&] { return frontend_features(audio, nullptr); });
      loaded.emplace_back(std::move(input), read_notes("read-midi", e.midi));
    }
    return loaded;
  };
  auto raw_train = load_split(train_set);
  auto raw_val = load_split(val_set);

  Standardization stats;
  if (resumed) {
    stats = resumed->standardization;
  } else {
    std::vector<Matrix> mats;
    for (const auto& [input, notes] : raw_train) mats.push_back(input.values);
    stats = compute_standardization(mats);
  }
  auto to_pieces = [&](std::vector<std::pair<InputMatrix, NoteList>>& raw) {
    std::vector<TrainingPiece> pieces;
    for (auto& [input, notes] : raw) {
      stats.apply(input.values);
      const int frames = static_cast<int>(input.values.rows());
      pieces.push_back(make_training_piece(input, to_labels(notes, mode, frames), mode));
    }
    return pieces;
  };
  const auto training = to_pieces(raw_train);
  const auto validation = to_pieces(raw_val);

  Network initial = resumed ? resumed->network : initial_network(config, mode, kInputDims);
  std::string log = "epoch,steps,learning_rate,train_loss,validation_loss,best_validation,decays,improved,decayed\n";
  const TrainingResult result = at_stage("train", {}, [&] {
    return train(training, validation, config, std::move(initial), [&](const EpochLog& e) {
      log += std::to_string(e.epoch) + ',' + std::to_string(e.steps) + ',' + num(e.learning_rate, 9) + ',' +
             num(e.train_loss, 9) + ',' + num(e.validation_loss, 9) + ',' + num(e.best_validation, 9) + ',' +
             std::to_string(e.decays) + ',' + (e.improved ? "1" : "0") + ',' + (e.decayed ? "1" : "0") + '\n';
    });
  });
  const ModelWeights model = ModelWeights::from_network(mode, result.best, stats, frontend_config_hash());
  const fs::path model_path = a.out;
  const fs::path log_path = a.log.empty() ? fs::path(model_path).replace_extension(".log.csv") : fs::path(a.log);
  at_stage("write", model_path, [&] {
    if (model_path.has_parent_path()) fs::create_directories(model_path.parent_path());
    save_model(model_path, model);
    write_text_file(log_path, log);
  });
  out << "trained " << mode_name(mode) << " model for " << result.log.size() << " epochs (" << result.steps
      << " steps), best validation BCE "
      << (result.log.empty() ? 0.0 : result.log.back().best_validation) << " -> " << model_path.string() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// transcribe

struct TranscribeArgs {
  std::string audio, model, out, reference, binarized;
  double threshold = 0.5;
  int threads = 1;
};

int cmd_transcribe(const TranscribeArgs& a, std::ostream& out) {
  if (a.threshold < 0.0 || a.threshold > 1.0) throw StageError("config", {}, "--threshold must lie in [0, 1]", kExitInput);
  const ModelWeights model = read_model(a.model, std::nullopt);
  const AudioBuffer audio = at_stage("read-audio", a.audio, [&] { return load_audio(a.audio); });
  const ActivationMatrix act = at_stage("transcribe", a.audio, [&] {
    const InputMatrix input = frontend_features(audio, &model.standardization);
    return predict(input, model, a.threads);
  });
  at_stage("write", a.out, [&] {
    write_matrix_file(a.out, act.values);
    if (!a.binarized.empty())
      write_matrix_file(a.binarized, (act.values.array() >= a.threshold).cast<double>().matrix());
  });
  json summary = {{"frames", act.values.rows()}, {"columns", act.values.cols()}, {"mode", mode_name(act.mode)}};
  if (!a.reference.empty()) {
    const NoteList ref = read_notes("read-reference", a.reference);
    const LabelSet labels = to_labels(ref, model.mode, static_cast<int>(act.values.rows()));
    const FrameScore s = frame_f_score(act.values, labels.targets(model.mode), a.threshold);
    summary["precision"] = s.precision;
    summary["recall"] = s.recall;
    summary["f_score"] = s.f_score;
  }
  out << summary.dump() << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Audio-to-score alignment for piano recordings", "pianoalign"};
  app.set_config("--config", "", "key = value configuration file; [verb] sections apply to one verb");
  app.require_subcommand(1);

  FeaturesArgs fa;
  auto* features = app.add_subcommand("features", "Write alignment features for a score, or for audio via models");
  features->add_option("--midi", fa.midi, "Score or performance MIDI (ground-truth features)")->check(CLI::ExistingFile);
  features->add_option("--audio", fa.audio, "Performance audio (WAV, 44.1 kHz)");
  features->add_option("--frame-model", fa.frame_model, "note88 or chroma12 model");
  features->add_option("--onset-model", fa.onset_model, "onset12 model");
  features->add_option("--mode", fa.mode, "note88 or chroma12")->capture_default_str();
  features->add_flag("--no-onset-block", fa.no_onset_block, "Omit decayed onset columns");
  features->add_flag("--csv", fa.csv, "Write CSV instead of the binary matrix format");
  features->add_option("--threads", fa.threads, "Inference threads")->capture_default_str();
  features->add_option("--out", fa.out, "Output file")->required();

  AlignArgs aa;
  auto* align = app.add_subcommand("align", "Align a score to a performance");
  align->add_option("--score", aa.score, "Score MIDI")->required();
  align->add_option("--audio", aa.audio, "Performance audio (WAV, 44.1 kHz)");
  align->add_option("--performance", aa.performance, "Performance MIDI (with --oracle)");
  align->add_option("--frame-model", aa.frame_model, "note88 or chroma12 model");
  align->add_option("--onset-model", aa.onset_model, "onset12 model");
  align->add_option("--mode", aa.mode, "note88 or chroma12")->capture_default_str();
  align->add_option("--radius", aa.radius, "FastDTW radius")->capture_default_str();
  align->add_flag("--oracle", aa.oracle, "Use ground-truth performance features instead of models");
  align->add_flag("--no-onset-block", aa.no_onset_block, "Omit decayed onset columns");
  align->add_option("--seed", aa.seed, "Seed for --jitter")->capture_default_str();
  align->add_option("--jitter", aa.jitter, "Fraction of performance frames to jitter by up to 2 frames")
      ->capture_default_str();
  align->add_option("--threads", aa.threads, "Inference threads")->capture_default_str();
  align->add_flag("--emit-intermediates", aa.emit_intermediates, "Also write both feature matrices");
  align->add_option("--out", aa.out, "Output directory")->required();

  DistortArgs da;
  auto* distort = app.add_subcommand("distort", "Randomly stretch the intervals of a score");
  distort->add_option("--score", da.score, "Score MIDI")->required();
  distort->add_option("--seed", da.seed, "Random seed")->capture_default_str();
  distort->add_option("--min-factor", da.min_factor, "Smallest stretch factor")->capture_default_str();
  distort->add_option("--max-factor", da.max_factor, "Largest stretch factor")->capture_default_str();
  distort->add_option("--out", da.out, "Output directory")->required();

  EvaluateArgs ea;
  auto* evaluate = app.add_subcommand("evaluate", "Onset error statistics against a ground-truth MIDI");
  evaluate->add_option("--aligned", ea.aligned, "Aligned MIDI");
  evaluate->add_option("--estimates", ea.estimates, "onsets.csv written by align");
  evaluate->add_option("--truth", ea.truth, "Ground-truth performance MIDI");
  evaluate->add_option("--batch-dir", ea.batch_dir, "Directory of piece folders with truth.mid and aligned.mid");
  evaluate->add_option("--workers", ea.workers, "Batch worker threads (0 = all cores)")->capture_default_str();
  evaluate->add_option("--piece", ea.piece, "Piece name in the report");
  evaluate->add_option("--format", ea.formats, "Report files to write")
      ->check(CLI::IsMember({"json", "csv", "markdown"}))
      ->delimiter(',');
  evaluate->add_option("--out", ea.out, "Report directory");

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a transcription network");
  train_cmd->add_option("--manifest", ta.manifest, "Dataset JSON with train/validation lists")->required();
  train_cmd->add_option("--mode", ta.mode, "note88, chroma12 or onset12")->capture_default_str();
  train_cmd->add_option("--out", ta.out, "Model file")->required();
  train_cmd->add_option("--log", ta.log, "Training log CSV (default: next to the model)");
  train_cmd->add_option("--resume", ta.resume, "Continue from this model");
  train_cmd->add_option("--layers", ta.layers, "LSTM units per layer, e.g. 200,200");
  train_cmd->add_option("--seed", ta.config.seed, "Random seed")->capture_default_str();
  train_cmd->add_option("--max-epochs", ta.config.max_epochs)->capture_default_str();
  train_cmd->add_option("--max-steps", ta.config.max_steps, "0 = unlimited")->capture_default_str();
  train_cmd->add_option("--learning-rate", ta.config.lr0)->capture_default_str();
  train_cmd->add_option("--batch-size", ta.config.batch_size)->capture_default_str();
  train_cmd->add_option("--patience", ta.config.patience)->capture_default_str();
  train_cmd->add_option("--max-decays", ta.config.max_decays)->capture_default_str();
  train_cmd->add_option("--dropout", ta.config.dropout)->capture_default_str();
  train_cmd->add_option("--l2", ta.config.l2)->capture_default_str();

  TranscribeArgs tr;
  auto* transcribe = app.add_subcommand("transcribe", "Write network activations for a recording");
  transcribe->add_option("--audio", tr.audio, "Audio (WAV, 44.1 kHz)")->required();
  transcribe->add_option("--model", tr.model, "Model file")->required();
  transcribe->add_option("--out", tr.out, "Activation matrix file")->required();
  transcribe->add_option("--reference", tr.reference, "MIDI for a frame-level F-score");
  transcribe->add_option("--threshold", tr.threshold, "Binarization threshold")->capture_default_str();
  transcribe->add_option("--binarized", tr.binarized, "Also write thresholded activations here");
  transcribe->add_option("--threads", tr.threads, "Inference threads")->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitInput;
  }

  const std::string verb = app.get_subcommands().front()->get_name();
  try {
    if (verb == "features") return cmd_features(fa, out);
    if (verb == "align") return cmd_align(aa, out);
    if (verb == "distort") return cmd_distort(da, out);
    if (verb == "evaluate") return cmd_evaluate(ea, out);
    if (verb == "train") return cmd_train(ta, out);
    if (verb == "transcribe") return cmd_transcribe(tr, out);
  } catch (const StageError& e) {
    err << "pianoalign " << verb << ": " << e.what() << '\n';
    return e.exit_code();
  } catch (const InputError& e) {
    err << "pianoalign " << verb << ": " << e.what() << '\n';
    return kExitInput;
  } catch (const std::exception& e) {
    err << "pianoalign " << verb << ": internal error: " << e.what() << '\n';
    return kExitInternal;
  }
  return kExitInternal;
}

}  // namespace pianoalign
