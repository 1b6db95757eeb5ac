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


#include "pianoalign/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>
#include <sstream>

namespace pianoalign {

const std::array<double, 10>& onset_decay_weights() {
  static const std::array<double, 10> weights = [] {
    std::array<double, 10> w{};
    for (int k = 0; k < 10; ++k) w[k] = std::sqrt((10 - k) / 10.0);
    return w;
  }();
  return weights;
}

Matrix decay_onsets(const OnsetEvents& onsets, int n_frames, int n_classes) {
  Matrix out = Matrix::Zero(n_frames, n_classes);
  const auto& w = onset_decay_weights();
  for (const auto& e : onsets) {
    if (e.chroma < 0 || e.chroma >= n_classes || e.frame < 0 || e.frame >= n_frames)
      throw InputError("onset event outside the feature matrix");
    for (int k = 0; k < 10 && e.frame + k < n_frames; ++k)
      out(e.frame + k, e.chroma) = std::max(out(e.frame + k, e.chroma), w[k]);
  }
  return out;
}

OnsetEvents extract_onsets(const ActivationMatrix& activations, const OnsetPeakOptions& options) {
  if (activations.mode != Mode::kOnset12) throw InputError("onset extraction needs onset12 activations");
  const Matrix& a = activations.values;
  const auto frames = static_cast<int>(a.rows());
  OnsetEvents out;
  for (int c = 0; c < a.cols(); ++c) {
    int last = -1;
    for (int t = 0; t < frames; ++t) {
      const double v = a(t, c);
      if (v < options.threshold) continue;
      bool peak = true;
      for (int u = std::max(0, t - options.neighborhood); u <= std::min(frames - 1, t + options.neighborhood) && peak;
           ++u) {
        if (u < t) peak = v > a(u, c);
        if (u > t) peak = v >= a(u, c);
      }
      if (!peak) continue;
      if (last >= 0 && t - last < options.min_gap) continue;
      out.push_back({t, c});
      last = t;
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

OnsetEvents onsets_from_labels(const Matrix& onset_labels) {
  OnsetEvents out;
  for (int t = 0; t < onset_labels.rows(); ++t)
    for (int c = 0; c < onset_labels.cols(); ++c)
      if (onset_labels(t, c) > 0.0) out.push_back({t, c});
  return out;
}

CombinedFeature combine_features(const Matrix& frame_block, const Matrix& decayed_onsets, Mode mode,
                                 bool onset_block) {
  if (frame_block.cols() != mode_width(mode)) throw InputError("frame block width does not match the mode");
  CombinedFeature f;
  f.mode = mode;
  f.onset_block = onset_block;
  if (!onset_block) {
    f.values = frame_block;
    return f;
  }
  if (decayed_onsets.rows() != frame_block.rows() || decayed_onsets.cols() != kNumChroma)
    throw InputError("onset block shape does not match the frame block");
  f.values.resize(frame_block.rows(), frame_block.cols() + kNumChroma);
  f.values << frame_block, decayed_onsets;
  return f;
}

CombinedFeature performance_features(const ActivationMatrix& frames, const ActivationMatrix& onsets,
                                     const FeatureOptions& options) {
  if (frames.mode == Mode::kOnset12) throw InputError("frame activations must be note88 or chroma12");
  if (frames.values.rows() != onsets.values.rows()) throw InputError("activation frame counts differ");
  Matrix block = frames.values;
  if (options.binarize_frames)
    block = block.unaryExpr([t = options.frame_threshold](double v) { return v >= t ? 1.0 : 0.0; });
  const auto n = static_cast<int>(block.rows());
  Matrix decayed = options.onset_block ? decay_onsets(extract_onsets(onsets, options.peaks), n) : Matrix();
  return combine_features(block, decayed, frames.mode, options.onset_block);
}

CombinedFeature performance_features(const AudioBuffer& audio, const ModelWeights& frame_model,
                                     const ModelWeights& onset_model, const FeatureOptions& options) {
  if (onset_model.mode != Mode::kOnset12) throw InputError("onset model must be onset12");
  if (frame_model.frontend_hash != onset_model.frontend_hash)
    throw InputError("frame and onset models were built for different front-end configurations");
  Matrix filtered = append_difference(filtered_spectrogram(audio));
  InputMatrix frame_input{filtered, frontend_config_hash()};
  InputMatrix onset_input{std::move(filtered), frontend_config_hash()};
  if (frame_model.standardization.dims() > 0) frame_model.standardization.apply(frame_input.values);
  if (onset_model.standardization.dims() > 0) onset_model.standardization.apply(onset_input.values);
  const ActivationMatrix frames = predict(frame_input, frame_model, options.threads);
  const ActivationMatrix onsets = predict(onset_input, onset_model, options.threads);
  return performance_features(frames, onsets, options);
}

CombinedFeature score_features(const NoteList& notes, Mode mode, const FeatureOptions& options,
                               std::optional<int> n_frames) {
  if (mode == Mode::kOnset12) throw InputError("score features are built in note88 or chroma12 mode");
  const int frames = n_frames.value_or(frames_for(notes));
  const LabelSet labels = to_labels(notes, mode, frames);
  Matrix decayed = options.onset_block ? decay_onsets(onsets_from_labels(labels.onset_labels), frames) : Matrix();
  return combine_features(labels.frame_labels, decayed, mode, options.onset_block);
}

CombinedFeature oracle_features(const NoteList& performance, Mode mode, const FeatureOptions& options,
                                std::optional<int> n_frames) {
  return score_features(performance, mode, options, n_frames);
}

CombinedFeature jitter_frame_block(const CombinedFeature& features, double fraction, int max_shift,
                                   std::uint64_t seed) {
  if (max_shift < 1) throw InputError("jitter shift must be at least one frame");
  CombinedFeature out = features;
  const int width = features.frame_block_width();
  const auto frames = static_cast<int>(features.values.rows());
  std::mt19937_64 rng(seed);
  for (int t = 0; t < frames; ++t) {
    if (features.values.row(t).head(width).isZero()) continue;
    if (unit_uniform(rng) >= fraction) continue;
    int shift = static_cast<int>(unit_uniform(rng) * 2 * max_shift) - max_shift;
    if (shift >= 0) ++shift;
    const int src = std::clamp(t + shift, 0, frames - 1);
    out.values.row(t).head(width) = features.values.row(src).head(width);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Matrix files

std::vector<std::uint8_t> encode_matrix(const Matrix& m) {
  std::vector<std::uint8_t> out;
  out.reserve(24 + 4 * static_cast<std::size_t>(m.size()));
  auto put = [&](std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
  };
  for (char c : {'P', 'A', 'F', 'M'}) out.push_back(static_cast<std::uint8_t>(c));
  put(1, 4);
  put(static_cast<std::uint64_t>(m.rows()), 8);
  put(static_cast<std::uint64_t>(m.cols()), 8);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const float v = static_cast<float>(m.data()[i]);
    std::uint32_t raw;
    std::memcpy(&raw, &v, sizeof raw);
    put(raw, 4);
  }
  return out;
}

Matrix decode_matrix(std::span<const std::uint8_t> bytes) {
  auto get = [&](std::size_t at, int n) {
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes[at + i]) << (8 * i);
    return v;
  };
  if (bytes.size() < 24 || std::memcmp(bytes.data(), "PAFM", 4) != 0) throw InputError("not a feature matrix file");
  if (get(4, 4) != 1) throw InputError("unsupported feature matrix version");
  const std::uint64_t rows = get(8, 8);
  const std::uint64_t cols = get(16, 8);
  if (cols != 0 && rows > (bytes.size() - 24) / 4 / cols) throw InputError("feature matrix payload truncated");
  if (bytes.size() != 24 + 4 * rows * cols) throw InputError("feature matrix payload size mismatch");
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const auto raw = static_cast<std::uint32_t>(get(24 + 4 * static_cast<std::size_t>(i), 4));
    float v;
    std::memcpy(&v, &raw, sizeof v);
    m.data()[i] = v;
  }
  return m;
}

void write_matrix_file(const std::filesystem::path& path, const Matrix& m) { write_binary_file(path, encode_matrix(m)); }

Matrix read_matrix_file(const std::filesystem::path& path) { return decode_matrix(read_binary_file(path)); }

std::string matrix_to_csv(const Matrix& m) {
  std::ostringstream out;
  out.precision(9);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c > 0) out << ',';
      out << m(r, c);
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace pianoalign
