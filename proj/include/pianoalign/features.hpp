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
#include <compare>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pianoalign/common.hpp"
#include "pianoalign/frontend.hpp"
#include "pianoalign/midi.hpp"
#include "pianoalign/transcriber.hpp"

namespace pianoalign {

/// Alignment features: [note-or-chroma block | decayed chroma onsets].
struct CombinedFeature {
  Matrix values;
  Mode mode = Mode::kNote88;
  bool onset_block = true;
  int fps = kFramesPerSecond;

  int frame_block_width() const { return mode_width(mode); }
  int width() const { return frame_block_width() + (onset_block ? kNumChroma : 0); }
};

struct OnsetEvent {
  int frame = 0;
  int chroma = 0;
  friend auto operator<=>(const OnsetEvent&, const OnsetEvent&) = default;
};
/// Sorted by (frame, chroma), no duplicates.
using OnsetEvents = std::vector<OnsetEvent>;

/// 1, sqrt(0.9), sqrt(0.8), ..., sqrt(0.1).
const std::array<double, 10>& onset_decay_weights();

/// Each onset at frame t writes the decay weights over t..t+9 (clipped);
/// overlapping contributions are combined with max.
Matrix decay_onsets(const OnsetEvents& onsets, int n_frames, int n_classes = kNumChroma);

struct OnsetPeakOptions {
  double threshold = 0.5;
  int neighborhood = 2;  // local maximum over +/- this many frames
  int min_gap = 5;       // frames between accepted onsets of one chroma
};

/// Peak picking on onset12 activations: above threshold, local maximum
/// (earliest frame wins a tie) and at least `min_gap` after the previous
/// accepted onset of the same chroma.
OnsetEvents extract_onsets(const ActivationMatrix& activations, const OnsetPeakOptions& options = {});

/// Nonzero cells of a frames x 12 onset label matrix.
OnsetEvents onsets_from_labels(const Matrix& onset_labels);

struct FeatureOptions {
  bool onset_block = true;
  /// Ablation switch; activations enter alignment as raw probabilities otherwise.
  bool binarize_frames = false;
  double frame_threshold = 0.5;
  OnsetPeakOptions peaks;
  int threads = 1;
};

/// Concatenates a frame block with decayed onsets (dropped when
/// `options.onset_block` is false).
CombinedFeature combine_features(const Matrix& frame_block, const Matrix& decayed_onsets, Mode mode,
                                 bool onset_block);

/// From network outputs: `frames` is note88 or chroma12, `onsets` onset12.
CombinedFeature performance_features(const ActivationMatrix& frames, const ActivationMatrix& onsets,
                                     const FeatureOptions& options = {});

/// Full audio path. Both models must share the front-end configuration.
CombinedFeature performance_features(const AudioBuffer& audio, const ModelWeights& frame_model,
                                     const ModelWeights& onset_model, const FeatureOptions& options = {});

/// Binary piano roll (or chroma roll) plus decayed onsets; `n_frames`
/// defaults to frames_for(notes).
CombinedFeature score_features(const NoteList& notes, Mode mode, const FeatureOptions& options = {},
                               std::optional<int> n_frames = std::nullopt);

/// Stand-in for the transcription networks built from ground-truth
/// performance notes, with the same construction as score_features.
CombinedFeature oracle_features(const NoteList& performance, Mode mode, const FeatureOptions& options = {},
                                std::optional<int> n_frames = std::nullopt);

/// Degrades the frame block: each frame with any active cell is, with
/// probability `fraction`, replaced by the row `d` frames away, d drawn
/// uniformly from {-max_shift..max_shift} \ {0} and clamped to the matrix.
CombinedFeature jitter_frame_block(const CombinedFeature& features, double fraction, int max_shift,
                                   std::uint64_t seed);

// Matrix files: "PAFM", u32 version 1, u64 rows, u64 cols, float32 LE row-major.
std::vector<std::uint8_t> encode_matrix(const Matrix& m);
Matrix decode_matrix(std::span<const std::uint8_t> bytes);
void write_matrix_file(const std::filesystem::path& path, const Matrix& m);
Matrix read_matrix_file(const std::filesystem::path& path);
std::string matrix_to_csv(const Matrix& m);

}  // namespace pianoalign
