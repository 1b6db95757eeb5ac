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
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pianoalign/common.hpp"
#include "pianoalign/midi.hpp"

namespace pianoalign {

/// Mono samples in [-1, 1].
struct AudioBuffer {
  std::vector<double> samples;
  int sample_rate = kSampleRate;
};

class UnsupportedRateError : public InputError {
 public:
  using InputError::InputError;
};

enum class WavEncoding { kPcm16, kFloat32 };

/// Decodes PCM16 or float32 WAV with one or two channels, averaging to mono.
/// Anything but 44100 Hz is rejected; there is no resampling.
AudioBuffer decode_wav(std::span<const std::uint8_t> bytes);
AudioBuffer load_audio(const std::filesystem::path& path);

/// Interleaves `channels` (equal lengths) into a WAV file image.
std::vector<std::uint8_t> encode_wav(const std::vector<std::vector<double>>& channels, int sample_rate,
                                     WavEncoding encoding);
void save_audio(const std::filesystem::path& path, const AudioBuffer& audio,
                WavEncoding encoding = WavEncoding::kFloat32);

struct Spectrogram {
  Matrix mag;  // frames x (window_len / 2 + 1)
  int window_len = 2048;
  int hop = kHopSize;
  int fps = kFramesPerSecond;
};

/// 1 + floor(n_samples / 441): frame t is centred on sample 441 t and the
/// signal is zero-padded by half a window on both sides.
int stft_frame_count(std::size_t n_samples);

/// Hamming-windowed DFT magnitudes, hop 441. `window_len` is 2048 or 8192.
Spectrogram stft_magnitude(const AudioBuffer& audio, int window_len);

/// y = ln(1 + 1000 x), elementwise.
Spectrogram log_compress(Spectrogram spec);
double log_compress_value(double x);

/// Triangular semitone filters. Filter centres follow the MIDI grid
/// f(p) = 440 * 2^((p - 69) / 12); each triangle rises from f(p - 1) and
/// falls to f(p + 1) and is normalized to unit sum. Filters without any tap
/// or with the same support as the previously kept filter are dropped.
struct SemitoneFilterbank {
  struct Filter {
    int center_pitch = 0;
    int first_bin = 0;
    std::vector<double> weights;  // contiguous taps from first_bin
  };

  int window_len = 0;
  int sample_rate = kSampleRate;
  int num_bins = 0;
  std::vector<Filter> filters;

  std::size_t size() const { return filters.size(); }
  /// bins x filters.
  Matrix dense() const;
  /// frames x filters.
  Matrix apply(const Matrix& spectrogram) const;
};

inline constexpr int kShortWindow = 2048;
inline constexpr int kLongWindow = 8192;
/// Filter centres run from A0 past the keyboard top up to A9 (14.08 kHz)
/// so that upper partials of the highest keys are covered.
inline constexpr int kHighestFilterPitch = 129;
inline constexpr int kFilteredDims = 183;
inline constexpr int kInputDims = 2 * kFilteredDims;

double midi_frequency(double pitch);

SemitoneFilterbank build_filterbank(int window_len, int sample_rate = kSampleRate);

/// Both resolutions; throws unless their sizes add up to 183.
struct FrontendFilterbanks {
  SemitoneFilterbank short_window;
  SemitoneFilterbank long_window;
};
const FrontendFilterbanks& frontend_filterbanks();
FrontendFilterbanks build_frontend_filterbanks(int sample_rate = kSampleRate);

/// Per-column mean and population standard deviation.
struct Standardization {
  Vector mean;
  Vector std;

  int dims() const { return static_cast<int>(mean.size()); }
  /// (x - mean) / std; columns with std below 1e-12 are only centred.
  void apply(Matrix& values) const;
  friend bool operator==(const Standardization& a, const Standardization& b) {
    return a.mean == b.mean && a.std == b.std;
  }
};

Standardization compute_standardization(std::span<const Matrix> matrices);

/// Standardized network input, 366 columns at 100 fps.
struct InputMatrix {
  Matrix values;
  std::string frontend_hash;
};

/// Fingerprint of every front-end constant that affects the features.
const std::string& frontend_config_hash();

/// frames x 183: log-compressed spectrograms of both windows through their
/// filterbanks, short window first.
Matrix filtered_spectrogram(const AudioBuffer& audio);

/// Appends the signed first-order difference (first row zero).
Matrix append_difference(const Matrix& filtered);

/// Full pipeline. `stats`, when given, must have 366 dimensions.
InputMatrix frontend_features(const AudioBuffer& audio, const Standardization* stats);

/// Simple additive piano-like rendering (decaying harmonics) used to make
/// test and toy training audio from a NoteList.
AudioBuffer synthesize_notes(const NoteList& notes, double tail_seconds = 0.5, int sample_rate = kSampleRate);

}  // namespace pianoalign
