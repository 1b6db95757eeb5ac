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


#include "pianoalign/frontend.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <mutex>
#include <numbers>

#include <fftw3.h>

namespace pianoalign {

// ---------------------------------------------------------------------------
// WAV

namespace {

std::uint32_t le32(std::span<const std::uint8_t> b, std::size_t pos) {
  return b[pos] | (b[pos + 1] << 8) | (b[pos + 2] << 16) | (static_cast<std::uint32_t>(b[pos + 3]) << 24);
}
std::uint16_t le16(std::span<const std::uint8_t> b, std::size_t pos) {
  return static_cast<std::uint16_t>(b[pos] | (b[pos + 1] << 8));
}
void put_le(std::vector<std::uint8_t>& out, std::uint32_t v, int n) {
  for (int i = 0; i < n; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

}  // namespace

AudioBuffer decode_wav(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw InputError("not a RIFF/WAVE file");
  int format = -1, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::span<const std::uint8_t> data;
  bool have_data = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t len = le32(bytes, pos + 4);
    const std::size_t body = pos + 8;
    const std::size_t avail = std::min<std::size_t>(len, bytes.size() - body);
    if (std::memcmp(bytes.data() + pos, "fmt ", 4) == 0) {
      if (avail < 16) throw InputError("WAV fmt chunk too short");
      format = le16(bytes, body);
      channels = le16(bytes, body + 2);
      rate = le32(bytes, body + 4);
      bits = le16(bytes, body + 14);
      if (format == 0xfffe) {
        if (avail < 26) throw InputError("WAV extensible fmt chunk too short");
        format = le16(bytes, body + 24);
      }
    } else if (std::memcmp(bytes.data() + pos, "data", 4) == 0) {
      data = bytes.subspan(body, avail);  // tolerate a truncated final chunk
      have_data = true;
    }
    pos = body + len + (len & 1);
  }
  if (format < 0 || !have_data) throw InputError("WAV file lacks fmt or data chunk");
  const bool pcm16 = format == 1 && bits == 16;
  const bool float32 = format == 3 && bits == 32;
  if (!pcm16 && !float32)
    throw InputError("unsupported WAV codec (format " + std::to_string(format) + ", " + std::to_string(bits) +
                     " bits); expected PCM16 or float32");
  if (channels < 1 || channels > 2) throw InputError("unsupported channel count " + std::to_string(channels));
  if (rate != static_cast<std::uint32_t>(kSampleRate))
    throw UnsupportedRateError("unsupported sample rate " + std::to_string(rate) + " Hz (only 44100 Hz is accepted)");

  const std::size_t frame_bytes = static_cast<std::size_t>(channels) * (bits / 8);
  const std::size_t frames = data.size() / frame_bytes;
  if (frames == 0) throw InputError("WAV file contains no samples");
  AudioBuffer audio;
  audio.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    double sum = 0.0;
    for (int c = 0; c < channels; ++c) {
      const std::size_t at = i * frame_bytes + c * (bits / 8);
      if (pcm16) {
        sum += static_cast<std::int16_t>(le16(data, at)) / 32768.0;
      } else {
        float v;
        const std::uint32_t raw = le32(data, at);
        std::memcpy(&v, &raw, sizeof v);
        if (!std::isfinite(v)) throw InputError("non-finite sample in WAV data");
        sum += v;
      }
    }
    audio.samples[i] = sum / channels;
  }
  return audio;
}

AudioBuffer load_audio(const std::filesystem::path& path) { return decode_wav(read_binary_file(path)); }

std::vector<std::uint8_t> encode_wav(const std::vector<std::vector<double>>& channels, int sample_rate,
                                     WavEncoding encoding) {
  if (channels.empty()) throw InputError("no channels to encode");
  const std::size_t frames = channels[0].size();
  for (const auto& ch : channels)
    if (ch.size() != frames) throw InputError("channel lengths differ");
  const int bits = encoding == WavEncoding::kPcm16 ? 16 : 32;
  const std::uint32_t data_len = static_cast<std::uint32_t>(frames * channels.size() * (bits / 8));
  std::vector<std::uint8_t> out;
  out.reserve(44 + data_len);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put_le(out, 36 + data_len, 4);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_le(out, 16, 4);
  put_le(out, encoding == WavEncoding::kPcm16 ? 1 : 3, 2);
  put_le(out, static_cast<std::uint32_t>(channels.size()), 2);
  put_le(out, static_cast<std::uint32_t>(sample_rate), 4);
  put_le(out, static_cast<std::uint32_t>(sample_rate * channels.size() * (bits / 8)), 4);
  put_le(out, static_cast<std::uint32_t>(channels.size() * (bits / 8)), 2);
  put_le(out, static_cast<std::uint32_t>(bits), 2);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put_le(out, data_len, 4);
  for (std::size_t i = 0; i < frames; ++i) {
    for (const auto& ch : channels) {
      if (encoding == WavEncoding::kPcm16) {
        const double s = std::clamp(ch[i], -1.0, 32767.0 / 32768.0);
        put_le(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(s * 32768.0))), 2);
      } else {
        const float v = static_cast<float>(ch[i]);
        std::uint32_t raw;
        std::memcpy(&raw, &v, sizeof raw);
        put_le(out, raw, 4);
      }
    }
  }
  return out;
}

void save_audio(const std::filesystem::path& path, const AudioBuffer& audio, WavEncoding encoding) {
  write_binary_file(path, encode_wav({audio.samples}, audio.sample_rate, encoding));
}

// ---------------------------------------------------------------------------
// STFT

int stft_frame_count(std::size_t n_samples) { return 1 + static_cast<int>(n_samples / kHopSize); }

namespace {

std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

class RealFft {
 public:
  explicit RealFft(int n) : n_(n) {
    in_ = fftw_alloc_real(n);
    out_ = fftw_alloc_complex(n / 2 + 1);
    std::lock_guard lock(fftw_planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(n, in_, out_, FFTW_ESTIMATE);
  }
  ~RealFft() {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(plan_);
    fftw_free(in_);
    fftw_free(out_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  double* input() { return in_; }
  void execute() { fftw_execute(plan_); }
  double magnitude(int k) const { return std::hypot(out_[k][0], out_[k][1]); }

 private:
  int n_;
  double* in_;
  fftw_complex* out_;
  fftw_plan plan_;
};

}  // namespace

Spectrogram stft_magnitude(const AudioBuffer& audio, int window_len) {
  if (window_len != kShortWindow && window_len != kLongWindow)
    throw InputError("window length must be 2048 or 8192");
  if (audio.samples.empty()) throw InputError("empty audio");
  const int frames = stft_frame_count(audio.samples.size());
  const int bins = window_len / 2 + 1;
  std::vector<double> window(window_len);
  for (int n = 0; n < window_len; ++n)
    window[n] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * n / (window_len - 1));

  Spectrogram spec;
  spec.window_len = window_len;
  spec.mag.resize(frames, bins);
  RealFft fft(window_len);
  const auto n_samples = static_cast<long long>(audio.samples.size());
  for (int t = 0; t < frames; ++t) {
    const long long start = static_cast<long long>(t) * kHopSize - window_len / 2;
    double* in = fft.input();
    for (int n = 0; n < window_len; ++n) {
      const long long i = start + n;
      in[n] = (i >= 0 && i < n_samples) ? audio.samples[i] * window[n] : 0.0;
    }
    fft.execute();
    for (int k = 0; k < bins; ++k) spec.mag(t, k) = fft.magnitude(k);
  }
  return spec;
}

double log_compress_value(double x) { return std::log1p(1000.0 * x); }

Spectrogram log_compress(Spectrogram spec) {
  spec.mag = spec.mag.unaryExpr([](double x) { return log_compress_value(x); });
  return spec;
}

// ---------------------------------------------------------------------------
// Filterbank

double midi_frequency(double pitch) { return 440.0 * std::pow(2.0, (pitch - 69.0) / 12.0); }

Matrix SemitoneFilterbank::dense() const {
  Matrix w = Matrix::Zero(num_bins, static_cast<Eigen::Index>(filters.size()));
  for (std::size_t f = 0; f < filters.size(); ++f)
    for (std::size_t k = 0; k < filters[f].weights.size(); ++k)
      w(filters[f].first_bin + static_cast<int>(k), static_cast<Eigen::Index>(f)) = filters[f].weights[k];
  return w;
}

Matrix SemitoneFilterbank::apply(const Matrix& spectrogram) const {
  if (spectrogram.cols() != num_bins)
    throw InputError("spectrogram has " + std::to_string(spectrogram.cols()) + " bins, filterbank expects " +
                     std::to_string(num_bins));
  Matrix out(spectrogram.rows(), static_cast<Eigen::Index>(filters.size()));
  for (Eigen::Index t = 0; t < spectrogram.rows(); ++t) {
    for (std::size_t f = 0; f < filters.size(); ++f) {
      const auto& filter = filters[f];
      double acc = 0.0;
      for (std::size_t k = 0; k < filter.weights.size(); ++k)
        acc += filter.weights[k] * spectrogram(t, filter.first_bin + static_cast<Eigen::Index>(k));
      out(t, static_cast<Eigen::Index>(f)) = acc;
    }
  }
  return out;
}

SemitoneFilterbank build_filterbank(int window_len, int sample_rate) {
  if (window_len != kShortWindow && window_len != kLongWindow)
    throw InputError("window length must be 2048 or 8192");
  SemitoneFilterbank bank;
  bank.window_len = window_len;
  bank.sample_rate = sample_rate;
  bank.num_bins = window_len / 2 + 1;
  const double bin_hz = static_cast<double>(sample_rate) / window_len;

  for (int p = kLowestPitch; p <= kHighestFilterPitch; ++p) {
    const double left = midi_frequency(p - 1);
    const double center = midi_frequency(p);
    const double right = midi_frequency(p + 1);
    SemitoneFilterbank::Filter filter;
    filter.center_pitch = p;
    filter.first_bin = -1;
    for (int k = 0; k < bank.num_bins; ++k) {
      const double f = k * bin_hz;
      double w = 0.0;
      if (f > left && f <= center) {
        w = (f - left) / (center - left);
      } else if (f > center && f < right) {
        w = (right - f) / (right - center);
      }
      if (w <= 0.0) continue;
      if (filter.first_bin < 0) filter.first_bin = k;
      filter.weights.push_back(w);
    }
    if (filter.weights.empty()) continue;
    if (!bank.filters.empty()) {
      const auto& prev = bank.filters.back();
      if (prev.first_bin == filter.first_bin && prev.weights.size() == filter.weights.size()) continue;
    }
    double sum = 0.0;
    for (double w : filter.weights) sum += w;
    for (double& w : filter.weights) w /= sum;
    bank.filters.push_back(std::move(filter));
  }
  return bank;
}

FrontendFilterbanks build_frontend_filterbanks(int sample_rate) {
  FrontendFilterbanks banks{build_filterbank(kShortWindow, sample_rate), build_filterbank(kLongWindow, sample_rate)};
  const std::size_t total = banks.short_window.size() + banks.long_window.size();
  if (total != static_cast<std::size_t>(kFilteredDims))
    throw InputError("filterbank configuration retains " + std::to_string(banks.short_window.size()) + " + " +
                     std::to_string(banks.long_window.size()) + " = " + std::to_string(total) +
                     " filters; 183 are required");
  return banks;
}

const FrontendFilterbanks& frontend_filterbanks() {
  static const FrontendFilterbanks banks = build_frontend_filterbanks();
  return banks;
}

// ---------------------------------------------------------------------------
// Standardization and the assembled input

void Standardization::apply(Matrix& values) const {
  if (values.cols() != mean.size() || mean.size() != std.size())
    throw InputError("standardization has " + std::to_string(mean.size()) + " dimensions, features have " +
                     std::to_string(values.cols()));
  for (Eigen::Index c = 0; c < values.cols(); ++c) {
    const double scale = std(c) > 1e-12 ? 1.0 / std(c) : 1.0;
    values.col(c) = (values.col(c).array() - mean(c)) * scale;
  }
}

Standardization compute_standardization(std::span<const Matrix> matrices) {
  if (matrices.empty()) throw InputError("no data for standardization");
  const Eigen::Index dims = matrices[0].cols();
  Vector sum = Vector::Zero(dims);
  double count = 0.0;
  for (const auto& m : matrices) {
    if (m.cols() != dims) throw InputError("inconsistent feature widths");
    sum += m.colwise().sum().transpose();
    count += static_cast<double>(m.rows());
  }
  if (count == 0.0) throw InputError("no frames for standardization");
  Standardization stats;
  stats.mean = sum / count;
  Vector sq = Vector::Zero(dims);
  for (const auto& m : matrices)
    sq += (m.rowwise() - stats.mean.transpose()).array().square().colwise().sum().matrix().transpose();
  stats.std = (sq / count).cwiseSqrt();
  return stats;
}

const std::string& frontend_config_hash() {
  static const std::string hash = [] {
    const auto& banks = frontend_filterbanks();
    std::string config = "sr=44100;hop=441;window=hamming;windows=2048,8192;frame=centred-zero-pad;"
                         "log=ln(1+1000x);filters=triangular-semitone-21-129-l1;diff=signed-first-zero;";
    config += "kept=" + std::to_string(banks.short_window.size()) + "+" + std::to_string(banks.long_window.size());
    return hex64(fnv1a64(config));
  }();
  return hash;
}

Matrix filtered_spectrogram(const AudioBuffer& audio) {
  if (audio.sample_rate != kSampleRate)
    throw UnsupportedRateError("unsupported sample rate " + std::to_string(audio.sample_rate));
  const auto& banks = frontend_filterbanks();
  const Matrix short_part = banks.short_window.apply(log_compress(stft_magnitude(audio, kShortWindow)).mag);
  const Matrix long_part = banks.long_window.apply(log_compress(stft_magnitude(audio, kLongWindow)).mag);
  Matrix out(short_part.rows(), short_part.cols() + long_part.cols());
  out << short_part, long_part;
  return out;
}

Matrix append_difference(const Matrix& filtered) {
  Matrix out(filtered.rows(), 2 * filtered.cols());
  out.leftCols(filtered.cols()) = filtered;
  out.rightCols(filtered.cols()).setZero();
  if (filtered.rows() > 1) {
    const Eigen::Index n = filtered.rows() - 1;
    out.bottomRightCorner(n, filtered.cols()) = filtered.bottomRows(n) - filtered.topRows(n);
  }
  return out;
}

InputMatrix frontend_features(const AudioBuffer& audio, const Standardization* stats) {
  InputMatrix input;
  input.values = append_difference(filtered_spectrogram(audio));
  input.frontend_hash = frontend_config_hash();
  if (stats != nullptr) {
    if (stats->dims() != kInputDims)
      throw InputError("standardization stats have " + std::to_string(stats->dims()) + " dimensions, expected 366");
    stats->apply(input.values);
  }
  return input;
}

// ---------------------------------------------------------------------------
// Synthesis

AudioBuffer synthesize_notes(const NoteList& notes, double tail_seconds, int sample_rate) {
  AudioBuffer audio;
  audio.sample_rate = sample_rate;
  const auto total = static_cast<std::size_t>(std::ceil((notes.end_time() + tail_seconds) * sample_rate)) + 1;
  audio.samples.assign(total, 0.0);
  constexpr double kRelease = 0.05;
  constexpr double kAttack = 0.005;
  for (const auto& n : notes) {
    const double f0 = midi_frequency(n.pitch);
    const double amp = 0.05 * n.velocity / 127.0;
    const double decay = 1.0 + (n.pitch - kLowestPitch) / 30.0;
    const auto begin = static_cast<std::size_t>(std::llround(n.onset * sample_rate));
    const auto end = std::min(total, static_cast<std::size_t>(std::llround((n.offset + kRelease) * sample_rate)));
    for (std::size_t i = begin; i < end; ++i) {
      const double t = static_cast<double>(i - begin) / sample_rate;
      double env = std::exp(-decay * t) * std::min(1.0, t / kAttack);
      const double since_off = static_cast<double>(i) / sample_rate - n.offset;
      if (since_off > 0.0) env *= std::max(0.0, 1.0 - since_off / kRelease);
      double s = 0.0;
      for (int h = 1; h <= 8 && h * f0 < 0.45 * sample_rate; ++h)
        s += std::sin(2.0 * std::numbers::pi * h * f0 * t) / h;
      audio.samples[i] += amp * env * s;
    }
  }
  return audio;
}

}  // namespace pianoalign
