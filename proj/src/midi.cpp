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


#include "pianoalign/midi.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <map>
#include <random>
#include <string>
#include <tuple>
#include <utility>

namespace pianoalign {

bool note_less(const NoteEvent& a, const NoteEvent& b) {
  return std::tie(a.onset, a.pitch, a.offset, a.velocity) <
         std::tie(b.onset, b.pitch, b.offset, b.velocity);
}

void validate_note(const NoteEvent& note) {
  if (note.pitch < kLowestPitch || note.pitch > kHighestPitch)
    throw InputError("note pitch " + std::to_string(note.pitch) + " outside 21..108");
  if (!std::isfinite(note.onset) || !std::isfinite(note.offset) || note.onset < 0.0)
    throw InputError("note onset must be finite and non-negative");
  if (!(note.offset > note.onset)) throw InputError("note offset must be after onset");
  if (note.velocity < 1 || note.velocity > 127)
    throw InputError("note velocity " + std::to_string(note.velocity) + " outside 1..127");
}

NoteList::NoteList(std::vector<NoteEvent> notes) : notes_(std::move(notes)) {
  for (const auto& n : notes_) validate_note(n);
  std::sort(notes_.begin(), notes_.end(), note_less);
}

double NoteList::end_time() const {
  double end = 0.0;
  for (const auto& n : notes_) end = std::max(end, n.offset);
  return end;
}

MidiParseError::MidiParseError(const std::string& what, std::size_t byte_offset)
    : InputError(what + " at byte " + std::to_string(byte_offset)), byte_offset_(byte_offset) {}

// ---------------------------------------------------------------------------
// Reading

namespace {

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, std::size_t pos, std::size_t end)
      : bytes_(bytes), pos_(pos), end_(end) {}

  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ >= end_; }

  std::uint8_t u8() {
    if (pos_ >= end_) throw MidiParseError("unexpected end of data", pos_);
    return bytes_[pos_++];
  }
  std::uint32_t be(int n) {
    std::uint32_t v = 0;
    for (int i = 0; i < n; ++i) v = (v << 8) | u8();
    return v;
  }
  std::uint32_t vlq() {
    const std::size_t start = pos_;
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      const std::uint8_t b = u8();
      v = (v << 7) | (b & 0x7f);
      if (!(b & 0x80)) return v;
    }
    throw MidiParseError("variable-length quantity longer than 4 bytes", start);
  }
  void skip(std::size_t n) {
    if (n > end_ - pos_) throw MidiParseError("event runs past end of chunk", pos_);
    pos_ += n;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_;
  std::size_t end_;
};

struct RawNote {
  std::uint64_t on_tick;
  std::uint64_t off_tick;
  int pitch;
  int velocity;
};

struct TrackData {
  std::vector<RawNote> notes;
  std::vector<std::pair<std::uint64_t, std::uint32_t>> tempos;  // tick, us per quarter
  std::size_t unmatched = 0;
};

TrackData parse_track(std::span<const std::uint8_t> bytes, std::size_t begin, std::size_t end) {
  TrackData track;
  ByteReader in(bytes, begin, end);
  std::map<std::pair<int, int>, std::deque<std::pair<std::uint64_t, int>>> open;
  std::uint64_t tick = 0;
  int running = -1;

  auto close_note = [&](int channel, int pitch, std::uint64_t at) {
    auto it = open.find({channel, pitch});
    if (it == open.end() || it->second.empty()) return;  // stray note-off
    auto [on_tick, velocity] = it->second.front();
    it->second.pop_front();
    track.notes.push_back({on_tick, at, pitch, velocity});
  };

  while (!in.done()) {
    tick += in.vlq();
    const std::size_t event_pos = in.pos();
    int status = in.u8();
    int first_data = -1;
    if (status < 0x80) {
      if (running < 0) throw MidiParseError("data byte without running status", event_pos);
      first_data = status;
      status = running;
    }
    auto data_byte = [&]() -> int {
      if (first_data >= 0) return std::exchange(first_data, -1);
      return in.u8();
    };
    if (status == 0xff) {
      running = -1;
      const int type = in.u8();
      const std::uint32_t len = in.vlq();
      if (type == 0x51) {
        if (len != 3) throw MidiParseError("tempo meta event must have length 3", event_pos);
        track.tempos.emplace_back(tick, in.be(3));
      } else if (type == 0x2f) {
        in.skip(len);
        break;
      } else {
        in.skip(len);
      }
      continue;
    }
    if (status == 0xf0 || status == 0xf7) {
      running = -1;
      in.skip(in.vlq());
      continue;
    }
    if (status >= 0xf0) throw MidiParseError("unsupported system message", event_pos);
    running = status;
    const int kind = status & 0xf0;
    const int channel = status & 0x0f;
    if (kind == 0xc0 || kind == 0xd0) {
      data_byte();
      continue;
    }
    const int data1 = data_byte();
    const int data2 = data_byte();
    if (data1 > 0x7f || data2 > 0x7f) throw MidiParseError("data byte out of range", event_pos);
    if (kind == 0x90 && data2 > 0) {
      open[{channel, data1}].emplace_back(tick, data2);
    } else if (kind == 0x80 || kind == 0x90) {
      close_note(channel, data1, tick);
    }
  }
  for (auto& [key, queue] : open) {
    while (!queue.empty()) {
      track.notes.push_back({queue.front().first, tick, key.second, queue.front().second});
      queue.pop_front();
      ++track.unmatched;
    }
  }
  return track;
}

// Maps ticks to seconds through a merged tempo map.
class TempoMap {
 public:
  TempoMap(int division, std::vector<std::pair<std::uint64_t, std::uint32_t>> tempos) {
    if (division & 0x8000) {
      const int frames = -static_cast<std::int8_t>((division >> 8) & 0xff);
      const int ticks_per_frame = division & 0xff;
      const double fps = frames == 29 ? 30000.0 / 1001.0 : frames;
      smpte_seconds_per_tick_ = 1.0 / (fps * ticks_per_frame);
      return;
    }
    ticks_per_quarter_ = division;
    std::stable_sort(tempos.begin(), tempos.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    segments_.push_back({0, 0.0, 500000});
    for (const auto& [tick, us] : tempos) {
      auto& last = segments_.back();
      const double at = last.seconds + seconds_in(last.us_per_quarter, tick - last.tick);
      if (tick == last.tick) {
        last.us_per_quarter = us;
      } else {
        segments_.push_back({tick, at, us});
      }
    }
  }

  double seconds(std::uint64_t tick) const {
    if (smpte_seconds_per_tick_ > 0.0) return static_cast<double>(tick) * smpte_seconds_per_tick_;
    auto it = std::upper_bound(segments_.begin(), segments_.end(), tick,
                               [](std::uint64_t t, const Segment& s) { return t < s.tick; });
    const Segment& s = *std::prev(it);
    return s.seconds + seconds_in(s.us_per_quarter, tick - s.tick);
  }

 private:
  struct Segment {
    std::uint64_t tick;
    double seconds;
    std::uint32_t us_per_quarter;
  };

  double seconds_in(std::uint32_t us_per_quarter, std::uint64_t ticks) const {
    return static_cast<double>(ticks) * us_per_quarter / (1e6 * ticks_per_quarter_);
  }

  int ticks_per_quarter_ = 480;
  double smpte_seconds_per_tick_ = 0.0;
  std::vector<Segment> segments_;
};

}  // namespace

SmfParseResult parse_smf(std::span<const std::uint8_t> bytes, const SmfReadOptions& options) {
  SmfParseResult result;
  ByteReader header(bytes, 0, bytes.size());
  if (bytes.size() < 14 || header.be(4) != 0x4d546864)  // "MThd"
    throw MidiParseError("missing MThd header", 0);
  const std::uint32_t header_len = header.be(4);
  if (header_len < 6) throw MidiParseError("MThd chunk too short", 4);
  result.format = static_cast<int>(header.be(2));
  const std::uint32_t n_tracks = header.be(2);
  result.division = static_cast<int>(header.be(2));
  if (result.format != 0 && result.format != 1)
    throw MidiParseError("unsupported SMF format " + std::to_string(result.format), 8);
  if (result.division == 0) throw MidiParseError("zero time division", 12);
  header.skip(header_len - 6);

  std::vector<RawNote> raw;
  std::vector<std::pair<std::uint64_t, std::uint32_t>> tempos;
  std::size_t pos = header.pos();
  std::uint32_t tracks_seen = 0;
  while (pos < bytes.size() && tracks_seen < n_tracks) {
    if (bytes.size() - pos < 8) throw MidiParseError("truncated chunk header", pos);
    ByteReader chunk(bytes, pos, bytes.size());
    const std::uint32_t id = chunk.be(4);
    const std::uint32_t len = chunk.be(4);
    const std::size_t body = pos + 8;
    if (len > bytes.size() - body) throw MidiParseError("chunk length exceeds file size", pos + 4);
    if (id == 0x4d54726b) {  // "MTrk"
      TrackData track = parse_track(bytes, body, body + len);
      raw.insert(raw.end(), track.notes.begin(), track.notes.end());
      tempos.insert(tempos.end(), track.tempos.begin(), track.tempos.end());
      result.unmatched_note_ons += track.unmatched;
      ++tracks_seen;
    }
    pos = body + len;
  }
  if (tracks_seen < n_tracks) throw MidiParseError("file ends before all declared tracks", pos);

  const TempoMap tempo(result.division, std::move(tempos));
  std::vector<NoteEvent> notes;
  notes.reserve(raw.size());
  for (const auto& r : raw) {
    NoteEvent note{r.pitch, tempo.seconds(r.on_tick), tempo.seconds(r.off_tick), r.velocity};
    if (!(note.offset > note.onset)) {
      ++result.dropped_notes;
      continue;
    }
    if (note.pitch < kLowestPitch || note.pitch > kHighestPitch) {
      switch (options.out_of_range) {
        case PitchPolicy::kDrop:
          ++result.dropped_notes;
          continue;
        case PitchPolicy::kClamp:
          note.pitch = std::clamp(note.pitch, kLowestPitch, kHighestPitch);
          break;
        case PitchPolicy::kReject:
          throw MidiParseError("note pitch " + std::to_string(note.pitch) + " outside the piano range", 0);
      }
    }
    notes.push_back(note);
  }
  result.notes = NoteList(std::move(notes));
  return result;
}

// ---------------------------------------------------------------------------
// Writing

namespace {

void put_be(std::vector<std::uint8_t>& out, std::uint32_t v, int n) {
  for (int i = n - 1; i >= 0; --i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_vlq(std::vector<std::uint8_t>& out, std::uint32_t v) {
  std::array<std::uint8_t, 5> buf{};
  int n = 0;
  buf[n++] = v & 0x7f;
  while (v >>= 7) buf[n++] = static_cast<std::uint8_t>((v & 0x7f) | 0x80);
  while (n > 0) out.push_back(buf[--n]);
}

}  // namespace

std::vector<std::uint8_t> write_smf(const NoteList& notes, int ticks_per_quarter) {
  if (ticks_per_quarter <= 0 || ticks_per_quarter > 0x7fff)
    throw InputError("ticks per quarter must be in 1..32767");
  const double ticks_per_second = 2.0 * ticks_per_quarter;  // 120 bpm

  struct Event {
    std::uint64_t tick;
    int is_on;  // offs sort first at equal ticks
    int channel;
    int pitch;
    int velocity;
  };
  std::vector<Event> events;
  events.reserve(2 * notes.size());
  // Channel 9 is left alone (GM percussion).
  std::array<std::array<std::uint64_t, 128>, 16> busy_until{};
  for (const auto& n : notes) {
    const auto on = static_cast<std::uint64_t>(std::llround(n.onset * ticks_per_second));
    const auto off = std::max<std::uint64_t>(on + 1, std::llround(n.offset * ticks_per_second));
    int channel = 0;
    for (int c = 0; c < 16; ++c) {
      if (c == 9) continue;
      if (busy_until[c][n.pitch] <= on) {
        channel = c;
        break;
      }
    }
    busy_until[channel][n.pitch] = off;
    events.push_back({on, 1, channel, n.pitch, std::clamp(n.velocity, 1, 127)});
    events.push_back({off, 0, channel, n.pitch, 0});
  }
  std::sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
    return std::tie(a.tick, a.is_on, a.channel, a.pitch) < std::tie(b.tick, b.is_on, b.channel, b.pitch);
  });

  std::vector<std::uint8_t> track;
  put_vlq(track, 0);
  track.insert(track.end(), {0xff, 0x51, 0x03});
  put_be(track, 500000, 3);
  std::uint64_t last = 0;
  for (const auto& e : events) {
    const std::uint64_t delta = e.tick - last;
    if (delta > 0x0fffffff) throw InputError("note time too large for SMF delta encoding");
    put_vlq(track, static_cast<std::uint32_t>(delta));
    last = e.tick;
    track.push_back(static_cast<std::uint8_t>((e.is_on ? 0x90 : 0x80) | e.channel));
    track.push_back(static_cast<std::uint8_t>(e.pitch));
    track.push_back(static_cast<std::uint8_t>(e.velocity));
  }
  put_vlq(track, 0);
  track.insert(track.end(), {0xff, 0x2f, 0x00});

  std::vector<std::uint8_t> out;
  out.reserve(track.size() + 22);
  put_be(out, 0x4d546864, 4);
  put_be(out, 6, 4);
  put_be(out, 0, 2);
  put_be(out, 1, 2);
  put_be(out, static_cast<std::uint32_t>(ticks_per_quarter), 2);
  put_be(out, 0x4d54726b, 4);
  put_be(out, static_cast<std::uint32_t>(track.size()), 4);
  out.insert(out.end(), track.begin(), track.end());
  return out;
}

SmfParseResult read_midi_file(const std::filesystem::path& path, const SmfReadOptions& options) {
  const auto bytes = read_binary_file(path);
  return parse_smf(bytes, options);
}

void write_midi_file(const std::filesystem::path& path, const NoteList& notes, int ticks_per_quarter) {
  write_binary_file(path, write_smf(notes, ticks_per_quarter));
}

// ---------------------------------------------------------------------------
// Labels

namespace {
// Absorbs representation error in products like 0.1 * 100.
constexpr double kFrameEps = 1e-9;
}  // namespace

const Matrix& LabelSet::targets(Mode target) const {
  return target == Mode::kOnset12 ? onset_labels : frame_labels;
}

int frame_of(double seconds, int fps) {
  return static_cast<int>(std::floor(seconds * fps + kFrameEps));
}

int frames_for(const NoteList& notes, int fps) {
  return static_cast<int>(std::ceil(notes.end_time() * fps - kFrameEps)) + 1;
}

LabelSet to_labels(const NoteList& notes, Mode mode, int n_frames) {
  if (n_frames < 0) throw InputError("negative frame count");
  LabelSet labels;
  labels.mode = mode;
  const int width = mode_width(mode);
  labels.frame_labels = Matrix::Zero(n_frames, width);
  labels.onset_labels = Matrix::Zero(n_frames, kNumChroma);
  const double fps = labels.fps;
  for (const auto& n : notes) {
    const int column = mode == Mode::kNote88 ? n.pitch - kLowestPitch : n.pitch % kNumChroma;
    const int first = std::max(0, static_cast<int>(std::ceil(n.onset * fps - kFrameEps)));
    const int last = std::min(n_frames, static_cast<int>(std::ceil(n.offset * fps - kFrameEps)));
    for (int t = first; t < last; ++t) labels.frame_labels(t, column) = 1.0;
    const int onset_frame = frame_of(n.onset, labels.fps);
    if (onset_frame < n_frames) labels.onset_labels(onset_frame, n.pitch % kNumChroma) = 1.0;
  }
  return labels;
}

// ---------------------------------------------------------------------------
// Distortion

DistortionMap::DistortionMap(std::vector<std::pair<double, double>> anchors) : anchors_(std::move(anchors)) {
  if (anchors_.empty()) throw InputError("distortion map needs at least one anchor");
  for (std::size_t k = 1; k < anchors_.size(); ++k) {
    const auto& [a0, b0] = anchors_[k - 1];
    const auto& [a1, b1] = anchors_[k];
    if (!(a1 > a0) || !(b1 > b0)) throw InputError("distortion anchors must be strictly increasing");
    factors_.push_back((b1 - b0) / (a1 - a0));
  }
}

double DistortionMap::factor_at(double original) const {
  if (factors_.empty()) return 1.0;
  auto it = std::upper_bound(anchors_.begin(), anchors_.end(), original,
                             [](double t, const auto& a) { return t < a.first; });
  std::size_t seg = it == anchors_.begin() ? 0 : static_cast<std::size_t>(it - anchors_.begin()) - 1;
  return factors_[std::min(seg, factors_.size() - 1)];
}

double DistortionMap::forward(double original) const {
  if (anchors_.empty()) return original;
  auto it = std::upper_bound(anchors_.begin(), anchors_.end(), original,
                             [](double t, const auto& a) { return t < a.first; });
  const std::size_t k = it == anchors_.begin() ? 0 : static_cast<std::size_t>(it - anchors_.begin()) - 1;
  const auto& [a, b] = anchors_[k];
  return b + (original - a) * factor_at(original);
}

double DistortionMap::inverse(double distorted) const {
  if (anchors_.empty()) return distorted;
  auto it = std::upper_bound(anchors_.begin(), anchors_.end(), distorted,
                             [](double t, const auto& a) { return t < a.second; });
  const std::size_t k = it == anchors_.begin() ? 0 : static_cast<std::size_t>(it - anchors_.begin()) - 1;
  const auto& [a, b] = anchors_[k];
  const double factor = factors_.empty() ? 1.0 : factors_[std::min(k, factors_.size() - 1)];
  return a + (distorted - b) / factor;
}

namespace {

// Concurrent sets are onsets equal on the tick grid. Notes are sorted by
// onset, so each set is a contiguous run anchored at its earliest onset.
std::vector<double> group_onsets(const NoteList& notes, double grid_seconds) {
  if (!(grid_seconds > 0.0)) throw InputError("grid must be positive");
  std::vector<double> onsets;
  long long last_key = -1;
  for (const auto& n : notes) {
    const long long key = std::llround(n.onset / grid_seconds);
    if (onsets.empty() || key != last_key) onsets.push_back(n.onset);
    last_key = key;
  }
  return onsets;
}

}  // namespace

std::size_t interval_count(const NoteList& notes, double grid_seconds) {
  const auto onsets = group_onsets(notes, grid_seconds);
  return onsets.empty() ? 0 : onsets.size() - 1;
}

DistortedScore apply_interval_factors(const NoteList& notes, std::span<const double> factors, double grid_seconds) {
  if (notes.empty()) throw InputError("cannot distort an empty score");
  const auto onsets = group_onsets(notes, grid_seconds);
  if (factors.size() != onsets.size() - 1)
    throw InputError("expected " + std::to_string(onsets.size() - 1) + " interval factors, got " +
                     std::to_string(factors.size()));
  std::vector<std::pair<double, double>> anchors;
  anchors.reserve(onsets.size());
  anchors.emplace_back(onsets[0], onsets[0]);
  for (std::size_t k = 1; k < onsets.size(); ++k) {
    if (!(factors[k - 1] > 0.0)) throw InputError("interval factors must be positive");
    anchors.emplace_back(onsets[k], anchors.back().second + factors[k - 1] * (onsets[k] - onsets[k - 1]));
  }
  DistortionMap map(std::move(anchors));

  std::vector<NoteEvent> out;
  out.reserve(notes.size());
  for (const auto& n : notes) {
    NoteEvent d = n;
    d.onset = std::max(0.0, map.forward(n.onset));
    d.offset = d.onset + (n.offset - n.onset) * map.factor_at(n.onset);
    out.push_back(d);
  }
  return {NoteList(std::move(out)), std::move(map)};
}

DistortedScore distort_score(const NoteList& notes, std::uint64_t seed, const DistortionOptions& options) {
  if (notes.empty()) throw InputError("cannot distort an empty score");
  if (!(options.min_factor > 0.0) || options.max_factor < options.min_factor)
    throw InputError("distortion range must satisfy 0 < min <= max");
  std::mt19937_64 rng(seed);
  std::vector<double> factors(interval_count(notes, options.grid_seconds));
  for (double& f : factors) f = options.min_factor + (options.max_factor - options.min_factor) * unit_uniform(rng);
  return apply_interval_factors(notes, factors, options.grid_seconds);
}

}  // namespace pianoalign
