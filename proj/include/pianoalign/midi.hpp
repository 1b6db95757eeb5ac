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
#include <span>
#include <utility>
#include <vector>

#include "pianoalign/common.hpp"

namespace pianoalign {

/// One sounding note. Times are absolute seconds.
struct NoteEvent {
  int pitch = 60;
  double onset = 0.0;
  double offset = 0.0;
  int velocity = 64;

  friend bool operator==(const NoteEvent&, const NoteEvent&) = default;
};

/// Ordering used by NoteList: onset, then pitch (offset and velocity break
/// remaining ties so the order is total).
bool note_less(const NoteEvent& a, const NoteEvent& b);

/// Throws InputError unless 21 <= pitch <= 108, onset >= 0, offset > onset
/// and 1 <= velocity <= 127.
void validate_note(const NoteEvent& note);

/// Validated notes kept sorted by (onset, pitch).
class NoteList {
 public:
  NoteList() = default;
  explicit NoteList(std::vector<NoteEvent> notes);

  const std::vector<NoteEvent>& notes() const { return notes_; }
  std::size_t size() const { return notes_.size(); }
  bool empty() const { return notes_.empty(); }
  const NoteEvent& operator[](std::size_t i) const { return notes_[i]; }
  auto begin() const { return notes_.begin(); }
  auto end() const { return notes_.end(); }

  /// Latest offset, 0 for an empty list.
  double end_time() const;

  friend bool operator==(const NoteList&, const NoteList&) = default;

 private:
  std::vector<NoteEvent> notes_;
};

// ---------------------------------------------------------------------------
// Standard MIDI Files

class MidiParseError : public InputError {
 public:
  MidiParseError(const std::string& what, std::size_t byte_offset);
  std::size_t byte_offset() const { return byte_offset_; }

 private:
  std::size_t byte_offset_;
};

enum class PitchPolicy {
  kDrop,    // skip notes outside 21..108
  kClamp,   // move them to the nearest piano key
  kReject,  // throw MidiParseError
};

struct SmfReadOptions {
  PitchPolicy out_of_range = PitchPolicy::kDrop;
};

struct SmfParseResult {
  NoteList notes;
  int format = 0;
  int division = 480;
  std::size_t unmatched_note_ons = 0;  // closed at end of track
  std::size_t dropped_notes = 0;       // out of range or zero length

  bool has_warnings() const { return unmatched_note_ons > 0 || dropped_notes > 0; }
};

/// Parses a type-0 or type-1 file. Note-on with velocity 0 is a note-off;
/// overlapping notes of one (channel, pitch) pair first-in first-out.
SmfParseResult parse_smf(std::span<const std::uint8_t> bytes, const SmfReadOptions& options = {});

/// Type-0, single track, 120 bpm. Same-pitch overlaps are spread over
/// channels so they survive a reparse.
std::vector<std::uint8_t> write_smf(const NoteList& notes, int ticks_per_quarter = 480);

SmfParseResult read_midi_file(const std::filesystem::path& path, const SmfReadOptions& options = {});
void write_midi_file(const std::filesystem::path& path, const NoteList& notes, int ticks_per_quarter = 480);

// ---------------------------------------------------------------------------
// Frame labels

/// Piano-roll targets at 100 fps.
struct LabelSet {
  Matrix frame_labels;  // frames x 88 (note88) or frames x 12
  Matrix onset_labels;  // frames x 12
  Mode mode = Mode::kNote88;
  int fps = kFramesPerSecond;

  /// Rows of the block a network of `target` mode is trained on.
  const Matrix& targets(Mode target) const;
};

/// Frame index of the frame containing time `seconds`.
int frame_of(double seconds, int fps = kFramesPerSecond);

/// Frame count covering every offset of `notes`: ceil(end * fps) + 1.
int frames_for(const NoteList& notes, int fps = kFramesPerSecond);

/// frame_labels[t][k] = 1 iff some note of class k has onset <= t/fps < offset;
/// onset_labels[t][c] = 1 at the frame containing an onset of chroma c.
/// kOnset12 builds chroma frame labels. Notes past `n_frames` are clipped.
LabelSet to_labels(const NoteList& notes, Mode mode, int n_frames);

// ---------------------------------------------------------------------------
// Score distortion

/// Monotone piecewise-linear time map from original to distorted time.
/// Outside the anchor range the first/last segment slope is extended.
class DistortionMap {
 public:
  DistortionMap() = default;
  /// Anchors must be strictly increasing in both coordinates.
  explicit DistortionMap(std::vector<std::pair<double, double>> anchors);

  double forward(double original) const;
  double inverse(double distorted) const;
  /// Slope of the segment whose original interval contains `original`.
  double factor_at(double original) const;

  const std::vector<std::pair<double, double>>& anchors() const { return anchors_; }
  const std::vector<double>& factors() const { return factors_; }

 private:
  std::vector<std::pair<double, double>> anchors_;
  std::vector<double> factors_;
};

struct DistortionOptions {
  double min_factor = 0.7;
  double max_factor = 1.3;
  /// Onsets equal on this grid form one concurrent set (one tick at 480 tpq, 120 bpm).
  double grid_seconds = 1.0 / 960.0;
};

struct DistortedScore {
  NoteList notes;
  DistortionMap map;
};

/// Number of intervals between successive concurrent sets.
std::size_t interval_count(const NoteList& notes, double grid_seconds = DistortionOptions{}.grid_seconds);

/// Distortion with caller-chosen factors, one per interval.
DistortedScore apply_interval_factors(const NoteList& notes, std::span<const double> factors,
                                      double grid_seconds = DistortionOptions{}.grid_seconds);

/// Scales each interval between successive concurrent note sets by an
/// independent uniform factor. Durations scale with the factor of the
/// interval in which the note starts.
DistortedScore distort_score(const NoteList& notes, std::uint64_t seed, const DistortionOptions& options = {});

}  // namespace pianoalign
