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
#include <cstdint>
#include <vector>

#include "doctest.h"
#include "pianoalign/midi.hpp"
#include "support.hpp"

using namespace pianoalign;
using pianoalign::testing::random_notes;

namespace {

using Bytes = std::vector<std::uint8_t>;

void put_be(Bytes& out, std::uint32_t v, int n) {
  for (int i = n - 1; i >= 0; --i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_vlq(Bytes& out, std::uint32_t v) {
  Bytes tmp{static_cast<std::uint8_t>(v & 0x7f)};
  while (v >>= 7) tmp.push_back(static_cast<std::uint8_t>(0x80 | (v & 0x7f)));
  out.insert(out.end(), tmp.rbegin(), tmp.rend());
}

Bytes header(int format, int tracks, int division) {
  Bytes out{'M', 'T', 'h', 'd'};
  put_be(out, 6, 4);
  put_be(out, static_cast<std::uint32_t>(format), 2);
  put_be(out, static_cast<std::uint32_t>(tracks), 2);
  put_be(out, static_cast<std::uint32_t>(division), 2);
  return out;
}

void append_track(Bytes& file, const Bytes& events) {
  file.insert(file.end(), {'M', 'T', 'r', 'k'});
  put_be(file, static_cast<std::uint32_t>(events.size()), 4);
  file.insert(file.end(), events.begin(), events.end());
}

Bytes tempo_event(std::uint32_t delta, std::uint32_t us_per_quarter) {
  Bytes e;
  put_vlq(e, delta);
  e.insert(e.end(), {0xff, 0x51, 0x03});
  put_be(e, us_per_quarter, 3);
  return e;
}

Bytes end_of_track() { return {0x00, 0xff, 0x2f, 0x00}; }

Bytes cat(std::initializer_list<Bytes> parts) {
  Bytes out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

Bytes channel_event(std::uint32_t delta, Bytes message) {
  Bytes e;
  put_vlq(e, delta);
  e.insert(e.end(), message.begin(), message.end());
  return e;
}

// Minimal independent decoder of a type-0 file: absolute ticks of channel
// note messages as (tick, status, pitch, velocity).
struct RawEvent {
  std::uint32_t tick;
  int status;
  int pitch;
  int velocity;
};

std::vector<RawEvent> raw_note_events(const Bytes& file, int* track_count) {
  std::size_t pos = 14;
  std::vector<RawEvent> out;
  *track_count = 0;
  while (pos + 8 <= file.size()) {
    const std::uint32_t len = (file[pos + 4] << 24) | (file[pos + 5] << 16) | (file[pos + 6] << 8) | file[pos + 7];
    ++*track_count;
    std::size_t p = pos + 8;
    const std::size_t end = p + len;
    std::uint32_t tick = 0;
    int status = 0;
    while (p < end) {
      std::uint32_t delta = 0;
      std::uint8_t b;
      do {
        b = file[p++];
        delta = (delta << 7) | (b & 0x7f);
      } while (b & 0x80);
      tick += delta;
      if (file[p] == 0xff) {
        p += 3 + file[p + 2];
        continue;
      }
      if (file[p] & 0x80) status = file[p++];
      out.push_back({tick, status, file[p], file[p + 1]});
      p += 2;
    }
    pos = end;
  }
  return out;
}

}  // namespace

TEST_CASE("single C4 at 500000 us per quarter lasts half a second") {
  Bytes file = header(0, 1, 480);
  append_track(file, cat({tempo_event(0, 500000), channel_event(0, {0x90, 60, 64}),
                          channel_event(480, {0x80, 60, 64}), end_of_track()}));
  const auto result = parse_smf(file);
  REQUIRE(result.notes.size() == 1);
  CHECK(result.notes[0].pitch == 60);
  CHECK(result.notes[0].onset == doctest::Approx(0.0));
  CHECK(result.notes[0].offset == doctest::Approx(0.5));
  CHECK(result.notes[0].velocity == 64);
  CHECK_FALSE(result.has_warnings());
}

TEST_CASE("running status and velocity-zero note-off") {
  Bytes file = header(0, 1, 96);
  Bytes track = cat({tempo_event(0, 1000000), channel_event(0, {0x90, 64, 100})});
  track.insert(track.end(), {96, 67, 90});   // running status note-on
  track.insert(track.end(), {96, 64, 0});    // velocity 0 closes 64
  track.insert(track.end(), {48, 67, 0});
  append_track(file, cat({track, end_of_track()}));
  const auto notes = parse_smf(file).notes;
  REQUIRE(notes.size() == 2);
  // 96 ticks per quarter at 1 s per quarter.
  CHECK(notes[0].pitch == 64);
  CHECK(notes[0].offset == doctest::Approx(2.0));
  CHECK(notes[1].pitch == 67);
  CHECK(notes[1].onset == doctest::Approx(1.0));
  CHECK(notes[1].offset == doctest::Approx(2.5));
}

TEST_CASE("type 1 tempo map from the conductor track applies to all tracks") {
  Bytes file = header(1, 2, 480);
  append_track(file, cat({tempo_event(0, 500000), tempo_event(960, 250000), end_of_track()}));
  append_track(file, cat({channel_event(480, {0x91, 72, 80}), channel_event(960, {0x81, 72, 0}), end_of_track()}));
  const auto result = parse_smf(file);
  REQUIRE(result.notes.size() == 1);
  CHECK(result.format == 1);
  // Onset at tick 480: 0.5 s. Offset at tick 1440: 1.0 s + 480 ticks at 0.25 s per quarter.
  CHECK(result.notes[0].onset == doctest::Approx(0.5));
  CHECK(result.notes[0].offset == doctest::Approx(1.25));
}

TEST_CASE("default tempo is 120 bpm when no tempo event is present") {
  Bytes file = header(0, 1, 480);
  append_track(file, cat({channel_event(960, {0x90, 60, 64}), channel_event(480, {0x80, 60, 64}), end_of_track()}));
  const auto notes = parse_smf(file).notes;
  REQUIRE(notes.size() == 1);
  CHECK(notes[0].onset == doctest::Approx(1.0));
  CHECK(notes[0].offset == doctest::Approx(1.5));
}

TEST_CASE("file with zero notes parses to an empty list") {
  Bytes file = header(0, 1, 480);
  append_track(file, cat({tempo_event(0, 500000), end_of_track()}));
  CHECK(parse_smf(file).notes.empty());
}

TEST_CASE("unmatched note-on is closed at end of track and flagged") {
  Bytes file = header(0, 1, 480);
  append_track(file, cat({channel_event(0, {0x90, 60, 64}), channel_event(480, {0xff, 0x2f, 0x00})}));
  const auto result = parse_smf(file);
  REQUIRE(result.notes.size() == 1);
  CHECK(result.unmatched_note_ons == 1);
  CHECK(result.has_warnings());
  CHECK(result.notes[0].offset == doctest::Approx(0.5));
}

TEST_CASE("malformed input reports a byte offset") {
  SUBCASE("bad magic") {
    Bytes file = header(0, 1, 480);
    file[0] = 'X';
    CHECK_THROWS_AS(parse_smf(file), MidiParseError);
  }
  SUBCASE("truncated track") {
    Bytes file = header(0, 1, 480);
    append_track(file, cat({channel_event(0, {0x90, 60, 64}), end_of_track()}));
    file.resize(file.size() - 3);
    try {
      parse_smf(file);
      FAIL("expected a parse error");
    } catch (const MidiParseError& e) {
      CHECK(e.byte_offset() >= 14);
      CHECK(e.byte_offset() <= file.size());
    }
  }
  SUBCASE("type 2 is not supported") {
    Bytes file = header(2, 1, 480);
    append_track(file, end_of_track());
    CHECK_THROWS_AS(parse_smf(file), MidiParseError);
  }
}

TEST_CASE("pitch policy for notes outside the piano range") {
  Bytes file = header(0, 1, 480);
  append_track(file, cat({channel_event(0, {0x90, 10, 64}), channel_event(0, {0x90, 60, 64}),
                          channel_event(480, {0x80, 10, 0}), channel_event(0, {0x80, 60, 0}), end_of_track()}));
  SmfReadOptions drop;
  const auto dropped = parse_smf(file, drop);
  CHECK(dropped.notes.size() == 1);
  CHECK(dropped.dropped_notes == 1);
  SmfReadOptions clamp{PitchPolicy::kClamp};
  const auto clamped = parse_smf(file, clamp);
  REQUIRE(clamped.notes.size() == 2);
  CHECK(clamped.notes[0].pitch == kLowestPitch);
  SmfReadOptions reject{PitchPolicy::kReject};
  CHECK_THROWS_AS(parse_smf(file, reject), MidiParseError);
}

TEST_CASE("write_smf of an empty list has no note events") {
  const Bytes file = write_smf(NoteList{});
  int tracks = 0;
  CHECK(raw_note_events(file, &tracks).empty());
  CHECK(tracks == 1);
  CHECK(file[9] == 0);  // format 0
  CHECK(Bytes(file.end() - 3, file.end()) == Bytes{0xff, 0x2f, 0x00});
  CHECK(parse_smf(file).notes.empty());
}

TEST_CASE("a half-second note at 480 tpq and 120 bpm ends at tick 480") {
  const Bytes file = write_smf(NoteList({{60, 0.0, 0.5, 64}}), 480);
  int tracks = 0;
  const auto events = raw_note_events(file, &tracks);
  REQUIRE(events.size() == 2);
  CHECK((events[0].status & 0xf0) == 0x90);
  CHECK(events[0].tick == 0);
  const bool is_off = (events[1].status & 0xf0) == 0x80 || events[1].velocity == 0;
  CHECK(is_off);
  CHECK(events[1].tick == 480);
}

TEST_CASE("write then parse round trip holds within one tick for 100 random lists") {
  std::mt19937_64 rng(7);
  const double tick = 1.0 / 960.0;
  for (int trial = 0; trial < 100; ++trial) {
    // Distinct onsets stay more than a tick apart so quantization keeps the order.
    const NoteList notes = random_notes(rng, 1 + trial % 40, 20.0, 0.0023);
    const NoteList back = parse_smf(write_smf(notes)).notes;
    REQUIRE(back.size() == notes.size());
    for (std::size_t k = 0; k < notes.size(); ++k) {
      CHECK(back[k].pitch == notes[k].pitch);
      CHECK(std::abs(back[k].onset - notes[k].onset) <= tick);
      CHECK(std::abs(back[k].offset - notes[k].offset) <= tick);
    }
    // Reparse of a reparse is exact.
    CHECK(parse_smf(write_smf(back)).notes == back);
  }
}

TEST_CASE("NoteList sorts and validates") {
  const NoteList list({{64, 1.0, 2.0, 10}, {60, 1.0, 1.5, 10}, {72, 0.5, 0.6, 10}});
  CHECK(list[0].pitch == 72);
  CHECK(list[1].pitch == 60);
  CHECK(list[2].pitch == 64);
  CHECK(list.end_time() == 2.0);
  CHECK_THROWS_AS(NoteList({{60, 1.0, 1.0, 10}}), InputError);
  CHECK_THROWS_AS(NoteList({{20, 0.0, 1.0, 10}}), InputError);
  CHECK_THROWS_AS(NoteList({{60, -0.1, 1.0, 10}}), InputError);
  CHECK_THROWS_AS(NoteList({{60, 0.0, 1.0, 0}}), InputError);
}

TEST_CASE("labels of a single note") {
  const NoteList notes({{60, 0.10, 0.20, 64}});
  const LabelSet labels = to_labels(notes, Mode::kNote88, 30);
  CHECK(labels.fps == 100);
  for (int t = 0; t < 30; ++t)
    for (int k = 0; k < kNumKeys; ++k) CHECK(labels.frame_labels(t, k) == ((k == 39 && t >= 10 && t < 20) ? 1.0 : 0.0));
  for (int t = 0; t < 30; ++t)
    for (int c = 0; c < kNumChroma; ++c) CHECK(labels.onset_labels(t, c) == ((t == 10 && c == 0) ? 1.0 : 0.0));
}

TEST_CASE("labels of an empty list are zero") {
  const LabelSet labels = to_labels(NoteList{}, Mode::kChroma12, 12);
  CHECK(labels.frame_labels.rows() == 12);
  CHECK(labels.frame_labels.cols() == 12);
  CHECK(labels.frame_labels.isZero());
  CHECK(labels.onset_labels.isZero());
}

TEST_CASE("octave-related notes share one chroma column") {
  const NoteList notes({{60, 0.0, 0.1, 64}, {72, 0.0, 0.1, 64}});
  const LabelSet labels = to_labels(notes, Mode::kChroma12, 15);
  CHECK(labels.frame_labels.col(0).head(10).minCoeff() == 1.0);
  CHECK(labels.frame_labels.sum() == 10.0);
  CHECK(labels.onset_labels.row(0).sum() == 1.0);
  CHECK(labels.onset_labels(0, 0) == 1.0);
}

TEST_CASE("folded note labels bound chroma labels and frame count is mode independent") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const NoteList notes = random_notes(rng, 30, 5.0, 0.003);
    const int frames = frames_for(notes);
    const LabelSet keys = to_labels(notes, Mode::kNote88, frames);
    const LabelSet chroma = to_labels(notes, Mode::kChroma12, frames);
    REQUIRE(keys.frame_labels.rows() == chroma.frame_labels.rows());
    for (int t = 0; t < frames; ++t)
      for (int c = 0; c < kNumChroma; ++c) {
        double folded = 0.0;
        for (int k = 0; k < kNumKeys; ++k)
          if ((k + kLowestPitch) % 12 == c) folded += keys.frame_labels(t, k);
        CHECK(folded >= chroma.frame_labels(t, c));
        CHECK((folded > 0.0) == (chroma.frame_labels(t, c) > 0.0));
      }
    CHECK(keys.onset_labels == chroma.onset_labels);
  }
}

TEST_CASE("sounding frames follow onset <= t/fps < offset") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const NoteList notes = random_notes(rng, 10, 3.0, 0.0037);
    const int frames = frames_for(notes);
    const LabelSet labels = to_labels(notes, Mode::kNote88, frames);
    for (int t = 0; t < frames; ++t)
      for (int k = 0; k < kNumKeys; ++k) {
        bool sounding = false;
        for (const auto& n : notes)
          sounding |= n.pitch - kLowestPitch == k && n.onset <= t / 100.0 + 1e-9 && t / 100.0 < n.offset - 1e-9;
        CHECK(labels.frame_labels(t, k) == (sounding ? 1.0 : 0.0));
      }
  }
}

TEST_CASE("identity distortion range returns the input") {
  std::mt19937_64 rng(3);
  const NoteList notes = random_notes(rng, 50, 10.0, 1.0 / 960.0);
  const DistortedScore d = distort_score(notes, 99, {1.0, 1.0});
  REQUIRE(d.notes.size() == notes.size());
  for (std::size_t k = 0; k < notes.size(); ++k) {
    CHECK(d.notes[k].pitch == notes[k].pitch);
    CHECK(d.notes[k].onset == doctest::Approx(notes[k].onset).epsilon(1e-12));
    CHECK(d.notes[k].offset == doctest::Approx(notes[k].offset).epsilon(1e-12));
  }
  CHECK(write_smf(d.notes) == write_smf(notes));
}

TEST_CASE("interval factors 0.7 then 1.3 move groups at 0, 1, 2 s to 0, 0.7, 2.0 s") {
  const NoteList notes({{60, 0.0, 0.5, 64}, {64, 0.0, 0.5, 64}, {62, 1.0, 1.5, 64}, {65, 2.0, 2.4, 64}});
  REQUIRE(interval_count(notes) == 2);
  const std::vector<double> factors{0.7, 1.3};
  const DistortedScore d = apply_interval_factors(notes, factors);
  CHECK(d.notes[0].onset == doctest::Approx(0.0));
  CHECK(d.notes[1].onset == doctest::Approx(0.0));
  CHECK(d.notes[2].onset == doctest::Approx(0.7));
  CHECK(d.notes[3].onset == doctest::Approx(2.0));
  // Durations scale with the factor of the interval holding the onset.
  CHECK(d.notes[0].offset == doctest::Approx(0.35));
  CHECK(d.notes[2].offset == doctest::Approx(0.7 + 0.5 * 1.3));
  CHECK(d.map.factors() == factors);
}

TEST_CASE("distortion is seeded, bounded and invertible") {
  std::mt19937_64 rng(21);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const NoteList notes = random_notes(rng, 60, 30.0, 1.0 / 960.0);
    const DistortedScore d = distort_score(notes, seed);
    const DistortedScore again = distort_score(notes, seed);
    CHECK(d.notes == again.notes);
    const auto& anchors = d.map.anchors();
    for (std::size_t k = 1; k < anchors.size(); ++k) {
      const double ratio = (anchors[k].second - anchors[k - 1].second) / (anchors[k].first - anchors[k - 1].first);
      CHECK(ratio >= 0.7 - 1e-12);
      CHECK(ratio <= 1.3 + 1e-12);
    }
    for (std::size_t k = 0; k < notes.size(); ++k) {
      // Sorting keeps (onset, pitch) order because the map is increasing.
      CHECK(d.notes[k].pitch == notes[k].pitch);
      CHECK(std::abs(d.map.inverse(d.notes[k].onset) - notes[k].onset) <= 1e-9);
    }
  }
}

TEST_CASE("distortion rejects empty input and bad ranges") {
  CHECK_THROWS_AS(distort_score(NoteList{}, 1), InputError);
  const NoteList one({{60, 0.0, 1.0, 64}});
  CHECK_THROWS_AS(distort_score(one, 1, {1.3, 0.7}), InputError);
  CHECK(distort_score(one, 1).notes == one);
}

TEST_CASE("distortion map rejects non-increasing anchors") {
  CHECK_THROWS_AS(DistortionMap({{0.0, 0.0}, {1.0, 0.0}}), InputError);
  const DistortionMap map({{0.0, 0.0}, {1.0, 2.0}});
  CHECK(map.forward(0.5) == doctest::Approx(1.0));
  CHECK(map.inverse(3.0) == doctest::Approx(1.5));
}
