// Copyright 2026 msdiar authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "msdiar/core.hpp"
#include "msdiar/random.hpp"
#include "msdiar/scorer.hpp"
#include "testutil.hpp"

using namespace msdiar;

namespace {

SpeakerTimeline timeline(std::string id,
                         std::vector<std::tuple<std::string, double, double>> rows) {
  std::vector<TimelineEntry> entries;
  for (auto& [spk, on, off] : rows) {
    entries.push_back({spk, make_interval(on, off)});
  }
  return merge_speaker_intervals(std::move(id), std::move(entries));
}

}  // namespace

TEST_CASE("der hand-checked splits and perfect matches") {
  SUBCASE("one reference speaker split across two hypothesis speakers") {
    const auto ref = timeline("s", {{"A", 0.0, 10.0}});
    const auto hyp = timeline("s", {{"h1", 0.0, 5.0}, {"h2", 5.0, 10.0}});
    const auto b = score::der(ref, hyp, score::full_setup());
    // Best mapping keeps one 5 s half correct; the other half is confusion.
    CHECK(b.total_reference == doctest::Approx(10.0));
    CHECK(b.missed_speech == doctest::Approx(0.0));
    CHECK(b.false_alarm == doctest::Approx(0.0));
    CHECK(b.speaker_confusion == doctest::Approx(5.0));
    CHECK(b.der == doctest::Approx(0.5));
  }
  SUBCASE("boundary jitter inside the collar is forgiven") {
    const auto ref = timeline("s", {{"A", 0.0, 10.0}});
    const auto hyp = timeline("s", {{"h1", 0.1, 9.9}});
    const auto forgiving = score::der(ref, hyp, score::forgiving_setup());
    CHECK(forgiving.der == doctest::Approx(0.0));
    const auto full = score::der(ref, hyp, score::full_setup());
    CHECK(full.missed_speech == doctest::Approx(0.2));
    CHECK(full.der == doctest::Approx(0.02));
  }
  SUBCASE("scoring a timeline against itself is exactly zero") {
    Rng rng(12);
    for (int trial = 0; trial < 20; ++trial) {
      const auto ref = testutil::random_timeline(rng, "s", 1 + trial % 4, 30.0);
      for (const auto setup : {score::full_setup(), score::forgiving_setup()}) {
        const auto b = score::der(ref, ref, setup);
        CHECK(b.der == 0.0);
        CHECK(b.missed_speech == 0.0);
        CHECK(b.false_alarm == 0.0);
        CHECK(b.speaker_confusion == 0.0);
      }
    }
  }
  SUBCASE("empty hypothesis misses everything") {
    const auto ref = timeline("s", {{"A", 0.0, 4.0}, {"B", 6.0, 8.0}});
    SpeakerTimeline hyp;
    hyp.session_id = "s";
    const auto b = score::der(ref, hyp, score::full_setup());
    CHECK(b.missed_speech == doctest::Approx(6.0));
    CHECK(b.der == doctest::Approx(1.0));
  }
  SUBCASE("empty reference is rejected") {
    SpeakerTimeline ref;
    ref.session_id = "s";
    const auto hyp = timeline("s", {{"A", 0.0, 1.0}});
    CHECK_THROWS_WITH_AS(score::der(ref, hyp, score::full_setup()),
                         doctest::Contains("empty reference"),
                         std::runtime_error);
    // A reference fully swallowed by collars scores as empty too.
    const auto tiny = timeline("s", {{"A", 0.0, 0.3}});
    CHECK_THROWS_AS(score::der(tiny, tiny, score::forgiving_setup()),
                    std::runtime_error);
  }
  SUBCASE("overlap regions are excluded only in the forgiving setup") {
    // A speaks [0,10], B overlaps [4,6]; hypothesis finds only A.
    const auto ref = timeline("s", {{"A", 0.0, 10.0}, {"B", 4.0, 6.0}});
    const auto hyp = timeline("s", {{"h", 0.0, 10.0}});
    const auto full = score::der(ref, hyp, score::full_setup());
    CHECK(full.total_reference == doctest::Approx(12.0));
    CHECK(full.missed_speech == doctest::Approx(2.0));
    const auto forgiving = score::der(ref, hyp, score::forgiving_setup());
    // Exclusions merge into [0,0.25], [3.75,6.25], [9.75,10]; inside them the
    // reference carries 0.25 + (2.5 of A + 2.0 of B) + 0.25 = 5.0 seconds.
    CHECK(forgiving.total_reference == doctest::Approx(7.0).epsilon(1e-9));
    CHECK(forgiving.der == doctest::Approx(0.0));
  }
  SUBCASE("false alarm outside reference speech") {
    const auto ref = timeline("s", {{"A", 0.0, 5.0}});
    const auto hyp = timeline("s", {{"h", 0.0, 5.0}, {"h2", 7.0, 9.0}});
    const auto b = score::der(ref, hyp, score::full_setup());
    CHECK(b.false_alarm == doctest::Approx(2.0));
    CHECK(b.der == doctest::Approx(0.4));
  }
}

TEST_CASE("optimal_mapping picks the max-weight assignment") {
  SUBCASE("two-by-two") {
    nn::Tensor2 m(2, 2);
    m.at(0, 0) = 5.0;
    m.at(0, 1) = 1.0;
    m.at(1, 0) = 2.0;
    m.at(1, 1) = 10.0;
    CHECK(score::optimal_mapping(m) == std::vector<int>{0, 1});
  }
  SUBCASE("anti-diagonal dominates") {
    nn::Tensor2 m(2, 2);
    m.at(0, 0) = 5.0;
    m.at(0, 1) = 6.0;
    m.at(1, 0) = 6.0;
    m.at(1, 1) = 5.0;
    CHECK(score::optimal_mapping(m) == std::vector<int>{1, 0});
  }
  SUBCASE("wide matrix keeps the best column") {
    nn::Tensor2 m(1, 3);
    m.at(0, 0) = 3.0;
    m.at(0, 1) = 7.0;
    m.at(0, 2) = 2.0;
    CHECK(score::optimal_mapping(m) == std::vector<int>{1});
  }
  SUBCASE("zero-overlap rows stay unmapped") {
    nn::Tensor2 m(2, 2);
    m.at(0, 0) = 4.0;  // row 1 all zeros
    const auto mapping = score::optimal_mapping(m);
    CHECK(mapping == std::vector<int>{0, -1});
  }
  SUBCASE("tall matrix leaves surplus rows unmapped") {
    nn::Tensor2 m(3, 1);
    m.at(0, 0) = 1.0;
    m.at(1, 0) = 9.0;
    m.at(2, 0) = 2.0;
    CHECK(score::optimal_mapping(m) == std::vector<int>{-1, 0, -1});
  }
}

TEST_CASE("der agrees with a millisecond frame oracle on random sessions") {
  Rng rng(77);
  int compared = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int ref_spk = 2 + static_cast<int>(rng.uniform_int(3));
    const auto ref = testutil::dense_timeline(rng, "s", ref_spk, 60.0);
    const auto hyp = testutil::jittered_hypothesis(rng, ref, 60.0);
    for (const auto setup : {score::full_setup(), score::forgiving_setup()}) {
      const auto oracle = testutil::frame_der(ref, hyp, setup);
      if (oracle.total_reference <= 0.0) {
        CHECK_THROWS_AS(score::der(ref, hyp, setup), std::runtime_error);
        continue;
      }
      const auto exact = score::der(ref, hyp, setup);
      CHECK(std::abs(exact.der - oracle.der) < 0.002);
      ++compared;
    }
  }
  CHECK(compared > 150);
}

TEST_CASE("parse_rttm reads SPEAKER records and flags bad lines") {
  SUBCASE("canonical line") {
    const auto sessions = score::parse_rttm(
        "SPEAKER s1 1 0.50 1.25 <NA> <NA> spkA <NA> <NA>\n");
    REQUIRE(sessions.size() == 1);
    const auto& tl = sessions.at("s1");
    REQUIRE(tl.entries.size() == 1);
    CHECK(tl.entries[0].speaker == "spkA");
    CHECK(tl.entries[0].interval.onset == doctest::Approx(0.50));
    CHECK(tl.entries[0].interval.offset == doctest::Approx(1.75));
  }
  SUBCASE("comments, blank lines and multiple sessions") {
    const auto sessions = score::parse_rttm(
        "; a comment\n"
        "\n"
        "SPEAKER a 1 0.0 1.0 <NA> <NA> x <NA> <NA>\n"
        "SPEAKER b 1 2.0 1.0 <NA> <NA> y <NA> <NA>\n"
        "SPEAKER a 1 1.0 1.0 <NA> <NA> x <NA> <NA>\n");
    REQUIRE(sessions.size() == 2);
    // Adjacent same-speaker rows merge.
    CHECK(sessions.at("a").entries.size() == 1);
    CHECK(sessions.at("a").entries[0].interval.offset == doctest::Approx(2.0));
    CHECK(sessions.at("b").entries.size() == 1);
  }
  SUBCASE("malformed lines name their line number") {
    CHECK_THROWS_WITH_AS(
        score::parse_rttm("SPEAKER s1 1 0.50 1.25 <NA> <NA> spkA <NA>\n"),
        doctest::Contains("line 1"), std::runtime_error);
    CHECK_THROWS_WITH_AS(
        score::parse_rttm(
            "SPEAKER s1 1 0.0 1.0 <NA> <NA> a <NA> <NA>\n"
            "LAMP s1 1 0.50 1.25 <NA> <NA> spkA <NA> <NA>\n"),
        doctest::Contains("line 2"), std::runtime_error);
    CHECK_THROWS_AS(score::parse_rttm(
                        "SPEAKER s1 1 zero 1.25 <NA> <NA> spkA <NA> <NA>\n"),
                    std::runtime_error);
    CHECK_THROWS_AS(score::parse_rttm(
                        "SPEAKER s1 1 0.50 0.0 <NA> <NA> spkA <NA> <NA>\n"),
                    std::runtime_error);
    CHECK_THROWS_AS(score::parse_rttm(
                        "SPEAKER s1 1 -0.5 1.25 <NA> <NA> spkA <NA> <NA>\n"),
                    std::runtime_error);
  }
}

TEST_CASE("emit_rttm round trips through parse_rttm") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto tl = testutil::random_timeline(rng, "sess", 1 + trial % 3, 15.0);
    const auto text = score::emit_rttm(tl);
    const auto parsed = score::parse_rttm(text);
    REQUIRE(parsed.size() == 1);
    const auto& back = parsed.at("sess");
    REQUIRE(back.entries.size() == tl.entries.size());
    for (std::size_t i = 0; i < tl.entries.size(); ++i) {
      // Onsets/durations are printed at 3 decimals.
      CHECK(back.entries[i].speaker == tl.entries[i].speaker);
      CHECK(back.entries[i].interval.onset ==
            doctest::Approx(tl.entries[i].interval.onset).epsilon(1e-3));
      CHECK(back.entries[i].interval.duration() ==
            doctest::Approx(tl.entries[i].interval.duration()).epsilon(2e-3));
    }
  }

  const auto tl = timeline("s", {{"b", 1.0, 2.0}, {"a", 1.0, 2.5}, {"a", 4.0, 5.0}});
  const auto text = score::emit_rttm(tl);
  CHECK(text ==
        "SPEAKER s 1 1.000 1.500 <NA> <NA> a <NA> <NA>\n"
        "SPEAKER s 1 1.000 1.000 <NA> <NA> b <NA> <NA>\n"
        "SPEAKER s 1 4.000 1.000 <NA> <NA> a <NA> <NA>\n");
}
