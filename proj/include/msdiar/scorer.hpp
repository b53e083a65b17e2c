// Copyright 2026 msdiar authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "msdiar/core.hpp"
#include "msdiar/neuralkit.hpp"

namespace msdiar::score {

struct EvalSetup {
  double collar = 0.0;
  bool ignore_overlap = false;
};

inline EvalSetup forgiving_setup() { return {0.25, true}; }
inline EvalSetup full_setup() { return {0.0, false}; }

struct DerBreakdown {
  double missed_speech = 0.0;
  double false_alarm = 0.0;
  double speaker_confusion = 0.0;
  double total_reference = 0.0;
  double der = 0.0;
};

// Exact boundary-sweep DER: collar zones around reference boundaries are
// excluded, overlap regions (>= 2 reference speakers) are excluded when the
// setup says so, and the speaker mapping maximizes matched time. Throws
// std::runtime_error("empty reference") when nothing remains to score.
DerBreakdown der(const SpeakerTimeline& ref, const SpeakerTimeline& hyp,
                 const EvalSetup& setup);

// Max-weight one-to-one assignment on an R x H matrix of overlap seconds.
// result[r] is the matched hypothesis column or -1; zero-overlap matches are
// dropped.
std::vector<int> optimal_mapping(const nn::Tensor2& overlap_matrix);

// RTTM text -> timelines keyed by session id. Tolerates blank lines, extra
// whitespace and `;` comments; rejects malformed lines with their line
// number and negative or zero durations.
std::map<std::string, SpeakerTimeline> parse_rttm(const std::string& text);

// Canonical 10-field SPEAKER lines, onset/duration at 3 decimals, sorted by
// (onset, speaker).
std::string emit_rttm(const SpeakerTimeline& timeline);

}  // namespace msdiar::score
