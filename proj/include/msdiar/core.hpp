// Copyright 2026 msdiar authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace msdiar {

// Comparison slop for segment arithmetic; also the gap tolerance below which
// same-speaker intervals are considered adjacent and get merged.
inline constexpr double kTimeEps = 1e-9;

struct TimeInterval {
  double onset = 0.0;
  double offset = 0.0;

  double duration() const { return offset - onset; }
  double center() const { return 0.5 * (onset + offset); }
  bool contains(double t) const { return t >= onset && t < offset; }
};

// Throws std::invalid_argument unless 0 <= onset < offset.
TimeInterval make_interval(double onset, double offset);

// Length of the intersection, 0 for disjoint intervals.
double interval_overlap(const TimeInterval& a, const TimeInterval& b);

// Window/hop pairs ordered coarse to fine; the last entry is the base scale.
struct ScaleConfig {
  std::vector<double> windows;
  std::vector<double> hops;

  int num_scales() const { return static_cast<int>(windows.size()); }
  int base_scale() const { return num_scales() - 1; }
  double base_window() const { return windows.back(); }
  double base_hop() const { return hops.back(); }
};

// Hops default to half the window.
ScaleConfig make_scale_config(std::vector<double> windows);
ScaleConfig make_scale_config(std::vector<double> windows, std::vector<double> hops);

// Throws std::invalid_argument if empty, not strictly decreasing, or any
// hop is non-positive or exceeds its window.
void validate_scale_config(const ScaleConfig& config);

// Named presets: "telephonic" (0.5 s base) and "meeting" (adds a 3.0 s top
// scale and a finer ladder). Throws on unknown name.
ScaleConfig preset_scale_config(const std::string& name);

struct TimelineEntry {
  std::string speaker;
  TimeInterval interval;
};

// Per-session annotation. Entries of one speaker never overlap; entries of
// different speakers may.
struct SpeakerTimeline {
  std::string session_id;
  std::vector<TimelineEntry> entries;

  std::vector<std::string> speakers() const;         // sorted, unique
  std::vector<TimeInterval> intervals_of(const std::string& speaker) const;
  double speech_duration(const std::string& speaker) const;
  double total_speech() const;  // sum over speakers (overlap counted per speaker)
};

// Canonicalizes: merges overlapping or adjacent (gap <= kTimeEps) intervals
// of the same speaker, leaves distinct speakers untouched, sorts entries by
// (speaker, onset). Throws on invalid intervals.
SpeakerTimeline merge_speaker_intervals(std::string session_id,
                                        std::vector<TimelineEntry> entries);

// Union of all speakers' speech as disjoint sorted intervals.
std::vector<TimeInterval> speech_regions(const SpeakerTimeline& timeline);

// Dense row-major matrix of embedding vectors, one row per segment.
struct EmbeddingMatrix {
  int rows = 0;
  int dim = 0;
  std::vector<double> values;

  double* row(int i) { return values.data() + static_cast<std::size_t>(i) * dim; }
  const double* row(int i) const {
    return values.data() + static_cast<std::size_t>(i) * dim;
  }
};

EmbeddingMatrix make_embedding_matrix(int rows, int dim);

// Throws std::invalid_argument if any value is non-finite or any row has
// zero norm, or if dimensions are inconsistent.
void validate_embeddings(const EmbeddingMatrix& m);

double dot(const double* a, const double* b, int dim);
double norm(const double* v, int dim);
// cos(a, b); throws std::invalid_argument on a zero-norm input.
double cosine_similarity(const double* a, const double* b, int dim);

}  // namespace msdiar
