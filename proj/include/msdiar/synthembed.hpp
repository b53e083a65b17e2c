// Copyright 2026 msdiar authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "msdiar/core.hpp"
#include "msdiar/segmenter.hpp"

namespace msdiar::synth {

struct SynthConfig {
  int num_speakers = 2;
  int dim = 192;
  double session_duration = 60.0;
  // Target fraction of speech time carrying two simultaneous speakers.
  double overlap_fraction = 0.15;
  double base_noise_sigma = 0.1;
  // Noise at scale k is base_noise_sigma * (base_window / window_k)^exponent,
  // so longer windows yield cleaner embeddings.
  double scale_noise_exponent = 1.0;
  double min_centroid_angle = 60.0;  // degrees
  std::uint64_t seed = 7;
};

// Throws std::invalid_argument on out-of-range fields (speakers outside 1..8,
// overlap outside [0, 0.5), single speaker with nonzero overlap, ...).
void validate_synth_config(const SynthConfig& cfg);

struct SynthSession {
  std::string session_id;
  SpeakerTimeline timeline;
  seg::MultiScaleSegmentSet segments;
  std::vector<EmbeddingMatrix> embeddings;  // one matrix per scale
  EmbeddingMatrix centroids;                // num_speakers x dim, diagnostics
  double achieved_overlap = 0.0;
};

// Deterministic given (cfg.seed, scales): speaker centroids with pairwise
// angle >= min_centroid_angle, alternating turns with occasional silence
// gaps, overlap extensions hitting cfg.overlap_fraction, and per-scale
// noisy time-weighted centroid-mixture embeddings.
// Throws std::runtime_error when the angle constraint is infeasible.
SynthSession gen_session(const SynthConfig& cfg, const ScaleConfig& scales,
                         const std::string& session_id);

// ---------------------------------------------------------------------------
// Embedding archive: `<base>.manifest` (JSON) + `<base>.emb` (row-major
// float32 little-endian, scales concatenated in manifest order).

struct ArchiveData {
  std::string session_id;
  seg::MultiScaleSegmentSet segments;
  std::vector<EmbeddingMatrix> embeddings;
};

inline constexpr int kArchiveVersion = 1;

// `base` is the path without extension; writes base.manifest and base.emb.
void save_archive(const std::filesystem::path& base, const ArchiveData& data);
// Accepts the base path or the .manifest path. Throws std::runtime_error on
// unknown version, manifest/payload mismatch, or payload length mismatch.
ArchiveData load_archive(const std::filesystem::path& base);

}  // namespace msdiar::synth
