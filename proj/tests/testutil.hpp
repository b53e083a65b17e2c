// Copyright 2026 msdiar authors
// SPDX-License-Identifier: Apache-2.0
//
// Independent oracles used by the tests: deliberately written with different
// algorithms than the library (brute force, bisection, frame quantization) so
// agreement is meaningful.
#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "msdiar/core.hpp"
#include "msdiar/neuralkit.hpp"
#include "msdiar/random.hpp"
#include "msdiar/scorer.hpp"

namespace testutil {

// Exhaustive nearest-center search (the library uses a sorted binary search).
inline std::vector<int> oracle_group(
    const std::vector<msdiar::TimeInterval>& base,
    const std::vector<msdiar::TimeInterval>& coarse) {
  std::vector<int> out(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    const double c = base[i].center();
    int best = 0;
    double best_d = std::abs(c - coarse[0].center());
    for (std::size_t j = 1; j < coarse.size(); ++j) {
      const double d = std::abs(c - coarse[j].center());
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(j);
      }
    }
    out[i] = best;
  }
  return out;
}

// Eigenvalues of a symmetric matrix by inertia bisection: the number of
// eigenvalues below x equals the count of negative pivots in the unpivoted
// LDL^T factorization of A - xI.
inline int eigs_below(const msdiar::nn::Tensor2& a, double x) {
  const int n = a.rows;
  std::vector<std::vector<double>> m(n, std::vector<double>(n));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) m[i][j] = a.at(i, j) - (i == j ? x : 0.0);
  }
  int neg = 0;
  for (int k = 0; k < n; ++k) {
    double pivot = m[k][k];
    if (std::abs(pivot) < 1e-300) pivot = 1e-300;
    if (pivot < 0.0) ++neg;
    for (int i = k + 1; i < n; ++i) {
      const double f = m[i][k] / pivot;
      for (int j = k; j < n; ++j) m[i][j] -= f * m[k][j];
    }
  }
  return neg;
}

inline std::vector<double> oracle_eigenvalues(const msdiar::nn::Tensor2& a,
                                              double tol = 1e-9) {
  const int n = a.rows;
  double lo = 0.0, hi = 0.0;
  for (int i = 0; i < n; ++i) {
    double radius = 0.0;
    for (int j = 0; j < n; ++j) {
      if (j != i) radius += std::abs(a.at(i, j));
    }
    lo = std::min(lo, a.at(i, i) - radius);
    hi = std::max(hi, a.at(i, i) + radius);
  }
  lo -= 1.0;
  hi += 1.0;
  std::vector<double> eigs(n);
  for (int idx = 0; idx < n; ++idx) {
    double a_lo = lo, a_hi = hi;
    while (a_hi - a_lo > tol) {
      const double mid = 0.5 * (a_lo + a_hi);
      if (eigs_below(a, mid) >= idx + 1) {
        a_hi = mid;
      } else {
        a_lo = mid;
      }
    }
    eigs[idx] = 0.5 * (a_lo + a_hi);
  }
  return eigs;
}

// Frame-quantized DER with brute-force speaker mapping. Approximates the
// exact sweep to within a few frames per boundary.
inline msdiar::score::DerBreakdown frame_der(
    const msdiar::SpeakerTimeline& ref, const msdiar::SpeakerTimeline& hyp,
    const msdiar::score::EvalSetup& setup, double frame = 0.001) {
  struct Track {
    std::vector<msdiar::TimeInterval> intervals;
  };
  std::vector<Track> ref_tracks, hyp_tracks;
  for (const auto& s : ref.speakers()) ref_tracks.push_back({ref.intervals_of(s)});
  for (const auto& s : hyp.speakers()) hyp_tracks.push_back({hyp.intervals_of(s)});
  double end = 0.0;
  for (const auto& t : ref_tracks) {
    for (const auto& iv : t.intervals) end = std::max(end, iv.offset);
  }
  for (const auto& t : hyp_tracks) {
    for (const auto& iv : t.intervals) end = std::max(end, iv.offset);
  }
  end += setup.collar + frame;

  const int frames = static_cast<int>(std::ceil(end / frame));
  struct Cell {
    std::uint32_t ref_mask;
    std::uint32_t hyp_mask;
  };
  std::vector<Cell> kept;
  kept.reserve(frames);
  auto speaking = [](const Track& track, double t) {
    for (const auto& iv : track.intervals) {
      if (t >= iv.onset && t < iv.offset) return true;
    }
    return false;
  };
  for (int f = 0; f < frames; ++f) {
    const double t = (f + 0.5) * frame;
    bool in_collar = false;
    for (const auto& track : ref_tracks) {
      for (const auto& iv : track.intervals) {
        if (std::abs(t - iv.onset) <= setup.collar ||
            std::abs(t - iv.offset) <= setup.collar) {
          in_collar = true;
          break;
        }
      }
      if (in_collar) break;
    }
    if (in_collar) continue;
    std::uint32_t rm = 0, hm = 0;
    for (std::size_t r = 0; r < ref_tracks.size(); ++r) {
      if (speaking(ref_tracks[r], t)) rm |= 1u << r;
    }
    if (setup.ignore_overlap && std::popcount(rm) >= 2) continue;
    for (std::size_t h = 0; h < hyp_tracks.size(); ++h) {
      if (speaking(hyp_tracks[h], t)) hm |= 1u << h;
    }
    if (rm == 0 && hm == 0) continue;
    kept.push_back({rm, hm});
  }

  const int nr = static_cast<int>(ref_tracks.size());
  const int nh = static_cast<int>(hyp_tracks.size());
  std::vector<std::vector<double>> overlap(nr, std::vector<double>(nh, 0.0));
  for (const auto& cell : kept) {
    for (int r = 0; r < nr; ++r) {
      if (!(cell.ref_mask & (1u << r))) continue;
      for (int h = 0; h < nh; ++h) {
        if (cell.hyp_mask & (1u << h)) overlap[r][h] += frame;
      }
    }
  }

  // Brute-force best injective mapping (each ref speaker -> unused hyp or
  // none).
  std::vector<int> mapping(nr, -1), current(nr, -1);
  std::vector<bool> used(nh, false);
  double best_score = -1.0;
  auto recurse = [&](auto&& self, int r, double acc) -> void {
    if (r == nr) {
      if (acc > best_score) {
        best_score = acc;
        mapping = current;
      }
      return;
    }
    self(self, r + 1, acc);  // leave r unmapped
    for (int h = 0; h < nh; ++h) {
      if (used[h]) continue;
      used[h] = true;
      current[r] = h;
      self(self, r + 1, acc + overlap[r][h]);
      current[r] = -1;
      used[h] = false;
    }
  };
  recurse(recurse, 0, 0.0);

  msdiar::score::DerBreakdown out;
  for (const auto& cell : kept) {
    const int n_ref = std::popcount(cell.ref_mask);
    const int n_hyp = std::popcount(cell.hyp_mask);
    out.total_reference += frame * n_ref;
    out.missed_speech += frame * std::max(0, n_ref - n_hyp);
    out.false_alarm += frame * std::max(0, n_hyp - n_ref);
    int correct = 0;
    for (int r = 0; r < nr; ++r) {
      if (!(cell.ref_mask & (1u << r))) continue;
      const int h = mapping[r];
      if (h >= 0 && overlap[r][h] > 0.0 && (cell.hyp_mask & (1u << h))) ++correct;
    }
    out.speaker_confusion += frame * (std::min(n_ref, n_hyp) - correct);
  }
  out.der = out.total_reference > 0.0
                ? (out.missed_speech + out.false_alarm + out.speaker_confusion) /
                      out.total_reference
                : 0.0;
  return out;
}

// Random multi-speaker timeline for scorer stress tests.
inline msdiar::SpeakerTimeline random_timeline(msdiar::Rng& rng,
                                               const std::string& id,
                                               int num_speakers,
                                               double duration) {
  std::vector<msdiar::TimelineEntry> entries;
  for (int s = 0; s < num_speakers; ++s) {
    const int turns = 1 + static_cast<int>(rng.uniform_int(4));
    for (int t = 0; t < turns; ++t) {
      const double len = rng.uniform(0.4, 3.0);
      const double onset = rng.uniform(0.0, std::max(0.1, duration - len));
      entries.push_back({"spk" + std::to_string(s),
                         msdiar::make_interval(onset, onset + len)});
    }
  }
  return msdiar::merge_speaker_intervals(id, std::move(entries));
}

// Reference timeline where every speaker holds several substantial turns, so
// collar and overlap exclusions cannot shrink the scored reference to nearly
// zero and DER ratios stay numerically stable under frame quantization.
inline msdiar::SpeakerTimeline dense_timeline(msdiar::Rng& rng,
                                              const std::string& id,
                                              int num_speakers,
                                              double duration) {
  std::vector<msdiar::TimelineEntry> entries;
  for (int s = 0; s < num_speakers; ++s) {
    const int turns = 3 + static_cast<int>(rng.uniform_int(4));
    for (int t = 0; t < turns; ++t) {
      const double len = rng.uniform(1.5, 4.0);
      const double onset = rng.uniform(0.0, duration - len);
      entries.push_back({"spk" + std::to_string(s),
                         msdiar::make_interval(onset, onset + len)});
    }
  }
  return msdiar::merge_speaker_intervals(id, std::move(entries));
}

// Hypothesis derived from a reference by boundary jitter, dropped turns,
// label corruption, and spurious insertions. The error profile mimics a real
// diarizer, keeping DER in a range where a 1 ms frame oracle is meaningful;
// an unrelated random hypothesis can push DER past 100% of a tiny scored
// reference, where the ratio is hypersensitive to quantization.
inline msdiar::SpeakerTimeline jittered_hypothesis(
    msdiar::Rng& rng, const msdiar::SpeakerTimeline& ref, double duration) {
  std::vector<msdiar::TimelineEntry> entries;
  for (const auto& e : ref.entries) {
    if (rng.uniform() < 0.1) continue;  // dropped turn -> missed speech
    double onset = e.interval.onset + rng.uniform(-0.3, 0.3);
    double offset = e.interval.offset + rng.uniform(-0.3, 0.3);
    onset = std::clamp(onset, 0.0, duration);
    offset = std::clamp(offset, 0.0, duration);
    if (offset - onset < 0.05) continue;
    std::string spk = e.speaker;
    if (rng.uniform() < 0.15)  // label corruption -> speaker confusion
      spk = "c" + std::to_string(rng.uniform_int(3));
    entries.push_back({"hyp_" + spk, msdiar::make_interval(onset, offset)});
  }
  for (int extra = 0; extra < 2; ++extra) {  // spurious turns -> false alarm
    if (rng.uniform() < 0.5) {
      const double len = rng.uniform(0.3, 1.5);
      const double onset = rng.uniform(0.0, duration - len);
      entries.push_back({"hyp_x", msdiar::make_interval(onset, onset + len)});
    }
  }
  if (entries.empty())
    entries.push_back({"hyp_x", msdiar::make_interval(0.0, 1.0)});
  return msdiar::merge_speaker_intervals(ref.session_id, std::move(entries));
}

}  // namespace testutil
