// Copyright 2026 msdiar authors
// SPDX-License-Identifier: Apache-2.0
#include "msdiar/core.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>

namespace msdiar {

TimeInterval make_interval(double onset, double offset) {
  if (!std::isfinite(onset) || !std::isfinite(offset)) {
    throw std::invalid_argument("interval bounds must be finite");
  }
  if (onset < 0.0) {
    throw std::invalid_argument("interval onset must be >= 0");
  }
  if (offset <= onset) {
    throw std::invalid_argument("interval offset must exceed onset");
  }
  return TimeInterval{onset, offset};
}

double interval_overlap(const TimeInterval& a, const TimeInterval& b) {
  const double lo = std::max(a.onset, b.onset);
  const double hi = std::min(a.offset, b.offset);
  return std::max(0.0, hi - lo);
}

ScaleConfig make_scale_config(std::vector<double> windows) {
  std::vector<double> hops(windows.size());
  for (std::size_t i = 0; i < windows.size(); ++i) hops[i] = 0.5 * windows[i];
  return make_scale_config(std::move(windows), std::move(hops));
}

ScaleConfig make_scale_config(std::vector<double> windows, std::vector<double> hops) {
  ScaleConfig config{std::move(windows), std::move(hops)};
  validate_scale_config(config);
  return config;
}

void validate_scale_config(const ScaleConfig& config) {
  if (config.windows.empty()) {
    throw std::invalid_argument("scale config needs at least one scale");
  }
  if (config.windows.size() != config.hops.size()) {
    throw std::invalid_argument("scale config windows/hops length mismatch");
  }
  for (std::size_t i = 0; i < config.windows.size(); ++i) {
    if (!(config.windows[i] > 0.0) || !(config.hops[i] > 0.0)) {
      throw std::invalid_argument("scale windows and hops must be positive");
    }
    if (config.hops[i] > config.windows[i] + kTimeEps) {
      throw std::invalid_argument("scale hop must not exceed its window");
    }
    if (i > 0 && config.windows[i] >= config.windows[i - 1] - kTimeEps) {
      throw std::invalid_argument("scale windows must be strictly decreasing");
    }
  }
}

ScaleConfig preset_scale_config(const std::string& name) {
  if (name == "telephonic") {
    return make_scale_config({1.5, 1.25, 1.0, 0.75, 0.5});
  }
  if (name == "meeting") {
    return make_scale_config({3.0, 2.5, 2.0, 1.5, 1.0, 0.5});
  }
  throw std::invalid_argument("unknown scale preset: " + name);
}

std::vector<std::string> SpeakerTimeline::speakers() const {
  std::set<std::string> names;
  for (const auto& e : entries) names.insert(e.speaker);
  return {names.begin(), names.end()};
}

std::vector<TimeInterval> SpeakerTimeline::intervals_of(const std::string& speaker) const {
  std::vector<TimeInterval> out;
  for (const auto& e : entries) {
    if (e.speaker == speaker) out.push_back(e.interval);
  }
  std::sort(out.begin(), out.end(),
            [](const TimeInterval& a, const TimeInterval& b) { return a.onset < b.onset; });
  return out;
}

double SpeakerTimeline::speech_duration(const std::string& speaker) const {
  double total = 0.0;
  for (const auto& e : entries) {
    if (e.speaker == speaker) total += e.interval.duration();
  }
  return total;
}

double SpeakerTimeline::total_speech() const {
  double total = 0.0;
  for (const auto& e : entries) total += e.interval.duration();
  return total;
}

SpeakerTimeline merge_speaker_intervals(std::string session_id,
                                        std::vector<TimelineEntry> entries) {
  std::map<std::string, std::vector<TimeInterval>> by_speaker;
  for (auto& e : entries) {
    (void)make_interval(e.interval.onset, e.interval.offset);
    by_speaker[e.speaker].push_back(e.interval);
  }
  SpeakerTimeline out;
  out.session_id = std::move(session_id);
  for (auto& [speaker, intervals] : by_speaker) {
    std::sort(intervals.begin(), intervals.end(),
              [](const TimeInterval& a, const TimeInterval& b) { return a.onset < b.onset; });
    TimeInterval current = intervals.front();
    for (std::size_t i = 1; i < intervals.size(); ++i) {
      if (intervals[i].onset <= current.offset + kTimeEps) {
        current.offset = std::max(current.offset, intervals[i].offset);
      } else {
        out.entries.push_back({speaker, current});
        current = intervals[i];
      }
    }
    out.entries.push_back({speaker, current});
  }
  return out;
}

std::vector<TimeInterval> speech_regions(const SpeakerTimeline& timeline) {
  std::vector<TimeInterval> intervals;
  intervals.reserve(timeline.entries.size());
  for (const auto& e : timeline.entries) intervals.push_back(e.interval);
  if (intervals.empty()) return {};
  std::sort(intervals.begin(), intervals.end(),
            [](const TimeInterval& a, const TimeInterval& b) { return a.onset < b.onset; });
  std::vector<TimeInterval> out;
  TimeInterval current = intervals.front();
  for (std::size_t i = 1; i < intervals.size(); ++i) {
    if (intervals[i].onset <= current.offset + kTimeEps) {
      current.offset = std::max(current.offset, intervals[i].offset);
    } else {
      out.push_back(current);
      current = intervals[i];
    }
  }
  out.push_back(current);
  return out;
}

EmbeddingMatrix make_embedding_matrix(int rows, int dim) {
  if (rows < 0 || dim <= 0) {
    throw std::invalid_argument("embedding matrix needs rows >= 0 and dim > 0");
  }
  EmbeddingMatrix m;
  m.rows = rows;
  m.dim = dim;
  m.values.assign(static_cast<std::size_t>(rows) * dim, 0.0);
  return m;
}

void validate_embeddings(const EmbeddingMatrix& m) {
  if (m.dim <= 0 || m.rows < 0 ||
      m.values.size() != static_cast<std::size_t>(m.rows) * m.dim) {
    throw std::invalid_argument("embedding matrix shape mismatch");
  }
  for (int i = 0; i < m.rows; ++i) {
    const double* r = m.row(i);
    double sq = 0.0;
    for (int d = 0; d < m.dim; ++d) {
      if (!std::isfinite(r[d])) {
        throw std::invalid_argument("embedding matrix contains non-finite values");
      }
      sq += r[d] * r[d];
    }
    if (!(sq > 0.0)) {
      throw std::invalid_argument("embedding matrix contains a zero-norm row");
    }
  }
}

double dot(const double* a, const double* b, int dim) {
  double s = 0.0;
  for (int d = 0; d < dim; ++d) s += a[d] * b[d];
  return s;
}

double norm(const double* v, int dim) { return std::sqrt(dot(v, v, dim)); }

double cosine_similarity(const double* a, const double* b, int dim) {
  const double na = norm(a, dim);
  const double nb = norm(b, dim);
  if (!(na > 0.0) || !(nb > 0.0)) {
    throw std::invalid_argument("cosine similarity of a zero-norm vector");
  }
  return dot(a, b, dim) / (na * nb);
}

}  // namespace msdiar
