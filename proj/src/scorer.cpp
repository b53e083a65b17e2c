// Copyright 2026 msdiar authors
// SPDX-License-Identifier: Apache-2.0
#include "msdiar/scorer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace msdiar::score {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Min-cost perfect matching on a square cost matrix (potentials method,
// O(n^3)). Returns row -> column.
std::vector<int> min_cost_assignment(const std::vector<std::vector<double>>& cost) {
  const int n = static_cast<int>(cost.size());
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> match(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = match[j0];
      int j1 = 0;
      double delta = kInf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const int j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= n; ++j) {
    if (match[j] != 0) row_to_col[match[j] - 1] = j - 1;
  }
  return row_to_col;
}

struct SpeakerTrack {
  std::string name;
  std::vector<TimeInterval> intervals;  // merged, sorted
};

std::vector<SpeakerTrack> tracks_of(const SpeakerTimeline& timeline) {
  std::vector<SpeakerTrack> tracks;
  for (const auto& name : timeline.speakers()) {
    tracks.push_back({name, timeline.intervals_of(name)});
  }
  return tracks;
}

bool speaking_at(const SpeakerTrack& track, double t) {
  for (const auto& iv : track.intervals) {
    if (t >= iv.onset && t < iv.offset) return true;
    if (iv.onset > t) break;
  }
  return false;
}

}  // namespace

std::vector<int> optimal_mapping(const nn::Tensor2& overlap) {
  const int rows = overlap.rows;
  const int cols = overlap.cols;
  if (rows == 0) return {};
  const int n = std::max(rows, cols);
  std::vector<std::vector<double>> cost(n, std::vector<double>(n, 0.0));
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) cost[r][c] = -overlap.at(r, c);
  }
  const auto assignment = min_cost_assignment(cost);
  std::vector<int> mapping(rows, -1);
  for (int r = 0; r < rows; ++r) {
    const int c = assignment[r];
    if (c >= 0 && c < cols && overlap.at(r, c) > 0.0) mapping[r] = c;
  }
  return mapping;
}

DerBreakdown der(const SpeakerTimeline& reference, const SpeakerTimeline& hypothesis,
                 const EvalSetup& setup) {
  if (setup.collar < 0.0) throw std::invalid_argument("collar must be >= 0");
  const auto ref_tracks = tracks_of(reference);
  const auto hyp_tracks = tracks_of(hypothesis);

  // Elementary-interval breakpoints: hypothesis boundaries plus reference
  // boundaries widened by the collar. Within each cell, membership and
  // collar-exclusion status are constant, so the midpoint decides them.
  std::vector<double> points;
  for (const auto& track : ref_tracks) {
    for (const auto& iv : track.intervals) {
      points.push_back(std::max(0.0, iv.onset - setup.collar));
      points.push_back(iv.onset + setup.collar);
      points.push_back(std::max(0.0, iv.offset - setup.collar));
      points.push_back(iv.offset + setup.collar);
      points.push_back(iv.onset);
      points.push_back(iv.offset);
    }
  }
  for (const auto& track : hyp_tracks) {
    for (const auto& iv : track.intervals) {
      points.push_back(iv.onset);
      points.push_back(iv.offset);
    }
  }
  std::sort(points.begin(), points.end());
  points.erase(std::unique(points.begin(), points.end()), points.end());

  struct Cell {
    double duration;
    std::vector<int> ref;  // speaking reference speakers (track indices)
    std::vector<int> hyp;
  };
  std::vector<Cell> cells;
  for (std::size_t i = 0; i + 1 < points.size(); ++i) {
    const double a = points[i];
    const double b = points[i + 1];
    if (b - a <= 1e-12) continue;
    const double mid = 0.5 * (a + b);

    bool in_collar = false;
    if (setup.collar > 0.0) {
      for (const auto& track : ref_tracks) {
        for (const auto& iv : track.intervals) {
          if (std::abs(mid - iv.onset) <= setup.collar ||
              std::abs(mid - iv.offset) <= setup.collar) {
            in_collar = true;
            break;
          }
        }
        if (in_collar) break;
      }
    }
    if (in_collar) continue;

    Cell cell;
    cell.duration = b - a;
    for (std::size_t r = 0; r < ref_tracks.size(); ++r) {
      if (speaking_at(ref_tracks[r], mid)) cell.ref.push_back(static_cast<int>(r));
    }
    if (setup.ignore_overlap && cell.ref.size() >= 2) continue;
    for (std::size_t h = 0; h < hyp_tracks.size(); ++h) {
      if (speaking_at(hyp_tracks[h], mid)) cell.hyp.push_back(static_cast<int>(h));
    }
    if (cell.ref.empty() && cell.hyp.empty()) continue;
    cells.push_back(std::move(cell));
  }

  // Speaker mapping maximizes total ref/hyp co-occurrence over scored cells.
  nn::Tensor2 overlap(static_cast<int>(ref_tracks.size()),
                      static_cast<int>(hyp_tracks.size()));
  for (const auto& cell : cells) {
    for (const int r : cell.ref) {
      for (const int h : cell.hyp) overlap.at(r, h) += cell.duration;
    }
  }
  const auto mapping =
      ref_tracks.empty() ? std::vector<int>{} : optimal_mapping(overlap);

  DerBreakdown out;
  for (const auto& cell : cells) {
    const auto n_ref = static_cast<int>(cell.ref.size());
    const auto n_hyp = static_cast<int>(cell.hyp.size());
    out.total_reference += cell.duration * n_ref;
    out.missed_speech += cell.duration * std::max(0, n_ref - n_hyp);
    out.false_alarm += cell.duration * std::max(0, n_hyp - n_ref);
    int correct = 0;
    for (const int r : cell.ref) {
      const int h = mapping[r];
      if (h >= 0 && std::find(cell.hyp.begin(), cell.hyp.end(), h) != cell.hyp.end()) {
        ++correct;
      }
    }
    out.speaker_confusion += cell.duration * (std::min(n_ref, n_hyp) - correct);
  }
  if (out.total_reference <= 0.0) {
    throw std::runtime_error("empty reference");
  }
  out.der = (out.missed_speech + out.false_alarm + out.speaker_confusion) /
            out.total_reference;
  return out;
}

std::map<std::string, SpeakerTimeline> parse_rttm(const std::string& text) {
  std::map<std::string, std::vector<TimelineEntry>> entries;
  std::istringstream stream(text);
  std::string line;
  int line_no = 0;
  while (std::getline(stream, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream fields(line);
    std::vector<std::string> tok;
    std::string t;
    while (fields >> t) tok.push_back(t);
    if (tok.empty()) continue;
    if (tok[0][0] == ';') continue;
    const std::string where = "rttm line " + std::to_string(line_no);
    if (tok[0] != "SPEAKER") {
      throw std::runtime_error(where + ": expected SPEAKER record, got '" + tok[0] + "'");
    }
    if (tok.size() != 10) {
      throw std::runtime_error(where + ": expected 10 fields, got " +
                               std::to_string(tok.size()));
    }
    auto parse_num = [&](const std::string& s, const char* what) {
      try {
        std::size_t pos = 0;
        const double x = std::stod(s, &pos);
        if (pos != s.size() || !std::isfinite(x)) {
          throw std::invalid_argument(s);
        }
        return x;
      } catch (const std::exception&) {
        throw std::runtime_error(where + ": invalid " + std::string(what) + " '" + s + "'");
      }
    };
    const double onset = parse_num(tok[3], "onset");
    const double duration = parse_num(tok[4], "duration");
    if (onset < 0.0) throw std::runtime_error(where + ": negative onset");
    if (duration <= 0.0) throw std::runtime_error(where + ": non-positive duration");
    entries[tok[1]].push_back({tok[7], make_interval(onset, onset + duration)});
  }
  std::map<std::string, SpeakerTimeline> out;
  for (auto& [session, list] : entries) {
    out.emplace(session, merge_speaker_intervals(session, std::move(list)));
  }
  return out;
}

std::string emit_rttm(const SpeakerTimeline& timeline) {
  std::vector<TimelineEntry> entries = timeline.entries;
  std::sort(entries.begin(), entries.end(),
            [](const TimelineEntry& a, const TimelineEntry& b) {
              if (a.interval.onset != b.interval.onset) {
                return a.interval.onset < b.interval.onset;
              }
              return a.speaker < b.speaker;
            });
  std::string out;
  char buf[64];
  for (const auto& e : entries) {
    std::snprintf(buf, sizeof(buf), "%.3f %.3f", e.interval.onset,
                  e.interval.duration());
    out += "SPEAKER " + timeline.session_id + " 1 " + buf + " <NA> <NA> " +
           e.speaker + " <NA> <NA>\n";
  }
  return out;
}

}  // namespace msdiar::score
