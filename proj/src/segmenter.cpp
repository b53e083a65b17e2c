// Copyright 2026 msdiar authors
// SPDX-License-Identifier: Apache-2.0
#include "msdiar/segmenter.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace msdiar::seg {

std::vector<TimeInterval> uniform_segments(const TimeInterval& region,
                                           double window, double hop) {
  if (!(window > 0.0) || !(hop > 0.0) || hop > window + kTimeEps) {
    throw std::invalid_argument("uniform_segments needs 0 < hop <= window");
  }
  if (region.duration() <= kTimeEps) return {};

  std::vector<TimeInterval> out;
  int n = 0;
  for (;; ++n) {
    const double start = region.onset + n * hop;
    if (start + window <= region.offset + kTimeEps) {
      out.push_back({start, std::min(start + window, region.offset)});
    } else {
      break;
    }
  }
  const double covered = out.empty() ? region.onset : out.back().offset;
  if (covered < region.offset - kTimeEps) {
    const double start = region.onset + n * hop;
    if (out.empty() || region.offset - start >= hop - kTimeEps) {
      out.push_back({start, region.offset});
    } else {
      // Tail shorter than a hop: absorb it instead of emitting a sliver.
      out.back().offset = region.offset;
    }
  }
  return out;
}

std::vector<int> group_scales(const std::vector<TimeInterval>& base_segments,
                              const std::vector<TimeInterval>& coarse_segments) {
  if (base_segments.empty() || coarse_segments.empty()) {
    throw std::invalid_argument("group_scales needs non-empty segment lists");
  }
  std::vector<double> centers(coarse_segments.size());
  for (std::size_t j = 0; j < coarse_segments.size(); ++j) {
    centers[j] = coarse_segments[j].center();
  }
  std::vector<int> out(base_segments.size());
  for (std::size_t i = 0; i < base_segments.size(); ++i) {
    const double c = base_segments[i].center();
    const auto it = std::lower_bound(centers.begin(), centers.end(), c);
    std::size_t hi = static_cast<std::size_t>(it - centers.begin());
    std::size_t best;
    if (hi == 0) {
      best = 0;
    } else if (hi == centers.size()) {
      best = centers.size() - 1;
    } else {
      const std::size_t lo = hi - 1;
      // <= keeps the lower index on exact ties.
      best = (c - centers[lo] <= centers[hi] - c) ? lo : hi;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

MultiScaleSegmentSet segment_all_scales(const std::vector<TimeInterval>& regions,
                                        const ScaleConfig& scales) {
  validate_scale_config(scales);
  for (std::size_t i = 0; i < regions.size(); ++i) {
    (void)make_interval(regions[i].onset, regions[i].offset);
    if (i > 0 && regions[i].onset < regions[i - 1].offset - kTimeEps) {
      throw std::invalid_argument("speech regions must be sorted and disjoint");
    }
  }

  MultiScaleSegmentSet set;
  set.scales = scales;
  const int num_scales = scales.num_scales();
  set.per_scale.resize(num_scales);
  for (int k = 0; k < num_scales; ++k) {
    for (const auto& region : regions) {
      auto segs = uniform_segments(region, scales.windows[k], scales.hops[k]);
      set.per_scale[k].insert(set.per_scale[k].end(), segs.begin(), segs.end());
    }
  }

  const auto& base = set.per_scale[num_scales - 1];
  set.group_map.assign(base.size(), std::vector<int>(num_scales, 0));
  if (base.empty()) return set;
  for (int k = 0; k < num_scales - 1; ++k) {
    const auto grouped = group_scales(base, set.per_scale[k]);
    for (std::size_t i = 0; i < base.size(); ++i) set.group_map[i][k] = grouped[i];
  }
  for (std::size_t i = 0; i < base.size(); ++i) {
    set.group_map[i][num_scales - 1] = static_cast<int>(i);
  }
  return set;
}

}  // namespace msdiar::seg
