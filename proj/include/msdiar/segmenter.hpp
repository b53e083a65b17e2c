// Copyright 2026 msdiar authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "msdiar/core.hpp"

namespace msdiar::seg {

// Sliding-window split of one region. Segments start at onset + n*hop and
// span one window; a shorter tail segment clipped at the region end is kept
// when it is at least one hop long (or when it would be the only segment).
// If the leftover tail is shorter than a hop, the last segment absorbs it so
// that every instant of the region stays covered.
std::vector<TimeInterval> uniform_segments(const TimeInterval& region,
                                           double window, double hop);

// For each base (fine) segment, index of the coarse segment whose center is
// nearest to the base segment's center; ties pick the lower index. Both
// lists must be sorted by center, which uniform_segments guarantees.
// Throws std::invalid_argument if either list is empty.
std::vector<int> group_scales(const std::vector<TimeInterval>& base_segments,
                              const std::vector<TimeInterval>& coarse_segments);

// Segments for every scale over the same speech regions, plus the
// base-to-coarse grouping map.
struct MultiScaleSegmentSet {
  ScaleConfig scales;
  // per_scale[k] lists scale k's segments across all regions, in time order.
  std::vector<std::vector<TimeInterval>> per_scale;
  // group_map[i][k] is the index into per_scale[k] grouped with base segment
  // i; group_map[i][K-1] == i.
  std::vector<std::vector<int>> group_map;

  int num_base_segments() const { return static_cast<int>(group_map.size()); }
};

MultiScaleSegmentSet segment_all_scales(const std::vector<TimeInterval>& regions,
                                        const ScaleConfig& scales);

}  // namespace msdiar::seg
