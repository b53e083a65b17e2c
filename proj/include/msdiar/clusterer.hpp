// Copyright 2026 msdiar authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "msdiar/core.hpp"
#include "msdiar/neuralkit.hpp"
#include "msdiar/segmenter.hpp"

namespace msdiar::cluster {

// w_k = r - ((r-1)/(K-1)) * k; endpoints pinned so w_0 == r and the base
// scale weight is exactly 1.0. K == 1 returns {1.0}.
std::vector<double> init_scale_weights(double r, int num_scales);

// A[i][j] = cos(row_i, row_j); unit diagonal, exactly symmetric.
nn::Tensor2 cosine_affinity(const EmbeddingMatrix& emb);

// Weighted sum of per-scale affinities followed by global min-max
// normalization to [0,1]. Matrices are scale-level; entries are looked up
// through group_map (pass an empty group_map when the matrices are already
// base-indexed). A constant matrix normalizes to all ones.
nn::Tensor2 multiscale_affinity(const std::vector<nn::Tensor2>& per_scale,
                                const std::vector<std::vector<int>>& group_map,
                                std::span<const double> weights);

struct EigenDecomposition {
  std::vector<double> eigenvalues;  // ascending
  nn::Tensor2 eigenvectors;         // one eigenvector per column
};

// Throws std::invalid_argument unless symmetric within 1e-9.
EigenDecomposition eigensolve_symmetric(const nn::Tensor2& a);

struct NmeScOptions {
  int max_speakers = 8;
  int sweep_max = 50;  // p sweeps 1..min(N-1, sweep_max)
  std::uint64_t seed = 13;
  int kmeans_restarts = 5;
  int kmeans_iters = 300;
};

struct ClusteringResult {
  std::vector<int> labels;  // one per base segment, in [0, num_speakers)
  int num_speakers = 0;
  int chosen_p = 0;
  std::vector<nn::Tensor2> per_scale_affinity;  // base-indexed, diagnostics
};

// Auto-tuning spectral clustering: row top-p binarization, symmetrized
// graph, normalized Laplacian eigengaps, NME ratio selection of p, then
// seeded k-means on the first-S eigenvectors.
ClusteringResult nme_sc(const nn::Tensor2& affinity, const NmeScOptions& opts);

// Seeded k-means++ with Lloyd iterations; empty clusters are re-seeded at
// the point farthest from its centroid. Ties break toward lower indices.
std::vector<int> kmeans(const nn::Tensor2& points, int k, std::uint64_t seed,
                        int restarts, int max_iters);

// Full initialization pass: per-scale cosine affinities fused with the
// linearly spaced scale weights (parameter r), then NME-SC.
ClusteringResult cluster_session(const seg::MultiScaleSegmentSet& segments,
                                 std::span<const EmbeddingMatrix> embeddings,
                                 double r, const NmeScOptions& opts);

}  // namespace msdiar::cluster
