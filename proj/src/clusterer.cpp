// Copyright 2026 msdiar authors
// SPDX-License-Identifier: Apache-2.0
#include "msdiar/clusterer.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "msdiar/random.hpp"

namespace msdiar::cluster {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const RowMat> emap(const nn::Tensor2& t) {
  return Eigen::Map<const RowMat>(t.data(), t.rows, t.cols);
}

Eigen::Map<RowMat> emap(nn::Tensor2& t) {
  return Eigen::Map<RowMat>(t.data(), t.rows, t.cols);
}

void check_square_symmetric(const nn::Tensor2& a, double tol, const char* what) {
  if (a.rows != a.cols || a.rows == 0) {
    throw std::invalid_argument(std::string(what) + ": matrix must be square");
  }
  for (int i = 0; i < a.rows; ++i) {
    for (int j = i + 1; j < a.cols; ++j) {
      if (std::abs(a.at(i, j) - a.at(j, i)) > tol) {
        throw std::invalid_argument(std::string(what) + ": matrix not symmetric");
      }
    }
  }
}

}  // namespace

std::vector<double> init_scale_weights(double r, int num_scales) {
  if (num_scales < 1) throw std::invalid_argument("num_scales must be >= 1");
  if (!(r > 0.0)) throw std::invalid_argument("scale weight r must be positive");
  if (num_scales == 1) return {1.0};
  std::vector<double> w(num_scales);
  const double slope = (r - 1.0) / static_cast<double>(num_scales - 1);
  for (int k = 0; k < num_scales; ++k) w[k] = r - slope * k;
  // Pin the endpoints exactly; the linear formula can drift by an ulp.
  w.front() = r;
  w.back() = 1.0;
  return w;
}

nn::Tensor2 cosine_affinity(const EmbeddingMatrix& emb) {
  validate_embeddings(emb);
  const int n = emb.rows;
  nn::Tensor2 a(n, n);
  Eigen::Map<const RowMat> x(emb.values.data(), n, emb.dim);
  emap(a).noalias() = x * x.transpose();
  std::vector<double> inv_norm(n);
  for (int i = 0; i < n; ++i) inv_norm[i] = 1.0 / std::sqrt(a.at(i, i));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) {
        a.at(i, j) = 1.0;
      } else if (j > i) {
        a.at(i, j) *= inv_norm[i] * inv_norm[j];
      } else {
        a.at(i, j) = a.at(j, i);  // exact symmetry
      }
    }
  }
  return a;
}

nn::Tensor2 multiscale_affinity(const std::vector<nn::Tensor2>& per_scale,
                                const std::vector<std::vector<int>>& group_map,
                                std::span<const double> weights) {
  if (per_scale.empty() || per_scale.size() != weights.size()) {
    throw std::invalid_argument("multiscale_affinity: scales/weights mismatch");
  }
  const bool mapped = !group_map.empty();
  const int n = mapped ? static_cast<int>(group_map.size()) : per_scale.front().rows;
  if (n == 0) throw std::invalid_argument("multiscale_affinity: empty input");
  nn::Tensor2 fused(n, n);
  for (std::size_t k = 0; k < per_scale.size(); ++k) {
    const auto& a = per_scale[k];
    if (a.rows != a.cols) {
      throw std::invalid_argument("multiscale_affinity: matrix not square");
    }
    if (!mapped && (a.rows != n)) {
      throw std::invalid_argument("multiscale_affinity: shape mismatch");
    }
    const double w = weights[k];
    for (int i = 0; i < n; ++i) {
      const int gi = mapped ? group_map[i][k] : i;
      for (int j = 0; j < n; ++j) {
        const int gj = mapped ? group_map[j][k] : j;
        fused.at(i, j) += w * a.at(gi, gj);
      }
    }
  }
  const auto [lo_it, hi_it] = std::minmax_element(fused.v.begin(), fused.v.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (hi - lo <= 1e-12) {
    std::fill(fused.v.begin(), fused.v.end(), 1.0);
    return fused;
  }
  const double range = hi - lo;
  // Divide (not multiply by a reciprocal) so the extremes land exactly on 0/1.
  for (auto& x : fused.v) x = (x - lo) / range;
  return fused;
}

EigenDecomposition eigensolve_symmetric(const nn::Tensor2& a) {
  check_square_symmetric(a, 1e-9, "eigensolve_symmetric");
  Eigen::MatrixXd m = emap(a);
  m = 0.5 * (m + m.transpose().eval());  // exact symmetry for the solver
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m);
  if (solver.info() != Eigen::Success) {
    throw std::runtime_error("eigensolve_symmetric: solver failed");
  }
  EigenDecomposition out;
  const int n = a.rows;
  out.eigenvalues.assign(solver.eigenvalues().data(), solver.eigenvalues().data() + n);
  out.eigenvectors = nn::Tensor2(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) out.eigenvectors.at(i, j) = solver.eigenvectors()(i, j);
  }
  return out;
}

namespace {

// Row-wise top-p binarized affinity, symmetrized by averaging with its
// transpose. Ties prefer the lower column index.
nn::Tensor2 binarize_top_p(const nn::Tensor2& affinity, int p) {
  const int n = affinity.rows;
  nn::Tensor2 kept(n, n);
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) {
    std::iota(order.begin(), order.end(), 0);
    const double* row = affinity.row(i);
    std::partial_sort(order.begin(), order.begin() + p, order.end(),
                      [row](int a, int b) {
                        if (row[a] != row[b]) return row[a] > row[b];
                        return a < b;
                      });
    for (int r = 0; r < p; ++r) kept.at(i, order[r]) = 1.0;
  }
  nn::Tensor2 sym(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      sym.at(i, j) = 0.5 * (kept.at(i, j) + kept.at(j, i));
    }
  }
  return sym;
}

Eigen::MatrixXd normalized_laplacian(const nn::Tensor2& sym) {
  const int n = sym.rows;
  Eigen::VectorXd inv_sqrt_deg(n);
  for (int i = 0; i < n; ++i) {
    double deg = 0.0;
    for (int j = 0; j < n; ++j) deg += sym.at(i, j);
    inv_sqrt_deg(i) = deg > 1e-12 ? 1.0 / std::sqrt(deg) : 0.0;
  }
  Eigen::MatrixXd l = Eigen::MatrixXd::Identity(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      l(i, j) -= inv_sqrt_deg(i) * sym.at(i, j) * inv_sqrt_deg(j);
    }
  }
  // The construction is symmetric up to rounding; make it exact.
  return 0.5 * (l + l.transpose().eval());
}

struct SweepPoint {
  double ratio = std::numeric_limits<double>::infinity();
  int speakers = 1;
};

SweepPoint eval_p(const nn::Tensor2& affinity, int p, int max_speakers) {
  const nn::Tensor2 sym = binarize_top_p(affinity, p);
  const Eigen::MatrixXd l = normalized_laplacian(sym);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(l, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) {
    throw std::runtime_error("nme_sc: eigenvalue solver failed");
  }
  const auto& lambda = solver.eigenvalues();
  const int n = affinity.rows;
  const int q_max = std::min(max_speakers, n - 1);
  double best_gap = -1.0;
  int best_q = 1;
  for (int q = 1; q <= q_max; ++q) {
    const double gap = lambda(q) - lambda(q - 1);
    if (gap > best_gap) {
      best_gap = gap;
      best_q = q;
    }
  }
  SweepPoint out;
  out.speakers = best_q;
  if (best_gap > 1e-12) {
    out.ratio = (static_cast<double>(p) / n) / best_gap;
  }
  return out;
}

}  // namespace

std::vector<int> kmeans(const nn::Tensor2& points, int k, std::uint64_t seed,
                        int restarts, int max_iters) {
  const int n = points.rows;
  const int dim = points.cols;
  if (k <= 0 || n <= 0) throw std::invalid_argument("kmeans: empty input");
  if (k > n) throw std::invalid_argument("kmeans: more clusters than points");

  auto sq_dist = [&](const double* a, const double* b) {
    double s = 0.0;
    for (int d = 0; d < dim; ++d) {
      const double diff = a[d] - b[d];
      s += diff * diff;
    }
    return s;
  };

  std::vector<int> best_labels(n, 0);
  double best_inertia = std::numeric_limits<double>::infinity();

  for (int restart = 0; restart < std::max(1, restarts); ++restart) {
    Rng rng(seed + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(restart));

    // k-means++ seeding.
    nn::Tensor2 centers(k, dim);
    std::vector<double> min_d(n, std::numeric_limits<double>::infinity());
    int first = static_cast<int>(rng.uniform_int(n));
    std::copy(points.row(first), points.row(first) + dim, centers.row(0));
    for (int c = 1; c < k; ++c) {
      double total = 0.0;
      for (int i = 0; i < n; ++i) {
        min_d[i] = std::min(min_d[i], sq_dist(points.row(i), centers.row(c - 1)));
        total += min_d[i];
      }
      int chosen;
      if (total > 0.0) {
        const double target = rng.uniform() * total;
        double acc = 0.0;
        chosen = n - 1;
        for (int i = 0; i < n; ++i) {
          acc += min_d[i];
          if (acc >= target) {
            chosen = i;
            break;
          }
        }
      } else {
        chosen = static_cast<int>(rng.uniform_int(n));
      }
      std::copy(points.row(chosen), points.row(chosen) + dim, centers.row(c));
    }

    std::vector<int> labels(n, -1);
    std::vector<int> counts(k, 0);
    for (int iter = 0; iter < max_iters; ++iter) {
      bool changed = false;
      std::fill(counts.begin(), counts.end(), 0);
      for (int i = 0; i < n; ++i) {
        int best_c = 0;
        double best = sq_dist(points.row(i), centers.row(0));
        for (int c = 1; c < k; ++c) {
          const double d2 = sq_dist(points.row(i), centers.row(c));
          if (d2 < best) {
            best = d2;
            best_c = c;
          }
        }
        if (labels[i] != best_c) {
          labels[i] = best_c;
          changed = true;
        }
        ++counts[best_c];
      }
      // Re-seed empty clusters at the point farthest from its centroid.
      for (int c = 0; c < k; ++c) {
        if (counts[c] > 0) continue;
        int far_i = 0;
        double far_d = -1.0;
        for (int i = 0; i < n; ++i) {
          const double d2 = sq_dist(points.row(i), centers.row(labels[i]));
          if (d2 > far_d && counts[labels[i]] > 1) {
            far_d = d2;
            far_i = i;
          }
        }
        --counts[labels[far_i]];
        labels[far_i] = c;
        counts[c] = 1;
        changed = true;
      }
      centers.set_zero();
      for (int i = 0; i < n; ++i) {
        double* cr = centers.row(labels[i]);
        const double* pr = points.row(i);
        for (int d = 0; d < dim; ++d) cr[d] += pr[d];
      }
      for (int c = 0; c < k; ++c) {
        if (counts[c] == 0) continue;
        double* cr = centers.row(c);
        for (int d = 0; d < dim; ++d) cr[d] /= counts[c];
      }
      if (!changed) break;
    }

    double inertia = 0.0;
    for (int i = 0; i < n; ++i) {
      inertia += sq_dist(points.row(i), centers.row(labels[i]));
    }
    if (inertia < best_inertia - 1e-15) {
      best_inertia = inertia;
      best_labels = labels;
    }
  }
  return best_labels;
}

ClusteringResult nme_sc(const nn::Tensor2& affinity, const NmeScOptions& opts) {
  check_square_symmetric(affinity, 1e-9, "nme_sc");
  if (opts.max_speakers < 1) throw std::invalid_argument("max_speakers must be >= 1");
  const int n = affinity.rows;
  ClusteringResult result;
  if (n == 1) {
    result.labels = {0};
    result.num_speakers = 1;
    result.chosen_p = 1;
    return result;
  }

  const int p_max = std::min(n - 1, opts.sweep_max);
  double best_ratio = std::numeric_limits<double>::infinity();
  int best_p = 1;
  int best_s = 1;
  for (int p = 1; p <= p_max; ++p) {
    const SweepPoint point = eval_p(affinity, p, opts.max_speakers);
    if (point.ratio < best_ratio) {
      best_ratio = point.ratio;
      best_p = p;
      best_s = point.speakers;
    }
  }

  result.chosen_p = best_p;
  result.num_speakers = best_s;
  if (best_s == 1) {
    result.labels.assign(n, 0);
    return result;
  }

  const nn::Tensor2 sym = binarize_top_p(affinity, best_p);
  const Eigen::MatrixXd l = normalized_laplacian(sym);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(l);
  if (solver.info() != Eigen::Success) {
    throw std::runtime_error("nme_sc: eigenvector solver failed");
  }
  nn::Tensor2 spectral(n, best_s);
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < best_s; ++c) spectral.at(i, c) = solver.eigenvectors()(i, c);
  }
  result.labels =
      kmeans(spectral, best_s, opts.seed, opts.kmeans_restarts, opts.kmeans_iters);
  return result;
}

ClusteringResult cluster_session(const seg::MultiScaleSegmentSet& segments,
                                 std::span<const EmbeddingMatrix> embeddings,
                                 double r, const NmeScOptions& opts) {
  const int num_scales = segments.scales.num_scales();
  if (static_cast<int>(embeddings.size()) != num_scales) {
    throw std::invalid_argument("cluster_session: embeddings/scales mismatch");
  }
  const int n = segments.num_base_segments();
  if (n == 0) throw std::invalid_argument("cluster_session: no base segments");
  for (int k = 0; k < num_scales; ++k) {
    if (embeddings[k].rows != static_cast<int>(segments.per_scale[k].size())) {
      throw std::invalid_argument("cluster_session: segment/embedding mismatch");
    }
  }

  const auto w = init_scale_weights(r, num_scales);
  std::vector<nn::Tensor2> base_indexed(num_scales);
  for (int k = 0; k < num_scales; ++k) {
    const nn::Tensor2 scale_affinity = cosine_affinity(embeddings[k]);
    nn::Tensor2 looked_up(n, n);
    for (int i = 0; i < n; ++i) {
      const int gi = segments.group_map[i][k];
      for (int j = 0; j < n; ++j) {
        looked_up.at(i, j) = scale_affinity.at(gi, segments.group_map[j][k]);
      }
    }
    base_indexed[k] = std::move(looked_up);
  }
  const nn::Tensor2 fused = multiscale_affinity(base_indexed, {}, w);
  ClusteringResult result = nme_sc(fused, opts);
  result.per_scale_affinity = std::move(base_indexed);
  return result;
}

}  // namespace msdiar::cluster
