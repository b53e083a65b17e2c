// Copyright 2026 msdiar authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>

#include "msdiar/clusterer.hpp"
#include "msdiar/core.hpp"
#include "msdiar/random.hpp"
#include "msdiar/synthembed.hpp"
#include "testutil.hpp"

using namespace msdiar;

namespace {

// True when the two labelings induce the same partition (labels may differ).
bool same_partition(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) return false;
  std::map<int, int> fwd, bwd;
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto [fit, fnew] = fwd.emplace(a[i], b[i]);
    if (!fnew && fit->second != b[i]) return false;
    auto [bit, bnew] = bwd.emplace(b[i], a[i]);
    if (!bnew && bit->second != a[i]) return false;
  }
  return true;
}

nn::Tensor2 block_affinity(const std::vector<int>& sizes, double intra,
                           double inter) {
  int n = std::accumulate(sizes.begin(), sizes.end(), 0);
  std::vector<int> block;
  for (std::size_t b = 0; b < sizes.size(); ++b) {
    block.insert(block.end(), sizes[b], static_cast<int>(b));
  }
  nn::Tensor2 a(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      a.at(i, j) = i == j ? 1.0 : (block[i] == block[j] ? intra : inter);
    }
  }
  return a;
}

EmbeddingMatrix blob_points(Rng& rng, const std::vector<int>& sizes,
                            const std::vector<std::array<double, 2>>& centers,
                            double sigma) {
  int n = std::accumulate(sizes.begin(), sizes.end(), 0);
  EmbeddingMatrix m = make_embedding_matrix(n, 2);
  int row = 0;
  for (std::size_t b = 0; b < sizes.size(); ++b) {
    for (int i = 0; i < sizes[b]; ++i, ++row) {
      m.row(row)[0] = centers[b][0] + sigma * rng.normal();
      m.row(row)[1] = centers[b][1] + sigma * rng.normal();
    }
  }
  return m;
}

}  // namespace

TEST_CASE("init_scale_weights matches the linear schedule") {
  const auto w = cluster::init_scale_weights(2.0, 5);
  CHECK(w == std::vector<double>{2.0, 1.75, 1.5, 1.25, 1.0});
  CHECK(cluster::init_scale_weights(0.5, 2) == std::vector<double>{0.5, 1.0});
  CHECK(cluster::init_scale_weights(3.0, 1) == std::vector<double>{1.0});
  for (double r : {0.25, 1.0, 1.7, 4.0}) {
    for (int k = 2; k <= 7; ++k) {
      const auto v = cluster::init_scale_weights(r, k);
      CHECK(v.front() == r);       // endpoints are pinned exactly
      CHECK(v.back() == 1.0);
      for (double x : v) CHECK(x > 0.0);
      if (r == 1.0) {
        CHECK(std::all_of(v.begin(), v.end(), [](double x) { return x == 1.0; }));
      }
    }
  }
  CHECK_THROWS_AS(cluster::init_scale_weights(0.0, 3), std::invalid_argument);
  CHECK_THROWS_AS(cluster::init_scale_weights(1.0, 0), std::invalid_argument);
}

TEST_CASE("cosine_affinity is a unit-diagonal symmetric cosine table") {
  EmbeddingMatrix m = make_embedding_matrix(3, 2);
  m.row(0)[0] = 1.0;
  m.row(1)[0] = 1.0 / std::sqrt(2.0);
  m.row(1)[1] = 1.0 / std::sqrt(2.0);
  m.row(2)[1] = 1.0;
  const auto a = cluster::cosine_affinity(m);
  CHECK(a.at(0, 1) == doctest::Approx(0.70710678118654752).epsilon(1e-12));
  CHECK(a.at(0, 2) == doctest::Approx(0.0));
  for (int i = 0; i < 3; ++i) CHECK(a.at(i, i) == 1.0);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      CHECK(a.at(i, j) == a.at(j, i));
      CHECK(a.at(i, j) ==
            doctest::Approx(cosine_similarity(m.row(i), m.row(j), 2))
                .epsilon(1e-12));
    }
  }

  EmbeddingMatrix same = make_embedding_matrix(4, 3);
  for (int i = 0; i < 4; ++i) {
    same.row(i)[0] = 0.6;
    same.row(i)[2] = 0.8;
  }
  const auto ones = cluster::cosine_affinity(same);
  for (double v : ones.v) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));

  EmbeddingMatrix zero = make_embedding_matrix(2, 2);
  zero.row(0)[0] = 1.0;  // row 1 stays all-zero
  CHECK_THROWS_AS(cluster::cosine_affinity(zero), std::invalid_argument);
}

TEST_CASE("multiscale_affinity fuses scales and min-max normalizes") {
  Rng rng(99);
  SUBCASE("identical scales with equal weights reduce to min-max of one") {
    nn::Tensor2 a(4, 4);
    for (int i = 0; i < 4; ++i) {
      for (int j = i; j < 4; ++j) {
        a.at(i, j) = a.at(j, i) = rng.uniform();
      }
    }
    const std::vector<double> w{1.0, 1.0};
    const auto fused = cluster::multiscale_affinity({a, a}, {}, w);
    const auto [mn_it, mx_it] = std::minmax_element(a.v.begin(), a.v.end());
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 4; ++j) {
        const double expect = (a.at(i, j) - *mn_it) / (*mx_it - *mn_it);
        CHECK(fused.at(i, j) == doctest::Approx(expect).epsilon(1e-12));
      }
    }
  }
  SUBCASE("output spans exactly [0,1] and ignores weight rescaling") {
    std::vector<nn::Tensor2> scales;
    for (int k = 0; k < 3; ++k) {
      nn::Tensor2 a(5, 5);
      for (int i = 0; i < 5; ++i) {
        for (int j = i; j < 5; ++j) a.at(i, j) = a.at(j, i) = rng.uniform();
      }
      scales.push_back(a);
    }
    const std::vector<double> w{1.4, 1.2, 1.0};
    std::vector<double> scaled = w;
    for (double& x : scaled) x *= 3.7;
    const auto fused = cluster::multiscale_affinity(scales, {}, w);
    const auto fused2 = cluster::multiscale_affinity(scales, {}, scaled);
    const auto [mn, mx] =
        std::minmax_element(fused.v.begin(), fused.v.end());
    CHECK(*mn == 0.0);
    CHECK(*mx == 1.0);
    for (std::size_t i = 0; i < fused.v.size(); ++i) {
      CHECK(fused.v[i] == doctest::Approx(fused2.v[i]).epsilon(1e-12));
    }
  }
  SUBCASE("constant input normalizes to all ones") {
    nn::Tensor2 c(3, 3);
    std::fill(c.v.begin(), c.v.end(), 0.4);
    const auto fused = cluster::multiscale_affinity({c}, {}, std::vector<double>{1.0});
    for (double v : fused.v) CHECK(v == 1.0);
  }
  SUBCASE("coarse scales are expanded through the group map") {
    nn::Tensor2 coarse(2, 2);
    coarse.at(0, 0) = 1.0;
    coarse.at(0, 1) = coarse.at(1, 0) = 0.2;
    coarse.at(1, 1) = 1.0;
    nn::Tensor2 base(4, 4);
    for (int i = 0; i < 4; ++i) {
      for (int j = i; j < 4; ++j) base.at(i, j) = base.at(j, i) = rng.uniform();
    }
    // Row i lists base segment i's index at each scale: base 0,1 share
    // coarse segment 0; base 2,3 share coarse segment 1.
    const std::vector<std::vector<int>> group_map{{0, 0}, {0, 1}, {1, 2}, {1, 3}};
    const std::vector<double> w{1.0, 1.0};
    const auto fused = cluster::multiscale_affinity({coarse, base}, group_map, w);
    nn::Tensor2 manual(4, 4);
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 4; ++j) {
        manual.at(i, j) = coarse.at(group_map[i][0], group_map[j][0]) + base.at(i, j);
      }
    }
    const auto [mn, mx] =
        std::minmax_element(manual.v.begin(), manual.v.end());
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 4; ++j) {
        const double expect = (manual.at(i, j) - *mn) / (*mx - *mn);
        CHECK(fused.at(i, j) == doctest::Approx(expect).epsilon(1e-12));
      }
    }
  }
  SUBCASE("shape mismatch is rejected") {
    nn::Tensor2 a(3, 3), b(4, 4);
    CHECK_THROWS_AS(
        cluster::multiscale_affinity({a, b}, {}, std::vector<double>{1.0, 1.0}),
        std::invalid_argument);
    CHECK_THROWS_AS(cluster::multiscale_affinity({a}, {}, std::vector<double>{1.0, 1.0}),
                    std::invalid_argument);
  }
}

TEST_CASE("eigensolve_symmetric agrees with a bisection oracle") {
  SUBCASE("identity and diagonal") {
    nn::Tensor2 eye(3, 3);
    for (int i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
    const auto d = cluster::eigensolve_symmetric(eye);
    for (double v : d.eigenvalues) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));

    nn::Tensor2 diag(3, 3);
    diag.at(0, 0) = 3.0;
    diag.at(1, 1) = 1.0;
    diag.at(2, 2) = 2.0;
    const auto dd = cluster::eigensolve_symmetric(diag);
    CHECK(dd.eigenvalues[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(dd.eigenvalues[1] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(dd.eigenvalues[2] == doctest::Approx(3.0).epsilon(1e-12));
  }
  SUBCASE("random symmetric matrices") {
    Rng rng(5);
    for (int trial = 0; trial < 4; ++trial) {
      const int n = 8;
      nn::Tensor2 a(n, n);
      for (int i = 0; i < n; ++i) {
        for (int j = i; j < n; ++j) {
          a.at(i, j) = a.at(j, i) = rng.uniform() * 2.0 - 1.0;
        }
      }
      const auto d = cluster::eigensolve_symmetric(a);
      const auto oracle = testutil::oracle_eigenvalues(a);
      REQUIRE(d.eigenvalues.size() == oracle.size());
      for (int i = 0; i + 1 < n; ++i) CHECK(d.eigenvalues[i] <= d.eigenvalues[i + 1]);
      for (std::size_t i = 0; i < oracle.size(); ++i) {
        CHECK(d.eigenvalues[i] == doctest::Approx(oracle[i]).epsilon(1e-6));
      }
      // Reconstruction A == V diag(lambda) V^T and orthonormal columns.
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
          double rec = 0.0, g = 0.0;
          for (int c = 0; c < n; ++c) {
            rec += d.eigenvectors.at(i, c) * d.eigenvalues[c] * d.eigenvectors.at(j, c);
            g += d.eigenvectors.at(c, i) * d.eigenvectors.at(c, j);
          }
          CHECK(std::abs(rec - a.at(i, j)) < 1e-8);
          CHECK(std::abs(g - (i == j ? 1.0 : 0.0)) < 1e-8);
        }
      }
    }
  }
  SUBCASE("non-symmetric input is rejected") {
    nn::Tensor2 a(2, 2);
    a.at(0, 1) = 0.5;
    a.at(1, 0) = 0.1;
    CHECK_THROWS_AS(cluster::eigensolve_symmetric(a), std::invalid_argument);
  }
}

TEST_CASE("kmeans recovers well-separated blobs deterministically") {
  Rng rng(17);
  const std::vector<int> sizes{8, 8, 8};
  const auto pts = blob_points(
      rng, sizes, {{{0.0, 0.0}}, {{5.0, 5.0}}, {{-5.0, 5.0}}}, 0.05);
  nn::Tensor2 t(pts.rows, 2);
  std::copy(pts.values.begin(), pts.values.end(), t.v.begin());
  const auto labels = cluster::kmeans(t, 3, 11, 5, 300);
  std::vector<int> truth;
  for (int b = 0; b < 3; ++b) truth.insert(truth.end(), 8, b);
  CHECK(same_partition(labels, truth));
  CHECK(cluster::kmeans(t, 3, 11, 5, 300) == labels);

  const auto singletons = cluster::kmeans(t, t.rows, 4, 3, 50);
  std::vector<int> sorted = singletons;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < t.rows; ++i) CHECK(sorted[i] == i);

  CHECK_THROWS_AS(cluster::kmeans(t, t.rows + 1, 1, 1, 10), std::invalid_argument);
}

TEST_CASE("nme_sc splits blocks and keeps cliques whole") {
  SUBCASE("two all-ones blocks") {
    const auto a = block_affinity({3, 3}, 1.0, 0.0);
    cluster::NmeScOptions opts;
    const auto res = cluster::nme_sc(a, opts);
    CHECK(res.num_speakers == 2);
    CHECK(same_partition(res.labels, {0, 0, 0, 1, 1, 1}));
    CHECK(res.chosen_p >= 1);
  }
  SUBCASE("all-ones affinity is one speaker") {
    const auto a = block_affinity({6}, 1.0, 0.0);
    const auto res = cluster::nme_sc(a, cluster::NmeScOptions{});
    CHECK(res.num_speakers == 1);
    CHECK(res.labels == std::vector<int>(6, 0));
  }
  SUBCASE("single element") {
    nn::Tensor2 one(1, 1);
    one.at(0, 0) = 1.0;
    const auto res = cluster::nme_sc(one, cluster::NmeScOptions{});
    CHECK(res.num_speakers == 1);
    CHECK(res.labels == std::vector<int>{0});
  }
  SUBCASE("empty input is rejected") {
    CHECK_THROWS_AS(cluster::nme_sc(nn::Tensor2(), cluster::NmeScOptions{}),
                    std::invalid_argument);
  }
  SUBCASE("labels follow a permutation of the input") {
    Rng rng(31);
    auto a = block_affinity({5, 7}, 0.85, 0.15);
    for (int i = 0; i < a.rows; ++i) {
      for (int j = i + 1; j < a.cols; ++j) {
        const double jitter = 0.04 * (rng.uniform() - 0.5);
        a.at(i, j) = a.at(j, i) = std::clamp(a.at(i, j) + jitter, 0.0, 1.0);
      }
    }
    std::vector<int> perm(a.rows);
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = a.rows - 1; i > 0; --i) {
      std::swap(perm[i], perm[rng.uniform_int(i + 1)]);
    }
    nn::Tensor2 b(a.rows, a.cols);
    for (int i = 0; i < a.rows; ++i) {
      for (int j = 0; j < a.cols; ++j) b.at(i, j) = a.at(perm[i], perm[j]);
    }
    const auto ra = cluster::nme_sc(a, cluster::NmeScOptions{});
    const auto rb = cluster::nme_sc(b, cluster::NmeScOptions{});
    REQUIRE(ra.num_speakers == rb.num_speakers);
    std::vector<int> a_through_perm(a.rows);
    for (int i = 0; i < a.rows; ++i) a_through_perm[i] = ra.labels[perm[i]];
    CHECK(same_partition(a_through_perm, rb.labels));
  }
}

TEST_CASE("cluster_session recovers synthetic speaker structure") {
  synth::SynthConfig cfg;
  cfg.num_speakers = 2;
  cfg.dim = 64;
  cfg.session_duration = 30.0;
  cfg.overlap_fraction = 0.0;
  cfg.base_noise_sigma = 0.05;
  cfg.seed = 3;
  const auto scales = preset_scale_config("telephonic");
  const auto session = synth::gen_session(cfg, scales, "s");
  const auto res = cluster::cluster_session(session.segments, session.embeddings,
                                            1.0, cluster::NmeScOptions{});
  CHECK(res.num_speakers == 2);
  REQUIRE(res.labels.size() == session.segments.per_scale.back().size());
  CHECK(res.per_scale_affinity.size() == session.segments.per_scale.size());
  for (const auto& m : res.per_scale_affinity) {
    CHECK(m.rows == static_cast<int>(res.labels.size()));
  }

  // Dominant ground-truth speaker per base segment, then partition agreement.
  const auto speakers = session.timeline.speakers();
  std::vector<int> truth;
  for (const auto& seg : session.segments.per_scale.back()) {
    double best = -1.0;
    int arg = 0;
    for (int s = 0; s < static_cast<int>(speakers.size()); ++s) {
      double covered = 0.0;
      for (const auto& iv : session.timeline.intervals_of(speakers[s])) {
        covered += interval_overlap(seg, iv);
      }
      if (covered > best) {
        best = covered;
        arg = s;
      }
    }
    truth.push_back(arg);
  }
  int agree01 = 0, agree10 = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (res.labels[i] == truth[i]) ++agree01;
    if (res.labels[i] == 1 - truth[i]) ++agree10;
  }
  const double acc =
      static_cast<double>(std::max(agree01, agree10)) / truth.size();
  CHECK(acc >= 0.95);
}

TEST_CASE("speaker count estimation is reliable on clean three-speaker audio") {
  synth::SynthConfig cfg;
  cfg.num_speakers = 3;
  cfg.dim = 64;
  cfg.session_duration = 20.0;
  cfg.overlap_fraction = 0.0;
  cfg.base_noise_sigma = 0.05;
  const auto scales = preset_scale_config("telephonic");
  int hits = 0;
  for (int seed = 0; seed < 100; ++seed) {
    cfg.seed = 1000 + seed;
    const auto session = synth::gen_session(cfg, scales, "s");
    const auto res = cluster::cluster_session(session.segments, session.embeddings,
                                              1.0, cluster::NmeScOptions{});
    if (res.num_speakers == 3) ++hits;
  }
  CHECK(hits >= 95);
}
