// Copyright 2026 msdiar authors
// SPDX-License-Identifier: Apache-2.0
#include "msdiar/msdd.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <stdexcept>

#include "msdiar/random.hpp"

namespace msdiar::msdd {

namespace {

void check_model_shapes(const nn::MsddParameters& params,
                        const seg::MultiScaleSegmentSet& segments,
                        std::span<const EmbeddingMatrix> embeddings) {
  const int num_scales = segments.scales.num_scales();
  if (params.cfg.num_scales != num_scales) {
    throw std::invalid_argument("model expects " +
                                std::to_string(params.cfg.num_scales) +
                                " scales, archive has " + std::to_string(num_scales));
  }
  if (static_cast<int>(embeddings.size()) != num_scales) {
    throw std::invalid_argument("embeddings/scales count mismatch");
  }
  for (int k = 0; k < num_scales; ++k) {
    if (embeddings[k].dim != params.cfg.emb_dim) {
      throw std::invalid_argument("model expects embedding dim " +
                                  std::to_string(params.cfg.emb_dim) +
                                  ", archive has " + std::to_string(embeddings[k].dim));
    }
    if (embeddings[k].rows != static_cast<int>(segments.per_scale[k].size())) {
      throw std::invalid_argument("segment/embedding row mismatch at scale " +
                                  std::to_string(k));
    }
  }
}

}  // namespace

ClusterProfile cluster_average(const seg::MultiScaleSegmentSet& segments,
                               std::span<const EmbeddingMatrix> embeddings,
                               std::span<const int> labels, int num_speakers) {
  const int num_scales = segments.scales.num_scales();
  const int n = segments.num_base_segments();
  if (num_speakers < 1) throw std::invalid_argument("num_speakers must be >= 1");
  if (static_cast<int>(labels.size()) != n) {
    throw std::invalid_argument("cluster_average: labels/segments mismatch");
  }
  if (static_cast<int>(embeddings.size()) != num_scales || num_scales == 0 || n == 0) {
    throw std::invalid_argument("cluster_average: empty input");
  }
  const int dim = embeddings[0].dim;

  ClusterProfile profile;
  profile.num_speakers = num_speakers;
  profile.emb_dim = dim;
  profile.v.assign(num_speakers, nn::Tensor2(num_scales, dim));
  std::vector<std::vector<int>> counts(num_speakers, std::vector<int>(num_scales, 0));

  for (int i = 0; i < n; ++i) {
    const int s = labels[i];
    if (s < 0 || s >= num_speakers) {
      throw std::invalid_argument("cluster_average: label out of range");
    }
    for (int k = 0; k < num_scales; ++k) {
      const int idx = segments.group_map[i][k];
      const double* src = embeddings[k].row(idx);
      double* dst = profile.v[s].row(k);
      for (int d = 0; d < dim; ++d) dst[d] += src[d];
      ++counts[s][k];
    }
  }
  for (int s = 0; s < num_speakers; ++s) {
    for (int k = 0; k < num_scales; ++k) {
      if (counts[s][k] == 0) {
        throw std::invalid_argument("cluster_average: speaker " +
                                    std::to_string(s) + " has no segments");
      }
      double* row = profile.v[s].row(k);
      double sq = 0.0;
      for (int d = 0; d < dim; ++d) {
        row[d] /= counts[s][k];
        sq += row[d] * row[d];
      }
      if (!(sq > 0.0)) {
        throw std::invalid_argument("cluster_average: zero-norm profile vector");
      }
    }
  }
  return profile;
}

nn::Tensor2 stack_input(const nn::Tensor2& u, const nn::Tensor2& v1,
                        const nn::Tensor2& v2) {
  const int num_scales = u.rows;
  const int dim = u.cols;
  if (v1.rows != num_scales || v2.rows != num_scales || v1.cols != dim ||
      v2.cols != dim) {
    throw std::invalid_argument("stack_input: shape mismatch");
  }
  nn::Tensor2 stacked(3 * num_scales, dim);
  std::copy(u.v.begin(), u.v.end(), stacked.row(0));
  std::copy(v1.v.begin(), v1.v.end(), stacked.row(num_scales));
  std::copy(v2.v.begin(), v2.v.end(), stacked.row(2 * num_scales));
  return stacked;
}

std::vector<double> scale_weights(const nn::MsddParameters& params,
                                  const nn::Tensor2& stacked,
                                  ScaleWeightCache* cache) {
  const int num_scales = params.cfg.num_scales;
  if (stacked.rows != 3 * num_scales || stacked.cols != params.cfg.emb_dim) {
    throw std::invalid_argument("scale_weights: stacked input shape mismatch");
  }
  nn::Tensor2 a1 = nn::conv1d_forward(params.conv1, stacked);
  nn::relu_inplace(a1);
  nn::Tensor2 a2 = nn::conv1d_forward(params.conv2, a1);
  nn::relu_inplace(a2);

  const int channels = a2.rows;
  const int bins = a2.cols;
  std::vector<double> pooled(channels);
  for (int c = 0; c < channels; ++c) {
    double s = 0.0;
    const double* row = a2.row(c);
    for (int b = 0; b < bins; ++b) s += row[b];
    pooled[c] = s / bins;
  }
  std::vector<double> hidden = nn::linear_forward(params.fc1, pooled);
  for (auto& h : hidden) h = h > 0.0 ? h : 0.0;
  const std::vector<double> logits = nn::linear_forward(params.fc2, hidden);
  std::vector<double> weights = nn::softmax(logits);
  if (cache != nullptr) {
    cache->a1 = std::move(a1);
    cache->a2 = std::move(a2);
    cache->pooled = std::move(pooled);
    cache->fc1_act = std::move(hidden);
    cache->weights = weights;
  }
  return weights;
}

void scale_weights_backward(const nn::MsddParameters& params,
                            const nn::Tensor2& stacked,
                            const ScaleWeightCache& cache,
                            std::span<const double> dweights,
                            nn::MsddParameters& grads) {
  const std::vector<double> dlogits =
      nn::softmax_backward(cache.weights, dweights);
  std::vector<double> dhidden(cache.fc1_act.size(), 0.0);
  nn::linear_backward(params.fc2, cache.fc1_act, dlogits, grads.fc2, dhidden);
  for (std::size_t i = 0; i < dhidden.size(); ++i) {
    if (cache.fc1_act[i] <= 0.0) dhidden[i] = 0.0;
  }
  std::vector<double> dpooled(cache.pooled.size(), 0.0);
  nn::linear_backward(params.fc1, cache.pooled, dhidden, grads.fc1, dpooled);

  const int channels = cache.a2.rows;
  const int bins = cache.a2.cols;
  nn::Tensor2 da2(channels, bins);
  for (int c = 0; c < channels; ++c) {
    const double d = dpooled[c] / bins;
    const double* act = cache.a2.row(c);
    double* row = da2.row(c);
    for (int b = 0; b < bins; ++b) row[b] = act[b] > 0.0 ? d : 0.0;
  }
  nn::Tensor2 da1(cache.a1.rows, cache.a1.cols);
  nn::conv1d_backward(params.conv2, cache.a1, da2, grads.conv2, &da1);
  for (std::size_t i = 0; i < da1.size(); ++i) {
    if (cache.a1.v[i] <= 0.0) da1.v[i] = 0.0;
  }
  nn::conv1d_backward(params.conv1, stacked, da1, grads.conv1, nullptr);
}

std::vector<double> context_vectors(const nn::Tensor2& u, const nn::Tensor2& v1,
                                    const nn::Tensor2& v2,
                                    std::span<const double> w) {
  const int num_scales = u.rows;
  if (v1.rows != num_scales || v2.rows != num_scales ||
      static_cast<int>(w.size()) != num_scales) {
    throw std::invalid_argument("context_vectors: shape mismatch");
  }
  std::vector<double> c(2 * num_scales);
  for (int k = 0; k < num_scales; ++k) {
    c[k] = w[k] * cosine_similarity(v1.row(k), u.row(k), u.cols);
    c[num_scales + k] = w[k] * cosine_similarity(v2.row(k), u.row(k), u.cols);
  }
  return c;
}

std::vector<std::array<double, 2>> decode_pair(
    const nn::MsddParameters& params,
    const std::vector<std::vector<double>>& context_seq) {
  if (context_seq.empty()) {
    throw std::invalid_argument("decode_pair: empty sequence");
  }
  const auto hidden_seq = nn::bilstm_forward_seq(params.lstm, context_seq);
  std::vector<std::array<double, 2>> out(hidden_seq.size());
  for (std::size_t t = 0; t < hidden_seq.size(); ++t) {
    const auto logits = nn::linear_forward(params.head, hidden_seq[t]);
    out[t] = {nn::sigmoid(logits[0]), nn::sigmoid(logits[1])};
  }
  return out;
}

nn::Tensor2 make_labels(const SpeakerTimeline& timeline,
                        const std::vector<TimeInterval>& base_segments,
                        const std::string& speaker1, const std::string& speaker2) {
  const int steps = static_cast<int>(base_segments.size());
  nn::Tensor2 targets(2, steps);
  const std::string* names[2] = {&speaker1, &speaker2};
  for (int s = 0; s < 2; ++s) {
    const auto intervals = timeline.intervals_of(*names[s]);
    for (int i = 0; i < steps; ++i) {
      double covered = 0.0;
      for (const auto& iv : intervals) covered += interval_overlap(base_segments[i], iv);
      // Strictly more than half of the segment.
      targets.at(s, i) =
          covered > 0.5 * base_segments[i].duration() ? 1.0 : 0.0;
    }
  }
  return targets;
}

// ---------------------------------------------------------------------------
// Batched pair decoding: same-length pair sequences run in lockstep so the
// recurrent GEMMs see a real batch dimension.

namespace {

// One pair sequence, role-ordered (first/second may be swapped upstream for
// order augmentation). Cosine tables span the full session; [start, start+len)
// selects the decoded window.
struct PairSpec {
  const seg::MultiScaleSegmentSet* segments = nullptr;
  std::span<const EmbeddingMatrix> embeddings;
  const nn::Tensor2* v_first = nullptr;
  const nn::Tensor2* v_second = nullptr;
  const nn::Tensor2* cos_first = nullptr;   // (T_full x K)
  const nn::Tensor2* cos_second = nullptr;  // (T_full x K)
  const nn::Tensor2* targets = nullptr;     // (2 x T_full), session order
  int target_first_row = 0;
  int target_second_row = 1;
  int start = 0;
  int len = 0;
};

struct BatchForward {
  std::vector<nn::Tensor2> x;         // T of (B x 2K)
  std::vector<nn::Tensor2> lstm_out;  // T of (B x 2H)
  std::vector<nn::Tensor2> logits;    // T of (B x 2)
  std::vector<std::vector<double>> weights;  // B*T, each length K
  // Training-only state:
  std::vector<nn::Tensor2> stacked;        // B*T of (3K x dim)
  std::vector<ScaleWeightCache> sw_cache;  // B*T
  nn::BiLstmCache lstm_cache;
};

void build_stacked(const PairSpec& spec, int step, nn::Tensor2& out,
                   int num_scales, int dim) {
  if (out.rows != 3 * num_scales || out.cols != dim) {
    out = nn::Tensor2(3 * num_scales, dim);
  }
  for (int k = 0; k < num_scales; ++k) {
    const int idx = spec.segments->group_map[step][k];
    std::memcpy(out.row(k), spec.embeddings[k].row(idx), sizeof(double) * dim);
  }
  std::memcpy(out.row(num_scales), spec.v_first->data(),
              sizeof(double) * num_scales * dim);
  std::memcpy(out.row(2 * num_scales), spec.v_second->data(),
              sizeof(double) * num_scales * dim);
}

void pair_batch_forward(const nn::MsddParameters& params,
                        std::span<const PairSpec> items, bool for_training,
                        BatchForward& fwd) {
  const int batch = static_cast<int>(items.size());
  if (batch == 0) throw std::invalid_argument("pair batch is empty");
  const int steps = items[0].len;
  const int num_scales = params.cfg.num_scales;
  const int dim = params.cfg.emb_dim;
  for (const auto& item : items) {
    if (item.len != steps || item.len <= 0) {
      throw std::invalid_argument("pair batch must share one sequence length");
    }
  }

  fwd.x.assign(steps, nn::Tensor2(batch, 2 * num_scales));
  fwd.weights.assign(static_cast<std::size_t>(batch) * steps, {});
  if (for_training) {
    fwd.stacked.assign(static_cast<std::size_t>(batch) * steps, nn::Tensor2());
    fwd.sw_cache.assign(static_cast<std::size_t>(batch) * steps, ScaleWeightCache());
  }

  nn::Tensor2 scratch;
  for (int b = 0; b < batch; ++b) {
    const auto& item = items[b];
    for (int t = 0; t < steps; ++t) {
      const int step = item.start + t;
      const std::size_t idx = static_cast<std::size_t>(b) * steps + t;
      nn::Tensor2& stacked = for_training ? fwd.stacked[idx] : scratch;
      build_stacked(item, step, stacked, num_scales, dim);
      ScaleWeightCache* cache = for_training ? &fwd.sw_cache[idx] : nullptr;
      std::vector<double> w = scale_weights(params, stacked, cache);
      double* xr = fwd.x[t].row(b);
      for (int k = 0; k < num_scales; ++k) {
        xr[k] = w[k] * item.cos_first->at(step, k);
        xr[num_scales + k] = w[k] * item.cos_second->at(step, k);
      }
      fwd.weights[idx] = std::move(w);
    }
  }

  fwd.lstm_out = nn::bilstm_forward(params.lstm, fwd.x,
                                    for_training ? &fwd.lstm_cache : nullptr);
  fwd.logits.resize(steps);
  for (int t = 0; t < steps; ++t) {
    fwd.logits[t] = nn::linear_forward(params.head, fwd.lstm_out[t]);
  }
}

double stable_bce_elem(double z, double t) {
  return std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
}

double pair_batch_loss_grad(const nn::MsddParameters& params,
                            std::span<const PairSpec> items,
                            nn::MsddParameters* grads, BatchForward& fwd) {
  pair_batch_forward(params, items, grads != nullptr, fwd);
  const int batch = static_cast<int>(items.size());
  const int steps = items[0].len;
  const int num_scales = params.cfg.num_scales;
  const double inv_count = 1.0 / (static_cast<double>(batch) * steps * 2.0);

  auto target_at = [&](const PairSpec& item, int slot, int t) {
    const int row = slot == 0 ? item.target_first_row : item.target_second_row;
    return item.targets->at(row, item.start + t);
  };

  double loss_sum = 0.0;
  for (int t = 0; t < steps; ++t) {
    for (int b = 0; b < batch; ++b) {
      loss_sum += stable_bce_elem(fwd.logits[t].at(b, 0), target_at(items[b], 0, t));
      loss_sum += stable_bce_elem(fwd.logits[t].at(b, 1), target_at(items[b], 1, t));
    }
  }
  const double loss = loss_sum * inv_count;
  if (grads == nullptr) return loss;

  std::vector<nn::Tensor2> dout(steps,
                                nn::Tensor2(batch, 2 * params.cfg.lstm_hidden));
  nn::Tensor2 dlogits(batch, 2);
  for (int t = 0; t < steps; ++t) {
    for (int b = 0; b < batch; ++b) {
      for (int slot = 0; slot < 2; ++slot) {
        const double z = fwd.logits[t].at(b, slot);
        dlogits.at(b, slot) =
            (nn::sigmoid(z) - target_at(items[b], slot, t)) * inv_count;
      }
    }
    nn::linear_backward(params.head, fwd.lstm_out[t], dlogits, grads->head,
                        &dout[t]);
  }

  std::vector<nn::Tensor2> dx;
  nn::bilstm_backward(params.lstm, fwd.lstm_cache, dout, grads->lstm, &dx);

  std::vector<double> dw(num_scales);
  for (int b = 0; b < batch; ++b) {
    const auto& item = items[b];
    for (int t = 0; t < steps; ++t) {
      const int step = item.start + t;
      const std::size_t idx = static_cast<std::size_t>(b) * steps + t;
      const double* dxr = dx[t].row(b);
      for (int k = 0; k < num_scales; ++k) {
        dw[k] = dxr[k] * item.cos_first->at(step, k) +
                dxr[num_scales + k] * item.cos_second->at(step, k);
      }
      scale_weights_backward(params, fwd.stacked[idx], fwd.sw_cache[idx], dw,
                             *grads);
    }
  }
  return loss;
}

// Cosine table (T x K) of every base step's grouped embeddings against one
// profile.
nn::Tensor2 cosine_table(const seg::MultiScaleSegmentSet& segments,
                         std::span<const EmbeddingMatrix> embeddings,
                         const nn::Tensor2& profile) {
  const int steps = segments.num_base_segments();
  const int num_scales = segments.scales.num_scales();
  const int dim = profile.cols;
  nn::Tensor2 table(steps, num_scales);
  for (int i = 0; i < steps; ++i) {
    for (int k = 0; k < num_scales; ++k) {
      const double* u = embeddings[k].row(segments.group_map[i][k]);
      table.at(i, k) = cosine_similarity(profile.row(k), u, dim);
    }
  }
  return table;
}

}  // namespace

PairSequence build_pair_sequence(const seg::MultiScaleSegmentSet& segments,
                                 std::span<const EmbeddingMatrix> embeddings,
                                 const nn::Tensor2& v1, const nn::Tensor2& v2,
                                 int start, int len) {
  const int steps = segments.num_base_segments();
  const int num_scales = segments.scales.num_scales();
  if (start < 0 || len <= 0 || start + len > steps) {
    throw std::invalid_argument("build_pair_sequence: step range out of bounds");
  }
  PairSequence seq;
  seq.num_scales = num_scales;
  seq.emb_dim = v1.cols;
  seq.stacked.resize(len);
  seq.cos1 = nn::Tensor2(len, num_scales);
  seq.cos2 = nn::Tensor2(len, num_scales);
  for (int t = 0; t < len; ++t) {
    const int i = start + t;
    nn::Tensor2 u(num_scales, seq.emb_dim);
    for (int k = 0; k < num_scales; ++k) {
      const double* src = embeddings[k].row(segments.group_map[i][k]);
      std::copy(src, src + seq.emb_dim, u.row(k));
    }
    for (int k = 0; k < num_scales; ++k) {
      seq.cos1.at(t, k) = cosine_similarity(v1.row(k), u.row(k), seq.emb_dim);
      seq.cos2.at(t, k) = cosine_similarity(v2.row(k), u.row(k), seq.emb_dim);
    }
    seq.stacked[t] = stack_input(u, v1, v2);
  }
  return seq;
}

double pair_sequence_loss(const nn::MsddParameters& params,
                          const PairSequence& seq, const nn::Tensor2& targets,
                          nn::MsddParameters* grads) {
  const int steps = static_cast<int>(seq.stacked.size());
  if (steps == 0) throw std::invalid_argument("pair_sequence_loss: empty sequence");
  if (targets.rows != 2 || targets.cols != steps) {
    throw std::invalid_argument("pair_sequence_loss: target shape mismatch");
  }
  const int num_scales = params.cfg.num_scales;
  const double inv_count = 1.0 / (static_cast<double>(steps) * 2.0);

  // Single-sequence forward mirroring the batched path (batch size 1), but
  // taking the precomputed stacked inputs.
  std::vector<nn::Tensor2> x(steps, nn::Tensor2(1, 2 * num_scales));
  std::vector<ScaleWeightCache> caches(grads != nullptr ? steps : 0);
  for (int t = 0; t < steps; ++t) {
    ScaleWeightCache* cache = grads != nullptr ? &caches[t] : nullptr;
    const std::vector<double> w = scale_weights(params, seq.stacked[t], cache);
    double* xr = x[t].row(0);
    for (int k = 0; k < num_scales; ++k) {
      xr[k] = w[k] * seq.cos1.at(t, k);
      xr[num_scales + k] = w[k] * seq.cos2.at(t, k);
    }
  }
  nn::BiLstmCache lstm_cache;
  const auto lstm_out =
      nn::bilstm_forward(params.lstm, x, grads != nullptr ? &lstm_cache : nullptr);

  double loss_sum = 0.0;
  std::vector<nn::Tensor2> logits(steps);
  for (int t = 0; t < steps; ++t) {
    logits[t] = nn::linear_forward(params.head, lstm_out[t]);
    loss_sum += stable_bce_elem(logits[t].at(0, 0), targets.at(0, t));
    loss_sum += stable_bce_elem(logits[t].at(0, 1), targets.at(1, t));
  }
  const double loss = loss_sum * inv_count;
  if (grads == nullptr) return loss;

  std::vector<nn::Tensor2> dout(steps, nn::Tensor2(1, 2 * params.cfg.lstm_hidden));
  nn::Tensor2 dlogits(1, 2);
  for (int t = 0; t < steps; ++t) {
    dlogits.at(0, 0) = (nn::sigmoid(logits[t].at(0, 0)) - targets.at(0, t)) * inv_count;
    dlogits.at(0, 1) = (nn::sigmoid(logits[t].at(0, 1)) - targets.at(1, t)) * inv_count;
    nn::linear_backward(params.head, lstm_out[t], dlogits, grads->head, &dout[t]);
  }
  std::vector<nn::Tensor2> dx;
  nn::bilstm_backward(params.lstm, lstm_cache, dout, grads->lstm, &dx);
  std::vector<double> dw(num_scales);
  for (int t = 0; t < steps; ++t) {
    const double* dxr = dx[t].row(0);
    for (int k = 0; k < num_scales; ++k) {
      dw[k] = dxr[k] * seq.cos1.at(t, k) + dxr[num_scales + k] * seq.cos2.at(t, k);
    }
    scale_weights_backward(params, seq.stacked[t], caches[t], dw, *grads);
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Training

namespace {

struct IngestedSession {
  const TrainSession* src = nullptr;
  nn::Tensor2 v[2];    // per-speaker profiles (K x dim)
  nn::Tensor2 cos[2];  // (T x K)
  nn::Tensor2 targets; // (2 x T)
  int steps = 0;
};

std::vector<int> dominant_labels(const TrainSession& session,
                                 const std::vector<std::string>& speakers) {
  const auto& base = session.segments.per_scale.back();
  std::vector<std::vector<TimeInterval>> intervals;
  intervals.reserve(speakers.size());
  for (const auto& name : speakers) {
    intervals.push_back(session.reference.intervals_of(name));
  }
  std::vector<int> labels(base.size(), 0);
  for (std::size_t i = 0; i < base.size(); ++i) {
    double best = -1.0;
    for (std::size_t s = 0; s < speakers.size(); ++s) {
      double covered = 0.0;
      for (const auto& iv : intervals[s]) covered += interval_overlap(base[i], iv);
      if (covered > best + 1e-12) {
        best = covered;
        labels[i] = static_cast<int>(s);
      }
    }
  }
  return labels;
}

IngestedSession ingest_session(const TrainSession& session,
                               const nn::MsddParameters& params,
                               const TrainOptions& opts) {
  const auto speakers = session.reference.speakers();
  if (speakers.size() != 2) {
    throw std::invalid_argument("session " + session.session_id + " has " +
                                std::to_string(speakers.size()) +
                                " speakers; exactly 2 required");
  }
  check_model_shapes(params, session.segments, session.embeddings);
  const int steps = session.segments.num_base_segments();
  if (steps == 0) {
    throw std::invalid_argument("session " + session.session_id +
                                " has no base segments");
  }

  std::vector<int> labels = dominant_labels(session, speakers);
  if (!opts.oracle_profiles) {
    auto clustering = cluster_session(session.segments, session.embeddings,
                                      opts.cluster_r, opts.nme);
    if (clustering.num_speakers == 2) {
      // Align cluster ids with the sorted speaker order via agreement counts.
      const auto oracle = labels;
      int agree = 0;
      for (std::size_t i = 0; i < oracle.size(); ++i) {
        if (clustering.labels[i] == oracle[i]) ++agree;
      }
      const bool flip = 2 * agree < static_cast<int>(oracle.size());
      labels = clustering.labels;
      if (flip) {
        for (auto& l : labels) l = 1 - l;
      }
    }
    // Otherwise keep the reference-derived labels; a mis-counted training
    // session must not abort the whole run.
  }

  auto profile =
      cluster_average(session.segments, session.embeddings, labels, 2);

  IngestedSession out;
  out.src = &session;
  out.steps = steps;
  out.v[0] = std::move(profile.v[0]);
  out.v[1] = std::move(profile.v[1]);
  out.cos[0] = cosine_table(session.segments, session.embeddings, out.v[0]);
  out.cos[1] = cosine_table(session.segments, session.embeddings, out.v[1]);
  out.targets = make_labels(session.reference, session.segments.per_scale.back(),
                            speakers[0], speakers[1]);
  return out;
}

struct ChunkItem {
  int session = 0;
  int start = 0;
  int len = 0;
  bool swapped = false;
};

PairSpec make_spec(const IngestedSession& ing, const ChunkItem& item) {
  PairSpec spec;
  spec.segments = &ing.src->segments;
  spec.embeddings = ing.src->embeddings;
  const int first = item.swapped ? 1 : 0;
  const int second = 1 - first;
  spec.v_first = &ing.v[first];
  spec.v_second = &ing.v[second];
  spec.cos_first = &ing.cos[first];
  spec.cos_second = &ing.cos[second];
  spec.targets = &ing.targets;
  spec.target_first_row = first;
  spec.target_second_row = second;
  spec.start = item.start;
  spec.len = item.len;
  return spec;
}

double validation_f1(const nn::MsddParameters& params,
                     const std::vector<IngestedSession>& sessions) {
  long long tp = 0, fp = 0, fn = 0;
  BatchForward fwd;
  for (const auto& ing : sessions) {
    ChunkItem item{0, 0, ing.steps, false};
    const PairSpec spec = make_spec(ing, item);
    pair_batch_forward(params, std::span<const PairSpec>(&spec, 1), false, fwd);
    for (int t = 0; t < ing.steps; ++t) {
      for (int s = 0; s < 2; ++s) {
        const bool pred = nn::sigmoid(fwd.logits[t].at(0, s)) > 0.5;
        const bool truth = ing.targets.at(s, t) > 0.5;
        if (pred && truth) ++tp;
        else if (pred && !truth) ++fp;
        else if (!pred && truth) ++fn;
      }
    }
  }
  const long long denom = 2 * tp + fp + fn;
  return denom == 0 ? 1.0 : (2.0 * tp) / static_cast<double>(denom);
}

}  // namespace

TrainReport train(nn::MsddParameters& params,
                  const std::vector<TrainSession>& train_set,
                  const std::vector<TrainSession>& val_set,
                  const TrainOptions& opts) {
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  if (opts.batch_size < 1 || opts.chunk_steps < 1 || opts.max_epochs < 1) {
    throw std::invalid_argument("train: invalid options");
  }

  std::vector<IngestedSession> train_data;
  train_data.reserve(train_set.size());
  for (const auto& s : train_set) train_data.push_back(ingest_session(s, params, opts));
  std::vector<IngestedSession> val_data;
  val_data.reserve(val_set.size());
  for (const auto& s : val_set) val_data.push_back(ingest_session(s, params, opts));

  // Chunk starts per session.
  std::vector<std::vector<std::pair<int, int>>> chunks(train_data.size());
  for (std::size_t s = 0; s < train_data.size(); ++s) {
    for (int start = 0; start < train_data[s].steps; start += opts.chunk_steps) {
      chunks[s].push_back({start, std::min(opts.chunk_steps,
                                           train_data[s].steps - start)});
    }
  }

  nn::AdamState adam = nn::make_adam_state(nn::num_parameters(params));
  nn::MsddParameters grads = nn::make_msdd_parameters(params.cfg);
  nn::MsddParameters best_params = params;
  TrainReport report;
  double best_f1 = -1.0;
  int stale = 0;
  BatchForward fwd;

  for (int epoch = 0; epoch < opts.max_epochs; ++epoch) {
    // Item list: a rotating window of chunks per session, both speaker orders.
    std::vector<ChunkItem> items;
    for (std::size_t s = 0; s < train_data.size(); ++s) {
      const int total = static_cast<int>(chunks[s].size());
      const int take = opts.chunks_per_epoch > 0
                           ? std::min(opts.chunks_per_epoch, total)
                           : total;
      for (int j = 0; j < take; ++j) {
        const int c = (epoch * take + j) % total;
        for (int swapped = 0; swapped < 2; ++swapped) {
          items.push_back({static_cast<int>(s), chunks[s][c].first,
                           chunks[s][c].second, swapped == 1});
        }
      }
    }
    Rng rng(opts.seed + 0x51ed2700b1a7ULL * static_cast<std::uint64_t>(epoch + 1));
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[rng.uniform_int(i)]);
    }
    std::stable_sort(items.begin(), items.end(),
                     [](const ChunkItem& a, const ChunkItem& b) {
                       return a.len > b.len;
                     });

    double loss_weighted = 0.0;
    double element_count = 0.0;
    std::size_t pos = 0;
    while (pos < items.size()) {
      std::size_t end = pos;
      while (end < items.size() && items[end].len == items[pos].len &&
             end - pos < static_cast<std::size_t>(opts.batch_size)) {
        ++end;
      }
      std::vector<PairSpec> specs;
      specs.reserve(end - pos);
      for (std::size_t i = pos; i < end; ++i) {
        specs.push_back(make_spec(train_data[items[i].session], items[i]));
      }
      for_each_tensor(grads, [](const std::string&, nn::Tensor2& t) { t.set_zero(); });
      const double loss = pair_batch_loss_grad(params, specs, &grads, fwd);

      std::vector<double> flat_params = nn::flatten(params);
      const std::vector<double> flat_grads = nn::flatten(grads);
      nn::adam_step(flat_params, flat_grads, adam, opts.adam);
      nn::unflatten(flat_params, params);

      const double elements = static_cast<double>(specs.size()) * items[pos].len * 2.0;
      loss_weighted += loss * elements;
      element_count += elements;
      pos = end;
    }

    EpochMetrics metrics;
    metrics.epoch = epoch + 1;
    metrics.train_loss = element_count > 0.0 ? loss_weighted / element_count : 0.0;
    metrics.val_f1 = val_data.empty() ? 0.0 : validation_f1(params, val_data);
    if (metrics.val_f1 > best_f1 + 1e-9) {
      best_f1 = metrics.val_f1;
      best_params = params;
      report.best_epoch = metrics.epoch;
      stale = 0;
    } else {
      ++stale;
    }
    metrics.best_f1 = best_f1;
    report.epochs.push_back(metrics);
    if (opts.patience > 0 && stale >= opts.patience) break;
  }

  params = best_params;
  report.best_f1 = best_f1;
  return report;
}

// ---------------------------------------------------------------------------
// Inference

InferResult infer(const seg::MultiScaleSegmentSet& segments,
                  std::span<const EmbeddingMatrix> embeddings,
                  const cluster::ClusteringResult& clustering,
                  const nn::MsddParameters& params, const InferOptions& opts,
                  const std::string& session_id) {
  const int num_speakers = clustering.num_speakers;
  if (num_speakers < 1) throw std::invalid_argument("infer: clustering has no speakers");
  if (num_speakers > opts.max_speakers) {
    throw std::invalid_argument("infer: estimated " + std::to_string(num_speakers) +
                                " speakers exceeds max_speakers " +
                                std::to_string(opts.max_speakers));
  }
  check_model_shapes(params, segments, embeddings);
  const int steps = segments.num_base_segments();
  if (static_cast<int>(clustering.labels.size()) != steps) {
    throw std::invalid_argument("infer: labels/segments mismatch");
  }
  const auto& base = segments.per_scale.back();

  InferResult result;
  result.hypothesis.session_id = session_id;
  if (steps == 0) return result;

  auto speaker_name = [](int s) { return "spk" + std::to_string(s); };

  if (num_speakers == 1) {
    result.posteriors = nn::Tensor2(1, steps);
    std::fill(result.posteriors.v.begin(), result.posteriors.v.end(), 1.0 - 1e-7);
    std::vector<TimelineEntry> entries;
    entries.reserve(base.size());
    for (const auto& iv : base) entries.push_back({speaker_name(0), iv});
    result.hypothesis = merge_speaker_intervals(session_id, std::move(entries));
    return result;
  }

  const auto profile =
      cluster_average(segments, embeddings, clustering.labels, num_speakers);
  std::vector<nn::Tensor2> cos_tables(num_speakers);
  for (int s = 0; s < num_speakers; ++s) {
    cos_tables[s] = cosine_table(segments, embeddings, profile.v[s]);
  }

  std::vector<std::pair<int, int>> pairs;
  for (int s = 0; s < num_speakers; ++s) {
    for (int q = s + 1; q < num_speakers; ++q) pairs.push_back({s, q});
  }
  std::vector<PairSpec> specs;
  specs.reserve(pairs.size());
  for (const auto& [s, q] : pairs) {
    PairSpec spec;
    spec.segments = &segments;
    spec.embeddings = embeddings;
    spec.v_first = &profile.v[s];
    spec.v_second = &profile.v[q];
    spec.cos_first = &cos_tables[s];
    spec.cos_second = &cos_tables[q];
    spec.start = 0;
    spec.len = steps;
    specs.push_back(spec);
  }

  BatchForward fwd;
  pair_batch_forward(params, specs, false, fwd);

  result.posteriors = nn::Tensor2(num_speakers, steps);
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const auto [s, q] = pairs[p];
    for (int t = 0; t < steps; ++t) {
      result.posteriors.at(s, t) += nn::sigmoid(fwd.logits[t].at(static_cast<int>(p), 0));
      result.posteriors.at(q, t) += nn::sigmoid(fwd.logits[t].at(static_cast<int>(p), 1));
    }
  }
  const double inv = 1.0 / static_cast<double>(num_speakers - 1);
  for (auto& x : result.posteriors.v) x *= inv;

  const int num_scales = params.cfg.num_scales;
  result.scale_weight_rows =
      nn::Tensor2(static_cast<int>(pairs.size()) * steps, num_scales);
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    for (int t = 0; t < steps; ++t) {
      const auto& w = fwd.weights[p * steps + t];
      double* row = result.scale_weight_rows.row(static_cast<int>(p) * steps + t);
      std::copy(w.begin(), w.end(), row);
    }
  }

  std::vector<TimelineEntry> entries;
  for (int t = 0; t < steps; ++t) {
    bool any = false;
    for (int s = 0; s < num_speakers; ++s) {
      if (result.posteriors.at(s, t) > opts.threshold) {
        entries.push_back({speaker_name(s), base[t]});
        any = true;
      }
    }
    if (!any) entries.push_back({speaker_name(clustering.labels[t]), base[t]});
  }
  result.hypothesis = merge_speaker_intervals(session_id, std::move(entries));
  return result;
}

}  // namespace msdiar::msdd
