// Copyright 2026 msdiar authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "msdiar/clusterer.hpp"
#include "msdiar/core.hpp"
#include "msdiar/neuralkit.hpp"
#include "msdiar/segmenter.hpp"

namespace msdiar::msdd {

// Per-speaker, per-scale cluster-average embeddings.
struct ClusterProfile {
  int num_speakers = 0;
  int emb_dim = 0;
  std::vector<nn::Tensor2> v;  // v[s] is (K x emb_dim)
};

// v[s] row k = arithmetic mean over base segments labeled s of the grouped
// scale-k embedding. Throws if a label has no segments or a mean vector has
// zero norm.
ClusterProfile cluster_average(const seg::MultiScaleSegmentSet& segments,
                               std::span<const EmbeddingMatrix> embeddings,
                               std::span<const int> labels, int num_speakers);

// (3K x dim): input rows u_0..u_{K-1}, then speaker-1 profile rows, then
// speaker-2 profile rows.
nn::Tensor2 stack_input(const nn::Tensor2& u, const nn::Tensor2& v1,
                        const nn::Tensor2& v2);

// Intermediates of the scale-weight network needed for its backward pass.
struct ScaleWeightCache {
  nn::Tensor2 a1, a2;             // post-ReLU conv maps (C x bins)
  std::vector<double> pooled;     // mean over bins (C)
  std::vector<double> fc1_act;    // post-ReLU hidden
  std::vector<double> weights;    // softmax output (K)
};

// conv(3K->C, width 1) -> ReLU -> conv(C->C, width 1) -> ReLU -> mean-pool
// over bins -> fc1 -> ReLU -> fc2 -> softmax. One weight vector per step,
// shared by both speakers of the pair.
std::vector<double> scale_weights(const nn::MsddParameters& params,
                                  const nn::Tensor2& stacked,
                                  ScaleWeightCache* cache = nullptr);
void scale_weights_backward(const nn::MsddParameters& params,
                            const nn::Tensor2& stacked,
                            const ScaleWeightCache& cache,
                            std::span<const double> dweights,
                            nn::MsddParameters& grads);

// c^s[k] = w_k * cos(v_s row k, u row k); returns [c^1; c^2] of length 2K.
std::vector<double> context_vectors(const nn::Tensor2& u, const nn::Tensor2& v1,
                                    const nn::Tensor2& v2,
                                    std::span<const double> w);

// BiLSTM + linear head + sigmoid over a precomputed context sequence.
std::vector<std::array<double, 2>> decode_pair(
    const nn::MsddParameters& params,
    const std::vector<std::vector<double>>& context_seq);

// target[s][i] = 1 iff speaker s covers strictly more than half of base
// segment i. Shape (2 x T).
nn::Tensor2 make_labels(const SpeakerTimeline& timeline,
                        const std::vector<TimeInterval>& base_segments,
                        const std::string& speaker1, const std::string& speaker2);

// Everything fixed about decoding one speaker pair over a span of steps.
struct PairSequence {
  int num_scales = 0;
  int emb_dim = 0;
  std::vector<nn::Tensor2> stacked;  // T of (3K x dim)
  nn::Tensor2 cos1, cos2;            // (T x K) cosines against v1 / v2
};

// Builds steps [start, start+len) of the pair sequence for profiles v1/v2.
PairSequence build_pair_sequence(const seg::MultiScaleSegmentSet& segments,
                                 std::span<const EmbeddingMatrix> embeddings,
                                 const nn::Tensor2& v1, const nn::Tensor2& v2,
                                 int start, int len);

// Mean BCE over all steps and both outputs; accumulates parameter gradients
// when grads is non-null. targets is (2 x T) in the sequence's speaker order.
double pair_sequence_loss(const nn::MsddParameters& params,
                          const PairSequence& seq, const nn::Tensor2& targets,
                          nn::MsddParameters* grads);

// ---------------------------------------------------------------------------
// Training

struct TrainSession {
  std::string session_id;
  seg::MultiScaleSegmentSet segments;
  std::vector<EmbeddingMatrix> embeddings;
  SpeakerTimeline reference;
};

struct TrainOptions {
  nn::AdamHyper adam;
  int batch_size = 16;
  int max_epochs = 6;
  int patience = 2;
  int chunk_steps = 50;
  // Chunks per session drawn each epoch (rotating window; 0 = all chunks).
  int chunks_per_epoch = 2;
  std::uint64_t seed = 17;
  // Profiles from reference labels (default) or from the clusterer.
  bool oracle_profiles = true;
  double cluster_r = 1.0;
  cluster::NmeScOptions nme;
};

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double val_f1 = 0.0;
  double best_f1 = 0.0;
};

struct TrainReport {
  std::vector<EpochMetrics> epochs;
  int best_epoch = 0;
  double best_f1 = 0.0;
};

// Trains in place; params end at the best-validation-F1 snapshot. Sessions
// with a speaker count other than 2 are rejected with the session id in the
// error message. Deterministic given opts.seed.
TrainReport train(nn::MsddParameters& params,
                  const std::vector<TrainSession>& train_set,
                  const std::vector<TrainSession>& val_set,
                  const TrainOptions& opts);

// ---------------------------------------------------------------------------
// Inference

struct InferOptions {
  double threshold = 0.7;
  int max_speakers = 8;
};

struct InferResult {
  nn::Tensor2 posteriors;  // (S x T), averaged over the pairs of each speaker
  SpeakerTimeline hypothesis;
  // One row per (pair, step) in pair-major order; empty when S == 1.
  nn::Tensor2 scale_weight_rows;
};

// Pairwise decoding with threshold T and fallback to the clustering label
// when no speaker clears T. S == 1 passes the clustering labels through.
InferResult infer(const seg::MultiScaleSegmentSet& segments,
                  std::span<const EmbeddingMatrix> embeddings,
                  const cluster::ClusteringResult& clustering,
                  const nn::MsddParameters& params, const InferOptions& opts,
                  const std::string& session_id);

}  // namespace msdiar::msdd
