// Copyright 2026 msdiar authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace msdiar::nn {

// Dense row-major matrix. All parameters, activations and gradients use
// this one type so that flattening and optimizer state stay uniform.
struct Tensor2 {
  int rows = 0;
  int cols = 0;
  std::vector<double> v;

  Tensor2() = default;
  Tensor2(int r, int c) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, 0.0) {}

  double& at(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }
  double* data() { return v.data(); }
  const double* data() const { return v.data(); }
  double* row(int r) { return v.data() + static_cast<std::size_t>(r) * cols; }
  const double* row(int r) const { return v.data() + static_cast<std::size_t>(r) * cols; }
  std::size_t size() const { return v.size(); }
  void set_zero() { std::fill(v.begin(), v.end(), 0.0); }
};

double sigmoid(double x);
void relu_inplace(Tensor2& t);
std::vector<double> softmax(std::span<const double> logits);
// dL/dlogits given softmax output w and dL/dw.
std::vector<double> softmax_backward(std::span<const double> w,
                                     std::span<const double> dw);

// ---------------------------------------------------------------------------
// Linear layer: y = W x + b, with W of shape (out x in) and b of shape (1 x out).

struct Linear {
  Tensor2 w;
  Tensor2 b;
};

Linear make_linear(int in_dim, int out_dim);
std::vector<double> linear_forward(const Linear& layer, std::span<const double> x);
// Accumulates into grads; writes dL/dx into dx when non-null.
void linear_backward(const Linear& layer, std::span<const double> x,
                     std::span<const double> dy, Linear& grads,
                     std::span<double> dx);

// Batched variant: x (B x in), y (B x out).
Tensor2 linear_forward(const Linear& layer, const Tensor2& x);
void linear_backward(const Linear& layer, const Tensor2& x, const Tensor2& dy,
                     Linear& grads, Tensor2* dx);

// ---------------------------------------------------------------------------
// 1-D convolution over (channels x bins) maps, stride 1, no padding.
// Weights are (out_channels x in_channels*width).

struct Conv1d {
  int in_channels = 0;
  int out_channels = 0;
  int width = 1;
  Tensor2 w;
  Tensor2 b;
};

Conv1d make_conv1d(int in_channels, int out_channels, int width);
Tensor2 conv1d_forward(const Conv1d& layer, const Tensor2& input);
void conv1d_backward(const Conv1d& layer, const Tensor2& input,
                     const Tensor2& dout, Conv1d& grads, Tensor2* dinput);

// ---------------------------------------------------------------------------
// Binary cross-entropy.

// Mean over all elements; predictions are clamped to [1e-7, 1 - 1e-7].
double bce_loss(const Tensor2& predictions, const Tensor2& targets);
// d(mean loss)/d predictions at the clamped point.
Tensor2 bce_grad(const Tensor2& predictions, const Tensor2& targets);

// Numerically stable sigmoid + BCE on raw scores; mean over elements.
double bce_with_logits(const Tensor2& logits, const Tensor2& targets);
// d(mean loss)/d logits = (sigmoid(z) - t) / count. Exact for all z.
Tensor2 bce_with_logits_grad(const Tensor2& logits, const Tensor2& targets);

// ---------------------------------------------------------------------------
// Bidirectional two-layer LSTM. Gate order inside the stacked weights is
// [input; forget; cell; output]. Sequences are lists of (B x dim) matrices so
// same-length sequences can run in lockstep through one GEMM per step.

struct LstmDirection {
  Tensor2 w_ih;  // (4H x in)
  Tensor2 w_hh;  // (4H x H)
  Tensor2 b;     // (1 x 4H)
};

struct BiLstm {
  int input_dim = 0;
  int hidden = 0;
  LstmDirection fwd1, bwd1, fwd2, bwd2;
};

BiLstm make_bilstm(int input_dim, int hidden);

struct LstmDirCache {
  std::vector<Tensor2> gates;   // T of (B x 4H), post-activation
  std::vector<Tensor2> cell;    // T of (B x H)
  std::vector<Tensor2> tanh_c;  // T of (B x H)
};

struct BiLstmCache {
  std::vector<Tensor2> input;  // T of (B x in)
  std::vector<Tensor2> mid;    // T of (B x 2H), layer-1 output
  LstmDirCache f1, b1, f2, b2;
};

// Returns T matrices of (B x 2H): forward direction in columns [0, H),
// backward direction in [H, 2H). cache may be null for inference.
std::vector<Tensor2> bilstm_forward(const BiLstm& net,
                                    const std::vector<Tensor2>& x,
                                    BiLstmCache* cache);
// Accumulates parameter gradients; writes dL/dx when dx is non-null.
void bilstm_backward(const BiLstm& net, const BiLstmCache& cache,
                     const std::vector<Tensor2>& dout, BiLstm& grads,
                     std::vector<Tensor2>* dx);

// Single-sequence convenience wrapper (B = 1).
std::vector<std::vector<double>> bilstm_forward_seq(
    const BiLstm& net, const std::vector<std::vector<double>>& seq);

// ---------------------------------------------------------------------------
// Full decoder parameter bundle.

struct MsddConfig {
  int num_scales = 5;
  int emb_dim = 192;
  int conv_channels = 16;
  int fc_hidden = 256;
  int lstm_hidden = 256;
};

bool operator==(const MsddConfig& a, const MsddConfig& b);

struct MsddParameters {
  MsddConfig cfg;
  Conv1d conv1;  // 3K -> C, width 1
  Conv1d conv2;  // C -> C, width 1
  Linear fc1;    // C -> fc_hidden
  Linear fc2;    // fc_hidden -> K
  BiLstm lstm;   // 2K -> 2*lstm_hidden
  Linear head;   // 2*lstm_hidden -> 2
};

// Zero-valued parameters with the right shapes (gradient accumulators).
MsddParameters make_msdd_parameters(const MsddConfig& cfg);

// Seeded init: uniform +-1/sqrt(fan_in) per tensor, +1 on LSTM forget-gate
// biases, zero output head so a fresh model scores every step at 0.5.
MsddParameters init_msdd_parameters(const MsddConfig& cfg, std::uint64_t seed);

// Visits every parameter tensor in a fixed documented order.
void for_each_tensor(MsddParameters& p,
                     const std::function<void(const std::string&, Tensor2&)>& fn);
void for_each_tensor(const MsddParameters& p,
                     const std::function<void(const std::string&, const Tensor2&)>& fn);

std::size_t num_parameters(const MsddParameters& p);
std::vector<double> flatten(const MsddParameters& p);
// Throws std::invalid_argument on size mismatch.
void unflatten(std::span<const double> flat, MsddParameters& p);

// ---------------------------------------------------------------------------
// Adam.

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;
};

AdamState make_adam_state(std::size_t num_params);
// One update with bias correction; `step` must have been incremented by the
// caller-facing wrapper. Spans must all share num_params length.
void adam_step(std::span<double> params, std::span<const double> grads,
               AdamState& state, const AdamHyper& hyper);

// ---------------------------------------------------------------------------
// Finite-difference gradient checking (central differences).

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  bool all_finite = true;

  bool passed(double tol = 1e-5) const { return all_finite && max_rel_error < tol; }
};

// Perturbs params in place (restoring them), calls loss() per probe, and
// compares against the supplied analytic gradient with relative error
// |a - n| / max(|a|, |n|, 1e-3).
GradCheckReport grad_check(std::span<double> params,
                           const std::function<double()>& loss,
                           std::span<const double> analytic, double h = 1e-4);

// ---------------------------------------------------------------------------
// Checkpoint serialization: one binary container holding a JSON header
// (shapes, config, seed) and a float32 little-endian payload.

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const MsddParameters& p,
                     std::uint64_t seed);
// Throws std::runtime_error on bad magic, unsupported version, shape
// mismatch, or payload length mismatch.
MsddParameters load_checkpoint(const std::filesystem::path& path,
                               std::uint64_t* seed_out = nullptr);

}  // namespace msdiar::nn
