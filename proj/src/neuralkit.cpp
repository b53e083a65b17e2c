// Copyright 2026 msdiar authors
// SPDX-License-Identifier: Apache-2.0
#include "msdiar/neuralkit.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "msdiar/random.hpp"

namespace msdiar::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<RowMat> emap(Tensor2& t) {
  return Eigen::Map<RowMat>(t.data(), t.rows, t.cols);
}

Eigen::Map<const RowMat> emap(const Tensor2& t) {
  return Eigen::Map<const RowMat>(t.data(), t.rows, t.cols);
}

void check_same_shape(const Tensor2& a, const Tensor2& b, const char* what) {
  if (a.rows != b.rows || a.cols != b.cols) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch");
  }
}

}  // namespace

double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void relu_inplace(Tensor2& t) {
  for (auto& x : t.v) x = x > 0.0 ? x : 0.0;
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("softmax of empty vector");
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    sum += out[i];
  }
  for (auto& x : out) x /= sum;
  return out;
}

std::vector<double> softmax_backward(std::span<const double> w,
                                     std::span<const double> dw) {
  if (w.size() != dw.size()) {
    throw std::invalid_argument("softmax_backward: size mismatch");
  }
  double inner = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) inner += w[i] * dw[i];
  std::vector<double> out(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) out[i] = w[i] * (dw[i] - inner);
  return out;
}

// ---------------------------------------------------------------------------
// Linear

Linear make_linear(int in_dim, int out_dim) {
  if (in_dim <= 0 || out_dim <= 0) {
    throw std::invalid_argument("linear layer needs positive dimensions");
  }
  return Linear{Tensor2(out_dim, in_dim), Tensor2(1, out_dim)};
}

std::vector<double> linear_forward(const Linear& layer, std::span<const double> x) {
  const int in = layer.w.cols;
  const int out = layer.w.rows;
  if (static_cast<int>(x.size()) != in) {
    throw std::invalid_argument("linear_forward: input size mismatch");
  }
  std::vector<double> y(out);
  for (int o = 0; o < out; ++o) {
    const double* wr = layer.w.row(o);
    double s = layer.b.at(0, o);
    for (int i = 0; i < in; ++i) s += wr[i] * x[i];
    y[o] = s;
  }
  return y;
}

void linear_backward(const Linear& layer, std::span<const double> x,
                     std::span<const double> dy, Linear& grads,
                     std::span<double> dx) {
  const int in = layer.w.cols;
  const int out = layer.w.rows;
  if (static_cast<int>(x.size()) != in || static_cast<int>(dy.size()) != out) {
    throw std::invalid_argument("linear_backward: size mismatch");
  }
  check_same_shape(layer.w, grads.w, "linear_backward grads");
  for (int o = 0; o < out; ++o) {
    double* gw = grads.w.row(o);
    const double d = dy[o];
    for (int i = 0; i < in; ++i) gw[i] += d * x[i];
    grads.b.at(0, o) += d;
  }
  if (!dx.empty()) {
    if (static_cast<int>(dx.size()) != in) {
      throw std::invalid_argument("linear_backward: dx size mismatch");
    }
    for (int i = 0; i < in; ++i) {
      double s = 0.0;
      for (int o = 0; o < out; ++o) s += layer.w.at(o, i) * dy[o];
      dx[i] += s;
    }
  }
}

Tensor2 linear_forward(const Linear& layer, const Tensor2& x) {
  if (x.cols != layer.w.cols) {
    throw std::invalid_argument("linear_forward: input size mismatch");
  }
  Tensor2 y(x.rows, layer.w.rows);
  emap(y).noalias() = emap(x) * emap(layer.w).transpose();
  emap(y).rowwise() += emap(layer.b).row(0);
  return y;
}

void linear_backward(const Linear& layer, const Tensor2& x, const Tensor2& dy,
                     Linear& grads, Tensor2* dx) {
  if (x.cols != layer.w.cols || dy.cols != layer.w.rows || dy.rows != x.rows) {
    throw std::invalid_argument("linear_backward: size mismatch");
  }
  emap(grads.w).noalias() += emap(dy).transpose() * emap(x);
  emap(grads.b).row(0) += emap(dy).colwise().sum();
  if (dx != nullptr) {
    check_same_shape(*dx, x, "linear_backward dx");
    emap(*dx).noalias() += emap(dy) * emap(layer.w);
  }
}

// ---------------------------------------------------------------------------
// Conv1d

Conv1d make_conv1d(int in_channels, int out_channels, int width) {
  if (in_channels <= 0 || out_channels <= 0 || width <= 0) {
    throw std::invalid_argument("conv1d layer needs positive dimensions");
  }
  Conv1d c;
  c.in_channels = in_channels;
  c.out_channels = out_channels;
  c.width = width;
  c.w = Tensor2(out_channels, in_channels * width);
  c.b = Tensor2(1, out_channels);
  return c;
}

Tensor2 conv1d_forward(const Conv1d& layer, const Tensor2& input) {
  if (input.rows != layer.in_channels) {
    throw std::invalid_argument("conv1d_forward: channel mismatch");
  }
  const int out_bins = input.cols - layer.width + 1;
  if (out_bins < 1) {
    throw std::invalid_argument("conv1d_forward: input narrower than kernel");
  }
  Tensor2 out(layer.out_channels, out_bins);
  if (layer.width == 1) {
    emap(out).noalias() = emap(layer.w) * emap(input);
    emap(out).colwise() += emap(layer.b).row(0).transpose();
    return out;
  }
  for (int oc = 0; oc < layer.out_channels; ++oc) {
    const double* wr = layer.w.row(oc);
    const double bias = layer.b.at(0, oc);
    for (int ob = 0; ob < out_bins; ++ob) {
      double s = bias;
      for (int ic = 0; ic < layer.in_channels; ++ic) {
        const double* in_row = input.row(ic) + ob;
        const double* w_row = wr + ic * layer.width;
        for (int dx = 0; dx < layer.width; ++dx) s += w_row[dx] * in_row[dx];
      }
      out.at(oc, ob) = s;
    }
  }
  return out;
}

void conv1d_backward(const Conv1d& layer, const Tensor2& input,
                     const Tensor2& dout, Conv1d& grads, Tensor2* dinput) {
  const int out_bins = input.cols - layer.width + 1;
  if (input.rows != layer.in_channels || dout.rows != layer.out_channels ||
      dout.cols != out_bins) {
    throw std::invalid_argument("conv1d_backward: shape mismatch");
  }
  check_same_shape(layer.w, grads.w, "conv1d_backward grads");
  if (dinput != nullptr) check_same_shape(*dinput, input, "conv1d_backward dinput");
  if (layer.width == 1) {
    emap(grads.w).noalias() += emap(dout) * emap(input).transpose();
    emap(grads.b).row(0) += emap(dout).rowwise().sum().transpose();
    if (dinput != nullptr) {
      emap(*dinput).noalias() += emap(layer.w).transpose() * emap(dout);
    }
    return;
  }
  for (int oc = 0; oc < layer.out_channels; ++oc) {
    double* gw = grads.w.row(oc);
    double gb = 0.0;
    for (int ob = 0; ob < out_bins; ++ob) {
      const double d = dout.at(oc, ob);
      gb += d;
      for (int ic = 0; ic < layer.in_channels; ++ic) {
        const double* in_row = input.row(ic) + ob;
        double* gw_row = gw + ic * layer.width;
        for (int dx = 0; dx < layer.width; ++dx) gw_row[dx] += d * in_row[dx];
      }
    }
    grads.b.at(0, oc) += gb;
  }
  if (dinput != nullptr) {
    for (int oc = 0; oc < layer.out_channels; ++oc) {
      const double* wr = layer.w.row(oc);
      for (int ob = 0; ob < out_bins; ++ob) {
        const double d = dout.at(oc, ob);
        for (int ic = 0; ic < layer.in_channels; ++ic) {
          double* din_row = dinput->row(ic) + ob;
          const double* w_row = wr + ic * layer.width;
          for (int dx = 0; dx < layer.width; ++dx) din_row[dx] += d * w_row[dx];
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// BCE

namespace {
constexpr double kBceEps = 1e-7;
}

double bce_loss(const Tensor2& predictions, const Tensor2& targets) {
  check_same_shape(predictions, targets, "bce_loss");
  if (predictions.size() == 0) throw std::invalid_argument("bce_loss: empty input");
  double sum = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double p = std::clamp(predictions.v[i], kBceEps, 1.0 - kBceEps);
    const double t = targets.v[i];
    sum += -(t * std::log(p) + (1.0 - t) * std::log(1.0 - p));
  }
  return sum / static_cast<double>(predictions.size());
}

Tensor2 bce_grad(const Tensor2& predictions, const Tensor2& targets) {
  check_same_shape(predictions, targets, "bce_grad");
  Tensor2 g(predictions.rows, predictions.cols);
  const double inv_n = 1.0 / static_cast<double>(predictions.size());
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double p = std::clamp(predictions.v[i], kBceEps, 1.0 - kBceEps);
    const double t = targets.v[i];
    g.v[i] = (-t / p + (1.0 - t) / (1.0 - p)) * inv_n;
  }
  return g;
}

double bce_with_logits(const Tensor2& logits, const Tensor2& targets) {
  check_same_shape(logits, targets, "bce_with_logits");
  if (logits.size() == 0) throw std::invalid_argument("bce_with_logits: empty input");
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double z = logits.v[i];
    const double t = targets.v[i];
    sum += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
  }
  return sum / static_cast<double>(logits.size());
}

Tensor2 bce_with_logits_grad(const Tensor2& logits, const Tensor2& targets) {
  check_same_shape(logits, targets, "bce_with_logits_grad");
  Tensor2 g(logits.rows, logits.cols);
  const double inv_n = 1.0 / static_cast<double>(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    g.v[i] = (sigmoid(logits.v[i]) - targets.v[i]) * inv_n;
  }
  return g;
}

// ---------------------------------------------------------------------------
// BiLSTM

BiLstm make_bilstm(int input_dim, int hidden) {
  if (input_dim <= 0 || hidden <= 0) {
    throw std::invalid_argument("bilstm needs positive dimensions");
  }
  auto direction = [&](int in) {
    return LstmDirection{Tensor2(4 * hidden, in), Tensor2(4 * hidden, hidden),
                         Tensor2(1, 4 * hidden)};
  };
  BiLstm net;
  net.input_dim = input_dim;
  net.hidden = hidden;
  net.fwd1 = direction(input_dim);
  net.bwd1 = direction(input_dim);
  net.fwd2 = direction(2 * hidden);
  net.bwd2 = direction(2 * hidden);
  return net;
}

namespace {

void lstm_dir_forward(const LstmDirection& dir, const std::vector<Tensor2>& xs,
                      bool reverse, int hidden, std::vector<Tensor2>& out,
                      int out_col, LstmDirCache* cache) {
  const int T = static_cast<int>(xs.size());
  const int B = xs[0].rows;
  const int H = hidden;
  Tensor2 h(B, H);
  Tensor2 c(B, H);
  Tensor2 z(B, 4 * H);
  Tensor2 tc(B, H);
  if (cache != nullptr) {
    cache->gates.assign(T, Tensor2());
    cache->cell.assign(T, Tensor2());
    cache->tanh_c.assign(T, Tensor2());
  }
  for (int s = 0; s < T; ++s) {
    const int t = reverse ? T - 1 - s : s;
    emap(z).noalias() = emap(xs[t]) * emap(dir.w_ih).transpose();
    emap(z).noalias() += emap(h) * emap(dir.w_hh).transpose();
    emap(z).rowwise() += emap(dir.b).row(0);
    for (int r = 0; r < B; ++r) {
      double* zr = z.row(r);
      for (int j = 0; j < 2 * H; ++j) zr[j] = sigmoid(zr[j]);
      for (int j = 2 * H; j < 3 * H; ++j) zr[j] = std::tanh(zr[j]);
      for (int j = 3 * H; j < 4 * H; ++j) zr[j] = sigmoid(zr[j]);
    }
    for (int r = 0; r < B; ++r) {
      const double* zr = z.row(r);
      double* cr = c.row(r);
      double* hr = h.row(r);
      double* tcr = tc.row(r);
      for (int j = 0; j < H; ++j) {
        cr[j] = zr[H + j] * cr[j] + zr[j] * zr[2 * H + j];
        tcr[j] = std::tanh(cr[j]);
        hr[j] = zr[3 * H + j] * tcr[j];
      }
    }
    for (int r = 0; r < B; ++r) {
      std::copy(h.row(r), h.row(r) + H, out[t].row(r) + out_col);
    }
    if (cache != nullptr) {
      cache->gates[t] = z;
      cache->cell[t] = c;
      cache->tanh_c[t] = tc;
    }
  }
}

void lstm_dir_backward(const LstmDirection& dir, const LstmDirCache& cache,
                       const std::vector<Tensor2>& inputs, bool reverse,
                       int hidden, const std::vector<Tensor2>& dout,
                       int dout_col, LstmDirection& grads,
                       std::vector<Tensor2>* dx) {
  const int T = static_cast<int>(inputs.size());
  const int B = inputs[0].rows;
  const int H = hidden;
  Tensor2 dh(B, H);
  Tensor2 dc(B, H);
  Tensor2 dz(B, 4 * H);
  Tensor2 hprev(B, H);
  for (int s = T - 1; s >= 0; --s) {
    const int t = reverse ? T - 1 - s : s;
    const int p = reverse ? t + 1 : t - 1;
    const bool has_prev = reverse ? (t + 1 < T) : (t - 1 >= 0);
    const Tensor2& z = cache.gates[t];
    const Tensor2& tc = cache.tanh_c[t];
    for (int r = 0; r < B; ++r) {
      const double* src = dout[t].row(r) + dout_col;
      double* dhr = dh.row(r);
      for (int j = 0; j < H; ++j) dhr[j] += src[j];
    }
    for (int r = 0; r < B; ++r) {
      const double* zr = z.row(r);
      const double* tcr = tc.row(r);
      const double* cp = has_prev ? cache.cell[p].row(r) : nullptr;
      double* dhr = dh.row(r);
      double* dcr = dc.row(r);
      double* dzr = dz.row(r);
      for (int j = 0; j < H; ++j) {
        const double ig = zr[j];
        const double fg = zr[H + j];
        const double gg = zr[2 * H + j];
        const double og = zr[3 * H + j];
        const double dct = dcr[j] + dhr[j] * og * (1.0 - tcr[j] * tcr[j]);
        dzr[j] = dct * gg * ig * (1.0 - ig);
        dzr[H + j] = dct * (cp != nullptr ? cp[j] : 0.0) * fg * (1.0 - fg);
        dzr[2 * H + j] = dct * ig * (1.0 - gg * gg);
        dzr[3 * H + j] = dhr[j] * tcr[j] * og * (1.0 - og);
        dcr[j] = dct * fg;
      }
    }
    emap(grads.w_ih).noalias() += emap(dz).transpose() * emap(inputs[t]);
    if (has_prev) {
      for (int r = 0; r < B; ++r) {
        const double* zp = cache.gates[p].row(r);
        const double* tcp = cache.tanh_c[p].row(r);
        double* hp = hprev.row(r);
        for (int j = 0; j < H; ++j) hp[j] = zp[3 * H + j] * tcp[j];
      }
      emap(grads.w_hh).noalias() += emap(dz).transpose() * emap(hprev);
    }
    emap(grads.b).row(0) += emap(dz).colwise().sum();
    if (dx != nullptr) {
      emap((*dx)[t]).noalias() += emap(dz) * emap(dir.w_ih);
    }
    emap(dh).noalias() = emap(dz) * emap(dir.w_hh);
  }
}

}  // namespace

std::vector<Tensor2> bilstm_forward(const BiLstm& net,
                                    const std::vector<Tensor2>& x,
                                    BiLstmCache* cache) {
  if (x.empty()) throw std::invalid_argument("bilstm_forward: empty sequence");
  const int B = x[0].rows;
  for (const auto& xt : x) {
    if (xt.rows != B || xt.cols != net.input_dim) {
      throw std::invalid_argument("bilstm_forward: input shape mismatch");
    }
  }
  const int T = static_cast<int>(x.size());
  const int H = net.hidden;
  std::vector<Tensor2> mid(T, Tensor2(B, 2 * H));
  std::vector<Tensor2> out(T, Tensor2(B, 2 * H));
  lstm_dir_forward(net.fwd1, x, false, H, mid, 0, cache ? &cache->f1 : nullptr);
  lstm_dir_forward(net.bwd1, x, true, H, mid, H, cache ? &cache->b1 : nullptr);
  lstm_dir_forward(net.fwd2, mid, false, H, out, 0, cache ? &cache->f2 : nullptr);
  lstm_dir_forward(net.bwd2, mid, true, H, out, H, cache ? &cache->b2 : nullptr);
  if (cache != nullptr) {
    cache->input = x;
    cache->mid = std::move(mid);
  }
  return out;
}

void bilstm_backward(const BiLstm& net, const BiLstmCache& cache,
                     const std::vector<Tensor2>& dout, BiLstm& grads,
                     std::vector<Tensor2>* dx) {
  if (cache.input.empty() || dout.size() != cache.input.size()) {
    throw std::invalid_argument("bilstm_backward: cache/dout mismatch");
  }
  const int T = static_cast<int>(cache.input.size());
  const int B = cache.input[0].rows;
  const int H = net.hidden;
  for (const auto& dt : dout) {
    if (dt.rows != B || dt.cols != 2 * H) {
      throw std::invalid_argument("bilstm_backward: dout shape mismatch");
    }
  }
  std::vector<Tensor2> dmid(T, Tensor2(B, 2 * H));
  lstm_dir_backward(net.fwd2, cache.f2, cache.mid, false, H, dout, 0, grads.fwd2,
                    &dmid);
  lstm_dir_backward(net.bwd2, cache.b2, cache.mid, true, H, dout, H, grads.bwd2,
                    &dmid);
  if (dx != nullptr) dx->assign(T, Tensor2(B, net.input_dim));
  lstm_dir_backward(net.fwd1, cache.f1, cache.input, false, H, dmid, 0,
                    grads.fwd1, dx);
  lstm_dir_backward(net.bwd1, cache.b1, cache.input, true, H, dmid, H,
                    grads.bwd1, dx);
}

std::vector<std::vector<double>> bilstm_forward_seq(
    const BiLstm& net, const std::vector<std::vector<double>>& seq) {
  std::vector<Tensor2> x(seq.size());
  for (std::size_t t = 0; t < seq.size(); ++t) {
    if (static_cast<int>(seq[t].size()) != net.input_dim) {
      throw std::invalid_argument("bilstm_forward_seq: input size mismatch");
    }
    x[t] = Tensor2(1, net.input_dim);
    std::copy(seq[t].begin(), seq[t].end(), x[t].data());
  }
  auto out = bilstm_forward(net, x, nullptr);
  std::vector<std::vector<double>> result(out.size());
  for (std::size_t t = 0; t < out.size(); ++t) {
    result[t].assign(out[t].data(), out[t].data() + out[t].cols);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Parameter bundle

bool operator==(const MsddConfig& a, const MsddConfig& b) {
  return a.num_scales == b.num_scales && a.emb_dim == b.emb_dim &&
         a.conv_channels == b.conv_channels && a.fc_hidden == b.fc_hidden &&
         a.lstm_hidden == b.lstm_hidden;
}

MsddParameters make_msdd_parameters(const MsddConfig& cfg) {
  if (cfg.num_scales <= 0 || cfg.emb_dim <= 0 || cfg.conv_channels <= 0 ||
      cfg.fc_hidden <= 0 || cfg.lstm_hidden <= 0) {
    throw std::invalid_argument("msdd config fields must be positive");
  }
  MsddParameters p;
  p.cfg = cfg;
  const int scales = cfg.num_scales;
  p.conv1 = make_conv1d(3 * scales, cfg.conv_channels, 1);
  p.conv2 = make_conv1d(cfg.conv_channels, cfg.conv_channels, 1);
  p.fc1 = make_linear(cfg.conv_channels, cfg.fc_hidden);
  p.fc2 = make_linear(cfg.fc_hidden, scales);
  p.lstm = make_bilstm(2 * scales, cfg.lstm_hidden);
  p.head = make_linear(2 * cfg.lstm_hidden, 2);
  return p;
}

namespace {

template <typename Params, typename Fn>
void visit_tensors(Params& p, const Fn& fn) {
  fn("conv1.w", p.conv1.w);
  fn("conv1.b", p.conv1.b);
  fn("conv2.w", p.conv2.w);
  fn("conv2.b", p.conv2.b);
  fn("fc1.w", p.fc1.w);
  fn("fc1.b", p.fc1.b);
  fn("fc2.w", p.fc2.w);
  fn("fc2.b", p.fc2.b);
  auto dir = [&](const char* name, auto& d) {
    fn(std::string(name) + ".w_ih", d.w_ih);
    fn(std::string(name) + ".w_hh", d.w_hh);
    fn(std::string(name) + ".b", d.b);
  };
  dir("lstm.fwd1", p.lstm.fwd1);
  dir("lstm.bwd1", p.lstm.bwd1);
  dir("lstm.fwd2", p.lstm.fwd2);
  dir("lstm.bwd2", p.lstm.bwd2);
  fn("head.w", p.head.w);
  fn("head.b", p.head.b);
}

}  // namespace

void for_each_tensor(MsddParameters& p,
                     const std::function<void(const std::string&, Tensor2&)>& fn) {
  visit_tensors(p, fn);
}

void for_each_tensor(
    const MsddParameters& p,
    const std::function<void(const std::string&, const Tensor2&)>& fn) {
  visit_tensors(p, fn);
}

MsddParameters init_msdd_parameters(const MsddConfig& cfg, std::uint64_t seed) {
  MsddParameters p = make_msdd_parameters(cfg);
  Rng rng(seed);
  auto fill = [&](Tensor2& t, int fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& x : t.v) x = rng.uniform(-bound, bound);
  };
  const int scales = cfg.num_scales;
  const int channels = cfg.conv_channels;
  const int hidden = cfg.lstm_hidden;
  fill(p.conv1.w, 3 * scales);
  fill(p.conv1.b, 3 * scales);
  fill(p.conv2.w, channels);
  fill(p.conv2.b, channels);
  fill(p.fc1.w, channels);
  fill(p.fc1.b, channels);
  fill(p.fc2.w, cfg.fc_hidden);
  fill(p.fc2.b, cfg.fc_hidden);
  auto fill_dir = [&](LstmDirection& d, int in_dim) {
    fill(d.w_ih, in_dim);
    fill(d.w_hh, hidden);
    fill(d.b, hidden);
    // Forget-gate bias offset keeps early memory open.
    for (int j = hidden; j < 2 * hidden; ++j) d.b.at(0, j) += 1.0;
  };
  fill_dir(p.lstm.fwd1, 2 * scales);
  fill_dir(p.lstm.bwd1, 2 * scales);
  fill_dir(p.lstm.fwd2, 2 * hidden);
  fill_dir(p.lstm.bwd2, 2 * hidden);
  // head stays zero: a fresh decoder emits 0.5 for every step.
  return p;
}

std::size_t num_parameters(const MsddParameters& p) {
  std::size_t n = 0;
  for_each_tensor(p, [&](const std::string&, const Tensor2& t) { n += t.size(); });
  return n;
}

std::vector<double> flatten(const MsddParameters& p) {
  std::vector<double> flat;
  flat.reserve(num_parameters(p));
  for_each_tensor(p, [&](const std::string&, const Tensor2& t) {
    flat.insert(flat.end(), t.v.begin(), t.v.end());
  });
  return flat;
}

void unflatten(std::span<const double> flat, MsddParameters& p) {
  if (flat.size() != num_parameters(p)) {
    throw std::invalid_argument("unflatten: size mismatch");
  }
  std::size_t pos = 0;
  for_each_tensor(p, [&](const std::string&, Tensor2& t) {
    std::copy(flat.begin() + pos, flat.begin() + pos + t.size(), t.v.begin());
    pos += t.size();
  });
}

// ---------------------------------------------------------------------------
// Adam

AdamState make_adam_state(std::size_t num_params) {
  AdamState s;
  s.m.assign(num_params, 0.0);
  s.v.assign(num_params, 0.0);
  return s;
}

void adam_step(std::span<double> params, std::span<const double> grads,
               AdamState& state, const AdamHyper& hyper) {
  const std::size_t n = params.size();
  if (grads.size() != n || state.m.size() != n || state.v.size() != n) {
    throw std::invalid_argument("adam_step: size mismatch");
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grads[i];
    state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * g;
    state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * g * g;
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params[i] -= hyper.lr * mhat / (std::sqrt(vhat) + hyper.eps);
  }
}

// ---------------------------------------------------------------------------
// Gradient checking

GradCheckReport grad_check(std::span<double> params,
                           const std::function<double()>& loss,
                           std::span<const double> analytic, double h) {
  if (params.size() != analytic.size()) {
    throw std::invalid_argument("grad_check: size mismatch");
  }
  GradCheckReport report;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double orig = params[i];
    params[i] = orig + h;
    const double lp = loss();
    params[i] = orig - h;
    const double lm = loss();
    params[i] = orig;
    const double numeric = (lp - lm) / (2.0 * h);
    const double analytic_i = analytic[i];
    if (!std::isfinite(numeric) || !std::isfinite(analytic_i)) {
      report.all_finite = false;
      report.worst_index = i;
      report.max_rel_error = std::numeric_limits<double>::infinity();
      continue;
    }
    const double rel = std::abs(analytic_i - numeric) /
                       std::max({std::abs(analytic_i), std::abs(numeric), 1e-3});
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_index = i;
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kCheckpointMagic[8] = {'M', 'S', 'D', 'I', 'A', 'R', 'C', 'K'};

void write_u32(std::ostream& os, std::uint32_t x) {
  unsigned char b[4] = {static_cast<unsigned char>(x & 0xff),
                        static_cast<unsigned char>((x >> 8) & 0xff),
                        static_cast<unsigned char>((x >> 16) & 0xff),
                        static_cast<unsigned char>((x >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("checkpoint: truncated header");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_f32(std::ostream& os, float f) {
  write_u32(os, std::bit_cast<std::uint32_t>(f));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const MsddParameters& p,
                     std::uint64_t seed) {
  nlohmann::json header;
  header["config"] = {{"num_scales", p.cfg.num_scales},
                      {"emb_dim", p.cfg.emb_dim},
                      {"conv_channels", p.cfg.conv_channels},
                      {"fc_hidden", p.cfg.fc_hidden},
                      {"lstm_hidden", p.cfg.lstm_hidden}};
  header["seed"] = seed;
  nlohmann::json tensors = nlohmann::json::array();
  for_each_tensor(p, [&](const std::string& name, const Tensor2& t) {
    tensors.push_back({{"name", name}, {"rows", t.rows}, {"cols", t.cols}});
  });
  header["tensors"] = tensors;
  const std::string header_text = header.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open for writing: " + path.string());
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  write_u32(os, kCheckpointVersion);
  write_u32(os, static_cast<std::uint32_t>(header_text.size()));
  os.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
  for_each_tensor(p, [&](const std::string&, const Tensor2& t) {
    for (double x : t.v) write_f32(os, static_cast<float>(x));
  });
  os.flush();
  if (!os) throw std::runtime_error("checkpoint: write failed: " + path.string());
}

MsddParameters load_checkpoint(const std::filesystem::path& path,
                               std::uint64_t* seed_out) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open: " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("checkpoint: bad magic: " + path.string());
  }
  const std::uint32_t version = read_u32(is);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " +
                             std::to_string(version));
  }
  const std::uint32_t header_len = read_u32(is);
  std::string header_text(header_len, '\0');
  is.read(header_text.data(), header_len);
  if (!is) throw std::runtime_error("checkpoint: truncated header");
  nlohmann::json header = nlohmann::json::parse(header_text);

  MsddConfig cfg;
  const auto& jc = header.at("config");
  cfg.num_scales = jc.at("num_scales").get<int>();
  cfg.emb_dim = jc.at("emb_dim").get<int>();
  cfg.conv_channels = jc.at("conv_channels").get<int>();
  cfg.fc_hidden = jc.at("fc_hidden").get<int>();
  cfg.lstm_hidden = jc.at("lstm_hidden").get<int>();
  MsddParameters p = make_msdd_parameters(cfg);

  const auto& jt = header.at("tensors");
  std::size_t index = 0;
  std::size_t expected_values = 0;
  for_each_tensor(p, [&](const std::string& name, const Tensor2& t) {
    if (index >= jt.size()) {
      throw std::runtime_error("checkpoint: tensor list too short");
    }
    const auto& entry = jt[index++];
    if (entry.at("name").get<std::string>() != name ||
        entry.at("rows").get<int>() != t.rows ||
        entry.at("cols").get<int>() != t.cols) {
      throw std::runtime_error("checkpoint: shape mismatch for tensor " + name);
    }
    expected_values += t.size();
  });
  if (index != jt.size()) throw std::runtime_error("checkpoint: tensor list too long");

  const auto payload_start = is.tellg();
  is.seekg(0, std::ios::end);
  const auto file_end = is.tellg();
  is.seekg(payload_start);
  const std::size_t payload_bytes =
      static_cast<std::size_t>(file_end - payload_start);
  if (payload_bytes != expected_values * 4) {
    throw std::runtime_error("checkpoint: payload length mismatch");
  }

  std::vector<unsigned char> raw(payload_bytes);
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!is) throw std::runtime_error("checkpoint: truncated payload");
  std::size_t pos = 0;
  for_each_tensor(p, [&](const std::string&, Tensor2& t) {
    for (auto& x : t.v) {
      const std::uint32_t bits = static_cast<std::uint32_t>(raw[pos]) |
                                 (static_cast<std::uint32_t>(raw[pos + 1]) << 8) |
                                 (static_cast<std::uint32_t>(raw[pos + 2]) << 16) |
                                 (static_cast<std::uint32_t>(raw[pos + 3]) << 24);
      pos += 4;
      x = static_cast<double>(std::bit_cast<float>(bits));
    }
  });
  if (seed_out != nullptr) *seed_out = header.at("seed").get<std::uint64_t>();
  return p;
}

}  // namespace msdiar::nn
