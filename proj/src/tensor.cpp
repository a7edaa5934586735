#include "t2i/tensor.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace t2i {

#ifdef NDEBUG
bool debug_checks = false;
#else
bool debug_checks = true;
#endif

namespace {

int64_t shape_size(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw DimensionError("non-positive dimension in shape");
    n *= d;
  }
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void check_finite(const Tensor& t, const char* op) {
  if (!debug_checks) return;
  for (float v : t.data()) {
    if (!std::isfinite(v))
      throw ContractError(std::string(op) + ": non-finite output value");
  }
}

std::vector<float>& grad_of(const std::shared_ptr<TensorImpl>& impl) {
  if (impl->grad.empty()) impl->grad.assign(impl->data.size(), 0.0f);
  return impl->grad;
}

bool has_grad(const std::shared_ptr<TensorImpl>& impl) {
  return !impl->grad.empty();
}

}  // namespace

double Rng::next_double() {
  return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
}

float Rng::uniform(float lo, float hi) {
  return lo + static_cast<float>(next_double()) * (hi - lo);
}

float Rng::normal(float mean, float stddev) {
  // Box-Muller, deterministic across platforms.
  if (have_spare_) {
    have_spare_ = false;
    return mean + stddev * static_cast<float>(spare_);
  }
  double u, v, s;
  do {
    u = 2.0 * next_double() - 1.0;
    v = 2.0 * next_double() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  double f = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * f;
  have_spare_ = true;
  return mean + stddev * static_cast<float>(u * f);
}

float Rng::gumbel() {
  double u = next_double();
  // Keep strictly inside (0,1).
  u = std::min(std::max(u, 1e-12), 1.0 - 1e-12);
  return static_cast<float>(-std::log(-std::log(u)));
}

int Rng::uniform_int(int n) {
  return static_cast<int>(next_u64() % static_cast<uint64_t>(n));
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  Tensor t;
  t.impl_ = std::make_shared<TensorImpl>();
  t.impl_->shape = std::move(shape);
  t.impl_->data.assign(shape_size(t.impl_->shape), 0.0f);
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::full(std::vector<int> shape, float value) {
  Tensor t = zeros(std::move(shape));
  std::fill(t.data().begin(), t.data().end(), value);
  return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<float> values) {
  Tensor t;
  t.impl_ = std::make_shared<TensorImpl>();
  int64_t n = shape_size(shape);
  if (n != static_cast<int64_t>(values.size()))
    throw DimensionError("Tensor::from: data length does not match shape");
  t.impl_->shape = std::move(shape);
  t.impl_->data = std::move(values);
  return t;
}

Tensor Tensor::uniform(std::vector<int> shape, Rng& rng, float lo, float hi,
                       bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

Tensor Tensor::normal(std::vector<int> shape, Rng& rng, float mean,
                      float stddev, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (auto& v : t.data()) v = rng.normal(mean, stddev);
  return t;
}

std::vector<float>& Tensor::grad() { return grad_of(impl_); }

void Tensor::zero_grad() {
  if (!impl_->grad.empty())
    std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
}

float Tensor::item() const {
  if (size() != 1) throw ContractError("item(): tensor is not scalar");
  return impl_->data[0];
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw ContractError("backward: loss must be a scalar tensor");
  loss.impl()->grad.assign(1, 1.0f);
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  const auto& av = a.data();
  const auto& bv = b.data();
  auto& ov = out.data();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  check_finite(out, "add");
  if (tape) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    tape->record([ai, bi, oi] {
      if (!has_grad(oi)) return;
      auto& ga = grad_of(ai);
      auto& gb = grad_of(bi);
      for (size_t i = 0; i < oi->grad.size(); ++i) {
        ga[i] += oi->grad[i];
        gb[i] += oi->grad[i];
      }
    });
  }
  return out;
}

Tensor sub(Tape* tape, const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape());
  const auto& av = a.data();
  const auto& bv = b.data();
  auto& ov = out.data();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
  check_finite(out, "sub");
  if (tape) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    tape->record([ai, bi, oi] {
      if (!has_grad(oi)) return;
      auto& ga = grad_of(ai);
      auto& gb = grad_of(bi);
      for (size_t i = 0; i < oi->grad.size(); ++i) {
        ga[i] += oi->grad[i];
        gb[i] -= oi->grad[i];
      }
    });
  }
  return out;
}

Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  const auto& av = a.data();
  const auto& bv = b.data();
  auto& ov = out.data();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  check_finite(out, "mul");
  if (tape) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    tape->record([ai, bi, oi] {
      if (!has_grad(oi)) return;
      auto& ga = grad_of(ai);
      auto& gb = grad_of(bi);
      for (size_t i = 0; i < oi->grad.size(); ++i) {
        ga[i] += oi->grad[i] * bi->data[i];
        gb[i] += oi->grad[i] * ai->data[i];
      }
    });
  }
  return out;
}

Tensor scale(Tape* tape, const Tensor& a, float s) {
  Tensor out = Tensor::zeros(a.shape());
  const auto& av = a.data();
  auto& ov = out.data();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * s;
  check_finite(out, "scale");
  if (tape) {
    auto ai = a.impl(), oi = out.impl();
    tape->record([ai, oi, s] {
      if (!has_grad(oi)) return;
      auto& ga = grad_of(ai);
      for (size_t i = 0; i < oi->grad.size(); ++i) ga[i] += oi->grad[i] * s;
    });
  }
  return out;
}

Tensor relu(Tape* tape, const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  const auto& av = a.data();
  auto& ov = out.data();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] > 0.0f ? av[i] : 0.0f;
  if (tape) {
    auto ai = a.impl(), oi = out.impl();
    tape->record([ai, oi] {
      if (!has_grad(oi)) return;
      auto& ga = grad_of(ai);
      for (size_t i = 0; i < oi->grad.size(); ++i)
        if (ai->data[i] > 0.0f) ga[i] += oi->grad[i];
    });
  }
  return out;
}

Tensor sigmoid(Tape* tape, const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  const auto& av = a.data();
  auto& ov = out.data();
  for (size_t i = 0; i < ov.size(); ++i)
    ov[i] = 1.0f / (1.0f + std::exp(-av[i]));
  check_finite(out, "sigmoid");
  if (tape) {
    auto ai = a.impl(), oi = out.impl();
    tape->record([ai, oi] {
      if (!has_grad(oi)) return;
      auto& ga = grad_of(ai);
      for (size_t i = 0; i < oi->grad.size(); ++i) {
        float y = oi->data[i];
        ga[i] += oi->grad[i] * y * (1.0f - y);
      }
    });
  }
  return out;
}

Tensor sum(Tape* tape, const Tensor& a) {
  double acc = 0.0;
  for (float v : a.data()) acc += v;
  Tensor out = Tensor::from({1}, {static_cast<float>(acc)});
  check_finite(out, "sum");
  if (tape) {
    auto ai = a.impl(), oi = out.impl();
    tape->record([ai, oi] {
      if (!has_grad(oi)) return;
      auto& ga = grad_of(ai);
      for (auto& g : ga) g += oi->grad[0];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------

Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: incompatible shapes " +
                         shape_str(a.shape()) + " x " + shape_str(b.shape()));
  int p = a.dim(0), q = a.dim(1), r = b.dim(1);
  Tensor out = Tensor::zeros({p, r});
  const float* A = a.data().data();
  const float* B = b.data().data();
  float* O = out.data().data();
  for (int i = 0; i < p; ++i) {
    for (int kk = 0; kk < q; ++kk) {
      float av = A[i * q + kk];
      if (av == 0.0f) continue;
      const float* brow = B + kk * r;
      float* orow = O + i * r;
      for (int j = 0; j < r; ++j) orow[j] += av * brow[j];
    }
  }
  check_finite(out, "matmul");
  if (tape) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    tape->record([ai, bi, oi, p, q, r] {
      if (!has_grad(oi)) return;
      auto& ga = grad_of(ai);
      auto& gb = grad_of(bi);
      const auto& go = oi->grad;
      // dA = dO * B^T ; dB = A^T * dO
      for (int i = 0; i < p; ++i)
        for (int kk = 0; kk < q; ++kk) {
          float acc = 0.0f;
          for (int j = 0; j < r; ++j)
            acc += go[i * r + j] * bi->data[kk * r + j];
          ga[i * q + kk] += acc;
        }
      for (int kk = 0; kk < q; ++kk)
        for (int j = 0; j < r; ++j) {
          float acc = 0.0f;
          for (int i = 0; i < p; ++i)
            acc += ai->data[i * q + kk] * go[i * r + j];
          gb[kk * r + j] += acc;
        }
    });
  }
  return out;
}

Tensor transpose(Tape* tape, const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("transpose: expects rank-2 tensor");
  int p = a.dim(0), q = a.dim(1);
  Tensor out = Tensor::zeros({q, p});
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < q; ++j) out.data()[j * p + i] = a.data()[i * q + j];
  if (tape) {
    auto ai = a.impl(), oi = out.impl();
    tape->record([ai, oi, p, q] {
      if (!has_grad(oi)) return;
      auto& ga = grad_of(ai);
      for (int i = 0; i < p; ++i)
        for (int j = 0; j < q; ++j) ga[i * q + j] += oi->grad[j * p + i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Softmax family
// ---------------------------------------------------------------------------

namespace {

Tensor softmax_impl(Tape* tape, const Tensor& x,
                    const std::vector<uint8_t>* allowed) {
  if (x.rank() != 2) throw DimensionError("softmax_rows: expects rank-2");
  int p = x.dim(0), q = x.dim(1);
  if (allowed && static_cast<int>(allowed->size()) != p * q)
    throw DimensionError("masked_softmax_rows: mask size mismatch");
  Tensor out = Tensor::zeros({p, q});
  for (int i = 0; i < p; ++i) {
    const float* row = x.data().data() + i * q;
    float* orow = out.data().data() + i * q;
    float mx = -std::numeric_limits<float>::infinity();
    for (int j = 0; j < q; ++j)
      if (!allowed || (*allowed)[i * q + j]) mx = std::max(mx, row[j]);
    if (!std::isfinite(mx))
      throw ContractError("masked_softmax_rows: row has no allowed entry");
    double denom = 0.0;
    for (int j = 0; j < q; ++j) {
      if (allowed && !(*allowed)[i * q + j]) {
        orow[j] = 0.0f;
        continue;
      }
      orow[j] = std::exp(row[j] - mx);
      denom += orow[j];
    }
    float inv = static_cast<float>(1.0 / denom);
    for (int j = 0; j < q; ++j) orow[j] *= inv;
  }
  check_finite(out, "softmax_rows");
  if (tape) {
    auto xi = x.impl(), oi = out.impl();
    tape->record([xi, oi, p, q] {
      if (!has_grad(oi)) return;
      auto& gx = grad_of(xi);
      for (int i = 0; i < p; ++i) {
        const float* y = oi->data.data() + i * q;
        const float* gy = oi->grad.data() + i * q;
        double dot = 0.0;
        for (int j = 0; j < q; ++j) dot += static_cast<double>(gy[j]) * y[j];
        for (int j = 0; j < q; ++j)
          gx[i * q + j] += y[j] * (gy[j] - static_cast<float>(dot));
      }
    });
  }
  return out;
}

}  // namespace

Tensor softmax_rows(Tape* tape, const Tensor& x) {
  return softmax_impl(tape, x, nullptr);
}

Tensor masked_softmax_rows(Tape* tape, const Tensor& x,
                           const std::vector<uint8_t>& allowed) {
  return softmax_impl(tape, x, &allowed);
}

Tensor cross_entropy(Tape* tape, const Tensor& logits,
                     const std::vector<int>& targets) {
  if (logits.rank() != 2) throw DimensionError("cross_entropy: expects rank-2");
  int m = logits.dim(0), k = logits.dim(1);
  if (static_cast<int>(targets.size()) != m)
    throw DimensionError("cross_entropy: target count does not match rows");
  for (int t : targets)
    if (t < 0 || t >= k)
      throw IndexError("cross_entropy: target out of range [0," +
                       std::to_string(k) + ")");
  // Keep the row softmaxes for the backward pass.
  auto probs = std::make_shared<std::vector<float>>(
      static_cast<size_t>(m) * k);
  double loss = 0.0;
  for (int i = 0; i < m; ++i) {
    const float* row = logits.data().data() + i * k;
    float mx = *std::max_element(row, row + k);
    double denom = 0.0;
    for (int j = 0; j < k; ++j) {
      double e = std::exp(static_cast<double>(row[j]) - mx);
      (*probs)[i * k + j] = static_cast<float>(e);
      denom += e;
    }
    for (int j = 0; j < k; ++j)
      (*probs)[i * k + j] = static_cast<float>((*probs)[i * k + j] / denom);
    loss -= static_cast<double>(row[targets[i]]) - mx - std::log(denom);
  }
  Tensor out = Tensor::from({1}, {static_cast<float>(loss)});
  check_finite(out, "cross_entropy");
  if (tape) {
    auto li = logits.impl(), oi = out.impl();
    auto tgt = targets;
    tape->record([li, oi, probs, tgt, m, k] {
      if (!has_grad(oi)) return;
      float g = oi->grad[0];
      auto& gl = grad_of(li);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < k; ++j) {
          float y = (j == tgt[i]) ? 1.0f : 0.0f;
          gl[i * k + j] += g * ((*probs)[i * k + j] - y);
        }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

Tensor conv2d(Tape* tape, const Tensor& x, const Tensor& w, const Tensor& bias,
              int stride, int pad) {
  if (x.rank() != 4 || w.rank() != 4 || x.dim(1) != w.dim(1))
    throw DimensionError("conv2d: incompatible shapes " + shape_str(x.shape()) +
                         " vs " + shape_str(w.shape()));
  int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  int O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  int OH = (H + 2 * pad - kh) / stride + 1;
  int OW = (W + 2 * pad - kw) / stride + 1;
  if (OH <= 0 || OW <= 0)
    throw DimensionError("conv2d: kernel larger than padded input");
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != O))
    throw DimensionError("conv2d: bias must have shape [O]");
  Tensor out = Tensor::zeros({B, O, OH, OW});
  const float* X = x.data().data();
  const float* K = w.data().data();
  float* Y = out.data().data();
  for (int b = 0; b < B; ++b)
    for (int o = 0; o < O; ++o)
      for (int oh = 0; oh < OH; ++oh)
        for (int ow = 0; ow < OW; ++ow) {
          float acc = bias.defined() ? bias.data()[o] : 0.0f;
          for (int c = 0; c < C; ++c)
            for (int i = 0; i < kh; ++i) {
              int ih = oh * stride - pad + i;
              if (ih < 0 || ih >= H) continue;
              for (int j = 0; j < kw; ++j) {
                int iw = ow * stride - pad + j;
                if (iw < 0 || iw >= W) continue;
                acc += X[((b * C + c) * H + ih) * W + iw] *
                       K[((o * C + c) * kh + i) * kw + j];
              }
            }
          Y[((b * O + o) * OH + oh) * OW + ow] = acc;
        }
  check_finite(out, "conv2d");
  if (tape) {
    auto xi = x.impl(), wi = w.impl(), oi = out.impl();
    auto bi = bias.defined() ? bias.impl() : nullptr;
    tape->record([xi, wi, bi, oi, B, C, H, W, O, kh, kw, OH, OW, stride, pad] {
      if (!has_grad(oi)) return;
      auto& gx = grad_of(xi);
      auto& gw = grad_of(wi);
      const auto& go = oi->grad;
      for (int b = 0; b < B; ++b)
        for (int o = 0; o < O; ++o)
          for (int oh = 0; oh < OH; ++oh)
            for (int ow = 0; ow < OW; ++ow) {
              float g = go[((b * O + o) * OH + oh) * OW + ow];
              if (g == 0.0f) continue;
              if (bi) grad_of(bi)[o] += g;
              for (int c = 0; c < C; ++c)
                for (int i = 0; i < kh; ++i) {
                  int ih = oh * stride - pad + i;
                  if (ih < 0 || ih >= H) continue;
                  for (int j = 0; j < kw; ++j) {
                    int iw = ow * stride - pad + j;
                    if (iw < 0 || iw >= W) continue;
                    gx[((b * C + c) * H + ih) * W + iw] +=
                        g * wi->data[((o * C + c) * kh + i) * kw + j];
                    gw[((o * C + c) * kh + i) * kw + j] +=
                        g * xi->data[((b * C + c) * H + ih) * W + iw];
                  }
                }
            }
    });
  }
  return out;
}

Tensor conv_transpose2d(Tape* tape, const Tensor& x, const Tensor& w,
                        const Tensor& bias, int stride, int pad) {
  if (x.rank() != 4 || w.rank() != 4 || x.dim(1) != w.dim(0))
    throw DimensionError("conv_transpose2d: incompatible shapes " +
                         shape_str(x.shape()) + " vs " + shape_str(w.shape()));
  int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  int O = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  int OH = (H - 1) * stride - 2 * pad + kh;
  int OW = (W - 1) * stride - 2 * pad + kw;
  if (OH <= 0 || OW <= 0)
    throw DimensionError("conv_transpose2d: output size non-positive");
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != O))
    throw DimensionError("conv_transpose2d: bias must have shape [O]");
  Tensor out = Tensor::zeros({B, O, OH, OW});
  float* Y = out.data().data();
  if (bias.defined())
    for (int b = 0; b < B; ++b)
      for (int o = 0; o < O; ++o)
        for (int p = 0; p < OH * OW; ++p)
          Y[(b * O + o) * OH * OW + p] = bias.data()[o];
  const float* X = x.data().data();
  const float* K = w.data().data();
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int ih = 0; ih < H; ++ih)
        for (int iw = 0; iw < W; ++iw) {
          float xv = X[((b * C + c) * H + ih) * W + iw];
          if (xv == 0.0f) continue;
          for (int o = 0; o < O; ++o)
            for (int i = 0; i < kh; ++i) {
              int oh = ih * stride - pad + i;
              if (oh < 0 || oh >= OH) continue;
              for (int j = 0; j < kw; ++j) {
                int ow = iw * stride - pad + j;
                if (ow < 0 || ow >= OW) continue;
                Y[((b * O + o) * OH + oh) * OW + ow] +=
                    xv * K[((c * O + o) * kh + i) * kw + j];
              }
            }
        }
  check_finite(out, "conv_transpose2d");
  if (tape) {
    auto xi = x.impl(), wi = w.impl(), oi = out.impl();
    auto bi = bias.defined() ? bias.impl() : nullptr;
    tape->record([xi, wi, bi, oi, B, C, H, W, O, kh, kw, OH, OW, stride, pad] {
      if (!has_grad(oi)) return;
      auto& gx = grad_of(xi);
      auto& gw = grad_of(wi);
      const auto& go = oi->grad;
      if (bi) {
        auto& gb = grad_of(bi);
        for (int b = 0; b < B; ++b)
          for (int o = 0; o < O; ++o)
            for (int p = 0; p < OH * OW; ++p)
              gb[o] += go[(b * O + o) * OH * OW + p];
      }
      for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
          for (int ih = 0; ih < H; ++ih)
            for (int iw = 0; iw < W; ++iw) {
              float xv = xi->data[((b * C + c) * H + ih) * W + iw];
              float gacc = 0.0f;
              for (int o = 0; o < O; ++o)
                for (int i = 0; i < kh; ++i) {
                  int oh = ih * stride - pad + i;
                  if (oh < 0 || oh >= OH) continue;
                  for (int j = 0; j < kw; ++j) {
                    int ow = iw * stride - pad + j;
                    if (ow < 0 || ow >= OW) continue;
                    float g = go[((b * O + o) * OH + oh) * OW + ow];
                    gacc += g * wi->data[((c * O + o) * kh + i) * kw + j];
                    gw[((c * O + o) * kh + i) * kw + j] += g * xv;
                  }
                }
              gx[((b * C + c) * H + ih) * W + iw] += gacc;
            }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Lookup / normalization / shape ops
// ---------------------------------------------------------------------------

Tensor embedding_rows(Tape* tape, const Tensor& table,
                      const std::vector<int>& ids) {
  if (table.rank() != 2) throw DimensionError("embedding_rows: table rank");
  int V = table.dim(0), d = table.dim(1);
  int L = static_cast<int>(ids.size());
  for (int id : ids)
    if (id < 0 || id >= V)
      throw IndexError("embedding_rows: id " + std::to_string(id) +
                       " out of range [0," + std::to_string(V) + ")");
  Tensor out = Tensor::zeros({L, d});
  for (int i = 0; i < L; ++i)
    std::copy_n(table.data().data() + ids[i] * d, d,
                out.data().data() + i * d);
  if (tape) {
    auto ti = table.impl(), oi = out.impl();
    auto idv = ids;
    tape->record([ti, oi, idv, d] {
      if (!has_grad(oi)) return;
      auto& gt = grad_of(ti);
      for (size_t i = 0; i < idv.size(); ++i)
        for (int j = 0; j < d; ++j)
          gt[idv[i] * d + j] += oi->grad[i * d + j];
    });
  }
  return out;
}

Tensor layer_norm_rows(Tape* tape, const Tensor& x, float eps) {
  if (x.rank() != 2) throw DimensionError("layer_norm_rows: expects rank-2");
  int p = x.dim(0), q = x.dim(1);
  Tensor out = Tensor::zeros({p, q});
  auto inv_std = std::make_shared<std::vector<float>>(p);
  auto means = std::make_shared<std::vector<float>>(p);
  for (int i = 0; i < p; ++i) {
    const float* row = x.data().data() + i * q;
    double mean = 0.0;
    for (int j = 0; j < q; ++j) mean += row[j];
    mean /= q;
    double var = 0.0;
    for (int j = 0; j < q; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= q;
    float is = static_cast<float>(1.0 / std::sqrt(var + eps));
    (*inv_std)[i] = is;
    (*means)[i] = static_cast<float>(mean);
    for (int j = 0; j < q; ++j)
      out.data()[i * q + j] = (row[j] - static_cast<float>(mean)) * is;
  }
  check_finite(out, "layer_norm_rows");
  if (tape) {
    auto xi = x.impl(), oi = out.impl();
    tape->record([xi, oi, inv_std, p, q] {
      if (!has_grad(oi)) return;
      auto& gx = grad_of(xi);
      for (int i = 0; i < p; ++i) {
        const float* y = oi->data.data() + i * q;
        const float* gy = oi->grad.data() + i * q;
        double mg = 0.0, mgy = 0.0;
        for (int j = 0; j < q; ++j) {
          mg += gy[j];
          mgy += static_cast<double>(gy[j]) * y[j];
        }
        mg /= q;
        mgy /= q;
        float is = (*inv_std)[i];
        for (int j = 0; j < q; ++j)
          gx[i * q + j] += is * (gy[j] - static_cast<float>(mg) -
                                 y[j] * static_cast<float>(mgy));
      }
    });
  }
  return out;
}

Tensor reshape(Tape* tape, const Tensor& x, std::vector<int> shape) {
  if (shape_size(shape) != x.size())
    throw DimensionError("reshape: element count mismatch");
  Tensor out = Tensor::from(std::move(shape), x.data());
  if (tape) {
    auto xi = x.impl(), oi = out.impl();
    tape->record([xi, oi] {
      if (!has_grad(oi)) return;
      auto& gx = grad_of(xi);
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += oi->grad[i];
    });
  }
  return out;
}

Tensor permute(Tape* tape, const Tensor& x, const std::vector<int>& perm) {
  int r = x.rank();
  if (static_cast<int>(perm.size()) != r)
    throw DimensionError("permute: perm length mismatch");
  std::vector<int> oshape(r);
  for (int i = 0; i < r; ++i) oshape[i] = x.dim(perm[i]);
  std::vector<int64_t> istrides(r, 1), ostrides(r, 1);
  for (int i = r - 2; i >= 0; --i)
    istrides[i] = istrides[i + 1] * x.dim(i + 1);
  for (int i = r - 2; i >= 0; --i)
    ostrides[i] = ostrides[i + 1] * oshape[i + 1];
  Tensor out = Tensor::zeros(oshape);
  int64_t n = x.size();
  // Map each output index back to its source index.
  auto src_index = std::make_shared<std::vector<int64_t>>(n);
  std::vector<int> idx(r, 0);
  for (int64_t o = 0; o < n; ++o) {
    int64_t s = 0;
    for (int i = 0; i < r; ++i) s += static_cast<int64_t>(idx[i]) * istrides[perm[i]];
    out.data()[o] = x.data()[s];
    (*src_index)[o] = s;
    for (int i = r - 1; i >= 0; --i) {
      if (++idx[i] < oshape[i]) break;
      idx[i] = 0;
    }
  }
  if (tape) {
    auto xi = x.impl(), oi = out.impl();
    tape->record([xi, oi, src_index] {
      if (!has_grad(oi)) return;
      auto& gx = grad_of(xi);
      for (size_t o = 0; o < src_index->size(); ++o)
        gx[(*src_index)[o]] += oi->grad[o];
    });
  }
  return out;
}

Tensor slice_rows(Tape* tape, const Tensor& x, int begin, int end) {
  if (x.rank() != 2) throw DimensionError("slice_rows: expects rank-2");
  int p = x.dim(0), q = x.dim(1);
  if (begin < 0 || end > p || begin >= end)
    throw IndexError("slice_rows: bad range [" + std::to_string(begin) + "," +
                     std::to_string(end) + ") for " + std::to_string(p) +
                     " rows");
  Tensor out = Tensor::zeros({end - begin, q});
  std::copy_n(x.data().data() + begin * q, (end - begin) * q,
              out.data().data());
  if (tape) {
    auto xi = x.impl(), oi = out.impl();
    tape->record([xi, oi, begin, q] {
      if (!has_grad(oi)) return;
      auto& gx = grad_of(xi);
      for (size_t i = 0; i < oi->grad.size(); ++i)
        gx[begin * q + i] += oi->grad[i];
    });
  }
  return out;
}

Tensor concat_rows(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
    throw DimensionError("concat_rows: column mismatch");
  int pa = a.dim(0), pb = b.dim(0), q = a.dim(1);
  Tensor out = Tensor::zeros({pa + pb, q});
  std::copy_n(a.data().data(), pa * q, out.data().data());
  std::copy_n(b.data().data(), pb * q, out.data().data() + pa * q);
  if (tape) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    tape->record([ai, bi, oi, pa, q] {
      if (!has_grad(oi)) return;
      auto& ga = grad_of(ai);
      auto& gb = grad_of(bi);
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += oi->grad[i];
      for (size_t i = 0; i < gb.size(); ++i) gb[i] += oi->grad[pa * q + i];
    });
  }
  return out;
}

Tensor global_avg_pool(Tape* tape, const Tensor& x) {
  if (x.rank() != 4) throw DimensionError("global_avg_pool: expects rank-4");
  int B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor out = Tensor::zeros({B, C});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      double acc = 0.0;
      const float* p = x.data().data() + (b * C + c) * HW;
      for (int i = 0; i < HW; ++i) acc += p[i];
      out.data()[b * C + c] = static_cast<float>(acc / HW);
    }
  if (tape) {
    auto xi = x.impl(), oi = out.impl();
    tape->record([xi, oi, B, C, HW] {
      if (!has_grad(oi)) return;
      auto& gx = grad_of(xi);
      for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
          float g = oi->grad[b * C + c] / HW;
          for (int i = 0; i < HW; ++i) gx[(b * C + c) * HW + i] += g;
        }
    });
  }
  return out;
}

Tensor add_row_bias(Tape* tape, const Tensor& x, const Tensor& bias) {
  if (x.rank() != 2 || bias.rank() != 1 || bias.dim(0) != x.dim(1))
    throw DimensionError("add_row_bias: shape mismatch");
  int p = x.dim(0), q = x.dim(1);
  Tensor out = Tensor::zeros({p, q});
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < q; ++j)
      out.data()[i * q + j] = x.data()[i * q + j] + bias.data()[j];
  if (tape) {
    auto xi = x.impl(), bi = bias.impl(), oi = out.impl();
    tape->record([xi, bi, oi, p, q] {
      if (!has_grad(oi)) return;
      auto& gx = grad_of(xi);
      auto& gb = grad_of(bi);
      for (int i = 0; i < p; ++i)
        for (int j = 0; j < q; ++j) {
          gx[i * q + j] += oi->grad[i * q + j];
          gb[j] += oi->grad[i * q + j];
        }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

Adam::Adam(std::vector<Tensor> params, float lr, float beta1, float beta2,
           float eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2),
      eps_(eps) {
  for (auto& p : params_) {
    m_.emplace_back(p.size(), 0.0f);
    v_.emplace_back(p.size(), 0.0f);
  }
}

void Adam::step() {
  ++t_;
  double bc1 = 1.0 - std::pow(static_cast<double>(beta1_), t_);
  double bc2 = 1.0 - std::pow(static_cast<double>(beta2_), t_);
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    auto& p = params_[pi];
    if (!p.has_grad()) continue;
    auto& g = p.grad();
    auto& m = m_[pi];
    auto& v = v_[pi];
    auto& w = p.data();
    for (size_t i = 0; i < w.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0f - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0f - beta2_) * g[i] * g[i];
      float mhat = static_cast<float>(m[i] / bc1);
      float vhat = static_cast<float>(v[i] / bc2);
      w[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace t2i
