#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace t2i {

// Thrown when an operation's shape/contract preconditions are violated.
struct DimensionError : std::runtime_error {
  explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};
struct IndexError : std::runtime_error {
  explicit IndexError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};
// Invalid user-supplied input (empty dataset, bad config value, ...).
struct InputError : std::runtime_error {
  explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};
// I/O and file-format failures (missing file, bad magic, truncation, ...).
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// When true, every forward op verifies its output is finite.
// Defaults to on in debug builds.
extern bool debug_checks;

// Seeded RNG with hand-rolled distributions so that a given seed
// produces the same stream on every platform/libstdc++ version.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }
  // Uniform in [0, 1).
  double next_double();
  float uniform(float lo, float hi);
  float normal(float mean, float stddev);
  // Standard Gumbel(0,1) sample.
  float gumbel();
  // Uniform integer in [0, n).
  int uniform_int(int n);

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

struct TensorImpl {
  std::vector<int> shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until backward touches this tensor
  bool requires_grad = false;
};

// Value-semantics handle over a shared buffer. Copies alias.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, float value);
  static Tensor from(std::vector<int> shape, std::vector<float> values);
  static Tensor uniform(std::vector<int> shape, Rng& rng, float lo, float hi,
                        bool requires_grad = false);
  static Tensor normal(std::vector<int> shape, Rng& rng, float mean,
                       float stddev, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const { return impl_->shape; }
  int dim(int i) const { return impl_->shape[i]; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int64_t size() const { return static_cast<int64_t>(impl_->data.size()); }

  std::vector<float>& data() { return impl_->data; }
  const std::vector<float>& data() const { return impl_->data; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool v) { impl_->requires_grad = v; }

  // Gradient buffer, zero-initialized on first access.
  std::vector<float>& grad();
  bool has_grad() const { return !impl_->grad.empty(); }
  void zero_grad();

  // Scalar extraction; throws ContractError unless size() == 1.
  float item() const;

  std::shared_ptr<TensorImpl> impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Execution-ordered record of differentiable ops. Recording order is a
// valid topological order, so one reverse sweep visits each op once.
class Tape {
 public:
  void record(std::function<void()> backward_fn) {
    ops_.push_back(std::move(backward_fn));
  }
  // Seeds grad(loss) = 1 and runs all recorded ops in reverse.
  void backward(const Tensor& loss);
  void clear() { ops_.clear(); }
  size_t size() const { return ops_.size(); }

 private:
  std::vector<std::function<void()>> ops_;
};

// All ops accept a nullable tape; pass nullptr for inference.

Tensor add(Tape* tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape* tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape* tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape* tape, const Tensor& a, float s);
Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b);
Tensor transpose(Tape* tape, const Tensor& a);
Tensor relu(Tape* tape, const Tensor& a);
Tensor sigmoid(Tape* tape, const Tensor& a);
Tensor sum(Tape* tape, const Tensor& a);

// Row-wise stable softmax over the last axis of a [p x q] tensor.
Tensor softmax_rows(Tape* tape, const Tensor& x);
// Softmax where disallowed entries (mask[i*q+j] == 0) get zero probability.
// Every row must have at least one allowed entry.
Tensor masked_softmax_rows(Tape* tape, const Tensor& x,
                           const std::vector<uint8_t>& allowed);

// -sum_i log softmax(logits_i)[targets_i]; scalar output.
Tensor cross_entropy(Tape* tape, const Tensor& logits,
                     const std::vector<int>& targets);

// x: [B,C,H,W], w: [O,C,kh,kw], bias: optional [O]. Cross-correlation.
Tensor conv2d(Tape* tape, const Tensor& x, const Tensor& w, const Tensor& bias,
              int stride, int pad);
// x: [B,C,H,W], w: [C,O,kh,kw], bias: optional [O].
Tensor conv_transpose2d(Tape* tape, const Tensor& x, const Tensor& w,
                        const Tensor& bias, int stride, int pad);

// table: [V x d], output: [len(ids) x d]; scatter-add backward.
Tensor embedding_rows(Tape* tape, const Tensor& table,
                      const std::vector<int>& ids);

// Parameter-free layer normalization over each row of [p x q].
Tensor layer_norm_rows(Tape* tape, const Tensor& x, float eps = 1e-5f);

Tensor reshape(Tape* tape, const Tensor& x, std::vector<int> shape);
Tensor permute(Tape* tape, const Tensor& x, const std::vector<int>& perm);
Tensor slice_rows(Tape* tape, const Tensor& x, int begin, int end);
Tensor concat_rows(Tape* tape, const Tensor& a, const Tensor& b);
// x: [B,C,H,W] -> [B,C], mean over the spatial axes.
Tensor global_avg_pool(Tape* tape, const Tensor& x);
// x: [p x q] + bias [q], broadcast over rows.
Tensor add_row_bias(Tape* tape, const Tensor& x, const Tensor& bias);

// Adam with bias correction over a fixed parameter list.
class Adam {
 public:
  Adam(std::vector<Tensor> params, float lr, float beta1 = 0.9f,
       float beta2 = 0.999f, float eps = 1e-8f);

  void step();
  void zero_grad();
  void set_lr(float lr) { lr_ = lr; }
  float lr() const { return lr_; }
  int64_t step_count() const { return t_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<float>> m_, v_;
  float lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

}  // namespace t2i
