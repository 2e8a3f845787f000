#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace matmamba {

// Error taxonomy. Everything user-facing derives from std::runtime_error so
// the CLI can catch one base type and print a diagnostic.
struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IndexError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct RangeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct GranularityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IntegrityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct StateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Flat f32 buffer. Tracks global live/peak byte counts so the bench harness
// can report a tensor-memory watermark without platform hooks.
class Storage {
 public:
  explicit Storage(int64_t n, bool zero = true);
  ~Storage();
  Storage(const Storage&) = delete;
  Storage& operator=(const Storage&) = delete;

  float* data() { return v_.get(); }
  const float* data() const { return v_.get(); }
  int64_t size() const { return n_; }

  static int64_t live_bytes();
  static int64_t peak_bytes();
  static void reset_peak();

 private:
  std::unique_ptr<float[]> v_;
  int64_t n_ = 0;
};

class OpNode;

struct TensorImpl {
  std::vector<int64_t> shape;
  std::shared_ptr<Storage> storage;
  int64_t offset = 0;  // element offset into storage (prefix views)
  bool requires_grad = false;
  std::shared_ptr<OpNode> grad_fn;      // null for leaves
  std::shared_ptr<Storage> grad;        // persistent leaf gradient, lazily allocated

  int64_t numel() const;
};

// Value-semantics handle over a shared TensorImpl. Data is always contiguous
// row-major at `offset`; prefix slices along axis 0 alias the parent storage.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(std::vector<int64_t> shape, bool requires_grad = false);
  // Uninitialized buffer for op outputs that overwrite every element.
  static Tensor uninit(std::vector<int64_t> shape);
  static Tensor full(std::vector<int64_t> shape, float value);
  static Tensor from(std::vector<int64_t> shape, std::vector<float> values,
                     bool requires_grad = false);
  static Tensor scalar(float value);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int64_t>& shape() const { return impl_->shape; }
  int64_t ndim() const { return static_cast<int64_t>(impl_->shape.size()); }
  int64_t dim(int64_t i) const { return impl_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return impl_->numel(); }
  std::vector<int64_t> strides() const;

  float* data() { return impl_->storage->data() + impl_->offset; }
  const float* data() const { return impl_->storage->data() + impl_->offset; }
  std::span<float> values() { return {data(), static_cast<size_t>(numel())}; }
  std::span<const float> values() const {
    return {data(), static_cast<size_t>(numel())};
  }
  std::vector<float> to_vector() const {
    return {data(), data() + numel()};
  }
  float item() const;
  float at(std::initializer_list<int64_t> idx) const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool v);
  // Shares data, drops graph history and grad requirement.
  Tensor detach() const;

  bool has_grad() const { return impl_->grad != nullptr; }
  std::span<const float> grad() const;
  float* grad_data();  // allocates a zeroed buffer on first use
  void zero_grad();

  bool all_finite() const;

  const std::shared_ptr<Storage>& storage() const { return impl_->storage; }
  int64_t offset() const { return impl_->offset; }
  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Accumulates gradient buffers per graph node during one backward pass.
class GradSink {
 public:
  // Zero-initialized accumulation buffer for `t` (created on first request).
  float* buffer(const Tensor& t);
  // Whether gradient needs to flow into this input at all.
  bool wants(const Tensor& t) const { return t.defined() && t.requires_grad(); }

  std::vector<float>* find(const TensorImpl* impl);
  void release(const TensorImpl* impl);

 private:
  std::unordered_map<const TensorImpl*, std::vector<float>> bufs_;
};

// One recorded operation: holds its inputs (keeping the graph alive) and a
// closure that routes the output gradient back to them.
class OpNode {
 public:
  OpNode(const char* name, std::vector<Tensor> inputs)
      : name_(name), inputs_(std::move(inputs)) {}

  const char* name() const { return name_; }
  const std::vector<Tensor>& inputs() const { return inputs_; }

  // grad_out has out.numel() entries.
  std::function<void(const TensorImpl& out, const float* grad_out,
                     GradSink& sink)>
      backward;

 private:
  const char* name_;
  std::vector<Tensor> inputs_;
};

// Reverse-mode sweep from `loss` (visits each node exactly once, reverse
// topological order). Leaf gradients are accumulated additively: repeated
// calls without zero_grad() sum their contributions.
void backward(const Tensor& loss, float seed = 1.0f);

bool grad_enabled();

// Scoped disable of graph recording (inference / oracle evaluation).
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Records an op node on `out` when grad mode is on and any input needs grad.
void record_op(
    Tensor& out, const char* name, std::vector<Tensor> inputs,
    std::function<void(const TensorImpl&, const float*, GradSink&)> fn);

void validate_finite(const Tensor& t, const std::string& context);

// Deterministic RNG. Fixed algorithms (no std::*_distribution) so identical
// seeds give identical streams everywhere.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t next_u64();
  double uniform();                      // [0, 1)
  double uniform(double lo, double hi);  // [lo, hi)
  int64_t uniform_int(int64_t n);        // [0, n)
  double normal();                       // standard normal, Box-Muller
  float normal_trunc(float stddev, float clip_sigmas = 2.0f);

 private:
  uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace matmamba
