#include "matmamba/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace matmamba {

namespace {

std::atomic<int64_t> g_live_bytes{0};
std::atomic<int64_t> g_peak_bytes{0};

thread_local bool g_grad_enabled = true;

void bump_peak() {
  int64_t live = g_live_bytes.load(std::memory_order_relaxed);
  int64_t peak = g_peak_bytes.load(std::memory_order_relaxed);
  while (live > peak &&
         !g_peak_bytes.compare_exchange_weak(peak, live,
                                             std::memory_order_relaxed)) {
  }
}

int64_t shape_numel(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

}  // namespace

Storage::Storage(int64_t n, bool zero) : v_(new float[static_cast<size_t>(n)]), n_(n) {
  if (zero) std::fill(v_.get(), v_.get() + n, 0.0f);
  g_live_bytes.fetch_add(n * static_cast<int64_t>(sizeof(float)),
                         std::memory_order_relaxed);
  bump_peak();
}

Storage::~Storage() {
  g_live_bytes.fetch_sub(size() * static_cast<int64_t>(sizeof(float)),
                         std::memory_order_relaxed);
}

int64_t Storage::live_bytes() { return g_live_bytes.load(); }
int64_t Storage::peak_bytes() { return g_peak_bytes.load(); }
void Storage::reset_peak() { g_peak_bytes.store(g_live_bytes.load()); }

int64_t TensorImpl::numel() const { return shape_numel(shape); }

Tensor Tensor::zeros(std::vector<int64_t> shape, bool requires_grad) {
  for (int64_t d : shape) {
    if (d <= 0) throw DimensionError("tensor dimensions must be positive");
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->storage = std::make_shared<Storage>(shape_numel(shape));
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::uninit(std::vector<int64_t> shape) {
  for (int64_t d : shape) {
    if (d <= 0) throw DimensionError("tensor dimensions must be positive");
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->storage = std::make_shared<Storage>(shape_numel(shape), /*zero=*/false);
  impl->shape = std::move(shape);
  return Tensor(std::move(impl));
}

Tensor Tensor::full(std::vector<int64_t> shape, float value) {
  Tensor t = zeros(std::move(shape));
  std::fill(t.data(), t.data() + t.numel(), value);
  return t;
}

Tensor Tensor::from(std::vector<int64_t> shape, std::vector<float> values,
                    bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  if (static_cast<int64_t>(values.size()) != t.numel()) {
    throw DimensionError("value count does not match shape");
  }
  std::copy(values.begin(), values.end(), t.data());
  return t;
}

Tensor Tensor::scalar(float value) { return from({1}, {value}); }

std::vector<int64_t> Tensor::strides() const {
  std::vector<int64_t> s(impl_->shape.size());
  int64_t acc = 1;
  for (size_t i = impl_->shape.size(); i-- > 0;) {
    s[i] = acc;
    acc *= impl_->shape[i];
  }
  return s;
}

float Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() requires a single element");
  return *data();
}

float Tensor::at(std::initializer_list<int64_t> idx) const {
  if (static_cast<int64_t>(idx.size()) != ndim()) {
    throw DimensionError("index rank mismatch");
  }
  auto st = strides();
  int64_t flat = 0;
  size_t k = 0;
  for (int64_t i : idx) {
    if (i < 0 || i >= impl_->shape[k]) throw IndexError("index out of range");
    flat += i * st[k];
    ++k;
  }
  return data()[flat];
}

Tensor& Tensor::set_requires_grad(bool v) {
  impl_->requires_grad = v;
  return *this;
}

Tensor Tensor::detach() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->storage = impl_->storage;
  impl->offset = impl_->offset;
  return Tensor(std::move(impl));
}

std::span<const float> Tensor::grad() const {
  if (!impl_->grad) throw StateError("tensor has no gradient buffer");
  return {impl_->grad->data(), static_cast<size_t>(numel())};
}

float* Tensor::grad_data() {
  if (!impl_->grad) impl_->grad = std::make_shared<Storage>(numel());
  return impl_->grad->data();
}

void Tensor::zero_grad() {
  if (impl_->grad) {
    std::fill(impl_->grad->data(), impl_->grad->data() + numel(), 0.0f);
  }
}

bool Tensor::all_finite() const {
  const float* p = data();
  const int64_t n = numel();
  for (int64_t i = 0; i < n; ++i) {
    if (!std::isfinite(p[i])) return false;
  }
  return true;
}

void validate_finite(const Tensor& t, const std::string& context) {
  if (!t.all_finite()) {
    throw NumericError("non-finite values in " + context);
  }
}

float* GradSink::buffer(const Tensor& t) {
  auto& v = bufs_[t.impl()];
  if (v.empty()) v.assign(static_cast<size_t>(t.numel()), 0.0f);
  return v.data();
}

std::vector<float>* GradSink::find(const TensorImpl* impl) {
  auto it = bufs_.find(impl);
  return it == bufs_.end() ? nullptr : &it->second;
}

void GradSink::release(const TensorImpl* impl) { bufs_.erase(impl); }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

void record_op(
    Tensor& out, const char* name, std::vector<Tensor> inputs,
    std::function<void(const TensorImpl&, const float*, GradSink&)> fn) {
  if (!g_grad_enabled) return;
  bool needs = false;
  for (const Tensor& t : inputs) {
    if (t.defined() && t.requires_grad()) {
      needs = true;
      break;
    }
  }
  if (!needs) return;
  auto node = std::make_shared<OpNode>(name, std::move(inputs));
  node->backward = std::move(fn);
  out.impl()->requires_grad = true;
  out.impl()->grad_fn = std::move(node);
}

void backward(const Tensor& loss, float seed) {
  if (!loss.defined() || !loss.requires_grad()) {
    throw StateError("backward() on a tensor with no graph");
  }

  // Iterative post-order DFS: topo[i] finishes before anything that uses it.
  std::vector<TensorImpl*> topo;
  std::unordered_map<TensorImpl*, bool> seen;
  struct Frame {
    TensorImpl* impl;
    size_t next_input;
  };
  std::vector<Frame> stack;
  stack.push_back({loss.impl(), 0});
  seen[loss.impl()] = true;
  while (!stack.empty()) {
    Frame& f = stack.back();
    OpNode* node = f.impl->grad_fn.get();
    size_t fanin = node ? node->inputs().size() : 0;
    if (f.next_input < fanin) {
      const Tensor& in = node->inputs()[f.next_input++];
      if (in.defined() && in.requires_grad()) {
        TensorImpl* ii = in.impl();
        if (!seen[ii]) {
          seen[ii] = true;
          stack.push_back({ii, 0});
        }
      }
    } else {
      topo.push_back(f.impl);
      stack.pop_back();
    }
  }

  if (loss.numel() != 1) {
    throw DimensionError("backward() requires a scalar loss");
  }
  GradSink sink;
  sink.buffer(loss)[0] = seed;

  for (size_t i = topo.size(); i-- > 0;) {
    TensorImpl* impl = topo[i];
    std::vector<float>* g = sink.find(impl);
    if (g == nullptr) continue;  // no gradient reached this node
    if (impl->grad_fn) {
      impl->grad_fn->backward(*impl, g->data(), sink);
      sink.release(impl);
    } else if (impl->requires_grad) {
      // Leaf: fold into the persistent gradient, summing across passes.
      if (!impl->grad) impl->grad = std::make_shared<Storage>(impl->numel());
      float* dst = impl->grad->data();
      const float* src = g->data();
      const int64_t n = impl->numel();
      for (int64_t j = 0; j < n; ++j) dst[j] += src[j];
      sink.release(impl);
    }
  }
}

// xoshiro256** seeded through splitmix64.
namespace {
uint64_t splitmix64(uint64_t& x) {
  x += 0x9e3779b97f4a7c15ULL;
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
}  // namespace

Rng::Rng(uint64_t seed) {
  uint64_t x = seed;
  for (auto& s : s_) s = splitmix64(x);
}

uint64_t Rng::next_u64() {
  uint64_t result = rotl(s_[1] * 5, 7) * 9;
  uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

int64_t Rng::uniform_int(int64_t n) {
  if (n <= 0) throw RangeError("uniform_int requires n > 0");
  return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n));
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = 0.0;
  do {
    u1 = uniform();
  } while (u1 <= 1e-300);
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double theta = 2.0 * 3.14159265358979323846 * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

float Rng::normal_trunc(float stddev, float clip_sigmas) {
  double z = normal();
  while (std::abs(z) > clip_sigmas) z = normal();
  return static_cast<float>(z * stddev);
}

}  // namespace matmamba
