#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "matmamba/ops.hpp"
#include "testutil.hpp"

using namespace matmamba;
namespace tu = matmamba::testutil;

TEST_CASE("matmul identity and forced arithmetic") {
  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor out = matmul(eye, a);
  CHECK(out.to_vector() == std::vector<float>{1, 2, 3, 4});

  Tensor row = Tensor::from({1, 2}, {1, 2});
  Tensor col = Tensor::from({2, 1}, {3, 4});
  CHECK(matmul(row, col).item() == doctest::Approx(11.0f));
}

TEST_CASE("matmul rejects shape mismatch") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 2});
  CHECK_THROWS_AS(matmul(a, b), DimensionError);
  CHECK_THROWS_AS(matmul(a, Tensor::zeros({2, 3, 4})), DimensionError);
}

TEST_CASE("matmul gradients match finite differences") {
  Rng rng(7);
  Tensor a = tu::random_tensor({3, 4}, rng, 1.0f, true);
  Tensor b = tu::random_tensor({4, 2}, rng, 1.0f, true);
  Tensor w = tu::random_tensor({3, 2}, rng, 1.0f);  // fixed projection

  auto loss_fn = [&] { return sum_all(mul(matmul(a, b), w)).item(); };
  Tensor loss = sum_all(mul(matmul(a, b), w));
  backward(loss);
  auto rep = tu::fd_check(loss_fn, {{"a", &a}, {"b", &b}});
  CHECK(rep.failures == 0);
  CHECK(rep.worst < 1e-3);
}

TEST_CASE("matmul_nt and matmul_tn match matmul routes") {
  Rng rng(3);
  Tensor a = tu::random_tensor({3, 5}, rng);
  Tensor b = tu::random_tensor({4, 5}, rng);
  Tensor bt = Tensor::zeros({5, 4});
  for (int64_t i = 0; i < 4; ++i) {
    for (int64_t j = 0; j < 5; ++j) {
      bt.data()[j * 4 + i] = b.data()[i * 5 + j];
    }
  }
  CHECK(tu::max_abs_diff(matmul_nt(a, b), matmul(a, bt)) < 1e-6);

  Tensor c = tu::random_tensor({5, 3}, rng);
  Tensor ct = Tensor::zeros({3, 5});
  for (int64_t i = 0; i < 5; ++i) {
    for (int64_t j = 0; j < 3; ++j) {
      ct.data()[j * 5 + i] = c.data()[i * 3 + j];
    }
  }
  Tensor d = tu::random_tensor({5, 4}, rng);
  CHECK(tu::max_abs_diff(matmul_tn(c, d), matmul(ct, d)) < 1e-6);
}

TEST_CASE("batched matmul gradients") {
  Rng rng(11);
  Tensor a = tu::random_tensor({2, 3, 3, 4}, rng, 0.7f, true);
  Tensor b = tu::random_tensor({2, 3, 4, 2}, rng, 0.7f, true);
  Tensor w = tu::random_tensor({2, 3, 3, 2}, rng);
  auto loss_fn = [&] { return sum_all(mul(bmm(a, b), w)).item(); };
  backward(sum_all(mul(bmm(a, b), w)));
  auto rep = tu::fd_check(loss_fn, {{"a", &a}, {"b", &b}});
  CHECK(rep.failures == 0);
}

TEST_CASE("prefix_slice basics and identity case") {
  Tensor t = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor s = prefix_slice(t, 0, 1);
  CHECK(s.shape() == std::vector<int64_t>{1, 2});
  CHECK(s.to_vector() == std::vector<float>{1, 2});
  // axis-0 prefix is a view of the parent storage
  CHECK(s.storage().get() == t.storage().get());
  CHECK(s.offset() == t.offset());

  Tensor full = prefix_slice(t, 0, 2);
  CHECK(full.to_vector() == t.to_vector());
  CHECK(full.storage().get() == t.storage().get());

  CHECK_THROWS_AS(prefix_slice(t, 0, 3), DimensionError);
  CHECK_THROWS_AS(prefix_slice(t, 0, 0), DimensionError);
}

TEST_CASE("prefix_slice gradient stays inside the slice") {
  Tensor w = Tensor::from({2, 2}, {1, 2, 3, 4}, /*requires_grad=*/true);
  Tensor loss = sum_all(prefix_slice(w, 0, 1));
  backward(loss);
  auto g = w.grad();
  CHECK(g[0] == 1.0f);
  CHECK(g[1] == 1.0f);
  CHECK(g[2] == 0.0f);
  CHECK(g[3] == 0.0f);
}

TEST_CASE("slice along non-leading axis copies and scatters gradient") {
  Rng rng(5);
  Tensor t = tu::random_tensor({3, 6}, rng, 1.0f, true);
  Tensor w = tu::random_tensor({3, 2}, rng);
  auto loss_fn = [&] { return sum_all(mul(slice(t, 1, 2, 2), w)).item(); };
  backward(sum_all(mul(slice(t, 1, 2, 2), w)));
  // untouched columns have exactly zero gradient
  auto g = t.grad();
  for (int64_t r = 0; r < 3; ++r) {
    CHECK(g[static_cast<size_t>(r * 6 + 0)] == 0.0f);
    CHECK(g[static_cast<size_t>(r * 6 + 1)] == 0.0f);
    CHECK(g[static_cast<size_t>(r * 6 + 4)] == 0.0f);
    CHECK(g[static_cast<size_t>(r * 6 + 5)] == 0.0f);
  }
  auto rep = tu::fd_check(loss_fn, {{"t", &t}});
  CHECK(rep.failures == 0);
}

TEST_CASE("elementwise analytic values") {
  Tensor z = Tensor::scalar(0.0f);
  CHECK(silu(z).item() == 0.0f);
  CHECK(softplus(z).item() == doctest::Approx(std::log(2.0)).epsilon(1e-6));
  Tensor x = Tensor::from({3}, {1.0f, -2.0f, 0.5f});
  Tensor e = exp(x);
  CHECK(e.at({0}) == doctest::Approx(std::exp(1.0f)));
  CHECK(negate(x).at({1}) == 2.0f);
  CHECK(scale(x, 3.0f).at({2}) == doctest::Approx(1.5f));
}

TEST_CASE("elementwise gradients vs finite differences") {
  Rng rng(13);
  Tensor x = tu::random_tensor({4, 5}, rng, 2.0f, true);
  Tensor w = tu::random_tensor({4, 5}, rng);
  SUBCASE("silu") {
    auto fn = [&] { return sum_all(mul(silu(x), w)).item(); };
    backward(sum_all(mul(silu(x), w)));
    CHECK(tu::fd_check(fn, {{"x", &x}}).failures == 0);
  }
  SUBCASE("softplus") {
    auto fn = [&] { return sum_all(mul(softplus(x), w)).item(); };
    backward(sum_all(mul(softplus(x), w)));
    CHECK(tu::fd_check(fn, {{"x", &x}}).failures == 0);
  }
  SUBCASE("exp") {
    auto fn = [&] { return sum_all(mul(exp(x), w)).item(); };
    backward(sum_all(mul(exp(x), w)));
    CHECK(tu::fd_check(fn, {{"x", &x}}).failures == 0);
  }
}

TEST_CASE("silu gradient at x=1 matches finite differences") {
  Tensor x = Tensor::from({1}, {1.0f}, true);
  Tensor loss = sum_all(silu(x));
  backward(loss);
  const double ad = x.grad()[0];
  const double h = 1e-3;
  auto f = [](double v) { return v / (1.0 + std::exp(-v)); };
  const double fd = (f(1.0 + h) - f(1.0 - h)) / (2 * h);
  CHECK(std::abs(ad - fd) / std::abs(fd) < 1e-3);
}

TEST_CASE("broadcasting add/mul with gradients") {
  Rng rng(17);
  Tensor a = tu::random_tensor({2, 3, 4}, rng, 1.0f, true);
  Tensor b = tu::random_tensor({4}, rng, 1.0f, true);       // suffix
  Tensor c = tu::random_tensor({3, 1}, rng, 1.0f, true);    // mid broadcast
  Tensor w = tu::random_tensor({2, 3, 4}, rng);
  auto fn = [&] {
    return sum_all(mul(mul(add(a, b), c), w)).item();
  };
  backward(sum_all(mul(mul(add(a, b), c), w)));
  auto rep = tu::fd_check(fn, {{"a", &a}, {"b", &b}, {"c", &c}});
  CHECK(rep.failures == 0);

  CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({4})),
                  DimensionError);
}

TEST_CASE("rmsnorm values") {
  Tensor x = Tensor::from({4}, {3, 3, 3, 3});
  Tensor w = Tensor::full({4}, 1.0f);
  Tensor y = rmsnorm(x, w, 0.0f);
  for (int64_t i = 0; i < 4; ++i) CHECK(y.at({i}) == doctest::Approx(1.0f));

  Tensor zeros = Tensor::zeros({2, 4});
  Tensor z = rmsnorm(zeros, w, 1e-5f);
  for (float v : z.values()) CHECK(v == 0.0f);

  CHECK_THROWS_AS(rmsnorm(Tensor::zeros({3}), w), DimensionError);
}

TEST_CASE("rmsnorm gradients vs finite differences") {
  Rng rng(23);
  Tensor x = tu::random_tensor({3, 6}, rng, 1.5f, true);
  Tensor w = tu::random_tensor({6}, rng, 1.0f, true);
  Tensor proj = tu::random_tensor({3, 6}, rng);
  auto fn = [&] { return sum_all(mul(rmsnorm(x, w), proj)).item(); };
  backward(sum_all(mul(rmsnorm(x, w), proj)));
  auto rep = tu::fd_check(fn, {{"x", &x}, {"w", &w}});
  CHECK(rep.failures == 0);
}

TEST_CASE("cross_entropy analytic cases") {
  // uniform logits: loss = ln V
  Tensor logits = Tensor::zeros({2, 4});
  Tensor loss = cross_entropy(logits, {1, 3}, 0.0f);
  CHECK(loss.item() == doctest::Approx(std::log(4.0)).epsilon(1e-6));

  // overwhelming correct logit: loss ~ 0
  Tensor confident = Tensor::zeros({1, 4});
  confident.data()[2] = 1e4f;
  CHECK(cross_entropy(confident, {2}, 0.0f).item() ==
        doctest::Approx(0.0).epsilon(1e-6));

  CHECK_THROWS_AS(cross_entropy(logits, {1, 4}, 0.0f), IndexError);
  CHECK_THROWS_AS(cross_entropy(logits, {1, -1}, 0.0f), IndexError);
}

TEST_CASE("cross_entropy matches direct summation oracle") {
  Rng rng(29);
  Tensor logits = tu::random_tensor({2, 5}, rng, 2.0f, true);
  const std::vector<int32_t> targets{3, 0};
  const float eps = 0.1f;
  Tensor loss = cross_entropy(logits, targets, eps);

  // brute-force softmax in double precision
  double total = 0.0;
  for (int64_t r = 0; r < 2; ++r) {
    double z = 0.0;
    for (int64_t j = 0; j < 5; ++j) {
      z += std::exp(static_cast<double>(logits.at({r, j})));
    }
    for (int64_t j = 0; j < 5; ++j) {
      const double q =
          eps / 5.0 + (j == targets[static_cast<size_t>(r)] ? 1.0 - eps : 0.0);
      const double logp = static_cast<double>(logits.at({r, j})) - std::log(z);
      total -= q * logp;
    }
  }
  CHECK(std::abs(loss.item() - total / 2.0) <= 1e-6);

  backward(loss);
  auto fn = [&] { return cross_entropy(logits, targets, eps).item(); };
  CHECK(tu::fd_check(fn, {{"logits", &logits}}).failures == 0);
}

TEST_CASE("graph ops used by the chunked scan have correct gradients") {
  Rng rng(31);
  SUBCASE("cumsum") {
    Tensor x = tu::random_tensor({2, 3, 4}, rng, 1.0f, true);
    Tensor w = tu::random_tensor({2, 3, 4}, rng);
    auto fn = [&] { return sum_all(mul(cumsum(x, 1), w)).item(); };
    backward(sum_all(mul(cumsum(x, 1), w)));
    CHECK(tu::fd_check(fn, {{"x", &x}}).failures == 0);
  }
  SUBCASE("permute") {
    Tensor x = tu::random_tensor({2, 3, 4}, rng, 1.0f, true);
    Tensor w = tu::random_tensor({4, 2, 3}, rng);
    auto fn = [&] {
      return sum_all(mul(permute(x, {2, 0, 1}), w)).item();
    };
    backward(sum_all(mul(permute(x, {2, 0, 1}), w)));
    CHECK(tu::fd_check(fn, {{"x", &x}}).failures == 0);
  }
  SUBCASE("concat") {
    Tensor a = tu::random_tensor({2, 3}, rng, 1.0f, true);
    Tensor b = tu::random_tensor({2, 2}, rng, 1.0f, true);
    Tensor w = tu::random_tensor({2, 5}, rng);
    auto fn = [&] { return sum_all(mul(concat({a, b}, 1), w)).item(); };
    backward(sum_all(mul(concat({a, b}, 1), w)));
    CHECK(tu::fd_check(fn, {{"a", &a}, {"b", &b}}).failures == 0);
  }
  SUBCASE("expand") {
    Tensor x = tu::random_tensor({1, 3, 1}, rng, 1.0f, true);
    Tensor w = tu::random_tensor({2, 3, 4}, rng);
    auto fn = [&] {
      return sum_all(mul(expand(x, {2, 3, 4}), w)).item();
    };
    backward(sum_all(mul(expand(x, {2, 3, 4}), w)));
    CHECK(tu::fd_check(fn, {{"x", &x}}).failures == 0);
  }
  SUBCASE("embedding") {
    Tensor table = tu::random_tensor({5, 3}, rng, 1.0f, true);
    const std::vector<int32_t> ids{1, 4, 1};
    Tensor w = tu::random_tensor({3, 3}, rng);
    auto fn = [&] { return sum_all(mul(embedding(table, ids), w)).item(); };
    backward(sum_all(mul(embedding(table, ids), w)));
    CHECK(tu::fd_check(fn, {{"table", &table}}).failures == 0);
    CHECK_THROWS_AS(embedding(table, {5}), IndexError);
  }
}

TEST_CASE("gradient accumulation is additive across backward passes") {
  Rng rng(37);
  Tensor w = tu::random_tensor({4, 4}, rng, 1.0f, true);
  Tensor a = tu::random_tensor({4, 4}, rng);
  Tensor b = tu::random_tensor({4, 4}, rng);

  backward(sum_all(mul(w, a)));
  std::vector<float> g1(w.grad().begin(), w.grad().end());
  w.zero_grad();
  backward(sum_all(mul(w, b)));
  std::vector<float> g2(w.grad().begin(), w.grad().end());
  w.zero_grad();

  backward(sum_all(mul(w, a)));
  backward(sum_all(mul(w, b)));
  auto g = w.grad();
  for (int64_t i = 0; i < w.numel(); ++i) {
    CHECK(std::abs(g[static_cast<size_t>(i)] -
                   (g1[static_cast<size_t>(i)] + g2[static_cast<size_t>(i)])) <=
          1e-6f);
  }
}

TEST_CASE("backward seed scales gradients") {
  Tensor w = Tensor::from({2}, {1.0f, 2.0f}, true);
  backward(sum_all(w), 0.25f);
  CHECK(w.grad()[0] == 0.25f);
  CHECK(w.grad()[1] == 0.25f);
}

TEST_CASE("tensor reused twice accumulates both contributions") {
  // tied-weights pattern: same tensor on two paths
  Tensor w = Tensor::from({2, 2}, {1, 0, 0, 1}, true);
  Tensor x = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor loss = sum_all(add(matmul(w, x), matmul(x, w)));
  backward(loss);
  auto fn = [&] { return sum_all(add(matmul(w, x), matmul(x, w))).item(); };
  CHECK(tu::fd_check(fn, {{"w", &w}}).failures == 0);
}

TEST_CASE("rng determinism and truncated normal statistics") {
  Rng a(99), b(99);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng rng(123);
  double acc = 0.0, acc2 = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double v = rng.normal_trunc(0.02f);
    CHECK(std::abs(v) <= 0.04 + 1e-9);
    acc += v;
    acc2 += v * v;
  }
  const double std = std::sqrt(acc2 / n - (acc / n) * (acc / n));
  CHECK(std == doctest::Approx(0.02).epsilon(0.10));
}

TEST_CASE("validate_finite flags NaN") {
  Tensor t = Tensor::from({2}, {1.0f, std::nanf("")});
  CHECK_FALSE(t.all_finite());
  CHECK_THROWS_AS(validate_finite(t, "test"), NumericError);
}

TEST_CASE("no-grad mode records nothing") {
  Tensor w = Tensor::from({2}, {1.0f, 2.0f}, true);
  {
    NoGradGuard ng;
    Tensor y = scale(w, 2.0f);
    CHECK_FALSE(y.requires_grad());
  }
  Tensor y = scale(w, 2.0f);
  CHECK(y.requires_grad());
}
