#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "support/oracles.hpp"
#include "teapcr/grad_check.hpp"
#include "teapcr/ops.hpp"

using namespace teapcr;

namespace {

Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return Tensor<double>::uniform(std::move(shape), rng, lo, hi);
}

}  // namespace

TEST_CASE("matmul: identity and permutation fixtures") {
  auto identity = Tensor<double>::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Rng rng(7);
  auto m = random_tensor({3, 3}, rng);
  auto out = matmul(identity, m);
  for (Index i = 0; i < 9; ++i) CHECK(out.value()(i) == m.value()(i));

  auto a = Tensor<double>::from({2, 2}, {1, 2, 3, 4});
  auto p = Tensor<double>::from({2, 2}, {0, 1, 1, 0});
  auto swapped = matmul(a, p);
  CHECK(swapped.value()(0) == 2);
  CHECK(swapped.value()(1) == 1);
  CHECK(swapped.value()(2) == 4);
  CHECK(swapped.value()(3) == 3);
}

TEST_CASE("matmul: random 5x7 * 7x3 against triple-loop oracle") {
  Rng rng(11);
  auto a = random_tensor({5, 7}, rng);
  auto b = random_tensor({7, 3}, rng);
  auto c = matmul(a, b);
  std::vector<double> av(a.value().data(), a.value().data() + a.size());
  std::vector<double> bv(b.value().data(), b.value().data() + b.size());
  auto expect = oracles::matmul(av, bv, 5, 7, 3);
  for (Index i = 0; i < c.size(); ++i)
    CHECK(std::abs(c.value()(i) - expect[static_cast<std::size_t>(i)]) < 1e-12);
}

TEST_CASE("matmul: shape mismatch raises") {
  Rng rng(3);
  auto a = random_tensor({2, 3}, rng);
  auto b = random_tensor({4, 2}, rng);
  CHECK_THROWS_AS(matmul(a, b), ShapeError);
}

TEST_CASE("bmm agrees with per-slice matmul, all transpose combinations") {
  Rng rng(23);
  for (bool ta : {false, true}) {
    for (bool tb : {false, true}) {
      auto a = random_tensor(ta ? Shape{4, 5, 2} : Shape{4, 2, 5}, rng);
      auto b = random_tensor(tb ? Shape{4, 3, 5} : Shape{4, 5, 3}, rng);
      auto c = bmm(a, b, ta, tb);
      CHECK(c.shape() == Shape{4, 2, 3});
      for (Index l = 0; l < 4; ++l) {
        for (Index i = 0; i < 2; ++i)
          for (Index j = 0; j < 3; ++j) {
            double acc = 0;
            for (Index t = 0; t < 5; ++t) {
              const double av = ta ? a.value()(l * 10 + t * 2 + i) : a.value()(l * 10 + i * 5 + t);
              const double bv = tb ? b.value()(l * 15 + j * 5 + t) : b.value()(l * 15 + t * 3 + j);
              acc += av * bv;
            }
            CHECK(c.value()(l * 6 + i * 3 + j) == doctest::Approx(acc).epsilon(1e-12));
          }
      }
    }
  }
}

TEST_CASE("conv2d: Table-2 channel/kernel schedule preserves spatial dims") {
  Rng rng(5);
  const Index B = 2, S = 6;
  auto x = random_tensor({B, 1, S, S}, rng);
  auto k1 = random_tensor({4, 1, 5, 5}, rng);
  auto b1 = random_tensor({4}, rng);
  auto y1 = conv2d(x, k1, b1, 2);
  CHECK(y1.shape() == Shape{B, 4, S, S});

  auto k2 = random_tensor({2, 4, 3, 3}, rng);
  auto b2 = random_tensor({2}, rng);
  auto y2 = conv2d(y1, k2, b2, 1);
  CHECK(y2.shape() == Shape{B, 2, S, S});
}

TEST_CASE("conv2d: delta kernel with zero bias sums input channels") {
  Rng rng(9);
  auto x = random_tensor({1, 3, 4, 4}, rng);
  auto k = Tensor<double>::zeros({1, 3, 3, 3});
  for (Index c = 0; c < 3; ++c) k.value()((c * 3 + 1) * 3 + 1) = 1.0;  // center taps
  auto b = Tensor<double>::zeros({1});
  auto y = conv2d(x, k, b, 1);
  for (Index i = 0; i < 16; ++i) {
    const double expect = x.value()(i) + x.value()(16 + i) + x.value()(32 + i);
    CHECK(y.value()(i) == doctest::Approx(expect).epsilon(1e-15));
  }
}

TEST_CASE("conv2d: random input against sliding-window oracle") {
  Rng rng(13);
  auto x = random_tensor({1, 1, 6, 6}, rng);
  auto k = random_tensor({2, 1, 3, 3}, rng);
  auto b = random_tensor({2}, rng);
  auto y = conv2d(x, k, b, 1);
  std::vector<double> xv(x.value().data(), x.value().data() + x.size());
  std::vector<double> kv(k.value().data(), k.value().data() + k.size());
  std::vector<double> bv(b.value().data(), b.value().data() + b.size());
  auto expect = oracles::conv2d(xv, kv, bv, 1, 1, 6, 6, 2, 3, 1);
  for (Index i = 0; i < y.size(); ++i)
    CHECK(std::abs(y.value()(i) - expect[static_cast<std::size_t>(i)]) < 1e-12);
}

TEST_CASE("conv2d: unsupported configurations rejected") {
  Rng rng(4);
  auto x = random_tensor({1, 1, 4, 4}, rng);
  auto k_even = random_tensor({1, 1, 4, 4}, rng);
  auto b = Tensor<double>::zeros({1});
  CHECK_THROWS_AS(conv2d(x, k_even, b, 1), ConfigError);
  auto k3 = random_tensor({1, 1, 3, 3}, rng);
  CHECK_THROWS_AS(conv2d(x, k3, b, 2), ConfigError);
}

TEST_CASE("softmax: symmetry, overflow stability, axis sums") {
  auto z = Tensor<double>::from({3}, {0, 0, 0});
  auto s = softmax(z, 0);
  for (Index i = 0; i < 3; ++i) CHECK(s.value()(i) == doctest::Approx(1.0 / 3).epsilon(1e-15));

  auto big = Tensor<double>::from({2}, {1000, 0});
  auto sb = softmax(big, 0);
  CHECK(sb.value()(0) == doctest::Approx(1.0));
  CHECK(sb.value()(1) == doctest::Approx(0.0));
  CHECK(sb.all_finite());

  Rng rng(17);
  auto x = random_tensor({4, 5, 6}, rng, -3, 3);
  for (Index axis = 0; axis < 3; ++axis) {
    auto y = softmax(x, axis);
    const auto v = detail::axis_view(x.shape(), axis);
    for (Index o = 0; o < v.outer; ++o)
      for (Index j = 0; j < v.inner; ++j) {
        double sum = 0;
        for (Index i = 0; i < v.n; ++i) sum += y.value()(o * v.n * v.inner + i * v.inner + j);
        CHECK(std::abs(sum - 1.0) < 1e-12);
      }
  }

  auto sv = softmax(random_tensor({7}, rng, -2, 2), 0);
  std::vector<double> raw(7);
  // spot-check one lane against the standalone oracle
  auto x1 = random_tensor({7}, rng, -2, 2);
  auto y1 = softmax(x1, 0);
  for (Index i = 0; i < 7; ++i) raw[static_cast<std::size_t>(i)] = x1.value()(i);
  auto expect = oracles::softmax(raw);
  for (Index i = 0; i < 7; ++i)
    CHECK(std::abs(y1.value()(i) - expect[static_cast<std::size_t>(i)]) < 1e-12);
  (void)sv;
}

TEST_CASE("softmax gradient vs central finite differences") {
  Rng rng(29);
  auto x = random_tensor({6}, rng, -2, 2);
  auto w = random_tensor({6}, rng);
  auto result = grad_check([&]() { return sum(mul(softmax(x, 0), w)); }, {x});
  CHECK(result.max_rel_err < 1e-4);
  CHECK(result.excluded.empty());
}

TEST_CASE("embedding_lookup: duplicates accumulate, identity table is one-hot") {
  auto table = Tensor<double>::from({3, 2}, {1, 2, 3, 4, 5, 6}, true);
  IdTensor ids({2}, {0, 0});
  {
    Tape<double> tape;
    auto e = embedding_lookup(ids, table);
    CHECK(e.value()(0) == 1);
    CHECK(e.value()(2) == 1);
    auto loss = sum(e);
    tape.backward(loss);
  }
  CHECK(table.grad()(0) == 2.0);  // row 0 hit twice
  CHECK(table.grad()(1) == 2.0);
  CHECK(table.grad()(4) == 0.0);

  auto eye = Tensor<double>::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  IdTensor pick({2}, {2, 1});
  auto rows = embedding_lookup(pick, eye);
  CHECK(rows.value()(2) == 1.0);
  CHECK(rows.value()(4) == 1.0);

  IdTensor bad({1}, {3});
  CHECK_THROWS_AS(embedding_lookup(bad, eye), IndexError);
}

TEST_CASE("embedding_lookup gradient vs finite differences") {
  Rng rng(31);
  auto table = random_tensor({5, 3}, rng);
  auto w = random_tensor({4, 3}, rng);
  IdTensor ids({4}, {1, 3, 1, 0});
  auto result = grad_check(
      [&]() { return sum(mul(reshape(embedding_lookup(ids, table), {4, 3}), w)); }, {table});
  CHECK(result.max_rel_err < 1e-4);
}

TEST_CASE("dropout semantics") {
  Rng rng(41);
  auto x = Tensor<double>::full({100}, 2.0);
  auto same = dropout(x, 0.0, true, rng);
  CHECK(same.same_storage(x));
  auto eval = dropout(x, 0.5, false, rng);
  CHECK(eval.same_storage(x));
  CHECK_THROWS_AS(dropout(x, 1.0, true, rng), ConfigError);
  CHECK_THROWS_AS(dropout(x, -0.1, true, rng), ConfigError);

  // Monte-Carlo survivor fraction at p = 0.5 over 1e6 elements
  auto big = Tensor<double>::full({1000000}, 1.0);
  auto dropped = dropout(big, 0.5, true, rng);
  Index survivors = 0;
  for (Index i = 0; i < big.size(); ++i) survivors += dropped.value()(i) != 0.0;
  const double fraction = static_cast<double>(survivors) / static_cast<double>(big.size());
  CHECK(fraction > 0.49);
  CHECK(fraction < 0.51);
  // survivors scaled by 1/(1-p)
  for (Index i = 0; i < 100; ++i) {
    const double v = dropped.value()(i);
    CHECK((v == 0.0 || v == doctest::Approx(2.0)));
  }
}

TEST_CASE("relu, layer_norm, activations: definitions and gradients") {
  auto x = Tensor<double>::from({4}, {-1, 0, 0.5, 2});
  auto y = relu(x);
  CHECK(y.value()(0) == 0);
  CHECK(y.value()(1) == 0);
  CHECK(y.value()(2) == 0.5);
  CHECK(y.value()(3) == 2);

  Rng rng(43);
  auto a = random_tensor({3, 5}, rng, 0.2, 2.0);  // away from the relu kink
  auto w = random_tensor({3, 5}, rng);
  auto r1 = grad_check([&]() { return sum(mul(relu(a), w)); }, {a});
  CHECK(r1.max_rel_err < 1e-4);

  auto b = random_tensor({4, 6}, rng);
  auto wb = random_tensor({4, 6}, rng);
  auto r2 = grad_check([&]() { return sum(mul(layer_norm(b, -1), wb)); }, {b});
  CHECK(r2.max_rel_err < 1e-4);

  // layer_norm output has zero mean, unit variance per lane
  auto ln = layer_norm(b, -1);
  for (Index row = 0; row < 4; ++row) {
    double m = 0, v = 0;
    for (Index j = 0; j < 6; ++j) m += ln.value()(row * 6 + j);
    m /= 6;
    for (Index j = 0; j < 6; ++j) {
      const double d = ln.value()(row * 6 + j) - m;
      v += d * d;
    }
    v /= 6;
    CHECK(std::abs(m) < 1e-12);
    CHECK(std::abs(v - 1.0) < 1e-4);  // eps-shrunk
  }

  auto c = random_tensor({8}, rng);
  auto wc = random_tensor({8}, rng);
  auto r3 = grad_check([&]() { return sum(mul(sigmoid(c), wc)); }, {c});
  CHECK(r3.max_rel_err < 1e-4);
  auto r4 = grad_check([&]() { return sum(mul(teapcr::tanh(c), wc)); }, {c});
  CHECK(r4.max_rel_err < 1e-4);
}

TEST_CASE("cross_entropy: fixtures and gradient") {
  auto uniform = Tensor<double>::zeros({2, 4});
  auto loss = cross_entropy(uniform, {0, 3});
  CHECK(loss.item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));

  auto dominant = Tensor<double>::from({1, 3}, {100, 0, 0});
  CHECK(cross_entropy(dominant, {0}).item() < 1e-12);

  CHECK_THROWS_AS(cross_entropy(uniform, {0, 4}), IndexError);

  Rng rng(47);
  auto logits = random_tensor({5, 3}, rng, -2, 2);
  auto r = grad_check([&]() { return cross_entropy(logits, {0, 2, 1, 1, 0}); }, {logits});
  CHECK(r.max_rel_err < 1e-4);
}

TEST_CASE("shape ops: reshape, permute_axes, concat, slice with gradients") {
  Rng rng(53);
  auto x = random_tensor({2, 3, 4}, rng);

  auto flat = reshape(x, {24});
  CHECK(flat.shape() == Shape{24});
  for (Index i = 0; i < 24; ++i) CHECK(flat.value()(i) == x.value()(i));

  auto t = permute_axes(x, {1, 0, 2});
  CHECK(t.shape() == Shape{3, 2, 4});
  for (Index i = 0; i < 2; ++i)
    for (Index j = 0; j < 3; ++j)
      for (Index k = 0; k < 4; ++k)
        CHECK(t.value()((j * 2 + i) * 4 + k) == x.value()((i * 3 + j) * 4 + k));

  auto w1 = random_tensor({3, 2, 4}, rng);
  auto rp = grad_check([&]() { return sum(mul(permute_axes(x, {1, 0, 2}), w1)); }, {x});
  CHECK(rp.max_rel_err < 1e-4);

  auto a = random_tensor({2, 1, 3}, rng);
  auto b = random_tensor({2, 2, 3}, rng);
  auto cat = concat<double>({a, b}, 1);
  CHECK(cat.shape() == Shape{2, 3, 3});
  CHECK(cat.value()(0) == a.value()(0));
  CHECK(cat.value()(3) == b.value()(0));

  auto wcat = random_tensor({2, 3, 3}, rng);
  auto rc = grad_check([&]() { return sum(mul(concat<double>({a, b}, 1), wcat)); }, {a, b});
  CHECK(rc.max_rel_err < 1e-4);

  auto sl = slice(cat, 1, 1, 2);
  CHECK(sl.shape() == Shape{2, 2, 3});
  CHECK(sl.value()(0) == b.value()(0));
  auto wsl = random_tensor({2, 2, 3}, rng);
  auto rs = grad_check([&]() { return sum(mul(slice(b, 1, 0, 1), slice(wsl, 1, 0, 1))); }, {b});
  CHECK(rs.max_rel_err < 1e-4);

  CHECK_THROWS_AS(slice(cat, 1, 2, 5), ShapeError);
  CHECK_THROWS_AS(reshape(x, {5, 5}), ShapeError);
}

TEST_CASE("broadcast add and learnable scalar scaling gradients") {
  Rng rng(59);
  auto x = random_tensor({4, 3}, rng);
  auto bias = random_tensor({3}, rng);
  auto y = add_broadcast(x, bias);
  for (Index i = 0; i < 4; ++i)
    for (Index j = 0; j < 3; ++j)
      CHECK(y.value()(i * 3 + j) == doctest::Approx(x.value()(i * 3 + j) + bias.value()(j)));
  auto w = random_tensor({4, 3}, rng);
  auto r = grad_check([&]() { return sum(mul(add_broadcast(x, bias), w)); }, {x, bias});
  CHECK(r.max_rel_err < 1e-4);

  auto s = Tensor<double>::scalar(1.7);
  auto r2 = grad_check([&]() { return sum(mul(scale_by(x, s), w)); }, {x, s});
  CHECK(r2.max_rel_err < 1e-4);
}

TEST_CASE("permute_gram: entry multiset preserved, inverse composition restores") {
  Rng rng(61);
  auto g = random_tensor({5, 5}, rng);
  std::vector<Index> perm = {3, 1, 4, 0, 2};
  auto gp = permute_gram(g, perm);

  std::vector<double> before(g.value().data(), g.value().data() + g.size());
  std::vector<double> after(gp.value().data(), gp.value().data() + gp.size());
  std::sort(before.begin(), before.end());
  std::sort(after.begin(), after.end());
  CHECK(before == after);

  std::vector<Index> inverse(5);
  for (Index i = 0; i < 5; ++i) inverse[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = i;
  auto restored = permute_gram(gp, inverse);
  for (Index i = 0; i < g.size(); ++i) CHECK(restored.value()(i) == g.value()(i));

  std::vector<Index> ident = {0, 1, 2, 3, 4};
  auto same = permute_gram(g, ident);
  for (Index i = 0; i < g.size(); ++i) CHECK(same.value()(i) == g.value()(i));

  auto w = random_tensor({5, 5}, rng);
  auto r = grad_check([&]() { return sum(mul(permute_gram(g, perm), w)); }, {g});
  CHECK(r.max_rel_err < 1e-4);
}

TEST_CASE("finite outputs on finite random inputs") {
  Rng rng(67);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = random_tensor({3, 4}, rng, -50, 50);
    CHECK(softmax(x, -1).all_finite());
    CHECK(layer_norm(x, -1).all_finite());
    CHECK(relu(x).all_finite());
    CHECK(sigmoid(x).all_finite());
    CHECK(teapcr::tanh(x).all_finite());
    auto y = random_tensor({4, 2}, rng, -50, 50);
    CHECK(matmul(x, y).all_finite());
  }
}
