#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "sparsesieve/tape.hpp"

using namespace sparsesieve;

TEST_CASE("matmul identity and hand-computed cases", "[tape]") {
  Tape t;
  auto a = t.leaf(Tensor({2, 2}, {1, 2, 3, 4}));
  auto eye = t.leaf(Tensor({2, 2}, {1, 0, 0, 1}));
  CHECK(t.value(t.matmul(a, eye)).data == std::vector<double>{1, 2, 3, 4});

  auto v = t.leaf(Tensor({2, 1}, {5, 7}));
  CHECK(t.value(t.matmul(eye, v)).data == std::vector<double>{5, 7});

  auto ones = t.leaf(Tensor({2, 1}, {1, 1}));
  CHECK(t.value(t.matmul(a, ones)).data == std::vector<double>{3, 7});

  CHECK_THROWS_AS(t.matmul(a, t.leaf(Tensor::zeros({3, 2}))), std::invalid_argument);
}

TEST_CASE("conv2d identity kernel, ones sum, zero input", "[tape]") {
  Tape t;
  std::mt19937_64 rng(3);
  Tensor img = Tensor::zeros({1, 5, 5});
  fill_uniform(img, rng, 0.0, 1.0);

  // 3x3 delta kernel with padding 1 preserves the input
  Tensor delta = Tensor::zeros({1, 1, 3, 3});
  delta.data[4] = 1.0;
  auto out = t.conv2d(t.leaf(img), t.leaf(delta), 1, 1);
  CHECK(t.value(out).shape == Shape{1, 5, 5});
  CHECK(t.value(out).data == img.data);

  // 3x3 ones input, 2x2 ones kernel, stride 1, pad 0 -> 2x2 all-4
  Tape t2;
  auto o2 = t2.conv2d(t2.leaf(Tensor::full({1, 3, 3}, 1.0)),
                      t2.leaf(Tensor::full({1, 1, 2, 2}, 1.0)), 1, 0);
  CHECK(t2.value(o2).shape == Shape{1, 2, 2});
  CHECK(t2.value(o2).data == std::vector<double>{4, 4, 4, 4});

  Tape t3;
  Tensor k = Tensor::zeros({2, 1, 3, 3});
  fill_uniform(k, rng, -1.0, 1.0);
  auto o3 = t3.conv2d(t3.leaf(Tensor::zeros({1, 4, 4})), t3.leaf(k), 1, 1);
  CHECK(count_nonzero(t3.value(o3)) == 0);
}

TEST_CASE("relu forward and subgradient at the kink", "[tape]") {
  Tape t;
  auto in = t.leaf(Tensor::vector({-1, 0, 2}));
  auto out = t.relu(in);
  CHECK(t.value(out).data == std::vector<double>{0, 0, 2});

  Tape t2;
  CHECK(count_nonzero(t2.value(t2.relu(t2.leaf(Tensor::vector({-3, -1, -0.5}))))) == 0);

  // gradient of sum(relu(x)) at [-1, 2] is [0, 1]; at 0 the subgradient is 0
  Tape t3;
  auto x = t3.leaf(Tensor::vector({-1, 2}));
  auto r = t3.relu(x);
  auto s = t3.matmul(t3.reshape(t3.leaf(Tensor::vector({1, 1})), {1, 2}), t3.reshape(r, {2, 1}));
  t3.backward(s);
  CHECK(t3.grad(x).data == std::vector<double>{0, 1});

  Tape t4;
  auto x0 = t4.leaf(Tensor::vector({0.0}));
  auto r0 = t4.relu(x0);
  t4.backward(r0);
  CHECK(t4.grad(x0).data == std::vector<double>{0});
}

TEST_CASE("softmax cross entropy values", "[tape]") {
  // uniform logits over k classes -> ln k
  for (std::size_t k : {2, 5, 10}) {
    Tape t;
    auto l = t.leaf(Tensor::full({k}, 0.7));
    CHECK_THAT(t.value(t.softmax_cross_entropy(l, 0)).data[0],
               Catch::Matchers::WithinAbs(std::log(double(k)), 1e-12));
  }
  // saturated case
  {
    Tape t;
    auto l = t.leaf(Tensor::vector({1000, 0}));
    CHECK(t.value(t.softmax_cross_entropy(l, 0)).data[0] < 1e-12);
  }
  // [1,2,3] label 2: lse = 3 + ln(1 + e^-1 + e^-2); loss = lse - 3
  {
    Tape t;
    auto l = t.leaf(Tensor::vector({1, 2, 3}));
    const double expect = std::log(1.0 + std::exp(-1.0) + std::exp(-2.0));
    CHECK_THAT(t.value(t.softmax_cross_entropy(l, 2)).data[0],
               Catch::Matchers::WithinAbs(expect, 1e-14));
  }
  {
    Tape t;
    auto l = t.leaf(Tensor::vector({1, 2}));
    CHECK_THROWS_AS(t.softmax_cross_entropy(l, 2), std::out_of_range);
  }
}

TEST_CASE("label-smoothed cross entropy matches the plain op at zero smoothing", "[tape]") {
  Tape t1, t2;
  auto l1 = t1.leaf(Tensor::vector({0.3, -1.2, 2.0}));
  auto l2 = t2.leaf(Tensor::vector({0.3, -1.2, 2.0}));
  CHECK(t1.value(t1.softmax_cross_entropy(l1, 1)).data[0] ==
        t2.value(t2.softmax_cross_entropy_smoothed(l2, 1, 0.0)).data[0]);

  // smoothed gradient sums to zero (softmax minus a distribution)
  Tape t3;
  auto l3 = t3.leaf(Tensor::vector({0.3, -1.2, 2.0}));
  auto loss = t3.softmax_cross_entropy_smoothed(l3, 1, 0.2);
  t3.backward(loss);
  double sum = 0.0;
  for (double v : t3.grad(l3).data) sum += v;
  CHECK_THAT(sum, Catch::Matchers::WithinAbs(0.0, 1e-14));
}

TEST_CASE("simple analytic gradients", "[tape]") {
  // f(x) = x*x at x=3 -> gradient 6
  Tape t;
  auto x = t.leaf(Tensor::vector({3}));
  auto y = t.mul(x, x);
  t.backward(y);
  CHECK(t.grad(x).data == std::vector<double>{6});

  // f(x) = relu(-x) at x=1 -> gradient 0
  Tape t2;
  auto x2 = t2.leaf(Tensor::vector({1}));
  auto y2 = t2.relu(t2.scale(x2, -1.0));
  t2.backward(y2);
  CHECK(t2.grad(x2).data == std::vector<double>{0});
}

TEST_CASE("two-layer network gradient matches central finite differences", "[tape]") {
  std::mt19937_64 rng(11);
  Tensor w1 = Tensor::zeros({6, 4}), b1 = Tensor::zeros({6, 1});
  Tensor w2 = Tensor::zeros({3, 6}), b2 = Tensor::zeros({3, 1});
  Tensor x = Tensor::zeros({4, 1});
  for (Tensor* t : {&w1, &b1, &w2, &b2, &x}) fill_uniform(*t, rng, -1.0, 1.0);
  const std::size_t label = 1;

  auto loss_at = [&](const Tensor& w1v, const Tensor& xv) {
    Tape t;
    auto h = t.relu(t.add(t.matmul(t.leaf(w1v), t.leaf(xv)), t.leaf(b1)));
    auto z = t.add(t.matmul(t.leaf(w2), h), t.leaf(b2));
    return t.value(t.softmax_cross_entropy(t.reshape(z, {3}), label)).data[0];
  };

  Tape t;
  auto hw1 = t.leaf(w1);
  auto hx = t.leaf(x);
  auto h = t.relu(t.add(t.matmul(hw1, hx), t.leaf(b1)));
  auto z = t.add(t.matmul(t.leaf(w2), h), t.leaf(b2));
  auto loss = t.softmax_cross_entropy(t.reshape(z, {3}), label);
  t.backward(loss);

  const double step = 1e-5;
  Tensor gw1 = t.grad(hw1), gx = t.grad(hx);
  for (std::size_t i = 0; i < w1.size(); ++i) {
    Tensor p = w1, m = w1;
    p.data[i] += step;
    m.data[i] -= step;
    const double fd = (loss_at(p, x) - loss_at(m, x)) / (2 * step);
    CHECK_THAT(gw1.data[i], Catch::Matchers::WithinAbs(fd, 1e-7));
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    Tensor p = x, m = x;
    p.data[i] += step;
    m.data[i] -= step;
    const double fd = (loss_at(w1, p) - loss_at(w1, m)) / (2 * step);
    CHECK_THAT(gx.data[i], Catch::Matchers::WithinAbs(fd, 1e-7));
  }
}

TEST_CASE("maxpool2 picks maxima and routes gradient to the argmax", "[tape]") {
  Tape t;
  auto in = t.leaf(Tensor({1, 2, 2}, {1, 4, 2, 3}));
  auto out = t.maxpool2(in);
  CHECK(t.value(out).data == std::vector<double>{4});
  t.backward(out);
  CHECK(t.grad(in).data == std::vector<double>{0, 1, 0, 0});

  // ties resolve to the first element in scan order
  Tape t2;
  auto in2 = t2.leaf(Tensor::full({1, 2, 2}, 5.0));
  auto out2 = t2.maxpool2(in2);
  t2.backward(out2);
  CHECK(t2.grad(in2).data == std::vector<double>{1, 0, 0, 0});

  Tape t3;
  CHECK_THROWS_AS(t3.maxpool2(t3.leaf(Tensor::zeros({1, 3, 3}))), std::invalid_argument);
}

TEST_CASE("tape is single-use and demands a scalar output", "[tape]") {
  Tape t;
  auto x = t.leaf(Tensor::vector({1, 2}));
  CHECK_THROWS_AS(t.backward(x), std::invalid_argument);  // non-scalar

  Tape t2;
  auto y = t2.leaf(Tensor::vector({2}));
  auto z = t2.mul(y, y);
  CHECK_THROWS_AS(t2.grad(z), std::logic_error);  // before backward
  t2.backward(z);
  CHECK_THROWS_AS(t2.backward(z), std::logic_error);  // reuse
}

TEST_CASE("grad of an uninvolved leaf is zero", "[tape]") {
  Tape t;
  auto x = t.leaf(Tensor::vector({1}));
  auto unused = t.leaf(Tensor::vector({9, 9}));
  auto y = t.mul(x, x);
  t.backward(y);
  CHECK(t.grad(unused).data == std::vector<double>{0, 0});
}

TEST_CASE("reshape round-trips values and gradients", "[tape]") {
  Tape t;
  auto x = t.leaf(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  auto r = t.reshape(x, {6});
  CHECK(t.value(r).shape == Shape{6});
  CHECK_THROWS_AS(t.reshape(x, {4}), std::invalid_argument);
}
