#include <doctest.h>

#include <vector>

#include "couda/ops.hpp"
#include "couda/tensor.hpp"

using couda::diff::Tensor;
namespace dt = couda::diff;

TEST_CASE("factories check shape against data") {
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), couda::ShapeError);
  CHECK_THROWS_AS(Tensor::from({0, 2}, {}), couda::ShapeError);
  const Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(t.at(1, 2) == 6.0);
  CHECK(Tensor::from({3}, {1, 2, 3}).rows() == 1);
  CHECK(Tensor::scalar(4.0).item() == 4.0);
  CHECK_THROWS_AS(t.item(), couda::ShapeError);
}

TEST_CASE("backward of sum of squares") {
  Tensor x = Tensor::from({3}, {1, 2, 3}, true);
  dt::backward(dt::sum(dt::square(x)));
  const std::vector<double> g(x.grad().begin(), x.grad().end());
  CHECK(g == std::vector<double>{2, 4, 6});
}

TEST_CASE("backward of mean") {
  Tensor x = Tensor::from({4}, {3, -1, 7, 0.5}, true);
  dt::backward(dt::mean(x));
  for (double g : x.grad()) CHECK(g == 0.25);
}

TEST_CASE("leaf gradients accumulate until zeroed") {
  Tensor x = Tensor::from({2}, {1, -2}, true);
  const Tensor loss = dt::sum(dt::square(x));
  dt::backward(loss);
  dt::backward(loss);
  CHECK(x.grad()[0] == 4.0);
  CHECK(x.grad()[1] == -8.0);
  x.zero_grad();
  dt::backward(loss);
  CHECK(x.grad()[0] == 2.0);
}

TEST_CASE("backward rejects non-scalar losses and missing graphs") {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  CHECK_THROWS_AS(dt::backward(dt::square(x)), couda::ShapeError);
  const Tensor c = Tensor::from({2}, {1, 2});
  CHECK_THROWS_AS(dt::backward(dt::sum(c)), couda::Error);
}

TEST_CASE("grad is unavailable before backward") {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  CHECK_FALSE(x.has_grad());
  CHECK_THROWS(x.grad());
}

TEST_CASE("interior nodes are immutable, leaves are not") {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  x.mutable_values()[0] = 5.0;
  CHECK(x.values()[0] == 5.0);
  CHECK_THROWS(dt::square(x).mutable_values());
}

TEST_CASE("detach copies values and cuts the graph") {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  const Tensor y = dt::square(x);
  const Tensor d = y.detach();
  CHECK(d.is_leaf());
  CHECK_FALSE(d.requires_grad());
  CHECK(d.values()[1] == 4.0);
  x.mutable_values()[1] = 10.0;
  CHECK(d.values()[1] == 4.0);
}

TEST_CASE("no-grad guard records nothing and restores the previous mode") {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  {
    dt::NoGradGuard guard;
    CHECK_FALSE(dt::grad_enabled());
    const Tensor y = dt::sum(dt::square(x));
    CHECK_FALSE(y.requires_grad());
    CHECK_THROWS_AS(dt::backward(y), couda::Error);
  }
  CHECK(dt::grad_enabled());
  CHECK(dt::sum(x).requires_grad());
}

TEST_CASE("backward is deterministic") {
  auto grads = [] {
    Tensor a = Tensor::from({2, 3}, {0.1, -0.4, 0.9, 1.3, -2.0, 0.25}, true);
    Tensor b = Tensor::from({3, 2}, {0.5, 0.2, -0.3, 0.8, 1.1, -0.7}, true);
    const Tensor h = dt::softmax_rowwise(dt::relu(dt::matmul(a, b)));
    dt::backward(dt::sum(dt::mul(h, h)));
    std::vector<double> g(a.grad().begin(), a.grad().end());
    g.insert(g.end(), b.grad().begin(), b.grad().end());
    return g;
  };
  CHECK(grads() == grads());
}

TEST_CASE("a node reached along two paths collects both contributions") {
  Tensor x = Tensor::from({1}, {3.0}, true);
  const Tensor y = dt::square(x);
  dt::backward(dt::sum(dt::add(y, y)));  // 2x^2
  CHECK(x.grad()[0] == doctest::Approx(12.0));
}
