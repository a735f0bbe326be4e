#include "couda/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace couda::diff {

using detail::Node;

namespace {

struct Dims {
  std::size_t rows;
  std::size_t cols;
};

Dims matrix_dims(std::string_view op, const Tensor& t) {
  if (t.rank() > 2) throw ShapeError(std::string(op), {t.shape()}, "expected rank 1 or 2");
  return {t.rows(), t.cols()};
}

void require_same_shape(std::string_view op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError(std::string(op), {a.shape(), b.shape()});
}

template <typename Backward>
Tensor record(std::string_view op, Shape shape, std::vector<double> value, std::initializer_list<Tensor> inputs,
              Backward&& backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  if (grad_enabled()) {
    for (const auto& in : inputs) node->requires_grad = node->requires_grad || in.requires_grad();
  }
  if (node->requires_grad) {
    for (const auto& in : inputs) node->parents.push_back(in.node());
    node->backward = std::forward<Backward>(backward_fn);
  }
  return Tensor(std::move(node));
}

// Gradient buffer of parent i, or nullptr when that parent is not being differentiated.
double* grad_of(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  return p.requires_grad ? p.grad_buffer().data() : nullptr;
}

const std::vector<double>& value_of(const Node& self, std::size_t i) { return self.parents[i]->value; }

template <typename F, typename D>
Tensor unary(std::string_view op, const Tensor& a, F f, D dfdx) {
  std::vector<double> out(a.size());
  auto in = a.values();
  std::transform(in.begin(), in.end(), out.begin(), f);
  return record(op, a.shape(), std::move(out), {a}, [dfdx](Node& self) {
    double* ga = grad_of(self, 0);
    const auto& x = value_of(self, 0);
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] += self.grad[i] * dfdx(x[i], self.value[i]);
  });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto [n, k] = matrix_dims("matmul", a);
  const auto [k2, m] = matrix_dims("matmul", b);
  if (k != k2) throw ShapeError("matmul", {a.shape(), b.shape()}, "inner dimensions differ");
  std::vector<double> out(n * m, 0.0);
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      for (std::size_t j = 0; j < m; ++j) out[i * m + j] += aip * bv[p * m + j];
    }
  }
  return record("matmul", {n, m}, std::move(out), {a, b}, [n = n, k = k, m = m](Node& self) {
    const auto& av = value_of(self, 0);
    const auto& bv = value_of(self, 1);
    const auto& g = self.grad;
    if (double* ga = grad_of(self, 0)) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < m; ++j) acc += g[i * m + j] * bv[p * m + j];
          ga[i * k + p] += acc;
        }
    }
    if (double* gb = grad_of(self, 1)) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av[i * k + p];
          for (std::size_t j = 0; j < m; ++j) gb[p * m + j] += aip * g[i * m + j];
        }
    }
  });
}

Tensor transpose(const Tensor& a) {
  const auto [n, m] = matrix_dims("transpose", a);
  std::vector<double> out(n * m);
  auto av = a.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[j * n + i] = av[i * m + j];
  return record("transpose", {m, n}, std::move(out), {a}, [n = n, m = m](Node& self) {
    double* ga = grad_of(self, 0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) ga[i * m + j] += self.grad[j * n + i];
  });
}

Tensor batch_vecmat(const Tensor& y, const Tensor& blocks) {
  const auto [n, k] = matrix_dims("batch_vecmat", y);
  const auto [rows, m] = matrix_dims("batch_vecmat", blocks);
  if (rows != n * k || m != k) {
    throw ShapeError("batch_vecmat", {y.shape(), blocks.shape()}, "blocks must be (n*K) x K");
  }
  std::vector<double> out(n * k, 0.0);
  auto yv = y.values();
  auto bv = blocks.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < k; ++c) {
      const double w = yv[i * k + c];
      const double* row = &bv[(i * k + c) * k];
      for (std::size_t j = 0; j < k; ++j) out[i * k + j] += w * row[j];
    }
  return record("batch_vecmat", {n, k}, std::move(out), {y, blocks}, [n = n, k = k](Node& self) {
    const auto& yv = value_of(self, 0);
    const auto& bv = value_of(self, 1);
    const auto& g = self.grad;
    double* gy = grad_of(self, 0);
    double* gb = grad_of(self, 1);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < k; ++c) {
        const std::size_t r = (i * k + c) * k;
        if (gy) {
          double acc = 0.0;
          for (std::size_t j = 0; j < k; ++j) acc += g[i * k + j] * bv[r + j];
          gy[i * k + c] += acc;
        }
        if (gb) {
          for (std::size_t j = 0; j < k; ++j) gb[r + j] += yv[i * k + c] * g[i * k + j];
        }
      }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.size());
  std::transform(a.values().begin(), a.values().end(), b.values().begin(), out.begin(), std::plus<>());
  return record("add", a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p)
      if (double* g = grad_of(self, p))
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> out(a.size());
  std::transform(a.values().begin(), a.values().end(), b.values().begin(), out.begin(), std::minus<>());
  return record("sub", a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (double* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    if (double* g = grad_of(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(a.size());
  std::transform(a.values().begin(), a.values().end(), b.values().begin(), out.begin(), std::multiplies<>());
  return record("mul", a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& av = value_of(self, 0);
    const auto& bv = value_of(self, 1);
    if (double* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
    if (double* g = grad_of(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
  });
}

Tensor add_rowwise(const Tensor& a, const Tensor& row) {
  const auto [n, m] = matrix_dims("add_rowwise", a);
  const auto [r, c] = matrix_dims("add_rowwise", row);
  if (r != 1 || c != m) throw ShapeError("add_rowwise", {a.shape(), row.shape()}, "expected a 1 x m row");
  std::vector<double> out(a.values().begin(), a.values().end());
  auto rv = row.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] += rv[j];
  return record("add_rowwise", a.shape(), std::move(out), {a, row}, [n = n, m = m](Node& self) {
    if (double* g = grad_of(self, 0))
      for (std::size_t i = 0; i < n * m; ++i) g[i] += self.grad[i];
    if (double* g = grad_of(self, 1))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) g[j] += self.grad[i * m + j];
  });
}

Tensor scale_rows(const Tensor& a, const Tensor& column) {
  const auto [n, m] = matrix_dims("scale_rows", a);
  if (column.rank() > 2 || column.size() != n || (column.rank() == 2 && column.cols() != 1)) {
    throw ShapeError("scale_rows", {a.shape(), column.shape()}, "expected an n x 1 column");
  }
  std::vector<double> out(n * m);
  auto av = a.values();
  auto cv = column.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = av[i * m + j] * cv[i];
  return record("scale_rows", a.shape(), std::move(out), {a, column}, [n = n, m = m](Node& self) {
    const auto& av = value_of(self, 0);
    const auto& cv = value_of(self, 1);
    double* ga = grad_of(self, 0);
    double* gc = grad_of(self, 1);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        const double g = self.grad[i * m + j];
        if (ga) ga[i * m + j] += g * cv[i];
        if (gc) gc[i] += g * av[i * m + j];
      }
  });
}

Tensor scale(const Tensor& a, double factor) {
  return unary("scale", a, [factor](double x) { return factor * x; },
               [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double offset) {
  return unary("add_scalar", a, [offset](double x) { return x + offset; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& a) {
  return unary("relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      "sigmoid", a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor softmax_rowwise(const Tensor& a) {
  const auto [n, m] = matrix_dims("softmax_rowwise", a);
  std::vector<double> out(n * m);
  auto av = a.values();
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = &av[i * m];
    const double peak = *std::max_element(row, row + m);
    double total = 0.0;
    for (std::size_t j = 0; j < m; ++j) total += out[i * m + j] = std::exp(row[j] - peak);
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] /= total;
  }
  return record("softmax_rowwise", a.shape(), std::move(out), {a}, [n = n, m = m](Node& self) {
    double* ga = grad_of(self, 0);
    const auto& y = self.value;
    const auto& g = self.grad;
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += g[i * m + j] * y[i * m + j];
      for (std::size_t j = 0; j < m; ++j) ga[i * m + j] += y[i * m + j] * (g[i * m + j] - dot);
    }
  });
}

Tensor log(const Tensor& a) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!(a.values()[i] > 0.0)) {
      throw DomainError("log", "non-positive input " + std::to_string(a.values()[i]) + " at index " +
                                   std::to_string(i) + " of " + to_string(a.shape()));
    }
  }
  return unary("log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor clamp_min(const Tensor& a, double floor) {
  return unary("clamp_min", a, [floor](double x) { return x > floor ? x : floor; },
               [floor](double x, double) { return x > floor ? 1.0 : 0.0; });
}

Tensor square(const Tensor& a) {
  return unary("square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor pow_scalar(const Tensor& a, double p) {
  for (double x : a.values()) {
    if (x < 0.0) throw DomainError("pow_scalar", "negative base " + std::to_string(x));
  }
  return unary("pow_scalar", a, [p](double x) { return p == 0.0 ? 1.0 : std::pow(x, p); },
               [p](double x, double) { return (x > 0.0 && p != 0.0) ? p * std::pow(x, p - 1.0) : 0.0; });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double x : a.values()) total += x;
  return record("sum", {1}, {total}, {a}, [](Node& self) {
    double* ga = grad_of(self, 0);
    const std::size_t n = self.parents[0]->value.size();
    for (std::size_t i = 0; i < n; ++i) ga[i] += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  double total = 0.0;
  for (double x : a.values()) total += x;
  const double n = static_cast<double>(a.size());
  return record("mean", {1}, {total / n}, {a}, [n](Node& self) {
    double* ga = grad_of(self, 0);
    const std::size_t count = self.parents[0]->value.size();
    for (std::size_t i = 0; i < count; ++i) ga[i] += self.grad[0] / n;
  });
}

Tensor sum_rows(const Tensor& a) {
  const auto [n, m] = matrix_dims("sum_rows", a);
  std::vector<double> out(n, 0.0);
  auto av = a.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i] += av[i * m + j];
  return record("sum_rows", {n, 1}, std::move(out), {a}, [n = n, m = m](Node& self) {
    double* ga = grad_of(self, 0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) ga[i * m + j] += self.grad[i];
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows", {}, "no inputs");
  const std::size_t m = matrix_dims("concat_rows", parts[0]).cols;
  std::size_t total_rows = 0;
  std::vector<Shape> shapes;
  for (const auto& p : parts) shapes.push_back(p.shape());
  for (const auto& p : parts) {
    const auto d = matrix_dims("concat_rows", p);
    if (d.cols != m) throw ShapeError("concat_rows", shapes, "column counts differ");
    total_rows += d.rows;
  }
  std::vector<double> out;
  out.reserve(total_rows * m);
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());

  auto node = std::make_shared<Node>();
  node->shape = {total_rows, m};
  node->value = std::move(out);
  node->op = "concat_rows";
  if (grad_enabled()) {
    for (const auto& p : parts) node->requires_grad = node->requires_grad || p.requires_grad();
  }
  if (node->requires_grad) {
    for (const auto& p : parts) node->parents.push_back(p.node());
    node->backward = [](Node& self) {
      std::size_t offset = 0;
      for (std::size_t p = 0; p < self.parents.size(); ++p) {
        const std::size_t count = self.parents[p]->value.size();
        if (double* g = grad_of(self, p))
          for (std::size_t i = 0; i < count; ++i) g[i] += self.grad[offset + i];
        offset += count;
      }
    };
  }
  return Tensor(std::move(node));
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  const Tensor parts[] = {a, b};
  return concat_rows(parts);
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  const auto [n, m] = matrix_dims("slice_rows", a);
  if (begin >= end || end > n) {
    throw ShapeError("slice_rows", {a.shape()},
                     "invalid row range [" + std::to_string(begin) + "," + std::to_string(end) + ")");
  }
  std::vector<double> out(a.values().begin() + begin * m, a.values().begin() + end * m);
  return record("slice_rows", {end - begin, m}, std::move(out), {a}, [offset = begin * m](Node& self) {
    double* ga = grad_of(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) ga[offset + i] += self.grad[i];
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  std::size_t count = 1;
  for (auto d : shape) count *= d;
  if (shape.empty() || count != a.size() || std::find(shape.begin(), shape.end(), 0u) != shape.end()) {
    throw ShapeError("reshape", {a.shape(), shape}, "element counts differ");
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  return record("reshape", std::move(shape), std::move(out), {a}, [](Node& self) {
    double* ga = grad_of(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
  });
}

Tensor pick(const Tensor& a, std::span<const std::size_t> index) {
  const auto [n, m] = matrix_dims("pick", a);
  if (index.size() != n) throw ShapeError("pick", {a.shape(), Shape{index.size()}}, "one index per row");
  std::vector<std::size_t> idx(index.begin(), index.end());
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (idx[i] >= m) {
      throw DomainError("pick", "index " + std::to_string(idx[i]) + " out of range for " + std::to_string(m) +
                                    " columns at row " + std::to_string(i));
    }
    out[i] = a.values()[i * m + idx[i]];
  }
  return record("pick", {n, 1}, std::move(out), {a}, [idx = std::move(idx), m = m](Node& self) {
    double* ga = grad_of(self, 0);
    for (std::size_t i = 0; i < idx.size(); ++i) ga[i * m + idx[i]] += self.grad[i];
  });
}

Tensor cosine_similarity_rowwise(const Tensor& a, const Tensor& b) {
  const auto [n, m] = matrix_dims("cosine_similarity_rowwise", a);
  const auto db = matrix_dims("cosine_similarity_rowwise", b);
  if (db.rows != n || db.cols != m) throw ShapeError("cosine_similarity_rowwise", {a.shape(), b.shape()});
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      dot += av[i * m + j] * bv[i * m + j];
      na += av[i * m + j] * av[i * m + j];
      nb += bv[i * m + j] * bv[i * m + j];
    }
    if (na == 0.0 || nb == 0.0) {
      throw DomainError("cosine_similarity_rowwise", "zero-norm row " + std::to_string(i));
    }
    out[i] = dot / std::sqrt(na * nb);
  }
  return record("cosine_similarity_rowwise", {n, 1}, std::move(out), {a, b}, [n = n, m = m](Node& self) {
    const auto& av = value_of(self, 0);
    const auto& bv = value_of(self, 1);
    double* ga = grad_of(self, 0);
    double* gb = grad_of(self, 1);
    for (std::size_t i = 0; i < n; ++i) {
      double na2 = 0.0, nb2 = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        na2 += av[i * m + j] * av[i * m + j];
        nb2 += bv[i * m + j] * bv[i * m + j];
      }
      const double inv = 1.0 / std::sqrt(na2 * nb2);
      const double c = self.value[i];
      const double g = self.grad[i];
      for (std::size_t j = 0; j < m; ++j) {
        if (ga) ga[i * m + j] += g * (bv[i * m + j] * inv - c * av[i * m + j] / na2);
        if (gb) gb[i * m + j] += g * (av[i * m + j] * inv - c * bv[i * m + j] / nb2);
      }
    }
  });
}

}  // namespace couda::diff
