#include "hmcam/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "hmcam/errors.hpp"

namespace hmcam {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                         " vs " + shape_to_string(b.shape()));
  }
}

void require_rank(const Tensor& a, std::size_t lo, std::size_t hi, const char* op) {
  if (a.rank() < lo || a.rank() > hi) {
    throw DimensionError(std::string(op) + ": unsupported rank " + std::to_string(a.rank()));
  }
}

template <typename F>
Tensor map(const Tensor& a, F f) {
  std::vector<double> out(a.size());
  std::ranges::transform(a.data(), out.begin(), f);
  return Tensor(a.shape(), std::move(out));
}

template <typename F>
Tensor zip(const Tensor& a, const Tensor& b, const char* op, F f) {
  require_same_shape(a, b, op);
  std::vector<double> out(a.size());
  std::ranges::transform(a.data(), b.data(), out.begin(), f);
  return Tensor(a.shape(), std::move(out));
}

}  // namespace

std::string shape_to_string(const Tensor::Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t shape_product(const Tensor::Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  for (std::size_t extent : shape_) {
    if (extent == 0) throw DimensionError("Tensor: zero extent in shape " + shape_to_string(shape_));
  }
  if (shape_product(shape_) != data_.size()) {
    throw DimensionError("Tensor: shape " + shape_to_string(shape_) + " does not match " +
                         std::to_string(data_.size()) + " values");
  }
  for (double v : data_) {
    if (!std::isfinite(v)) throw NonFiniteError("Tensor: non-finite entry");
  }
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const std::size_t n = shape_product(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

std::size_t Tensor::rows() const {
  if (rank() == 2) return shape_[0];
  if (rank() == 1) return 1;
  throw DimensionError("Tensor::rows: expected rank 1 or 2, got " + shape_to_string(shape_));
}

std::size_t Tensor::cols() const {
  if (rank() == 2) return shape_[1];
  if (rank() == 1) return shape_[0];
  throw DimensionError("Tensor::cols: expected rank 1 or 2, got " + shape_to_string(shape_));
}

double Tensor::item() const {
  if (data_.size() != 1) throw ContractError("Tensor::item: tensor has " + std::to_string(size()) + " entries");
  return data_[0];
}

std::span<const double> Tensor::row_span(std::size_t r) const {
  if (r >= rows()) throw DimensionError("Tensor::row: index out of range");
  return std::span<const double>(data_).subspan(r * cols(), cols());
}

Tensor Tensor::row(std::size_t r) const {
  auto s = row_span(r);
  return Tensor::vector(std::vector<double>(s.begin(), s.end()));
}

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

Tensor Tensor::as_matrix() const {
  if (rank() == 2) return *this;
  if (rank() == 1) return Tensor({1, shape_[0]}, data_);
  throw DimensionError("Tensor::as_matrix: expected rank 1 or 2");
}

Tensor stack_rows(std::span<const Tensor> rows) {
  if (rows.empty()) throw DimensionError("stack_rows: no rows");
  const std::size_t d = rows.front().size();
  std::vector<double> out;
  out.reserve(rows.size() * d);
  for (const Tensor& r : rows) {
    if (r.size() != d) throw DimensionError("stack_rows: ragged rows");
    out.insert(out.end(), r.data().begin(), r.data().end());
  }
  return Tensor::matrix(rows.size(), d, std::move(out));
}

Tensor gather_rows(const Tensor& m, std::span<const std::size_t> indices) {
  require_rank(m, 2, 2, "gather_rows");
  const std::size_t d = m.cols();
  std::vector<double> out;
  out.reserve(indices.size() * d);
  for (std::size_t i : indices) {
    auto r = m.row_span(i);
    out.insert(out.end(), r.begin(), r.end());
  }
  return Tensor::matrix(indices.size(), d, std::move(out));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, 2, "matmul");
  require_rank(b, 2, 2, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner dimensions differ " + shape_to_string(a.shape()) + " x " +
                         shape_to_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = pa[i * k + p];
      if (s == 0.0) continue;
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += s * brow[j];
    }
  }
  return Tensor::matrix(m, n, std::move(out));
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, 2, "transpose");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  return Tensor::matrix(n, m, std::move(out));
}

Tensor add(const Tensor& a, const Tensor& b) { return zip(a, b, "add", std::plus<>()); }
Tensor sub(const Tensor& a, const Tensor& b) { return zip(a, b, "sub", std::minus<>()); }
Tensor mul(const Tensor& a, const Tensor& b) { return zip(a, b, "mul", std::multiplies<>()); }
Tensor scale(const Tensor& a, double factor) {
  return map(a, [factor](double v) { return v * factor; });
}
Tensor square(const Tensor& a) {
  return map(a, [](double v) { return v * v; });
}

Tensor sqrt(const Tensor& a) {
  for (double v : a.data()) {
    if (v < 0.0) throw DomainError("sqrt: negative entry");
  }
  return map(a, [](double v) { return std::sqrt(v); });
}

Tensor sign(const Tensor& a) {
  return map(a, [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor relu(const Tensor& a) {
  return map(a, [](double v) { return v > 0.0 ? v : 0.0; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  return map(a, [lo, hi](double v) { return std::clamp(v, lo, hi); });
}

Tensor add_row_vector(const Tensor& a, const Tensor& bias) {
  require_rank(a, 1, 2, "add_row_vector");
  require_rank(bias, 1, 1, "add_row_vector");
  const std::size_t n = a.cols();
  if (bias.size() != n) throw DimensionError("add_row_vector: bias length mismatch");
  std::vector<double> out(a.values());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bias[i % n];
  return Tensor(a.shape(), std::move(out));
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return Tensor::scalar(s);
}

Tensor abs_sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += std::abs(v);
  return Tensor::scalar(s);
}

double linf_norm(const Tensor& a) {
  double m = 0.0;
  for (double v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

double linf_distance(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "linf_distance");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Tensor softmax(const Tensor& logits) {
  require_rank(logits, 1, 2, "softmax");
  const std::size_t m = logits.rows(), c = logits.cols();
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < m; ++i) {
    auto z = logits.row_span(i);
    const double zmax = *std::ranges::max_element(z);
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      out[i * c + j] = std::exp(z[j] - zmax);
      total += out[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= total;
  }
  return Tensor(logits.shape(), std::move(out));
}

namespace {

double log_sum_exp(std::span<const double> z) {
  const double zmax = *std::ranges::max_element(z);
  double total = 0.0;
  for (double v : z) total += std::exp(v - zmax);
  return zmax + std::log(total);
}

}  // namespace

Tensor softmax_cross_entropy(const Tensor& logits, const Tensor& onehot) {
  require_rank(logits, 1, 2, "softmax_cross_entropy");
  require_same_shape(logits, onehot, "softmax_cross_entropy");
  double loss = 0.0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto y = onehot.row_span(i);
    std::size_t ones = 0, label = 0;
    for (std::size_t j = 0; j < y.size(); ++j) {
      if (y[j] == 1.0) {
        ++ones;
        label = j;
      } else if (y[j] != 0.0) {
        ones = 2;
      }
    }
    if (ones != 1) throw ContractError("softmax_cross_entropy: target row is not one-hot");
    auto z = logits.row_span(i);
    loss += log_sum_exp(z) - z[label];
  }
  return Tensor::scalar(loss);
}

std::vector<double> cross_entropy_rows(const Tensor& logits, std::span<const std::size_t> labels) {
  require_rank(logits, 1, 2, "cross_entropy_rows");
  if (labels.size() != logits.rows()) throw DimensionError("cross_entropy_rows: label count mismatch");
  std::vector<double> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto z = logits.row_span(i);
    if (labels[i] >= z.size()) throw DimensionError("cross_entropy_rows: label out of range");
    out[i] = log_sum_exp(z) - z[labels[i]];
  }
  return out;
}

std::vector<std::size_t> argmax_rows(const Tensor& logits) {
  require_rank(logits, 1, 2, "argmax_rows");
  std::vector<std::size_t> out(logits.rows());
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto z = logits.row_span(i);
    out[i] = static_cast<std::size_t>(std::ranges::max_element(z) - z.begin());
  }
  return out;
}

Tensor one_hot(std::span<const std::size_t> labels, std::size_t classes) {
  std::vector<double> out(labels.size() * classes, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes) throw DimensionError("one_hot: label out of range");
    out[i * classes + labels[i]] = 1.0;
  }
  return Tensor::matrix(labels.size(), classes, std::move(out));
}

}  // namespace hmcam
