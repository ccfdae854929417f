#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace hmcam {

/// Dense row-major array of doubles.
///
/// A Tensor is immutable once constructed. Construction checks that the
/// shape matches the data length and that every entry is finite, so every
/// operation returning a Tensor either yields finite values or throws
/// NonFiniteError. A rank-0 tensor (empty shape) is a scalar with one entry.
class Tensor {
 public:
  using Shape = std::vector<std::size_t>;

  Tensor() : data_{0.0} {}
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor zeros_like(const Tensor& t) { return zeros(t.shape()); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool is_scalar() const { return data_.size() == 1; }

  /// Number of rows when viewed as a matrix: rank-1 tensors are one row.
  std::size_t rows() const;
  /// Number of columns when viewed as a matrix.
  std::size_t cols() const;

  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }
  double operator[](std::size_t i) const { return data_[i]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  /// Value of a one-element tensor.
  double item() const;

  /// Row `r` of a rank-2 tensor (or the whole rank-1 tensor for r == 0) as a vector.
  Tensor row(std::size_t r) const;
  std::span<const double> row_span(std::size_t r) const;

  Tensor reshaped(Shape shape) const;
  /// View a rank-1 tensor as [1 x n]; rank-2 tensors are returned unchanged.
  Tensor as_matrix() const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

std::string shape_to_string(const Tensor::Shape& shape);
std::size_t shape_product(const Tensor::Shape& shape);

/// Stack equally sized rank-1 tensors into a [n x d] matrix.
Tensor stack_rows(std::span<const Tensor> rows);
/// Select rows of a rank-2 tensor.
Tensor gather_rows(const Tensor& m, std::span<const std::size_t> indices);

// Pure operations. Shapes must match exactly; the only implicit broadcast
// is scalar-with-tensor through `scale`.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor square(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor sign(const Tensor& a);
Tensor relu(const Tensor& a);
/// Adds `bias` (length n) to every row of a [m x n] matrix.
Tensor add_row_vector(const Tensor& a, const Tensor& bias);
Tensor clamp(const Tensor& a, double lo, double hi);

Tensor sum(const Tensor& a);
/// L1 norm as a scalar tensor.
Tensor abs_sum(const Tensor& a);
double linf_norm(const Tensor& a);
double linf_distance(const Tensor& a, const Tensor& b);
double dot(const Tensor& a, const Tensor& b);

/// Row-wise softmax, stabilised by max subtraction. Rank 1 or 2.
Tensor softmax(const Tensor& logits);
/// Sum over rows of -log softmax(logits)[true class]. Rank 1 or 2.
Tensor softmax_cross_entropy(const Tensor& logits, const Tensor& onehot);
/// Per-row cross-entropy given class indices.
std::vector<double> cross_entropy_rows(const Tensor& logits, std::span<const std::size_t> labels);
std::vector<std::size_t> argmax_rows(const Tensor& logits);
/// One-hot encoding as a [labels.size() x classes] matrix.
Tensor one_hot(std::span<const std::size_t> labels, std::size_t classes);

}  // namespace hmcam
