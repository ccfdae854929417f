#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hmcam/tensor.hpp"
#include "json.hpp"

namespace hmcam {

/// Labelled classification data with every input entry in [0, 1].
///
/// Inputs are stored row-major as one flat buffer of `size() * dim()` values.
class Dataset {
 public:
  Dataset(std::string name, std::size_t dim, std::size_t classes, std::vector<double> inputs,
          std::vector<std::size_t> labels);

  const std::string& name() const { return name_; }
  std::size_t size() const { return labels_.size(); }
  std::size_t dim() const { return dim_; }
  std::size_t classes() const { return classes_; }
  bool empty() const { return labels_.empty(); }

  std::span<const double> input_span(std::size_t i) const {
    return std::span<const double>(inputs_).subspan(i * dim_, dim_);
  }
  Tensor input(std::size_t i) const;
  std::size_t label(std::size_t i) const { return labels_.at(i); }
  const std::vector<std::size_t>& labels() const { return labels_; }
  std::span<const double> flat_inputs() const { return inputs_; }

  /// All inputs as a [size x dim] matrix.
  Tensor inputs() const;
  /// Rows at `indices` as a [k x dim] matrix.
  Tensor batch(std::span<const std::size_t> indices) const;
  std::vector<std::size_t> batch_labels(std::span<const std::size_t> indices) const;
  Dataset subset(std::span<const std::size_t> indices, std::string name = {}) const;
  /// This dataset followed by `other`; both must agree on dim and classes.
  Dataset concat(const Dataset& other, std::string name = {}) const;

 private:
  std::string name_;
  std::size_t dim_;
  std::size_t classes_;
  std::vector<double> inputs_;
  std::vector<std::size_t> labels_;
};

/// Parse an MNIST-style IDX image file (magic 0x00000803) and label file
/// (magic 0x00000801). Pixels are scaled by 1/255.
Dataset load_mnist_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                       std::size_t classes = 10);

/// Write inputs as IDX bytes (rounded to the nearest of 256 levels) and labels as IDX1.
/// `image_rows * image_cols` must equal the dataset dimension.
void write_idx(const Dataset& data, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path, std::size_t image_rows, std::size_t image_cols);

/// Gaussian clusters around `centers` with isotropic `sigma`, clamped into [0,1].
/// Examples are ordered class by class.
Dataset make_blobs(std::size_t n_per_class, std::span<const Tensor> centers, double sigma, std::uint64_t seed);

/// `count` centers drawn uniformly from [lo, hi]^dim.
std::vector<Tensor> random_centers(std::size_t count, std::size_t dim, double lo, double hi, std::uint64_t seed);

/// Seeded shuffle split; the first part holds round(fraction * size) examples.
std::pair<Dataset, Dataset> split(const Dataset& data, double fraction, std::uint64_t seed);

/// Seeded Fisher–Yates permutation of 0..n-1.
std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed);

/// Byte quantization of values in [0,1] with the largest rounding error introduced.
struct Quantized {
  std::vector<std::uint8_t> bytes;
  double max_rounding = 0.0;
};
Quantized quantize_to_bytes(std::span<const double> values);

/// Manifest object: name, d, C, counts, per-class counts and source checksums.
nlohmann::json dataset_manifest(const Dataset& data, const std::vector<std::filesystem::path>& sources = {});

}  // namespace hmcam
