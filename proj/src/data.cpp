#include "hmcam/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "hmcam/errors.hpp"
#include "hmcam/hashing.hpp"
#include "hmcam/rng.hpp"

namespace hmcam {

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset, const std::filesystem::path& path) {
  if (offset + 4 > bytes.size()) throw DataError("truncated IDX header in " + path.string());
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void write_be32(std::ofstream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                     static_cast<char>(v)};
  out.write(b, 4);
}

}  // namespace

Dataset::Dataset(std::string name, std::size_t dim, std::size_t classes, std::vector<double> inputs,
                 std::vector<std::size_t> labels)
    : name_(std::move(name)), dim_(dim), classes_(classes), inputs_(std::move(inputs)), labels_(std::move(labels)) {
  if (dim_ == 0 || classes_ == 0) throw DataError("Dataset: dim and classes must be positive");
  if (inputs_.size() != labels_.size() * dim_) throw DataError("Dataset: inputs and labels differ in length");
  for (double v : inputs_) {
    if (!(v >= 0.0 && v <= 1.0)) throw DataError("Dataset: input entry outside [0,1]");
  }
  for (std::size_t y : labels_) {
    if (y >= classes_) throw DataError("Dataset: label out of range");
  }
}

Tensor Dataset::input(std::size_t i) const {
  if (i >= size()) throw DimensionError("Dataset::input: index out of range");
  auto s = input_span(i);
  return Tensor::vector(std::vector<double>(s.begin(), s.end()));
}

Tensor Dataset::inputs() const {
  if (empty()) throw DataError("Dataset::inputs: empty dataset");
  return Tensor::matrix(size(), dim_, inputs_);
}

Tensor Dataset::batch(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw DataError("Dataset::batch: empty batch");
  std::vector<double> out;
  out.reserve(indices.size() * dim_);
  for (std::size_t i : indices) {
    if (i >= size()) throw DimensionError("Dataset::batch: index out of range");
    auto s = input_span(i);
    out.insert(out.end(), s.begin(), s.end());
  }
  return Tensor::matrix(indices.size(), dim_, std::move(out));
}

std::vector<std::size_t> Dataset::batch_labels(std::span<const std::size_t> indices) const {
  std::vector<std::size_t> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(labels_.at(i));
  return out;
}

Dataset Dataset::subset(std::span<const std::size_t> indices, std::string name) const {
  std::vector<double> in;
  in.reserve(indices.size() * dim_);
  for (std::size_t i : indices) {
    if (i >= size()) throw DimensionError("Dataset::subset: index out of range");
    auto s = input_span(i);
    in.insert(in.end(), s.begin(), s.end());
  }
  return Dataset(name.empty() ? name_ : std::move(name), dim_, classes_, std::move(in), batch_labels(indices));
}

Dataset Dataset::concat(const Dataset& other, std::string name) const {
  if (other.dim_ != dim_ || other.classes_ != classes_) throw DimensionError("Dataset::concat: incompatible datasets");
  std::vector<double> in(inputs_);
  in.insert(in.end(), other.inputs_.begin(), other.inputs_.end());
  std::vector<std::size_t> labels(labels_);
  labels.insert(labels.end(), other.labels_.begin(), other.labels_.end());
  return Dataset(name.empty() ? name_ : std::move(name), dim_, classes_, std::move(in), std::move(labels));
}

Dataset load_mnist_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                       std::size_t classes) {
  const auto images = read_file(images_path);
  const auto labels = read_file(labels_path);

  if (read_be32(images, 0, images_path) != kIdxImagesMagic) {
    throw DataError("bad IDX image magic in " + images_path.string());
  }
  if (read_be32(labels, 0, labels_path) != kIdxLabelsMagic) {
    throw DataError("bad IDX label magic in " + labels_path.string());
  }
  const std::size_t n = read_be32(images, 4, images_path);
  const std::size_t rows = read_be32(images, 8, images_path);
  const std::size_t cols = read_be32(images, 12, images_path);
  const std::size_t n_labels = read_be32(labels, 4, labels_path);
  if (n != n_labels) {
    throw DataError("IDX count mismatch: " + std::to_string(n) + " images vs " + std::to_string(n_labels) + " labels");
  }
  const std::size_t d = rows * cols;
  if (images.size() < 16 + n * d) throw DataError("truncated IDX image data in " + images_path.string());
  if (labels.size() < 8 + n) throw DataError("truncated IDX label data in " + labels_path.string());

  std::vector<double> inputs(n * d);
  for (std::size_t i = 0; i < n * d; ++i) inputs[i] = images[16 + i] / 255.0;
  std::vector<std::size_t> ys(n);
  for (std::size_t i = 0; i < n; ++i) {
    ys[i] = labels[8 + i];
    if (ys[i] >= classes) throw DataError("IDX label out of range in " + labels_path.string());
  }
  return Dataset("mnist", d, classes, std::move(inputs), std::move(ys));
}

void write_idx(const Dataset& data, const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
               std::size_t image_rows, std::size_t image_cols) {
  if (image_rows * image_cols != data.dim()) throw DimensionError("write_idx: image shape does not match dim");
  for (std::size_t y : data.labels()) {
    if (y > 255) throw DataError("write_idx: label does not fit a byte");
  }
  std::ofstream img(images_path, std::ios::binary);
  std::ofstream lab(labels_path, std::ios::binary);
  if (!img || !lab) throw DataError("write_idx: cannot open output files");
  write_be32(img, kIdxImagesMagic);
  write_be32(img, static_cast<std::uint32_t>(data.size()));
  write_be32(img, static_cast<std::uint32_t>(image_rows));
  write_be32(img, static_cast<std::uint32_t>(image_cols));
  const Quantized q = quantize_to_bytes(data.flat_inputs());
  img.write(reinterpret_cast<const char*>(q.bytes.data()), static_cast<std::streamsize>(q.bytes.size()));
  write_be32(lab, kIdxLabelsMagic);
  write_be32(lab, static_cast<std::uint32_t>(data.size()));
  for (std::size_t y : data.labels()) lab.put(static_cast<char>(y));
}

Dataset make_blobs(std::size_t n_per_class, std::span<const Tensor> centers, double sigma, std::uint64_t seed) {
  if (centers.empty()) throw ContractError("make_blobs: no centers");
  if (!(sigma >= 0.0)) throw ContractError("make_blobs: sigma must be non-negative");
  const std::size_t d = centers.front().size();
  for (std::size_t a = 0; a < centers.size(); ++a) {
    if (centers[a].size() != d) throw DimensionError("make_blobs: centers differ in dimension");
    for (std::size_t b = 0; b < a; ++b) {
      if (centers[a] == centers[b]) throw ContractError("make_blobs: duplicate centers");
    }
  }
  SeededRng rng(seed);
  std::vector<double> inputs;
  std::vector<std::size_t> labels;
  inputs.reserve(centers.size() * n_per_class * d);
  for (std::size_t c = 0; c < centers.size(); ++c) {
    for (std::size_t i = 0; i < n_per_class; ++i) {
      for (std::size_t j = 0; j < d; ++j) inputs.push_back(std::clamp(centers[c][j] + sigma * rng.normal(), 0.0, 1.0));
      labels.push_back(c);
    }
  }
  return Dataset("blobs", d, centers.size(), std::move(inputs), std::move(labels));
}

std::vector<Tensor> random_centers(std::size_t count, std::size_t dim, double lo, double hi, std::uint64_t seed) {
  SeededRng rng(seed);
  std::vector<Tensor> out;
  for (std::size_t c = 0; c < count; ++c) {
    std::vector<double> v(dim);
    for (double& x : v) x = rng.uniform(lo, hi);
    out.push_back(Tensor::vector(std::move(v)));
  }
  return out;
}

std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  SeededRng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

std::pair<Dataset, Dataset> split(const Dataset& data, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ContractError("split: fraction must lie in (0,1)");
  const auto count = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(data.size())));
  if (count == 0 || count == data.size()) throw DataError("split: degenerate split sizes");
  const auto order = seeded_permutation(data.size(), seed);
  std::span<const std::size_t> all(order);
  return {data.subset(all.first(count)), data.subset(all.subspan(count))};
}

Quantized quantize_to_bytes(std::span<const double> values) {
  Quantized q;
  q.bytes.reserve(values.size());
  for (double v : values) {
    const double level = std::clamp(std::round(v * 255.0), 0.0, 255.0);
    q.bytes.push_back(static_cast<std::uint8_t>(level));
    q.max_rounding = std::max(q.max_rounding, std::abs(level / 255.0 - v));
  }
  return q;
}

nlohmann::json dataset_manifest(const Dataset& data, const std::vector<std::filesystem::path>& sources) {
  std::vector<std::size_t> per_class(data.classes(), 0);
  for (std::size_t y : data.labels()) ++per_class[y];
  nlohmann::json j = {{"name", data.name()},
                      {"d", data.dim()},
                      {"C", data.classes()},
                      {"count", data.size()},
                      {"per_class", per_class},
                      {"inputs_sha1", sha1_of_doubles(data.flat_inputs())}};
  nlohmann::json src = nlohmann::json::array();
  for (const auto& p : sources) src.push_back({{"path", p.string()}, {"git_blob", git_blob_hash_file(p)}});
  j["sources"] = src;
  return j;
}

}  // namespace hmcam
