#include <algorithm>
#include <fstream>

#include "doctest.h"
#include "hmcam/data.hpp"
#include "hmcam/errors.hpp"
#include "hmcam/hashing.hpp"
#include "test_support.hpp"

using namespace hmcam;
namespace fs = std::filesystem;

namespace {

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// Two 2x3 images and their labels, byte by byte.
const std::vector<std::uint8_t> kImages = {0x00, 0x00, 0x08, 0x03, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3,
                                           0,    51,   102,  153,  204, 255, 255, 0, 1, 2, 3, 128};
const std::vector<std::uint8_t> kLabels = {0x00, 0x00, 0x08, 0x01, 0, 0, 0, 2, 7, 3};

std::vector<double> sorted_rows(const Dataset& d) {
  std::vector<double> keys;
  for (std::size_t i = 0; i < d.size(); ++i) keys.push_back(d.input_span(i)[0] * 1000 + d.label(i));
  std::sort(keys.begin(), keys.end());
  return keys;
}

}  // namespace

TEST_CASE("IDX fixture parses to exact tensors") {
  const auto dir = testing::scratch_dir("idx_fixture");
  write_bytes(dir / "img", kImages);
  write_bytes(dir / "lab", kLabels);
  const Dataset d = load_mnist_idx(dir / "img", dir / "lab");
  REQUIRE(d.size() == 2);
  CHECK(d.dim() == 6);
  CHECK(d.classes() == 10);
  CHECK(d.input(0) == Tensor::vector({0.0, 51 / 255.0, 102 / 255.0, 153 / 255.0, 204 / 255.0, 1.0}));
  CHECK(d.input(1) == Tensor::vector({1.0, 0.0, 1 / 255.0, 2 / 255.0, 3 / 255.0, 128 / 255.0}));
  CHECK(d.labels() == std::vector<std::size_t>{7, 3});
}

TEST_CASE("IDX format errors") {
  const auto dir = testing::scratch_dir("idx_errors");
  write_bytes(dir / "img", kImages);
  write_bytes(dir / "lab", kLabels);

  SUBCASE("labels file carrying the image magic") {
    auto bad = kLabels;
    bad[3] = 0x03;
    write_bytes(dir / "bad", bad);
    CHECK_THROWS_AS(load_mnist_idx(dir / "img", dir / "bad"), DataError);
  }
  SUBCASE("truncated image data") {
    write_bytes(dir / "short", std::vector<std::uint8_t>(kImages.begin(), kImages.end() - 1));
    CHECK_THROWS_AS(load_mnist_idx(dir / "short", dir / "lab"), DataError);
  }
  SUBCASE("truncated header") {
    write_bytes(dir / "stub", {0, 0, 8});
    CHECK_THROWS_AS(load_mnist_idx(dir / "stub", dir / "lab"), DataError);
  }
  SUBCASE("count mismatch") {
    auto three = kLabels;
    three[7] = 3;
    three.push_back(1);
    write_bytes(dir / "three", three);
    CHECK_THROWS_AS(load_mnist_idx(dir / "img", dir / "three"), DataError);
  }
  SUBCASE("label out of range") {
    auto big = kLabels;
    big[8] = 12;
    write_bytes(dir / "big", big);
    CHECK_THROWS_AS(load_mnist_idx(dir / "img", dir / "big"), DataError);
  }
  SUBCASE("missing file names the path") {
    try {
      load_mnist_idx(dir / "nope-images", dir / "lab");
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("nope-images") != std::string::npos);
    }
  }
}

TEST_CASE("IDX round trip is identity up to byte quantization") {
  const auto centers = random_centers(3, 12, 0.1, 0.9, 4);
  const Dataset d = make_blobs(20, centers, 0.1, 9);
  const auto dir = testing::scratch_dir("idx_roundtrip");
  write_idx(d, dir / "img", dir / "lab", 3, 4);
  const Dataset back = load_mnist_idx(dir / "img", dir / "lab", 3);
  REQUIRE(back.size() == d.size());
  CHECK(back.labels() == d.labels());
  double worst = 0.0;
  for (std::size_t i = 0; i < d.flat_inputs().size(); ++i) {
    worst = std::max(worst, std::abs(back.flat_inputs()[i] - d.flat_inputs()[i]));
  }
  CHECK(worst <= 1.0 / 510.0 + 1e-15);
  CHECK(worst == doctest::Approx(quantize_to_bytes(d.flat_inputs()).max_rounding).epsilon(1e-12));
  CHECK_THROWS_AS(write_idx(d, dir / "a", dir / "b", 3, 5), DimensionError);
}

TEST_CASE("bundled MNIST digits") {
  const auto dir = testing::source_dir() / "data" / "mnist";
  const Dataset d = load_mnist_idx(dir / "mnist-10k-images-idx3-ubyte", dir / "mnist-10k-labels-idx1-ubyte");
  CHECK(d.size() == 10000);
  CHECK(d.dim() == 784);
  CHECK(d.classes() == 10);
  CHECK(std::all_of(d.flat_inputs().begin(), d.flat_inputs().end(), [](double v) { return v >= 0.0 && v <= 1.0; }));
  const auto manifest = dataset_manifest(d);
  for (std::size_t c = 0; c < 10; ++c) CHECK(manifest["per_class"][c].get<std::size_t>() > 800);
}

TEST_CASE("official t10k files when MNIST_DIR is set") {
  const char* env = std::getenv("MNIST_DIR");
  if (!env) {
    MESSAGE("MNIST_DIR not set; skipping the official t10k check");
    return;
  }
  const fs::path dir(env);
  const Dataset d = load_mnist_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte");
  CHECK(d.size() == 10000);
  CHECK(d.dim() == 784);
  CHECK(d.classes() == 10);
}

TEST_CASE("blobs") {
  const auto centers = random_centers(4, 5, 0.2, 0.8, 1);
  SUBCASE("zero sigma puts every point on its center") {
    const Dataset d = make_blobs(7, centers, 0.0, 3);
    for (std::size_t i = 0; i < d.size(); ++i) CHECK(d.input(i) == centers[d.label(i)]);
  }
  SUBCASE("seeded and reproducible") {
    const Dataset a = make_blobs(50, centers, 0.3, 42);
    const Dataset b = make_blobs(50, centers, 0.3, 42);
    const Dataset c = make_blobs(50, centers, 0.3, 43);
    CHECK(sha1_of_doubles(a.flat_inputs()) == sha1_of_doubles(b.flat_inputs()));
    CHECK(sha1_of_doubles(a.flat_inputs()) != sha1_of_doubles(c.flat_inputs()));
    CHECK(std::all_of(a.flat_inputs().begin(), a.flat_inputs().end(),
                      [](double v) { return v >= 0.0 && v <= 1.0; }));
  }
  SUBCASE("preconditions") {
    const Tensor same[] = {centers[0], centers[0]};
    CHECK_THROWS_AS(make_blobs(3, same, 0.1, 1), ContractError);
    CHECK_THROWS_AS(make_blobs(3, centers, -0.1, 1), ContractError);
  }
}

TEST_CASE("split") {
  const auto centers = random_centers(2, 3, 0.2, 0.8, 1);
  const Dataset d = make_blobs(5, centers, 0.2, 8);
  const auto [a, b] = split(d, 0.5, 99);
  CHECK(a.size() == 5);
  CHECK(b.size() == 5);
  CHECK(sorted_rows(a.concat(b)) == sorted_rows(d));
  const auto [a2, b2] = split(d, 0.5, 99);
  CHECK(a2.flat_inputs().size() == a.flat_inputs().size());
  CHECK(std::equal(a.flat_inputs().begin(), a.flat_inputs().end(), a2.flat_inputs().begin()));
  CHECK_THROWS_AS(split(d, 0.01, 1), DataError);
  CHECK_THROWS_AS(split(d, 1.0, 1), ContractError);
}

TEST_CASE("permutation is a bijection") {
  auto p = seeded_permutation(1000, 5);
  CHECK(p != seeded_permutation(1000, 6));
  std::sort(p.begin(), p.end());
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(p[i] == i);
}

TEST_CASE("git blob hash matches git's object id") {
  // `printf 'hello\n' | git hash-object --stdin`
  const std::string text = "hello\n";
  const std::vector<std::uint8_t> bytes(text.begin(), text.end());
  CHECK(git_blob_hash(bytes) == "ce013625030ba8dba906f756967f9e9ca394464a");
}
