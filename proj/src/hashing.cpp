#include "hmcam/hashing.hpp"

#include <openssl/evp.h>

#include <bit>
#include <fstream>
#include <iterator>
#include <memory>
#include <vector>

#include "hmcam/errors.hpp"

namespace hmcam {

namespace {

class Sha1 {
 public:
  Sha1() : ctx_(EVP_MD_CTX_new(), &EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha1(), nullptr) != 1) {
      throw std::runtime_error("sha1: digest init failed");
    }
  }
  void update(const void* data, std::size_t n) { EVP_DigestUpdate(ctx_.get(), data, n); }
  std::string hex() {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_.get(), digest, &len);
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
      out.push_back(kHex[digest[i] >> 4]);
      out.push_back(kHex[digest[i] & 0xf]);
    }
    return out;
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

}  // namespace

std::string sha1_hex(std::span<const std::uint8_t> bytes) {
  Sha1 h;
  h.update(bytes.data(), bytes.size());
  return h.hex();
}

std::string git_blob_hash(std::span<const std::uint8_t> bytes) {
  Sha1 h;
  const std::string header = "blob " + std::to_string(bytes.size());
  h.update(header.data(), header.size() + 1);  // includes the NUL terminator
  h.update(bytes.data(), bytes.size());
  return h.hex();
}

std::string git_blob_hash_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return git_blob_hash(bytes);
}

std::string sha1_of_doubles(std::span<const double> values) {
  Sha1 h;
  for (double v : values) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    unsigned char le[8];
    for (int i = 0; i < 8; ++i) le[i] = static_cast<unsigned char>(bits >> (8 * i));
    h.update(le, 8);
  }
  return h.hex();
}

}  // namespace hmcam
