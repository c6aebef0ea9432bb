#include "courier/common/codec.hpp"

#include <openssl/evp.h>
#include <openssl/sha.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "courier/error.hpp"

namespace courier {

static_assert(std::endian::native == std::endian::little, "checkpoint payloads assume a little-endian host");

std::string encode_doubles(std::span<const double> values) {
  const std::size_t n = values.size() * sizeof(double);
  std::string out(4 * ((n + 2) / 3), '\0');
  const int written = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                      reinterpret_cast<const unsigned char*>(values.data()), static_cast<int>(n));
  out.resize(static_cast<std::size_t>(written));
  return out;
}

std::vector<double> decode_doubles(std::string_view text) {
  if (text.size() % 4 != 0) throw DataError("base64 payload length is not a multiple of 4");
  std::string raw(text.size() / 4 * 3, '\0');
  const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(raw.data()),
                                reinterpret_cast<const unsigned char*>(text.data()), static_cast<int>(text.size()));
  if (n < 0) throw DataError("malformed base64 payload");
  // EVP_DecodeBlock keeps the zero bytes produced by '=' padding.
  std::size_t len = static_cast<std::size_t>(n);
  if (!text.empty() && text.back() == '=') --len;
  if (text.size() >= 2 && text[text.size() - 2] == '=') --len;
  if (len % sizeof(double) != 0) throw DataError("base64 payload is not a whole number of doubles");
  std::vector<double> out(len / sizeof(double));
  std::memcpy(out.data(), raw.data(), len);
  return out;
}

nlohmann::json tensor_to_json(const diff::Tensor& t) {
  return {{"shape", t.shape()}, {"data", encode_doubles(t.storage())}};
}

diff::Tensor tensor_from_json(const nlohmann::json& j) {
  try {
    auto shape = j.at("shape").get<diff::Shape>();
    auto data = decode_doubles(j.at("data").get<std::string>());
    // A default-constructed tensor has neither shape nor storage.
    if (shape.empty() && data.empty()) return diff::Tensor();
    return diff::Tensor(std::move(shape), std::move(data));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed tensor record: ") + e.what());
  }
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[SHA256_DIGEST_LENGTH];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xf]);
  }
  return out;
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError("cannot read " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return sha256_hex(bytes);
}

}  // namespace courier
