#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "courier/diffcore/tensor.hpp"
#include "json.hpp"

namespace courier {

// Base64 of the little-endian IEEE-754 bytes; decoding is bit-exact.
std::string encode_doubles(std::span<const double> values);
std::vector<double> decode_doubles(std::string_view text);

// {"shape": [..], "data": "<base64>"}
nlohmann::json tensor_to_json(const diff::Tensor& t);
diff::Tensor tensor_from_json(const nlohmann::json& j);

std::string sha256_hex(std::string_view bytes);
// MissingInputError when the file cannot be read.
std::string sha256_file(const std::filesystem::path& path);

}  // namespace courier
