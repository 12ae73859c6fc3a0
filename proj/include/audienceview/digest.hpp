#pragma once

#include <array>
#include <string>
#include <string_view>

#include <openssl/evp.h>

#include "json.hpp"

namespace audienceview {

using Json = nlohmann::json;

/// Hex SHA-256 of arbitrary bytes.
inline std::string sha256_hex(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr);
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 0xF]);
  }
  return out;
}

/// Canonical UTF-8 JSON: object keys sorted (nlohmann's default std::map
/// ordering), no insignificant whitespace, shortest round-trip doubles.
inline std::string canonical_json(const Json& j) { return j.dump(-1, ' ', false, Json::error_handler_t::strict); }

inline std::string json_digest(const Json& j) { return sha256_hex(canonical_json(j)); }

/// Incremental SHA-256 for digesting large record sets without materialising them.
class Sha256Stream {
 public:
  Sha256Stream() : ctx_(EVP_MD_CTX_new()) { EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr); }
  ~Sha256Stream() { EVP_MD_CTX_free(ctx_); }
  Sha256Stream(const Sha256Stream&) = delete;
  Sha256Stream& operator=(const Sha256Stream&) = delete;

  /// Appends a length-prefixed field so adjacent fields cannot alias.
  Sha256Stream& field(std::string_view s) {
    const std::string len = std::to_string(s.size()) + ":";
    EVP_DigestUpdate(ctx_, len.data(), len.size());
    EVP_DigestUpdate(ctx_, s.data(), s.size());
    return *this;
  }

  std::string hex() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_, md.data(), &len);
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    for (unsigned i = 0; i < len; ++i) {
      out.push_back(digits[md[i] >> 4]);
      out.push_back(digits[md[i] & 0xF]);
    }
    return out;
  }

 private:
  EVP_MD_CTX* ctx_;
};

}  // namespace audienceview
