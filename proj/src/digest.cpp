#include "elastic_group/digest.hpp"

#include <openssl/evp.h>

#include <array>

namespace eg {

Bytes sha256(ByteView data) {
  Bytes out(32);
  unsigned int len = 0;
  EVP_Digest(data.data(), data.size(), out.data(), &len, EVP_sha256(), nullptr);
  out.resize(len);
  return out;
}

std::string sha256_hex(ByteView data) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  for (std::uint8_t b : sha256(data)) {
    hex.push_back(kHex[b >> 4]);
    hex.push_back(kHex[b & 0xf]);
  }
  return hex;
}

std::string sha256_hex(const std::string& data) {
  return sha256_hex(ByteView(reinterpret_cast<const std::uint8_t*>(data.data()), data.size()));
}

}  // namespace eg
