#pragma once

#include <string>

#include "elastic_group/bytes.hpp"

namespace eg {

/// Lowercase hex SHA-256.
std::string sha256_hex(ByteView data);
std::string sha256_hex(const std::string& data);

/// Raw 32-byte SHA-256.
Bytes sha256(ByteView data);

}  // namespace eg
