#pragma once

#include <string>
#include <string_view>

namespace cascadelab {

/// Hex SHA-1 of the git blob object for `content`, i.e. the id that
/// `git hash-object` prints for a file with these bytes.
std::string git_blob_sha1(std::string_view content);

/// Hex SHA-256 of `content`.
std::string sha256_hex(std::string_view content);

}  // namespace cascadelab
