#pragma once

#include <string>

namespace ctaf {

// Reads a whole file into a string. Throws DataError if the file cannot be
// opened or read.
std::string read_text(const std::string& path);

// Writes content to path atomically (temp file in the same directory, then
// rename). Throws DataError on any I/O failure.
void atomic_write_text(const std::string& path, const std::string& content);

}  // namespace ctaf
