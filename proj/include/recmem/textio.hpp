#pragma once

#include <filesystem>
#include <string>

namespace recmem {

// Whole-file read/write, binary-exact. Both throw IoError.
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& content);

}  // namespace recmem
