#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace gfb {

bool file_exists(const std::string& path);
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);
std::vector<uint8_t> read_binary_file(const std::string& path);
void write_binary_file(const std::string& path, const void* data, size_t bytes);
void ensure_dir(const std::string& path);

std::string sha256_hex(const void* data, size_t bytes);
std::string sha256_hex(const std::string& text);
std::string sha256_file_hex(const std::string& path);

}  // namespace gfb
