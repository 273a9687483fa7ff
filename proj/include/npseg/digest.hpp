#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace npseg {

// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

// Incremental hashing for stage digests.
class Digest {
 public:
  Digest();
  ~Digest();
  Digest(const Digest&) = delete;
  Digest& operator=(const Digest&) = delete;

  // Each field is length-prefixed so ("ab","c") and ("a","bc") differ.
  Digest& add(std::string_view field);
  Digest& add_file(const std::filesystem::path& path);
  std::string hex();

 private:
  void* ctx_;
};

}  // namespace npseg
