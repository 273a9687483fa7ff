#include "npseg/digest.hpp"

#include <openssl/evp.h>

#include <array>
#include <fstream>

#include "npseg/error.hpp"

namespace npseg {

namespace {

EVP_MD_CTX* as_ctx(void* p) { return static_cast<EVP_MD_CTX*>(p); }

std::string to_hex(const unsigned char* md, unsigned int len) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += digits[md[i] >> 4];
    out += digits[md[i] & 15];
  }
  return out;
}

}  // namespace

Digest::Digest() : ctx_(EVP_MD_CTX_new()) {
  if (!ctx_ || EVP_DigestInit_ex(as_ctx(ctx_), EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::StageFailure, "sha256 init failed");
  }
}

Digest::~Digest() { EVP_MD_CTX_free(as_ctx(ctx_)); }

Digest& Digest::add(std::string_view field) {
  const std::string prefix = std::to_string(field.size()) + ":";
  EVP_DigestUpdate(as_ctx(ctx_), prefix.data(), prefix.size());
  EVP_DigestUpdate(as_ctx(ctx_), field.data(), field.size());
  return *this;
}

Digest& Digest::add_file(const std::filesystem::path& path) {
  return add(sha256_file(path));
}

std::string Digest::hex() {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(as_ctx(ctx_), md, &len);
  return to_hex(md, len);
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::StageFailure, "sha256 failed");
  }
  return to_hex(md, len);
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot read " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::array<char, 1 << 16> buf;
  while (in) {
    in.read(buf.data(), buf.size());
    EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  return to_hex(md, len);
}

}  // namespace npseg
