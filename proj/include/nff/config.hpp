#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>

namespace nff {

/// Flat `key = value` configuration. Lines starting with '#' are comments;
/// later assignments override earlier ones.
class Config {
 public:
  static Config parse(std::string_view text);
  static Config load(const std::string& path);

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.contains(key); }

  std::string str(const std::string& key) const;
  std::string str(const std::string& key, const std::string& fallback) const;
  double real(const std::string& key) const;
  double real(const std::string& key, double fallback) const;
  std::size_t count(const std::string& key) const;
  std::size_t count(const std::string& key, std::size_t fallback) const;
  std::uint64_t u64(const std::string& key) const;

  const std::map<std::string, std::string>& entries() const { return values_; }

  /// Sorted `key=value` lines; the basis of the hash.
  std::string canonical() const;
  /// 64-bit FNV-1a of canonical(), as 16 hex digits.
  std::string hash() const;

 private:
  std::map<std::string, std::string> values_;
};

std::uint64_t fnv1a(std::string_view bytes);
std::string hex64(std::uint64_t v);

/// Independent seed for a named random stream.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream);

}  // namespace nff
