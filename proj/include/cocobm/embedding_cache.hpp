#pragma once
// Binary embedding cache keyed by image id or prompt-text hash.
//
// Layout (little-endian):
//   magic "CCBMEMB1" | u32 dim | u64 count | u32 dtype (1 = float32)
//   count x (u32 key length, key bytes)
//   count x dim float32, row-major

#include "cocobm/core.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace cocobm {

class EmbeddingCache {
 public:
  static constexpr char kMagic[8] = {'C', 'C', 'B', 'M', 'E', 'M', 'B', '1'};
  static constexpr std::uint32_t kFloat32 = 1;

  explicit EmbeddingCache(std::size_t dim) : dim_(dim) {
    if (dim == 0) throw Error("embedding cache: dimension must be positive");
  }

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return keys_.size(); }
  const std::vector<std::string>& keys() const { return keys_; }
  bool contains(const std::string& key) const { return index_.count(key) > 0; }

  std::optional<Vector> get(const std::string& key) const {
    auto it = index_.find(key);
    if (it == index_.end()) return std::nullopt;
    Vector v(static_cast<Eigen::Index>(dim_));
    for (std::size_t k = 0; k < dim_; ++k) v(static_cast<Eigen::Index>(k)) = rows_[it->second * dim_ + k];
    return v;
  }

  // Stores the row at float32 precision. Existing keys are overwritten.
  void put(const std::string& key, const Vector& v) {
    if (static_cast<std::size_t>(v.size()) != dim_)
      throw Error("embedding cache: row for '" + key + "' has dimension " + std::to_string(v.size()) +
                  ", cache holds " + std::to_string(dim_));
    if (!v.allFinite()) throw Error("embedding cache: row for '" + key + "' is not finite");
    auto [it, inserted] = index_.emplace(key, keys_.size());
    if (inserted) {
      keys_.push_back(key);
      rows_.resize(rows_.size() + dim_);
    }
    for (std::size_t k = 0; k < dim_; ++k) rows_[it->second * dim_ + k] = static_cast<float>(v(static_cast<Eigen::Index>(k)));
  }

  // Writes to a temporary file and renames it over `path`.
  void save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw Error("cannot write embedding cache " + tmp.string());
      out.write(kMagic, sizeof kMagic);
      write_pod(out, static_cast<std::uint32_t>(dim_));
      write_pod(out, static_cast<std::uint64_t>(keys_.size()));
      write_pod(out, kFloat32);
      for (const auto& k : keys_) {
        write_pod(out, static_cast<std::uint32_t>(k.size()));
        out.write(k.data(), static_cast<std::streamsize>(k.size()));
      }
      out.write(reinterpret_cast<const char*>(rows_.data()), static_cast<std::streamsize>(rows_.size() * sizeof(float)));
      if (!out) throw Error("failed writing embedding cache " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
  }

  static EmbeddingCache load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read embedding cache " + path.string());
    auto corrupt = [&](const std::string& why) {
      return Error("corrupt embedding cache " + path.string() + ": " + why + "; delete the file and run `embed` again to rebuild it");
    };
    char magic[8] = {};
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw corrupt("bad magic");
    std::uint32_t dim = 0, dtype = 0;
    std::uint64_t count = 0;
    if (!read_pod(in, dim) || !read_pod(in, count) || !read_pod(in, dtype)) throw corrupt("truncated header");
    if (dim == 0) throw corrupt("zero dimension");
    if (dtype != kFloat32) throw corrupt("unsupported dtype " + std::to_string(dtype));
    const auto file_size = std::filesystem::file_size(path);
    if (count > file_size) throw corrupt("row count exceeds file size");
    EmbeddingCache cache(dim);
    for (std::uint64_t i = 0; i < count; ++i) {
      std::uint32_t len = 0;
      if (!read_pod(in, len) || len > file_size) throw corrupt("truncated key table");
      std::string key(len, '\0');
      in.read(key.data(), len);
      if (!in) throw corrupt("truncated key table");
      if (!cache.index_.emplace(key, cache.keys_.size()).second) throw corrupt("duplicate key '" + key + "'");
      cache.keys_.push_back(std::move(key));
    }
    cache.rows_.resize(count * dim);
    in.read(reinterpret_cast<char*>(cache.rows_.data()), static_cast<std::streamsize>(cache.rows_.size() * sizeof(float)));
    if (!in) throw corrupt("expected " + std::to_string(count) + " rows of dimension " + std::to_string(dim));
    if (in.peek() != std::char_traits<char>::eof()) throw corrupt("trailing bytes after the last row");
    return cache;
  }

  static EmbeddingCache load_or_create(const std::filesystem::path& path, std::size_t dim) {
    if (!std::filesystem::exists(path)) return EmbeddingCache(dim);
    auto cache = load(path);
    if (cache.dim() != dim)
      throw Error("embedding cache " + path.string() + " has dimension " + std::to_string(cache.dim()) +
                  " but the encoder produces " + std::to_string(dim) + "; delete it to rebuild");
    return cache;
  }

 private:
  static_assert(sizeof(float) == 4, "float32 rows require 4-byte float");

  template <typename T>
  static void write_pod(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
  }

  template <typename T>
  static bool read_pod(std::istream& in, T& v) {
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    return static_cast<bool>(in);
  }

  std::size_t dim_;
  std::vector<std::string> keys_;
  std::map<std::string, std::size_t> index_;
  std::vector<float> rows_;
};

}  // namespace cocobm
