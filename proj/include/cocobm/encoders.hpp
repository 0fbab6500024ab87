#pragma once
// Vision-language encoder interfaces and the deterministic synthetic
// implementations used for offline runs and tests.

#include "cocobm/core.hpp"

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cocobm {

enum class TokenKind { fixed, learnable };

// Token embeddings (rows) with per-position provenance. Learnable positions
// form a contiguous prefix.
struct TokenSequence {
  Matrix embeddings;
  std::vector<TokenKind> kinds;

  std::size_t size() const { return kinds.size(); }

  std::size_t num_learnable() const {
    std::size_t n = 0;
    while (n < kinds.size() && kinds[n] == TokenKind::learnable) ++n;
    return n;
  }

  void validate() const {
    if (kinds.empty()) throw Error("token sequence must have at least one position");
    if (static_cast<std::size_t>(embeddings.rows()) != kinds.size())
      throw Error("token sequence: embedding rows do not match provenance flags");
    for (std::size_t i = num_learnable(); i < kinds.size(); ++i)
      if (kinds[i] == TokenKind::learnable) throw Error("token sequence: learnable positions must be a prefix");
  }

  friend bool operator==(const TokenSequence& a, const TokenSequence& b) {
    return a.kinds == b.kinds && a.embeddings.rows() == b.embeddings.rows() &&
           a.embeddings.cols() == b.embeddings.cols() && a.embeddings == b.embeddings;
  }
};

inline TokenSequence concat(const TokenSequence& a, const TokenSequence& b) {
  TokenSequence out;
  out.embeddings.resize(a.embeddings.rows() + b.embeddings.rows(),
                        a.size() ? a.embeddings.cols() : b.embeddings.cols());
  if (a.size()) out.embeddings.topRows(a.embeddings.rows()) = a.embeddings;
  if (b.size()) out.embeddings.bottomRows(b.embeddings.rows()) = b.embeddings;
  out.kinds = a.kinds;
  out.kinds.insert(out.kinds.end(), b.kinds.begin(), b.kinds.end());
  return out;
}

// Text side of the encoder pair. encode() must be differentiable in the
// token embeddings; backward() returns d(loss)/d(token embeddings) given
// d(loss)/d(output).
class TextEncoder {
 public:
  virtual ~TextEncoder() = default;

  virtual std::size_t dim() const = 0;
  virtual std::size_t token_dim() const = 0;
  virtual TokenSequence tokenize(std::string_view text) const = 0;
  virtual Vector encode(const TokenSequence& seq) const = 0;
  virtual Matrix backward(const TokenSequence& seq, const Vector& grad_output) const = 0;

  Vector encode_text(std::string_view text) const { return encode(tokenize(text)); }
};

// A reference to one image: a file on disk, or a precomputed feature.
struct ImageRef {
  std::string id;
  std::filesystem::path path;
  std::optional<Vector> feature;
};

class ImageEncoder {
 public:
  virtual ~ImageEncoder() = default;
  virtual std::size_t dim() const = 0;
  virtual Vector encode(const ImageRef& image) const = 0;
};

inline std::vector<std::string> word_tokens(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

struct SyntheticTextConfig {
  std::size_t dim = 64;
  std::size_t token_dim = 64;
  std::uint64_t seed = 0;
  // Norm of a direction shared by every token embedding. It gives unrelated
  // texts a positive cosine baseline, as contrastive encoders do.
  double token_offset = 0.35;
  // Multiplies every fixed token embedding. Condition tokens start near zero
  // and move by optimizer-sized steps, so a larger scale keeps them a small
  // perturbation of the prompt.
  double token_scale = 1.0;
};

// Word-level tokenizer with a hash-keyed random embedding table; encoding is
// normalize(P * mean(tokens)) for a fixed seeded projection P.
class SyntheticTextEncoder final : public TextEncoder {
 public:
  explicit SyntheticTextEncoder(SyntheticTextConfig cfg = {}) : cfg_(cfg) {
    if (cfg_.dim == 0 || cfg_.token_dim == 0) throw Error("synthetic text encoder: dimensions must be positive");
    if (!(cfg_.token_scale > 0.0)) throw Error("synthetic text encoder: token_scale must be positive");
    Rng rng = make_rng(cfg_.seed, "text/projection");
    Gaussian g(rng);
    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg_.token_dim));
    projection_.resize(cfg_.dim, cfg_.token_dim);
    for (Eigen::Index r = 0; r < projection_.rows(); ++r)
      for (Eigen::Index c = 0; c < projection_.cols(); ++c) projection_(r, c) = g() * scale;
    Rng orng = make_rng(cfg_.seed, "text/offset");
    Gaussian og(orng);
    offset_.resize(cfg_.token_dim);
    for (auto& v : offset_) v = og();
    if (cfg_.token_offset > 0.0)
      offset_ = offset_.normalized() * cfg_.token_offset;
    else
      offset_.setZero();
  }

  std::size_t dim() const override { return cfg_.dim; }
  std::size_t token_dim() const override { return cfg_.token_dim; }
  const SyntheticTextConfig& config() const { return cfg_; }
  const Matrix& projection() const { return projection_; }

  Vector token_embedding(std::string_view word) const {
    Rng rng(substream_seed(cfg_.seed, std::string("text/token/") + std::string(word)));
    Gaussian g(rng);
    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg_.token_dim));
    Vector v(cfg_.token_dim);
    for (auto& x : v) x = g() * scale;
    return cfg_.token_scale * (v + offset_);
  }

  TokenSequence tokenize(std::string_view text) const override {
    auto words = word_tokens(text);
    if (words.empty()) throw Error("tokenize: text '" + std::string(text) + "' has no tokens");
    TokenSequence seq;
    seq.embeddings.resize(static_cast<Eigen::Index>(words.size()), static_cast<Eigen::Index>(cfg_.token_dim));
    for (std::size_t i = 0; i < words.size(); ++i)
      seq.embeddings.row(static_cast<Eigen::Index>(i)) = token_embedding(words[i]).transpose();
    seq.kinds.assign(words.size(), TokenKind::fixed);
    return seq;
  }

  Vector encode(const TokenSequence& seq) const override {
    check(seq);
    Vector mean = seq.embeddings.colwise().mean().transpose();
    return normalized(projection_ * mean);
  }

  Matrix backward(const TokenSequence& seq, const Vector& grad_output) const override {
    check(seq);
    Vector mean = seq.embeddings.colwise().mean().transpose();
    Vector u = projection_ * mean;
    double norm = u.norm();
    Vector y = u / norm;
    Vector grad_u = (grad_output - y * y.dot(grad_output)) / norm;
    Vector grad_mean = projection_.transpose() * grad_u;
    Matrix grad(seq.embeddings.rows(), seq.embeddings.cols());
    grad.rowwise() = (grad_mean / static_cast<double>(seq.size())).transpose();
    return grad;
  }

 private:
  void check(const TokenSequence& seq) const {
    seq.validate();
    if (static_cast<std::size_t>(seq.embeddings.cols()) != cfg_.token_dim)
      throw Error("token sequence width does not match encoder token dimension");
  }

  SyntheticTextConfig cfg_;
  Matrix projection_;
  Vector offset_;
};

// Reads a feature vector from a whitespace-separated text file.
inline Vector read_feature_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read image " + path.string());
  std::vector<double> values;
  double v;
  while (in >> v) values.push_back(v);
  if (!in.eof() || values.empty()) throw Error("cannot read image " + path.string() + ": not a feature file");
  return Eigen::Map<Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

// Synthetic image side: images are precomputed features (inline or in a
// feature file); encoding unit-normalizes them.
class FeatureImageEncoder final : public ImageEncoder {
 public:
  explicit FeatureImageEncoder(std::size_t dim) : dim_(dim) {}

  std::size_t dim() const override { return dim_; }

  Vector encode(const ImageRef& image) const override {
    Vector f = image.feature ? *image.feature : read_feature_file(image.path);
    if (static_cast<std::size_t>(f.size()) != dim_)
      throw Error("image " + (image.path.empty() ? image.id : image.path.string()) + " has dimension " +
                  std::to_string(f.size()) + ", expected " + std::to_string(dim_));
    if (!f.allFinite()) throw Error("image " + image.id + " has non-finite features");
    return normalized(f);
  }

 private:
  std::size_t dim_;
};

}  // namespace cocobm
