#pragma once

#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "audienceview/error.hpp"
#include "audienceview/matrix.hpp"
#include "audienceview/rng.hpp"
#include "audienceview/text.hpp"

namespace audienceview::topics {

/// Production sentence-embedding model identifier.
inline constexpr const char* kDefaultEmbeddingModel = "all-mpnet-base-v2";

/// Plugin contract: (model_id, texts) -> one row per text.
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::string model_id() const = 0;
  virtual std::size_t max_batch() const { return 256; }
  virtual Matrix embed(std::span<const std::string> texts) = 0;
};

/// Deterministic feature-hashing embedder: each casefolded word adds +/-1 to
/// one of `dim` coordinates chosen by its hash. Texts without word tokens
/// hash as a whole.
class HashEmbedder final : public Embedder {
 public:
  explicit HashEmbedder(std::size_t dim = 32) : dim_(dim) {}

  std::string model_id() const override { return "hash-stub-d" + std::to_string(dim_); }
  std::size_t max_batch() const override { return 4096; }

  Matrix embed(std::span<const std::string> texts) override {
    Matrix out(texts.size(), dim_);
    for (std::size_t i = 0; i < texts.size(); ++i) {
      auto row = out.row(i);
      const auto tokens = text::folded_words(texts[i]);
      for (const auto& w : tokens) add(row, w);
      if (l2_norm(row) == 0.0) add(row, texts[i]);
    }
    return out;
  }

 private:
  void add(std::span<double> row, std::string_view token) const {
    const std::uint64_t h = splitmix64(fnv1a64(token));
    row[h % dim_] += (h >> 63) ? 1.0 : -1.0;
  }

  std::size_t dim_;
};

struct EmbeddingMatrix {
  std::vector<std::string> comment_ids;
  Matrix vectors;
  std::string model_id;
  bool normalized = true;
};

struct IdText {
  std::string id;
  std::string text;
};

/// Embeds comments, computing each distinct text once, and L2-normalises rows.
inline EmbeddingMatrix embed_comments(Embedder& embedder, std::span<const IdText> comments) {
  std::unordered_map<std::string_view, std::size_t> unique_index;
  std::vector<std::string> unique_texts;
  std::vector<std::size_t> row_of(comments.size());
  for (std::size_t i = 0; i < comments.size(); ++i) {
    if (text::is_blank(comments[i].text)) throw ValidationError("cannot embed blank comment " + comments[i].id);
    auto [it, inserted] = unique_index.emplace(comments[i].text, unique_texts.size());
    if (inserted) unique_texts.push_back(comments[i].text);
    row_of[i] = it->second;
  }

  Matrix unique_rows;
  const std::size_t batch = std::max<std::size_t>(1, embedder.max_batch());
  for (std::size_t off = 0; off < unique_texts.size(); off += batch) {
    const std::size_t end = std::min(unique_texts.size(), off + batch);
    Matrix part = embedder.embed(std::span(unique_texts).subspan(off, end - off));
    if (part.rows() != end - off) throw Error("model_unavailable", "embedder returned wrong row count");
    if (off == 0) unique_rows = Matrix(unique_texts.size(), part.cols());
    if (part.cols() != unique_rows.cols()) throw Error("model_unavailable", "embedder changed dimension mid-run");
    for (std::size_t r = 0; r < part.rows(); ++r) {
      auto src = part.row(r);
      std::copy(src.begin(), src.end(), unique_rows.row(off + r).begin());
    }
  }
  for (std::size_t r = 0; r < unique_rows.rows(); ++r) {
    auto row = unique_rows.row(r);
    const double n = l2_norm(row);
    if (n == 0.0) throw Error("model_unavailable", "embedder returned a zero vector for: " + unique_texts[r]);
    for (double& x : row) x /= n;
  }

  EmbeddingMatrix out;
  out.model_id = embedder.model_id();
  out.vectors = Matrix(comments.size(), unique_rows.cols());
  out.comment_ids.reserve(comments.size());
  for (std::size_t i = 0; i < comments.size(); ++i) {
    out.comment_ids.push_back(comments[i].id);
    auto src = unique_rows.row(row_of[i]);
    std::copy(src.begin(), src.end(), out.vectors.row(i).begin());
  }
  return out;
}

}  // namespace audienceview::topics
