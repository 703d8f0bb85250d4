#pragma once

// Victim-side retrieval: embedding records, an exact cosine index and the
// providers that turn texts into vectors.

#include <filesystem>
#include <memory>
#include <span>
#include <unordered_map>
#include <string>
#include <vector>

#include "hidegate/surrogate.hpp"
#include "hidegate/textcodec.hpp"

namespace hidegate {

struct EmbeddingRecord {
  std::string id;
  std::vector<float> vector;
};

struct TextRecord {
  std::string id;
  std::string text;
};

// JSONL {"id", "vector"}; rejects ragged dimensions, duplicate ids and
// zero vectors, naming the offending id.
std::vector<EmbeddingRecord> load_embeddings(const std::filesystem::path& path);
std::vector<EmbeddingRecord> parse_embeddings(std::string_view jsonl, const std::string& source);
void validate_embeddings(std::span<const EmbeddingRecord> records);
void write_embeddings(const std::filesystem::path& path, std::span<const EmbeddingRecord> records);

// JSONL {"id", "text"}.
std::vector<TextRecord> load_texts(const std::filesystem::path& path);
void write_texts(const std::filesystem::path& path, std::span<const TextRecord> records);

struct ScoredId {
  std::string id;
  double score;
};

class CorpusIndex {
 public:
  CorpusIndex() = default;
  explicit CorpusIndex(std::span<const EmbeddingRecord> records);

  std::size_t size() const noexcept { return ids_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  const std::string& id(std::size_t row) const { return ids_[row]; }
  std::span<const float> unit_vector(std::size_t row) const {
    return {data_.data() + row * dim_, dim_};
  }

  // Highest cosine first; equal scores ordered by ascending id.
  std::vector<ScoredId> topk(std::span<const float> query, std::size_t k) const;

 private:
  std::vector<std::string> ids_;
  std::vector<float> data_;
  std::size_t dim_ = 0;
};

CorpusIndex build_index(std::span<const EmbeddingRecord> records);

struct ProviderConfig {
  enum class Kind { file, http, surrogate };
  Kind kind = Kind::file;
  std::filesystem::path path;  // file
  std::string url;             // http: full embeddings endpoint URL
  std::string model;           // http
  std::string api_key;         // http; taken from HIDEGATE_API_KEY when empty
  std::size_t batch_size = 32; // http
  int retries = 3;             // http
  int timeout_seconds = 60;    // http
};

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::vector<EmbeddingRecord> embed(std::span<const TextRecord> items) const = 0;
};

// Looks vectors up by id in a pre-computed embeddings file.
class FileProvider final : public EmbeddingProvider {
 public:
  explicit FileProvider(const std::filesystem::path& path);
  explicit FileProvider(std::vector<EmbeddingRecord> records);
  std::vector<EmbeddingRecord> embed(std::span<const TextRecord> items) const override;

 private:
  std::vector<EmbeddingRecord> records_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

// POST {model, input:[texts]} -> {data:[{index, embedding}]}, batched.
class HttpProvider final : public EmbeddingProvider {
 public:
  explicit HttpProvider(ProviderConfig config);
  std::vector<EmbeddingRecord> embed(std::span<const TextRecord> items) const override;

 private:
  ProviderConfig config_;
};

// Mean of word-embedding rows, fully offline.
class SurrogateProvider final : public EmbeddingProvider {
 public:
  SurrogateProvider(const Tokenizer& tokenizer, const EmbeddingMatrix& matrix)
      : tokenizer_(&tokenizer), matrix_(&matrix) {}
  std::vector<EmbeddingRecord> embed(std::span<const TextRecord> items) const override;

 private:
  const Tokenizer* tokenizer_;
  const EmbeddingMatrix* matrix_;
};

std::unique_ptr<EmbeddingProvider> make_provider(const ProviderConfig& config,
                                                 const Tokenizer* tokenizer = nullptr,
                                                 const EmbeddingMatrix* matrix = nullptr);

std::vector<EmbeddingRecord> embed_via_provider(std::span<const TextRecord> items,
                                                const EmbeddingProvider& provider);

double cosine(std::span<const float> a, std::span<const float> b);

}  // namespace hidegate
