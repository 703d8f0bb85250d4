#include "hidegate/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "hidegate/error.hpp"
#include "http_client.hpp"
#include "jsonl.hpp"

namespace hidegate {

namespace {

double norm_of(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

}  // namespace

double cosine(std::span<const float> a, std::span<const float> b) {
  double dot = 0.0;
  for (std::size_t d = 0; d < a.size(); ++d) dot += static_cast<double>(a[d]) * b[d];
  return dot / (norm_of(a) * norm_of(b));
}

void validate_embeddings(std::span<const EmbeddingRecord> records) {
  if (records.empty()) return;
  const std::size_t dim = records.front().vector.size();
  std::unordered_set<std::string> seen;
  for (const auto& r : records) {
    if (r.vector.size() != dim) {
      fail(ErrorKind::dimension_mismatch, "embedding '" + r.id + "' has dimension " +
                                              std::to_string(r.vector.size()) + ", expected " +
                                              std::to_string(dim));
    }
    if (!seen.insert(r.id).second) fail(ErrorKind::duplicate_id, "duplicate embedding id '" + r.id + "'");
    if (norm_of(r.vector) == 0.0) fail(ErrorKind::zero_vector, "embedding '" + r.id + "' is a zero vector");
  }
  if (dim == 0) fail(ErrorKind::dimension_mismatch, "embeddings have dimension 0");
}

std::vector<EmbeddingRecord> parse_embeddings(std::string_view text, const std::string& source) {
  std::vector<EmbeddingRecord> out;
  jsonl::for_each(text, source, [&](std::size_t line, const nlohmann::json& j) {
    const std::string where = source + ":" + std::to_string(line);
    EmbeddingRecord r;
    r.id = jsonl::string_field(j, "id", where);
    const auto& v = jsonl::field(j, "vector", where);
    if (!v.is_array()) fail(ErrorKind::format, where + ": 'vector' must be an array");
    r.vector.reserve(v.size());
    for (const auto& x : v) {
      if (!x.is_number()) fail(ErrorKind::format, where + ": non-numeric vector entry");
      r.vector.push_back(x.get<float>());
    }
    out.push_back(std::move(r));
  });
  validate_embeddings(out);
  return out;
}

std::vector<EmbeddingRecord> load_embeddings(const std::filesystem::path& path) {
  return parse_embeddings(jsonl::read_file(path), path.string());
}

void write_embeddings(const std::filesystem::path& path, std::span<const EmbeddingRecord> records) {
  std::string out;
  for (const auto& r : records) {
    out += nlohmann::json{{"id", r.id}, {"vector", r.vector}}.dump();
    out += '\n';
  }
  jsonl::write_file(path, out);
}

std::vector<TextRecord> load_texts(const std::filesystem::path& path) {
  std::vector<TextRecord> out;
  const std::string source = path.string();
  jsonl::for_each(jsonl::read_file(path), source, [&](std::size_t line, const nlohmann::json& j) {
    const std::string where = source + ":" + std::to_string(line);
    out.push_back({jsonl::string_field(j, "id", where), jsonl::string_field(j, "text", where)});
  });
  return out;
}

void write_texts(const std::filesystem::path& path, std::span<const TextRecord> records) {
  std::string out;
  for (const auto& r : records) {
    out += nlohmann::json{{"id", r.id}, {"text", r.text}}.dump();
    out += '\n';
  }
  jsonl::write_file(path, out);
}

CorpusIndex::CorpusIndex(std::span<const EmbeddingRecord> records) {
  validate_embeddings(records);
  if (records.empty()) return;
  dim_ = records.front().vector.size();
  ids_.reserve(records.size());
  data_.reserve(records.size() * dim_);
  for (const auto& r : records) {
    ids_.push_back(r.id);
    const double n = norm_of(r.vector);
    for (float x : r.vector) data_.push_back(static_cast<float>(x / n));
  }
}

std::vector<ScoredId> CorpusIndex::topk(std::span<const float> query, std::size_t k) const {
  if (k < 1) fail(ErrorKind::config, "k must be >= 1");
  if (query.size() != dim_) {
    fail(ErrorKind::dimension_mismatch, "query dimension " + std::to_string(query.size()) +
                                            " does not match index dimension " + std::to_string(dim_));
  }
  const double qn = norm_of(query);
  if (qn == 0.0) fail(ErrorKind::zero_vector, "query vector is zero");
  std::vector<double> unit(dim_);
  for (std::size_t d = 0; d < dim_; ++d) unit[d] = query[d] / qn;

  std::vector<double> scores(size());
  for (std::size_t r = 0; r < size(); ++r) {
    const auto row = unit_vector(r);
    double s = 0.0;
    for (std::size_t d = 0; d < dim_; ++d) s += static_cast<double>(row[d]) * unit[d];
    scores[r] = s;
  }
  std::vector<std::size_t> order(size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t take = std::min(k, order.size());
  auto better = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return ids_[a] < ids_[b];
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                    better);
  std::vector<ScoredId> out;
  out.reserve(take);
  for (std::size_t r = 0; r < take; ++r) out.push_back({ids_[order[r]], scores[order[r]]});
  return out;
}

CorpusIndex build_index(std::span<const EmbeddingRecord> records) { return CorpusIndex(records); }

FileProvider::FileProvider(const std::filesystem::path& path)
    : FileProvider(load_embeddings(path)) {}

FileProvider::FileProvider(std::vector<EmbeddingRecord> records) : records_(std::move(records)) {
  validate_embeddings(records_);
  for (std::size_t i = 0; i < records_.size(); ++i) by_id_.emplace(records_[i].id, i);
}

std::vector<EmbeddingRecord> FileProvider::embed(std::span<const TextRecord> items) const {
  std::vector<EmbeddingRecord> out;
  out.reserve(items.size());
  for (const auto& item : items) {
    auto it = by_id_.find(item.id);
    if (it == by_id_.end()) fail(ErrorKind::unknown_id, "no embedding for id '" + item.id + "'");
    out.push_back(records_[it->second]);
  }
  return out;
}

HttpProvider::HttpProvider(ProviderConfig config) : config_(std::move(config)) {
  if (config_.url.empty()) fail(ErrorKind::config, "http provider needs a URL");
  if (config_.api_key.empty()) config_.api_key = http::api_key_from_env();
  if (config_.batch_size == 0) fail(ErrorKind::config, "batch size must be >= 1");
}

std::vector<EmbeddingRecord> HttpProvider::embed(std::span<const TextRecord> items) const {
  std::vector<EmbeddingRecord> out;
  out.reserve(items.size());
  http::PostOptions options;
  options.api_key = config_.api_key;
  options.retries = config_.retries;
  options.timeout_seconds = config_.timeout_seconds;
  for (std::size_t begin = 0; begin < items.size(); begin += config_.batch_size) {
    const std::size_t end = std::min(items.size(), begin + config_.batch_size);
    nlohmann::json body;
    body["model"] = config_.model;
    body["input"] = nlohmann::json::array();
    for (std::size_t i = begin; i < end; ++i) body["input"].push_back(items[i].text);
    const auto reply = http::post_json(config_.url, body, options);

    const auto data = reply.find("data");
    if (data == reply.end() || !data->is_array() || data->size() != end - begin) {
      fail(ErrorKind::transport, "embeddings reply lacks one 'data' entry per input");
    }
    std::vector<std::vector<float>> batch(end - begin);
    std::vector<bool> filled(end - begin, false);
    for (const auto& entry : *data) {
      if (!entry.contains("index") || !entry.contains("embedding") ||
          !entry["index"].is_number_integer() || !entry["embedding"].is_array()) {
        fail(ErrorKind::transport, "malformed embeddings reply entry");
      }
      const auto idx = entry["index"].get<long long>();
      if (idx < 0 || static_cast<std::size_t>(idx) >= batch.size() || filled[idx]) {
        fail(ErrorKind::transport, "embeddings reply has a bad or repeated index");
      }
      filled[idx] = true;
      batch[idx] = entry["embedding"].get<std::vector<float>>();
    }
    for (std::size_t i = begin; i < end; ++i) {
      out.push_back({items[i].id, std::move(batch[i - begin])});
    }
  }
  validate_embeddings(out);
  return out;
}

std::vector<EmbeddingRecord> SurrogateProvider::embed(std::span<const TextRecord> items) const {
  std::vector<EmbeddingRecord> out;
  out.reserve(items.size());
  for (const auto& item : items) {
    out.push_back({item.id, mean_pool(tokenizer_->encode(item.text), *matrix_)});
  }
  return out;
}

std::unique_ptr<EmbeddingProvider> make_provider(const ProviderConfig& config,
                                                 const Tokenizer* tokenizer,
                                                 const EmbeddingMatrix* matrix) {
  switch (config.kind) {
    case ProviderConfig::Kind::file:
      return std::make_unique<FileProvider>(config.path);
    case ProviderConfig::Kind::http:
      return std::make_unique<HttpProvider>(config);
    case ProviderConfig::Kind::surrogate:
      if (!tokenizer || !matrix) {
        fail(ErrorKind::config, "surrogate provider needs tokenizer assets and an embedding matrix");
      }
      return std::make_unique<SurrogateProvider>(*tokenizer, *matrix);
  }
  fail(ErrorKind::config, "unknown provider kind");
}

std::vector<EmbeddingRecord> embed_via_provider(std::span<const TextRecord> items,
                                                const EmbeddingProvider& provider) {
  return provider.embed(items);
}

}  // namespace hidegate
