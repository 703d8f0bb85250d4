#include "hidegate/sampler.hpp"

#include <algorithm>
#include <future>
#include <iomanip>
#include <set>
#include <sstream>

#include <openssl/evp.h>

#include "hidegate/error.hpp"
#include "http_client.hpp"
#include "jsonl.hpp"

namespace hidegate {

namespace {

constexpr const char* kQueryWriterPreamble =
    "You are a helpful query writer for information retrieval system. A knowledge document "
    "content is provided followed by the user. ";

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

const std::vector<PromptTemplate>& query_templates() {
  static const std::vector<PromptTemplate> templates = [] {
    const char* tasks[kTemplateCount] = {
        "Please generate a query with content in which the human asker is facing a practical "
        "problem and the document would be helpful to solve the it.",
        "Please generate a query by questioning some factors of the document content.",
        "Please generate a query targeting the document and containing five keywords from the "
        "document.",
        "Please generate a one-sentence summary for this document.",
        "Please generate a query that has similar semantics but contains few overlaps with the "
        "document.",
    };
    std::vector<PromptTemplate> out;
    for (int i = 0; i < kTemplateCount; ++i) {
      out.push_back({i + 1, std::string(kQueryWriterPreamble) + tasks[i],
                     std::string(kDocumentPlaceholder)});
    }
    return out;
  }();
  return templates;
}

const PromptTemplate& query_template(int template_id) {
  if (template_id < 1 || template_id > kTemplateCount) {
    fail(ErrorKind::template_error, "template id must be 1..5, got " + std::to_string(template_id));
  }
  return query_templates()[static_cast<std::size_t>(template_id - 1)];
}

const std::string& topic_document_system_prompt() {
  static const std::string text =
      "You are a helpful assistant. A topic with a random seed is given, please write a "
      "knowledge document within the topic.";
  return text;
}

std::vector<ChatMessage> render_topic_prompt(const std::string& topic, int seed) {
  return {{"system", topic_document_system_prompt()},
          {"user", "topic:" + topic + ",seed:" + std::to_string(seed)}};
}

std::vector<ChatMessage> render_prompt(const PromptTemplate& tmpl, const std::string& document_text) {
  if (document_text.empty()) fail(ErrorKind::empty_input, "document text is empty");
  const auto first = tmpl.user_wrapper.find(kDocumentPlaceholder);
  if (first == std::string::npos ||
      tmpl.user_wrapper.find(kDocumentPlaceholder, first + 1) != std::string::npos) {
    fail(ErrorKind::template_error, "template " + std::to_string(tmpl.template_id) +
                                        " must contain the document placeholder exactly once");
  }
  std::string user = tmpl.user_wrapper;
  user.replace(first, kDocumentPlaceholder.size(), document_text);
  return {{"system", tmpl.system_text}, {"user", user}};
}

int template_for_index(std::size_t index) noexcept {
  return static_cast<int>(index % kTemplateCount) + 1;
}

std::vector<TokenSequence> SampleSet::token_sequences() const {
  std::vector<TokenSequence> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.tokens);
  return out;
}

std::string document_hash(const std::string& document_text) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(document_text.data(), document_text.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    fail(ErrorKind::invariant, "SHA-256 digest failed");
  }
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) {
    hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  }
  return hex.str();
}

namespace {

std::filesystem::path cache_path(const EndpointConfig& endpoint, const std::string& hash,
                                 int template_id, std::size_t index) {
  return endpoint.cache_dir /
         (hash + "_t" + std::to_string(template_id) + "_i" + std::to_string(index) + ".json");
}

bool read_cache(const std::filesystem::path& path, std::string& text) {
  std::error_code ec;
  if (!std::filesystem::exists(path, ec)) return false;
  try {
    const auto j = nlohmann::json::parse(jsonl::read_file(path));
    text = j.at("text").get<std::string>();
    return !text.empty();
  } catch (const nlohmann::json::exception&) {
    return false;  // unreadable entries are refetched and overwritten
  }
}

void write_cache(const std::filesystem::path& path, const std::string& hash, int template_id,
                 std::size_t index, const std::string& text) {
  nlohmann::json j{{"doc_hash", hash}, {"template_id", template_id}, {"index", index}, {"text", text}};
  // Write-then-rename keeps readers from seeing partial files.
  const auto tmp = path.string() + ".tmp";
  jsonl::write_file(tmp, j.dump() + "\n");
  std::filesystem::rename(tmp, path);
}

std::string complete(const EndpointConfig& endpoint, const std::vector<ChatMessage>& messages) {
  nlohmann::json body;
  body["model"] = endpoint.model;
  body["temperature"] = endpoint.temperature;
  body["max_tokens"] = endpoint.max_tokens;
  body["messages"] = nlohmann::json::array();
  for (const auto& m : messages) body["messages"].push_back({{"role", m.role}, {"content", m.content}});

  http::PostOptions options;
  options.api_key = endpoint.api_key.empty() ? http::api_key_from_env() : endpoint.api_key;
  options.retries = endpoint.retries;
  options.backoff = endpoint.backoff;
  options.timeout_seconds = endpoint.timeout_seconds;
  // One extra attempt for empty completions, on top of transport retries.
  for (int attempt = 0; attempt < 2; ++attempt) {
    const auto reply = http::post_json(endpoint.url, body, options);
    std::string text;
    try {
      const auto& content = reply.at("choices").at(0).at("message").at("content");
      if (content.is_string()) text = trim(content.get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::sampling, std::string("malformed chat completion reply: ") + e.what());
    }
    if (!text.empty()) return text;
  }
  fail(ErrorKind::sampling, "endpoint returned an empty completion twice");
}

void sort_samples(SampleSet& set) {
  std::stable_sort(set.samples.begin(), set.samples.end(), [](const QuerySample& a, const QuerySample& b) {
    return a.template_id != b.template_id ? a.template_id < b.template_id : a.index < b.index;
  });
}

}  // namespace

SampleSet sample_queries_http(const std::string& doc_id, const std::string& document_text,
                              std::size_t n_samples, const EndpointConfig& endpoint,
                              const Tokenizer& tokenizer, SamplingStats* stats) {
  if (n_samples < 1) fail(ErrorKind::config, "n_samples must be >= 1");
  if (document_text.empty()) fail(ErrorKind::empty_input, "document '" + doc_id + "' is empty");
  if (!endpoint.cache_dir.empty()) std::filesystem::create_directories(endpoint.cache_dir);
  const std::string hash = document_hash(document_text);

  std::vector<std::string> texts(n_samples);
  std::vector<std::size_t> missing;
  SamplingStats local;
  for (std::size_t i = 0; i < n_samples; ++i) {
    const int t = template_for_index(i);
    if (!endpoint.cache_dir.empty() && read_cache(cache_path(endpoint, hash, t, i), texts[i])) {
      ++local.cache_hits;
    } else {
      missing.push_back(i);
    }
  }

  const std::size_t wave = std::max<std::size_t>(1, endpoint.max_in_flight);
  for (std::size_t begin = 0; begin < missing.size(); begin += wave) {
    const std::size_t end = std::min(missing.size(), begin + wave);
    std::vector<std::future<std::string>> inflight;
    for (std::size_t m = begin; m < end; ++m) {
      const std::size_t i = missing[m];
      inflight.push_back(std::async(std::launch::async, [&, i] {
        return complete(endpoint, render_prompt(query_template(template_for_index(i)), document_text));
      }));
    }
    std::exception_ptr first_error;
    for (std::size_t m = begin; m < end; ++m) {
      try {
        texts[missing[m]] = inflight[m - begin].get();
        ++local.network_calls;
      } catch (...) {
        if (!first_error) first_error = std::current_exception();
      }
    }
    if (first_error) {
      try {
        std::rethrow_exception(first_error);
      } catch (const Error& e) {
        if (e.kind() == ErrorKind::transport) fail(ErrorKind::sampling, e.what());
        throw;
      }
    }
    if (!endpoint.cache_dir.empty()) {
      for (std::size_t m = begin; m < end; ++m) {
        const std::size_t i = missing[m];
        write_cache(cache_path(endpoint, hash, template_for_index(i), i), hash,
                    template_for_index(i), i, texts[i]);
      }
    }
  }

  SampleSet set;
  set.doc_id = doc_id;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < n_samples; ++i) {
    if (!seen.insert(texts[i]).second) ++local.duplicates;
    set.samples.push_back({template_for_index(i), i / kTemplateCount, texts[i], tokenizer.encode(texts[i])});
  }
  sort_samples(set);
  if (stats) *stats = local;
  return set;
}

std::map<std::string, SampleSet> parse_queries(std::string_view text, const std::string& source,
                                               const Tokenizer& tokenizer) {
  std::map<std::string, SampleSet> out;
  std::map<std::pair<std::string, int>, std::size_t> next_index;
  std::set<std::tuple<std::string, int, std::size_t>> seen;
  jsonl::for_each(text, source, [&](std::size_t line, const nlohmann::json& j) {
    const std::string where = source + ":" + std::to_string(line);
    const std::string doc_id = jsonl::string_field(j, "doc_id", where);
    const auto& tid = jsonl::field(j, "template_id", where);
    if (!tid.is_number_integer()) fail(ErrorKind::format, where + ": template_id must be an integer");
    const int template_id = tid.get<int>();
    if (template_id < 1 || template_id > kTemplateCount) {
      fail(ErrorKind::format, where + ": template_id must be 1..5");
    }
    const std::string sample_text = jsonl::string_field(j, "text", where);
    if (sample_text.empty()) fail(ErrorKind::format, where + ": empty query text");

    std::size_t index = next_index[{doc_id, template_id}];
    if (auto it = j.find("index"); it != j.end()) {
      if (!it->is_number_unsigned()) fail(ErrorKind::format, where + ": index must be a non-negative integer");
      index = it->get<std::size_t>();
    }
    next_index[{doc_id, template_id}] = std::max(next_index[{doc_id, template_id}], index + 1);
    if (!seen.insert({doc_id, template_id, index}).second) {
      fail(ErrorKind::format, where + ": duplicate (doc_id, template_id, index) = (" + doc_id + ", " +
                                  std::to_string(template_id) + ", " + std::to_string(index) + ")");
    }
    auto& set = out[doc_id];
    set.doc_id = doc_id;
    set.samples.push_back({template_id, index, sample_text, tokenizer.encode(sample_text)});
  });
  for (auto& [_, set] : out) sort_samples(set);
  return out;
}

std::map<std::string, SampleSet> load_queries_file(const std::filesystem::path& path,
                                                   const Tokenizer& tokenizer) {
  return parse_queries(jsonl::read_file(path), path.string(), tokenizer);
}

std::string format_queries(const std::vector<SampleSet>& sets) {
  std::string out;
  for (const auto& set : sets) {
    for (const auto& s : set.samples) {
      nlohmann::json j{{"doc_id", set.doc_id}, {"template_id", s.template_id}, {"index", s.index}, {"text", s.text}};
      out += j.dump();
      out += '\n';
    }
  }
  return out;
}

void write_queries_file(const std::filesystem::path& path, const std::vector<SampleSet>& sets) {
  jsonl::write_file(path, format_queries(sets));
}

}  // namespace hidegate
