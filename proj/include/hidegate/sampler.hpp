#pragma once

// Query sampling: five fixed query-writer prompts applied round-robin to a
// chat-completions endpoint, with an on-disk response cache, plus the
// pre-generated queries file.

#include <chrono>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "hidegate/textcodec.hpp"

namespace hidegate {

struct ChatMessage {
  std::string role;
  std::string content;
};

struct PromptTemplate {
  int template_id;          // 1..5
  std::string system_text;
  std::string user_wrapper;  // contains kDocumentPlaceholder exactly once
};

inline constexpr std::string_view kDocumentPlaceholder = "{document}";
inline constexpr int kTemplateCount = 5;

const std::vector<PromptTemplate>& query_templates();
const PromptTemplate& query_template(int template_id);

// Prompt used to generate topic documents for cluster analysis. The user
// message is "topic:{topic},seed:{seed}".
const std::string& topic_document_system_prompt();
std::vector<ChatMessage> render_topic_prompt(const std::string& topic, int seed);

std::vector<ChatMessage> render_prompt(const PromptTemplate& tmpl, const std::string& document_text);

// Template used for the i-th sample (0-based): 1,2,3,4,5,1,2,...
int template_for_index(std::size_t index) noexcept;

struct QuerySample {
  int template_id;
  std::size_t index;  // occurrence number of this template for the document
  std::string text;
  TokenSequence tokens;
};

// Samples ordered by (template_id, index).
struct SampleSet {
  std::string doc_id;
  std::vector<QuerySample> samples;

  std::vector<TokenSequence> token_sequences() const;
};

struct EndpointConfig {
  std::string url;    // full chat-completions URL
  std::string model;
  std::string api_key;  // HIDEGATE_API_KEY when empty
  double temperature = 0.7;
  int max_tokens = 64;
  std::size_t max_in_flight = 4;
  int retries = 3;
  std::chrono::milliseconds backoff{500};
  int timeout_seconds = 60;
  std::filesystem::path cache_dir;  // empty disables caching
};

std::string document_hash(const std::string& document_text);

struct SamplingStats {
  std::size_t network_calls = 0;
  std::size_t cache_hits = 0;
  std::size_t duplicates = 0;
};

SampleSet sample_queries_http(const std::string& doc_id, const std::string& document_text,
                              std::size_t n_samples, const EndpointConfig& endpoint,
                              const Tokenizer& tokenizer, SamplingStats* stats = nullptr);

// JSONL {"doc_id", "template_id", "index"?, "text"}. Records lacking
// "index" are numbered by file order within (doc_id, template_id).
std::map<std::string, SampleSet> load_queries_file(const std::filesystem::path& path,
                                                   const Tokenizer& tokenizer);
std::map<std::string, SampleSet> parse_queries(std::string_view jsonl, const std::string& source,
                                               const Tokenizer& tokenizer);
std::string format_queries(const std::vector<SampleSet>& sets);
void write_queries_file(const std::filesystem::path& path, const std::vector<SampleSet>& sets);

}  // namespace hidegate
