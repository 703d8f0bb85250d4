#include "hidegate/cli.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "hidegate/dqa.hpp"
#include "hidegate/metrics.hpp"
#include "hidegate/parallel.hpp"
#include "hidegate/retrieval.hpp"
#include "hidegate/sampler.hpp"
#include "jsonl.hpp"

namespace hidegate::cli {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::mutex g_log_mutex;

void log(const std::string& message) {
  std::lock_guard lock(g_log_mutex);
  std::cerr << "[hidegate] " << message << '\n';
}

std::string file_sha256(const fs::path& path) { return document_hash(jsonl::read_file(path)); }

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t mix_seed(std::uint64_t seed, std::string_view doc_id) {
  std::uint64_t x = seed ^ fnv1a(doc_id);
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::string path_at(const json& config, const char* section, const char* key) {
  return config.at(section).at(key).get<std::string>();
}

fs::path require_file(const json& config, const char* section, const char* key) {
  const std::string p = path_at(config, section, key);
  if (p.empty()) fail(ErrorKind::config, std::string(section) + "." + key + " is required");
  if (!fs::is_regular_file(p)) {
    fail(ErrorKind::config, std::string(section) + "." + key + ": no such file '" + p + "'");
  }
  return p;
}

std::optional<fs::path> optional_file(const json& config, const char* section, const char* key) {
  const std::string p = path_at(config, section, key);
  if (p.empty()) return std::nullopt;
  if (!fs::is_regular_file(p)) {
    fail(ErrorKind::config, std::string(section) + "." + key + ": no such file '" + p + "'");
  }
  return fs::path(p);
}

fs::path out_dir(const json& config) {
  fs::path dir = config.at("out_dir").get<std::string>();
  if (dir.empty()) fail(ErrorKind::config, "out_dir is required");
  fs::create_directories(dir);
  return dir;
}

struct Assets {
  std::optional<Tokenizer> tokenizer;
  EmbeddingMatrix matrix;
  json hashes = json::object();
};

Assets load_surrogate_assets(const json& config) {
  const auto vocab = require_file(config, "assets", "vocab");
  const auto merges = require_file(config, "assets", "merges");
  const auto wemb = require_file(config, "assets", "embeddings");
  Assets a;
  auto [v, m] = load_assets(vocab, merges);
  a.tokenizer.emplace(std::move(v), std::move(m),
                      pretokenizer_from_string(config.at("assets").at("pretokenizer").get<std::string>()));
  a.matrix = EmbeddingMatrix::read_wemb(wemb);
  if (a.matrix.vocab_size() != a.tokenizer->vocab().size()) {
    fail(ErrorKind::asset_consistency,
         "embedding matrix has " + std::to_string(a.matrix.vocab_size()) + " rows but vocabulary has " +
             std::to_string(a.tokenizer->vocab().size()) + " pieces");
  }
  a.matrix.restrict_to_printable(a.tokenizer->vocab());
  a.hashes[vocab.string()] = file_sha256(vocab);
  a.hashes[merges.string()] = file_sha256(merges);
  a.hashes[wemb.string()] = file_sha256(wemb);
  return a;
}

EndpointConfig endpoint_from(const json& config) {
  const auto& s = config.at("sampler");
  EndpointConfig e;
  e.url = s.at("url").get<std::string>();
  e.model = s.at("model").get<std::string>();
  e.temperature = s.at("temperature").get<double>();
  e.max_tokens = s.at("max_tokens").get<int>();
  e.max_in_flight = s.at("max_in_flight").get<std::size_t>();
  e.retries = s.at("retries").get<int>();
  e.backoff = std::chrono::milliseconds(s.at("backoff_ms").get<int>());
  e.timeout_seconds = s.at("timeout_seconds").get<int>();
  e.cache_dir = s.at("cache_dir").get<std::string>();
  if (e.url.empty()) fail(ErrorKind::config, "sampler.url (--sampler-url) is required for sampling");
  if (e.max_in_flight == 0) fail(ErrorKind::config, "sampler.max_in_flight must be >= 1");
  return e;
}

json base_manifest(const std::string& command, const json& config) {
  json m;
  m["command"] = command;
  m["version"] = kVersion;
  m["config"] = config;
  m["config_hash"] = document_hash(config.dump());
  m["seed"] = config.at("seed");
  m["inputs"] = json::object();
  return m;
}

void write_manifest(const fs::path& dir, const json& manifest) {
  jsonl::write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

void record_input(json& manifest, const fs::path& p) {
  manifest["inputs"][p.string()] = file_sha256(p);
}

std::vector<TextRecord> select_docs(const std::vector<TextRecord>& corpus, const json& ids) {
  if (ids.empty()) return corpus;
  std::map<std::string, const TextRecord*> by_id;
  for (const auto& r : corpus) by_id[r.id] = &r;
  std::vector<TextRecord> out;
  for (const auto& id : ids) {
    auto it = by_id.find(id.get<std::string>());
    if (it == by_id.end()) fail(ErrorKind::config, "doc id '" + id.get<std::string>() + "' is not in the corpus");
    out.push_back(*it->second);
  }
  return out;
}

// Samples in round-robin order (index-major), truncated to n.
std::vector<TokenSequence> first_samples(const SampleSet& set, std::size_t n) {
  std::vector<const QuerySample*> order;
  for (const auto& s : set.samples) order.push_back(&s);
  std::stable_sort(order.begin(), order.end(), [](const QuerySample* a, const QuerySample* b) {
    return a->index != b->index ? a->index < b->index : a->template_id < b->template_id;
  });
  if (order.size() < n) {
    fail(ErrorKind::config, "document '" + set.doc_id + "' has " + std::to_string(order.size()) +
                                " query samples, " + std::to_string(n) + " required");
  }
  std::vector<TokenSequence> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(order[i]->tokens);
  return out;
}

json parse_scalar(const json& like, const std::string& value, const std::string& key) {
  auto bad = [&]() -> json {
    fail(ErrorKind::config, "invalid value '" + value + "' for --" + key);
  };
  if (like.is_boolean()) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    return bad();
  }
  if (like.is_number_integer()) {
    long long v = 0;
    auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    if (ec != std::errc() || p != value.data() + value.size()) return bad();
    if (like.is_number_unsigned() && v < 0) return bad();
    return v;
  }
  if (like.is_number() || like.is_null()) {
    if (like.is_null() && value == "null") return nullptr;
    try {
      std::size_t used = 0;
      double v = std::stod(value, &used);
      if (used != value.size()) return bad();
      return v;
    } catch (const std::exception&) {
      return bad();
    }
  }
  return value;
}

bool same_kind(const json& like, const json& value) {
  if (like.is_null()) return value.is_null() || value.is_number();
  if (like.is_number_integer()) {
    return value.is_number_integer() && (!like.is_number_unsigned() || value.get<long long>() >= 0);
  }
  if (like.is_number()) return value.is_number();
  if (like.is_boolean()) return value.is_boolean();
  if (like.is_string()) return value.is_string();
  if (like.is_array()) return value.is_array();
  if (like.is_object()) return value.is_object();
  return false;
}

}  // namespace

int exit_code_for(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::transport:
    case ErrorKind::sampling:
      return exit_external;
    case ErrorKind::invariant:
      return exit_internal;
    default:
      return exit_config;
  }
}

json default_config() {
  return json::parse(R"({
    "seed": 0,
    "threads": 0,
    "out_dir": "out",
    "assets": {"vocab": "", "merges": "", "embeddings": "", "pretokenizer": "none"},
    "sampler": {"url": "", "model": "", "temperature": 0.7, "max_tokens": 64,
                "max_in_flight": 4, "retries": 3, "backoff_ms": 500,
                "timeout_seconds": 60, "cache_dir": ""},
    "victim": {"kind": "file", "url": "", "model": "", "batch_size": 32},
    "sample": {"corpus": "", "doc_ids": [], "n_samples": 10, "output": "queries.jsonl"},
    "attack": {"corpus": "", "queries": "", "doc_ids": [], "m": 10, "n_samples": 10,
               "rounds": 40, "doc_steps_per_round": 1, "query_steps_per_round": 1,
               "mode": "dqa", "scoring": "exact", "topk_candidates": 256,
               "batch_samples": 64, "epsilon_g": null, "init_piece": "*"},
    "evaluate": {"qrels": "", "query_embeddings": "", "corpus_embeddings": "",
                 "perturbed_embeddings": "", "queries": "", "corpus": "",
                 "perturbed_corpus": "", "attack_results": "", "cutoffs": [25, 50]},
    "analyze": {"embeddings": "", "sim_kind": "pooled", "epsilons": [0.0, 0.1, 0.2, 0.3]}
  })");
}

void merge_config(json& base, const json& overlay, const std::string& prefix) {
  if (!overlay.is_object()) fail(ErrorKind::config, "config " + (prefix.empty() ? "root" : prefix) + " must be an object");
  for (const auto& [key, value] : overlay.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    auto it = base.find(key);
    if (it == base.end()) fail(ErrorKind::config, "unknown config key '" + path + "'");
    if (!same_kind(*it, value)) fail(ErrorKind::config, "config key '" + path + "' has the wrong type");
    if (it->is_object()) {
      merge_config(*it, value, path);
    } else {
      *it = value;
    }
  }
}

void apply_override(json& config, const std::string& dotted, const std::string& value) {
  json* node = &config;
  std::string path;
  std::size_t start = 0;
  while (true) {
    const auto dot = dotted.find('.', start);
    const std::string key = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    path = path.empty() ? key : path + "." + key;
    if (!node->is_object() || !node->contains(key)) fail(ErrorKind::config, "unknown option --" + dotted);
    node = &(*node)[key];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (node->is_object()) fail(ErrorKind::config, "--" + dotted + " names a section, not a value");
  if (node->is_array()) {
    if (!value.empty() && value.front() == '[') {
      try {
        *node = json::parse(value);
      } catch (const json::parse_error&) {
        fail(ErrorKind::config, "invalid JSON array for --" + dotted);
      }
      return;
    }
    const json like = node->empty() ? json("") : node->front();
    json arr = json::array();
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (!item.empty()) arr.push_back(parse_scalar(like, item, dotted));
    }
    *node = arr;
    return;
  }
  *node = parse_scalar(*node, value, dotted);
}

void cmd_sample(const json& config) {
  const auto corpus_path = require_file(config, "sample", "corpus");
  if (path_at(config, "assets", "vocab").empty()) fail(ErrorKind::config, "assets.vocab is required");
  const fs::path dir = out_dir(config);
  const EndpointConfig endpoint = endpoint_from(config);
  const std::size_t n = config.at("sample").at("n_samples").get<std::size_t>();
  if (n < 1) fail(ErrorKind::config, "sample.n_samples must be >= 1");

  Assets assets = load_surrogate_assets(config);
  const auto docs = select_docs(load_texts(corpus_path), config.at("sample").at("doc_ids"));
  json manifest = base_manifest("sample", config);
  manifest["assets"] = assets.hashes;
  record_input(manifest, corpus_path);
  manifest["sampling"] = {{"temperature", endpoint.temperature},
                          {"max_tokens", endpoint.max_tokens},
                          {"template_order", "round-robin 1..5"}};

  const fs::path output = dir / config.at("sample").at("output").get<std::string>();
  const fs::path partial = output.string() + ".partial";
  std::vector<SampleSet> sets;
  std::size_t duplicates = 0, calls = 0, hits = 0;
  for (const auto& doc : docs) {
    try {
      SamplingStats stats;
      sets.push_back(sample_queries_http(doc.id, doc.text, n, endpoint, *assets.tokenizer, &stats));
      duplicates += stats.duplicates;
      calls += stats.network_calls;
      hits += stats.cache_hits;
      if (stats.duplicates > 0) log("doc " + doc.id + ": " + std::to_string(stats.duplicates) + " duplicate samples kept");
    } catch (const Error& e) {
      write_queries_file(partial, sets);
      log("sampling failed for doc " + doc.id + "; partial output in " + partial.string());
      throw;
    }
  }
  write_queries_file(output, sets);
  std::error_code ec;
  fs::remove(partial, ec);
  manifest["outputs"] = {output.string()};
  manifest["stats"] = {{"documents", sets.size()}, {"duplicates", duplicates}};
  write_manifest(dir, manifest);
  log("wrote " + std::to_string(sets.size() * n) + " samples (" + std::to_string(calls) +
      " requests, " + std::to_string(hits) + " cache hits) to " + output.string());
}

void cmd_attack(const json& config) {
  const auto& a = config.at("attack");
  const auto corpus_path = require_file(config, "attack", "corpus");
  const auto queries_path = optional_file(config, "attack", "queries");
  const fs::path dir = out_dir(config);

  AttackConfig ac;
  ac.m = a.at("m").get<std::size_t>();
  ac.n_samples = a.at("n_samples").get<std::size_t>();
  ac.rounds = a.at("rounds").get<std::size_t>();
  ac.doc_steps_per_round = a.at("doc_steps_per_round").get<std::size_t>();
  ac.query_steps_per_round = a.at("query_steps_per_round").get<std::size_t>();
  ac.mode = attack_mode_from_string(a.at("mode").get<std::string>());
  ac.gcg.mode = scoring_mode_from_string(a.at("scoring").get<std::string>());
  ac.gcg.topk_candidates = a.at("topk_candidates").get<std::size_t>();
  ac.gcg.batch_samples = a.at("batch_samples").get<std::size_t>();
  if (!a.at("epsilon_g").is_null()) ac.epsilon_g = a.at("epsilon_g").get<double>();
  ac.init_piece = a.at("init_piece").get<std::string>();
  ac.validate();

  Assets assets = load_surrogate_assets(config);
  const auto corpus = load_texts(corpus_path);
  json manifest = base_manifest("attack", config);
  manifest["assets"] = assets.hashes;
  record_input(manifest, corpus_path);
  manifest["tokenizer"] = {{"scheme", "byte-level BPE, GPT-2 byte map"},
                           {"merge_order", "lowest rank first, leftmost occurrence first"},
                           {"pretokenizer", to_string(assets.tokenizer->pretokenizer())}};
  manifest["surrogate"] = {{"similarity", "mean cosine over all token pairs"},
                           {"token_filter", "none (punctuation and stop tokens included)"},
                           {"eligible_tokens", assets.matrix.eligible_count()}};

  std::map<std::string, SampleSet> samples;
  if (queries_path) {
    samples = load_queries_file(*queries_path, *assets.tokenizer);
    record_input(manifest, *queries_path);
  }
  std::vector<TextRecord> docs;
  if (!a.at("doc_ids").empty()) {
    docs = select_docs(corpus, a.at("doc_ids"));
  } else if (queries_path) {
    for (const auto& d : corpus) {
      if (samples.count(d.id)) docs.push_back(d);
    }
  } else {
    docs = corpus;
  }
  if (docs.empty()) fail(ErrorKind::config, "no documents to attack");
  if (!queries_path) {
    const EndpointConfig endpoint = endpoint_from(config);
    for (const auto& d : docs) {
      samples[d.id] = sample_queries_http(d.id, d.text, ac.n_samples, endpoint, *assets.tokenizer);
    }
  }

  const std::uint64_t seed = config.at("seed").get<std::uint64_t>();
  std::vector<std::optional<AttackResult>> results(docs.size());
  std::vector<std::string> errors(docs.size());
  std::vector<int> codes(docs.size(), exit_ok);
  parallel_for(docs.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto& doc = docs[i];
      try {
        auto it = samples.find(doc.id);
        if (it == samples.end()) fail(ErrorKind::config, "no query samples for doc '" + doc.id + "'");
        AttackConfig doc_config = ac;
        doc_config.rng_seed = mix_seed(seed, doc.id);
        results[i] = run_attack(doc.id, assets.tokenizer->encode(doc.text),
                                first_samples(it->second, ac.n_samples), doc_config,
                                *assets.tokenizer, assets.matrix);
        log("doc " + doc.id + ": L_d " + std::to_string(results[i]->initial_loss_d) + " -> " +
            std::to_string(results[i]->loss_trace_d.back()) + " after " +
            std::to_string(results[i]->rounds_run) + " rounds");
      } catch (const Error& e) {
        errors[i] = std::string(to_string(e.kind())) + ": " + e.what();
        codes[i] = exit_code_for(e.kind());
        log("doc " + doc.id + " failed: " + errors[i]);
      }
    }
  });

  std::string results_text, perturbed_text;
  json failures = json::array();
  std::size_t ok = 0;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    if (!results[i]) {
      failures.push_back({{"doc_id", docs[i].id}, {"error", errors[i]}});
      continue;
    }
    ++ok;
    results_text += to_json_line(*results[i]) + "\n";
    // Byte-level tokens decode to raw bytes, so the suffix appends exactly.
    perturbed_text += json{{"id", docs[i].id}, {"text", docs[i].text + results[i]->injected_text}}.dump() + "\n";
  }
  jsonl::write_file(dir / "attack_results.jsonl", results_text);
  jsonl::write_file(dir / "perturbed_corpus.jsonl", perturbed_text);
  manifest["outputs"] = {(dir / "attack_results.jsonl").string(), (dir / "perturbed_corpus.jsonl").string()};
  manifest["failures"] = failures;
  manifest["within_topic_minimum"] = "estimated from the sampled queries";
  write_manifest(dir, manifest);
  log("attacked " + std::to_string(ok) + "/" + std::to_string(docs.size()) + " documents");
  if (ok == 0) {
    const int worst = *std::max_element(codes.begin(), codes.end());
    fail(worst == exit_external ? ErrorKind::sampling
                                : worst == exit_internal ? ErrorKind::invariant : ErrorKind::config,
         "every document failed");
  }
}

void cmd_evaluate(const json& config) {
  const auto& e = config.at("evaluate");
  const auto qrels_path = require_file(config, "evaluate", "qrels");
  const fs::path dir = out_dir(config);
  std::vector<std::size_t> cutoffs = e.at("cutoffs").get<std::vector<std::size_t>>();
  if (cutoffs.empty() || std::count(cutoffs.begin(), cutoffs.end(), 0u) > 0) {
    fail(ErrorKind::config, "evaluate.cutoffs must be non-empty positive integers");
  }
  json manifest = base_manifest("evaluate", config);
  record_input(manifest, qrels_path);

  const std::string victim_kind = config.at("victim").at("kind").get<std::string>();
  std::unique_ptr<EmbeddingProvider> provider;
  std::optional<Assets> assets;
  if (victim_kind == "http") {
    ProviderConfig pc;
    pc.kind = ProviderConfig::Kind::http;
    pc.url = config.at("victim").at("url").get<std::string>();
    pc.model = config.at("victim").at("model").get<std::string>();
    pc.batch_size = config.at("victim").at("batch_size").get<std::size_t>();
    provider = make_provider(pc);
  } else if (victim_kind == "surrogate") {
    assets = load_surrogate_assets(config);
    provider = std::make_unique<SurrogateProvider>(*assets->tokenizer, assets->matrix);
    manifest["victim_pooling"] = "unweighted mean of word-embedding rows";
  } else if (victim_kind != "file") {
    fail(ErrorKind::config, "victim.kind must be file, http or surrogate");
  }

  // Vectors come from an embeddings file, or from texts run through the
  // configured victim provider.
  auto vectors = [&](const char* emb_key, const char* text_key, bool required) {
    if (auto p = optional_file(config, "evaluate", emb_key)) {
      record_input(manifest, *p);
      return load_embeddings(*p);
    }
    if (auto p = optional_file(config, "evaluate", text_key)) {
      if (!provider) fail(ErrorKind::config, std::string("evaluate.") + text_key + " needs victim.kind http or surrogate");
      record_input(manifest, *p);
      const auto texts = load_texts(*p);
      return embed_via_provider(texts, *provider);
    }
    if (required) {
      fail(ErrorKind::config, std::string("evaluate.") + emb_key + " or evaluate." + text_key + " is required");
    }
    return std::vector<EmbeddingRecord>{};
  };
  const auto queries = vectors("query_embeddings", "queries", true);
  const auto corpus = vectors("corpus_embeddings", "corpus", true);
  const auto perturbed = vectors("perturbed_embeddings", "perturbed_corpus", true);

  std::set<std::string> corpus_ids;
  for (const auto& r : corpus) corpus_ids.insert(r.id);
  std::map<std::string, const EmbeddingRecord*> replacement;
  for (const auto& r : perturbed) {
    if (!corpus_ids.count(r.id)) fail(ErrorKind::unknown_id, "perturbed document '" + r.id + "' is not in the corpus");
    replacement[r.id] = &r;
  }
  if (auto p = optional_file(config, "evaluate", "attack_results")) {
    record_input(manifest, *p);
    jsonl::for_each(jsonl::read_file(*p), p->string(), [&](std::size_t line, const json& j) {
      const std::string id = jsonl::string_field(j, "doc_id", p->string() + ":" + std::to_string(line));
      if (!replacement.count(id)) fail(ErrorKind::unknown_id, "missing perturbed vector for attacked doc '" + id + "'");
    });
  }

  std::vector<EmbeddingRecord> attacked = corpus;
  for (auto& r : attacked) {
    if (auto it = replacement.find(r.id); it != replacement.end()) r.vector = it->second->vector;
  }
  const CorpusIndex before_index(corpus);
  const CorpusIndex after_index(attacked);
  const Qrels qrels = load_qrels(qrels_path);
  const std::size_t depth = *std::max_element(cutoffs.begin(), cutoffs.end());

  std::map<std::string, const EmbeddingRecord*> query_by_id;
  for (const auto& q : queries) query_by_id[q.id] = &q;
  std::vector<std::string> qids;
  for (const auto& [qid, _] : qrels) {
    if (query_by_id.count(qid)) qids.push_back(qid);
  }
  std::vector<Ranking> before_rank(qids.size()), after_rank(qids.size());
  parallel_for(qids.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto& v = query_by_id.at(qids[i])->vector;
      for (const auto& s : before_index.topk(v, depth)) before_rank[i].push_back(s.id);
      for (const auto& s : after_index.topk(v, depth)) after_rank[i].push_back(s.id);
    }
  });
  std::map<std::string, Ranking> before_map, after_map;
  for (std::size_t i = 0; i < qids.size(); ++i) {
    before_map[qids[i]] = std::move(before_rank[i]);
    after_map[qids[i]] = std::move(after_rank[i]);
  }
  const EvalReport before = evaluate(before_map, qrels, cutoffs);
  const EvalReport after = evaluate(after_map, qrels, cutoffs);
  const DropReport drop = drop_report(before, after);

  jsonl::write_file(dir / "eval_before.json", to_json(before).dump(2) + "\n");
  jsonl::write_file(dir / "eval_after.json", to_json(after).dump(2) + "\n");
  jsonl::write_file(dir / "drop_report.json", to_json(drop).dump(2) + "\n");
  jsonl::write_file(dir / "drop_report.txt", to_text(drop));
  jsonl::write_file(dir / "drop_report.csv", to_csv(drop));
  manifest["outputs"] = {(dir / "eval_before.json").string(), (dir / "eval_after.json").string(),
                         (dir / "drop_report.json").string(), (dir / "drop_report.txt").string(),
                         (dir / "drop_report.csv").string()};
  manifest["queries_skipped"] = before.skipped_queries.size();
  manifest["attacked_documents"] = replacement.size();
  write_manifest(dir, manifest);
  std::cout << to_text(drop);
}

std::vector<PrecisionReport> read_precision_reports(const std::string& path) {
  json j;
  try {
    j = json::parse(jsonl::read_file(path));
  } catch (const json::parse_error& e) {
    fail(ErrorKind::parse, path + ": " + e.what());
  }
  if (!j.contains("reports") || !j["reports"].is_array()) fail(ErrorKind::format, path + ": missing 'reports' array");
  std::vector<PrecisionReport> out;
  for (const auto& r : j["reports"]) out.push_back(precision_report_from_json(r));
  return out;
}

void cmd_analyze(const json& config) {
  const auto& an = config.at("analyze");
  const auto input = require_file(config, "analyze", "embeddings");
  const fs::path dir = out_dir(config);
  const SimKind kind = sim_kind_from_string(an.at("sim_kind").get<std::string>());
  const auto epsilons = an.at("epsilons").get<std::vector<double>>();
  for (double e : epsilons) {
    if (e < 0.0 || e > 1.0) fail(ErrorKind::config, "analyze.epsilons must lie in [0, 1]");
  }
  json manifest = base_manifest("analyze", config);
  record_input(manifest, input);

  struct Item {
    std::string id;
    std::string topic;
    std::vector<double> pooled;
    std::optional<EmbeddedSequence> tokens;
  };
  std::vector<Item> items;
  std::vector<std::string> topic_order;
  std::optional<Assets> assets;
  if (kind == SimKind::pairwise) {
    assets = load_surrogate_assets(config);
    manifest["assets"] = assets->hashes;
  }
  jsonl::for_each(jsonl::read_file(input), input.string(), [&](std::size_t line, const json& j) {
    const std::string where = input.string() + ":" + std::to_string(line);
    Item it;
    it.id = jsonl::string_field(j, "id", where);
    it.topic = jsonl::string_field(j, "topic", where);
    if (kind == SimKind::pooled) {
      const auto& v = jsonl::field(j, "vector", where);
      if (!v.is_array()) fail(ErrorKind::format, where + ": 'vector' must be an array");
      it.pooled = v.get<std::vector<double>>();
    } else {
      const auto seq = assets->tokenizer->encode(jsonl::string_field(j, "text", where));
      it.tokens = embed_sequence(seq, assets->matrix);
      const auto pooled = mean_pool(seq, assets->matrix);
      it.pooled.assign(pooled.begin(), pooled.end());
    }
    if (std::find(topic_order.begin(), topic_order.end(), it.topic) == topic_order.end()) {
      topic_order.push_back(it.topic);
    }
    items.push_back(std::move(it));
  });
  if (topic_order.size() < 2) {
    fail(ErrorKind::insufficient_topics, "analysis needs at least 2 topics, found " + std::to_string(topic_order.size()));
  }
  {
    std::vector<EmbeddingRecord> check;
    for (const auto& it : items) check.push_back({it.id, std::vector<float>(it.pooled.begin(), it.pooled.end())});
    validate_embeddings(check);
  }

  std::vector<PrecisionReport> reports(topic_order.size());
  parallel_for(topic_order.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t t = begin; t < end; ++t) {
      std::vector<const Item*> inside, outside;
      for (const auto& it : items) (it.topic == topic_order[t] ? inside : outside).push_back(&it);
      SimGrids grids;
      if (kind == SimKind::pooled) {
        grids = within_between_sims(inside, outside, [](const Item* a, const Item* b) {
          return cosine(std::span<const double>(a->pooled), std::span<const double>(b->pooled));
        });
      } else {
        grids = within_between_sims(inside, outside, [](const Item* a, const Item* b) {
          return pairwise_sim(*a->tokens, *b->tokens);
        });
      }
      reports[t] = precision_report(topic_order[t], grids, epsilons);
    }
  });

  json out = {{"sim_kind", to_string(kind)},
              {"self_pairs", "counted in the raw grid, excluded from the within-topic minimum"},
              {"reports", json::array()}};
  for (const auto& r : reports) out["reports"].push_back(to_json(r));
  jsonl::write_file(dir / "precision_reports.json", out.dump(2) + "\n");

  std::vector<std::vector<double>> points;
  for (const auto& it : items) points.push_back(it.pooled);
  std::string csv = "id,topic,pc1,pc2\n";
  json pca_meta = nullptr;
  if (points.size() >= 3) {
    const Pca2 pca = pca2(points);
    for (std::size_t i = 0; i < items.size(); ++i) {
      json id = items[i].id, topic = items[i].topic, x = pca.coordinates[i][0], y = pca.coordinates[i][1];
      csv += id.dump() + "," + topic.dump() + "," + x.dump() + "," + y.dump() + "\n";
    }
    pca_meta = {{"eigenvalues", pca.eigenvalues}, {"explained_variance", pca.explained_variance}};
  }
  jsonl::write_file(dir / "pca.csv", csv);
  manifest["pca"] = pca_meta;
  manifest["outputs"] = {(dir / "precision_reports.json").string(), (dir / "pca.csv").string()};
  write_manifest(dir, manifest);
  for (const auto& r : reports) {
    std::ostringstream line;
    line << r.topic_name;
    for (std::size_t k = 0; k < r.epsilons.size(); ++k) line << "  p_" << r.epsilons[k] << "=" << r.p_eps[k];
    std::cout << line.str() << '\n';
  }
}

int run_command(const std::string& name, const json& config) {
  try {
    set_default_threads(config.at("threads").get<std::size_t>());
    if (name == "sample") {
      cmd_sample(config);
    } else if (name == "attack") {
      cmd_attack(config);
    } else if (name == "evaluate") {
      cmd_evaluate(config);
    } else if (name == "analyze") {
      cmd_analyze(config);
    } else {
      fail(ErrorKind::config, "unknown command '" + name + "'");
    }
    return exit_ok;
  } catch (const Error& e) {
    log(std::string("error (") + to_string(e.kind()) + "): " + e.what());
    return exit_code_for(e.kind());
  } catch (const json::exception& e) {
    log(std::string("error (config): ") + e.what());
    return exit_config;
  } catch (const fs::filesystem_error& e) {
    log(std::string("error (io): ") + e.what());
    return exit_config;
  } catch (const std::exception& e) {
    log(std::string("internal error: ") + e.what());
    return exit_internal;
  }
}

int main(int argc, char** argv) {
  CLI::App app{"hidegate: adversarial suffix synthesis and evaluation for embedding retrieval"};
  app.require_subcommand(1);
  app.allow_extras();
  app.set_version_flag("--version", kVersion);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::optional<std::string> out, sampler_url, sampler_model, victim_url, victim_model;
  std::optional<double> temperature;
  app.add_option("--config", config_path, "JSON run config")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "Random seed");
  app.add_option("--threads", threads, "Worker threads (0 = all cores)");
  app.add_option("--out-dir", out, "Output directory");
  app.add_option("--sampler-url", sampler_url, "Chat-completions endpoint URL");
  app.add_option("--sampler-model", sampler_model, "Model name sent to the sampler");
  app.add_option("--temperature", temperature, "Sampling temperature");
  app.add_option("--victim-url", victim_url, "Embeddings endpoint URL");
  app.add_option("--victim-model", victim_model, "Model name sent to the victim endpoint");
  app.footer("Any config field can be overridden with a dotted flag, e.g. --attack.m 10");

  std::string command;
  for (const char* name : {"sample", "attack", "evaluate", "analyze"}) {
    auto* sub = app.add_subcommand(name);
    sub->fallthrough();
    sub->allow_extras();
    sub->callback([&command, name] { command = name; });
  }
  app.get_subcommand("sample")->description("Generate query samples for documents via a chat endpoint");
  app.get_subcommand("attack")->description("Learn adversarial suffix tokens for documents");
  app.get_subcommand("evaluate")->description("Measure retrieval drop after replacing attacked documents");
  app.get_subcommand("analyze")->description("Topic precision reports and PCA coordinates");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? exit_ok : exit_config;
  }

  json config = default_config();
  try {
    if (!config_path.empty()) {
      json file;
      try {
        file = json::parse(jsonl::read_file(config_path));
      } catch (const json::parse_error& e) {
        fail(ErrorKind::config, config_path + ": " + e.what());
      }
      merge_config(config, file);
    }
    std::vector<std::string> extras = app.remaining();
    for (auto* sub : app.get_subcommands()) {
      auto more = sub->remaining();
      extras.insert(extras.end(), more.begin(), more.end());
    }
    for (std::size_t i = 0; i < extras.size(); ++i) {
      const std::string& arg = extras[i];
      if (!arg.starts_with("--")) fail(ErrorKind::config, "unexpected argument '" + arg + "'");
      std::string key = arg.substr(2), value;
      if (auto eq = key.find('='); eq != std::string::npos) {
        value = key.substr(eq + 1);
        key.resize(eq);
      } else {
        if (i + 1 >= extras.size()) fail(ErrorKind::config, "--" + key + " needs a value");
        value = extras[++i];
      }
      apply_override(config, key, value);
    }
    if (seed) config["seed"] = *seed;
    if (threads) config["threads"] = *threads;
    if (out) config["out_dir"] = *out;
    if (sampler_url) config["sampler"]["url"] = *sampler_url;
    if (sampler_model) config["sampler"]["model"] = *sampler_model;
    if (temperature) config["sampler"]["temperature"] = *temperature;
    if (victim_url) config["victim"]["url"] = *victim_url;
    if (victim_model) config["victim"]["model"] = *victim_model;
  } catch (const Error& e) {
    log(std::string("error (config): ") + e.what());
    return exit_config;
  }
  return run_command(command, config);
}

}  // namespace hidegate::cli
