#include "hidegate/dqa.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "hidegate/error.hpp"
#include "hidegate/parallel.hpp"

namespace hidegate {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Independent stream per (phase, round, slot) so query updates can run in
// any order and still reproduce.
std::mt19937_64 derive_rng(std::uint64_t seed, std::uint64_t phase, std::uint64_t round,
                           std::uint64_t slot) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ phase);
  h = splitmix64(h ^ round);
  h = splitmix64(h ^ slot);
  return std::mt19937_64(h);
}

std::vector<EmbeddedSequence> embed_queries(const AttackState& state,
                                            const EmbeddingMatrix& matrix) {
  std::vector<EmbeddedSequence> out;
  out.reserve(state.queries.size());
  for (const auto& q : state.queries) out.push_back(embed_sequence(q.sequence, matrix));
  return out;
}

}  // namespace

const char* to_string(AttackMode m) noexcept { return m == AttackMode::dqa ? "dqa" : "sgcg"; }

AttackMode attack_mode_from_string(std::string_view name) {
  if (name == "dqa") return AttackMode::dqa;
  if (name == "sgcg") return AttackMode::sgcg;
  fail(ErrorKind::config, "unknown attack mode '" + std::string(name) + "'");
}

void AttackConfig::validate() const {
  if (m < 1) fail(ErrorKind::config, "injected token budget m must be >= 1");
  if (n_samples < 1) fail(ErrorKind::config, "n_samples must be >= 1");
  if (rounds < 1) fail(ErrorKind::config, "rounds must be >= 1");
  if (epsilon_g && (*epsilon_g < 0.0 || *epsilon_g > 1.0)) {
    fail(ErrorKind::config, "epsilon_g must lie in [0, 1]");
  }
  if (init_piece.empty()) fail(ErrorKind::config, "init_piece must be non-empty");
  gcg.validate();
}

nlohmann::json to_json(const AttackConfig& c) {
  nlohmann::json j;
  j["m"] = c.m;
  j["n_samples"] = c.n_samples;
  j["rounds"] = c.rounds;
  j["doc_steps_per_round"] = c.doc_steps_per_round;
  j["query_steps_per_round"] = c.query_steps_per_round;
  j["mode"] = to_string(c.mode);
  j["doc_reduce"] = c.document_reduce() == Reduce::max ? "max" : "sum";
  j["epsilon_g"] = c.epsilon_g ? nlohmann::json(*c.epsilon_g) : nlohmann::json(nullptr);
  j["init_piece"] = c.init_piece;
  j["scoring"] = to_string(c.gcg.mode);
  j["topk_candidates"] = c.gcg.topk_candidates;
  j["batch_samples"] = c.gcg.batch_samples;
  return j;
}

AttackState init_attack(const TokenSequence& document, const std::vector<TokenSequence>& samples,
                        const AttackConfig& config, const Tokenizer& tokenizer,
                        const EmbeddingMatrix& matrix) {
  config.validate();
  if (document.empty()) fail(ErrorKind::empty_input, "document is empty");
  if (samples.size() != config.n_samples) {
    fail(ErrorKind::config, "expected " + std::to_string(config.n_samples) +
                                " query samples, got " + std::to_string(samples.size()));
  }
  const TokenSequence init = tokenizer.encode(config.init_piece);
  if (init.size() != 1) {
    fail(ErrorKind::init, "init piece '" + config.init_piece + "' encodes to " +
                              std::to_string(init.size()) + " tokens, expected exactly 1");
  }

  AttackState state;
  state.mode = config.mode;
  state.doc_reduce = config.document_reduce();
  state.prefix_length = document.size();
  state.doc.sequence = document;
  state.doc.sequence.ids.insert(state.doc.sequence.ids.end(), config.m, init[0]);
  for (std::size_t k = 0; k < config.m; ++k) state.doc.positions.push_back(document.size() + k);

  state.queries.reserve(samples.size());
  for (std::size_t k = 0; k < samples.size(); ++k) {
    if (samples[k].empty()) {
      fail(ErrorKind::empty_input, "query sample " + std::to_string(k) + " is empty");
    }
    OptimSpan q;
    q.sequence = samples[k];
    q.positions.resize(samples[k].size());
    std::iota(q.positions.begin(), q.positions.end(), std::size_t{0});
    state.queries.push_back(std::move(q));
  }
  // Validates every id against the matrix up front.
  state.initial_loss_d = loss_d(state, matrix);
  return state;
}

std::vector<double> doc_query_sims(const AttackState& state, const EmbeddingMatrix& matrix) {
  const EmbeddedSequence d = embed_sequence(state.doc.sequence, matrix);
  std::vector<double> sims;
  sims.reserve(state.queries.size());
  for (const auto& q : state.queries) sims.push_back(pairwise_sim(d, embed_sequence(q.sequence, matrix)));
  return sims;
}

double loss_d(const AttackState& state, const EmbeddingMatrix& matrix) {
  const auto sims = doc_query_sims(state, matrix);
  if (state.doc_reduce == Reduce::max) return *std::max_element(sims.begin(), sims.end());
  double s = 0.0;
  for (double x : sims) s += x;
  return s;
}

double loss_s(const AttackState& state, const EmbeddingMatrix& matrix) {
  if (state.mode != AttackMode::dqa) {
    fail(ErrorKind::mode, "query loss is undefined in sgcg mode (queries are frozen)");
  }
  double s = 0.0;
  for (double x : doc_query_sims(state, matrix)) s += x;
  return -s;
}

TransferCheck check_transfer_condition(const AttackState& state, double epsilon_g,
                                       const EmbeddingMatrix& matrix) {
  if (state.queries.size() < 2) {
    fail(ErrorKind::insufficient_samples,
         "transfer condition needs at least 2 query samples for a within-topic minimum");
  }
  TransferCheck check;
  check.epsilon_g = epsilon_g;
  const auto sims = doc_query_sims(state, matrix);
  check.max_doc_query_sim = *std::max_element(sims.begin(), sims.end());
  const auto queries = embed_queries(state, matrix);
  double min_within = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < queries.size(); ++j) {
    for (std::size_t k = j + 1; k < queries.size(); ++k) {
      min_within = std::min(min_within, pairwise_sim(queries[j], queries[k]));
    }
  }
  check.min_within_query_sim = min_within;
  check.holds = check.max_doc_query_sim <= check.min_within_query_sim - epsilon_g;
  return check;
}

void run_round(AttackState& state, const AttackConfig& config, const EmbeddingMatrix& matrix) {
  const std::size_t round = state.rounds_done;

  // (a) document phase: move the injected suffix away from the queries.
  Objective doc_objective;
  doc_objective.targets = embed_queries(state, matrix);
  doc_objective.reduce = state.doc_reduce;
  doc_objective.direction = Direction::minimize;
  std::vector<double> doc_losses;
  for (std::size_t s = 0; s < config.doc_steps_per_round; ++s) {
    auto rng = derive_rng(config.rng_seed, 1, round, s);
    doc_losses.push_back(gcg_step(state.doc, doc_objective, config.gcg, matrix, rng).loss);
  }
  state.doc_phase_losses.push_back(std::move(doc_losses));

  // (b) query phase: each query independently moves toward the document.
  std::vector<std::vector<double>> query_sims(state.queries.size());
  if (state.mode == AttackMode::dqa && config.query_steps_per_round > 0) {
    Objective toward_doc;
    toward_doc.targets = {embed_sequence(state.doc.sequence, matrix)};
    toward_doc.direction = Direction::maximize;
    parallel_for(state.queries.size(), [&](std::size_t begin, std::size_t end) {
      for (std::size_t k = begin; k < end; ++k) {
        for (std::size_t s = 0; s < config.query_steps_per_round; ++s) {
          auto rng = derive_rng(config.rng_seed, 2, round, k * 1'000'003ULL + s);
          const auto r = gcg_step(state.queries[k], toward_doc, config.gcg, matrix, rng);
          query_sims[k].push_back(-r.loss);
        }
      }
    });
  }
  state.query_phase_sims.push_back(std::move(query_sims));

  // (c) traces and transfer condition.
  state.loss_trace_d.push_back(loss_d(state, matrix));
  if (state.mode == AttackMode::dqa) state.loss_trace_s.push_back(loss_s(state, matrix));
  if (state.queries.size() >= 2) {
    auto check = check_transfer_condition(state, config.epsilon_g.value_or(0.0), matrix);
    state.transfer_met.push_back(check.holds);
    state.transfer_checks.push_back(check);
  } else {
    state.transfer_met.push_back(false);
  }
  ++state.rounds_done;
}

AttackResult run_attack(const std::string& doc_id, const TokenSequence& document,
                        const std::vector<TokenSequence>& samples, const AttackConfig& config,
                        const Tokenizer& tokenizer, const EmbeddingMatrix& matrix,
                        AttackState& state) {
  state = init_attack(document, samples, config, tokenizer, matrix);
  for (std::size_t r = 0; r < config.rounds; ++r) {
    run_round(state, config, matrix);
    if (config.epsilon_g && state.transfer_met.back()) break;
  }

  AttackResult result;
  result.doc_id = doc_id;
  result.perturbed_ids = state.doc.sequence.ids;
  result.injected_ids = state.injected();
  const auto injected = tokenizer.decode(result.injected_ids);
  const auto perturbed = tokenizer.decode(state.doc.sequence);
  result.injected_text = injected.text;
  result.perturbed_text = perturbed.text;
  result.lossy_text = injected.lossy || perturbed.lossy;
  result.initial_loss_d = state.initial_loss_d;
  result.loss_trace_d = state.loss_trace_d;
  result.loss_trace_s = state.loss_trace_s;
  for (std::size_t r = 0; r < state.transfer_met.size(); ++r) {
    if (state.transfer_met[r]) result.transfer_met_rounds.push_back(r + 1);
  }
  if (!state.transfer_checks.empty()) result.final_transfer = state.transfer_checks.back();
  result.rounds_run = state.rounds_done;
  result.config = config;
  return result;
}

AttackResult run_attack(const std::string& doc_id, const TokenSequence& document,
                        const std::vector<TokenSequence>& samples, const AttackConfig& config,
                        const Tokenizer& tokenizer, const EmbeddingMatrix& matrix) {
  AttackState state;
  return run_attack(doc_id, document, samples, config, tokenizer, matrix, state);
}

nlohmann::json to_json(const AttackResult& r) {
  nlohmann::json j;
  j["doc_id"] = r.doc_id;
  j["injected_ids"] = r.injected_ids;
  j["injected_text"] = r.injected_text;
  j["perturbed_text"] = r.perturbed_text;
  j["loss_trace_d"] = r.loss_trace_d;
  j["transfer_met_rounds"] = r.transfer_met_rounds;
  j["config"] = to_json(r.config);
  j["seed"] = r.config.rng_seed;
  j["initial_loss_d"] = r.initial_loss_d;
  j["loss_trace_s"] = r.loss_trace_s;
  j["rounds_run"] = r.rounds_run;
  j["lossy_text"] = r.lossy_text;
  if (r.final_transfer) {
    // The within-topic minimum is estimated from the sampled queries.
    j["transfer"] = {{"max_doc_query_sim", r.final_transfer->max_doc_query_sim},
                     {"min_within_query_sim_estimate", r.final_transfer->min_within_query_sim},
                     {"epsilon_g", r.final_transfer->epsilon_g},
                     {"holds", r.final_transfer->holds}};
  }
  return j;
}

std::string to_json_line(const AttackResult& result) { return to_json(result).dump(); }

}  // namespace hidegate
