#pragma once

// Document-query adversarial learning: injected suffix tokens are pushed
// away from a population of sampled queries while every sampled query is
// pulled toward the perturbed document.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hidegate/gcg.hpp"
#include "hidegate/surrogate.hpp"
#include "hidegate/textcodec.hpp"

namespace hidegate {

enum class AttackMode {
  dqa,   // max-similarity document loss, queries updated every round
  sgcg,  // summed-similarity document loss, queries frozen
};

const char* to_string(AttackMode m) noexcept;
AttackMode attack_mode_from_string(std::string_view name);

struct AttackConfig {
  std::size_t m = 10;
  std::size_t n_samples = 10;
  std::size_t rounds = 40;
  std::size_t doc_steps_per_round = 1;
  std::size_t query_steps_per_round = 1;
  AttackMode mode = AttackMode::dqa;
  std::optional<double> epsilon_g;
  std::string init_piece = "*";
  std::uint64_t rng_seed = 0;
  GcgConfig gcg;
  // Overrides the mode's document reduction (max for dqa, sum for sgcg).
  std::optional<Reduce> doc_reduce;

  void validate() const;
  Reduce document_reduce() const {
    return doc_reduce.value_or(mode == AttackMode::dqa ? Reduce::max : Reduce::weighted_sum);
  }
};

nlohmann::json to_json(const AttackConfig& config);

struct TransferCheck {
  double max_doc_query_sim = 0.0;
  double min_within_query_sim = 0.0;
  double epsilon_g = 0.0;
  bool holds = false;
};

struct AttackState {
  OptimSpan doc;  // eligible positions = the m suffix slots
  std::size_t prefix_length = 0;
  std::vector<OptimSpan> queries;  // every position eligible
  AttackMode mode = AttackMode::dqa;
  Reduce doc_reduce = Reduce::max;
  std::size_t rounds_done = 0;

  double initial_loss_d = 0.0;
  std::vector<double> loss_trace_d;  // after each round
  std::vector<double> loss_trace_s;  // after each round (dqa only)
  std::vector<bool> transfer_met;    // per round
  std::vector<TransferCheck> transfer_checks;
  // Document loss after every committed doc-phase step, per round.
  std::vector<std::vector<double>> doc_phase_losses;
  // Per round, per query: similarity to the document after each query step.
  std::vector<std::vector<std::vector<double>>> query_phase_sims;

  std::vector<TokenId> injected() const {
    return {doc.sequence.ids.begin() + static_cast<std::ptrdiff_t>(prefix_length),
            doc.sequence.ids.end()};
  }
};

AttackState init_attack(const TokenSequence& document, const std::vector<TokenSequence>& samples,
                        const AttackConfig& config, const Tokenizer& tokenizer,
                        const EmbeddingMatrix& matrix);

std::vector<double> doc_query_sims(const AttackState& state, const EmbeddingMatrix& matrix);

// Max of the document/query similarities (sum in sgcg mode).
double loss_d(const AttackState& state, const EmbeddingMatrix& matrix);
// Negated sum of the document/query similarities; dqa mode only.
double loss_s(const AttackState& state, const EmbeddingMatrix& matrix);

TransferCheck check_transfer_condition(const AttackState& state, double epsilon_g,
                                       const EmbeddingMatrix& matrix);

void run_round(AttackState& state, const AttackConfig& config, const EmbeddingMatrix& matrix);

struct AttackResult {
  std::string doc_id;
  std::vector<TokenId> perturbed_ids;
  std::vector<TokenId> injected_ids;
  std::string injected_text;
  std::string perturbed_text;
  bool lossy_text = false;
  double initial_loss_d = 0.0;
  std::vector<double> loss_trace_d;
  std::vector<double> loss_trace_s;
  std::vector<std::size_t> transfer_met_rounds;  // 1-based round numbers
  std::optional<TransferCheck> final_transfer;
  std::size_t rounds_run = 0;
  AttackConfig config;
};

AttackResult run_attack(const std::string& doc_id, const TokenSequence& document,
                        const std::vector<TokenSequence>& samples, const AttackConfig& config,
                        const Tokenizer& tokenizer, const EmbeddingMatrix& matrix);

// Same as run_attack but also hands back the final state.
AttackResult run_attack(const std::string& doc_id, const TokenSequence& document,
                        const std::vector<TokenSequence>& samples, const AttackConfig& config,
                        const Tokenizer& tokenizer, const EmbeddingMatrix& matrix,
                        AttackState& final_state);

nlohmann::json to_json(const AttackResult& result);
// Single-line JSON record for the attack results file.
std::string to_json_line(const AttackResult& result);

}  // namespace hidegate
