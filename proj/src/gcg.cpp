#include "hidegate/gcg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "hidegate/error.hpp"
#include "hidegate/parallel.hpp"

namespace hidegate {

const char* to_string(ScoringMode m) noexcept {
  return m == ScoringMode::exact ? "exact" : "gradient";
}

ScoringMode scoring_mode_from_string(std::string_view name) {
  if (name == "exact") return ScoringMode::exact;
  if (name == "gradient") return ScoringMode::gradient;
  fail(ErrorKind::config, "unknown scoring mode '" + std::string(name) + "'");
}

double Objective::reduce_sims(std::span<const double> sims) const {
  if (sims.empty()) fail(ErrorKind::empty_input, "objective has no targets");
  if (reduce == Reduce::max) return *std::max_element(sims.begin(), sims.end());
  double s = 0.0;
  for (std::size_t k = 0; k < sims.size(); ++k) {
    s += (weights.empty() ? 1.0 : weights[k]) * sims[k];
  }
  return s;
}

void OptimSpan::validate() const {
  if (positions.empty()) fail(ErrorKind::config, "optimization span has no positions");
  for (std::size_t k = 0; k < positions.size(); ++k) {
    if (positions[k] >= sequence.size()) {
      fail(ErrorKind::index_out_of_range,
           "span position " + std::to_string(positions[k]) + " outside sequence of length " +
               std::to_string(sequence.size()));
    }
    if (k > 0 && positions[k] <= positions[k - 1]) {
      fail(ErrorKind::config, "span positions must be sorted and unique");
    }
  }
}

void GcgConfig::validate() const {
  if (topk_candidates < 1) fail(ErrorKind::config, "topk_candidates must be >= 1");
  if (batch_samples < 1) fail(ErrorKind::config, "batch_samples must be >= 1");
}

std::vector<double> objective_sims(const TokenSequence& seq, const Objective& objective,
                                   const EmbeddingMatrix& matrix) {
  const EmbeddedSequence a = embed_sequence(seq, matrix);
  std::vector<double> sims;
  sims.reserve(objective.targets.size());
  for (const auto& t : objective.targets) sims.push_back(pairwise_sim(a, t));
  return sims;
}

double evaluate_loss(const TokenSequence& seq, const Objective& objective,
                     const EmbeddingMatrix& matrix) {
  return objective.to_loss(objective.reduce_sims(objective_sims(seq, objective, matrix)));
}

namespace {

void check_objective(const Objective& objective) {
  if (objective.targets.empty()) fail(ErrorKind::empty_input, "objective has no targets");
  if (objective.reduce == Reduce::weighted_sum && !objective.weights.empty() &&
      objective.weights.size() != objective.targets.size()) {
    fail(ErrorKind::config, "objective weights do not match target count");
  }
}

// Loss gradient with respect to the unit direction at position i.
std::vector<double> loss_direction_grad(const EmbeddedSequence& a, std::size_t i,
                                        const Objective& objective) {
  std::vector<double> g(a.dim(), 0.0);
  auto accumulate = [&](std::size_t k, double w) {
    const auto gk = direction_grad(a, objective.targets[k], i);
    for (std::size_t d = 0; d < g.size(); ++d) g[d] += w * gk[d];
  };
  if (objective.reduce == Reduce::max) {
    std::size_t best = 0;
    double best_sim = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < objective.targets.size(); ++k) {
      const double s = pairwise_sim(a, objective.targets[k]);
      if (s > best_sim) {
        best_sim = s;
        best = k;
      }
    }
    accumulate(best, 1.0);
  } else {
    for (std::size_t k = 0; k < objective.targets.size(); ++k) {
      accumulate(k, objective.weights.empty() ? 1.0 : objective.weights[k]);
    }
  }
  if (objective.direction == Direction::maximize) {
    for (double& x : g) x = -x;
  }
  return g;
}

}  // namespace

std::vector<std::vector<TokenId>> propose_topk_candidates(const OptimSpan& span,
                                                          const Objective& objective,
                                                          const GcgConfig& config,
                                                          const EmbeddingMatrix& matrix) {
  span.validate();
  config.validate();
  check_objective(objective);
  const EmbeddedSequence a = embed_sequence(span.sequence, matrix);
  const std::size_t vocab = matrix.vocab_size();

  std::vector<std::vector<TokenId>> out(span.positions.size());
  for (std::size_t p = 0; p < span.positions.size(); ++p) {
    const auto g = loss_direction_grad(a, span.positions[p], objective);
    // Predicted loss change is <g, ê_w> - <g, â_i>; rank by the first term.
    std::vector<std::pair<double, TokenId>> scored;
    scored.reserve(vocab);
    for (std::size_t w = 0; w < vocab; ++w) {
      const auto id = static_cast<TokenId>(w);
      if (!matrix.eligible(id)) continue;
      const auto row = matrix.row(id);
      double s = 0.0;
      for (std::size_t d = 0; d < g.size(); ++d) s += g[d] * row[d];
      scored.emplace_back(s / matrix.norm(id), id);
    }
    const std::size_t k = std::min(config.topk_candidates, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k),
                      scored.end());
    out[p].reserve(k);
    for (std::size_t r = 0; r < k; ++r) out[p].push_back(scored[r].second);
  }
  return out;
}

StepResult score_candidates_exact(const OptimSpan& span, const Objective& objective,
                                  const EmbeddingMatrix& matrix) {
  span.validate();
  check_objective(objective);
  const TokenSequence& seq = span.sequence;
  const double current = evaluate_loss(seq, objective, matrix);

  SubstitutionTable table(matrix, objective.targets);
  const std::size_t k_count = table.num_targets();
  const std::size_t vocab = matrix.vocab_size();
  const double current_fast = objective.to_loss(objective.reduce_sims(table.sims(seq)));

  struct Best {
    double loss;
    TokenId word;
    bool found;
  };
  std::vector<Best> per_position(span.positions.size(), {current_fast, 0, false});
  parallel_for(span.positions.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t p = begin; p < end; ++p) {
      const std::size_t pos = span.positions[p];
      const auto sims = table.substituted_sims(seq, pos);
      Best& best = per_position[p];
      for (std::size_t w = 0; w < vocab; ++w) {
        const auto id = static_cast<TokenId>(w);
        if (!matrix.eligible(id) || id == seq[pos]) continue;
        const double loss = objective.to_loss(
            objective.reduce_sims(std::span<const double>(sims.data() + w * k_count, k_count)));
        if (loss < best.loss) best = {loss, id, true};
      }
    }
  });

  std::optional<Substitution> choice;
  double best_loss = current_fast;
  for (std::size_t p = 0; p < per_position.size(); ++p) {
    if (per_position[p].found && per_position[p].loss < best_loss) {
      best_loss = per_position[p].loss;
      choice = Substitution{span.positions[p], per_position[p].word};
    }
  }
  if (!choice) return {std::nullopt, current};

  // Confirm with a full recomputation so reported losses stay monotone.
  TokenSequence next = seq;
  next.ids[choice->position] = choice->word;
  const double confirmed = evaluate_loss(next, objective, matrix);
  if (!(confirmed < current)) return {std::nullopt, current};
  return {choice, confirmed};
}

StepResult gcg_step(OptimSpan& span, const Objective& objective, const GcgConfig& config,
                    const EmbeddingMatrix& matrix, std::mt19937_64& rng) {
  config.validate();
  StepResult result;
  if (config.mode == ScoringMode::exact) {
    result = score_candidates_exact(span, objective, matrix);
  } else {
    const auto candidates = propose_topk_candidates(span, objective, config, matrix);
    const double current = evaluate_loss(span.sequence, objective, matrix);

    std::vector<Substitution> batch;
    std::size_t combos = 0;
    for (const auto& c : candidates) combos += c.size();
    if (config.batch_samples >= combos) {
      for (std::size_t p = 0; p < candidates.size(); ++p) {
        for (TokenId w : candidates[p]) batch.push_back({span.positions[p], w});
      }
    } else {
      std::uniform_int_distribution<std::size_t> pick_pos(0, span.positions.size() - 1);
      for (std::size_t b = 0; b < config.batch_samples; ++b) {
        const std::size_t p = pick_pos(rng);
        if (candidates[p].empty()) continue;
        std::uniform_int_distribution<std::size_t> pick_word(0, candidates[p].size() - 1);
        batch.push_back({span.positions[p], candidates[p][pick_word(rng)]});
      }
    }

    std::vector<double> losses(batch.size());
    parallel_for(batch.size(), [&](std::size_t begin, std::size_t end) {
      for (std::size_t b = begin; b < end; ++b) {
        TokenSequence trial = span.sequence;
        trial.ids[batch[b].position] = batch[b].word;
        losses[b] = evaluate_loss(trial, objective, matrix);
      }
    });
    result = {std::nullopt, current};
    for (std::size_t b = 0; b < batch.size(); ++b) {
      if (losses[b] < result.loss) result = {batch[b], losses[b]};
    }
  }
  if (result.applied) span.sequence.ids[result.applied->position] = result.applied->word;
  return result;
}

}  // namespace hidegate
