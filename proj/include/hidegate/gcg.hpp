#pragma once

// Greedy coordinate search over a span of token positions: each step
// commits at most one single-token substitution.

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "hidegate/surrogate.hpp"
#include "hidegate/textcodec.hpp"

namespace hidegate {

enum class Direction { minimize, maximize };
enum class Reduce { weighted_sum, max };
enum class ScoringMode { exact, gradient };

const char* to_string(ScoringMode m) noexcept;
ScoringMode scoring_mode_from_string(std::string_view name);

// Similarity of the optimized sequence against each target, reduced to a
// scalar. The loss handed to the optimizer is the reduced value for
// minimize and its negation for maximize, so lower is always better.
struct Objective {
  std::vector<EmbeddedSequence> targets;
  Reduce reduce = Reduce::weighted_sum;
  std::vector<double> weights;  // weighted_sum only; empty means all 1
  Direction direction = Direction::minimize;

  double reduce_sims(std::span<const double> sims) const;
  double to_loss(double value) const {
    return direction == Direction::minimize ? value : -value;
  }
};

struct OptimSpan {
  TokenSequence sequence;
  std::vector<std::size_t> positions;  // sorted, unique, non-empty

  void validate() const;
};

struct GcgConfig {
  std::size_t topk_candidates = 256;  // gradient mode only
  std::size_t batch_samples = 64;     // gradient mode only
  ScoringMode mode = ScoringMode::exact;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

struct Substitution {
  std::size_t position;
  TokenId word;
};

struct StepResult {
  std::optional<Substitution> applied;  // empty when the no-op won
  double loss;                          // loss after the step
};

// Per-target similarities of seq (full recomputation).
std::vector<double> objective_sims(const TokenSequence& seq, const Objective& objective,
                                   const EmbeddingMatrix& matrix);
double evaluate_loss(const TokenSequence& seq, const Objective& objective,
                     const EmbeddingMatrix& matrix);

// For each span position, the topk eligible words with the largest
// first-order loss decrease, ranked by the direction gradient; ties go to
// the lower id. Result is aligned with span.positions.
std::vector<std::vector<TokenId>> propose_topk_candidates(const OptimSpan& span,
                                                          const Objective& objective,
                                                          const GcgConfig& config,
                                                          const EmbeddingMatrix& matrix);

// Global best single substitution over every (position, eligible word),
// with the unmodified sequence as a candidate. Ties prefer the no-op, then
// the lowest (position, word).
StepResult score_candidates_exact(const OptimSpan& span, const Objective& objective,
                                  const EmbeddingMatrix& matrix);

// One optimization step; mutates span.sequence when a substitution wins.
// The returned loss never exceeds the loss before the step.
StepResult gcg_step(OptimSpan& span, const Objective& objective, const GcgConfig& config,
                    const EmbeddingMatrix& matrix, std::mt19937_64& rng);

}  // namespace hidegate
