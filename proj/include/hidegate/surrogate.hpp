#pragma once

// Word-embedding surrogate: token sequences are compared through the mean
// cosine over all token pairs of their raw input embeddings.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "hidegate/textcodec.hpp"

namespace hidegate {

class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;
  // data is row-major, vocab_size * dim floats. Rows with zero norm are
  // marked ineligible.
  EmbeddingMatrix(std::size_t vocab_size, std::size_t dim, std::vector<float> data);

  std::size_t vocab_size() const noexcept { return vocab_size_; }
  std::size_t dim() const noexcept { return dim_; }
  std::span<const float> row(TokenId id) const {
    return {data_.data() + static_cast<std::size_t>(id) * dim_, dim_};
  }
  double norm(TokenId id) const { return norms_[id]; }
  const std::vector<float>& data() const noexcept { return data_; }

  bool eligible(TokenId id) const { return eligible_[id]; }
  void set_eligible(TokenId id, bool value);
  // Special and non-printable tokens can never be injected.
  void restrict_to_printable(const Vocabulary& vocab);
  std::size_t eligible_count() const;

  static EmbeddingMatrix read_wemb(const std::filesystem::path& path);
  void write_wemb(const std::filesystem::path& path) const;

 private:
  std::size_t vocab_size_ = 0;
  std::size_t dim_ = 0;
  std::vector<float> data_;
  std::vector<double> norms_;
  std::vector<bool> eligible_;
};

// L vectors of dimension m0 with cached norms. Built either from token ids
// against an EmbeddingMatrix or from raw vectors (tests, analysis).
class EmbeddedSequence {
 public:
  EmbeddedSequence() = default;
  static EmbeddedSequence from_vectors(const std::vector<std::vector<double>>& vectors);

  std::size_t size() const noexcept { return norms_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  bool empty() const noexcept { return norms_.empty(); }
  std::span<const double> vec(std::size_t i) const {
    return {data_.data() + i * dim_, dim_};
  }
  double norm(std::size_t i) const { return norms_[i]; }
  // Token ids when built by embed_sequence, empty otherwise.
  const std::vector<TokenId>& ids() const noexcept { return ids_; }

  // Overwrites one position (finite differences, substitution checks).
  void set_vec(std::size_t i, std::span<const double> v);

 private:
  friend EmbeddedSequence embed_sequence(const TokenSequence&, const EmbeddingMatrix&);
  std::size_t dim_ = 0;
  std::vector<double> data_;
  std::vector<double> norms_;
  std::vector<TokenId> ids_;
};

EmbeddedSequence embed_sequence(const TokenSequence& seq, const EmbeddingMatrix& matrix);

double cosine(std::span<const double> a, std::span<const double> b);

// Mean of cos(a_i, b_j) over all token pairs; bit-identical in both
// argument orders.
double pairwise_sim(const EmbeddedSequence& a, const EmbeddedSequence& b);

// d pairwise_sim(a, b) / d a_i (raw embedding coordinates).
std::vector<double> grad_wrt_position(const EmbeddedSequence& a,
                                      const EmbeddedSequence& b, std::size_t i);

// d pairwise_sim(a, b) / d â_i where â_i is the unit direction of a_i. The
// similarity is linear in each â_i, so <g, ê_w - â_i> is the exact change
// from substituting token w at position i.
std::vector<double> direction_grad(const EmbeddedSequence& a,
                                   const EmbeddedSequence& b, std::size_t i);

// Per-(vocab word, target) sums of cosines against every token of each
// target: contribution(w, k) = sum_j cos(E[w], targets[k]_j). Built once per
// target set; scoring any substitution in a sequence drawn from the same
// matrix is then O(1) per (word, target).
class SubstitutionTable {
 public:
  SubstitutionTable(const EmbeddingMatrix& matrix,
                    std::span<const EmbeddedSequence> targets);

  std::size_t num_targets() const noexcept { return target_lengths_.size(); }
  std::size_t target_length(std::size_t k) const { return target_lengths_[k]; }
  double contribution(TokenId w, std::size_t k) const {
    return table_[static_cast<std::size_t>(w) * num_targets() + k];
  }
  const EmbeddingMatrix& matrix() const noexcept { return *matrix_; }

  // Current per-target similarity of seq (sum of contributions / lengths).
  std::vector<double> sims(const TokenSequence& seq) const;

  // Row-major |W| x K matrix of target similarities after seq[i] := w.
  std::vector<double> substituted_sims(const TokenSequence& seq, std::size_t i) const;

 private:
  const EmbeddingMatrix* matrix_;
  std::vector<std::size_t> target_lengths_;
  std::vector<double> table_;
};

// Exact value of sum_k weights[k] * pairwise_sim(A[i -> w], targets[k]) for
// every vocabulary word w. Ineligible words score +infinity.
std::vector<double> candidate_delta_scores(const EmbeddedSequence& a, std::size_t i,
                                           std::span<const EmbeddedSequence> targets,
                                           std::span<const double> weights,
                                           const EmbeddingMatrix& matrix);

// Unweighted mean of the embedding rows of seq (pooled retrieval vector).
std::vector<float> mean_pool(const TokenSequence& seq, const EmbeddingMatrix& matrix);

}  // namespace hidegate
