#pragma once

// Independent reference implementations. Deliberately naive: no shared
// code with the library beyond plain data types.

#include <array>
#include <set>
#include <string>
#include <vector>

#include "hidegate/retrieval.hpp"
#include "toy_assets.hpp"

namespace hidegate::testing {

// Repeatedly merges the lowest-rank adjacent pair, leftmost first, scanning
// the whole sequence and the whole merge list each time. Works on raw bytes.
std::vector<std::string> bpe_oracle(const std::string& text, const std::vector<RawMerge>& merges);

double naive_cosine(const std::vector<double>& a, const std::vector<double>& b);
double naive_pairwise_sim(const std::vector<std::vector<double>>& a,
                          const std::vector<std::vector<double>>& b);

// Central differences of the mean-pair cosine with respect to a[i].
std::vector<double> finite_difference_grad(std::vector<std::vector<double>> a,
                                           const std::vector<std::vector<double>>& b,
                                           std::size_t i, double h);

double naive_recall(const std::vector<std::string>& ranking, const std::set<std::string>& relevant,
                    std::size_t k);
double naive_ndcg(const std::vector<std::string>& ranking, const std::set<std::string>& relevant,
                  std::size_t k);

// Triple loop over (i != j, k) for every outsider.
double naive_p_epsilon(const std::vector<std::vector<double>>& topic,
                       const std::vector<std::vector<double>>& complement, double epsilon);

// Scores every stored unit vector and fully sorts (score desc, id asc).
std::vector<std::string> full_sort_ranking(const CorpusIndex& index, const std::vector<float>& query,
                                           std::size_t k);

// Top-2 eigenvalues of the n-1 normalised sample covariance (dense solver).
std::array<double, 2> dense_top2_eigenvalues(const std::vector<std::vector<double>>& vectors);

}  // namespace hidegate::testing
