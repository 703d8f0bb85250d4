#pragma once

// Topic-cluster precision analysis: within/between similarity grids, the
// fraction p_eps of outsiders separated from a topic by at least eps, and a
// two-component PCA for cluster inspection.

#include <array>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hidegate/surrogate.hpp"

namespace hidegate {

enum class SimKind {
  pooled,    // cosine of single pooled vectors (victim-style)
  pairwise,  // mean token-pair cosine (surrogate-style)
};

const char* to_string(SimKind k) noexcept;
SimKind sim_kind_from_string(std::string_view name);

// in[i][j]: topic member i vs member j, self-pairs included.
// out[i][o]: topic member i vs outsider o.
struct SimGrids {
  std::vector<std::vector<double>> in;
  std::vector<std::vector<double>> out;
};

template <class Item, class Sim>
SimGrids within_between_sims(const std::vector<Item>& topic, const std::vector<Item>& complement,
                             Sim&& sim) {
  SimGrids g;
  g.in.assign(topic.size(), std::vector<double>(topic.size()));
  g.out.assign(topic.size(), std::vector<double>(complement.size()));
  for (std::size_t i = 0; i < topic.size(); ++i) {
    for (std::size_t j = 0; j < topic.size(); ++j) g.in[i][j] = sim(topic[i], topic[j]);
    for (std::size_t o = 0; o < complement.size(); ++o) g.out[i][o] = sim(topic[i], complement[o]);
  }
  return g;
}

struct TopicCorpus {
  std::string topic_name;
  std::vector<std::vector<float>> embeddings;  // the topic set
  std::vector<std::pair<std::string, std::vector<float>>> complement;

  void validate() const;
};

SimGrids within_between_sims(const TopicCorpus& corpus);

struct SimRange {
  double min = 0.0;
  double max = 0.0;
};

struct PrecisionReport {
  std::string topic_name;
  std::size_t topic_size = 0;
  std::size_t complement_size = 0;
  std::vector<double> epsilons;
  std::vector<double> p_eps;
  SimRange in_range;            // self-pairs excluded
  SimRange in_range_with_self;  // the raw |X| x |X| grid
  SimRange out_range;
  std::size_t in_pairs = 0;     // |X|^2, self-pairs included
  std::size_t out_pairs = 0;
};

// Fraction of outsiders o with min_{i != j} in[i][j] >= max_k out[k][o] + eps.
double p_epsilon(const SimGrids& grids, double epsilon);
double p_epsilon(const TopicCorpus& corpus, double epsilon);

PrecisionReport precision_report(const std::string& topic_name, const SimGrids& grids,
                                 const std::vector<double>& epsilons);

nlohmann::json to_json(const PrecisionReport& report);
PrecisionReport precision_report_from_json(const nlohmann::json& j);

struct Pca2 {
  std::vector<std::array<double, 2>> coordinates;
  std::array<double, 2> eigenvalues{};
  std::array<double, 2> explained_variance{};
  std::array<std::vector<double>, 2> axes;
  std::size_t iterations[2] = {0, 0};
};

// Top-2 principal components of the sample covariance (n - 1 normalised)
// via deflated power iteration.
Pca2 pca2(const std::vector<std::vector<double>>& vectors);

}  // namespace hidegate
