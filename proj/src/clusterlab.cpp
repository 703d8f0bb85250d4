#include "hidegate/clusterlab.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "hidegate/error.hpp"
#include "hidegate/retrieval.hpp"

namespace hidegate {

const char* to_string(SimKind k) noexcept { return k == SimKind::pooled ? "pooled" : "pairwise"; }

SimKind sim_kind_from_string(std::string_view name) {
  if (name == "pooled") return SimKind::pooled;
  if (name == "pairwise") return SimKind::pairwise;
  fail(ErrorKind::config, "unknown sim kind '" + std::string(name) + "'");
}

void TopicCorpus::validate() const {
  if (embeddings.size() < 2) {
    fail(ErrorKind::insufficient_samples, "topic '" + topic_name + "' needs at least 2 members");
  }
  if (complement.empty()) fail(ErrorKind::empty_input, "topic '" + topic_name + "' has no outsiders");
  const std::size_t dim = embeddings.front().size();
  auto check = [&](const std::vector<float>& v) {
    if (v.size() != dim) fail(ErrorKind::dimension_mismatch, "topic corpus has mixed dimensions");
  };
  for (const auto& v : embeddings) check(v);
  for (const auto& [_, v] : complement) check(v);
}

SimGrids within_between_sims(const TopicCorpus& corpus) {
  corpus.validate();
  std::vector<std::vector<float>> outsiders;
  outsiders.reserve(corpus.complement.size());
  for (const auto& [_, v] : corpus.complement) outsiders.push_back(v);
  return within_between_sims(corpus.embeddings, outsiders,
                             [](const std::vector<float>& a, const std::vector<float>& b) {
                               return cosine(std::span<const float>(a), std::span<const float>(b));
                             });
}

namespace {

void check_grids(const SimGrids& g) {
  if (g.in.size() < 2) fail(ErrorKind::insufficient_samples, "topic needs at least 2 members");
  if (g.out.empty() || g.out.front().empty()) fail(ErrorKind::empty_input, "complement is empty");
}

double min_off_diagonal(const SimGrids& g) {
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < g.in.size(); ++i) {
    for (std::size_t j = 0; j < g.in.size(); ++j) {
      if (i != j) m = std::min(m, g.in[i][j]);
    }
  }
  return m;
}

}  // namespace

double p_epsilon(const SimGrids& grids, double epsilon) {
  check_grids(grids);
  if (epsilon < 0.0 || epsilon > 1.0) fail(ErrorKind::config, "epsilon must lie in [0, 1]");
  const double floor = min_off_diagonal(grids);
  const std::size_t outsiders = grids.out.front().size();
  std::size_t passing = 0;
  for (std::size_t o = 0; o < outsiders; ++o) {
    double closest = -std::numeric_limits<double>::infinity();
    for (const auto& row : grids.out) closest = std::max(closest, row[o]);
    if (floor >= closest + epsilon) ++passing;
  }
  return static_cast<double>(passing) / static_cast<double>(outsiders);
}

double p_epsilon(const TopicCorpus& corpus, double epsilon) {
  return p_epsilon(within_between_sims(corpus), epsilon);
}

PrecisionReport precision_report(const std::string& topic_name, const SimGrids& grids,
                                 const std::vector<double>& epsilons) {
  check_grids(grids);
  PrecisionReport r;
  r.topic_name = topic_name;
  r.topic_size = grids.in.size();
  r.complement_size = grids.out.front().size();
  r.epsilons = epsilons;
  for (double e : epsilons) r.p_eps.push_back(p_epsilon(grids, e));

  r.in_range = {std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  r.in_range_with_self = r.in_range;
  r.out_range = r.in_range;
  for (std::size_t i = 0; i < grids.in.size(); ++i) {
    for (std::size_t j = 0; j < grids.in.size(); ++j) {
      const double s = grids.in[i][j];
      r.in_range_with_self.min = std::min(r.in_range_with_self.min, s);
      r.in_range_with_self.max = std::max(r.in_range_with_self.max, s);
      if (i != j) {
        r.in_range.min = std::min(r.in_range.min, s);
        r.in_range.max = std::max(r.in_range.max, s);
      }
    }
    for (double s : grids.out[i]) {
      r.out_range.min = std::min(r.out_range.min, s);
      r.out_range.max = std::max(r.out_range.max, s);
    }
  }
  r.in_pairs = grids.in.size() * grids.in.size();
  r.out_pairs = grids.in.size() * r.complement_size;
  return r;
}

nlohmann::json to_json(const PrecisionReport& r) {
  nlohmann::json p = nlohmann::json::object();
  for (std::size_t k = 0; k < r.epsilons.size(); ++k) {
    nlohmann::json key = r.epsilons[k];
    p[key.dump()] = r.p_eps[k];
  }
  return {{"topic", r.topic_name},
          {"topic_size", r.topic_size},
          {"complement_size", r.complement_size},
          {"epsilons", r.epsilons},
          {"p_eps", r.p_eps},
          {"p_eps_by_epsilon", p},
          {"in_sim_range", {r.in_range.min, r.in_range.max}},
          {"in_sim_range_with_self_pairs", {r.in_range_with_self.min, r.in_range_with_self.max}},
          {"self_similarity", 1.0},
          {"out_sim_range", {r.out_range.min, r.out_range.max}},
          {"in_pairs", r.in_pairs},
          {"out_pairs", r.out_pairs}};
}

PrecisionReport precision_report_from_json(const nlohmann::json& j) {
  try {
    PrecisionReport r;
    r.topic_name = j.at("topic").get<std::string>();
    r.topic_size = j.at("topic_size").get<std::size_t>();
    r.complement_size = j.at("complement_size").get<std::size_t>();
    r.epsilons = j.at("epsilons").get<std::vector<double>>();
    r.p_eps = j.at("p_eps").get<std::vector<double>>();
    auto range = [&](const char* key) {
      const auto& a = j.at(key);
      return SimRange{a.at(0).get<double>(), a.at(1).get<double>()};
    };
    r.in_range = range("in_sim_range");
    r.in_range_with_self = range("in_sim_range_with_self_pairs");
    r.out_range = range("out_sim_range");
    r.in_pairs = j.at("in_pairs").get<std::size_t>();
    r.out_pairs = j.at("out_pairs").get<std::size_t>();
    if (r.p_eps.size() != r.epsilons.size()) fail(ErrorKind::format, "p_eps/epsilons length mismatch");
    return r;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, std::string("malformed precision report: ") + e.what());
  }
}

namespace {

using Matrix = std::vector<std::vector<double>>;

struct EigenPair {
  double value;
  std::vector<double> vector;
  std::size_t iterations;
};

EigenPair power_iteration(const Matrix& c, std::uint64_t seed) {
  constexpr double kTolerance = 1e-10;
  constexpr std::size_t kMaxIterations = 10'000;
  const std::size_t dim = c.size();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<double> v(dim);
  for (double& x : v) x = normal(rng);
  auto normalise = [](std::vector<double>& x) {
    double n = 0.0;
    for (double e : x) n += e * e;
    n = std::sqrt(n);
    if (n > 0.0) {
      for (double& e : x) e /= n;
    }
    return n;
  };
  normalise(v);

  std::vector<double> w(dim);
  std::size_t it = 0;
  for (; it < kMaxIterations; ++it) {
    for (std::size_t r = 0; r < dim; ++r) {
      double s = 0.0;
      for (std::size_t k = 0; k < dim; ++k) s += c[r][k] * v[k];
      w[r] = s;
    }
    if (normalise(w) == 0.0) break;  // v lies in the null space
    double delta = 0.0;
    for (std::size_t r = 0; r < dim; ++r) delta = std::max(delta, std::abs(w[r] - v[r]));
    v.swap(w);
    if (delta < kTolerance) {
      ++it;
      break;
    }
  }
  double value = 0.0;
  for (std::size_t r = 0; r < dim; ++r) {
    double s = 0.0;
    for (std::size_t k = 0; k < dim; ++k) s += c[r][k] * v[k];
    value += v[r] * s;
  }
  // Largest-magnitude coordinate positive.
  std::size_t arg = 0;
  for (std::size_t r = 1; r < dim; ++r) {
    if (std::abs(v[r]) > std::abs(v[arg])) arg = r;
  }
  if (v[arg] < 0.0) {
    for (double& x : v) x = -x;
  }
  return {std::max(0.0, value), v, it};
}

}  // namespace

Pca2 pca2(const std::vector<std::vector<double>>& vectors) {
  if (vectors.size() < 3) fail(ErrorKind::insufficient_samples, "PCA needs at least 3 vectors");
  const std::size_t n = vectors.size();
  const std::size_t dim = vectors.front().size();
  if (dim == 0) fail(ErrorKind::degenerate_data, "PCA input has dimension 0");
  for (const auto& v : vectors) {
    if (v.size() != dim) fail(ErrorKind::dimension_mismatch, "PCA input has mixed dimensions");
  }
  std::vector<double> mean(dim, 0.0);
  for (const auto& v : vectors) {
    for (std::size_t d = 0; d < dim; ++d) mean[d] += v[d];
  }
  for (double& m : mean) m /= static_cast<double>(n);

  Matrix cov(dim, std::vector<double>(dim, 0.0));
  for (const auto& v : vectors) {
    for (std::size_t a = 0; a < dim; ++a) {
      const double da = v[a] - mean[a];
      for (std::size_t b = a; b < dim; ++b) cov[a][b] += da * (v[b] - mean[b]);
    }
  }
  double trace = 0.0;
  for (std::size_t a = 0; a < dim; ++a) {
    for (std::size_t b = a; b < dim; ++b) {
      cov[a][b] /= static_cast<double>(n - 1);
      cov[b][a] = cov[a][b];
    }
    trace += cov[a][a];
  }
  if (trace <= 0.0) fail(ErrorKind::degenerate_data, "all PCA input points are identical");

  Pca2 out;
  const EigenPair first = power_iteration(cov, 0x5eed1);
  Matrix deflated = cov;
  for (std::size_t a = 0; a < dim; ++a) {
    for (std::size_t b = 0; b < dim; ++b) deflated[a][b] -= first.value * first.vector[a] * first.vector[b];
  }
  const EigenPair second = power_iteration(deflated, 0x5eed2);

  out.eigenvalues = {first.value, second.value};
  out.explained_variance = {first.value / trace, second.value / trace};
  out.axes = {first.vector, second.vector};
  out.iterations[0] = first.iterations;
  out.iterations[1] = second.iterations;
  out.coordinates.reserve(n);
  for (const auto& v : vectors) {
    std::array<double, 2> xy{0.0, 0.0};
    for (std::size_t d = 0; d < dim; ++d) {
      xy[0] += (v[d] - mean[d]) * first.vector[d];
      xy[1] += (v[d] - mean[d]) * second.vector[d];
    }
    out.coordinates.push_back(xy);
  }
  return out;
}

}  // namespace hidegate
