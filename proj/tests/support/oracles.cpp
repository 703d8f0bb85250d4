#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Dense>

namespace hidegate::testing {

std::vector<std::string> bpe_oracle(const std::string& text, const std::vector<RawMerge>& merges) {
  std::vector<std::string> parts;
  for (char c : text) parts.emplace_back(1, c);
  while (parts.size() > 1) {
    std::size_t best_rank = std::numeric_limits<std::size_t>::max();
    std::size_t best_pos = 0;
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
      for (std::size_t r = 0; r < merges.size() && r < best_rank; ++r) {
        if (merges[r].first == parts[i] && merges[r].second == parts[i + 1]) {
          best_rank = r;
          best_pos = i;
          break;
        }
      }
    }
    if (best_rank == std::numeric_limits<std::size_t>::max()) break;
    parts[best_pos] += parts[best_pos + 1];
    parts.erase(parts.begin() + static_cast<std::ptrdiff_t>(best_pos) + 1);
  }
  return parts;
}

double naive_cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t d = 0; d < a.size(); ++d) {
    dot += a[d] * b[d];
    na += a[d] * a[d];
    nb += b[d] * b[d];
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

double naive_pairwise_sim(const std::vector<std::vector<double>>& a,
                          const std::vector<std::vector<double>>& b) {
  double s = 0;
  for (const auto& x : a) {
    for (const auto& y : b) s += naive_cosine(x, y);
  }
  return s / static_cast<double>(a.size() * b.size());
}

std::vector<double> finite_difference_grad(std::vector<std::vector<double>> a,
                                           const std::vector<std::vector<double>>& b,
                                           std::size_t i, double h) {
  std::vector<double> g(a[i].size());
  for (std::size_t d = 0; d < g.size(); ++d) {
    const double keep = a[i][d];
    a[i][d] = keep + h;
    const double up = naive_pairwise_sim(a, b);
    a[i][d] = keep - h;
    const double down = naive_pairwise_sim(a, b);
    a[i][d] = keep;
    g[d] = (up - down) / (2 * h);
  }
  return g;
}

double naive_recall(const std::vector<std::string>& ranking, const std::set<std::string>& relevant,
                    std::size_t k) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ranking.size() && i < k; ++i) {
    if (relevant.find(ranking[i]) != relevant.end()) hits++;
  }
  return double(hits) / double(relevant.size());
}

double naive_ndcg(const std::vector<std::string>& ranking, const std::set<std::string>& relevant,
                  std::size_t k) {
  double dcg = 0;
  for (std::size_t rank = 1; rank <= ranking.size() && rank <= k; ++rank) {
    if (relevant.find(ranking[rank - 1]) != relevant.end()) dcg += 1.0 / std::log2(double(rank) + 1.0);
  }
  double idcg = 0;
  for (std::size_t rank = 1; rank <= relevant.size() && rank <= k; ++rank) {
    idcg += 1.0 / std::log2(double(rank) + 1.0);
  }
  return dcg / idcg;
}

double naive_p_epsilon(const std::vector<std::vector<double>>& topic,
                       const std::vector<std::vector<double>>& complement, double epsilon) {
  std::size_t passing = 0;
  for (const auto& outsider : complement) {
    bool pass = true;
    for (std::size_t i = 0; i < topic.size() && pass; ++i) {
      for (std::size_t j = 0; j < topic.size() && pass; ++j) {
        if (i == j) continue;
        for (std::size_t k = 0; k < topic.size() && pass; ++k) {
          if (!(naive_cosine(topic[i], topic[j]) >= naive_cosine(topic[k], outsider) + epsilon)) pass = false;
        }
      }
    }
    if (pass) passing++;
  }
  return double(passing) / double(complement.size());
}

std::vector<std::string> full_sort_ranking(const CorpusIndex& index, const std::vector<float>& query,
                                           std::size_t k) {
  double qn = 0;
  for (float x : query) qn += double(x) * x;
  qn = std::sqrt(qn);
  std::vector<std::pair<double, std::string>> scored;
  for (std::size_t r = 0; r < index.size(); ++r) {
    const auto row = index.unit_vector(r);
    double s = 0;
    for (std::size_t d = 0; d < row.size(); ++d) s += double(row[d]) * (query[d] / qn);
    scored.emplace_back(s, index.id(r));
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  std::vector<std::string> out;
  for (std::size_t r = 0; r < scored.size() && r < k; ++r) out.push_back(scored[r].second);
  return out;
}

std::array<double, 2> dense_top2_eigenvalues(const std::vector<std::vector<double>>& vectors) {
  const auto n = static_cast<Eigen::Index>(vectors.size());
  const auto dim = static_cast<Eigen::Index>(vectors.front().size());
  Eigen::MatrixXd x(n, dim);
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index c = 0; c < dim; ++c) x(r, c) = vectors[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
  }
  const Eigen::MatrixXd centered = x.rowwise() - x.colwise().mean();
  const Eigen::MatrixXd cov = centered.transpose() * centered / double(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  const auto& ev = solver.eigenvalues();
  return {ev(dim - 1), dim >= 2 ? ev(dim - 2) : 0.0};
}

}  // namespace hidegate::testing
