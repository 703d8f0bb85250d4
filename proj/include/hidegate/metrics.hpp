#pragma once

// Recall@k / NDCG@k with binary relevance, and before/after drop reports.

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

namespace hidegate {

using Ranking = std::vector<std::string>;           // doc ids, best first
using Qrels = std::map<std::string, std::set<std::string>>;  // query -> relevant docs

// JSONL {"query_id", "doc_id"}.
Qrels load_qrels(const std::filesystem::path& path);

double recall_at_k(const Ranking& ranking, const std::set<std::string>& relevant, std::size_t k);
// DCG uses 1/log2(rank + 1) with 1-based ranks; IDCG places min(k, |relevant|)
// relevant documents on top.
double ndcg_at_k(const Ranking& ranking, const std::set<std::string>& relevant, std::size_t k);

struct EvalReport {
  std::vector<std::size_t> cutoffs;
  // metric name ("Recall@25", "NDCG@50", ...) -> macro mean over queries
  std::map<std::string, double> means;
  // query id -> metric name -> value
  std::map<std::string, std::map<std::string, double>> per_query;
  std::vector<std::string> skipped_queries;  // empty relevant set or no ranking

  std::vector<std::string> metric_names() const;
};

std::string metric_name(const std::string& kind, std::size_t k);

EvalReport evaluate(const std::map<std::string, Ranking>& rankings, const Qrels& qrels,
                    const std::vector<std::size_t>& cutoffs);

// Absolute drops below this are flagged as an insufficient attack.
inline constexpr double kInsufficientDrop = 0.005;

struct DropRow {
  std::string metric;
  double before;
  double after;
  double drop;           // before - after; negative when the attack backfired
  double relative_drop;  // drop / before, 0 when before is 0
  bool insufficient;
};

struct DropReport {
  std::vector<DropRow> rows;
};

bool is_insufficient(double absolute_drop) noexcept;
DropReport drop_report(const EvalReport& before, const EvalReport& after);

nlohmann::json to_json(const EvalReport& report);
nlohmann::json to_json(const DropReport& report);
// Aligned columns for terminal output.
std::string to_text(const DropReport& report);
std::string to_csv(const DropReport& report);

}  // namespace hidegate
