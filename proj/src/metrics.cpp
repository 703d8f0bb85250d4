#include "hidegate/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "hidegate/error.hpp"
#include "jsonl.hpp"

namespace hidegate {

namespace {

void check_args(const std::set<std::string>& relevant, std::size_t k) {
  if (k < 1) fail(ErrorKind::config, "cutoff k must be >= 1");
  if (relevant.empty()) fail(ErrorKind::undefined_query, "query has no relevant documents");
}

std::string format_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

Qrels load_qrels(const std::filesystem::path& path) {
  Qrels qrels;
  const std::string source = path.string();
  jsonl::for_each(jsonl::read_file(path), source, [&](std::size_t line, const nlohmann::json& j) {
    const std::string where = source + ":" + std::to_string(line);
    qrels[jsonl::string_field(j, "query_id", where)].insert(jsonl::string_field(j, "doc_id", where));
  });
  return qrels;
}

double recall_at_k(const Ranking& ranking, const std::set<std::string>& relevant, std::size_t k) {
  check_args(relevant, k);
  std::size_t hits = 0;
  const std::size_t n = std::min(k, ranking.size());
  for (std::size_t i = 0; i < n; ++i) hits += relevant.count(ranking[i]);
  return static_cast<double>(hits) / static_cast<double>(relevant.size());
}

double ndcg_at_k(const Ranking& ranking, const std::set<std::string>& relevant, std::size_t k) {
  check_args(relevant, k);
  double dcg = 0.0;
  const std::size_t n = std::min(k, ranking.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (relevant.count(ranking[i])) dcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
  }
  double idcg = 0.0;
  const std::size_t ideal = std::min(k, relevant.size());
  for (std::size_t i = 0; i < ideal; ++i) idcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
  return dcg / idcg;
}

std::string metric_name(const std::string& kind, std::size_t k) {
  return kind + "@" + std::to_string(k);
}

std::vector<std::string> EvalReport::metric_names() const {
  std::vector<std::string> names;
  for (const char* kind : {"NDCG", "Recall"}) {
    for (std::size_t k : cutoffs) names.push_back(metric_name(kind, k));
  }
  return names;
}

EvalReport evaluate(const std::map<std::string, Ranking>& rankings, const Qrels& qrels,
                    const std::vector<std::size_t>& cutoffs) {
  if (cutoffs.empty()) fail(ErrorKind::config, "at least one cutoff is required");
  EvalReport report;
  report.cutoffs = cutoffs;
  std::map<std::string, double> sums;
  std::size_t counted = 0;
  for (const auto& [qid, relevant] : qrels) {
    auto it = rankings.find(qid);
    if (relevant.empty() || it == rankings.end()) {
      report.skipped_queries.push_back(qid);
      continue;
    }
    auto& row = report.per_query[qid];
    for (std::size_t k : cutoffs) {
      row[metric_name("Recall", k)] = recall_at_k(it->second, relevant, k);
      row[metric_name("NDCG", k)] = ndcg_at_k(it->second, relevant, k);
    }
    for (const auto& [name, v] : row) sums[name] += v;
    ++counted;
  }
  for (const auto& [name, s] : sums) report.means[name] = s / static_cast<double>(counted);
  return report;
}

// Rounded to 1e-12 first so a decimal drop such as 0.358 - 0.353 is not
// flagged because of binary representation error.
bool is_insufficient(double absolute_drop) noexcept {
  return std::round(absolute_drop * 1e12) / 1e12 < kInsufficientDrop;
}

DropReport drop_report(const EvalReport& before, const EvalReport& after) {
  if (before.cutoffs != after.cutoffs) {
    fail(ErrorKind::mismatched_queries, "reports use different cutoffs");
  }
  std::vector<std::string> qb, qa;
  for (const auto& [q, _] : before.per_query) qb.push_back(q);
  for (const auto& [q, _] : after.per_query) qa.push_back(q);
  if (qb != qa) fail(ErrorKind::mismatched_queries, "reports cover different query sets");

  DropReport report;
  for (const auto& name : before.metric_names()) {
    auto b = before.means.find(name);
    auto a = after.means.find(name);
    const double vb = b == before.means.end() ? 0.0 : b->second;
    const double va = a == after.means.end() ? 0.0 : a->second;
    DropRow row{name, vb, va, vb - va, vb > 0.0 ? (vb - va) / vb : 0.0, false};
    row.insufficient = is_insufficient(row.drop);
    report.rows.push_back(row);
  }
  return report;
}

nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json j;
  j["cutoffs"] = report.cutoffs;
  j["averaging"] = "macro";
  j["means"] = report.means;
  j["per_query"] = report.per_query;
  j["queries_evaluated"] = report.per_query.size();
  j["skipped_queries"] = report.skipped_queries;
  return j;
}

nlohmann::json to_json(const DropReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"metric", r.metric},
                    {"before", r.before},
                    {"after", r.after},
                    {"drop", r.drop},
                    {"relative_drop", r.relative_drop},
                    {"insufficient", r.insufficient}});
  }
  return {{"rows", rows}, {"insufficient_threshold", kInsufficientDrop}};
}

std::string to_text(const DropReport& report) {
  std::vector<std::vector<std::string>> cells = {
      {"metric", "before", "after", "drop", "rel.drop", "flag"}};
  for (const auto& r : report.rows) {
    cells.push_back({r.metric, format_value(r.before), format_value(r.after), format_value(r.drop),
                     format_value(r.relative_drop), r.insufficient ? "insufficient" : ""});
  }
  std::vector<std::size_t> width(cells.front().size(), 0);
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream out;
  for (const auto& row : cells) {
    std::string line;
    for (std::size_t c = 0; c < row.size(); ++c) {
      std::string cell = row[c];
      if (c + 1 < row.size()) cell.resize(width[c] + 2, ' ');
      line += cell;
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out << line << '\n';
  }
  return out.str();
}

std::string to_csv(const DropReport& report) {
  std::ostringstream out;
  out << "metric,before,after,drop,relative_drop,insufficient\n";
  for (const auto& r : report.rows) {
    nlohmann::json b = r.before, a = r.after, d = r.drop, rd = r.relative_drop;
    out << r.metric << ',' << b.dump() << ',' << a.dump() << ',' << d.dump() << ',' << rd.dump()
        << ',' << (r.insufficient ? 1 : 0) << '\n';
  }
  return out.str();
}

}  // namespace hidegate
