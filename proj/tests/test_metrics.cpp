#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "hidegate/metrics.hpp"
#include "support/oracles.hpp"
#include "support/toy_assets.hpp"

using namespace hidegate;
using namespace hidegate::testing;

namespace {

Ranking docs(int n) {
  Ranking r;
  for (int i = 0; i < n; ++i) r.push_back("d" + std::to_string(i));
  return r;
}

EvalReport report_with(const std::string& metric_kind, double value) {
  EvalReport r;
  r.cutoffs = {25};
  r.per_query["q0"] = {};
  r.means[metric_name(metric_kind, 25)] = value;
  return r;
}

}  // namespace

TEST(Recall, CountsHitsOverRelevant) {
  const Ranking r = {"a", "x", "b", "y"};
  EXPECT_DOUBLE_EQ(recall_at_k(r, {"a", "b"}, 3), 1.0);
  EXPECT_DOUBLE_EQ(recall_at_k(r, {"a", "b"}, 2), 0.5);
  EXPECT_DOUBLE_EQ(recall_at_k(r, {"y", "z"}, 100), 0.5);  // z never ranked
  EXPECT_DOUBLE_EQ(recall_at_k(r, {"z"}, 4), 0.0);
}

TEST(Ndcg, HandCase) {
  const Ranking r = {"a", "x", "b"};
  const double expected = 1.5 / (1.0 + 1.0 / std::log2(3.0));
  EXPECT_NEAR(ndcg_at_k(r, {"a", "b"}, 3), 0.91973, 1e-5);
  EXPECT_NEAR(ndcg_at_k(r, {"a", "b"}, 3), expected, 1e-12);
  EXPECT_DOUBLE_EQ(ndcg_at_k({"a", "b", "x"}, {"a", "b"}, 3), 1.0);
  EXPECT_DOUBLE_EQ(ndcg_at_k({"x", "y", "a"}, {"a"}, 2), 0.0);
}

TEST(Ndcg, IdealUsesMinOfKAndRelevant) {
  // Three relevant, k = 1: a hit at rank 1 is already ideal.
  EXPECT_DOUBLE_EQ(ndcg_at_k({"a", "x"}, {"a", "b", "c"}, 1), 1.0);
}

TEST(Metrics, ArgumentErrors) {
  EXPECT_HG_ERROR(recall_at_k({"a"}, {}, 1), undefined_query);
  EXPECT_HG_ERROR(ndcg_at_k({"a"}, {}, 1), undefined_query);
  EXPECT_HG_ERROR(recall_at_k({"a"}, {"a"}, 0), config);
  EXPECT_HG_ERROR(ndcg_at_k({"a"}, {"a"}, 0), config);
}

TEST(Metrics, MatchNaiveOracleOnRandomInstances) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = std::uniform_int_distribution<int>(1, 40)(rng);
    Ranking r = docs(n);
    std::shuffle(r.begin(), r.end(), rng);
    std::set<std::string> rel;
    const int n_rel = std::uniform_int_distribution<int>(1, 8)(rng);
    for (int i = 0; i < n_rel; ++i) {
      rel.insert("d" + std::to_string(std::uniform_int_distribution<int>(0, n + 3)(rng)));
    }
    const std::size_t k = std::uniform_int_distribution<std::size_t>(1, n + 5)(rng);
    EXPECT_EQ(recall_at_k(r, rel, k), naive_recall(r, rel, k)) << "trial " << trial;
    EXPECT_EQ(ndcg_at_k(r, rel, k), naive_ndcg(r, rel, k)) << "trial " << trial;
  }
}

TEST(Metrics, NonDecreasingInKAndBounded) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    Ranking r = docs(30);
    std::shuffle(r.begin(), r.end(), rng);
    std::set<std::string> rel = {r[rng() % 30], r[rng() % 30], "missing"};
    double prev_recall = 0.0, prev_ndcg = 0.0;
    for (std::size_t k = 1; k <= 32; ++k) {
      const double rc = recall_at_k(r, rel, k);
      const double nd = ndcg_at_k(r, rel, k);
      EXPECT_GE(rc, prev_recall);
      // IDCG only stops growing once k covers every relevant document.
      if (k > rel.size()) EXPECT_GE(nd + 1e-15, prev_ndcg);
      EXPECT_GE(rc, 0.0);
      EXPECT_LE(rc, 1.0);
      EXPECT_GE(nd, 0.0);
      EXPECT_LE(nd, 1.0 + 1e-15);
      prev_recall = rc;
      prev_ndcg = nd;
    }
  }
}

TEST(Metrics, NdcgCanFallWhileIdealStillGrows) {
  const Ranking r = {"a", "x"};
  EXPECT_DOUBLE_EQ(ndcg_at_k(r, {"a", "b"}, 1), 1.0);
  EXPECT_NEAR(ndcg_at_k(r, {"a", "b"}, 2), 1.0 / (1.0 + 1.0 / std::log2(3.0)), 1e-15);
}

TEST(Metrics, NdcgIsOneExactlyWhenRelevantLeadTheRanking) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 200; ++trial) {
    Ranking r = docs(12);
    std::shuffle(r.begin(), r.end(), rng);
    const std::size_t n_rel = 1 + rng() % 4;
    const std::size_t k = 1 + rng() % 12;
    std::set<std::string> rel;
    for (std::size_t i = 0; i < n_rel; ++i) rel.insert(r[(i * 5 + trial) % 12]);
    bool ideal = true;
    for (std::size_t i = 0; i < std::min(k, n_rel); ++i) ideal = ideal && rel.count(r[i]);
    EXPECT_EQ(std::abs(ndcg_at_k(r, rel, k) - 1.0) < 1e-12, ideal) << "trial " << trial;
  }
}

TEST(Metrics, PermutingIrrelevantTailIsInvisible) {
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 100; ++trial) {
    Ranking r = docs(20);
    std::shuffle(r.begin(), r.end(), rng);
    const std::set<std::string> rel = {r[2], r[7]};
    Ranking p = r;
    std::shuffle(p.begin() + 8, p.end(), rng);
    for (std::size_t k : {1, 5, 10, 20}) {
      EXPECT_EQ(recall_at_k(r, rel, k), recall_at_k(p, rel, k));
      EXPECT_EQ(ndcg_at_k(r, rel, k), ndcg_at_k(p, rel, k));
    }
  }
}

TEST(Evaluate, MacroMeansAndSkippedQueries) {
  const std::map<std::string, Ranking> rankings = {{"q1", {"a", "b"}}, {"q2", {"x", "c"}}};
  const Qrels qrels = {{"q1", {"a"}}, {"q2", {"c"}}, {"q3", {"z"}}, {"q4", {}}};
  const auto rep = evaluate(rankings, qrels, {1, 2});
  EXPECT_EQ(rep.per_query.size(), 2u);
  EXPECT_EQ(rep.skipped_queries, (std::vector<std::string>{"q3", "q4"}));
  EXPECT_DOUBLE_EQ(rep.means.at("Recall@1"), 0.5);
  EXPECT_DOUBLE_EQ(rep.means.at("Recall@2"), 1.0);
  EXPECT_DOUBLE_EQ(rep.means.at("NDCG@2"), (1.0 + 1.0 / std::log2(3.0)) / 2.0);
  EXPECT_EQ(rep.metric_names(),
            (std::vector<std::string>{"NDCG@1", "NDCG@2", "Recall@1", "Recall@2"}));
  const auto j = to_json(rep);
  EXPECT_EQ(j["queries_evaluated"], 2);
  EXPECT_EQ(j["averaging"], "macro");
  EXPECT_HG_ERROR(evaluate(rankings, qrels, {}), config);
}

TEST(Drop, TableRowIsSufficient) {
  const auto d = drop_report(report_with("Recall", 0.358), report_with("Recall", 0.285));
  const auto& row = *std::find_if(d.rows.begin(), d.rows.end(),
                                  [](const DropRow& r) { return r.metric == "Recall@25"; });
  EXPECT_NEAR(row.drop, 0.073, 1e-12);
  EXPECT_NEAR(row.relative_drop, 0.073 / 0.358, 1e-12);
  EXPECT_FALSE(row.insufficient);
}

TEST(Drop, EqualValuesFlaggedAndBackfireIsNegative) {
  const auto same = drop_report(report_with("NDCG", 0.4), report_with("NDCG", 0.4));
  for (const auto& r : same.rows) {
    EXPECT_EQ(r.drop, 0.0);
    EXPECT_TRUE(r.insufficient);
  }
  const auto back = drop_report(report_with("NDCG", 0.30), report_with("NDCG", 0.33));
  EXPECT_NEAR(back.rows.front().drop, -0.03, 1e-12);
  EXPECT_TRUE(back.rows.front().insufficient);
}

TEST(Drop, InsufficientBoundary) {
  EXPECT_TRUE(is_insufficient(0.0049999));
  EXPECT_FALSE(is_insufficient(0.005));
  EXPECT_FALSE(is_insufficient(0.0050001));
  EXPECT_TRUE(is_insufficient(-1.0));
  // Decimal inputs landing on the boundary are not flagged by float error.
  const auto d = drop_report(report_with("Recall", 0.358), report_with("Recall", 0.353));
  EXPECT_FALSE(d.rows.back().insufficient);
  const auto e = drop_report(report_with("Recall", 0.358), report_with("Recall", 0.3531));
  EXPECT_TRUE(e.rows.back().insufficient);
}

TEST(Drop, MismatchedReports) {
  auto a = report_with("Recall", 0.5);
  auto b = report_with("Recall", 0.4);
  b.per_query["q9"] = {};
  EXPECT_HG_ERROR(drop_report(a, b), mismatched_queries);
  auto c = report_with("Recall", 0.4);
  c.cutoffs = {50};
  EXPECT_HG_ERROR(drop_report(a, c), mismatched_queries);
}

TEST(Drop, TextAndCsvRendering) {
  const auto d = drop_report(report_with("Recall", 0.358), report_with("Recall", 0.356));
  const auto text = to_text(d);
  EXPECT_NE(text.find("Recall@25"), std::string::npos);
  EXPECT_NE(text.find("0.3580"), std::string::npos);
  EXPECT_NE(text.find("insufficient"), std::string::npos);
  const auto csv = to_csv(d);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "metric,before,after,drop,relative_drop,insufficient");
  EXPECT_NE(csv.find("Recall@25,0.358,0.356,"), std::string::npos);
  EXPECT_EQ(to_json(d)["insufficient_threshold"], 0.005);
}

TEST(Qrels, LoadsJsonl) {
  const auto dir = fresh_dir("qrels");
  write_text(dir / "q.jsonl",
             "{\"query_id\":\"q1\",\"doc_id\":\"a\"}\n{\"query_id\":\"q1\",\"doc_id\":\"b\"}\n"
             "{\"query_id\":\"q2\",\"doc_id\":\"a\"}\n");
  const auto q = load_qrels(dir / "q.jsonl");
  EXPECT_EQ(q.at("q1"), (std::set<std::string>{"a", "b"}));
  EXPECT_EQ(q.at("q2").size(), 1u);
  write_text(dir / "bad.jsonl", "{\"query_id\":\"q1\"}\n");
  EXPECT_HG_ERROR(load_qrels(dir / "bad.jsonl"), format);
  EXPECT_HG_ERROR(load_qrels(dir / "none.jsonl"), io);
}
