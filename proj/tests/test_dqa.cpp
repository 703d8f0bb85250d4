#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "hidegate/dqa.hpp"
#include "support/toy_assets.hpp"

using namespace hidegate;
using namespace hidegate::testing;

namespace {

// 256 byte tokens in five dimensions. A few rows are placed by hand:
//   'A' = e1, 'B' = (1,1,1,1,0): within-query cosine 1/2 exactly
//   'd' = (1,7,-7,-1,0): cosines 0.1 with 'A' and 0 with 'B'
//   'e' = (1,-2,-2,4,0): cosines 0.2 with 'A' and 0.1 with 'B'
//   '*' = -'d', so [d, *] has zero pooled similarity to anything
struct World {
  Tokenizer tokenizer = toy_tokenizer({});
  EmbeddingMatrix matrix;

  World() {
    std::mt19937_64 rng(77);
    std::normal_distribution<float> normal;
    std::vector<std::vector<float>> rows(256, std::vector<float>(5));
    for (auto& r : rows) {
      for (float& x : r) x = normal(rng);
    }
    rows['A'] = {1, 0, 0, 0, 0};
    rows['B'] = {1, 1, 1, 1, 0};
    rows['d'] = {1, 7, -7, -1, 0};
    rows['e'] = {1, -2, -2, 4, 0};
    rows['*'] = {-1, -7, 7, 1, 0};
    matrix = matrix_from_rows(rows);
  }
};

TokenSequence ids(std::initializer_list<TokenId> l) { return TokenSequence{std::vector<TokenId>(l)}; }

AttackState manual_state(const TokenSequence& doc, const std::vector<TokenSequence>& queries,
                         AttackMode mode = AttackMode::dqa) {
  AttackState s;
  s.mode = mode;
  s.doc_reduce = mode == AttackMode::dqa ? Reduce::max : Reduce::weighted_sum;
  s.doc.sequence = doc;
  s.doc.positions = {doc.size() - 1};
  s.prefix_length = doc.size() - 1;
  for (const auto& q : queries) {
    OptimSpan span{q, {}};
    for (std::size_t i = 0; i < q.size(); ++i) span.positions.push_back(i);
    s.queries.push_back(span);
  }
  return s;
}

AttackConfig small_config(std::size_t n_samples) {
  AttackConfig c;
  c.m = 3;
  c.n_samples = n_samples;
  c.rounds = 4;
  return c;
}

std::vector<TokenSequence> random_samples(std::size_t n, std::mt19937_64& rng) {
  std::vector<TokenSequence> out;
  std::uniform_int_distribution<std::size_t> len(2, 6);
  std::uniform_int_distribution<TokenId> letter('a', 'z');
  for (std::size_t k = 0; k < n; ++k) {
    TokenSequence s;
    for (std::size_t i = len(rng); i > 0; --i) s.ids.push_back(letter(rng));
    out.push_back(s);
  }
  return out;
}

}  // namespace

TEST(Init, AppendsBudgetOfInitTokens) {
  World w;
  AttackConfig c = small_config(2);
  c.m = 10;
  const auto doc = w.tokenizer.encode("some document");
  const auto state = init_attack(doc, {ids({'A'}), ids({'B', 'A', 'B'})}, c, w.tokenizer, w.matrix);
  EXPECT_EQ(state.doc.sequence.size(), doc.size() + 10);
  EXPECT_EQ(state.prefix_length, doc.size());
  EXPECT_EQ(state.injected(), std::vector<TokenId>(10, '*'));
  ASSERT_EQ(state.doc.positions.size(), 10u);
  EXPECT_EQ(state.doc.positions.front(), doc.size());
  EXPECT_EQ(state.queries[1].positions, (std::vector<std::size_t>{0, 1, 2}));
}

TEST(Init, Errors) {
  World w;
  const auto doc = ids({'d'});
  AttackConfig c = small_config(1);
  c.m = 0;
  EXPECT_HG_ERROR(init_attack(doc, {ids({'A'})}, c, w.tokenizer, w.matrix), config);
  c = small_config(1);
  c.init_piece = "**";
  EXPECT_HG_ERROR(init_attack(doc, {ids({'A'})}, c, w.tokenizer, w.matrix), init);
  c = small_config(2);
  EXPECT_HG_ERROR(init_attack(doc, {ids({'A'}), TokenSequence{}}, c, w.tokenizer, w.matrix), empty_input);
  EXPECT_HG_ERROR(init_attack(doc, {ids({'A'})}, c, w.tokenizer, w.matrix), config);
  EXPECT_HG_ERROR(init_attack(TokenSequence{}, {ids({'A'}), ids({'B'})}, c, w.tokenizer, w.matrix), empty_input);
  c.epsilon_g = 1.5;
  EXPECT_HG_ERROR(init_attack(doc, {ids({'A'}), ids({'B'})}, c, w.tokenizer, w.matrix), config);
  c = small_config(2);
  c.rounds = 0;
  EXPECT_HG_ERROR(init_attack(doc, {ids({'A'}), ids({'B'})}, c, w.tokenizer, w.matrix), config);
}

TEST(Init, SampleLengthsAreFrozen) {
  World w;
  std::mt19937_64 rng(1);
  const auto samples = random_samples(4, rng);
  AttackConfig c = small_config(4);
  AttackState state;
  run_attack("x", w.tokenizer.encode("hello there"), samples, c, w.tokenizer, w.matrix, state);
  for (std::size_t k = 0; k < samples.size(); ++k) EXPECT_EQ(state.queries[k].sequence.size(), samples[k].size());
}

TEST(Losses, MaxAndSumOfThreeSimilarities) {
  // Query rows at cosines 0.2, 0.7, -0.1 from the document row.
  std::vector<std::vector<float>> rows{{1, 0}};
  for (double c : {0.2, 0.7, -0.1}) rows.push_back({static_cast<float>(c), static_cast<float>(std::sqrt(1 - c * c))});
  const auto m = matrix_from_rows(rows);
  const std::vector<TokenSequence> queries{ids({1}), ids({2}), ids({3})};

  const auto dqa = manual_state(ids({0}), queries, AttackMode::dqa);
  EXPECT_NEAR(loss_d(dqa, m), 0.7, 1e-7);
  EXPECT_NEAR(loss_s(dqa, m), -0.8, 1e-7);

  const auto sgcg = manual_state(ids({0}), queries, AttackMode::sgcg);
  EXPECT_NEAR(loss_d(sgcg, m), 0.8, 1e-7);
  EXPECT_HG_ERROR(loss_s(sgcg, m), mode);
}

TEST(Losses, SingleAndIdenticalQueries) {
  World w;
  const auto single = manual_state(ids({'e'}), {ids({'A'})});
  EXPECT_DOUBLE_EQ(loss_d(single, w.matrix), 0.2);
  EXPECT_DOUBLE_EQ(loss_s(single, w.matrix), -0.2);

  const auto same = manual_state(ids({'e', 'd'}), {ids({'A', 'B'}), ids({'A', 'B'}), ids({'A', 'B'})});
  const auto one = manual_state(ids({'e', 'd'}), {ids({'A', 'B'})});
  EXPECT_EQ(loss_d(same, w.matrix), loss_d(one, w.matrix));
}

TEST(Transfer, HoldsBelowAndAtTheBoundary) {
  World w;
  const std::vector<TokenSequence> queries{ids({'A'}), ids({'B'})};
  const auto below = check_transfer_condition(manual_state(ids({'d'}), queries), 0.3, w.matrix);
  EXPECT_DOUBLE_EQ(below.max_doc_query_sim, 0.1);
  EXPECT_DOUBLE_EQ(below.min_within_query_sim, 0.5);
  EXPECT_TRUE(below.holds);

  const auto boundary = check_transfer_condition(manual_state(ids({'e'}), queries), 0.3, w.matrix);
  EXPECT_DOUBLE_EQ(boundary.max_doc_query_sim, 0.2);
  EXPECT_TRUE(boundary.holds);

  const auto strict = check_transfer_condition(manual_state(ids({'e'}), queries), 0.31, w.matrix);
  EXPECT_FALSE(strict.holds);
}

TEST(Transfer, FullMarginFailsUnlessBelowMinusOne) {
  World w;
  const std::vector<TokenSequence> queries{ids({'A'}), ids({'B'})};
  EXPECT_FALSE(check_transfer_condition(manual_state(ids({'d'}), queries), 1.0, w.matrix).holds);
  EXPECT_FALSE(check_transfer_condition(manual_state(ids({'d', '*'}), queries), 1.0, w.matrix).holds);
}

TEST(Transfer, NeedsTwoSamples) {
  World w;
  EXPECT_HG_ERROR(check_transfer_condition(manual_state(ids({'d'}), {ids({'A'})}), 0.1, w.matrix),
                  insufficient_samples);
}

TEST(Round, SgcgKeepsQueriesBitIdentical) {
  World w;
  std::mt19937_64 rng(2);
  const auto samples = random_samples(5, rng);
  AttackConfig c = small_config(5);
  c.mode = AttackMode::sgcg;
  auto state = init_attack(w.tokenizer.encode("a document"), samples, c, w.tokenizer, w.matrix);
  for (int r = 0; r < 4; ++r) {
    run_round(state, c, w.matrix);
    for (std::size_t k = 0; k < samples.size(); ++k) EXPECT_EQ(state.queries[k].sequence, samples[k]);
  }
  EXPECT_TRUE(state.loss_trace_s.empty());
  EXPECT_EQ(state.loss_trace_d.size(), 4u);
}

TEST(Round, SgcgEqualsRepeatedExactStepsOnTheSum) {
  World w;
  std::mt19937_64 rng(3);
  const auto samples = random_samples(4, rng);
  AttackConfig c = small_config(4);
  c.mode = AttackMode::sgcg;
  c.rounds = 6;
  const auto doc = w.tokenizer.encode("plain text");
  const auto result = run_attack("x", doc, samples, c, w.tokenizer, w.matrix);

  auto state = init_attack(doc, samples, c, w.tokenizer, w.matrix);
  Objective sum;
  for (const auto& s : samples) sum.targets.push_back(embed_sequence(s, w.matrix));
  std::mt19937_64 step_rng(0);
  for (int r = 0; r < 6; ++r) gcg_step(state.doc, sum, GcgConfig{}, w.matrix, step_rng);
  EXPECT_EQ(result.perturbed_ids, state.doc.sequence.ids);
}

TEST(Round, DocumentPhaseIsMonotoneWithinEachRound) {
  World w;
  std::mt19937_64 rng(4);
  const auto samples = random_samples(6, rng);
  AttackConfig c = small_config(6);
  c.doc_steps_per_round = 3;
  c.query_steps_per_round = 2;
  auto state = init_attack(w.tokenizer.encode("another document here"), samples, c, w.tokenizer, w.matrix);
  for (int r = 0; r < 5; ++r) {
    const double before = loss_d(state, w.matrix);
    run_round(state, c, w.matrix);
    const auto& losses = state.doc_phase_losses.back();
    ASSERT_EQ(losses.size(), 3u);
    EXPECT_LE(losses[0], before);
    for (std::size_t s = 1; s < losses.size(); ++s) EXPECT_LE(losses[s], losses[s - 1]);
    for (const auto& per_query : state.query_phase_sims.back()) {
      ASSERT_EQ(per_query.size(), 2u);
      EXPECT_GE(per_query[1], per_query[0]);
    }
  }
  EXPECT_EQ(state.loss_trace_s.size(), 5u);
}

TEST(Attack, OneRoundEqualsOneExactStep) {
  const auto m = matrix_from_rows({{1, 0}, {0, 1}, {-1, 0}});
  const Tokenizer tok = toy_tokenizer({});
  AttackConfig c;
  c.m = 1;
  c.n_samples = 1;
  c.rounds = 1;
  c.init_piece = std::string(1, '\x01');
  const auto result = run_attack("t", ids({0}), {ids({0})}, c, tok, m);

  OptimSpan span{ids({0, 1}), {1}};
  Objective obj;
  obj.targets = {embed_sequence(ids({0}), m)};
  obj.reduce = Reduce::max;
  std::mt19937_64 rng(0);
  const auto step = gcg_step(span, obj, GcgConfig{}, m, rng);
  EXPECT_EQ(result.perturbed_ids, span.sequence.ids);
  EXPECT_EQ(result.injected_ids, (std::vector<TokenId>{2}));
  ASSERT_EQ(result.loss_trace_d.size(), 1u);
  EXPECT_NEAR(result.loss_trace_d[0], step.loss, 1e-15);
  EXPECT_EQ(result.rounds_run, 1u);
}

TEST(Attack, EarlyStopWhenConditionAlreadyHolds) {
  World w;
  auto m = w.matrix;
  for (TokenId t = 0; t < 256; ++t) m.set_eligible(t, t == '*');
  AttackConfig c;
  c.m = 1;
  c.n_samples = 2;
  c.rounds = 5;
  c.epsilon_g = 0.0;
  const auto stopped = run_attack("t", ids({'d'}), {ids({'A'}), ids({'B'})}, c, w.tokenizer, m);
  EXPECT_EQ(stopped.rounds_run, 1u);
  EXPECT_EQ(stopped.transfer_met_rounds, (std::vector<std::size_t>{1}));
  ASSERT_TRUE(stopped.final_transfer);
  EXPECT_TRUE(stopped.final_transfer->holds);

  c.epsilon_g.reset();
  const auto full = run_attack("t", ids({'d'}), {ids({'A'}), ids({'B'})}, c, w.tokenizer, m);
  EXPECT_EQ(full.rounds_run, 5u);
  EXPECT_EQ(full.transfer_met_rounds.size(), 5u);
}

TEST(Attack, TwoClusterVocabularyDescends) {
  // Letters cluster around +e1, every other byte around -e1. Documents,
  // queries and the init piece are letters, so descent means moving the
  // injected slots into the far cluster.
  std::mt19937_64 rng(5);
  std::normal_distribution<float> normal;
  std::vector<std::vector<float>> rows(256, std::vector<float>(8));
  for (std::size_t t = 0; t < 256; ++t) {
    const bool letter = t >= 'a' && t <= 'z';
    for (float& x : rows[t]) x = 0.5f * normal(rng);
    rows[t][0] += letter ? 1.0f : -1.0f;
  }
  const auto m = matrix_from_rows(rows);
  const Tokenizer tok = toy_tokenizer({});
  std::uniform_int_distribution<TokenId> letter('a', 'z');
  int descended = 0;
  for (int trial = 0; trial < 100; ++trial) {
    TokenSequence doc;
    for (int i = 0; i < 8; ++i) doc.ids.push_back(letter(rng));
    std::vector<TokenSequence> samples;
    for (int k = 0; k < 5; ++k) {
      TokenSequence q;
      for (int i = 0; i < 4; ++i) q.ids.push_back(letter(rng));
      samples.push_back(q);
    }
    AttackConfig c = small_config(5);
    c.rounds = 10;
    c.init_piece = "q";
    c.rng_seed = static_cast<std::uint64_t>(trial);
    const auto r = run_attack("x", doc, samples, c, tok, m);
    if (r.loss_trace_d.back() < r.initial_loss_d) ++descended;
  }
  EXPECT_GE(descended, 95);
}

TEST(Attack, IdenticalSeedsGiveByteIdenticalResults) {
  World w;
  std::mt19937_64 rng(6);
  const auto samples = random_samples(6, rng);
  AttackConfig c = small_config(6);
  c.rounds = 5;
  c.rng_seed = 1234;
  c.epsilon_g = 0.05;
  c.gcg.mode = ScoringMode::gradient;
  c.gcg.topk_candidates = 8;
  c.gcg.batch_samples = 6;
  const auto doc = w.tokenizer.encode("determinism check");
  const auto a = to_json_line(run_attack("x", doc, samples, c, w.tokenizer, w.matrix));
  const auto b = to_json_line(run_attack("x", doc, samples, c, w.tokenizer, w.matrix));
  EXPECT_EQ(a, b);

  const auto j = nlohmann::json::parse(a);
  for (const char* key : {"doc_id", "injected_ids", "injected_text", "loss_trace_d", "transfer_met_rounds",
                          "config", "seed"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  EXPECT_EQ(j["config"]["mode"], "dqa");
  EXPECT_EQ(j["config"]["doc_reduce"], "max");
  EXPECT_EQ(j["seed"], 1234);
}

TEST(Attack, PerturbedTextIsDocumentPlusInjection) {
  World w;
  std::mt19937_64 rng(7);
  const auto samples = random_samples(3, rng);
  const auto doc_text = std::string("the original words");
  const auto r = run_attack("x", w.tokenizer.encode(doc_text), samples, small_config(3), w.tokenizer, w.matrix);
  EXPECT_EQ(r.injected_ids.size(), 3u);
  if (!r.lossy_text) EXPECT_EQ(r.perturbed_text, doc_text + r.injected_text);
  EXPECT_EQ(std::vector<TokenId>(r.perturbed_ids.end() - 3, r.perturbed_ids.end()), r.injected_ids);
}

TEST(Config, ModeNamesAndDefaults) {
  EXPECT_EQ(attack_mode_from_string("dqa"), AttackMode::dqa);
  EXPECT_EQ(attack_mode_from_string(to_string(AttackMode::sgcg)), AttackMode::sgcg);
  EXPECT_HG_ERROR(attack_mode_from_string("pgd"), config);
  AttackConfig c;
  EXPECT_EQ(c.m, 10u);
  EXPECT_EQ(c.n_samples, 10u);
  EXPECT_EQ(c.document_reduce(), Reduce::max);
  c.mode = AttackMode::sgcg;
  EXPECT_EQ(c.document_reduce(), Reduce::weighted_sum);
  c.doc_reduce = Reduce::max;
  EXPECT_EQ(c.document_reduce(), Reduce::max);
}
