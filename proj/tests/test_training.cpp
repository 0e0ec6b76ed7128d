#include <algorithm>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "relxforge/checkpoint.hpp"
#include "relxforge/pairs.hpp"
#include "relxforge/synthetic.hpp"
#include "relxforge/training.hpp"

namespace {

using relxforge::Error;
using relxforge::ErrorCode;
namespace nn = relxforge::nn;
namespace text = relxforge::text;
namespace train = relxforge::train;
namespace syn = relxforge::synthetic;

struct Toy {
  syn::SyntheticCorpus corpus;
  text::Vocab vocab;
  std::vector<train::EncodedPair> pairs;
  std::vector<train::EncodedExample> l1;
  std::vector<train::EncodedExample> l2;
};

const Toy& toy() {
  static const Toy t = [] {
    Toy t;
    syn::SyntheticConfig cfg;
    cfg.sentences_per_language = 600;
    cfg.world = syn::WorldSize{}.scaled(0.05);
    cfg.seed = 3;
    t.corpus = syn::build_corpus(cfg);
    std::vector<std::string> texts;
    std::vector<relxforge::corpus::SentenceRecord> records;
    for (const auto* v : {&t.corpus.train_l1, &t.corpus.train_l2}) {
      for (const auto& r : *v) {
        texts.push_back(r.text);
        records.push_back(r);
      }
    }
    t.vocab = text::train_vocab(texts, 300);
    const auto instances = relxforge::corpus::link_sentences(records, t.corpus.triples, t.corpus.pids());
    const auto index = relxforge::pairs::build_index(instances);
    relxforge::pairs::GenerateOptions o;
    o.count = 200;
    o.seed = 1;
    o.sampler.anchor_lang = "l1";
    t.pairs = train::encode_pairs(relxforge::pairs::to_records(relxforge::pairs::generate_pairs(index, o)), t.vocab, 48);
    t.l1 = train::encode_dataset(syn::relation_examples(t.corpus.train_l1, t.corpus.triples, 5), t.vocab, 48);
    t.l2 = train::encode_dataset(syn::relation_examples(t.corpus.train_l2, t.corpus.triples, 5), t.vocab, 48);
    return t;
  }();
  return t;
}

nn::ModelConfig tiny(std::size_t vocab) {
  nn::ModelConfig c;
  c.layers = 2;
  c.hidden = 32;
  c.heads = 2;
  c.ff = 64;
  c.vocab_size = vocab;
  c.max_positions = 48;
  c.num_classes = syn::synthetic_schema().num_classes();
  return c;
}

train::PretrainConfig quick_pretrain(std::size_t steps) {
  train::PretrainConfig p;
  p.steps = steps;
  p.batch_size = 8;
  p.seed = 11;
  p.optimizer.lr = 1e-3;
  p.optimizer.warmup_steps = 0;
  return p;
}

std::vector<std::vector<float>> weights(train::Model& m) {
  std::vector<std::vector<float>> out;
  for (auto* p : m.parameters()) out.push_back(p->data);
  return out;
}

TEST(ToyWorld, ProducesPairsAndExamples) {
  const auto& t = toy();
  EXPECT_EQ(t.pairs.size(), 200u);
  EXPECT_GT(t.l1.size(), 400u);
  EXPECT_GT(t.l2.size(), 400u);
}

TEST(Pretrain, ZeroStepsLeavesWeightsUnchanged) {
  const auto& t = toy();
  train::Model m(tiny(t.vocab.size()), 1);
  const auto before = nn::make_checkpoint(m).serialize();
  auto cfg = quick_pretrain(0);
  nn::Optimizer<float> opt(cfg.optimizer, m.parameters());
  EXPECT_TRUE(train::pretrain(m, opt, t.pairs, cfg).empty());
  EXPECT_EQ(nn::make_checkpoint(m).serialize(), before);
}

TEST(Pretrain, ResumeFromCheckpointEqualsUninterrupted) {
  const auto& t = toy();
  const auto mc = tiny(t.vocab.size());

  train::Model full(mc, 1);
  auto cfg = quick_pretrain(100);
  nn::Optimizer<float> opt_full(cfg.optimizer, full.parameters());
  const auto log_full = train::pretrain(full, opt_full, t.pairs, cfg);

  train::Model first(mc, 1);
  auto half = quick_pretrain(50);
  nn::Optimizer<float> opt_first(half.optimizer, first.parameters());
  auto log = train::pretrain(first, opt_first, t.pairs, half);
  const std::string bytes = nn::make_checkpoint(first, &opt_first).serialize();

  const auto ck = nn::Checkpoint::deserialize(bytes);
  auto second = nn::model_from_checkpoint<float>(ck);
  nn::Optimizer<float> opt_second(cfg.optimizer, second.parameters());
  nn::restore_optimizer(opt_second, second, ck);
  EXPECT_EQ(opt_second.state().step, 50u);
  const auto rest = train::pretrain(second, opt_second, t.pairs, cfg);
  log.insert(log.end(), rest.begin(), rest.end());

  ASSERT_EQ(log.size(), log_full.size());
  for (std::size_t i = 0; i < log.size(); ++i) {
    EXPECT_EQ(train::format_log_row(log[i]), train::format_log_row(log_full[i]));
  }
  EXPECT_EQ(weights(second), weights(full));
  EXPECT_EQ(nn::make_checkpoint(second, &opt_second).serialize(), nn::make_checkpoint(full, &opt_full).serialize());
}

TEST(Pretrain, SameSeedGivesIdenticalLogs) {
  const auto& t = toy();
  auto run = [&] {
    train::Model m(tiny(t.vocab.size()), 2);
    auto cfg = quick_pretrain(10);
    nn::Optimizer<float> opt(cfg.optimizer, m.parameters());
    std::string out = train::log_header();
    for (const auto& r : train::pretrain(m, opt, t.pairs, cfg)) out += train::format_log_row(r);
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(Pretrain, CheckpointCallbackCadence) {
  const auto& t = toy();
  train::Model m(tiny(t.vocab.size()), 3);
  auto cfg = quick_pretrain(9);
  cfg.checkpoint_every = 4;
  cfg.log_every = 3;
  nn::Optimizer<float> opt(cfg.optimizer, m.parameters());
  std::vector<std::size_t> saved;
  const auto log = train::pretrain(m, opt, t.pairs, cfg, {}, [&](std::size_t s) { saved.push_back(s); });
  EXPECT_EQ(saved, (std::vector<std::size_t>{4, 8}));
  ASSERT_EQ(log.size(), 3u);
  EXPECT_EQ(log.back().step, 9u);
}

TEST(Pretrain, MlmLossFallsOnSmallCorpus) {
  const auto& t = toy();
  const std::vector<train::EncodedPair> data(t.pairs.begin(), t.pairs.begin() + 100);
  train::Model m(tiny(t.vocab.size()), 4);
  auto cfg = quick_pretrain(50);
  cfg.optimizer.lr = 3e-3;
  nn::Optimizer<float> opt(cfg.optimizer, m.parameters());
  const auto log = train::pretrain(m, opt, data, cfg);
  ASSERT_EQ(log.size(), 50u);
  auto mean = [&](std::size_t from, std::size_t to) {
    double s = 0;
    for (std::size_t i = from; i < to; ++i) s += log[i].mlm_a + log[i].mlm_b;
    return s / static_cast<double>(2 * (to - from));
  };
  // Window means smooth out the per-batch masking noise.
  EXPECT_LT(mean(40, 50), mean(0, 10) - 0.2);
}

TEST(Pretrain, EmptyDataIsAnError) {
  const auto& t = toy();
  train::Model m(tiny(t.vocab.size()), 1);
  auto cfg = quick_pretrain(1);
  nn::Optimizer<float> opt(cfg.optimizer, m.parameters());
  EXPECT_THROW(train::pretrain(m, opt, {}, cfg), Error);
}

TEST(Finetune, DefaultsMatchPublishedSetup) {
  const train::FinetuneConfig c;
  EXPECT_EQ(c.optimizer.kind, nn::OptimizerKind::kAdamW);
  EXPECT_DOUBLE_EQ(c.optimizer.lr, 3e-5);
  EXPECT_DOUBLE_EQ(c.optimizer.weight_decay, 0.1);
  EXPECT_EQ(c.batch_size, 64u);
  EXPECT_EQ(c.epochs, 10u);
  EXPECT_EQ(c.max_len, 128u);
  EXPECT_FALSE(c.freeze_encoder);
}

TEST(Finetune, OverfitsTwentyExamples) {
  const auto& t = toy();
  const std::vector<train::EncodedExample> few(t.l1.begin(), t.l1.begin() + 20);
  train::Model m(tiny(t.vocab.size()), 5);
  train::FinetuneConfig cfg;
  cfg.optimizer.lr = 3e-3;
  cfg.optimizer.weight_decay = 0.0;
  cfg.batch_size = 20;
  cfg.epochs = 200;  // one step per epoch
  cfg.dropout = false;
  const auto res = train::finetune(m, few, few, syn::synthetic_schema(), cfg);
  EXPECT_EQ(train::predict(m, few), train::gold_labels(few));
  EXPECT_DOUBLE_EQ(res.best_dev_macro_f1, 100.0);
}

TEST(Finetune, KeepsBestDevEpochWeights) {
  const auto& t = toy();
  const std::vector<train::EncodedExample> tr(t.l1.begin(), t.l1.begin() + 64);
  const std::vector<train::EncodedExample> dev(t.l1.begin() + 64, t.l1.begin() + 128);
  train::Model m(tiny(t.vocab.size()), 6);
  train::FinetuneConfig cfg;
  cfg.optimizer.lr = 1e-3;
  cfg.batch_size = 16;
  cfg.epochs = 4;
  std::vector<train::EpochLog> seen;
  const auto res = train::finetune(m, tr, dev, syn::synthetic_schema(), cfg, [&](const auto& e) { seen.push_back(e); });
  ASSERT_EQ(res.epochs.size(), 4u);
  EXPECT_EQ(seen.size(), 4u);
  double best = 0;
  for (const auto& e : res.epochs) best = std::max(best, e.dev_macro_f1);
  EXPECT_DOUBLE_EQ(res.best_dev_macro_f1, best);
  EXPECT_DOUBLE_EQ(relxforge::metrics::macro_f1(train::gold_labels(dev), train::predict(m, dev), syn::synthetic_schema()),
                   best);
}

TEST(Finetune, FrozenEncoderOnlyMovesClassifier) {
  const auto& t = toy();
  const std::vector<train::EncodedExample> tr(t.l1.begin(), t.l1.begin() + 32);
  train::Model m(tiny(t.vocab.size()), 7);
  const train::Model before = m;
  train::FinetuneConfig cfg;
  cfg.optimizer.lr = 1e-2;
  cfg.batch_size = 16;
  cfg.epochs = 1;
  cfg.freeze_encoder = true;
  train::finetune(m, tr, {}, syn::synthetic_schema(), cfg);
  EXPECT_EQ(m.tok_emb.data, before.tok_emb.data);
  EXPECT_EQ(m.layers[1].w2.data, before.layers[1].w2.data);
  EXPECT_NE(m.cls_w.data, before.cls_w.data);
}

TEST(Finetune, Errors) {
  const auto& t = toy();
  train::Model m(tiny(t.vocab.size()), 1);
  try {
    train::finetune(m, {}, {}, syn::synthetic_schema(), {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyDataset);
  }
  try {
    train::finetune(m, t.l1, {}, relxforge::schema::RelationSchema(), {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kSchemaMismatch);
  }
}

TEST(Curve, StratifiedFractionKeepsProportions) {
  std::vector<int> labels;
  for (int c = 0; c < 4; ++c) labels.insert(labels.end(), 10 * (c + 1), c);
  const auto idx = train::stratified_fraction(labels, 0.5, 9);
  ASSERT_EQ(idx.size(), 50u);
  EXPECT_TRUE(std::is_sorted(idx.begin(), idx.end()));
  std::map<int, int> got;
  for (auto i : idx) ++got[labels[i]];
  for (int c = 0; c < 4; ++c) EXPECT_EQ(got[c], 5 * (c + 1));
  EXPECT_EQ(idx, train::stratified_fraction(labels, 0.5, 9));
  EXPECT_NE(idx, train::stratified_fraction(labels, 0.5, 10));
  EXPECT_EQ(train::stratified_fraction(labels, 1.0, 9).size(), labels.size());
  EXPECT_THROW(train::stratified_fraction(labels, 0.0, 1), Error);
  EXPECT_THROW(train::stratified_fraction(labels, 1.5, 1), Error);
}

TEST(Curve, OneRowPerFractionSeedAndLanguage) {
  const auto& t = toy();
  const std::vector<train::EncodedExample> tr(t.l1.begin(), t.l1.begin() + 60);
  const std::vector<train::EncodedExample> ev1(t.l1.begin() + 60, t.l1.begin() + 100);
  const std::vector<train::EncodedExample> ev2(t.l2.begin(), t.l2.begin() + 40);
  const auto mc = tiny(t.vocab.size());
  train::FinetuneConfig cfg;
  cfg.optimizer.lr = 1e-3;
  cfg.batch_size = 16;
  cfg.epochs = 2;
  const auto schema = syn::synthetic_schema();
  const std::map<std::string, std::vector<train::EncodedExample>> evals{{"l1", ev1}, {"l2", ev2}};
  const auto rows = train::learning_curve([&](std::uint64_t s) { return train::Model(mc, s); }, tr, {}, evals, schema,
                                          {0.5, 1.0}, {1, 2}, cfg);
  ASSERT_EQ(rows.size(), 8u);
  EXPECT_DOUBLE_EQ(rows[0].fraction, 0.5);
  EXPECT_EQ(rows[0].lang, "l1");
  EXPECT_EQ(rows[1].lang, "l2");
  EXPECT_EQ(rows[2].seed, 2u);
  EXPECT_DOUBLE_EQ(rows[4].fraction, 1.0);

  // Fraction 1.0 is a plain fine-tuning run with the same seed.
  train::Model plain(mc, 1);
  auto c1 = cfg;
  c1.seed = 1;
  train::finetune(plain, tr, {}, schema, c1);
  EXPECT_DOUBLE_EQ(rows[4].macro_f1, relxforge::metrics::macro_f1(train::gold_labels(ev1), train::predict(plain, ev1), schema));
  EXPECT_DOUBLE_EQ(rows[5].macro_f1, relxforge::metrics::macro_f1(train::gold_labels(ev2), train::predict(plain, ev2), schema));

  const auto tsv = train::curve_tsv(rows);
  EXPECT_EQ(tsv.substr(0, tsv.find('\n')), "fraction\tseed\tlang\tmacro_f1");
  EXPECT_EQ(std::count(tsv.begin(), tsv.end(), '\n'), 9);
}

TEST(Encoding, FarApartMentionsAreShortenedToFit) {
  const auto& t = toy();
  std::string s = "Kalo";
  for (int i = 0; i < 60; ++i) s += " was";
  const std::size_t e2_start = s.size() + 1;
  s += " Mira .";
  const auto seq = train::mark_entities_fitting(s, {0, 4}, {e2_start, e2_start + 4}, t.vocab, 24);
  EXPECT_TRUE(seq.truncated);
  EXPECT_LE(seq.ids.size(), 24u);
  const auto has = [&](text::TokenId id) { return std::count(seq.ids.begin(), seq.ids.end(), id) == 1; };
  EXPECT_TRUE(has(text::kE1Start) && has(text::kE1End) && has(text::kE2Start) && has(text::kE2End));
}

}  // namespace
