#include <map>
#include <set>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "relxforge/corpus.hpp"
#include "relxforge/pairs.hpp"

namespace {

using namespace relxforge::pairs;
using relxforge::Rng;
using relxforge::corpus::Entity;
using relxforge::corpus::RelationInstance;
using relxforge::corpus::SentenceRecord;
namespace utf8 = relxforge::utf8;

const std::string kWiki = std::string(RELXFORGE_FIXTURE_DIR) + "/wiki";

std::string slice(const std::string& text, Span s) {
  return utf8::encode(utf8::decode(text).substr(s.start, s.end - s.start));
}

RelationInstance instance(std::string id, std::string lang, std::string text, std::vector<Entity> ents,
                          std::size_t e1, std::size_t e2, std::string pid) {
  return {SentenceRecord{std::move(id), std::move(lang), std::move(text), std::move(ents)}, e1, e2,
          std::move(pid)};
}

// Three sentences around a book, its author and the author's birthplace.
std::vector<RelationInstance> fig3_instances() {
  return {
      instance("en#0", "en", "Origen composed the Hexapla in Caesarea.",
               {{0, 6, "Q170472", "Origen"}, {20, 27, "Q839739", "Hexapla"}}, 1, 0, "P50"),
      instance("es#0", "es", "La Hexapla es una obra de Orígenes.",
               {{3, 10, "Q839739", "Hexapla"}, {26, 34, "Q170472", "Orígenes"}}, 0, 1, "P50"),
      instance("tr#0", "tr", "Origenes İskenderiye şehrinde doğdu.",
               {{0, 8, "Q170472", "Origenes"}, {9, 20, "Q87", "İskenderiye"}}, 0, 1, "P19"),
  };
}

std::vector<RelationInstance> fixture_instances() {
  using namespace relxforge::corpus;
  const auto table = SitelinkTable::from_tsv(kWiki + "/sitelinks.tsv");
  const auto cfg = RelationsConfig::defaults();
  const auto store = merge_relations(TripleStore::from_tsv(kWiki + "/triples.tsv"), cfg.merge_map);
  std::vector<RelationInstance> all;
  for (const std::string lang : {"en", "es", "tr"}) {
    const auto recs = extract_records(read_dump(kWiki + "/" + lang + ".xml"), lang, table,
                                      AbbreviationList::for_language(std::string(RELXFORGE_DATA_DIR) + "/abbreviations", lang))
                          .records;
    for (auto& i : link_sentences(recs, store, cfg.allowed_pids())) all.push_back(std::move(i));
  }
  return all;
}

TEST(BuildIndex, ExactProjections) {
  const auto idx = build_index(fig3_instances());
  const auto* g = idx.pair_group("Q839739", "Q170472");
  ASSERT_NE(g, nullptr);
  EXPECT_EQ(g->size(), 2u);
  EXPECT_EQ(g->at("en"), (std::vector<std::size_t>{0}));
  EXPECT_EQ(g->at("es"), (std::vector<std::size_t>{1}));
  EXPECT_EQ(idx.pair_group("Q170472", "Q839739"), nullptr);
  const auto& origen = idx.by_entity().at("Q170472");
  EXPECT_EQ(origen.at("P50").at("en").size(), 1u);
  EXPECT_EQ(origen.at("P19").at("tr").size(), 1u);
  EXPECT_TRUE(build_index({}).empty());
}

TEST(BuildIndex, SingleInstanceReachableThroughBothMaps) {
  const auto idx = build_index({fig3_instances()[2]});
  EXPECT_NE(idx.pair_group("Q170472", "Q87"), nullptr);
  EXPECT_EQ(idx.by_entity().at("Q87").at("P19").at("tr"), (std::vector<std::size_t>{0}));
}

TEST(Sampler, PositiveIsTheSharedPair) {
  const auto idx = build_index(fig3_instances());
  const PairSampler s(idx, {});
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    const auto p = s.sample_positive(rng);
    ASSERT_TRUE(p.has_value());
    EXPECT_EQ(p->a.sent_id, "en#0");
    EXPECT_EQ(p->b.sent_id, "es#0");
    EXPECT_EQ(p->label, PairLabel::kPositive);
    EXPECT_TRUE(satisfies_invariant(*p));
  }
}

TEST(Sampler, StrongNegativeSharesOneEntity) {
  const auto idx = build_index(fig3_instances());
  const PairSampler s(idx, {});
  Rng rng(2);
  const auto p = s.sample_strong_negative(rng);
  ASSERT_TRUE(p.has_value());
  EXPECT_EQ(p->a.sent_id, "en#0");
  EXPECT_EQ(p->b.sent_id, "tr#0");
  EXPECT_EQ(p->a.pid, "P50");
  EXPECT_EQ(p->b.pid, "P19");
  EXPECT_TRUE(satisfies_invariant(*p));
}

TEST(Sampler, CrossPositionNegativesCanBeDisabled) {
  const auto idx = build_index(fig3_instances());
  SamplerOptions opt;
  opt.cross_position_negatives = false;  // Origen is tail in en, head in tr
  const PairSampler s(idx, opt);
  Rng rng(2);
  EXPECT_FALSE(s.sample_strong_negative(rng).has_value());
}

TEST(Sampler, ExhaustedCases) {
  auto only_en = fig3_instances();
  only_en.resize(1);
  Rng rng(3);
  EXPECT_FALSE(PairSampler(build_index(only_en), {}).sample_positive(rng).has_value());

  auto one_pid = fig3_instances();
  one_pid[2].pid = "P50";
  EXPECT_FALSE(PairSampler(build_index(one_pid), {}).sample_strong_negative(rng).has_value());
}

TEST(Sampler, AnchorPairsOnlyWhenAllowed) {
  auto inst = fig3_instances();
  auto twin = inst[0];
  twin.record.sent_id = "en#1";
  inst.push_back(twin);
  const auto idx = build_index(inst);
  EXPECT_EQ(PairSampler(idx, {}).positive_groups("en"), 0u);
  SamplerOptions opt;
  opt.allow_anchor_pairs = true;
  const PairSampler s(idx, opt);
  Rng rng(4);
  const auto p = s.sample_positive(rng, "en");
  ASSERT_TRUE(p.has_value());
  EXPECT_NE(p->a.sent_id, p->b.sent_id);
}

SentencePair fig3_pair() {
  const auto inst = fig3_instances();
  return {to_marked(inst[0]), to_marked(inst[1]), PairLabel::kPositive, {}, {}};
}

TEST(ApplyBlanks, ProbabilityZeroAndOne) {
  Rng rng(5);
  const auto p0 = apply_blanks(fig3_pair(), {0.0, "[BLANK]"}, rng);
  EXPECT_EQ(p0, fig3_pair());
  const auto p1 = apply_blanks(fig3_pair(), {1.0, "[BLANK]"}, rng);
  EXPECT_EQ(p1.a.text, "[BLANK] composed the [BLANK] in Caesarea.");
  EXPECT_EQ(p1.b.text, "La [BLANK] es una obra de [BLANK].");
  for (const auto* m : {&p1.a, &p1.b}) {
    EXPECT_EQ(slice(m->text, m->e1), "[BLANK]");
    EXPECT_EQ(slice(m->text, m->e2), "[BLANK]");
  }
  EXPECT_EQ(p1.blanked_a, (std::array<bool, 2>{true, true}));
  EXPECT_THROW(apply_blanks(fig3_pair(), {1.5, "[BLANK]"}, rng), relxforge::Error);
}

TEST(ApplyBlanks, SpansStayConsistentUnderPartialBlanking) {
  Rng rng(6);
  const auto orig = fig3_pair();
  for (int i = 0; i < 200; ++i) {
    const auto p = apply_blanks(orig, {0.5, "[BLANK]"}, rng);
    EXPECT_EQ(slice(p.a.text, p.a.e1), p.blanked_a[0] ? "[BLANK]" : slice(orig.a.text, orig.a.e1));
    EXPECT_EQ(slice(p.a.text, p.a.e2), p.blanked_a[1] ? "[BLANK]" : slice(orig.a.text, orig.a.e2));
    EXPECT_EQ(slice(p.b.text, p.b.e1), p.blanked_b[0] ? "[BLANK]" : slice(orig.b.text, orig.b.e1));
    EXPECT_EQ(slice(p.b.text, p.b.e2), p.blanked_b[1] ? "[BLANK]" : slice(orig.b.text, orig.b.e2));
  }
}

TEST(ApplyBlanks, RateConvergesToPolicy) {
  Rng rng(7);
  std::size_t blanked = 0, mentions = 0;
  const auto orig = fig3_pair();
  while (mentions < 100000) {
    const auto p = apply_blanks(orig, {}, rng);
    blanked += p.blanked_a[0] + p.blanked_a[1] + p.blanked_b[0] + p.blanked_b[1];
    mentions += 4;
  }
  const double rate = static_cast<double>(blanked) / static_cast<double>(mentions);
  EXPECT_GE(rate, 0.69);
  EXPECT_LE(rate, 0.71);
}

TEST(LanguageSchedule, UniformAndWeighted) {
  const auto u = language_schedule({"es", "tr"}, {}, 4);
  EXPECT_EQ(u, (std::vector<std::string>{"es", "tr", "es", "tr"}));
  const auto w = language_schedule({"es", "tr"}, {{"es", 3.0}, {"tr", 1.0}}, 8);
  std::map<std::string, int> c;
  for (const auto& l : w) ++c[l];
  EXPECT_EQ(c["es"], 6);
  EXPECT_EQ(c["tr"], 2);
  EXPECT_THROW(language_schedule({"es"}, {{"es", 0.0}}, 1), relxforge::Error);
}

class FixturePairs : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { index_ = new PairIndex(build_index(fixture_instances())); }
  static void TearDownTestSuite() { delete index_; }
  static inline PairIndex* index_ = nullptr;
};

TEST_F(FixturePairs, SmallCountIsExactlyStratified) {
  GenerateOptions opt;
  opt.count = 4;
  opt.seed = 1;
  const auto g = generate_pairs(*index_, opt);
  ASSERT_EQ(g.stats.emitted, 4u);
  std::map<std::pair<std::string, int>, int> cells;
  for (const auto& p : g.shards[0]) ++cells[{p.b.lang, static_cast<int>(p.label)}];
  EXPECT_EQ(cells.size(), 4u);
  for (const auto& [k, v] : cells) EXPECT_EQ(v, 1);
}

TEST_F(FixturePairs, InvariantsHoldOnEveryPair) {
  GenerateOptions opt;
  opt.count = 20000;
  opt.seed = 11;
  opt.shards = 3;
  const auto g = generate_pairs(*index_, opt);
  EXPECT_EQ(g.stats.emitted, 20000u);
  EXPECT_TRUE(g.stats.exhausted.empty());
  EXPECT_EQ(g.stats.label_histogram.at("positive"), 10000u);
  EXPECT_EQ(g.stats.language_histogram.at("es"), 10000u);
  for (const auto& shard : g.shards) {
    for (const auto& p : shard) {
      ASSERT_TRUE(satisfies_invariant(p));
      ASSERT_EQ(p.a.lang, "en");
      ASSERT_NE(p.b.lang, "en");
      if (p.label == PairLabel::kNegative) {
        ASSERT_FALSE(p.a.qid1 == p.b.qid1 && p.a.qid2 == p.b.qid2);
        ASSERT_FALSE(p.a.qid1 == p.b.qid2 && p.a.qid2 == p.b.qid1);
      }
    }
  }
  const auto m = manifest_json(g.stats, opt);
  EXPECT_DOUBLE_EQ(m["positive_fraction"].get<double>(), 0.5);
  EXPECT_GE(m["blank_rate"].get<double>(), 0.69);
  EXPECT_LE(m["blank_rate"].get<double>(), 0.71);
}

TEST_F(FixturePairs, ByteDeterministicAcrossRunsAndWorkers) {
  GenerateOptions opt;
  opt.count = 3000;
  opt.seed = 5;
  opt.shards = 4;
  auto bytes = [&](std::size_t workers) {
    opt.workers = workers;
    std::string s;
    for (const auto& shard : generate_pairs(*index_, opt).shards) s += to_jsonl(shard);
    return s;
  };
  const auto one = bytes(1);
  EXPECT_EQ(one, bytes(1));
  EXPECT_EQ(one, bytes(4));
  opt.seed = 6;
  EXPECT_NE(one, bytes(1));
}

TEST_F(FixturePairs, JsonRoundTrip) {
  GenerateOptions opt;
  opt.count = 10;
  const auto g = generate_pairs(*index_, opt);
  const auto text = to_jsonl(g.shards[0]);
  const auto back = relxforge::corpus::parse_jsonl(text, pair_from_json);
  ASSERT_EQ(back.size(), g.shards[0].size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].a.text, g.shards[0][i].a.text);
    EXPECT_EQ(back[i].b.e2, g.shards[0][i].b.e2);
    EXPECT_EQ(back[i].label, static_cast<int>(g.shards[0][i].label));
  }
}

}  // namespace
