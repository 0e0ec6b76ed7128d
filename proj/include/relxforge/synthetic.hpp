#ifndef RELXFORGE_SYNTHETIC_HPP_
#define RELXFORGE_SYNTHETIC_HPP_

// A toy two-language world for end-to-end experiments. Entities and
// relation triples are generated at random; sentences come from relation
// templates. The second language is a word-for-word substitution cipher of
// the first with the template's constituent order reversed, and entity
// names are shared between the two.

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "relxforge/corpus.hpp"
#include "relxforge/error.hpp"
#include "relxforge/rng.hpp"
#include "relxforge/schema.hpp"

namespace relxforge::synthetic {

enum class EntityType { kPerson, kCity, kCountry, kOrg, kBook, kLanguage };

struct Constituent {
  enum Kind { kSubject, kObject, kWords } kind = kWords;
  std::vector<std::string> words;
};

using Template = std::vector<Constituent>;

struct RelationDef {
  std::string name;
  std::string pid;
  EntityType subject;
  EntityType object;
  std::vector<Template> templates;
};

namespace detail {

inline Constituent S() { return {Constituent::kSubject, {}}; }
inline Constituent O() { return {Constituent::kObject, {}}; }
inline Constituent W(std::initializer_list<const char*> ws) {
  Constituent c;
  for (const char* w : ws) c.words.emplace_back(w);
  return c;
}

}  // namespace detail

inline const std::vector<RelationDef>& relations() {
  using detail::O;
  using detail::S;
  using detail::W;
  static const std::vector<RelationDef> defs = {
      {"author", "P50", EntityType::kBook, EntityType::kPerson,
       {{S(), W({"was", "written", "by"}), O()},
        {O(), W({"wrote"}), S()},
        {O(), W({"is", "the", "author", "of"}), S()},
        {W({"the", "book"}), S(), W({"is", "by"}), O()}}},
      {"place_of_birth", "P19", EntityType::kPerson, EntityType::kCity,
       {{S(), W({"was", "born", "in"}), O()},
        {O(), W({"is", "the", "birthplace", "of"}), S()},
        {W({"in"}), O(), W({"the", "child"}), S(), W({"was", "born"})}}},
      {"capital", "P36", EntityType::kCountry, EntityType::kCity,
       {{W({"the", "capital", "of"}), S(), W({"is"}), O()},
        {O(), W({"is", "the", "capital", "of"}), S()},
        {S(), W({"is", "governed", "from"}), O()}}},
      {"located_in_country", "P17", EntityType::kCity, EntityType::kCountry,
       {{S(), W({"is", "a", "city", "in"}), O()},
        {O(), W({"contains", "the", "city", "of"}), S()},
        {S(), W({"lies", "within"}), O()}}},
      {"member_of", "P463", EntityType::kPerson, EntityType::kOrg,
       {{S(), W({"is", "a", "member", "of"}), O()},
        {O(), W({"counts"}), S(), W({"among", "its", "members"})},
        {S(), W({"joined"}), O()}}},
      {"founded_by", "P112", EntityType::kOrg, EntityType::kPerson,
       {{S(), W({"was", "founded", "by"}), O()},
        {O(), W({"founded"}), S()},
        {O(), W({"established"}), S()}}},
      {"employer", "P108", EntityType::kPerson, EntityType::kOrg,
       {{S(), W({"works", "for"}), O()},
        {O(), W({"employs"}), S()},
        {S(), W({"is", "employed", "by"}), O()}}},
      {"official_language", "P37", EntityType::kCountry, EntityType::kLanguage,
       {{W({"people", "in"}), S(), W({"speak"}), O()},
        {O(), W({"is", "spoken", "in"}), S()},
        {O(), W({"is", "the", "official", "language", "of"}), S()}}},
  };
  return defs;
}

inline schema::RelationSchema synthetic_schema() {
  std::vector<std::string> names;
  for (const auto& r : relations()) names.push_back(r.name);
  return schema::RelationSchema(std::move(names));
}

// Relation-neutral phrases inserted at random constituent boundaries.
inline const std::vector<std::vector<std::string>>& adjuncts() {
  static const std::vector<std::vector<std::string>> a = {
      {"according", "to", "the", "archive"}, {"as", "reported", "earlier"}, {"reportedly"},
      {"since", "then"},                     {"in", "those", "years"},      {"as", "many", "know"},
      {"by", "all", "accounts"},             {"long", "ago"},
  };
  return a;
}

struct WorldSize {
  std::size_t countries = 40;
  std::size_t cities = 400;
  std::size_t persons = 1500;
  std::size_t orgs = 200;
  std::size_t books = 800;
  std::size_t languages = 25;

  WorldSize scaled(double f) const {
    auto s = [f](std::size_t n) { return std::max<std::size_t>(4, static_cast<std::size_t>(static_cast<double>(n) * f)); };
    return {s(countries), s(cities), s(persons), s(orgs), s(books), s(languages)};
  }
};

struct SyntheticConfig {
  std::size_t sentences_per_language = 20000;
  double heldout_fraction = 0.1;  // share of sentences drawn from the held-out world
  WorldSize world;
  double adjunct_probability = 0.5;
  std::uint64_t seed = 7;
  std::string l1 = "l1";
  std::string l2 = "l2";
};

struct EntityInfo {
  std::string qid;
  std::string name;
  EntityType type;
};

struct SyntheticCorpus {
  std::map<std::string, EntityInfo> entities;       // by qid
  corpus::TripleStore triples;                      // both worlds
  std::map<std::string, std::string> cipher;        // l1 word -> l2 word
  std::vector<corpus::SentenceRecord> train_l1;     // main world, independent per language
  std::vector<corpus::SentenceRecord> train_l2;
  std::vector<corpus::SentenceRecord> heldout_l1;   // held-out world, parallel:
  std::vector<corpus::SentenceRecord> heldout_l2;   //   heldout_l2[i] renders heldout_l1[i]
  std::set<std::string> heldout_qids;

  std::set<std::string> pids() const {
    std::set<std::string> out;
    for (const auto& r : relations()) out.insert(r.pid);
    return out;
  }
};

namespace detail {

inline const std::vector<std::string>& name_syllables() {
  static const std::vector<std::string> s = {"ka", "lo", "mi", "ren", "ta", "vor", "shi", "dan", "el",  "bru",
                                             "nia", "tor", "gal", "fe", "ro",  "sun", "pa", "lin", "de", "mar",
                                             "ko", "vi", "stan", "ber", "ul", "cas", "no", "thi", "ga", "sel"};
  return s;
}

inline const std::vector<std::string>& cipher_syllables() {
  static const std::vector<std::string> s = {"zu", "qe", "xo", "wy", "jh", "qa", "zi", "xu", "yq", "wo",
                                             "jy", "zx", "qo", "xe", "wu", "yz", "jo", "qi", "zw", "xy"};
  return s;
}

inline std::string make_name(Rng& rng, std::size_t parts) {
  const auto& syl = name_syllables();
  std::string out;
  for (std::size_t p = 0; p < parts; ++p) {
    if (p) out += ' ';
    const std::size_t n = 2 + rng.below(2);
    std::string word;
    for (std::size_t i = 0; i < n; ++i) word += syl[rng.below(syl.size())];
    word[0] = static_cast<char>(word[0] - 'a' + 'A');
    out += word;
  }
  return out;
}

struct World {
  std::map<EntityType, std::vector<std::string>> by_type;
  std::vector<std::vector<corpus::Triple>> triples_by_relation;
};

class Builder {
 public:
  Builder(const SyntheticConfig& cfg) : cfg_(cfg), rng_(cfg.seed) {}

  SyntheticCorpus build() {
    build_cipher();
    const WorldSize held = cfg_.world.scaled(cfg_.heldout_fraction);
    World main = build_world(cfg_.world, false);
    World heldout = build_world(held, true);
    std::vector<corpus::Triple> all;
    for (const World* w : {&main, &heldout}) {
      for (const auto& rel : w->triples_by_relation) all.insert(all.end(), rel.begin(), rel.end());
    }
    out_.triples = corpus::TripleStore(std::move(all));

    const std::size_t n_held = static_cast<std::size_t>(
        static_cast<double>(cfg_.sentences_per_language) * cfg_.heldout_fraction + 0.5);
    const std::size_t n_main = cfg_.sentences_per_language - n_held;
    for (std::size_t i = 0; i < n_main; ++i) {
      out_.train_l1.push_back(render(sample_sentence(main), false, "main-" + cfg_.l1 + "#" + std::to_string(i)));
    }
    for (std::size_t i = 0; i < n_main; ++i) {
      out_.train_l2.push_back(render(sample_sentence(main), true, "main-" + cfg_.l2 + "#" + std::to_string(i)));
    }
    for (std::size_t i = 0; i < n_held; ++i) {
      const Draft d = sample_sentence(heldout);
      out_.heldout_l1.push_back(render(d, false, "held-" + cfg_.l1 + "#" + std::to_string(i)));
      out_.heldout_l2.push_back(render(d, true, "held-" + cfg_.l2 + "#" + std::to_string(i)));
    }
    return std::move(out_);
  }

 private:
  struct Draft {
    const RelationDef* rel = nullptr;
    corpus::Triple triple;
    Template tmpl;
  };

  void build_cipher() {
    std::set<std::string> words;
    for (const auto& r : relations()) {
      for (const auto& t : r.templates) {
        for (const auto& c : t) words.insert(c.words.begin(), c.words.end());
      }
    }
    for (const auto& a : adjuncts()) words.insert(a.begin(), a.end());
    std::set<std::string> used;
    const auto& syl = cipher_syllables();
    for (const auto& w : words) {
      std::string c;
      do {
        c.clear();
        const std::size_t n = 1 + (w.size() + 2) / 3;
        for (std::size_t i = 0; i < n; ++i) c += syl[rng_.below(syl.size())];
      } while (used.count(c) || words.count(c));
      used.insert(c);
      out_.cipher[w] = c;
    }
  }

  World build_world(const WorldSize& size, bool heldout) {
    World w;
    auto make = [&](EntityType type, std::size_t n, std::size_t parts) {
      for (std::size_t i = 0; i < n; ++i) {
        std::string name;
        do {
          name = make_name(rng_, parts);
        } while (!names_.insert(name).second);
        const std::string qid = "Q" + std::to_string(next_qid_++);
        out_.entities[qid] = {qid, name, type};
        if (heldout) out_.heldout_qids.insert(qid);
        w.by_type[type].push_back(qid);
      }
    };
    make(EntityType::kCountry, size.countries, 1);
    make(EntityType::kCity, size.cities, 1);
    make(EntityType::kPerson, size.persons, 2);
    make(EntityType::kOrg, size.orgs, 2);
    make(EntityType::kBook, size.books, 2);
    make(EntityType::kLanguage, size.languages, 1);

    const auto& defs = relations();
    w.triples_by_relation.resize(defs.size());
    std::set<std::pair<std::string, std::string>> linked;  // unordered pairs already related
    auto add = [&](std::size_t r, const std::string& s, const std::string& o) {
      const auto key = std::minmax(s, o);
      if (s == o || !linked.insert({key.first, key.second}).second) return false;
      w.triples_by_relation[r].push_back({s, defs[r].pid, o});
      return true;
    };
    auto pick = [&](EntityType t) -> const std::string& {
      const auto& v = w.by_type.at(t);
      return v[rng_.below(v.size())];
    };
    auto index_of = [&](const std::string& name) {
      for (std::size_t i = 0; i < defs.size(); ++i)
        if (defs[i].name == name) return i;
      throw Error(ErrorCode::kInvalidArgument, name);
    };
    const std::size_t author = index_of("author"), birth = index_of("place_of_birth"),
                      capital = index_of("capital"), located = index_of("located_in_country"),
                      member = index_of("member_of"), founded = index_of("founded_by"),
                      employer = index_of("employer"), language = index_of("official_language");

    const auto& countries = w.by_type.at(EntityType::kCountry);
    const auto& cities = w.by_type.at(EntityType::kCity);
    std::set<std::string> capitals;
    // At most half the cities are capitals so every world has located_in triples.
    for (std::size_t i = 0; i < countries.size() && i < cities.size() / 2; ++i) {
      add(capital, countries[i], cities[i]);
      capitals.insert(cities[i]);
    }
    for (const auto& c : cities) {
      if (!capitals.count(c)) add(located, c, pick(EntityType::kCountry));
    }
    for (const auto& c : countries) add(language, c, pick(EntityType::kLanguage));
    for (const auto& p : w.by_type.at(EntityType::kPerson)) {
      add(birth, p, pick(EntityType::kCity));
      if (rng_.bernoulli(0.5)) add(member, p, pick(EntityType::kOrg));
      if (rng_.bernoulli(0.5)) add(employer, p, pick(EntityType::kOrg));
    }
    for (const auto& o : w.by_type.at(EntityType::kOrg)) add(founded, o, pick(EntityType::kPerson));
    for (const auto& b : w.by_type.at(EntityType::kBook)) add(author, b, pick(EntityType::kPerson));
    for (std::size_t r = 0; r < defs.size(); ++r) {
      if (w.triples_by_relation[r].empty()) {
        throw Error(ErrorCode::kCorpusTooSmall, "world has no '" + defs[r].name + "' triples");
      }
    }
    return w;
  }

  // Relations are drawn uniformly so every relation gets the same share of
  // sentences regardless of how many triples it has.
  Draft sample_sentence(const World& w) {
    const auto& defs = relations();
    Draft d;
    const std::size_t r = rng_.below(defs.size());
    d.rel = &defs[r];
    const auto& pool = w.triples_by_relation[r];
    d.triple = pool[rng_.below(pool.size())];
    d.tmpl = d.rel->templates[rng_.below(d.rel->templates.size())];
    if (rng_.bernoulli(cfg_.adjunct_probability)) {
      const auto& adj = adjuncts()[rng_.below(adjuncts().size())];
      Constituent c;
      c.words = adj;
      const std::size_t at = rng_.below(d.tmpl.size() + 1);
      d.tmpl.insert(d.tmpl.begin() + static_cast<std::ptrdiff_t>(at), std::move(c));
    }
    return d;
  }

  corpus::SentenceRecord render(const Draft& d, bool second_language, std::string sent_id) {
    std::vector<const Constituent*> order;
    for (const auto& c : d.tmpl) order.push_back(&c);
    if (second_language) std::reverse(order.begin(), order.end());
    corpus::SentenceRecord rec;
    rec.sent_id = std::move(sent_id);
    rec.lang = second_language ? cfg_.l2 : cfg_.l1;
    std::string text;
    auto append_word = [&](const std::string& w) {
      if (!text.empty()) text += ' ';
      text += w;
    };
    for (const Constituent* c : order) {
      if (c->kind == Constituent::kWords) {
        for (const auto& w : c->words) append_word(second_language ? out_.cipher.at(w) : w);
        continue;
      }
      const std::string& qid = c->kind == Constituent::kSubject ? d.triple.subject : d.triple.object;
      const std::string& name = out_.entities.at(qid).name;
      if (!text.empty()) text += ' ';
      const std::size_t start = text.size();  // ASCII only: bytes == code points
      text += name;
      rec.entities.push_back({start, text.size(), qid, name});
    }
    text += " .";
    rec.text = std::move(text);
    return rec;
  }

  const SyntheticConfig& cfg_;
  Rng rng_;
  SyntheticCorpus out_;
  std::set<std::string> names_;
  std::size_t next_qid_ = 1000;
};

}  // namespace detail

inline SyntheticCorpus build_corpus(const SyntheticConfig& cfg) {
  if (cfg.sentences_per_language == 0) throw Error(ErrorCode::kInvalidArgument, "no sentences requested");
  if (cfg.heldout_fraction <= 0.0 || cfg.heldout_fraction >= 1.0) {
    throw Error(ErrorCode::kInvalidArgument, "heldout_fraction must lie in (0,1)");
  }
  return detail::Builder(cfg).build();
}

/// Relation-classification examples from two-entity sentences. With
/// probability swap_probability the markers are exchanged, which flips the
/// label to the (e2,e1) class. The swap decision for record i depends only
/// on (seed, i), so parallel record lists get parallel labels.
inline schema::LabeledDataset relation_examples(const std::vector<corpus::SentenceRecord>& records,
                                                const corpus::TripleStore& triples, std::uint64_t seed,
                                                double swap_probability = 0.5, schema::Split split = schema::Split::kTrain) {
  const auto schema = synthetic_schema();
  std::map<std::string, int> relation_of_pid;
  for (std::size_t i = 0; i < relations().size(); ++i) relation_of_pid[relations()[i].pid] = static_cast<int>(i);
  schema::LabeledDataset ds;
  ds.schema = schema;
  ds.split = split;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& rec = records[i];
    if (rec.entities.size() != 2) continue;
    const auto& a = rec.entities[0];
    const auto& b = rec.entities[1];
    // Orient as (subject, object).
    const corpus::Entity* subj = nullptr;
    const corpus::Entity* obj = nullptr;
    const std::set<std::string>* pids = triples.relations(a.qid, b.qid);
    if (pids != nullptr) {
      subj = &a;
      obj = &b;
    } else if ((pids = triples.relations(b.qid, a.qid)) != nullptr) {
      subj = &b;
      obj = &a;
    }
    if (pids == nullptr || pids->size() != 1 || !relation_of_pid.count(*pids->begin())) continue;
    const int rel = relation_of_pid.at(*pids->begin());
    Rng rng(mix_seed(seed, i));
    const bool swap = rng.bernoulli(swap_probability);
    const corpus::Entity* e1 = swap ? obj : subj;
    const corpus::Entity* e2 = swap ? subj : obj;
    schema::RelationExample ex;
    ex.id = rec.sent_id;
    ex.lang = rec.lang;
    ex.text = schema::insert_markers(rec.text, {e1->start, e1->end}, {e2->start, e2->end});
    ex.label = 2 * rel + (swap ? 1 : 0);
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

}  // namespace relxforge::synthetic

#endif  // RELXFORGE_SYNTHETIC_HPP_
