#ifndef RELXFORGE_PAIRS_HPP_
#define RELXFORGE_PAIRS_HPP_

// Cross-lingual sentence pairs for relation matching: positives share the
// ordered entity pair, strong negatives share exactly one entity under a
// different relation. Entity mentions are blanked with a fixed probability.

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "relxforge/corpus.hpp"
#include "relxforge/error.hpp"
#include "relxforge/parallel.hpp"
#include "relxforge/rng.hpp"
#include "relxforge/utf8.hpp"

namespace relxforge::pairs {

struct Span {
  std::size_t start = 0;
  std::size_t end = 0;
  bool operator==(const Span&) const = default;
};

// One side of a pair: a sentence with its head (e1) and tail (e2) mentions.
struct MarkedSentence {
  std::string sent_id;
  std::string lang;
  std::string text;
  Span e1;
  Span e2;
  std::string qid1;
  std::string qid2;
  std::string pid;

  bool operator==(const MarkedSentence&) const = default;
};

enum class PairLabel : int { kNegative = 0, kPositive = 1 };

struct SentencePair {
  MarkedSentence a;  // anchor language
  MarkedSentence b;
  PairLabel label = PairLabel::kNegative;
  std::array<bool, 2> blanked_a{};
  std::array<bool, 2> blanked_b{};

  bool operator==(const SentencePair&) const = default;
};

struct BlankPolicy {
  double probability = 0.7;
  std::string blank_token = "[BLANK]";

  void validate() const {
    if (!(probability >= 0.0 && probability <= 1.0)) {
      throw Error(ErrorCode::kInvalidArgument, "blank probability outside [0,1]");
    }
  }
};

inline MarkedSentence to_marked(const corpus::RelationInstance& inst) {
  MarkedSentence m;
  m.sent_id = inst.record.sent_id;
  m.lang = inst.record.lang;
  m.text = inst.record.text;
  m.e1 = {inst.head().start, inst.head().end};
  m.e2 = {inst.tail().start, inst.tail().end};
  m.qid1 = inst.head().qid;
  m.qid2 = inst.tail().qid;
  m.pid = inst.pid;
  return m;
}

// Structural checks for a pair, independent of how it was sampled.
inline bool shares_exactly_one_entity(const MarkedSentence& a, const MarkedSentence& b) {
  const std::set<std::string> qa{a.qid1, a.qid2};
  const std::set<std::string> qb{b.qid1, b.qid2};
  std::size_t shared = 0;
  for (const auto& q : qa) shared += qb.count(q);
  return shared == 1;
}

inline bool satisfies_invariant(const SentencePair& p) {
  if (p.label == PairLabel::kPositive) {
    return p.a.qid1 == p.b.qid1 && p.a.qid2 == p.b.qid2;
  }
  return shares_exactly_one_entity(p.a, p.b) && p.a.pid != p.b.pid;
}

/// Read-only lookup structure over the instance set. Both maps are exact
/// projections of the input; groups hold instance indices in input order.
class PairIndex {
 public:
  using LangGroups = std::map<std::string, std::vector<std::size_t>>;

  PairIndex() = default;
  explicit PairIndex(std::vector<MarkedSentence> sentences) : sentences_(std::move(sentences)) {
    for (std::size_t i = 0; i < sentences_.size(); ++i) {
      const auto& s = sentences_[i];
      by_pair_[{s.qid1, s.qid2}][s.lang].push_back(i);
      by_entity_[s.qid1][s.pid][s.lang].push_back(i);
      if (s.qid2 != s.qid1) by_entity_[s.qid2][s.pid][s.lang].push_back(i);
      languages_.insert(s.lang);
    }
  }

  const std::vector<MarkedSentence>& sentences() const { return sentences_; }
  const MarkedSentence& at(std::size_t i) const { return sentences_[i]; }
  bool empty() const { return sentences_.empty(); }
  const std::set<std::string>& languages() const { return languages_; }

  const std::map<std::pair<std::string, std::string>, LangGroups>& by_pair() const {
    return by_pair_;
  }
  const std::map<std::string, std::map<std::string, LangGroups>>& by_entity() const {
    return by_entity_;
  }

  const LangGroups* pair_group(const std::string& q1, const std::string& q2) const {
    const auto it = by_pair_.find({q1, q2});
    return it == by_pair_.end() ? nullptr : &it->second;
  }

 private:
  std::vector<MarkedSentence> sentences_;
  std::map<std::pair<std::string, std::string>, LangGroups> by_pair_;
  std::map<std::string, std::map<std::string, LangGroups>> by_entity_;
  std::set<std::string> languages_;
};

inline PairIndex build_index(const std::vector<corpus::RelationInstance>& instances) {
  std::vector<MarkedSentence> sentences;
  sentences.reserve(instances.size());
  for (const auto& inst : instances) sentences.push_back(to_marked(inst));
  return PairIndex(std::move(sentences));
}

struct SamplerOptions {
  std::string anchor_lang = "en";
  // Pairs whose second side is also in the anchor language.
  bool allow_anchor_pairs = false;
  // Negatives may share the entity in different argument positions.
  bool cross_position_negatives = true;
};

/// Precomputed eligibility lists so that each draw is O(log n). Built once
/// from an index; immutable afterwards and shareable across shards.
class PairSampler {
 public:
  PairSampler(const PairIndex& index, SamplerOptions options)
      : index_(&index), options_(std::move(options)) {
    for (const auto& [key, groups] : index.by_pair()) {
      const auto anchor = groups.find(options_.anchor_lang);
      if (anchor == groups.end()) continue;
      for (const auto& [lang, members] : groups) {
        if (!lang_allowed(lang)) continue;
        if (lang == options_.anchor_lang && anchor->second.size() < 2) continue;
        positive_[lang].push_back(&groups);
      }
    }
    // A negative candidate is an (anchor sentence, other-language sentence)
    // combination reachable through a shared entity; store per language the
    // anchor sentences that have at least one partner.
    for (const auto& [qid, by_pid] : index.by_entity()) {
      for (const auto& [pid_a, langs_a] : by_pid) {
        const auto anchor = langs_a.find(options_.anchor_lang);
        if (anchor == langs_a.end()) continue;
        for (std::size_t ai : anchor->second) {
          for (const auto& lang : index.languages()) {
            if (!lang_allowed(lang)) continue;
            if (has_negative_partner(ai, qid, lang)) negative_[lang].push_back({ai, qid});
          }
        }
      }
    }
  }

  const SamplerOptions& options() const { return options_; }

  std::vector<std::string> languages() const {
    std::vector<std::string> out;
    for (const auto& lang : index_->languages()) {
      if (lang_allowed(lang)) out.push_back(lang);
    }
    return out;
  }

  std::size_t positive_groups(const std::string& lang) const {
    const auto it = positive_.find(lang);
    return it == positive_.end() ? 0 : it->second.size();
  }
  std::size_t negative_anchors(const std::string& lang) const {
    const auto it = negative_.find(lang);
    return it == negative_.end() ? 0 : it->second.size();
  }

  /// Positive pair whose second side is in `lang`, or any eligible language
  /// when `lang` is empty. nullopt means no eligible group (Exhausted).
  std::optional<SentencePair> sample_positive(Rng& rng, const std::string& lang = {}) const {
    const std::string target = lang.empty() ? pick_language(rng, true) : lang;
    if (target.empty()) return std::nullopt;
    const auto it = positive_.find(target);
    if (it == positive_.end() || it->second.empty()) return std::nullopt;
    const auto& groups = *it->second[rng.below(it->second.size())];
    const auto& anchors = groups.at(options_.anchor_lang);
    const auto& others = groups.at(target);
    const std::size_t ai = anchors[rng.below(anchors.size())];
    std::size_t bi = 0;
    if (target == options_.anchor_lang) {
      std::size_t pick = rng.below(others.size() - 1);
      bi = others[pick];
      if (bi == ai) bi = others.back();
    } else {
      bi = others[rng.below(others.size())];
    }
    SentencePair p;
    p.a = index_->at(ai);
    p.b = index_->at(bi);
    p.label = PairLabel::kPositive;
    return p;
  }

  /// Strong negative: one shared entity, different relations.
  std::optional<SentencePair> sample_strong_negative(Rng& rng, const std::string& lang = {}) const {
    const std::string target = lang.empty() ? pick_language(rng, false) : lang;
    if (target.empty()) return std::nullopt;
    const auto it = negative_.find(target);
    if (it == negative_.end() || it->second.empty()) return std::nullopt;
    const auto& [ai, qid] = it->second[rng.below(it->second.size())];
    std::vector<std::size_t> partners = negative_partners(ai, qid, target);
    const std::size_t bi = partners[rng.below(partners.size())];
    SentencePair p;
    p.a = index_->at(ai);
    p.b = index_->at(bi);
    p.label = PairLabel::kNegative;
    return p;
  }

 private:
  bool lang_allowed(const std::string& lang) const {
    return lang != options_.anchor_lang || options_.allow_anchor_pairs;
  }

  std::string pick_language(Rng& rng, bool positive) const {
    std::vector<std::string> langs;
    for (const auto& lang : languages()) {
      if (positive ? positive_groups(lang) > 0 : negative_anchors(lang) > 0) langs.push_back(lang);
    }
    if (langs.empty()) return {};
    return langs[rng.below(langs.size())];
  }

  bool valid_negative(std::size_t ai, std::size_t bi, const std::string& qid) const {
    if (ai == bi) return false;
    const auto& a = index_->at(ai);
    const auto& b = index_->at(bi);
    if (a.pid == b.pid || !shares_exactly_one_entity(a, b)) return false;
    if (!options_.cross_position_negatives) {
      const bool a_head = a.qid1 == qid;
      const bool b_head = b.qid1 == qid;
      if (a_head != b_head) return false;
    }
    return true;
  }

  std::vector<std::size_t> negative_partners(std::size_t ai, const std::string& qid,
                                             const std::string& lang) const {
    std::vector<std::size_t> out;
    const auto& by_pid = index_->by_entity().at(qid);
    for (const auto& [pid, langs] : by_pid) {
      const auto l = langs.find(lang);
      if (l == langs.end()) continue;
      for (std::size_t bi : l->second) {
        if (valid_negative(ai, bi, qid)) out.push_back(bi);
      }
    }
    return out;
  }

  bool has_negative_partner(std::size_t ai, const std::string& qid, const std::string& lang) const {
    const auto& by_pid = index_->by_entity().at(qid);
    for (const auto& [pid, langs] : by_pid) {
      const auto l = langs.find(lang);
      if (l == langs.end()) continue;
      for (std::size_t bi : l->second) {
        if (valid_negative(ai, bi, qid)) return true;
      }
    }
    return false;
  }

  const PairIndex* index_;
  SamplerOptions options_;
  std::map<std::string, std::vector<const PairIndex::LangGroups*>> positive_;
  std::map<std::string, std::vector<std::pair<std::size_t, std::string>>> negative_;
};

namespace detail {

// Replaces code-point span [s.start, s.end) in `text` with `token`; returns
// the signed length change.
inline std::ptrdiff_t replace_span(std::u32string& text, Span& s, const std::u32string& token) {
  const auto old_len = static_cast<std::ptrdiff_t>(s.end - s.start);
  text.replace(s.start, s.end - s.start, token);
  s.end = s.start + token.size();
  return static_cast<std::ptrdiff_t>(token.size()) - old_len;
}

inline void blank_sentence(MarkedSentence& m, std::array<bool, 2>& flags, const BlankPolicy& policy,
                           Rng& rng) {
  flags[0] = rng.bernoulli(policy.probability);
  flags[1] = rng.bernoulli(policy.probability);
  if (!flags[0] && !flags[1]) return;
  std::u32string text = utf8::decode(m.text);
  const std::u32string token = utf8::decode(policy.blank_token);
  // Replace the later span first so the earlier one's offsets stay valid.
  Span* first = &m.e1;
  Span* second = &m.e2;
  bool first_flag = flags[0];
  bool second_flag = flags[1];
  if (m.e2.start < m.e1.start) {
    std::swap(first, second);
    std::swap(first_flag, second_flag);
  }
  if (second_flag) replace_span(text, *second, token);
  if (first_flag) {
    const std::ptrdiff_t delta = replace_span(text, *first, token);
    second->start = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(second->start) + delta);
    second->end = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(second->end) + delta);
  }
  m.text = utf8::encode(text);
}

}  // namespace detail

/// Independent coin flip per mention (four per pair); spans are recomputed
/// and the decisions recorded in blanked_a / blanked_b.
inline SentencePair apply_blanks(SentencePair pair, const BlankPolicy& policy, Rng& rng) {
  policy.validate();
  detail::blank_sentence(pair.a, pair.blanked_a, policy, rng);
  detail::blank_sentence(pair.b, pair.blanked_b, policy, rng);
  return pair;
}

struct GenerateOptions {
  std::size_t count = 1000;
  std::uint64_t seed = 0;
  std::size_t shards = 1;
  std::size_t workers = 1;
  BlankPolicy policy;
  SamplerOptions sampler;
  // Relative weight per second-side language; empty means uniform.
  std::map<std::string, double> language_weights;
  std::size_t dedup_attempts = 8;
};

struct PairStats {
  std::size_t requested = 0;
  std::size_t emitted = 0;
  std::map<std::string, std::size_t> exhausted;  // "positive:es" -> skips
  std::map<std::string, std::size_t> label_histogram;
  std::map<std::string, std::size_t> language_histogram;
  std::size_t mentions = 0;
  std::size_t blanked = 0;
  std::size_t duplicates_within_shards = 0;
  std::size_t duplicates_global = 0;
};

struct GeneratedPairs {
  std::vector<std::vector<SentencePair>> shards;
  PairStats stats;
};

/// Language for every label-pair slot (two consecutive pair slots share one
/// language), using smooth weighted round robin so small counts are exact.
inline std::vector<std::string> language_schedule(const std::vector<std::string>& languages,
                                                  const std::map<std::string, double>& weights,
                                                  std::size_t slots) {
  std::vector<std::string> out;
  if (languages.empty()) return out;
  std::vector<double> w(languages.size(), 1.0);
  for (std::size_t i = 0; i < languages.size(); ++i) {
    if (!weights.empty()) {
      const auto it = weights.find(languages[i]);
      w[i] = it == weights.end() ? 0.0 : it->second;
      if (w[i] < 0.0) throw Error(ErrorCode::kInvalidArgument, "negative language weight");
    }
  }
  double total = 0.0;
  for (double x : w) total += x;
  if (total <= 0.0) throw Error(ErrorCode::kInvalidArgument, "language weights sum to zero");
  std::vector<double> current(languages.size(), 0.0);
  out.reserve(slots);
  for (std::size_t t = 0; t < slots; ++t) {
    std::size_t best = 0;
    for (std::size_t i = 0; i < languages.size(); ++i) {
      current[i] += w[i];
      if (current[i] > current[best]) best = i;
    }
    current[best] -= total;
    out.push_back(languages[best]);
  }
  return out;
}

/// Stratified generation: global slot i has label positive when i is even
/// and language schedule[i / 2]. Slot ranges are split evenly across shards;
/// each shard draws from its own stream seeded by mix_seed(seed, shard), so
/// output depends only on (inputs, seed, shard count), never on workers.
inline GeneratedPairs generate_pairs(const PairIndex& index, const GenerateOptions& opt) {
  if (opt.count < 1) throw Error(ErrorCode::kInvalidArgument, "count must be >= 1");
  if (opt.shards < 1) throw Error(ErrorCode::kInvalidArgument, "shards must be >= 1");
  opt.policy.validate();
  const PairSampler sampler(index, opt.sampler);
  const std::vector<std::string> langs = sampler.languages();
  const std::vector<std::string> schedule =
      language_schedule(langs, opt.language_weights, (opt.count + 1) / 2);

  struct ShardOut {
    std::vector<SentencePair> pairs;
    std::map<std::string, std::size_t> exhausted;
    std::size_t duplicates = 0;
  };
  auto shard_out = parallel_map(opt.shards, opt.workers, [&](std::size_t shard) {
    ShardOut out;
    const std::size_t begin = shard * opt.count / opt.shards;
    const std::size_t end = (shard + 1) * opt.count / opt.shards;
    Rng rng(mix_seed(opt.seed, shard));
    std::set<std::tuple<std::string, std::string, int>> seen;
    for (std::size_t slot = begin; slot < end; ++slot) {
      const bool positive = slot % 2 == 0;
      const std::string lang = schedule.empty() ? std::string() : schedule[slot / 2];
      std::optional<SentencePair> pair;
      for (std::size_t attempt = 0; attempt <= opt.dedup_attempts; ++attempt) {
        pair = lang.empty() ? std::nullopt
               : positive   ? sampler.sample_positive(rng, lang)
                            : sampler.sample_strong_negative(rng, lang);
        if (!pair) break;
        const auto key = std::make_tuple(pair->a.sent_id, pair->b.sent_id,
                                         static_cast<int>(pair->label));
        if (seen.insert(key).second) break;
        if (attempt == opt.dedup_attempts) ++out.duplicates;
      }
      if (!pair) {
        ++out.exhausted[std::string(positive ? "positive:" : "negative:") + lang];
        continue;
      }
      out.pairs.push_back(apply_blanks(std::move(*pair), opt.policy, rng));
    }
    return out;
  });

  GeneratedPairs result;
  result.stats.requested = opt.count;
  std::set<std::tuple<std::string, std::string, int>> global;
  for (auto& s : shard_out) {
    for (const auto& [k, v] : s.exhausted) result.stats.exhausted[k] += v;
    result.stats.duplicates_within_shards += s.duplicates;
    for (const auto& p : s.pairs) {
      ++result.stats.emitted;
      ++result.stats.label_histogram[p.label == PairLabel::kPositive ? "positive" : "negative"];
      ++result.stats.language_histogram[p.b.lang];
      result.stats.mentions += 4;
      result.stats.blanked +=
          p.blanked_a[0] + p.blanked_a[1] + p.blanked_b[0] + p.blanked_b[1];
      if (!global.insert({p.a.sent_id, p.b.sent_id, static_cast<int>(p.label)}).second) {
        ++result.stats.duplicates_global;
      }
    }
    result.shards.push_back(std::move(s.pairs));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Serialization: {"a":{"text","lang","e1":[s,e],"e2":[s,e]},"b":{...},"label":0|1}

inline nlohmann::ordered_json side_json(const MarkedSentence& m) {
  nlohmann::ordered_json j;
  j["text"] = m.text;
  j["lang"] = m.lang;
  j["e1"] = {m.e1.start, m.e1.end};
  j["e2"] = {m.e2.start, m.e2.end};
  return j;
}

inline nlohmann::ordered_json to_json(const SentencePair& p) {
  nlohmann::ordered_json j;
  j["a"] = side_json(p.a);
  j["b"] = side_json(p.b);
  j["label"] = static_cast<int>(p.label);
  return j;
}

inline std::string to_jsonl(const std::vector<SentencePair>& pairs) {
  std::string out;
  for (const auto& p : pairs) {
    out += to_json(p).dump();
    out += '\n';
  }
  return out;
}

// The subset of a pair that the trainer consumes.
struct PairRecord {
  MarkedSentence a;
  MarkedSentence b;
  int label = 0;
};

inline MarkedSentence side_from_json(const nlohmann::json& j) {
  MarkedSentence m;
  m.text = j.at("text").get<std::string>();
  m.lang = j.at("lang").get<std::string>();
  const auto e1 = j.at("e1").get<std::array<std::size_t, 2>>();
  const auto e2 = j.at("e2").get<std::array<std::size_t, 2>>();
  m.e1 = {e1[0], e1[1]};
  m.e2 = {e2[0], e2[1]};
  return m;
}

inline PairRecord pair_from_json(const nlohmann::json& j) {
  PairRecord r;
  r.a = side_from_json(j.at("a"));
  r.b = side_from_json(j.at("b"));
  r.label = j.at("label").get<int>();
  if (r.label != 0 && r.label != 1) throw Error(ErrorCode::kMalformedRecord, "label not 0/1");
  return r;
}

inline std::vector<PairRecord> read_pairs(const std::string& path) {
  return corpus::parse_jsonl(io::read_file(path), pair_from_json);
}

// Shards concatenated in order, as they would be written to disk.
inline std::vector<PairRecord> to_records(const GeneratedPairs& g) {
  std::vector<PairRecord> out;
  for (const auto& shard : g.shards) {
    for (const auto& p : shard) out.push_back({p.a, p.b, static_cast<int>(p.label)});
  }
  return out;
}

inline nlohmann::ordered_json manifest_json(const PairStats& s, const GenerateOptions& opt) {
  nlohmann::ordered_json j;
  j["requested"] = s.requested;
  j["emitted"] = s.emitted;
  j["seed"] = opt.seed;
  j["shards"] = opt.shards;
  j["anchor_lang"] = opt.sampler.anchor_lang;
  j["blank_probability"] = opt.policy.probability;
  j["exhausted"] = s.exhausted;
  j["labels"] = s.label_histogram;
  j["languages"] = s.language_histogram;
  const double positives =
      s.label_histogram.count("positive") ? static_cast<double>(s.label_histogram.at("positive")) : 0.0;
  j["positive_fraction"] = s.emitted == 0 ? 0.0 : positives / static_cast<double>(s.emitted);
  double max_dev = 0.0;
  if (!s.language_histogram.empty() && s.emitted > 0) {
    const double uniform = 1.0 / static_cast<double>(s.language_histogram.size());
    for (const auto& [lang, n] : s.language_histogram) {
      max_dev = std::max(max_dev, std::abs(static_cast<double>(n) / static_cast<double>(s.emitted) - uniform));
    }
  }
  j["language_max_deviation"] = max_dev;
  j["mentions"] = s.mentions;
  j["blanked"] = s.blanked;
  j["blank_rate"] = s.mentions == 0 ? 0.0 : static_cast<double>(s.blanked) / static_cast<double>(s.mentions);
  j["duplicates_within_shards"] = s.duplicates_within_shards;
  j["duplicates_global"] = s.duplicates_global;
  return j;
}

}  // namespace relxforge::pairs

#endif  // RELXFORGE_PAIRS_HPP_
