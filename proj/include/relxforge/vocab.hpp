#ifndef RELXFORGE_VOCAB_HPP_
#define RELXFORGE_VOCAB_HPP_

// Subword vocabulary (frequency-merge trained, greedy longest-match
// encoding with a "##" continuation prefix), entity-marker insertion and
// MLM masking.

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "relxforge/error.hpp"
#include "relxforge/io.hpp"
#include "relxforge/rng.hpp"
#include "relxforge/utf8.hpp"

namespace relxforge::text {

using TokenId = std::int32_t;

inline constexpr std::array<std::string_view, 10> kSpecialTokens = {
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "[BLANK]", "<e1>", "</e1>", "<e2>", "</e2>"};

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kUnk = 1;
inline constexpr TokenId kCls = 2;
inline constexpr TokenId kSep = 3;
inline constexpr TokenId kMask = 4;
inline constexpr TokenId kBlank = 5;
inline constexpr TokenId kE1Start = 6;
inline constexpr TokenId kE1End = 7;
inline constexpr TokenId kE2Start = 8;
inline constexpr TokenId kE2End = 9;
inline constexpr TokenId kNumSpecial = 10;

inline constexpr TokenId kIgnoreLabel = -100;
inline constexpr std::string_view kContinuation = "##";
inline constexpr std::size_t kMaxWordChars = 100;

/// Bijective token <-> id table. Ids [0, kNumSpecial) are the special tokens
/// in kSpecialTokens order.
class Vocab {
 public:
  Vocab() {
    for (auto s : kSpecialTokens) push(std::string(s));
  }

  // Tokens after the specials, in id order.
  explicit Vocab(const std::vector<std::string>& regular) : Vocab() {
    for (const auto& t : regular) {
      if (index_.count(t) > 0) throw Error(ErrorCode::kInvalidArgument, "duplicate token " + t);
      push(t);
    }
  }

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::optional<TokenId> find(std::string_view token) const {
    const auto it = index_.find(std::string(token));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  bool contains(std::string_view token) const { return index_.count(std::string(token)) > 0; }
  static bool is_special(TokenId id) { return id >= 0 && id < kNumSpecial; }

  // One token per line, line number = id, specials first.
  std::string to_text() const {
    std::string out;
    for (const auto& t : tokens_) {
      out += t;
      out += '\n';
    }
    return out;
  }
  void save(const std::string& path) const { io::write_file(path, to_text()); }

  static Vocab from_text(std::string_view text) {
    const auto lines = io::split_lines(text);
    if (lines.size() < static_cast<std::size_t>(kNumSpecial)) {
      throw Error(ErrorCode::kMalformedRecord, "vocab shorter than the special-token block");
    }
    for (std::size_t i = 0; i < static_cast<std::size_t>(kNumSpecial); ++i) {
      if (lines[i] != kSpecialTokens[i]) {
        throw Error(ErrorCode::kMalformedRecord, "vocab line " + std::to_string(i + 1) +
                                                     " must be " + std::string(kSpecialTokens[i]));
      }
    }
    return Vocab(std::vector<std::string>(lines.begin() + kNumSpecial, lines.end()));
  }
  static Vocab load(const std::string& path) { return from_text(io::read_file(path)); }

 private:
  void push(std::string t) {
    index_.emplace(t, static_cast<TokenId>(tokens_.size()));
    tokens_.push_back(std::move(t));
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Whitespace split, then every punctuation character becomes its own word.
inline std::vector<std::u32string> pretokenize(std::u32string_view text) {
  std::vector<std::u32string> words;
  std::u32string cur;
  auto flush = [&] {
    if (!cur.empty()) words.push_back(std::move(cur));
    cur.clear();
  };
  for (char32_t c : text) {
    if (utf8::is_space(c)) {
      flush();
    } else if (utf8::is_punct(c)) {
      flush();
      words.emplace_back(1, c);
    } else {
      cur.push_back(c);
    }
  }
  flush();
  return words;
}

inline std::vector<std::u32string> pretokenize(std::string_view text) {
  return pretokenize(std::u32string_view(utf8::decode(text)));
}

// Canonical spacing under which decode(encode(x)) == x for covered text.
inline std::string normalize_spacing(std::string_view text) {
  std::string out;
  for (const auto& w : pretokenize(text)) {
    if (!out.empty()) out += ' ';
    out += utf8::encode(w);
  }
  return out;
}

/// Greedy longest-match segmentation of one word. A word with any
/// unmatchable position becomes a single [UNK].
inline void encode_word(std::u32string_view word, const Vocab& vocab, std::vector<TokenId>& out) {
  if (word.size() > kMaxWordChars) {
    out.push_back(kUnk);
    return;
  }
  const std::size_t mark = out.size();
  std::size_t start = 0;
  while (start < word.size()) {
    std::size_t end = word.size();
    std::optional<TokenId> found;
    while (end > start) {
      std::string piece = start > 0 ? std::string(kContinuation) : std::string();
      piece += utf8::encode(word.substr(start, end - start));
      found = vocab.find(piece);
      if (found && !Vocab::is_special(*found)) break;
      found.reset();
      --end;
    }
    if (!found) {
      out.resize(mark);
      out.push_back(kUnk);
      return;
    }
    out.push_back(*found);
    start = end;
  }
}

inline std::vector<TokenId> encode_ids(std::string_view text, const Vocab& vocab) {
  std::vector<TokenId> ids;
  for (const auto& w : pretokenize(text)) encode_word(w, vocab, ids);
  return ids;
}

struct TokenSequence {
  std::vector<TokenId> ids;
  std::vector<std::uint8_t> attention_mask;  // 1 exactly on non-[PAD] positions
  std::size_t max_len = 0;
  bool truncated = false;

  std::size_t size() const { return ids.size(); }
  bool operator==(const TokenSequence&) const = default;
};

inline TokenSequence make_sequence(std::vector<TokenId> ids, std::size_t max_len, bool truncated) {
  TokenSequence seq;
  seq.attention_mask.resize(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) seq.attention_mask[i] = ids[i] != kPad;
  seq.ids = std::move(ids);
  seq.max_len = max_len;
  seq.truncated = truncated;
  return seq;
}

/// Plain subword encoding (no [CLS]/[SEP]); truncation at max_len is
/// reported through `truncated`.
inline TokenSequence encode(std::string_view text, const Vocab& vocab, std::size_t max_len) {
  std::vector<TokenId> ids = encode_ids(text, vocab);
  const bool truncated = ids.size() > max_len;
  if (truncated) ids.resize(max_len);
  return make_sequence(std::move(ids), max_len, truncated);
}

inline std::string decode(const std::vector<TokenId>& ids, const Vocab& vocab) {
  std::string out;
  for (TokenId id : ids) {
    if (id == kPad) continue;
    if (id < 0 || static_cast<std::size_t>(id) >= vocab.size()) {
      throw Error(ErrorCode::kTokenOutOfRange, "id " + std::to_string(id));
    }
    const std::string& tok = vocab.token(id);
    if (!Vocab::is_special(id) && tok.starts_with(kContinuation)) {
      out += tok.substr(kContinuation.size());
    } else {
      if (!out.empty()) out += ' ';
      out += tok;
    }
  }
  return out;
}

/// Frequency-merge subword trainer. Starts from specials plus every
/// character seen (word-initial and "##"-continuation forms), then
/// repeatedly merges the most frequent adjacent symbol pair (ties broken by
/// the lexicographically smallest pair) until target_size is reached or
/// every word is a single symbol.
inline Vocab train_vocab(const std::vector<std::string>& corpus, std::size_t target_size) {
  if (target_size < 300) throw Error(ErrorCode::kInvalidArgument, "target_size must be >= 300");
  if (corpus.empty()) throw Error(ErrorCode::kCorpusTooSmall, "empty corpus");

  std::map<std::u32string, std::uint64_t> word_counts;
  for (const auto& line : corpus) {
    for (auto& w : pretokenize(line)) {
      if (w.size() <= kMaxWordChars) ++word_counts[w];
    }
  }
  if (word_counts.empty()) throw Error(ErrorCode::kCorpusTooSmall, "corpus has no words");

  struct Word {
    std::vector<std::string> symbols;
    std::uint64_t count;
  };
  std::vector<Word> words;
  std::map<std::string, bool> alphabet;
  for (const auto& [w, count] : word_counts) {
    Word word{{}, count};
    for (std::size_t i = 0; i < w.size(); ++i) {
      std::string sym = i == 0 ? std::string() : std::string(kContinuation);
      utf8::append(sym, w[i]);
      alphabet[sym] = true;
      word.symbols.push_back(std::move(sym));
    }
    words.push_back(std::move(word));
  }

  std::vector<std::string> regular;
  for (const auto& [sym, unused] : alphabet) {
    if (std::find(kSpecialTokens.begin(), kSpecialTokens.end(), sym) == kSpecialTokens.end()) {
      regular.push_back(sym);
    }
  }
  if (static_cast<std::size_t>(kNumSpecial) + regular.size() > target_size) {
    throw Error(ErrorCode::kCorpusTooSmall,
                "alphabet of " + std::to_string(regular.size()) + " symbols exceeds target size");
  }
  std::map<std::string, bool> present(alphabet);

  while (static_cast<std::size_t>(kNumSpecial) + regular.size() < target_size) {
    std::map<std::pair<std::string, std::string>, std::uint64_t> pair_counts;
    for (const auto& w : words) {
      for (std::size_t i = 0; i + 1 < w.symbols.size(); ++i) {
        pair_counts[{w.symbols[i], w.symbols[i + 1]}] += w.count;
      }
    }
    if (pair_counts.empty()) break;
    auto best = pair_counts.begin();
    for (auto it = pair_counts.begin(); it != pair_counts.end(); ++it) {
      if (it->second > best->second) best = it;
    }
    const auto [left, right] = best->first;
    const std::string merged = left + right.substr(kContinuation.size());
    for (auto& w : words) {
      std::vector<std::string> next;
      next.reserve(w.symbols.size());
      for (std::size_t i = 0; i < w.symbols.size(); ++i) {
        if (i + 1 < w.symbols.size() && w.symbols[i] == left && w.symbols[i + 1] == right) {
          next.push_back(merged);
          ++i;
        } else {
          next.push_back(w.symbols[i]);
        }
      }
      w.symbols = std::move(next);
    }
    if (!present[merged]) {
      present[merged] = true;
      regular.push_back(merged);
    }
  }
  return Vocab(regular);
}

struct EntitySpan {
  std::size_t start = 0;  // code points
  std::size_t end = 0;
};

/// [CLS] ... <e1> head </e1> ... <e2> tail </e2> ... [SEP], markers in text
/// order. When the sequence exceeds max_len, the window keeps both entities
/// and everything between them, then trims left/right context
/// symmetrically. A mention whose text is exactly `blank_token` encodes as
/// the single [BLANK] id. Throws kSpansTooWide when the mandatory part
/// cannot fit.
inline TokenSequence mark_entities(std::string_view text, EntitySpan e1, EntitySpan e2,
                                   const Vocab& vocab, std::size_t max_len,
                                   std::string_view blank_token = "[BLANK]") {
  const std::u32string t = utf8::decode(text);
  auto valid = [&](EntitySpan s) { return s.start < s.end && s.end <= t.size(); };
  if (!valid(e1) || !valid(e2)) throw Error(ErrorCode::kInvalidArgument, "entity span out of range");
  if (e1.start < e2.end && e2.start < e1.end) {
    throw Error(ErrorCode::kInvalidArgument, "entity spans overlap");
  }
  const bool head_first = e1.start < e2.start;
  const EntitySpan first = head_first ? e1 : e2;
  const EntitySpan second = head_first ? e2 : e1;
  const TokenId open_first = head_first ? kE1Start : kE2Start;
  const TokenId close_first = head_first ? kE1End : kE2End;
  const TokenId open_second = head_first ? kE2Start : kE1Start;
  const TokenId close_second = head_first ? kE2End : kE1End;

  const std::u32string_view view(t);
  auto encode_segment = [&](std::u32string_view seg) {
    std::vector<TokenId> ids;
    for (const auto& w : pretokenize(seg)) encode_word(w, vocab, ids);
    return ids;
  };
  const std::u32string blank32 = utf8::decode(blank_token);
  auto encode_mention = [&](std::u32string_view seg) {
    if (seg == blank32) return std::vector<TokenId>{kBlank};
    return encode_segment(seg);
  };
  const auto left = encode_segment(view.substr(0, first.start));
  const auto ent_a = encode_mention(view.substr(first.start, first.end - first.start));
  const auto middle = encode_segment(view.substr(first.end, second.start - first.end));
  const auto ent_b = encode_mention(view.substr(second.start, second.end - second.start));
  const auto right = encode_segment(view.substr(second.end));

  const std::size_t mandatory = 6 + ent_a.size() + middle.size() + ent_b.size();
  if (mandatory > max_len) {
    throw Error(ErrorCode::kSpansTooWide, "entities need " + std::to_string(mandatory) +
                                              " tokens, max_len is " + std::to_string(max_len));
  }
  const std::size_t budget = max_len - mandatory;
  std::size_t keep_left = std::min(left.size(), budget / 2);
  const std::size_t keep_right = std::min(right.size(), budget - keep_left);
  keep_left = std::min(left.size(), budget - keep_right);
  const bool truncated = keep_left < left.size() || keep_right < right.size();

  std::vector<TokenId> ids;
  ids.reserve(mandatory + keep_left + keep_right);
  ids.push_back(kCls);
  ids.insert(ids.end(), left.end() - static_cast<std::ptrdiff_t>(keep_left), left.end());
  ids.push_back(open_first);
  ids.insert(ids.end(), ent_a.begin(), ent_a.end());
  ids.push_back(close_first);
  ids.insert(ids.end(), middle.begin(), middle.end());
  ids.push_back(open_second);
  ids.insert(ids.end(), ent_b.begin(), ent_b.end());
  ids.push_back(close_second);
  ids.insert(ids.end(), right.begin(), right.begin() + static_cast<std::ptrdiff_t>(keep_right));
  ids.push_back(kSep);
  return make_sequence(std::move(ids), max_len, truncated);
}

struct MaskingConfig {
  double select_rate = 0.15;
  double mask_rate = 0.8;    // of selected: -> [MASK]
  double random_rate = 0.1;  // of selected: -> random regular token; rest unchanged
};

struct MaskedSequence {
  TokenSequence seq;
  std::vector<TokenId> labels;  // original id at selected positions, kIgnoreLabel elsewhere
};

/// Independent Bernoulli selection over non-special, non-[PAD] positions.
inline MaskedSequence mask_for_mlm(const TokenSequence& seq, std::size_t vocab_size, Rng& rng,
                                   const MaskingConfig& cfg = {}) {
  MaskedSequence out{seq, std::vector<TokenId>(seq.ids.size(), kIgnoreLabel)};
  const auto regular = static_cast<std::uint64_t>(vocab_size) - kNumSpecial;
  for (std::size_t i = 0; i < seq.ids.size(); ++i) {
    const TokenId id = seq.ids[i];
    if (Vocab::is_special(id)) continue;
    if (!rng.bernoulli(cfg.select_rate)) continue;
    out.labels[i] = id;
    const double r = rng.uniform();
    if (r < cfg.mask_rate) {
      out.seq.ids[i] = kMask;
    } else if (r < cfg.mask_rate + cfg.random_rate && regular > 0) {
      out.seq.ids[i] = static_cast<TokenId>(kNumSpecial + rng.below(regular));
    }
  }
  return out;
}

}  // namespace relxforge::text

#endif  // RELXFORGE_VOCAB_HPP_
