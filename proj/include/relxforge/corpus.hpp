#ifndef RELXFORGE_CORPUS_HPP_
#define RELXFORGE_CORPUS_HPP_

// Distant-supervision corpus construction: wiki markup -> plain documents
// with hyperlink spans -> sentences -> KB-resolved entities -> relation
// instances joined against a triple store.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "relxforge/error.hpp"
#include "relxforge/io.hpp"
#include "relxforge/parallel.hpp"
#include "relxforge/utf8.hpp"

namespace relxforge::corpus {

// Offsets everywhere in this module are Unicode code points.
struct LinkSpan {
  std::size_t start = 0;
  std::size_t end = 0;
  std::string target_title;
  std::string surface;

  bool operator==(const LinkSpan&) const = default;
};

struct Document {
  std::string doc_id;
  std::string lang;
  std::string text;
  std::vector<LinkSpan> links;  // sorted by start, non-overlapping
};

struct SentencePrecursor {
  std::string text;
  std::vector<LinkSpan> links;  // offsets relative to `text`
};

struct Entity {
  std::size_t start = 0;
  std::size_t end = 0;
  std::string qid;
  std::string surface;

  bool operator==(const Entity&) const = default;
};

struct SentenceRecord {
  std::string sent_id;
  std::string lang;
  std::string text;
  std::vector<Entity> entities;

  bool operator==(const SentenceRecord&) const = default;
};

struct RelationInstance {
  SentenceRecord record;
  std::size_t e1 = 0;
  std::size_t e2 = 0;
  std::string pid;

  const Entity& head() const { return record.entities[e1]; }
  const Entity& tail() const { return record.entities[e2]; }
  bool operator==(const RelationInstance&) const = default;
};

inline bool is_kb_id(std::string_view id, char prefix) {
  if (id.size() < 2 || id[0] != prefix) return false;
  return std::all_of(id.begin() + 1, id.end(), [](char c) { return c >= '0' && c <= '9'; });
}
inline bool is_qid(std::string_view id) { return is_kb_id(id, 'Q'); }
inline bool is_pid(std::string_view id) { return is_kb_id(id, 'P'); }

/// Wiki title convention: underscores become spaces, whitespace runs
/// collapse to one space, leading/trailing whitespace is dropped and the
/// first character is uppercased. Idempotent.
inline std::string normalize_title(std::string_view title) {
  std::u32string in = utf8::decode(title);
  std::u32string out;
  out.reserve(in.size());
  for (char32_t c : in) {
    if (c == '_') c = ' ';
    if (utf8::is_space(c)) {
      if (!out.empty() && out.back() != ' ') out.push_back(' ');
    } else {
      out.push_back(c);
    }
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  if (!out.empty()) out[0] = utf8::to_upper(out[0]);
  return utf8::encode(out);
}

namespace detail {

inline bool starts_with(const std::u32string& s, std::size_t i, std::u32string_view pat) {
  return s.size() >= i + pat.size() && std::u32string_view(s).substr(i, pat.size()) == pat;
}

inline std::string ascii_lower(std::u32string_view s) {
  std::string out;
  for (char32_t c : s) {
    if (c >= 'A' && c <= 'Z') c += 32;
    utf8::append(out, c);
  }
  return out;
}

inline bool is_media_or_category_namespace(std::u32string_view prefix) {
  static const std::unordered_set<std::string> kNamespaces = {
      "file", "image", "category", "media", "datei", "bild", "kategorie", "fichier",
      "catégorie", "archivo", "imagen", "categoría", "dosya", "resim", "kategori"};
  return kNamespaces.count(ascii_lower(prefix)) > 0;
}

// Anchor text: quote markup removed, whitespace collapsed and trimmed.
inline std::u32string clean_anchor(std::u32string_view raw) {
  std::u32string out;
  std::size_t i = 0;
  while (i < raw.size()) {
    if (raw[i] == '\'' && i + 1 < raw.size() && raw[i + 1] == '\'') {
      while (i < raw.size() && raw[i] == '\'') ++i;
      continue;
    }
    if (utf8::is_space(raw[i])) {
      if (!out.empty() && out.back() != ' ') out.push_back(' ');
    } else {
      out.push_back(raw[i]);
    }
    ++i;
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

inline std::u32string_view trim32(std::u32string_view s) {
  while (!s.empty() && utf8::is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && utf8::is_space(s.back())) s.remove_suffix(1);
  return s;
}

}  // namespace detail

/// Converts one page body to plain text. Handles internal links, templates
/// (nested), refs, comments, headings and bold/italic quotes; anything else
/// passes through verbatim. Throws kUnbalancedMarkup for an unclosed
/// template, ref or comment.
inline Document parse_wikitext(std::string_view raw, std::string doc_id, std::string lang) {
  using detail::starts_with;
  const std::u32string in = utf8::decode(raw);
  const std::size_t n = in.size();
  std::u32string out;
  out.reserve(n);
  std::vector<LinkSpan> links;

  auto unbalanced = [&](std::string_view what, std::size_t at) {
    return Error(ErrorCode::kUnbalancedMarkup,
                 doc_id + ": unclosed " + std::string(what) + " at offset " + std::to_string(at));
  };

  std::size_t i = 0;
  bool line_start = true;
  while (i < n) {
    const char32_t c = in[i];
    if (line_start && c == '=') {
      std::size_t e = in.find(U'\n', i);
      if (e == std::u32string::npos) e = n;
      std::u32string_view line = detail::trim32(std::u32string_view(in).substr(i, e - i));
      if (line.size() >= 2 && line.back() == '=') {
        i = e;
        continue;
      }
    }
    line_start = false;

    if (starts_with(in, i, U"<!--")) {
      const std::size_t e = in.find(U"-->", i + 4);
      if (e == std::u32string::npos) throw unbalanced("comment", i);
      i = e + 3;
      continue;
    }
    if (starts_with(in, i, U"{{")) {
      std::size_t j = i;
      int depth = 0;
      while (j < n) {
        if (starts_with(in, j, U"{{")) {
          ++depth;
          j += 2;
        } else if (starts_with(in, j, U"}}")) {
          --depth;
          j += 2;
          if (depth == 0) break;
        } else {
          ++j;
        }
      }
      if (depth != 0) throw unbalanced("template", i);
      i = j;
      continue;
    }
    if (starts_with(in, i, U"<ref") && i + 4 < n &&
        (in[i + 4] == ' ' || in[i + 4] == '>' || in[i + 4] == '/')) {
      const std::size_t gt = in.find(U'>', i);
      if (gt == std::u32string::npos) throw unbalanced("ref", i);
      if (in[gt - 1] == '/') {
        i = gt + 1;
        continue;
      }
      const std::size_t close = in.find(U"</ref>", gt);
      if (close == std::u32string::npos) throw unbalanced("ref", i);
      i = close + 6;
      continue;
    }
    if (starts_with(in, i, U"[[")) {
      std::size_t j = i + 2;
      int depth = 1;
      while (j < n) {
        if (starts_with(in, j, U"[[")) {
          ++depth;
          j += 2;
        } else if (starts_with(in, j, U"]]")) {
          if (--depth == 0) break;
          j += 2;
        } else {
          ++j;
        }
      }
      if (depth != 0) {
        out.push_back(c);  // stray brackets are plain text
        ++i;
        continue;
      }
      const std::u32string_view inner = std::u32string_view(in).substr(i + 2, j - i - 2);
      i = j + 2;
      const std::size_t bar = inner.find(U'|');
      const std::size_t colon = inner.find(U':');
      if (colon != std::u32string_view::npos && (bar == std::u32string_view::npos || colon < bar) &&
          detail::is_media_or_category_namespace(detail::trim32(inner.substr(0, colon)))) {
        continue;
      }
      const std::u32string_view title = detail::trim32(inner.substr(0, bar));
      std::u32string anchor = detail::clean_anchor(
          bar == std::u32string_view::npos ? title : inner.substr(bar + 1));
      if (anchor.empty()) anchor = detail::clean_anchor(title);
      if (anchor.empty()) continue;
      LinkSpan span;
      span.start = out.size();
      out += anchor;
      span.end = out.size();
      span.target_title = utf8::encode(title);
      span.surface = utf8::encode(anchor);
      links.push_back(std::move(span));
      continue;
    }
    if (c == '\'' && i + 1 < n && in[i + 1] == '\'') {
      while (i < n && in[i] == '\'') ++i;
      continue;
    }
    if (c == '\n') {
      while (!out.empty() && out.back() == ' ') out.pop_back();
      if (!out.empty() && out.back() != '\n') out.push_back('\n');
      line_start = true;
      ++i;
      continue;
    }
    if (utf8::is_space(c)) {
      if (!out.empty() && out.back() != ' ' && out.back() != '\n') out.push_back(' ');
      ++i;
      continue;
    }
    out.push_back(c);
    ++i;
  }
  // Link anchors never end in whitespace, so popping trailing blanks cannot
  // cut into a span.
  while (!out.empty() && (out.back() == ' ' || out.back() == '\n')) out.pop_back();

  Document doc;
  doc.doc_id = std::move(doc_id);
  doc.lang = std::move(lang);
  doc.text = utf8::encode(out);
  doc.links = std::move(links);
  return doc;
}

// Tokens (including the trailing period) that never end a sentence.
class AbbreviationList {
 public:
  AbbreviationList() = default;
  explicit AbbreviationList(const std::vector<std::string>& entries) {
    for (const auto& e : entries) add(e);
  }

  void add(std::string_view entry) {
    const std::string_view t = io::trim(entry);
    if (t.empty() || t.front() == '#') return;
    entries_.insert(utf8::decode(t));
  }
  bool contains(std::u32string_view token) const {
    return entries_.count(std::u32string(token)) > 0;
  }
  std::size_t size() const { return entries_.size(); }

  static AbbreviationList from_file(const std::string& path) {
    AbbreviationList list;
    for (const auto& line : io::read_lines(path)) list.add(line);
    return list;
  }

  // <dir>/<lang>.txt, or an empty list when the file does not exist.
  static AbbreviationList for_language(const std::string& dir, const std::string& lang) {
    if (dir.empty()) return {};
    const std::filesystem::path p = std::filesystem::path(dir) / (lang + ".txt");
    if (!std::filesystem::exists(p)) return {};
    return from_file(p.string());
  }

 private:
  std::set<std::u32string> entries_;
};

namespace detail {

inline bool is_terminator(char32_t c) { return c == '.' || c == '!' || c == '?'; }

inline bool is_closing(char32_t c) {
  return c == '"' || c == '\'' || c == ')' || c == ']' || c == 0xBB || c == 0x201D || c == 0x2019;
}

inline bool is_sentence_opener(char32_t c) {
  return utf8::is_upper(c) || c == '"' || c == '\'' || c == 0xAB || c == 0x201C ||
         c == 0x2018 || c == 0x201E || c == 0xBF || c == 0xA1 || c == '(';
}

}  // namespace detail

/// Rule-based splitter: a terminator run (. ! ?) plus optional closing
/// quotes, followed by whitespace and an uppercase letter or opening quote,
/// ends a sentence, unless the token ending in '.' is a listed abbreviation
/// or the cut would fall inside a link span. Newlines always end a sentence.
inline std::vector<SentencePrecursor> split_sentences(const Document& doc,
                                                      const AbbreviationList& abbreviations) {
  const std::u32string text = utf8::decode(doc.text);
  const std::size_t n = text.size();
  std::vector<std::pair<std::size_t, std::size_t>> bounds;  // [start, end)

  auto inside_span = [&](std::size_t cut) {
    for (const auto& l : doc.links) {
      if (l.start < cut && l.end > cut) return true;
      if (l.start >= cut) break;
    }
    return false;
  };

  std::size_t start = 0;
  std::size_t i = 0;
  while (i < n) {
    const char32_t c = text[i];
    if (c == '\n') {
      bounds.emplace_back(start, i);
      start = i + 1;
      ++i;
      continue;
    }
    if (!detail::is_terminator(c)) {
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    while (j < n && detail::is_terminator(text[j])) ++j;
    while (j < n && detail::is_closing(text[j])) ++j;
    if (j >= n || !(text[j] == ' ' || text[j] == '\t')) {
      i = j;
      continue;
    }
    std::size_t k = j;
    while (k < n && (text[k] == ' ' || text[k] == '\t')) ++k;
    if (k >= n || !detail::is_sentence_opener(text[k])) {
      i = j;
      continue;
    }
    if (c == '.' && j == i + 1) {
      std::size_t w = i;
      while (w > start && !utf8::is_space(text[w - 1])) --w;
      const std::u32string_view token = std::u32string_view(text).substr(w, i + 1 - w);
      if (abbreviations.contains(token)) {
        i = j;
        continue;
      }
    }
    if (inside_span(j)) {
      i = j;
      continue;
    }
    bounds.emplace_back(start, j);
    start = k;
    i = k;
  }
  if (start < n) bounds.emplace_back(start, n);

  std::vector<SentencePrecursor> out;
  for (auto [b, e] : bounds) {
    while (b < e && utf8::is_space(text[b])) ++b;
    while (e > b && utf8::is_space(text[e - 1])) --e;
    if (b == e) continue;
    SentencePrecursor p;
    p.text = utf8::encode(std::u32string_view(text).substr(b, e - b));
    for (const auto& l : doc.links) {
      if (l.start >= b && l.end <= e) {
        LinkSpan s = l;
        s.start -= b;
        s.end -= b;
        p.links.push_back(std::move(s));
      }
    }
    out.push_back(std::move(p));
  }
  return out;
}

/// (lang, normalized title) -> QID.
class SitelinkTable {
 public:
  void add(const std::string& lang, std::string_view title, const std::string& qid) {
    if (!is_qid(qid)) throw Error(ErrorCode::kMalformedRecord, "not a QID: " + qid);
    map_[key(lang, normalize_title(title))] = qid;
    languages_.insert(lang);
  }

  const std::string* find(const std::string& lang, std::string_view title) const {
    const auto it = map_.find(key(lang, normalize_title(title)));
    return it == map_.end() ? nullptr : &it->second;
  }

  std::size_t size() const { return map_.size(); }
  bool has_language(const std::string& lang) const { return languages_.count(lang) > 0; }

  // TSV: lang<TAB>title<TAB>qid
  static SitelinkTable from_tsv_text(std::string_view text) {
    SitelinkTable table;
    std::size_t line_no = 0;
    for (const auto& line : io::split_lines(text)) {
      ++line_no;
      if (line.empty()) continue;
      const auto cols = io::split(line, '\t');
      if (cols.size() != 3 || !is_qid(cols[2])) {
        throw Error(ErrorCode::kMalformedRecord, "sitelinks line " + std::to_string(line_no));
      }
      table.add(std::string(cols[0]), cols[1], std::string(cols[2]));
    }
    return table;
  }
  static SitelinkTable from_tsv(const std::string& path) {
    return from_tsv_text(io::read_file(path));
  }

 private:
  static std::string key(const std::string& lang, const std::string& title) {
    return lang + '\t' + title;
  }

  std::unordered_map<std::string, std::string> map_;
  std::set<std::string> languages_;
};

struct ResolveStats {
  std::size_t links = 0;
  std::size_t resolved = 0;
  std::size_t unresolved = 0;
  std::size_t sentences = 0;
  std::size_t kept = 0;

  ResolveStats& operator+=(const ResolveStats& o) {
    links += o.links;
    resolved += o.resolved;
    unresolved += o.unresolved;
    sentences += o.sentences;
    kept += o.kept;
    return *this;
  }
  double resolution_rate() const {
    return links == 0 ? 0.0 : static_cast<double>(resolved) / static_cast<double>(links);
  }
};

inline constexpr std::size_t kMinSentenceCodePoints = 5;

/// Resolves link titles to QIDs. Unresolved links are dropped and counted;
/// sentences shorter than kMinSentenceCodePoints or left without entities
/// are dropped. Sentence ids are `<doc_id>#<sentence index>`.
inline std::vector<SentenceRecord> resolve_entities(const std::vector<SentencePrecursor>& precursors,
                                                    const std::string& doc_id,
                                                    const std::string& lang,
                                                    const SitelinkTable& table,
                                                    ResolveStats* stats = nullptr) {
  ResolveStats local;
  std::vector<SentenceRecord> out;
  for (std::size_t s = 0; s < precursors.size(); ++s) {
    const auto& p = precursors[s];
    ++local.sentences;
    SentenceRecord rec;
    rec.sent_id = doc_id + "#" + std::to_string(s);
    rec.lang = lang;
    rec.text = p.text;
    for (const auto& l : p.links) {
      ++local.links;
      const std::string* qid = table.find(lang, l.target_title);
      if (qid == nullptr) {
        ++local.unresolved;
        continue;
      }
      ++local.resolved;
      rec.entities.push_back(Entity{l.start, l.end, *qid, l.surface});
    }
    if (utf8::length(rec.text) < kMinSentenceCodePoints || rec.entities.empty()) continue;
    ++local.kept;
    out.push_back(std::move(rec));
  }
  if (stats != nullptr) *stats += local;
  return out;
}

struct Triple {
  std::string subject;
  std::string pid;
  std::string object;

  auto operator<=>(const Triple&) const = default;
  bool operator==(const Triple&) const = default;
};

/// Deduplicated triple set with a (subject, object) -> {pid} index that is
/// always exactly the projection of the set.
class TripleStore {
 public:
  TripleStore() = default;
  explicit TripleStore(std::vector<Triple> triples) {
    for (const auto& t : triples) {
      if (!is_qid(t.subject) || !is_qid(t.object) || !is_pid(t.pid)) {
        throw Error(ErrorCode::kMalformedRecord,
                    "bad triple " + t.subject + " " + t.pid + " " + t.object);
      }
    }
    std::sort(triples.begin(), triples.end());
    triples.erase(std::unique(triples.begin(), triples.end()), triples.end());
    triples_ = std::move(triples);
    for (const auto& t : triples_) index_[pair_key(t.subject, t.object)].insert(t.pid);
  }

  const std::vector<Triple>& triples() const { return triples_; }
  std::size_t size() const { return triples_.size(); }

  const std::set<std::string>* relations(const std::string& subject,
                                         const std::string& object) const {
    const auto it = index_.find(pair_key(subject, object));
    return it == index_.end() ? nullptr : &it->second;
  }

  bool contains(const Triple& t) const {
    return std::binary_search(triples_.begin(), triples_.end(), t);
  }

  // TSV: subject_qid<TAB>pid<TAB>object_qid
  static TripleStore from_tsv_text(std::string_view text) {
    std::vector<Triple> triples;
    std::size_t line_no = 0;
    for (const auto& line : io::split_lines(text)) {
      ++line_no;
      if (line.empty()) continue;
      const auto cols = io::split(line, '\t');
      if (cols.size() != 3) {
        throw Error(ErrorCode::kMalformedRecord, "triples line " + std::to_string(line_no));
      }
      triples.push_back({std::string(cols[0]), std::string(cols[1]), std::string(cols[2])});
    }
    return TripleStore(std::move(triples));
  }
  static TripleStore from_tsv(const std::string& path) { return from_tsv_text(io::read_file(path)); }

 private:
  static std::string pair_key(const std::string& s, const std::string& o) { return s + '\t' + o; }

  std::vector<Triple> triples_;
  std::unordered_map<std::string, std::set<std::string>> index_;
};

using MergeMap = std::map<std::string, std::string>;

/// Rewrites every pid through the merge map. The map must be acyclic in the
/// strong sense that no target is itself a key.
inline TripleStore merge_relations(const TripleStore& store, const MergeMap& merge_map) {
  for (const auto& [from, to] : merge_map) {
    if (merge_map.count(to) > 0) {
      throw Error(ErrorCode::kCyclicMergeMap, from + " -> " + to + " is itself mapped");
    }
  }
  std::vector<Triple> out;
  out.reserve(store.size());
  for (Triple t : store.triples()) {
    const auto it = merge_map.find(t.pid);
    if (it != merge_map.end()) t.pid = it->second;
    out.push_back(std::move(t));
  }
  return TripleStore(std::move(out));
}

/// Emits one instance per (ordered entity pair, allowed pid) found in the
/// store. A sentence may yield several instances.
inline std::vector<RelationInstance> link_sentences(const std::vector<SentenceRecord>& records,
                                                    const TripleStore& store,
                                                    const std::set<std::string>& allowed_pids) {
  if (allowed_pids.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "allowed pid set is empty");
  }
  std::vector<RelationInstance> out;
  for (const auto& rec : records) {
    const std::size_t m = rec.entities.size();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        if (i == j) continue;
        const auto* pids = store.relations(rec.entities[i].qid, rec.entities[j].qid);
        if (pids == nullptr) continue;
        for (const auto& pid : *pids) {
          if (allowed_pids.count(pid) == 0) continue;
          out.push_back(RelationInstance{rec, i, j, pid});
        }
      }
    }
  }
  return out;
}

/// Relation inventory used for linking: the allowed pids (with display
/// names) and the merge map applied to the triple store beforehand.
struct RelationsConfig {
  std::map<std::string, std::string> relations;  // pid -> name
  MergeMap merge_map;

  std::set<std::string> allowed_pids() const {
    std::set<std::string> out;
    for (const auto& [pid, name] : relations) out.insert(pid);
    return out;
  }

  // Default guess for the 24 merged relations; editable through a JSON file.
  static RelationsConfig defaults() {
    RelationsConfig c;
    c.relations = {
        {"P50", "author"},         {"P36", "capital"},
        {"P674", "characters"},    {"P30", "continent"},
        {"P27", "country of citizenship"},
        {"P495", "country of origin"},
        {"P178", "developer"},     {"P172", "ethnic group"},
        {"P22", "father"},         {"P31", "instance of"},
        {"P407", "language"},      {"P17", "located in country"},
        {"P463", "member of"},     {"P25", "mother"},
        {"P127", "owned by"},      {"P749", "parent organization"},
        {"P171", "parent taxon"},  {"P361", "part of"},
        {"P451", "partner"},       {"P175", "performer"},
        {"P19", "place of birth"}, {"P140", "religion"},
        {"P3373", "sibling"},      {"P26", "spouse"},
    };
    c.merge_map = {{"P1376", "P36"}, {"P527", "P361"}, {"P1441", "P674"}};
    return c;
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"relations", relations}, {"merge_map", merge_map}};
  }

  static RelationsConfig from_json(const nlohmann::json& j) {
    RelationsConfig c;
    for (const auto& [key, value] : j.items()) {
      if (key != "relations" && key != "merge_map") {
        throw Error(ErrorCode::kConfigError, "unknown relations-config key: " + key);
      }
    }
    c.relations = j.at("relations").get<std::map<std::string, std::string>>();
    if (j.contains("merge_map")) c.merge_map = j.at("merge_map").get<MergeMap>();
    for (const auto& [pid, name] : c.relations) {
      if (!is_pid(pid)) throw Error(ErrorCode::kConfigError, "not a PID: " + pid);
    }
    for (const auto& [from, to] : c.merge_map) {
      if (!is_pid(from) || !is_pid(to)) {
        throw Error(ErrorCode::kConfigError, "bad merge entry " + from + " -> " + to);
      }
    }
    return c;
  }
};

// ---------------------------------------------------------------------------
// Dump input.

struct RawPage {
  std::string title;
  std::string text;
};

inline std::string decode_xml_entities(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    if (s[i] != '&') {
      out.push_back(s[i++]);
      continue;
    }
    const std::size_t semi = s.find(';', i);
    if (semi == std::string_view::npos || semi - i > 10) {
      out.push_back(s[i++]);
      continue;
    }
    const std::string_view ent = s.substr(i + 1, semi - i - 1);
    if (ent == "lt") out.push_back('<');
    else if (ent == "gt") out.push_back('>');
    else if (ent == "amp") out.push_back('&');
    else if (ent == "quot") out.push_back('"');
    else if (ent == "apos") out.push_back('\'');
    else if (ent.size() > 1 && ent[0] == '#') {
      char32_t cp = 0;
      try {
        cp = (ent[1] == 'x' || ent[1] == 'X')
                 ? static_cast<char32_t>(std::stoul(std::string(ent.substr(2)), nullptr, 16))
                 : static_cast<char32_t>(std::stoul(std::string(ent.substr(1))));
      } catch (const std::exception&) {
        out.append(s.substr(i, semi - i + 1));
        i = semi + 1;
        continue;
      }
      utf8::append(out, cp);
    } else {
      out.append(s.substr(i, semi - i + 1));
    }
    i = semi + 1;
  }
  return out;
}

/// Minimal page-per-record XML reader: <page><title>..</title>..<text ..>..</text></page>.
inline std::vector<RawPage> read_xml_dump_text(std::string_view xml) {
  std::vector<RawPage> pages;
  std::size_t pos = 0;
  while (true) {
    const std::size_t open = xml.find("<page>", pos);
    if (open == std::string_view::npos) break;
    const std::size_t close = xml.find("</page>", open);
    if (close == std::string_view::npos) {
      throw Error(ErrorCode::kMalformedRecord, "unterminated <page> at byte " + std::to_string(open));
    }
    const std::string_view page = xml.substr(open, close - open);
    pos = close + 7;
    RawPage raw;
    const std::size_t t0 = page.find("<title>");
    const std::size_t t1 = page.find("</title>");
    if (t0 != std::string_view::npos && t1 != std::string_view::npos && t1 > t0) {
      raw.title = decode_xml_entities(page.substr(t0 + 7, t1 - t0 - 7));
    }
    const std::size_t x0 = page.find("<text");
    if (x0 != std::string_view::npos) {
      const std::size_t gt = page.find('>', x0);
      if (gt != std::string_view::npos && page[gt - 1] != '/') {
        const std::size_t x1 = page.find("</text>", gt);
        if (x1 == std::string_view::npos) {
          throw Error(ErrorCode::kMalformedRecord, "unterminated <text> in page " + raw.title);
        }
        raw.text = decode_xml_entities(page.substr(gt + 1, x1 - gt - 1));
      }
    }
    pages.push_back(std::move(raw));
  }
  return pages;
}

/// A dump path is either an XML file or a directory holding one wikitext
/// file per document (doc id = file stem, files visited in name order).
inline std::vector<RawPage> read_dump(const std::string& path) {
  namespace fs = std::filesystem;
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(path)) {
      if (entry.is_regular_file()) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<RawPage> pages;
    for (const auto& f : files) pages.push_back({f.stem().string(), io::read_file(f.string())});
    return pages;
  }
  return read_xml_dump_text(io::read_file(path));
}

struct ExtractStats {
  std::size_t pages = 0;
  std::size_t skipped_unbalanced = 0;
  ResolveStats resolve;
};

struct ExtractResult {
  std::vector<SentenceRecord> records;
  ExtractStats stats;
};

/// parse -> split -> resolve over independent pages, in parallel, merged in
/// input order. Pages with unbalanced markup are skipped and counted.
inline ExtractResult extract_records(const std::vector<RawPage>& pages, const std::string& lang,
                                     const SitelinkTable& table,
                                     const AbbreviationList& abbreviations,
                                     std::size_t workers = 1) {
  struct PageOut {
    std::vector<SentenceRecord> records;
    ResolveStats stats;
    bool skipped = false;
  };
  auto per_page = parallel_map(pages.size(), workers, [&](std::size_t i) {
    PageOut out;
    Document doc;
    try {
      doc = parse_wikitext(pages[i].text, pages[i].title, lang);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kUnbalancedMarkup) throw;
      out.skipped = true;
      return out;
    }
    if (doc.text.empty()) return out;
    out.records =
        resolve_entities(split_sentences(doc, abbreviations), doc.doc_id, lang, table, &out.stats);
    return out;
  });
  ExtractResult result;
  result.stats.pages = pages.size();
  for (auto& p : per_page) {
    if (p.skipped) ++result.stats.skipped_unbalanced;
    result.stats.resolve += p.stats;
    for (auto& r : p.records) result.records.push_back(std::move(r));
  }
  return result;
}

// ---------------------------------------------------------------------------
// JSON-lines output. Keys appear in the documented order.

inline nlohmann::ordered_json to_json(const SentenceRecord& r) {
  nlohmann::ordered_json j;
  j["sent_id"] = r.sent_id;
  j["lang"] = r.lang;
  j["text"] = r.text;
  j["entities"] = nlohmann::ordered_json::array();
  for (const auto& e : r.entities) {
    nlohmann::ordered_json je;
    je["start"] = e.start;
    je["end"] = e.end;
    je["qid"] = e.qid;
    je["surface"] = e.surface;
    j["entities"].push_back(std::move(je));
  }
  return j;
}

inline nlohmann::ordered_json to_json(const RelationInstance& inst) {
  nlohmann::ordered_json j = to_json(inst.record);
  j["e1"] = inst.e1;
  j["e2"] = inst.e2;
  j["pid"] = inst.pid;
  return j;
}

inline SentenceRecord record_from_json(const nlohmann::json& j) {
  SentenceRecord r;
  r.sent_id = j.at("sent_id").get<std::string>();
  r.lang = j.at("lang").get<std::string>();
  r.text = j.at("text").get<std::string>();
  for (const auto& e : j.at("entities")) {
    r.entities.push_back(Entity{e.at("start").get<std::size_t>(), e.at("end").get<std::size_t>(),
                                e.at("qid").get<std::string>(), e.at("surface").get<std::string>()});
  }
  return r;
}

inline RelationInstance instance_from_json(const nlohmann::json& j) {
  RelationInstance inst;
  inst.record = record_from_json(j);
  inst.e1 = j.at("e1").get<std::size_t>();
  inst.e2 = j.at("e2").get<std::size_t>();
  inst.pid = j.at("pid").get<std::string>();
  if (inst.e1 >= inst.record.entities.size() || inst.e2 >= inst.record.entities.size() ||
      inst.e1 == inst.e2) {
    throw Error(ErrorCode::kMalformedRecord, "bad entity indices in " + inst.record.sent_id);
  }
  return inst;
}

template <class T>
std::string to_jsonl(const std::vector<T>& items) {
  std::string out;
  for (const auto& item : items) {
    out += to_json(item).dump();
    out += '\n';
  }
  return out;
}

template <class Fn>
auto parse_jsonl(std::string_view text, Fn from_json) {
  std::vector<decltype(from_json(nlohmann::json{}))> out;
  std::size_t line_no = 0;
  for (const auto& line : io::split_lines(text)) {
    ++line_no;
    if (io::trim(line).empty()) continue;
    try {
      out.push_back(from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kMalformedRecord,
                  "json line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<SentenceRecord> read_records(const std::string& path) {
  return parse_jsonl(io::read_file(path), record_from_json);
}

inline std::vector<RelationInstance> read_instances(const std::string& path) {
  return parse_jsonl(io::read_file(path), instance_from_json);
}

}  // namespace relxforge::corpus

#endif  // RELXFORGE_CORPUS_HPP_
