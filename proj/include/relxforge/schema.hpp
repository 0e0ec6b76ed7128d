#ifndef RELXFORGE_SCHEMA_HPP_
#define RELXFORGE_SCHEMA_HPP_

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "relxforge/error.hpp"
#include "relxforge/io.hpp"
#include "relxforge/utf8.hpp"
#include "relxforge/vocab.hpp"

namespace relxforge::schema {

inline const std::vector<std::string>& kbp37_relations() {
  static const std::vector<std::string> names = {
      "per:alternate_names",
      "per:origin",
      "per:spouse",
      "per:title",
      "per:employee_of",
      "per:countries_of_residence",
      "per:stateorprovinces_of_residence",
      "per:cities_of_residence",
      "per:country_of_birth",
      "org:alternate_names",
      "org:subsidiaries",
      "org:top_members/employees",
      "org:founded",
      "org:founded_by",
      "org:country_of_headquarters",
      "org:stateorprovince_of_headquarters",
      "org:city_of_headquarters",
      "org:members",
  };
  return names;
}

inline constexpr std::string_view kNoRelation = "no_relation";

/// Relation i owns class 2i for (e1,e2) and 2i+1 for (e2,e1); no_relation
/// is the last class.
class RelationSchema {
 public:
  RelationSchema() : RelationSchema(kbp37_relations()) {}
  explicit RelationSchema(std::vector<std::string> relations) : relations_(std::move(relations)) {
    std::set<std::string> seen;
    for (const auto& r : relations_) {
      if (r.empty() || r == kNoRelation || !seen.insert(r).second) {
        throw Error(ErrorCode::kInvalidArgument, "bad or duplicate relation name '" + r + "'");
      }
    }
    if (relations_.empty()) throw Error(ErrorCode::kInvalidArgument, "schema has no relations");
  }

  std::size_t num_relations() const { return relations_.size(); }
  std::size_t num_classes() const { return 2 * relations_.size() + 1; }
  int no_relation() const { return static_cast<int>(2 * relations_.size()); }
  const std::vector<std::string>& relations() const { return relations_; }

  bool is_no_relation(int cls) const { return cls == no_relation(); }
  // -1 for no_relation
  int relation_of(int cls) const {
    check(cls);
    return cls == no_relation() ? -1 : cls / 2;
  }
  // 0 for (e1,e2), 1 for (e2,e1)
  int direction_of(int cls) const {
    check(cls);
    return cls % 2;
  }

  std::string class_name(int cls) const {
    check(cls);
    if (cls == no_relation()) return std::string(kNoRelation);
    return relations_[static_cast<std::size_t>(cls / 2)] + (cls % 2 == 0 ? "(e1,e2)" : "(e2,e1)");
  }

  std::optional<int> find_class(std::string_view name) const {
    name = io::trim(name);
    if (name == kNoRelation) return no_relation();
    for (std::size_t i = 0; i < relations_.size(); ++i) {
      const std::string& r = relations_[i];
      if (name.size() != r.size() + 7 || !name.starts_with(r)) continue;
      const std::string_view dir = name.substr(r.size());
      if (dir == "(e1,e2)") return static_cast<int>(2 * i);
      if (dir == "(e2,e1)") return static_cast<int>(2 * i + 1);
    }
    return std::nullopt;
  }

  // Accepts a class name or a decimal class id.
  int parse_label(std::string_view token) const {
    token = io::trim(token);
    if (auto c = find_class(token)) return *c;
    if (!token.empty() && token.find_first_not_of("0123456789") == std::string_view::npos && token.size() < 10) {
      const int id = std::stoi(std::string(token));
      check(id);
      return id;
    }
    throw Error(ErrorCode::kSchemaMismatch, "unknown label '" + std::string(token) + "'");
  }

  void check(int cls) const {
    if (cls < 0 || static_cast<std::size_t>(cls) >= num_classes()) {
      throw Error(ErrorCode::kSchemaMismatch, "class id " + std::to_string(cls) + " outside schema of " +
                                                  std::to_string(num_classes()));
    }
  }

  bool operator==(const RelationSchema&) const = default;

 private:
  std::vector<std::string> relations_;
};

/// Relation names, one per line; blank lines and '#' comments ignored.
inline RelationSchema schema_from_text(std::string_view text) {
  std::vector<std::string> names;
  for (const auto& line : io::split_lines(text)) {
    const auto t = io::trim(line);
    if (t.empty() || t.front() == '#') continue;
    names.emplace_back(t);
  }
  return RelationSchema(std::move(names));
}

struct RelationExample {
  std::string id;
  std::string lang;
  std::string text;  // with <e1>..</e1> and <e2>..</e2> markers
  int label = 0;
};

struct ParsedMarkers {
  std::string plain;       // markers removed
  text::EntitySpan e1;     // code points into plain
  text::EntitySpan e2;
};

/// Strips the four markers; mention spans exclude surrounding whitespace.
inline ParsedMarkers parse_markers(std::string_view marked) {
  static const std::u32string tags[4] = {U"<e1>", U"</e1>", U"<e2>", U"</e2>"};
  const std::u32string in = utf8::decode(marked);
  std::u32string out;
  out.reserve(in.size());
  std::size_t pos_of[4] = {0, 0, 0, 0};
  int count[4] = {0, 0, 0, 0};
  for (std::size_t i = 0; i < in.size();) {
    int hit = -1;
    for (int t = 0; t < 4; ++t) {
      if (in.compare(i, tags[t].size(), tags[t]) == 0) {
        hit = t;
        break;
      }
    }
    if (hit < 0) {
      out.push_back(in[i++]);
      continue;
    }
    ++count[hit];
    pos_of[hit] = out.size();
    i += tags[hit].size();
  }
  for (int t = 0; t < 4; ++t) {
    if (count[t] != 1) {
      throw Error(ErrorCode::kMalformedRecord, "expected exactly one " + utf8::encode(tags[t]) + " marker");
    }
  }
  auto span = [&](std::size_t s, std::size_t e) {
    if (e < s) throw Error(ErrorCode::kMalformedRecord, "entity end marker precedes start marker");
    while (s < e && utf8::is_space(out[s])) ++s;
    while (e > s && utf8::is_space(out[e - 1])) --e;
    if (s == e) throw Error(ErrorCode::kMalformedRecord, "empty entity mention");
    return text::EntitySpan{s, e};
  };
  ParsedMarkers p;
  p.e1 = span(pos_of[0], pos_of[1]);
  p.e2 = span(pos_of[2], pos_of[3]);
  if (p.e1.start < p.e2.end && p.e2.start < p.e1.end) {
    throw Error(ErrorCode::kMalformedRecord, "entity mentions overlap");
  }
  p.plain = utf8::encode(out);
  return p;
}

/// Inverse of parse_markers, used to build examples from plain sentences.
inline std::string insert_markers(std::string_view plain, text::EntitySpan e1, text::EntitySpan e2) {
  const std::u32string t = utf8::decode(plain);
  std::string out;
  for (std::size_t i = 0; i <= t.size(); ++i) {
    if (i == e1.end) out += "</e1>";
    if (i == e2.end) out += "</e2>";
    if (i == e1.start) out += "<e1>";
    if (i == e2.start) out += "<e2>";
    if (i < t.size()) utf8::append(out, t[i]);
  }
  return out;
}

enum class Split { kTrain, kDev, kTest };

struct LabeledDataset {
  std::vector<RelationExample> examples;
  RelationSchema schema;
  Split split = Split::kTrain;

  std::size_t size() const { return examples.size(); }
  bool empty() const { return examples.empty(); }

  std::vector<int> labels() const {
    std::vector<int> out;
    out.reserve(examples.size());
    for (const auto& e : examples) out.push_back(e.label);
    return out;
  }

  void validate() const {
    std::set<std::string> ids;
    for (const auto& e : examples) {
      schema.check(e.label);
      if (!ids.insert(e.id).second) throw Error(ErrorCode::kMalformedRecord, "duplicate example id '" + e.id + "'");
    }
  }
};

/// Two-line record layout:
///   id<TAB>"sentence with markers"
///   relation label
///   <blank line>
inline LabeledDataset parse_kbp37(std::string_view content, const RelationSchema& schema = {},
                                  const std::string& lang = "en", Split split = Split::kTrain) {
  LabeledDataset ds;
  ds.schema = schema;
  ds.split = split;
  const auto lines = io::split_lines(content);
  auto fail = [](std::size_t line, const std::string& why) {
    return Error(ErrorCode::kMalformedRecord, "line " + std::to_string(line) + ": " + why);
  };
  std::size_t i = 0;
  while (i < lines.size()) {
    if (io::trim(lines[i]).empty()) {
      ++i;
      continue;
    }
    const std::string& head = lines[i];
    const std::size_t line_no = i + 1;
    const auto tab = head.find('\t');
    if (tab == std::string::npos) throw fail(line_no, "missing tab after id");
    RelationExample ex;
    ex.id = std::string(io::trim(std::string_view(head).substr(0, tab)));
    ex.lang = lang;
    if (ex.id.empty()) throw fail(line_no, "empty id");
    const auto body = io::trim(std::string_view(head).substr(tab + 1));
    if (body.size() < 2 || body.front() != '"' || body.back() != '"') throw fail(line_no, "sentence must be quoted");
    ex.text = std::string(body.substr(1, body.size() - 2));
    try {
      parse_markers(ex.text);
    } catch (const Error& e) {
      throw fail(line_no, e.what());
    }
    if (i + 1 >= lines.size()) throw fail(line_no + 1, "missing relation line");
    const auto label = io::trim(lines[i + 1]);
    const auto cls = schema.find_class(label);
    if (!cls) throw fail(line_no + 1, "unknown relation '" + std::string(label) + "'");
    ex.label = *cls;
    ds.examples.push_back(std::move(ex));
    i += 2;
    if (i < lines.size() && !io::trim(lines[i]).empty()) throw fail(i + 1, "expected blank separator");
  }
  try {
    ds.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::kMalformedRecord, e.what());
  }
  return ds;
}

inline LabeledDataset load_kbp37(const std::string& path, const RelationSchema& schema = {},
                                 const std::string& lang = "en", Split split = Split::kTrain) {
  return parse_kbp37(io::read_file(path), schema, lang, split);
}

inline std::string to_kbp37(const LabeledDataset& ds) {
  std::string out;
  for (const auto& e : ds.examples) {
    out += e.id + "\t\"" + e.text + "\"\n" + ds.schema.class_name(e.label) + "\n\n";
  }
  return out;
}

/// One label per line, either class names or ids.
inline std::vector<int> parse_label_lines(std::string_view content, const RelationSchema& schema) {
  std::vector<int> out;
  std::size_t n = 0;
  for (const auto& line : io::split_lines(content)) {
    ++n;
    if (io::trim(line).empty()) continue;
    try {
      out.push_back(schema.parse_label(line));
    } catch (const Error& e) {
      throw Error(ErrorCode::kMalformedRecord, "line " + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

/// Label file or a full KBP-37 style dataset (detected by a tab on the
/// first non-empty line).
inline std::vector<int> read_labels(const std::string& path, const RelationSchema& schema) {
  const std::string content = io::read_file(path);
  for (const auto& line : io::split_lines(content)) {
    if (io::trim(line).empty()) continue;
    if (line.find('\t') != std::string::npos) return parse_kbp37(content, schema).labels();
    break;
  }
  return parse_label_lines(content, schema);
}

}  // namespace relxforge::schema

#endif  // RELXFORGE_SCHEMA_HPP_
