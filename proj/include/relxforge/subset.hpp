#ifndef RELXFORGE_SUBSET_HPP_
#define RELXFORGE_SUBSET_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <vector>

#include "relxforge/error.hpp"
#include "relxforge/rng.hpp"
#include "relxforge/schema.hpp"
#include "relxforge/utf8.hpp"

namespace relxforge::subset {

struct TextStats {
  std::size_t chars = 0;  // code points, markers stripped
  std::size_t words = 0;  // whitespace-delimited tokens
};

inline TextStats text_stats(const std::string& marked) {
  const std::u32string t = utf8::decode(schema::parse_markers(marked).plain);
  TextStats s;
  s.chars = t.size();
  bool in_word = false;
  for (char32_t c : t) {
    const bool space = utf8::is_space(c);
    if (!space && !in_word) ++s.words;
    in_word = !space;
  }
  return s;
}

/// Per-class sample sizes proportional to the class counts, rounded with
/// the largest-remainder method (ties go to the smaller class id).
inline std::map<int, std::size_t> stratified_quotas(const std::map<int, std::size_t>& class_counts,
                                                    std::size_t size) {
  std::size_t n = 0;
  for (const auto& [c, k] : class_counts) n += k;
  if (size > n) throw Error(ErrorCode::kSizeTooLarge, "subset size exceeds dataset size");
  std::map<int, std::size_t> quota;
  std::vector<std::pair<std::size_t, int>> remainders;  // (remainder numerator, class)
  std::size_t assigned = 0;
  for (const auto& [c, k] : class_counts) {
    const std::size_t num = size * k;
    quota[c] = num / n;
    assigned += quota[c];
    remainders.emplace_back(num % n, c);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& x, const auto& y) { return x.first > y.first; });
  for (std::size_t i = 0; assigned < size; ++i, ++assigned) ++quota[remainders[i].second];
  return quota;
}

struct SubsetResult {
  std::vector<std::size_t> indices;  // ascending
  double score = 0.0;
  std::map<int, std::size_t> quotas;
};

class SubsetSelector {
 public:
  SubsetSelector(const schema::LabeledDataset& ds, std::size_t size) : size_(size) {
    if (size == 0) throw Error(ErrorCode::kInvalidArgument, "subset size must be >= 1");
    if (size > ds.size()) {
      throw Error(ErrorCode::kSizeTooLarge, "subset size " + std::to_string(size) + " exceeds dataset size " +
                                                std::to_string(ds.size()));
    }
    std::map<int, std::size_t> counts;
    double chars = 0, words = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const auto s = text_stats(ds.examples[i].text);
      stats_.push_back(s);
      chars += static_cast<double>(s.chars);
      words += static_cast<double>(s.words);
      by_class_[ds.examples[i].label].push_back(i);
      ++counts[ds.examples[i].label];
    }
    full_chars_ = chars / static_cast<double>(ds.size());
    full_words_ = words / static_cast<double>(ds.size());
    quotas_ = stratified_quotas(counts, size);
  }

  const std::map<int, std::size_t>& quotas() const { return quotas_; }

  std::vector<std::size_t> draw(Rng& rng) {
    std::vector<std::size_t> out;
    out.reserve(size_);
    for (auto& [cls, members] : by_class_) {
      const std::size_t q = quotas_.at(cls);
      for (std::size_t i = 0; i < q; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(members.size() - i));
        std::swap(members[i], members[j]);
        out.push_back(members[i]);
      }
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  double score(const std::vector<std::size_t>& idx) const {
    double chars = 0, words = 0;
    for (auto i : idx) {
      chars += static_cast<double>(stats_[i].chars);
      words += static_cast<double>(stats_[i].words);
    }
    const double n = static_cast<double>(idx.size());
    auto rel = [](double sub, double full) { return full == 0.0 ? std::abs(sub) : std::abs(sub / full - 1.0); };
    return rel(chars / n, full_chars_) + rel(words / n, full_words_);
  }

 private:
  std::size_t size_;
  std::vector<TextStats> stats_;
  std::map<int, std::vector<std::size_t>> by_class_;
  std::map<int, std::size_t> quotas_;
  double full_chars_ = 0;
  double full_words_ = 0;
};

/// Best of `trials` stratified draws, scored by how far the subset's mean
/// character and word lengths drift from the full set's.
inline SubsetResult select_subset(const schema::LabeledDataset& ds, std::size_t size = 502,
                                  std::size_t trials = 10000, std::uint64_t seed = 0) {
  if (trials == 0) throw Error(ErrorCode::kInvalidArgument, "trials must be >= 1");
  SubsetSelector sel(ds, size);
  Rng rng(seed);
  SubsetResult best;
  best.quotas = sel.quotas();
  for (std::size_t t = 0; t < trials; ++t) {
    auto idx = sel.draw(rng);
    const double s = sel.score(idx);
    if (t == 0 || s < best.score) {
      best.score = s;
      best.indices = std::move(idx);
    }
  }
  return best;
}

}  // namespace relxforge::subset

#endif  // RELXFORGE_SUBSET_HPP_
