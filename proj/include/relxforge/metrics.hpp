#ifndef RELXFORGE_METRICS_HPP_
#define RELXFORGE_METRICS_HPP_

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "relxforge/error.hpp"
#include "relxforge/rng.hpp"
#include "relxforge/schema.hpp"

namespace relxforge::metrics {

struct RelationCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  bool present = false;  // occurs in gold or pred
};

struct EvalReport {
  std::vector<std::string> relations;
  std::vector<RelationCounts> counts;
  std::vector<double> f1;  // per relation, percent
  double macro_f1 = 0.0;   // percent
  double macro_f1_all = 0.0;  // mean over every schema relation, absent ones as 0
  std::size_t relations_averaged = 0;
  std::size_t direction_errors = 0;
  std::size_t examples = 0;
  std::vector<std::vector<std::size_t>> confusion;  // [gold][pred] over all classes

  nlohmann::ordered_json to_json(const schema::RelationSchema& schema) const;
};

inline double f1_percent(std::size_t tp, std::size_t fp, std::size_t fn) {
  const std::size_t denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 100.0 * static_cast<double>(2 * tp) / static_cast<double>(denom);
}

namespace detail {

// Adds one (gold, pred) observation to per-relation counts.
inline void accumulate(std::vector<RelationCounts>& c, int gold, int pred, int no_rel) {
  const int rg = gold == no_rel ? -1 : gold / 2;
  const int rp = pred == no_rel ? -1 : pred / 2;
  if (rg >= 0) c[static_cast<std::size_t>(rg)].present = true;
  if (rp >= 0) c[static_cast<std::size_t>(rp)].present = true;
  if (gold == pred) {
    if (rg >= 0) ++c[static_cast<std::size_t>(rg)].tp;
    return;
  }
  if (rp >= 0) ++c[static_cast<std::size_t>(rp)].fp;
  if (rg >= 0) ++c[static_cast<std::size_t>(rg)].fn;
}

inline double macro_of(const std::vector<RelationCounts>& c, std::size_t* averaged = nullptr) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : c) {
    if (!r.present) continue;
    sum += f1_percent(r.tp, r.fp, r.fn);
    ++n;
  }
  if (averaged != nullptr) *averaged = n;
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

}  // namespace detail

/// Directional F1: per relation, TP/FP/FN are pooled over its two
/// directional classes (a wrong-direction prediction is one FP and one FN
/// for that relation; no_relation predictions only ever add FN). The macro
/// average runs over relations that occur in gold or predictions;
/// relations absent from both report F1 0 and are excluded.
inline EvalReport evaluate_f1(const std::vector<int>& gold, const std::vector<int>& pred,
                              const schema::RelationSchema& schema) {
  if (gold.size() != pred.size()) {
    throw Error(ErrorCode::kLengthMismatch, "gold has " + std::to_string(gold.size()) + " labels, pred has " +
                                                std::to_string(pred.size()));
  }
  const int no_rel = schema.no_relation();
  EvalReport r;
  r.relations = schema.relations();
  r.counts.assign(schema.num_relations(), {});
  r.confusion.assign(schema.num_classes(), std::vector<std::size_t>(schema.num_classes(), 0));
  r.examples = gold.size();
  for (std::size_t i = 0; i < gold.size(); ++i) {
    schema.check(gold[i]);
    schema.check(pred[i]);
    detail::accumulate(r.counts, gold[i], pred[i], no_rel);
    ++r.confusion[static_cast<std::size_t>(gold[i])][static_cast<std::size_t>(pred[i])];
    if (gold[i] != no_rel && pred[i] != no_rel && gold[i] != pred[i] && gold[i] / 2 == pred[i] / 2) {
      ++r.direction_errors;
    }
  }
  for (const auto& c : r.counts) r.f1.push_back(f1_percent(c.tp, c.fp, c.fn));
  r.macro_f1 = detail::macro_of(r.counts, &r.relations_averaged);
  for (double f : r.f1) r.macro_f1_all += f / static_cast<double>(r.f1.size());
  return r;
}

inline nlohmann::ordered_json EvalReport::to_json(const schema::RelationSchema& schema) const {
  nlohmann::ordered_json j;
  j["examples"] = examples;
  j["macro_f1"] = macro_f1;
  j["macro_f1_all_relations"] = macro_f1_all;
  j["relations_averaged"] = relations_averaged;
  j["direction_errors"] = direction_errors;
  nlohmann::ordered_json per = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < relations.size(); ++i) {
    per.push_back({{"relation", relations[i]},
                   {"f1", f1[i]},
                   {"tp", counts[i].tp},
                   {"fp", counts[i].fp},
                   {"fn", counts[i].fn},
                   {"present", counts[i].present}});
  }
  j["per_relation"] = per;
  nlohmann::ordered_json conf = nlohmann::ordered_json::object();
  for (std::size_t g = 0; g < confusion.size(); ++g) {
    nlohmann::ordered_json row = nlohmann::ordered_json::object();
    for (std::size_t p = 0; p < confusion[g].size(); ++p) {
      if (confusion[g][p] != 0) row[schema.class_name(static_cast<int>(p))] = confusion[g][p];
    }
    if (!row.empty()) conf[schema.class_name(static_cast<int>(g))] = row;
  }
  j["confusion"] = conf;
  return j;
}

inline double macro_f1(const std::vector<int>& gold, const std::vector<int>& pred,
                       const schema::RelationSchema& schema) {
  return evaluate_f1(gold, pred, schema).macro_f1;
}

struct SignificanceResult {
  double p_value = 1.0;
  double observed_delta = 0.0;  // macro(A) - macro(B)
  std::size_t at_least_as_extreme = 0;
  std::size_t iterations = 0;
};

/// Two-sided approximate randomization on the macro-F1 difference: each
/// iteration swaps the two systems' predictions per example with
/// probability 0.5. p = (count(|d_perm| >= |d_obs|) + 1) / (iterations + 1).
inline SignificanceResult randomization_test(const std::vector<int>& preds_a, const std::vector<int>& preds_b,
                                             const std::vector<int>& gold, const schema::RelationSchema& schema,
                                             std::size_t iterations = 10000, std::uint64_t seed = 0) {
  if (preds_a.size() != gold.size() || preds_b.size() != gold.size()) {
    throw Error(ErrorCode::kLengthMismatch, "prediction and gold lengths differ");
  }
  if (iterations == 0) throw Error(ErrorCode::kInvalidArgument, "iterations must be >= 1");
  for (std::size_t i = 0; i < gold.size(); ++i) {
    schema.check(gold[i]);
    schema.check(preds_a[i]);
    schema.check(preds_b[i]);
  }
  const int no_rel = schema.no_relation();
  const std::size_t nr = schema.num_relations();
  auto delta_for = [&](auto&& swapped) {
    std::vector<RelationCounts> ca(nr), cb(nr);
    for (std::size_t i = 0; i < gold.size(); ++i) {
      const bool s = swapped(i);
      detail::accumulate(ca, gold[i], s ? preds_b[i] : preds_a[i], no_rel);
      detail::accumulate(cb, gold[i], s ? preds_a[i] : preds_b[i], no_rel);
    }
    return detail::macro_of(ca) - detail::macro_of(cb);
  };

  SignificanceResult res;
  res.iterations = iterations;
  res.observed_delta = delta_for([](std::size_t) { return false; });
  const double observed = std::abs(res.observed_delta);
  // Guard against float noise making identical deltas compare unequal.
  const double tol = 1e-9;
  Rng rng(seed);
  for (std::size_t it = 0; it < iterations; ++it) {
    std::vector<bool> flips(gold.size());
    for (std::size_t i = 0; i < gold.size(); ++i) flips[i] = rng.bernoulli(0.5);
    const double d = delta_for([&](std::size_t i) { return flips[i]; });
    if (std::abs(d) >= observed - tol) ++res.at_least_as_extreme;
  }
  res.p_value = static_cast<double>(res.at_least_as_extreme + 1) / static_cast<double>(iterations + 1);
  return res;
}

}  // namespace relxforge::metrics

#endif  // RELXFORGE_METRICS_HPP_
