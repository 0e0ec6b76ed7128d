#ifndef RELXFORGE_TRAINING_HPP_
#define RELXFORGE_TRAINING_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "relxforge/error.hpp"
#include "relxforge/metrics.hpp"
#include "relxforge/model.hpp"
#include "relxforge/optim.hpp"
#include "relxforge/pairs.hpp"
#include "relxforge/rng.hpp"
#include "relxforge/schema.hpp"
#include "relxforge/subset.hpp"
#include "relxforge/utf8.hpp"
#include "relxforge/vocab.hpp"

namespace relxforge::train {

using Model = nn::EncoderModel<float>;

// Stream ids for mix_seed so that the different random consumers of one
// run never share a sequence.
inline constexpr std::uint64_t kStreamPretrain = 0x100000000ULL;
inline constexpr std::uint64_t kStreamShuffle = 0x200000000ULL;
inline constexpr std::uint64_t kStreamDropout = 0x300000000ULL;
inline constexpr std::uint64_t kStreamFraction = 0x400000000ULL;

/// Marks entities; when the two mentions are too far apart for max_len,
/// words are dropped from the middle of the gap (equally from both ends)
/// until the sequence fits.
inline text::TokenSequence mark_entities_fitting(const std::string& plain, text::EntitySpan e1,
                                                 text::EntitySpan e2, const text::Vocab& vocab,
                                                 std::size_t max_len, std::string_view blank = "[BLANK]") {
  try {
    return text::mark_entities(plain, e1, e2, vocab, max_len, blank);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kSpansTooWide) throw;
  }
  const std::u32string t = utf8::decode(plain);
  const bool head_first = e1.start < e2.start;
  const text::EntitySpan first = head_first ? e1 : e2;
  const text::EntitySpan second = head_first ? e2 : e1;
  const std::u32string middle = t.substr(first.end, second.start - first.end);
  std::vector<std::u32string> words;
  {
    std::u32string cur;
    for (char32_t c : middle) {
      if (utf8::is_space(c)) {
        if (!cur.empty()) words.push_back(std::move(cur));
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
  }
  for (std::size_t keep = words.size(); keep-- > 0;) {
    const std::size_t front = (keep + 1) / 2;
    const std::size_t back = keep / 2;
    std::u32string mid = U" ";
    for (std::size_t i = 0; i < front; ++i) mid += words[i] + U" ";
    for (std::size_t i = words.size() - back; i < words.size(); ++i) mid += words[i] + U" ";
    std::u32string shortened = t.substr(0, first.end) + mid + t.substr(second.start);
    const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(mid.size()) -
                                 static_cast<std::ptrdiff_t>(second.start - first.end);
    text::EntitySpan s2{second.start + shift, second.end + shift};
    try {
      auto seq = text::mark_entities(utf8::encode(shortened), head_first ? first : s2,
                                     head_first ? s2 : first, vocab, max_len, blank);
      seq.truncated = true;
      return seq;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kSpansTooWide) throw;
    }
  }
  throw Error(ErrorCode::kSpansTooWide, "entity mentions alone exceed max_len");
}

// ---------------------------------------------------------------------------
// Pretraining

struct EncodedPair {
  text::TokenSequence a;
  text::TokenSequence b;
  int label = 0;
};

inline text::TokenSequence encode_side(const pairs::MarkedSentence& m, const text::Vocab& vocab,
                                       std::size_t max_len, std::string_view blank = "[BLANK]") {
  return mark_entities_fitting(m.text, {m.e1.start, m.e1.end}, {m.e2.start, m.e2.end}, vocab, max_len, blank);
}

inline std::vector<EncodedPair> encode_pairs(const std::vector<pairs::PairRecord>& records, const text::Vocab& vocab,
                                             std::size_t max_len, std::string_view blank = "[BLANK]") {
  std::vector<EncodedPair> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    out.push_back({encode_side(r.a, vocab, max_len, blank), encode_side(r.b, vocab, max_len, blank), r.label});
  }
  return out;
}

struct PretrainConfig {
  std::size_t steps = 2000;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  text::MaskingConfig masking;
  nn::OptimizerConfig optimizer{nn::OptimizerKind::kAdamW, 5e-4, 0.9, 0.999, 1e-8, 0.01, 1.0, 100};
  std::size_t checkpoint_every = 0;  // 0: only at the end
  std::size_t log_every = 1;
  bool dropout = true;

  nlohmann::ordered_json to_json() const {
    return {{"steps", steps},
            {"batch_size", batch_size},
            {"seed", seed},
            {"mask_select_rate", masking.select_rate},
            {"mask_mask_rate", masking.mask_rate},
            {"mask_random_rate", masking.random_rate},
            {"optimizer", optimizer.to_json()},
            {"checkpoint_every", checkpoint_every},
            {"log_every", log_every},
            {"dropout", dropout}};
  }
};

struct PretrainLogRow {
  std::size_t step = 0;  // 1-based index of the completed step
  double mlm_a = 0;
  double mlm_b = 0;
  double matching = 0;
  double accuracy = 0;  // matching accuracy on the step's batch
};

inline std::string log_header() { return "step\tmlm_a\tmlm_b\tmatching\taccuracy\n"; }

inline std::string format_log_row(const PretrainLogRow& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu\t%.6f\t%.6f\t%.6f\t%.4f\n", r.step, r.mlm_a, r.mlm_b, r.matching, r.accuracy);
  return buf;
}

namespace detail {

struct MaskedBatch {
  nn::Batch batch;
  std::vector<text::TokenId> labels;  // aligned with batch.ids
};

// Guarantees at least one masked position so the MLM loss is defined.
inline MaskedBatch mask_batch(const std::vector<const text::TokenSequence*>& seqs, std::size_t vocab_size, Rng& rng,
                              const text::MaskingConfig& cfg) {
  std::vector<text::MaskedSequence> masked;
  masked.reserve(seqs.size());
  for (const auto* s : seqs) masked.push_back(text::mask_for_mlm(*s, vocab_size, rng, cfg));
  bool any = false;
  for (const auto& m : masked) {
    for (auto l : m.labels) any = any || l != text::kIgnoreLabel;
  }
  if (!any) {
    for (auto& m : masked) {
      for (std::size_t i = 0; i < m.seq.ids.size() && !any; ++i) {
        if (!text::Vocab::is_special(m.seq.ids[i])) {
          m.labels[i] = m.seq.ids[i];
          m.seq.ids[i] = text::kMask;
          any = true;
        }
      }
      if (any) break;
    }
  }
  std::vector<const text::TokenSequence*> ptrs;
  for (const auto& m : masked) ptrs.push_back(&m.seq);
  MaskedBatch out;
  out.batch = nn::make_batch(ptrs);
  out.labels.assign(out.batch.ids.size(), text::kIgnoreLabel);
  for (std::size_t b = 0; b < masked.size(); ++b) {
    std::copy(masked[b].labels.begin(), masked[b].labels.end(),
              out.labels.begin() + static_cast<std::ptrdiff_t>(b * out.batch.seq_len));
  }
  return out;
}

}  // namespace detail

/// Runs optimizer steps [optimizer.state().step, cfg.steps). Every random
/// choice of step s (batch indices, masking, dropout) comes from
/// Rng(mix_seed(seed, s)), so resuming from a checkpoint taken after step
/// s reproduces an uninterrupted run bit for bit.
inline std::vector<PretrainLogRow> pretrain(Model& model, nn::Optimizer<float>& opt,
                                            const std::vector<EncodedPair>& data, const PretrainConfig& cfg,
                                            const std::function<void(const PretrainLogRow&)>& on_log = {},
                                            const std::function<void(std::size_t)>& on_checkpoint = {}) {
  if (data.empty() && opt.state().step < cfg.steps) throw Error(ErrorCode::kEmptyDataset, "no pretraining pairs");
  if (cfg.batch_size == 0) throw Error(ErrorCode::kInvalidArgument, "batch_size must be >= 1");
  std::vector<PretrainLogRow> log;
  const std::size_t vocab = model.config().vocab_size;
  while (opt.state().step < cfg.steps) {
    const std::uint64_t step = opt.state().step;
    Rng rng(mix_seed(cfg.seed, kStreamPretrain + step));
    std::vector<const text::TokenSequence*> sa, sb;
    std::vector<float> labels;
    for (std::size_t i = 0; i < cfg.batch_size; ++i) {
      const auto& p = data[rng.below(data.size())];
      sa.push_back(&p.a);
      sb.push_back(&p.b);
      labels.push_back(static_cast<float>(p.label));
    }
    auto ma = detail::mask_batch(sa, vocab, rng, cfg.masking);
    auto mb = detail::mask_batch(sb, vocab, rng, cfg.masking);

    nn::Graph<float> g;
    nn::ForwardOptions fo{cfg.dropout, &rng};
    auto ea = nn::encode(g, model, ma.batch, fo);
    auto eb = nn::encode(g, model, mb.batch, fo);
    auto la = nn::mlm_loss(g, model, ea.hidden, ma.labels);
    auto lb = nn::mlm_loss(g, model, eb.hidden, mb.labels);
    auto logits = nn::matching_logits(g, model, ea.cls, eb.cls);
    auto lm = g.bce_with_logits(logits, labels);
    auto total = g.add(g.add(la, lb), lm);

    PretrainLogRow row;
    row.step = step + 1;
    row.mlm_a = g.item(la);
    row.mlm_b = g.item(lb);
    row.matching = g.item(lm);
    std::size_t correct = 0;
    const auto z = g.value(logits);
    for (std::size_t i = 0; i < labels.size(); ++i) correct += (z[i] >= 0.0f) == (labels[i] > 0.5f);
    row.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());

    opt.zero_grad();
    g.backward(total);
    opt.step();

    if (cfg.log_every > 0 && (row.step % cfg.log_every == 0 || row.step == cfg.steps)) {
      log.push_back(row);
      if (on_log) on_log(row);
    }
    if (on_checkpoint && cfg.checkpoint_every > 0 && row.step % cfg.checkpoint_every == 0) on_checkpoint(row.step);
  }
  return log;
}

struct MatchingEval {
  double accuracy = 0;
  double mean_loss = 0;
  std::size_t pairs = 0;
};

inline MatchingEval evaluate_matching(Model& model, const std::vector<EncodedPair>& data,
                                      std::size_t batch_size = 64) {
  MatchingEval r;
  if (data.empty()) return r;
  std::vector<text::TokenSequence> a, b;
  for (const auto& p : data) {
    a.push_back(p.a);
    b.push_back(p.b);
  }
  const auto probs = nn::match_probabilities(model, a, b, batch_size);
  std::size_t correct = 0;
  double loss = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const bool pos = data[i].label == 1;
    correct += (probs[i] >= 0.5f) == pos;
    const double p = std::clamp(static_cast<double>(probs[i]), 1e-12, 1.0 - 1e-12);
    loss -= pos ? std::log(p) : std::log(1.0 - p);
  }
  r.pairs = data.size();
  r.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  r.mean_loss = loss / static_cast<double>(data.size());
  return r;
}

// ---------------------------------------------------------------------------
// Fine-tuning

struct EncodedExample {
  text::TokenSequence seq;
  int label = 0;
};

inline std::vector<EncodedExample> encode_dataset(const schema::LabeledDataset& ds, const text::Vocab& vocab,
                                                  std::size_t max_len) {
  std::vector<EncodedExample> out;
  out.reserve(ds.size());
  for (const auto& ex : ds.examples) {
    const auto p = schema::parse_markers(ex.text);
    out.push_back({mark_entities_fitting(p.plain, p.e1, p.e2, vocab, max_len), ex.label});
  }
  return out;
}

struct FinetuneConfig {
  nn::OptimizerConfig optimizer{nn::OptimizerKind::kAdamW, 3e-5, 0.9, 0.999, 1e-8, 0.1, 0.0, 0};
  std::size_t batch_size = 64;
  std::size_t epochs = 10;
  std::size_t max_len = 128;
  std::uint64_t seed = 0;
  bool freeze_encoder = false;
  std::size_t patience = 0;  // early stopping after this many epochs without dev gain; 0 disables
  bool dropout = true;

  nlohmann::ordered_json to_json() const {
    return {{"optimizer", optimizer.to_json()}, {"batch_size", batch_size}, {"epochs", epochs},
            {"max_len", max_len},               {"seed", seed},             {"freeze_encoder", freeze_encoder},
            {"patience", patience},             {"dropout", dropout}};
  }
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0;
  double dev_macro_f1 = 0;
};

struct FinetuneResult {
  std::vector<EpochLog> epochs;
  std::size_t best_epoch = 0;
  double best_dev_macro_f1 = 0;
};

inline std::vector<int> predict(Model& model, const std::vector<EncodedExample>& data, std::size_t batch_size = 64) {
  std::vector<text::TokenSequence> seqs;
  seqs.reserve(data.size());
  for (const auto& e : data) seqs.push_back(e.seq);
  std::vector<int> out;
  out.reserve(data.size());
  for (const auto& probs : nn::classify(model, seqs, batch_size)) {
    out.push_back(static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin()));
  }
  return out;
}

inline std::vector<int> gold_labels(const std::vector<EncodedExample>& data) {
  std::vector<int> out;
  for (const auto& e : data) out.push_back(e.label);
  return out;
}

/// Mini-batch cross-entropy training. After each epoch the dev macro-F1 is
/// computed; the model ends holding the weights of the best dev epoch
/// (the last epoch when dev is empty).
inline FinetuneResult finetune(Model& model, const std::vector<EncodedExample>& train,
                               const std::vector<EncodedExample>& dev, const schema::RelationSchema& schema,
                               const FinetuneConfig& cfg,
                               const std::function<void(const EpochLog&)>& on_epoch = {}) {
  if (model.config().num_classes != schema.num_classes()) {
    throw Error(ErrorCode::kSchemaMismatch, "model has " + std::to_string(model.config().num_classes) +
                                                " classes, schema has " + std::to_string(schema.num_classes()));
  }
  if (train.empty()) throw Error(ErrorCode::kEmptyDataset, "training set is empty");
  if (cfg.batch_size == 0 || cfg.epochs == 0) throw Error(ErrorCode::kInvalidArgument, "batch_size and epochs must be >= 1");
  for (const auto& e : train) schema.check(e.label);
  for (const auto& e : dev) schema.check(e.label);

  model.set_encoder_trainable(!cfg.freeze_encoder);
  std::vector<nn::Tensor<float>*> trainable;
  for (auto* p : model.parameters()) {
    if (p->requires_grad) trainable.push_back(p);
  }
  nn::Optimizer<float> opt(cfg.optimizer, trainable);
  FinetuneResult result;
  std::vector<std::vector<float>> best;
  std::size_t since_best = 0;
  const auto dev_gold = gold_labels(dev);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(mix_seed(cfg.seed, kStreamShuffle + epoch));
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<const text::TokenSequence*> seqs;
      std::vector<std::int32_t> targets;
      for (std::size_t i = start; i < end; ++i) {
        seqs.push_back(&train[order[i]].seq);
        targets.push_back(train[order[i]].label);
      }
      Rng drop_rng(mix_seed(cfg.seed, kStreamDropout + opt.state().step));
      nn::Graph<float> g;
      auto enc = nn::encode(g, model, nn::make_batch(seqs), {cfg.dropout, &drop_rng});
      auto loss = g.cross_entropy(nn::classifier_logits(g, model, enc.cls), targets);
      loss_sum += g.item(loss);
      ++batches;
      opt.zero_grad();
      g.backward(loss);
      opt.step();
    }
    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / static_cast<double>(batches);
    log.dev_macro_f1 = dev.empty() ? 0.0 : metrics::macro_f1(dev_gold, predict(model, dev), schema);
    result.epochs.push_back(log);
    if (on_epoch) on_epoch(log);

    if (result.best_epoch == 0 || log.dev_macro_f1 > result.best_dev_macro_f1 || dev.empty()) {
      result.best_epoch = epoch;
      result.best_dev_macro_f1 = log.dev_macro_f1;
      best.clear();
      for (auto* p : model.parameters()) best.push_back(p->data);
      since_best = 0;
    } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
      break;
    }
  }
  auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->data = std::move(best[i]);
  for (auto* p : params) p->grad.reset();
  model.set_encoder_trainable(true);
  return result;
}

// ---------------------------------------------------------------------------
// Learning curves

/// Indices of a stratified prefix of the seed-shuffled set, returned in
/// original order. Fraction 1.0 returns every index.
inline std::vector<std::size_t> stratified_fraction(const std::vector<int>& labels, double fraction,
                                                    std::uint64_t seed) {
  if (!(fraction > 0.0) || fraction > 1.0) throw Error(ErrorCode::kInvalidArgument, "fraction must lie in (0,1]");
  std::vector<std::size_t> all(labels.size());
  std::iota(all.begin(), all.end(), 0);
  if (fraction == 1.0 || labels.empty()) return all;
  std::vector<std::size_t> order = all;
  Rng rng(mix_seed(seed, kStreamFraction));
  rng.shuffle(std::span<std::size_t>(order));
  std::map<int, std::size_t> counts;
  for (int l : labels) ++counts[l];
  const auto target = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(labels.size())));
  auto quotas = subset::stratified_quotas(counts, std::max<std::size_t>(1, target));
  std::vector<std::size_t> picked;
  for (auto i : order) {
    auto& q = quotas[labels[i]];
    if (q == 0) continue;
    --q;
    picked.push_back(i);
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

struct CurveRow {
  double fraction = 0;
  std::uint64_t seed = 0;
  std::string lang;
  double macro_f1 = 0;
};

inline std::string curve_tsv(const std::vector<CurveRow>& rows) {
  std::string out = "fraction\tseed\tlang\tmacro_f1\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%g\t%llu\t%s\t%.4f\n", r.fraction, static_cast<unsigned long long>(r.seed),
                  r.lang.c_str(), r.macro_f1);
    out += buf;
  }
  return out;
}

using ModelFactory = std::function<Model(std::uint64_t seed)>;

/// One fine-tuning run per (fraction, seed); each run is scored on every
/// evaluation set (keyed by language).
inline std::vector<CurveRow> learning_curve(const ModelFactory& factory, const std::vector<EncodedExample>& train,
                                            const std::vector<EncodedExample>& dev,
                                            const std::map<std::string, std::vector<EncodedExample>>& eval_sets,
                                            const schema::RelationSchema& schema,
                                            const std::vector<double>& fractions,
                                            const std::vector<std::uint64_t>& seeds, FinetuneConfig cfg,
                                            const std::function<void(const CurveRow&)>& on_row = {}) {
  std::vector<CurveRow> rows;
  const auto labels = gold_labels(train);
  for (double fraction : fractions) {
    for (std::uint64_t seed : seeds) {
      std::vector<EncodedExample> part;
      for (auto i : stratified_fraction(labels, fraction, seed)) part.push_back(train[i]);
      Model model = factory(seed);
      cfg.seed = seed;
      finetune(model, part, dev, schema, cfg);
      for (const auto& [lang, data] : eval_sets) {
        CurveRow row{fraction, seed, lang, metrics::macro_f1(gold_labels(data), predict(model, data), schema)};
        rows.push_back(row);
        if (on_row) on_row(row);
      }
    }
  }
  return rows;
}

}  // namespace relxforge::train

#endif  // RELXFORGE_TRAINING_HPP_
