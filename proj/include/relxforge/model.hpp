#ifndef RELXFORGE_MODEL_HPP_
#define RELXFORGE_MODEL_HPP_

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "relxforge/error.hpp"
#include "relxforge/rng.hpp"
#include "relxforge/tensor.hpp"
#include "relxforge/vocab.hpp"

namespace relxforge::nn {

enum class MatchingHead { kDotProduct, kConcatLinear };

inline std::string to_string(MatchingHead h) {
  return h == MatchingHead::kDotProduct ? "dot" : "concat";
}

inline MatchingHead matching_head_from_string(const std::string& s) {
  if (s == "dot") return MatchingHead::kDotProduct;
  if (s == "concat") return MatchingHead::kConcatLinear;
  throw Error(ErrorCode::kConfigError, "unknown matching head '" + s + "'");
}

struct ModelConfig {
  std::size_t layers = 4;
  std::size_t hidden = 128;
  std::size_t heads = 4;
  std::size_t ff = 512;
  std::size_t vocab_size = 0;
  std::size_t max_positions = 128;
  std::size_t num_classes = 37;
  double dropout = 0.1;
  double ln_eps = 1e-12;
  double init_std = 0.02;
  MatchingHead matching = MatchingHead::kDotProduct;

  void validate() const {
    if (layers == 0 || hidden == 0 || heads == 0 || ff == 0 || max_positions == 0) {
      throw Error(ErrorCode::kConfigError, "model dimensions must be positive");
    }
    if (hidden % heads != 0) throw Error(ErrorCode::kConfigError, "hidden must be divisible by heads");
    if (vocab_size <= static_cast<std::size_t>(text::kNumSpecial)) {
      throw Error(ErrorCode::kConfigError, "vocab_size must exceed the special-token count");
    }
    if (num_classes < 2) throw Error(ErrorCode::kConfigError, "num_classes must be >= 2");
    if (dropout < 0 || dropout >= 1) throw Error(ErrorCode::kConfigError, "dropout must lie in [0,1)");
    if (!(ln_eps > 0) || !(init_std > 0)) throw Error(ErrorCode::kConfigError, "ln_eps and init_std must be > 0");
  }

  nlohmann::json to_json() const {
    return {{"layers", layers},           {"hidden", hidden},
            {"heads", heads},             {"ff", ff},
            {"vocab_size", vocab_size},   {"max_positions", max_positions},
            {"num_classes", num_classes}, {"dropout", dropout},
            {"ln_eps", ln_eps},           {"init_std", init_std},
            {"matching", to_string(matching)}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    for (auto it = j.begin(); it != j.end(); ++it) {
      const auto& k = it.key();
      if (k == "layers") c.layers = it->get<std::size_t>();
      else if (k == "hidden") c.hidden = it->get<std::size_t>();
      else if (k == "heads") c.heads = it->get<std::size_t>();
      else if (k == "ff") c.ff = it->get<std::size_t>();
      else if (k == "vocab_size") c.vocab_size = it->get<std::size_t>();
      else if (k == "max_positions") c.max_positions = it->get<std::size_t>();
      else if (k == "num_classes") c.num_classes = it->get<std::size_t>();
      else if (k == "dropout") c.dropout = it->get<double>();
      else if (k == "ln_eps") c.ln_eps = it->get<double>();
      else if (k == "init_std") c.init_std = it->get<double>();
      else if (k == "matching") c.matching = matching_head_from_string(it->get<std::string>());
      else throw Error(ErrorCode::kConfigError, "unknown model key '" + k + "'");
    }
    c.validate();
    return c;
  }

  bool operator==(const ModelConfig&) const = default;
};

template <class T>
struct EncoderLayer {
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor<T> ln1_g, ln1_b;
  Tensor<T> w1, b1, w2, b2;
  Tensor<T> ln2_g, ln2_b;
};

/// Post-norm transformer encoder with learned positions, a tied MLM head,
/// a pair-matching head over [CLS] states and a relation classifier.
template <class T>
class EncoderModel {
 public:
  EncoderModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const std::size_t h = cfg_.hidden;
    auto w = [](Shape s) { return Tensor<T>(std::move(s), true); };
    auto ones = [](std::size_t n) { return Tensor<T>({n}, std::vector<T>(n, T(1)), true); };
    tok_emb = w({cfg_.vocab_size, h});
    pos_emb = w({cfg_.max_positions, h});
    emb_ln_g = ones(h);
    emb_ln_b = w({h});
    layers.resize(cfg_.layers);
    for (auto& l : layers) {
      l.wq = w({h, h}); l.bq = w({h});
      l.wk = w({h, h}); l.bk = w({h});
      l.wv = w({h, h}); l.bv = w({h});
      l.wo = w({h, h}); l.bo = w({h});
      l.ln1_g = ones(h); l.ln1_b = w({h});
      l.w1 = w({h, cfg_.ff}); l.b1 = w({cfg_.ff});
      l.w2 = w({cfg_.ff, h}); l.b2 = w({h});
      l.ln2_g = ones(h); l.ln2_b = w({h});
    }
    mlm_bias = w({cfg_.vocab_size});
    if (cfg_.matching == MatchingHead::kConcatLinear) {
      match_w = w({2 * h, 1});
      match_b = w({1});
    }
    cls_w = w({h, cfg_.num_classes});
    cls_b = w({cfg_.num_classes});

    // Matrices get N(0, init_std); biases stay 0, layer-norm gains stay 1.
    Rng rng(seed);
    for_each_parameter([&](const std::string&, Tensor<T>& p) {
      if (p.shape.size() == 2) {
        for (auto& x : p.data) x = static_cast<T>(rng.normal(0.0, cfg_.init_std));
      }
    });
  }

  const ModelConfig& config() const { return cfg_; }

  template <class Fn>
  void for_each_parameter(Fn&& fn) {
    fn("embeddings.token", tok_emb);
    fn("embeddings.position", pos_emb);
    fn("embeddings.ln.gamma", emb_ln_g);
    fn("embeddings.ln.beta", emb_ln_b);
    for (std::size_t i = 0; i < layers.size(); ++i) {
      auto& l = layers[i];
      const std::string p = "layers." + std::to_string(i) + ".";
      fn(p + "attn.q.weight", l.wq); fn(p + "attn.q.bias", l.bq);
      fn(p + "attn.k.weight", l.wk); fn(p + "attn.k.bias", l.bk);
      fn(p + "attn.v.weight", l.wv); fn(p + "attn.v.bias", l.bv);
      fn(p + "attn.out.weight", l.wo); fn(p + "attn.out.bias", l.bo);
      fn(p + "ln1.gamma", l.ln1_g); fn(p + "ln1.beta", l.ln1_b);
      fn(p + "ffn.in.weight", l.w1); fn(p + "ffn.in.bias", l.b1);
      fn(p + "ffn.out.weight", l.w2); fn(p + "ffn.out.bias", l.b2);
      fn(p + "ln2.gamma", l.ln2_g); fn(p + "ln2.beta", l.ln2_b);
    }
    fn("mlm.bias", mlm_bias);
    if (cfg_.matching == MatchingHead::kConcatLinear) {
      fn("match.weight", match_w);
      fn("match.bias", match_b);
    }
    fn("classifier.weight", cls_w);
    fn("classifier.bias", cls_b);
  }

  std::vector<std::pair<std::string, Tensor<T>*>> named_parameters() {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    for_each_parameter([&](const std::string& n, Tensor<T>& p) { out.emplace_back(n, &p); });
    return out;
  }

  std::vector<Tensor<T>*> parameters() {
    std::vector<Tensor<T>*> out;
    for_each_parameter([&](const std::string&, Tensor<T>& p) { out.push_back(&p); });
    return out;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for_each_parameter([&](const std::string&, Tensor<T>& p) { n += p.size(); });
    return n;
  }

  // Everything except the classifier (and the heads it does not use).
  void set_encoder_trainable(bool trainable) {
    for_each_parameter([&](const std::string& name, Tensor<T>& p) {
      if (!name.starts_with("classifier.")) p.requires_grad = trainable;
    });
  }

  Tensor<T> tok_emb, pos_emb, emb_ln_g, emb_ln_b;
  std::vector<EncoderLayer<T>> layers;
  Tensor<T> mlm_bias;
  Tensor<T> match_w, match_b;
  Tensor<T> cls_w, cls_b;

 private:
  ModelConfig cfg_;
};

/// Right-padded batch of token sequences.
struct Batch {
  std::vector<text::TokenId> ids;
  std::vector<std::uint8_t> mask;
  std::size_t batch = 0;
  std::size_t seq_len = 0;
};

inline Batch make_batch(const std::vector<const text::TokenSequence*>& seqs, std::size_t pad_to = 0) {
  Batch b;
  b.batch = seqs.size();
  b.seq_len = pad_to;
  for (const auto* s : seqs) b.seq_len = std::max(b.seq_len, s->size());
  b.ids.assign(b.batch * b.seq_len, text::kPad);
  b.mask.assign(b.batch * b.seq_len, 0);
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const auto& s = *seqs[i];
    for (std::size_t j = 0; j < s.size(); ++j) {
      b.ids[i * b.seq_len + j] = s.ids[j];
      b.mask[i * b.seq_len + j] = s.attention_mask.empty() ? 1 : s.attention_mask[j];
    }
  }
  return b;
}

inline Batch batch_of(const std::vector<text::TokenSequence>& seqs, std::size_t pad_to = 0) {
  std::vector<const text::TokenSequence*> ptrs;
  for (const auto& s : seqs) ptrs.push_back(&s);
  return make_batch(ptrs, pad_to);
}

struct ForwardOptions {
  bool train = false;
  Rng* rng = nullptr;  // dropout noise; required when train and dropout > 0
};

template <class T>
struct EncoderOutput {
  typename Graph<T>::Var hidden;  // [B*S, H]
  typename Graph<T>::Var cls;     // [B, H]
};

template <class T>
EncoderOutput<T> encode(Graph<T>& g, EncoderModel<T>& model, const Batch& batch,
                        const ForwardOptions& opts = {}) {
  const auto& cfg = model.config();
  const std::size_t B = batch.batch, S = batch.seq_len, H = cfg.hidden, A = cfg.heads;
  if (B == 0 || S == 0) throw Error(ErrorCode::kInvalidArgument, "empty batch");
  if (S > cfg.max_positions) {
    throw Error(ErrorCode::kSequenceTooLong,
                "length " + std::to_string(S) + " > " + std::to_string(cfg.max_positions));
  }
  for (std::size_t b = 0; b < B; ++b) {
    bool any = false;
    for (std::size_t s = 0; s < S; ++s) any = any || batch.mask[b * S + s];
    if (!any) throw Error(ErrorCode::kInvalidArgument, "sequence with no attended tokens");
  }
  const bool drop = opts.train && cfg.dropout > 0;
  if (drop && opts.rng == nullptr) throw Error(ErrorCode::kInvalidArgument, "dropout needs an rng");
  const T p = static_cast<T>(cfg.dropout);
  const T eps = static_cast<T>(cfg.ln_eps);
  auto dropout = [&](typename Graph<T>::Var v) { return drop ? g.dropout(v, p, *opts.rng) : v; };

  std::vector<std::int32_t> positions(B * S);
  for (std::size_t i = 0; i < B * S; ++i) positions[i] = static_cast<std::int32_t>(i % S);
  auto x = g.add(g.embedding(g.param(model.tok_emb), batch.ids),
                 g.embedding(g.param(model.pos_emb), positions));
  x = dropout(g.layer_norm(x, g.param(model.emb_ln_g), g.param(model.emb_ln_b), eps));

  const T inv_sqrt_d = static_cast<T>(1.0 / std::sqrt(static_cast<double>(H / A)));
  for (auto& l : model.layers) {
    auto proj = [&](Tensor<T>& w, Tensor<T>& b) { return g.add(g.matmul(x, g.param(w)), g.param(b)); };
    auto q = g.split_heads(proj(l.wq, l.bq), B, S, A);
    auto k = g.split_heads(proj(l.wk, l.bk), B, S, A);
    auto v = g.split_heads(proj(l.wv, l.bv), B, S, A);
    auto probs = dropout(g.softmax(g.scale(g.bmm(q, k, true), inv_sqrt_d), &batch.mask, A));
    auto ctx = g.merge_heads(g.bmm(probs, v), B, A);
    auto attn = dropout(g.add(g.matmul(ctx, g.param(l.wo)), g.param(l.bo)));
    x = g.layer_norm(g.add(x, attn), g.param(l.ln1_g), g.param(l.ln1_b), eps);
    auto f = g.gelu(g.add(g.matmul(x, g.param(l.w1)), g.param(l.b1)));
    f = dropout(g.add(g.matmul(f, g.param(l.w2)), g.param(l.b2)));
    x = g.layer_norm(g.add(x, f), g.param(l.ln2_g), g.param(l.ln2_b), eps);
  }
  std::vector<std::size_t> cls_rows(B);
  for (std::size_t b = 0; b < B; ++b) cls_rows[b] = b * S;
  return {x, g.gather_rows(x, cls_rows)};
}

/// Mean cross-entropy over positions whose label is not kIgnoreLabel; the
/// output projection is the transposed token embedding.
template <class T>
typename Graph<T>::Var mlm_loss(Graph<T>& g, EncoderModel<T>& model, typename Graph<T>::Var hidden,
                                const std::vector<text::TokenId>& labels) {
  std::vector<std::size_t> rows;
  std::vector<std::int32_t> targets;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == text::kIgnoreLabel) continue;
    rows.push_back(i);
    targets.push_back(labels[i]);
  }
  if (rows.empty()) throw Error(ErrorCode::kNoMaskedPositions, "batch has no masked positions");
  auto h = g.gather_rows(hidden, rows);
  auto logits = g.add(g.matmul(h, g.param(model.tok_emb), true), g.param(model.mlm_bias));
  return g.cross_entropy(logits, targets);
}

/// One logit per pair: cls_a . cls_b / sqrt(H), or a linear layer over the
/// concatenation when the model is configured that way.
template <class T>
typename Graph<T>::Var matching_logits(Graph<T>& g, EncoderModel<T>& model, typename Graph<T>::Var cls_a,
                                       typename Graph<T>::Var cls_b) {
  const auto& cfg = model.config();
  if (cfg.matching == MatchingHead::kDotProduct) {
    return g.scale(g.row_dot(cls_a, cls_b), static_cast<T>(1.0 / std::sqrt(static_cast<double>(cfg.hidden))));
  }
  auto z = g.add(g.matmul(g.concat_cols(cls_a, cls_b), g.param(model.match_w)), g.param(model.match_b));
  return g.reshape(z, {g.shape(z)[0]});
}

template <class T>
typename Graph<T>::Var classifier_logits(Graph<T>& g, EncoderModel<T>& model, typename Graph<T>::Var cls) {
  return g.add(g.matmul(cls, g.param(model.cls_w)), g.param(model.cls_b));
}

template <class T>
std::vector<T> softmax_row(std::span<const T> logits) {
  std::vector<T> out(logits.begin(), logits.end());
  const T mx = *std::max_element(out.begin(), out.end());
  T sum = 0;
  for (auto& x : out) {
    x = std::exp(x - mx);
    sum += x;
  }
  for (auto& x : out) x /= sum;
  return out;
}

/// Inference: class probabilities for each sequence, in batches.
template <class T>
std::vector<std::vector<T>> classify(EncoderModel<T>& model, const std::vector<text::TokenSequence>& seqs,
                                     std::size_t batch_size = 64) {
  std::vector<std::vector<T>> out;
  out.reserve(seqs.size());
  const std::size_t c = model.config().num_classes;
  for (std::size_t start = 0; start < seqs.size(); start += batch_size) {
    std::vector<const text::TokenSequence*> chunk;
    for (std::size_t i = start; i < std::min(seqs.size(), start + batch_size); ++i) chunk.push_back(&seqs[i]);
    Graph<T> g(false);
    auto enc = encode(g, model, make_batch(chunk));
    auto logits = g.value(classifier_logits(g, model, enc.cls));
    for (std::size_t i = 0; i < chunk.size(); ++i) out.push_back(softmax_row<T>(logits.subspan(i * c, c)));
  }
  return out;
}

/// Inference: probability that each (a[i], b[i]) pair is positive.
template <class T>
std::vector<T> match_probabilities(EncoderModel<T>& model, const std::vector<text::TokenSequence>& a,
                                   const std::vector<text::TokenSequence>& b, std::size_t batch_size = 64) {
  if (a.size() != b.size()) throw Error(ErrorCode::kLengthMismatch, "pair sides differ in length");
  std::vector<T> out;
  out.reserve(a.size());
  for (std::size_t start = 0; start < a.size(); start += batch_size) {
    const std::size_t end = std::min(a.size(), start + batch_size);
    std::vector<const text::TokenSequence*> ca, cb;
    for (std::size_t i = start; i < end; ++i) {
      ca.push_back(&a[i]);
      cb.push_back(&b[i]);
    }
    Graph<T> g(false);
    auto ea = encode(g, model, make_batch(ca));
    auto eb = encode(g, model, make_batch(cb));
    for (T z : g.value(matching_logits(g, model, ea.cls, eb.cls))) out.push_back(T(1) / (T(1) + std::exp(-z)));
  }
  return out;
}

}  // namespace relxforge::nn

#endif  // RELXFORGE_MODEL_HPP_
