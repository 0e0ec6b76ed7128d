// relxforge command-line driver.
//
// Every subcommand resolves its parameters as
//   built-in defaults < RELXFORGE_SEED (seed only) < --config file < flags
// and writes effective_config.json plus manifest.json into --out. Exit
// codes: 0 ok, 2 configuration, 3 I/O, 4 stage failure; failures print one
// JSON object on stderr.

#include <cstdio>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "relxforge/checkpoint.hpp"
#include "relxforge/corpus.hpp"
#include "relxforge/crc64.hpp"
#include "relxforge/error.hpp"
#include "relxforge/io.hpp"
#include "relxforge/metrics.hpp"
#include "relxforge/pairs.hpp"
#include "relxforge/schema.hpp"
#include "relxforge/subset.hpp"
#include "relxforge/synthetic.hpp"
#include "relxforge/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace relxforge;

namespace {

constexpr const char* kVersion = "0.1.0";

struct Param {
  std::string key;
  json def;
  std::string help;
  bool input = false;  // path(s) checksummed into the manifest
};

std::string kebab(std::string s) {
  for (auto& c : s) {
    if (c == '_') c = '-';
  }
  return s;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  for (auto part : io::split(s, ',')) {
    part = io::trim(part);
    if (!part.empty()) out.emplace_back(part);
  }
  return out;
}

// "lang=path" entries; a bare path is keyed by its file stem.
std::map<std::string, std::string> named_paths(const std::string& s) {
  std::map<std::string, std::string> out;
  for (const auto& item : split_list(s)) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) out[fs::path(item).stem().string()] = item;
    else out[item.substr(0, eq)] = item.substr(eq + 1);
  }
  return out;
}

json checksum(const std::string& path) {
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(path)) {
      if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::string listing;
    for (const auto& f : files) listing += f.lexically_relative(path).string() + "\t" + hex64(crc64_file(f.string())) + "\n";
    return {{"crc64", hex64(crc64(listing))}, {"files", files.size()}};
  }
  if (!fs::exists(path)) throw Error(ErrorCode::kIOError, "no such file: " + path);
  return {{"crc64", hex64(crc64_file(path))}, {"bytes", fs::file_size(path)}};
}

// ---------------------------------------------------------------------------

struct Run {
  const json& cfg;
  fs::path out;
  json stats = json::object();
  json outputs = json::object();

  std::string str(const std::string& k) const { return cfg.at(k).get<std::string>(); }
  std::string need(const std::string& k) const {
    auto v = str(k);
    if (v.empty()) throw Error(ErrorCode::kConfigError, "--" + kebab(k) + " is required");
    return v;
  }
  std::size_t size(const std::string& k) const { return cfg.at(k).get<std::size_t>(); }
  std::uint64_t u64(const std::string& k) const { return cfg.at(k).get<std::uint64_t>(); }
  double num(const std::string& k) const { return cfg.at(k).get<double>(); }
  bool flag(const std::string& k) const { return cfg.at(k).get<bool>(); }

  std::string path(const std::string& name) const { return (out / name).string(); }
  void write(const std::string& name, std::string_view content) {
    io::write_file(path(name), content);
    outputs[name] = checksum(path(name));
  }
};

struct Command {
  std::string name;
  std::string description;
  std::vector<Param> params;
  std::function<void(Run&)> run;
};

// ---------------------------------------------------------------------------
// Shared parameter groups.

std::vector<Param> model_params() {
  return {{"layers", 4, "encoder layers"},
          {"hidden", 128, "hidden size"},
          {"heads", 4, "attention heads"},
          {"ff", 512, "feed-forward size"},
          {"dropout", 0.1, "dropout probability"},
          {"matching", "dot", "matching head: dot or concat"},
          {"vocab_size", 8000, "wordpiece vocabulary size when training a vocabulary"}};
}

std::vector<Param> finetune_params() {
  return {{"schema", "", "relation names, one per line (default: KBP-37)", true},
          {"checkpoint", "", "pretrained checkpoint; empty means random initialization", true},
          {"vocab", "", "vocabulary file (default: vocab.txt beside the checkpoint)", true},
          {"lr", 3e-5, "learning rate"},
          {"weight_decay", 0.1, "AdamW weight decay"},
          {"batch_size", 64, "batch size"},
          {"epochs", 10, "training epochs"},
          {"max_len", 128, "maximum sequence length"},
          {"patience", 0, "early stopping patience in epochs; 0 disables"},
          {"freeze_encoder", false, "train only the classifier"},
          {"seed", 0, "random seed"}};
}

template <class... Vs>
std::vector<Param> concat(std::vector<Param> a, const Vs&... rest) {
  (a.insert(a.end(), rest.begin(), rest.end()), ...);
  return a;
}

schema::RelationSchema load_schema(const Run& r) {
  const auto p = r.str("schema");
  return p.empty() ? schema::RelationSchema{} : schema::schema_from_text(io::read_file(p));
}

schema::LabeledDataset load_dataset(const std::string& path, const schema::RelationSchema& s,
                                    const std::string& lang = "en") {
  auto ds = schema::load_kbp37(path, s, lang);
  ds.validate();
  return ds;
}

nn::ModelConfig model_config(const Run& r, std::size_t vocab_size, std::size_t classes) {
  nn::ModelConfig c;
  c.layers = r.size("layers");
  c.hidden = r.size("hidden");
  c.heads = r.size("heads");
  c.ff = r.size("ff");
  c.dropout = r.num("dropout");
  c.matching = nn::matching_head_from_string(r.str("matching"));
  c.max_positions = r.size("max_len");
  c.vocab_size = vocab_size;
  c.num_classes = classes;
  c.validate();
  return c;
}

std::vector<std::string> plain_texts(const schema::LabeledDataset& ds) {
  std::vector<std::string> out;
  for (const auto& e : ds.examples) out.push_back(schema::parse_markers(e.text).plain);
  return out;
}

train::FinetuneConfig finetune_config(const Run& r) {
  train::FinetuneConfig c;
  c.optimizer.lr = r.num("lr");
  c.optimizer.weight_decay = r.num("weight_decay");
  c.optimizer.validate();
  c.batch_size = r.size("batch_size");
  c.epochs = r.size("epochs");
  c.max_len = r.size("max_len");
  c.patience = r.size("patience");
  c.freeze_encoder = r.flag("freeze_encoder");
  c.seed = r.u64("seed");
  return c;
}

// Builds fresh models for fine-tuning: encoder weights from the checkpoint
// when one is given, classifier sized to the schema and freshly initialized.
struct ModelSource {
  std::optional<nn::Checkpoint> ck;
  nn::ModelConfig cfg;
  text::Vocab vocab;

  train::Model make(std::uint64_t seed) const {
    train::Model m(cfg, seed);
    if (!ck) return m;
    m.for_each_parameter([&](const std::string& name, nn::Tensor<float>& p) {
      if (name.starts_with("classifier.")) return;
      const auto* t = ck->find(name);
      if (t == nullptr) throw Error(ErrorCode::kMalformedRecord, "checkpoint lacks tensor '" + name + "'");
      if (t->shape != p.shape) throw Error(ErrorCode::kShapeMismatch, "tensor '" + name + "' shape differs");
      p.data = t->data;
    });
    return m;
  }
};

ModelSource model_source(Run& r, const schema::RelationSchema& s, const schema::LabeledDataset& train_set) {
  ModelSource src;
  const auto ck_path = r.str("checkpoint");
  auto vocab_path = r.str("vocab");
  if (!ck_path.empty()) {
    src.ck = nn::Checkpoint::load(ck_path);
    src.cfg = nn::checkpoint_model_config(*src.ck);
    src.cfg.num_classes = s.num_classes();
    if (r.size("max_len") > src.cfg.max_positions) {
      throw Error(ErrorCode::kConfigError, "--max-len exceeds the checkpoint's max_positions");
    }
    if (vocab_path.empty()) vocab_path = (fs::path(ck_path).parent_path() / "vocab.txt").string();
    src.vocab = text::Vocab::load(vocab_path);
    if (src.vocab.size() != src.cfg.vocab_size) {
      throw Error(ErrorCode::kConfigError, "vocabulary size does not match the checkpoint");
    }
    r.stats["input_vocab"] = vocab_path;
    return src;
  }
  src.vocab = vocab_path.empty() ? text::train_vocab(plain_texts(train_set), r.size("vocab_size"))
                                 : text::Vocab::load(vocab_path);
  src.cfg = model_config(r, src.vocab.size(), s.num_classes());
  if (vocab_path.empty()) r.write("vocab.txt", src.vocab.to_text());
  return src;
}

std::string label_lines(const std::vector<int>& labels, const schema::RelationSchema& s) {
  std::string out;
  for (int l : labels) out += s.class_name(l) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Subcommands.

void cmd_extract(Run& r) {
  const auto lang = r.need("lang");
  const auto table = corpus::SitelinkTable::from_tsv(r.need("sitelinks"));
  auto abbr_dir = r.str("abbreviations");
  if (abbr_dir.empty()) abbr_dir = RELXFORGE_DATA_DIR "/abbreviations";
  const auto res = corpus::extract_records(corpus::read_dump(r.need("dump")), lang, table,
                                           corpus::AbbreviationList::for_language(abbr_dir, lang), r.size("workers"));
  r.write("records.jsonl", corpus::to_jsonl(res.records));
  r.stats = {{"pages", res.stats.pages},
             {"skipped_unbalanced", res.stats.skipped_unbalanced},
             {"sentences", res.stats.resolve.sentences},
             {"links", res.stats.resolve.links},
             {"resolved", res.stats.resolve.resolved},
             {"unresolved", res.stats.resolve.unresolved},
             {"records", res.records.size()}};
  std::cout << "records " << res.records.size() << " from " << res.stats.pages << " pages\n";
}

void cmd_link(Run& r) {
  const auto rel_path = r.str("relations");
  const auto rel = rel_path.empty() ? corpus::RelationsConfig::defaults()
                                    : corpus::RelationsConfig::from_json(nlohmann::json::parse(io::read_file(rel_path)));
  const auto store = corpus::merge_relations(corpus::TripleStore::from_tsv(r.need("triples")), rel.merge_map);
  std::vector<corpus::SentenceRecord> records;
  for (const auto& p : split_list(r.need("records"))) {
    for (auto& rec : corpus::read_records(p)) records.push_back(std::move(rec));
  }
  const auto inst = corpus::link_sentences(records, store, rel.allowed_pids());
  r.write("instances.jsonl", corpus::to_jsonl(inst));
  std::map<std::string, std::size_t> by_pid;
  for (const auto& i : inst) ++by_pid[i.pid];
  r.stats = {{"records", records.size()}, {"instances", inst.size()}, {"instances_by_pid", by_pid}};
  std::cout << "instances " << inst.size() << "\n";
}

void cmd_pairs(Run& r) {
  std::vector<corpus::RelationInstance> inst;
  for (const auto& p : split_list(r.need("instances"))) {
    for (auto& i : corpus::read_instances(p)) inst.push_back(std::move(i));
  }
  pairs::GenerateOptions opt;
  opt.count = r.size("count");
  opt.seed = r.u64("seed");
  opt.shards = r.size("shards");
  opt.workers = r.size("workers");
  opt.policy.probability = r.num("blank_prob");
  opt.sampler.anchor_lang = r.str("anchor_lang");
  const auto g = pairs::generate_pairs(pairs::build_index(inst), opt);
  std::string bytes;
  for (const auto& s : g.shards) bytes += pairs::to_jsonl(s);
  r.write("pairs.jsonl", bytes);
  r.stats = pairs::manifest_json(g.stats, opt);
  std::cout << "pairs " << g.stats.emitted << "\n";
}

void cmd_pretrain(Run& r) {
  const auto records = pairs::read_pairs(r.need("pairs"));
  const auto resume = r.str("resume");
  std::optional<nn::Checkpoint> ck;
  if (!resume.empty()) ck = nn::Checkpoint::load(resume);

  text::Vocab vocab;
  auto vocab_path = r.str("vocab");
  if (vocab_path.empty() && ck) vocab_path = (fs::path(resume).parent_path() / "vocab.txt").string();
  if (!vocab_path.empty()) {
    vocab = text::Vocab::load(vocab_path);
  } else {
    std::vector<std::string> texts;
    auto strip = [](std::string t) {
      for (auto at = t.find("[BLANK]"); at != std::string::npos; at = t.find("[BLANK]")) t.replace(at, 7, " ");
      return t;
    };
    for (const auto& p : records) {
      texts.push_back(strip(p.a.text));
      texts.push_back(strip(p.b.text));
    }
    vocab = text::train_vocab(texts, r.size("vocab_size"));
  }
  r.write("vocab.txt", vocab.to_text());

  const auto max_len = r.size("max_len");
  const auto data = train::encode_pairs(records, vocab, max_len);
  train::PretrainConfig pc;
  pc.steps = r.size("steps");
  pc.batch_size = r.size("batch_size");
  pc.seed = r.u64("seed");
  pc.optimizer.lr = r.num("lr");
  pc.optimizer.weight_decay = r.num("weight_decay");
  pc.optimizer.warmup_steps = r.u64("warmup_steps");
  pc.optimizer.max_grad_norm = r.num("max_grad_norm");
  pc.optimizer.validate();
  pc.checkpoint_every = r.size("checkpoint_every");

  train::Model model = ck ? nn::model_from_checkpoint<float>(*ck)
                          : train::Model(model_config(r, vocab.size(), schema::RelationSchema{}.num_classes()), pc.seed);
  if (model.config().vocab_size != vocab.size()) {
    throw Error(ErrorCode::kConfigError, "vocabulary size does not match the checkpoint");
  }
  nn::Optimizer<float> opt(pc.optimizer, model.parameters());
  if (ck) nn::restore_optimizer(opt, model, *ck);

  std::string log = train::log_header();
  const json trainer = {{"config", pc.to_json()}, {"vocab_crc64", hex64(crc64(vocab.to_text()))}};
  const auto logs = train::pretrain(
      model, opt, data, pc, [&](const train::PretrainLogRow& row) { log += train::format_log_row(row); },
      [&](std::size_t step) {
        if (step < pc.steps) r.write("step-" + std::to_string(step) + ".ckpt", nn::make_checkpoint(model, &opt, trainer).serialize());
      });
  r.write("pretrain_log.tsv", log);
  r.write("model.ckpt", nn::make_checkpoint(model, &opt, trainer).serialize());
  r.stats = {{"pairs", data.size()}, {"steps_run", logs.size()}, {"parameters", model.parameter_count()}};
  if (!logs.empty()) r.stats["final"] = {{"matching", logs.back().matching}, {"accuracy", logs.back().accuracy}};
  if (const auto held = r.str("heldout"); !held.empty()) {
    const auto m = train::evaluate_matching(model, train::encode_pairs(pairs::read_pairs(held), vocab, max_len));
    r.stats["heldout"] = {{"pairs", m.pairs}, {"accuracy", m.accuracy}, {"mean_loss", m.mean_loss}};
    std::printf("heldout matching accuracy %.4f\n", m.accuracy);
  }
  std::cout << "steps " << opt.state().step << ", checkpoint " << r.path("model.ckpt") << "\n";
}

void cmd_finetune(Run& r) {
  const auto s = load_schema(r);
  const auto train_set = load_dataset(r.need("train"), s);
  auto src = model_source(r, s, train_set);
  const auto max_len = r.size("max_len");
  const auto tr = train::encode_dataset(train_set, src.vocab, max_len);
  std::vector<train::EncodedExample> dev;
  if (const auto p = r.str("dev"); !p.empty()) dev = train::encode_dataset(load_dataset(p, s), src.vocab, max_len);
  std::map<std::string, std::vector<train::EncodedExample>> evals;
  for (const auto& [name, p] : named_paths(r.str("test"))) {
    evals[name] = train::encode_dataset(load_dataset(p, s, name), src.vocab, max_len);
    r.write("gold_" + name + ".txt", label_lines(train::gold_labels(evals[name]), s));
  }

  auto cfg = finetune_config(r);
  const auto runs = r.size("runs");
  if (runs == 0) throw Error(ErrorCode::kConfigError, "--runs must be >= 1");
  std::string epochs = "run\tseed\tepoch\ttrain_loss\tdev_macro_f1\n";
  json per_set = json::object();
  for (std::size_t run = 0; run < runs; ++run) {
    cfg.seed = r.u64("seed") + run;
    auto model = src.make(cfg.seed);
    const auto res = train::finetune(model, tr, dev, s, cfg, [&](const train::EpochLog& e) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "%zu\t%llu\t%zu\t%.6f\t%.4f\n", run, static_cast<unsigned long long>(cfg.seed),
                    e.epoch, e.train_loss, e.dev_macro_f1);
      epochs += buf;
    });
    if (run == 0) r.write("model.ckpt", nn::make_checkpoint(model).serialize());
    for (const auto& [name, data] : evals) {
      const auto pred = train::predict(model, data);
      r.write("pred_" + name + "_run" + std::to_string(run) + ".txt", label_lines(pred, s));
      const auto rep = metrics::evaluate_f1(train::gold_labels(data), pred, s);
      per_set[name]["runs"].push_back({{"seed", cfg.seed}, {"best_epoch", res.best_epoch}, {"macro_f1", rep.macro_f1}});
    }
  }
  r.write("epochs.tsv", epochs);
  for (auto& [name, v] : per_set.items()) {
    double sum = 0;
    for (const auto& x : v["runs"]) sum += x["macro_f1"].get<double>();
    v["mean_macro_f1"] = sum / static_cast<double>(runs);
    std::printf("%s macro_f1 %.2f (mean of %zu runs)\n", name.c_str(), v["mean_macro_f1"].get<double>(), runs);
  }
  r.stats = {{"train", tr.size()}, {"dev", dev.size()}, {"eval", per_set}};
  r.write("report.json", per_set.dump(2) + "\n");
}

void cmd_evaluate(Run& r) {
  const auto s = load_schema(r);
  const auto gold = schema::read_labels(r.need("gold"), s);
  const auto pred = schema::read_labels(r.need("pred"), s);
  const auto rep = metrics::evaluate_f1(gold, pred, s);
  r.write("report.json", rep.to_json(s).dump(2) + "\n");
  r.stats = {{"examples", rep.examples}, {"macro_f1", rep.macro_f1}, {"direction_errors", rep.direction_errors}};
  std::printf("macro %.2f\n", rep.macro_f1);
  std::printf("relations averaged %zu, direction errors %zu, examples %zu\n", rep.relations_averaged,
              rep.direction_errors, rep.examples);
}

void cmd_sigtest(Run& r) {
  const auto s = load_schema(r);
  const auto gold = schema::read_labels(r.need("gold"), s);
  const auto a = schema::read_labels(r.need("pred_a"), s);
  const auto b = schema::read_labels(r.need("pred_b"), s);
  const auto res = metrics::randomization_test(a, b, gold, s, r.size("iterations"), r.u64("seed"));
  r.stats = {{"p_value", res.p_value},
             {"observed_delta", res.observed_delta},
             {"at_least_as_extreme", res.at_least_as_extreme},
             {"iterations", res.iterations}};
  r.write("sigtest.json", r.stats.dump(2) + "\n");
  std::printf("delta %.4f p %.4f\n", res.observed_delta, res.p_value);
}

void cmd_subset(Run& r) {
  const auto s = load_schema(r);
  const auto ds = load_dataset(r.need("data"), s);
  const auto res = subset::select_subset(ds, r.size("size"), r.size("trials"), r.u64("seed"));
  schema::LabeledDataset sub;
  sub.schema = s;
  std::string ids;
  for (auto i : res.indices) {
    sub.examples.push_back(ds.examples[i]);
    ids += ds.examples[i].id + "\n";
  }
  r.write("subset.txt", schema::to_kbp37(sub));
  r.write("subset_ids.txt", ids);
  std::map<std::string, std::size_t> quotas;
  for (const auto& [cls, q] : res.quotas) quotas[s.class_name(cls)] = q;
  r.stats = {{"size", res.indices.size()}, {"score", res.score}, {"quotas", quotas}};
  std::printf("subset %zu of %zu, score %.6f\n", res.indices.size(), ds.size(), res.score);
}

void cmd_curve(Run& r) {
  const auto s = load_schema(r);
  const auto train_set = load_dataset(r.need("train"), s);
  const auto src = model_source(r, s, train_set);
  const auto max_len = r.size("max_len");
  const auto tr = train::encode_dataset(train_set, src.vocab, max_len);
  std::vector<train::EncodedExample> dev;
  if (const auto p = r.str("dev"); !p.empty()) dev = train::encode_dataset(load_dataset(p, s), src.vocab, max_len);
  std::map<std::string, std::vector<train::EncodedExample>> evals;
  for (const auto& [name, p] : named_paths(r.need("test"))) {
    evals[name] = train::encode_dataset(load_dataset(p, s, name), src.vocab, max_len);
  }
  std::vector<double> fractions;
  for (const auto& f : split_list(r.str("fractions"))) fractions.push_back(std::stod(f));
  std::vector<std::uint64_t> seeds;
  for (const auto& x : split_list(r.str("seeds"))) seeds.push_back(std::stoull(x));
  if (fractions.empty() || seeds.empty()) throw Error(ErrorCode::kConfigError, "--fractions and --seeds must be non-empty");
  const auto rows = train::learning_curve([&](std::uint64_t seed) { return src.make(seed); }, tr, dev, evals, s,
                                          fractions, seeds, finetune_config(r), [](const train::CurveRow& row) {
                                            std::printf("%g\t%llu\t%s\t%.4f\n", row.fraction,
                                                        static_cast<unsigned long long>(row.seed), row.lang.c_str(),
                                                        row.macro_f1);
                                            std::fflush(stdout);
                                          });
  r.write("curve.tsv", train::curve_tsv(rows));
  r.stats = {{"rows", rows.size()}};
}

void cmd_synthetic(Run& r) {
  synthetic::SyntheticConfig sc;
  sc.sentences_per_language = r.size("sentences");
  sc.heldout_fraction = r.num("heldout_fraction");
  sc.world = synthetic::WorldSize{}.scaled(r.num("world_scale"));
  sc.seed = r.u64("seed");
  const auto c = synthetic::build_corpus(sc);
  std::string triples;
  for (const auto& t : c.triples.triples()) triples += t.subject + "\t" + t.pid + "\t" + t.object + "\n";
  r.write("triples.tsv", triples);
  r.write("train_l1.jsonl", corpus::to_jsonl(c.train_l1));
  r.write("train_l2.jsonl", corpus::to_jsonl(c.train_l2));
  r.write("heldout_l1.jsonl", corpus::to_jsonl(c.heldout_l1));
  r.write("heldout_l2.jsonl", corpus::to_jsonl(c.heldout_l2));

  const auto s = synthetic::synthetic_schema();
  std::string names;
  for (const auto& n : s.relations()) names += n + "\n";
  r.write("schema.txt", names);

  auto pair_file = [&](const std::string& name, std::vector<corpus::SentenceRecord> recs,
                       const std::vector<corpus::SentenceRecord>& more, std::size_t count, std::uint64_t seed) {
    recs.insert(recs.end(), more.begin(), more.end());
    pairs::GenerateOptions o;
    o.count = count;
    o.seed = seed;
    o.sampler.anchor_lang = sc.l1;
    const auto g = pairs::generate_pairs(pairs::build_index(corpus::link_sentences(recs, c.triples, c.pids())), o);
    std::string bytes;
    for (const auto& shard : g.shards) bytes += pairs::to_jsonl(shard);
    r.write(name, bytes);
  };
  pair_file("pairs.jsonl", c.train_l1, c.train_l2, r.size("pairs"), mix_seed(sc.seed, 1));
  pair_file("heldout_pairs.jsonl", c.heldout_l1, c.heldout_l2, r.size("heldout_pairs"), mix_seed(sc.seed, 2));

  auto examples = [&](const std::string& name, const std::vector<corpus::SentenceRecord>& recs, std::uint64_t seed) {
    auto ds = synthetic::relation_examples(recs, c.triples, seed);
    r.write(name, schema::to_kbp37(ds));
    return ds.size();
  };
  r.stats = {{"train_l1_examples", examples("relations_train_l1.txt", c.train_l1, mix_seed(sc.seed, 3))},
             {"test_l1_examples", examples("relations_test_l1.txt", c.heldout_l1, mix_seed(sc.seed, 4))},
             {"test_l2_examples", examples("relations_test_l2.txt", c.heldout_l2, mix_seed(sc.seed, 4))},
             {"entities", c.entities.size()},
             {"triples", c.triples.size()}};
  std::cout << "synthetic corpus written to " << r.out.string() << "\n";
}

std::vector<Command> commands(std::uint64_t seed) {
  const Param seed_p{"seed", seed, "random seed (default from RELXFORGE_SEED)"};
  auto ft = finetune_params();
  for (auto& p : ft) {
    if (p.key == "seed") p = seed_p;
  }
  return {
      {"extract", "Parse a wiki dump into entity-resolved sentence records",
       {{"dump", "", "XML dump file or directory of .wiki pages", true},
        {"lang", "en", "language code"},
        {"sitelinks", "", "sitelink TSV: lang, title, qid", true},
        {"abbreviations", "", "abbreviation list directory (default: bundled lists)", true},
        {"workers", 1, "worker threads; output does not depend on this"}},
       cmd_extract},
      {"link", "Join sentence records with knowledge-base triples",
       {{"records", "", "records.jsonl files, comma separated", true},
        {"triples", "", "triple TSV: subject, pid, object", true},
        {"relations", "", "relations config JSON (default: built-in 24 relations)", true}},
       cmd_link},
      {"pairs", "Generate matching pairs with entity blanking",
       {{"instances", "", "instances.jsonl files, comma separated", true},
        {"count", 1000, "pairs to generate"},
        seed_p,
        {"anchor_lang", "en", "language of the first side of every pair"},
        {"blank_prob", 0.7, "probability of replacing an entity mention by [BLANK]"},
        {"shards", 1, "output shards"},
        {"workers", 1, "worker threads; output does not depend on this"}},
       cmd_pairs},
      {"pretrain", "Pretrain the encoder with masked-token and matching losses",
       concat(std::vector<Param>{{"pairs", "", "pairs.jsonl", true},
                                 {"heldout", "", "pairs.jsonl scored for matching accuracy after training", true},
                                 {"vocab", "", "vocabulary file; trained from the pairs when empty", true},
                                 {"resume", "", "checkpoint to continue from", true},
                                 {"max_len", 128, "maximum sequence length"},
                                 {"steps", 2000, "total optimizer steps"},
                                 {"batch_size", 32, "pairs per step"},
                                 {"lr", 5e-4, "peak learning rate"},
                                 {"weight_decay", 0.01, "AdamW weight decay"},
                                 {"warmup_steps", 100, "linear warmup steps"},
                                 {"max_grad_norm", 1.0, "gradient clipping norm; 0 disables"},
                                 {"checkpoint_every", 0, "also save every N steps; 0 saves only at the end"},
                                 seed_p},
              model_params()),
       cmd_pretrain},
      {"finetune", "Fine-tune a relation classifier and score test sets",
       concat(std::vector<Param>{{"train", "", "training set, KBP-37 layout", true},
                                 {"dev", "", "dev set for best-epoch selection", true},
                                 {"test", "", "evaluation sets as name=path, comma separated", true},
                                 {"runs", 1, "independent runs with seeds seed, seed+1, ..."}},
              ft, model_params()),
       cmd_finetune},
      {"evaluate", "Score predicted labels against gold labels",
       {{"gold", "", "gold labels, one per line", true},
        {"pred", "", "predicted labels, one per line", true},
        {"schema", "", "relation names, one per line (default: KBP-37)", true}},
       cmd_evaluate},
      {"sigtest", "Approximate randomization test between two systems",
       {{"gold", "", "gold labels", true},
        {"pred_a", "", "labels of system A", true},
        {"pred_b", "", "labels of system B", true},
        {"schema", "", "relation names, one per line (default: KBP-37)", true},
        {"iterations", 10000, "random swaps"},
        seed_p},
       cmd_sigtest},
      {"subset", "Select a length-matched stratified subset",
       {{"data", "", "dataset, KBP-37 layout", true},
        {"schema", "", "relation names, one per line (default: KBP-37)", true},
        {"size", 502, "subset size"},
        {"trials", 10000, "random stratified draws"},
        seed_p},
       cmd_subset},
      {"curve", "Learning curve over training-data fractions",
       concat(std::vector<Param>{{"train", "", "training set, KBP-37 layout", true},
                                 {"dev", "", "dev set for best-epoch selection", true},
                                 {"test", "", "evaluation sets as name=path, comma separated", true},
                                 {"fractions", "0.1,0.25,0.5,0.75,1.0", "training fractions"},
                                 {"seeds", "1,2,3", "seeds per fraction"}},
              ft, model_params()),
       cmd_curve},
      {"synthetic", "Write the two-language synthetic corpus, pairs and relation sets",
       {{"sentences", 20000, "sentences per language"},
        {"heldout_fraction", 0.1, "share of sentences from the held-out world"},
        {"world_scale", 1.0, "scale of the entity world"},
        {"pairs", 20000, "training pairs"},
        {"heldout_pairs", 2000, "held-out pairs"},
        {"seed", 7, "world seed"}},
       cmd_synthetic},
  };
}

// ---------------------------------------------------------------------------
// Config resolution.

json coerce(const Param& p, const json& v, const std::string& where) {
  auto bad = [&] { return Error(ErrorCode::kConfigError, where + ": '" + p.key + "' expects " + p.def.type_name()); };
  if (p.def.is_boolean()) {
    if (!v.is_boolean()) throw bad();
  } else if (p.def.is_number_integer()) {
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0) throw bad();
  } else if (p.def.is_number()) {
    if (!v.is_number()) throw bad();
    return v.get<double>();
  } else if (!v.is_string()) {
    throw bad();
  }
  return v;
}

json parse_flag(const Param& p, const std::string& s) {
  try {
    if (p.def.is_number_integer()) {
      std::size_t used = 0;
      if (s.empty() || s[0] == '-') throw std::invalid_argument(s);
      const auto v = std::stoull(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    }
    if (p.def.is_number()) {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    }
  } catch (const std::logic_error&) {
    throw Error(ErrorCode::kConfigError, "--" + kebab(p.key) + ": '" + s + "' is not a valid " + p.def.type_name());
  }
  return s;
}

std::uint64_t env_seed() {
  const char* v = std::getenv("RELXFORGE_SEED");
  if (v == nullptr || *v == '\0') return 0;
  try {
    std::size_t used = 0;
    const auto s = std::stoull(v, &used);
    if (used == std::string(v).size()) return s;
  } catch (const std::logic_error&) {
  }
  throw Error(ErrorCode::kConfigError, std::string("RELXFORGE_SEED is not an unsigned integer: ") + v);
}

int exit_code(ErrorCode c) {
  switch (c) {
    case ErrorCode::kConfigError:
    case ErrorCode::kInvalidArgument:
      return 2;
    case ErrorCode::kIOError:
    case ErrorCode::kBadMagic:
    case ErrorCode::kVersionMismatch:
    case ErrorCode::kChecksumFail:
      return 3;
    default:
      return 4;
  }
}

int fail(int code, std::string_view kind, const std::string& message) {
  std::cerr << json{{"error", kind}, {"message", message}, {"exit_code", code}}.dump() << std::endl;
  return code;
}

struct Bound {
  Command cmd;
  CLI::App* app = nullptr;
  std::string config_path;
  std::string out = "out";
  std::deque<std::string> text;
  std::deque<bool> flags;
  std::vector<CLI::Option*> opts;
};

}  // namespace

int main(int argc, char** argv) {
  std::uint64_t seed = 0;
  try {
    seed = env_seed();
  } catch (const Error& e) {
    return fail(2, to_string(e.code()), e.what());
  }

  CLI::App app{"relxforge: multilingual relation-matching pretraining and relation classification"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  std::deque<Bound> bound;
  for (auto& c : commands(seed)) {
    auto& b = bound.emplace_back();
    b.cmd = std::move(c);
    b.app = app.add_subcommand(b.cmd.name, b.cmd.description);
    b.app->add_option("--config", b.config_path, "JSON config; keys as below with underscores");
    b.app->add_option("--out", b.out, "output directory")->default_str("out");
    for (const auto& p : b.cmd.params) {
      const std::string flag = "--" + kebab(p.key);
      if (p.def.is_boolean()) {
        auto& v = b.flags.emplace_back(false);
        b.opts.push_back(b.app->add_flag(flag, v, p.help)->default_str(p.def.dump()));
      } else {
        auto& v = b.text.emplace_back();
        const std::string shown = p.def.is_string() ? p.def.get<std::string>() : p.def.dump();
        const char* type = p.def.is_number_integer() ? "UINT" : p.def.is_number() ? "FLOAT" : "TEXT";
        b.opts.push_back(
            b.app->add_option(flag, v, p.help)->type_name(type)->default_str(shown.empty() ? "\"\"" : shown));
      }
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(2, "ConfigError", e.what());
  }

  for (auto& b : bound) {
    if (!b.app->parsed()) continue;
    try {
      json cfg = json::object();
      for (const auto& p : b.cmd.params) cfg[p.key] = p.def;
      if (!b.config_path.empty()) {
        json file;
        try {
          file = json::parse(io::read_file(b.config_path));
        } catch (const json::exception& e) {
          throw Error(ErrorCode::kConfigError, b.config_path + ": " + e.what());
        }
        if (!file.is_object()) throw Error(ErrorCode::kConfigError, b.config_path + ": expected a JSON object");
        for (const auto& [k, v] : file.items()) {
          if (k == "command") {
            if (v != b.cmd.name) throw Error(ErrorCode::kConfigError, b.config_path + ": written for '" + v.dump() + "'");
            continue;
          }
          auto it = std::find_if(b.cmd.params.begin(), b.cmd.params.end(), [&](const Param& p) { return p.key == k; });
          if (it == b.cmd.params.end()) throw Error(ErrorCode::kConfigError, b.config_path + ": unknown key '" + k + "'");
          cfg[k] = coerce(*it, v, b.config_path);
        }
      }
      std::size_t ti = 0, fi = 0;
      for (std::size_t i = 0; i < b.cmd.params.size(); ++i) {
        const auto& p = b.cmd.params[i];
        const bool is_flag = p.def.is_boolean();
        const std::size_t slot = is_flag ? fi++ : ti++;
        if (b.opts[i]->count() == 0) continue;
        cfg[p.key] = is_flag ? json(b.flags[slot]) : parse_flag(p, b.text[slot]);
      }

      Run run{cfg, b.out};
      fs::create_directories(run.out);
      json effective = {{"command", b.cmd.name}};
      for (const auto& [k, v] : cfg.items()) effective[k] = v;
      io::write_file(run.path("effective_config.json"), effective.dump(2) + "\n");

      json inputs = json::object();
      for (const auto& p : b.cmd.params) {
        if (!p.input) continue;
        for (const auto& [name, path] : named_paths(cfg[p.key].get<std::string>())) inputs[path] = checksum(path);
      }
      b.cmd.run(run);
      const json manifest = {{"command", b.cmd.name}, {"version", kVersion},     {"inputs", inputs},
                             {"outputs", run.outputs}, {"stats", run.stats}};
      io::write_file(run.path("manifest.json"), manifest.dump(2) + "\n");
    } catch (const Error& e) {
      return fail(exit_code(e.code()), to_string(e.code()), e.what());
    } catch (const fs::filesystem_error& e) {
      return fail(3, "IOError", e.what());
    } catch (const std::exception& e) {
      return fail(4, "StageError", e.what());
    }
  }
  return 0;
}
