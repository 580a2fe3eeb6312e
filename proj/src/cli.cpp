#include "condseq/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "condseq/data.hpp"
#include "condseq/denoiser.hpp"
#include "condseq/errors.hpp"
#include "condseq/generation.hpp"
#include "condseq/io.hpp"
#include "condseq/metrics.hpp"
#include "condseq/training.hpp"
#include "json_util.hpp"

namespace condseq {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------- config

// Resolves a config path: as given, else relative to $CONDSEQ_CONFIG_DIR.
fs::path resolve_config(const std::string& name) {
  fs::path p(name);
  if (fs::exists(p) || p.is_absolute()) return p;
  if (const char* dir = std::getenv("CONDSEQ_CONFIG_DIR"); dir && *dir) {
    const fs::path alt = fs::path(dir) / p;
    if (fs::exists(alt)) return alt;
  }
  return p;
}

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  const auto text = read_file(resolve_config(path));
  try {
    auto j = json::parse(text);
    if (!j.is_object()) throw InvalidConfig("config " + path + " is not a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    throw InvalidConfig("config " + path + " is not valid JSON: " + e.what());
  }
}

// Applies "a.b=value" overrides; values parse as JSON when they can.
void apply_overrides(json& cfg, const std::vector<std::string>& sets) {
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw InvalidConfig("override '" + s + "' must be key=value");
    const auto key = s.substr(0, eq), raw = s.substr(eq + 1);
    json value;
    try {
      value = json::parse(raw);
    } catch (const json::parse_error&) {
      value = raw;
    }
    json* node = &cfg;
    std::size_t pos = 0;
    while (true) {
      const auto dot = key.find('.', pos);
      const auto part = key.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
      if (dot == std::string::npos) {
        (*node)[part] = value;
        break;
      }
      if (!node->contains(part)) (*node)[part] = json::object();
      node = &(*node)[part];
      pos = dot + 1;
    }
  }
}

template <typename V>
void set_if(json& cfg, const CLI::Option* opt, const std::string& key, const V& value) {
  if (opt->count() > 0) cfg[key] = value;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

// ---------------------------------------------------------------- FASTA helpers

struct HeaderedSequence {
  std::string id;
  std::map<std::string, std::string> fields;
  Sequence sequence;
};

// Splits "id|key=value|..." headers written by `generate`.
std::vector<HeaderedSequence> read_headered_fasta(const fs::path& path) {
  std::vector<HeaderedSequence> out;
  for (const auto& e : parse_fasta(path)) {
    HeaderedSequence h;
    std::stringstream ss(e.id);
    std::string part;
    std::getline(ss, h.id, '|');
    while (std::getline(ss, part, '|')) {
      const auto eq = part.find('=');
      if (eq != std::string::npos) h.fields[part.substr(0, eq)] = part.substr(eq + 1);
    }
    h.sequence = encode_sequence(e.sequence);
    out.push_back(std::move(h));
  }
  return out;
}

std::string label_key(const AnnotationSet& a, const Registries& reg) {
  std::vector<std::string> labels;
  for (int g : a.go) labels.push_back(reg.go.label(g));
  for (int i : a.ipr) labels.push_back(reg.ipr.label(i));
  for (int e : a.ec) labels.push_back(reg.ec.label(e));
  std::string out;
  for (const auto& l : labels) out += (out.empty() ? "" : ";") + l;
  return out;
}

std::vector<std::string> split_labels(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ';'))
    if (!item.empty()) out.push_back(item);
  return out;
}

NoiseSchedule schedule_from(const Checkpoint& ckpt) {
  std::size_t T = 500;
  ScheduleKind kind = ScheduleKind::LinearAlpha;
  if (ckpt.metadata.contains("train")) {
    const auto cfg = TrainConfig::from_json(ckpt.metadata.at("train"));
    T = cfg.T;
    kind = cfg.schedule;
  }
  return make_schedule(T, kind);
}

// ---------------------------------------------------------------- subcommands

struct CurateArgs {
  std::string config, fasta, annotations, out;
  std::vector<std::string> sets;
  std::size_t min_label_count = 0, val_per_label = 0, max_len = 0;
  CLI::Option *o_min = nullptr, *o_val = nullptr, *o_len = nullptr;
};

int run_curate(const CurateArgs& a, std::ostream& out) {
  json cfg = load_config(a.config);
  set_if(cfg, a.o_min, "min_label_count", a.min_label_count);
  set_if(cfg, a.o_val, "val_per_label", a.val_per_label);
  set_if(cfg, a.o_len, "max_len", a.max_len);
  apply_overrides(cfg, a.sets);
  const auto config = CurationConfig::from_json(cfg);

  const auto fasta = parse_fasta(a.fasta);
  const auto rows = a.annotations.empty() ? std::map<std::string, AnnotationRow>{} : parse_annotations(a.annotations);
  auto curated = curate(join_records(fasta, rows), config);
  Dataset ds{std::move(curated.train), std::move(curated.val), curated.registries, std::nullopt};
  write_dataset(a.out, ds);
  std::string log;
  for (const auto& l : curated.log) log += l + "\n";
  write_file_atomic(fs::path(a.out) / "curation_log.txt", log);
  out << json{{"train", ds.train.size()},
              {"val", ds.val.size()},
              {"labels", {{"go", ds.registries.go.size()}, {"ipr", ds.registries.ipr.size()}, {"ec", ds.registries.ec.size()}}},
              {"log", curated.log}}
             .dump()
      << "\n";
  return kExitOk;
}

struct SynthArgs {
  std::string config, out;
  std::vector<std::string> sets;
  std::size_t n_classes = 0, n_sequences = 0, signature_length = 0;
  std::uint64_t seed = 0;
  bool structures = false;
  CLI::Option *o_classes = nullptr, *o_n = nullptr, *o_sig = nullptr, *o_seed = nullptr, *o_struct = nullptr;
};

int run_synth(const SynthArgs& a, std::ostream& out) {
  json cfg = load_config(a.config);
  set_if(cfg, a.o_classes, "n_classes", a.n_classes);
  set_if(cfg, a.o_n, "n_sequences", a.n_sequences);
  set_if(cfg, a.o_sig, "signature_length", a.signature_length);
  set_if(cfg, a.o_seed, "seed", a.seed);
  set_if(cfg, a.o_struct, "structures", a.structures);
  apply_overrides(cfg, a.sets);
  const auto spec = SyntheticSpec::from_json(cfg);
  const auto corpus = make_synthetic(spec);
  const auto ds = split_synthetic(corpus, spec.val_fraction);
  write_dataset(a.out, ds);
  out << json{{"train", ds.train.size()}, {"val", ds.val.size()}, {"classes", spec.n_classes}, {"spec", spec.to_json()}}.dump()
      << "\n";
  return kExitOk;
}

struct TrainArgs {
  std::string config, data, out, log, init;
  std::vector<std::string> sets;
  std::size_t steps = 0, batch_tokens = 0, T = 0, workers = 1, progress = 0;
  double lr = 0, dropout = 0;
  std::uint64_t seed = 0;
  CLI::Option *o_steps = nullptr, *o_batch = nullptr, *o_T = nullptr, *o_lr = nullptr, *o_dropout = nullptr,
              *o_seed = nullptr, *o_workers = nullptr;
};

int run_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  json cfg = load_config(a.config);
  set_if(cfg, a.o_steps, "max_steps", a.steps);
  set_if(cfg, a.o_batch, "batch_tokens", a.batch_tokens);
  set_if(cfg, a.o_T, "T", a.T);
  set_if(cfg, a.o_lr, "lr", a.lr);
  set_if(cfg, a.o_dropout, "condition_dropout", a.dropout);
  set_if(cfg, a.o_seed, "seed", a.seed);
  set_if(cfg, a.o_workers, "workers", a.workers);
  apply_overrides(cfg, a.sets);

  const auto ds = read_dataset(a.data);
  // Label-space sizes always come from the dataset.
  json& model = cfg["model"];
  if (!model.is_object()) model = json::object();
  const std::pair<const char*, std::size_t> sizes[] = {
      {"n_go", ds.registries.go.size()}, {"n_ipr", ds.registries.ipr.size()}, {"n_ec", ds.registries.ec.size()}};
  for (const auto& [key, n] : sizes) {
    if (model.contains(key) && model[key] != n)
      throw InvalidConfig(std::string("model.") + key + " does not match the dataset registries");
    model[key] = n;
  }
  std::size_t longest = 0;
  for (const auto* split : {&ds.train, &ds.val})
    for (const auto& r : *split) longest = std::max(longest, r.sequence.size());
  if (!model.contains("max_len")) model["max_len"] = std::max<std::size_t>(longest, DenoiserConfig{}.max_len);
  const auto config = TrainConfig::from_json(cfg);

  DenoiserParams<float> init;
  if (!a.init.empty()) {
    auto ckpt = load_checkpoint(a.init);
    if (!(ckpt.registries == ds.registries)) throw CorruptCheckpoint("initial checkpoint registries differ from the dataset");
    if (!(ckpt.params.config == config.model)) throw InvalidConfig("initial checkpoint model config differs");
    init = std::move(ckpt.params);
  } else {
    Rng rng(config.seed);
    init = init_params(config.model, rng);
  }

  std::string log;
  const auto result = train(to_training_examples(ds.train), config, std::move(init), [&](const TrainRecord& r) {
    log += r.to_json().dump() + "\n";
    if (a.progress && r.step % a.progress == 0) err << r.to_json().dump() << "\n";
  });
  const double first = result.log.empty() ? 0.0 : result.log.front().loss;
  const double last = result.log.empty() ? 0.0 : result.log.back().loss;
  json meta{{"train", config.to_json()},
            {"steps", result.log.size()},
            {"first_loss", round6(first)},
            {"final_loss", round6(last)},
            {"train_examples", ds.train.size()}};
  save_checkpoint(result.params, ds.registries, a.out, meta);
  const fs::path log_path = a.log.empty() ? fs::path(fs::path(a.out).string() + ".log.jsonl") : fs::path(a.log);
  write_file_atomic(log_path, log);
  out << json{{"checkpoint", a.out}, {"log", log_path.string()}, {"steps", result.log.size()}, {"first_loss", round6(first)},
              {"final_loss", round6(last)}}
             .dump()
      << "\n";
  return kExitOk;
}

struct GenerateArgs {
  std::string config, checkpoint, out, go, ipr, ec, motif, motif_mode, structure, oracle;
  std::vector<std::string> sets;
  std::size_t len = 0, min_len = 0, max_len = 0, steps = 0, rerank = 1, count = 1;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  bool greedy = false, exact = false;
  CLI::Option *o_len = nullptr, *o_min = nullptr, *o_max = nullptr, *o_steps = nullptr, *o_rerank = nullptr,
              *o_temp = nullptr, *o_seed = nullptr, *o_mode = nullptr, *o_greedy = nullptr, *o_exact = nullptr;
};

int run_generate(const GenerateArgs& a, std::ostream& out) {
  json cfg = load_config(a.config);
  set_if(cfg, a.o_len, "length", a.len);
  set_if(cfg, a.o_min, "min_length", a.min_len);
  set_if(cfg, a.o_max, "max_length", a.max_len);
  set_if(cfg, a.o_steps, "steps", a.steps);
  set_if(cfg, a.o_rerank, "n_candidates", a.rerank);
  set_if(cfg, a.o_temp, "temperature", a.temperature);
  set_if(cfg, a.o_seed, "seed", a.seed);
  set_if(cfg, a.o_mode, "motif_mode", a.motif_mode);
  if (a.o_greedy->count()) cfg["gumbel"] = false;
  if (a.o_exact->count()) cfg["exact_posterior"] = true;
  apply_overrides(cfg, a.sets);
  auto config = SampleConfig::from_json(cfg);
  if (a.count < 1) throw InvalidConfig("--n must be at least 1");

  const auto ckpt = load_checkpoint(a.checkpoint);
  const auto schedule = schedule_from(ckpt);
  const auto& reg = ckpt.registries;

  ConditionBundle bundle;
  std::vector<std::string> modes;
  AnnotationSet anno;
  for (const auto& l : split_list(a.go)) anno.go.insert(reg.go.id(l));
  for (const auto& l : split_list(a.ipr)) anno.ipr.insert(reg.ipr.id(l));
  for (const auto& l : split_list(a.ec)) anno.ec.insert(reg.ec.id(l));
  if (!anno.empty()) {
    bundle.annotations = anno;
    modes.push_back("anno");
  }
  if (!a.motif.empty()) {
    bundle.motif = parse_motif(a.motif, config.motif_mode == MotifMode::Dynamic);
    modes.push_back("motif");
  }
  if (!a.structure.empty()) {
    const fs::path p(a.structure);
    bundle.structure = p.extension() == ".bin" ? decode_structure(read_file(p)) : parse_backbone(p);
    if (config.length == 0) config.length = bundle.structure->size();
    modes.push_back("struct");
  }
  std::string mode = modes.empty() ? "uncond" : "";
  for (const auto& m : modes) mode += (mode.empty() ? "" : "+") + m;

  std::optional<SyntheticOracle> oracle;
  if (!a.oracle.empty()) oracle = SyntheticOracle::from_json(json::parse(read_file(a.oracle)));
  const FunctionScorer scorer = [&](const Sequence& s, const AnnotationSet& ann) {
    return oracle ? oracle->function_score(s, ann) : 0.0;
  };

  std::vector<GeneratedRecord> records;
  for (std::size_t i = 0; i < a.count; ++i) {
    auto c = config;
    c.seed = config.seed + i * config.n_candidates;
    const auto best = generate_reranked(bundle, ckpt.params, schedule, c, scorer);
    records.push_back({"gen" + std::to_string(i), mode, best.seed, best.model_confidence, best.func_score,
                       label_key(anno, reg), best.sequence});
  }
  const auto text = format_fasta(records);
  if (a.out.empty() || a.out == "-") {
    out << text;
  } else {
    write_file_atomic(a.out, text);
    out << json{{"fasta", a.out}, {"sequences", records.size()}, {"mode", mode}}.dump() << "\n";
  }
  return kExitOk;
}

struct EvaluateArgs {
  std::string config, generated, reference, reference_data, split = "val", train_fasta, oracle, predictions, sctm,
      out, embeddings;
  std::vector<std::string> sets;
  bool mmd = false, mrr = false, f1 = false, fmax = false, aar = false, ngram = false, novelty = false;
};

struct EvaluateOptions {
  double threshold = 0.99;
  std::size_t spectrum_k = 3;
  std::vector<std::size_t> ngram_orders{4, 5, 6};

  static EvaluateOptions from_json(const json& j) {
    EvaluateOptions o;
    detail::StrictObject s(j, "evaluate config");
    s.read("threshold", o.threshold);
    s.read("spectrum_k", o.spectrum_k);
    s.read("ngram_orders", o.ngram_orders);
    s.finish();
    if (!(o.threshold >= 0 && o.threshold <= 1)) throw InvalidConfig("threshold must be in [0, 1]");
    if (o.spectrum_k < 1 || o.spectrum_k > 6) throw InvalidConfig("spectrum_k must be in [1, 6]");
    return o;
  }
  json to_json() const { return {{"threshold", threshold}, {"spectrum_k", spectrum_k}, {"ngram_orders", ngram_orders}}; }
};

// Labelled sequences of a reference: FASTA headers or a dataset split.
struct LabeledSet {
  std::vector<std::string> ids;
  std::vector<Sequence> seqs;
  std::vector<std::string> labels;
};

LabeledSet from_fasta(const fs::path& path) {
  LabeledSet s;
  for (auto& h : read_headered_fasta(path)) {
    s.ids.push_back(h.id);
    s.seqs.push_back(h.sequence);
    s.labels.push_back(h.fields.count("labels") ? h.fields["labels"] : "");
  }
  return s;
}

LabeledSet from_records(const std::vector<DatasetRecord>& recs, const Registries& reg) {
  LabeledSet s;
  for (const auto& r : recs) {
    s.ids.push_back(r.id);
    s.seqs.push_back(r.sequence);
    s.labels.push_back(label_key(r.annotations, reg));
  }
  return s;
}

std::map<std::string, std::vector<Embedding>> by_class(const LabeledSet& s, std::size_t k) {
  std::map<std::string, std::vector<Embedding>> out;
  for (std::size_t i = 0; i < s.seqs.size(); ++i)
    if (!s.labels[i].empty()) out[s.labels[i]].push_back(spectrum_embed(s.seqs[i], k).vector);
  return out;
}

int run_evaluate(const EvaluateArgs& a, std::ostream& out) {
  json cfg = load_config(a.config);
  apply_overrides(cfg, a.sets);
  const auto opts = EvaluateOptions::from_json(cfg);

  const auto gen = from_fasta(a.generated);
  if (gen.seqs.empty()) throw EmptySet("no generated sequences");
  std::optional<Dataset> ds;
  if (!a.reference_data.empty()) ds = read_dataset(a.reference_data);
  LabeledSet ref;
  if (!a.reference.empty()) {
    ref = from_fasta(a.reference);
  } else if (ds) {
    if (a.split != "val" && a.split != "train") throw InvalidConfig("--split must be train or val");
    ref = from_records(a.split == "val" ? ds->val : ds->train, ds->registries);
  }
  std::optional<SyntheticOracle> oracle;
  if (!a.oracle.empty()) oracle = SyntheticOracle::from_json(json::parse(read_file(a.oracle)));
  else if (ds && ds->oracle) oracle = ds->oracle;

  MetricReport report;
  report.metadata["options"] = opts.to_json();
  report.metadata["generated"] = gen.seqs.size();
  report.metadata["reference"] = ref.seqs.size();
  auto need_ref = [&](const char* metric) {
    if (ref.seqs.empty()) throw InvalidConfig(std::string(metric) + " needs --reference or --reference-data");
  };

  if (a.mmd) {
    need_ref("--mmd");
    std::vector<Embedding> S, P;
    for (const auto& s : gen.seqs) S.push_back(spectrum_embed(s, opts.spectrum_k).vector);
    for (const auto& s : ref.seqs) P.push_back(spectrum_embed(s, opts.spectrum_k).vector);
    report.set("mmd_linear", mmd_linear(S, P));
    report.set("mmd_gaussian", mmd_gaussian(S, P));
    report.metadata["mmd_bandwidth"] = median_bandwidth(S, P);
  }
  if (a.mrr) {
    need_ref("--mrr");
    auto G = by_class(gen, opts.spectrum_k);
    auto R = by_class(ref, opts.spectrum_k);
    // Classes present on one side only cannot be ranked.
    std::vector<std::string> dropped;
    for (auto it = R.begin(); it != R.end();)
      if (!G.count(it->first)) {
        dropped.push_back(it->first);
        it = R.erase(it);
      } else {
        ++it;
      }
    report.set("mrr", mrr(G, R));
    report.metadata["mrr_classes"] = G.size();
    report.metadata["mrr_reference_only_classes"] = dropped;
  }
  if (a.f1 || a.fmax) {
    LabeledPredictions preds;
    if (!a.predictions.empty()) {
      // TSV: id, label, confidence.
      std::map<std::string, std::map<std::string, double>> conf;
      std::stringstream ss(read_file(a.predictions));
      std::string line;
      std::size_t n = 0;
      while (std::getline(ss, line)) {
        ++n;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::stringstream ls(line);
        std::string id, label, value;
        if (!std::getline(ls, id, '\t') || !std::getline(ls, label, '\t') || !std::getline(ls, value, '\t'))
          throw ParseError(n, "expected id, label and confidence columns");
        try {
          conf[id][label] = std::stod(value);
        } catch (const std::exception&) {
          throw ParseError(n, "bad confidence '" + value + "'", 3);
        }
      }
      for (std::size_t i = 0; i < gen.seqs.size(); ++i) {
        preds.confidences.push_back(conf.count(gen.ids[i]) ? conf[gen.ids[i]] : std::map<std::string, double>{});
        const auto truth = split_labels(gen.labels[i]);
        preds.truth.emplace_back(truth.begin(), truth.end());
      }
    } else {
      if (!oracle) throw InvalidConfig("--f1/--fmax need --predictions, --oracle or a dataset with an oracle");
      for (std::size_t i = 0; i < gen.seqs.size(); ++i) {
        preds.confidences.push_back(oracle->confidences(gen.seqs[i]));
        const auto truth = split_labels(gen.labels[i]);
        preds.truth.emplace_back(truth.begin(), truth.end());
      }
    }
    if (a.f1) {
      const auto r = multilabel_metrics(preds, opts.threshold);
      report.set("micro_f1", r.micro_f1);
      report.set("macro_f1", r.macro_f1);
      report.set("macro_aupr", r.macro_aupr);
      if (r.macro_auc) report.set("macro_auc", *r.macro_auc);
      report.tables["per_class_f1"] = r.per_class_f1;
      report.tables["per_class_aupr"] = r.per_class_aupr;
      report.metadata["classes_with_positives"] = r.classes_with_positives;
      report.metadata["classes_for_auc"] = r.classes_for_auc;
      report.metadata["macro_average"] = "classes without positives are skipped";
    }
    if (a.fmax) report.set("f_max", f_max(preds));
  }
  if (a.aar) {
    need_ref("--aar");
    if (gen.seqs.size() != ref.seqs.size())
      throw LengthMismatch("--aar pairs sequences by position; counts differ (" + std::to_string(gen.seqs.size()) +
                           " vs " + std::to_string(ref.seqs.size()) + ")");
    double total = 0.0;
    json rows = json::object();
    for (std::size_t i = 0; i < gen.seqs.size(); ++i) {
      const double v = condseq::aar(gen.seqs[i], ref.seqs[i]);
      rows[gen.ids[i]] = v;
      total += v;
    }
    report.set("aar", total / static_cast<double>(gen.seqs.size()));
    report.tables["aar"] = rows;
  }
  if (a.ngram) {
    for (std::size_t n : opts.ngram_orders) {
      report.set("ngram_repeats_" + std::to_string(n), static_cast<double>(ngram_repeats(gen.seqs, n)));
      report.set("ngram_repeats_mean_" + std::to_string(n), ngram_repeats_mean(gen.seqs, n));
    }
  }
  if (a.novelty) {
    std::vector<Sequence> training;
    if (!a.train_fasta.empty()) {
      for (const auto& h : read_headered_fasta(a.train_fasta)) training.push_back(h.sequence);
    } else if (ds) {
      for (const auto& r : ds->train) training.push_back(r.sequence);
    } else {
      throw InvalidConfig("--novelty needs --train-fasta or --reference-data");
    }
    const auto nd = novelty_diversity(gen.seqs, training);
    double mean = 0.0;
    json rows = json::object();
    for (std::size_t i = 0; i < nd.novelty.size(); ++i) {
      mean += nd.novelty[i];
      rows[gen.ids[i]] = nd.novelty[i];
    }
    report.set("novelty_mean", mean / static_cast<double>(nd.novelty.size()));
    report.set("diversity", nd.diversity);
    report.set("cross_diversity", nd.cross_diversity);
    report.tables["novelty"] = rows;
    report.metadata["alignment"] = {{"match", 1}, {"mismatch", 0}, {"gap", -1}, {"identity", "matches / alignment length"}};
  }
  if (!a.sctm.empty()) {
    // TSV: id, scTM and optionally pLDDT, from an external folding pipeline.
    std::stringstream ss(read_file(a.sctm));
    std::string line;
    std::size_t n = 0;
    json rows = json::object();
    double tm_sum = 0, pl_sum = 0;
    std::size_t tm_n = 0, pl_n = 0;
    while (std::getline(ss, line)) {
      ++n;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || (n == 1 && line.rfind("id\t", 0) == 0)) continue;
      std::stringstream ls(line);
      std::string id, tm, pl;
      if (!std::getline(ls, id, '\t') || !std::getline(ls, tm, '\t')) throw ParseError(n, "expected id and scTM columns");
      json row;
      try {
        row["sctm"] = std::stod(tm);
        tm_sum += row["sctm"].get<double>();
        ++tm_n;
        if (std::getline(ls, pl, '\t') && !pl.empty()) {
          row["plddt"] = std::stod(pl);
          pl_sum += row["plddt"].get<double>();
          ++pl_n;
        }
      } catch (const std::exception&) {
        throw ParseError(n, "bad numeric value");
      }
      rows[id] = row;
    }
    report.tables["fold"] = rows;
    if (tm_n) report.set("sctm_mean", tm_sum / static_cast<double>(tm_n));
    if (pl_n) report.set("plddt_mean", pl_sum / static_cast<double>(pl_n));
  }
  if (!a.embeddings.empty()) {
    std::vector<LabeledSequence> rows;
    for (std::size_t i = 0; i < gen.seqs.size(); ++i) rows.push_back({gen.ids[i], "generated:" + gen.labels[i], gen.seqs[i]});
    for (std::size_t i = 0; i < ref.seqs.size(); ++i) rows.push_back({ref.ids[i], "reference:" + ref.labels[i], ref.seqs[i]});
    export_embeddings(rows, opts.spectrum_k, a.embeddings);
    report.metadata["embeddings"] = a.embeddings;
  }

  const auto text = report.to_json().dump(2) + "\n";
  if (a.out.empty() || a.out == "-") out << text;
  else {
    write_file_atomic(a.out, text);
    out << report.to_json().dump() << "\n";
  }
  return kExitOk;
}

int run_inspect(const std::string& checkpoint, std::ostream& out) {
  const auto ckpt = load_checkpoint(checkpoint);
  std::size_t params = 0;
  std::map<std::string, std::size_t> by_group;
  for (const auto& t : ckpt.params.tensors) {
    params += t.data.size();
    by_group[tensor_group(t.name)] += t.data.size();
  }
  out << json{{"config", ckpt.params.config.to_json()},
              {"registries",
               {{"go", ckpt.registries.go.size()},
                {"ipr", ckpt.registries.ipr.size()},
                {"ec", ckpt.registries.ec.size()},
                {"hash", ckpt.registries.content_hash()}}},
              {"tensors", ckpt.params.tensors.size()},
              {"parameters", params},
              {"parameters_by_group", by_group},
              {"metadata", ckpt.metadata}}
             .dump(2)
      << "\n";
  return kExitOk;
}

int exit_code_for(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::Usage: return kExitUsage;
    case ErrorCategory::Data: return kExitData;
    case ErrorCategory::Numerical: return kExitNumerical;
  }
  return kExitData;
}

void report_error(std::ostream& err, const std::string& code, const std::string& message, int status) {
  err << json{{"error", code}, {"message", message}, {"exit_code", status}}.dump() << "\n";
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Conditional protein sequence diffusion: curation, training, sampling and evaluation", "condseq"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  CurateArgs ca;
  auto* curate_cmd = app.add_subcommand("curate", "Filter labels, split and extract motifs into a dataset directory");
  curate_cmd->add_option("--config", ca.config, "JSON config (min_label_count, val_per_label, max_len)");
  curate_cmd->add_option("--fasta", ca.fasta, "Input FASTA")->required();
  curate_cmd->add_option("--annotations", ca.annotations, "Annotation TSV (id, go, ipr, ec[, motif])");
  curate_cmd->add_option("--out", ca.out, "Output dataset directory")->required();
  ca.o_min = curate_cmd->add_option("--min-label-count", ca.min_label_count);
  ca.o_val = curate_cmd->add_option("--val-per-label", ca.val_per_label);
  ca.o_len = curate_cmd->add_option("--max-len", ca.max_len);
  curate_cmd->add_option("--set", ca.sets, "Config override key=value");
  curate_cmd->add_option("--seed", "Accepted for uniformity; curation is deterministic");
  curate_cmd->add_option("--workers", "Accepted for uniformity; runs single-threaded");

  SynthArgs sa;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic motif-implies-function dataset");
  synth_cmd->add_option("--config", sa.config, "JSON synthetic spec");
  synth_cmd->add_option("--out", sa.out, "Output dataset directory")->required();
  sa.o_classes = synth_cmd->add_option("--classes", sa.n_classes);
  sa.o_n = synth_cmd->add_option("--sequences", sa.n_sequences);
  sa.o_sig = synth_cmd->add_option("--signature-length", sa.signature_length);
  sa.o_seed = synth_cmd->add_option("--seed", sa.seed);
  sa.o_struct = synth_cmd->add_flag("--structures", sa.structures, "Attach synthetic backbones");
  synth_cmd->add_option("--set", sa.sets, "Config override key=value");
  synth_cmd->add_option("--workers", "Accepted for uniformity; runs single-threaded");

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a denoiser on a dataset directory");
  train_cmd->add_option("--config", ta.config, "JSON train config");
  train_cmd->add_option("--data", ta.data, "Dataset directory")->required();
  train_cmd->add_option("--out", ta.out, "Output checkpoint directory")->required();
  train_cmd->add_option("--log", ta.log, "Per-step JSONL log (default <out>.log.jsonl)");
  train_cmd->add_option("--init", ta.init, "Start from this checkpoint");
  ta.o_steps = train_cmd->add_option("--steps", ta.steps);
  ta.o_batch = train_cmd->add_option("--batch-tokens", ta.batch_tokens);
  ta.o_T = train_cmd->add_option("--T", ta.T);
  ta.o_lr = train_cmd->add_option("--lr", ta.lr);
  ta.o_dropout = train_cmd->add_option("--dropout", ta.dropout, "Condition dropout probability");
  ta.o_seed = train_cmd->add_option("--seed", ta.seed);
  ta.o_workers = train_cmd->add_option("--workers", ta.workers);
  train_cmd->add_option("--progress", ta.progress, "Print every N-th step to stderr");
  train_cmd->add_option("--set", ta.sets, "Config override key=value (dots for nesting, e.g. model.d_model=64)");

  GenerateArgs ga;
  auto* gen_cmd = app.add_subcommand("generate", "Sample sequences from a checkpoint");
  gen_cmd->add_option("--config", ga.config, "JSON sample config");
  gen_cmd->add_option("--checkpoint", ga.checkpoint, "Checkpoint directory")->required();
  gen_cmd->add_option("--out", ga.out, "Output FASTA (default stdout)");
  gen_cmd->add_option("--n", ga.count, "Number of sequences");
  gen_cmd->add_option("--go", ga.go, "Comma-separated GO labels");
  gen_cmd->add_option("--ipr", ga.ipr, "Comma-separated IPR labels");
  gen_cmd->add_option("--ec", ga.ec, "Comma-separated EC labels");
  gen_cmd->add_option("--motif", ga.motif, "start-end:RESIDUES[,...] with 0-based half-open spans");
  ga.o_mode = gen_cmd->add_option("--motif-mode", ga.motif_mode, "fixed or dynamic");
  gen_cmd->add_option("--structure", ga.structure, "Backbone as PDB or .bin");
  gen_cmd->add_option("--oracle", ga.oracle, "Synthetic oracle JSON used as the reranking scorer");
  ga.o_rerank = gen_cmd->add_option("--rerank", ga.rerank, "Candidates per sequence");
  ga.o_len = gen_cmd->add_option("--len", ga.len);
  ga.o_min = gen_cmd->add_option("--min-len", ga.min_len);
  ga.o_max = gen_cmd->add_option("--max-len", ga.max_len);
  ga.o_steps = gen_cmd->add_option("--steps", ga.steps);
  ga.o_temp = gen_cmd->add_option("--temperature", ga.temperature);
  ga.o_seed = gen_cmd->add_option("--seed", ga.seed);
  ga.o_greedy = gen_cmd->add_flag("--greedy", ga.greedy, "Argmax token choice");
  ga.o_exact = gen_cmd->add_flag("--exact-posterior", ga.exact, "Ancestral sampling through the reverse posterior");
  gen_cmd->add_option("--set", ga.sets, "Config override key=value");
  gen_cmd->add_option("--workers", "Accepted for uniformity; runs single-threaded");

  EvaluateArgs ea;
  auto* eval_cmd = app.add_subcommand("evaluate", "Compute a metric report");
  eval_cmd->add_option("--config", ea.config, "JSON options (threshold, spectrum_k, ngram_orders)");
  eval_cmd->add_option("--generated", ea.generated, "Generated FASTA")->required();
  eval_cmd->add_option("--reference", ea.reference, "Reference FASTA");
  eval_cmd->add_option("--reference-data", ea.reference_data, "Reference dataset directory");
  eval_cmd->add_option("--split", ea.split, "Dataset split used as reference (val or train)");
  eval_cmd->add_option("--train-fasta", ea.train_fasta, "Training sequences for novelty");
  eval_cmd->add_option("--oracle", ea.oracle, "Synthetic oracle JSON for classification metrics");
  eval_cmd->add_option("--predictions", ea.predictions, "TSV of id, label, confidence");
  eval_cmd->add_option("--sctm-tsv", ea.sctm, "External fold scores: id, scTM[, pLDDT]");
  eval_cmd->add_option("--embeddings", ea.embeddings, "Write spectrum embeddings CSV here");
  eval_cmd->add_option("--out", ea.out, "Report JSON (default stdout)");
  eval_cmd->add_flag("--mmd", ea.mmd, "Linear and Gaussian MMD");
  eval_cmd->add_flag("--mrr", ea.mrr, "Mean reciprocal rank by class");
  eval_cmd->add_flag("--f1", ea.f1, "Micro/macro F1, macro AUPR and AUC");
  eval_cmd->add_flag("--fmax", ea.fmax, "F_max over the threshold grid");
  eval_cmd->add_flag("--aar", ea.aar, "Amino-acid recovery, paired by position");
  eval_cmd->add_flag("--ngram", ea.ngram, "Repeated n-gram counts");
  eval_cmd->add_flag("--novelty", ea.novelty, "Novelty and diversity by global alignment");
  eval_cmd->add_option("--set", ea.sets, "Config override key=value");
  eval_cmd->add_option("--seed", "Accepted for uniformity; evaluation is deterministic");
  eval_cmd->add_option("--workers", "Accepted for uniformity; runs single-threaded");

  std::string inspect_path;
  auto* inspect_cmd = app.add_subcommand("inspect", "Summarise a checkpoint");
  inspect_cmd->add_option("checkpoint", inspect_path, "Checkpoint directory")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    report_error(err, "UsageError", e.what(), kExitUsage);
    return kExitUsage;
  }

  try {
    if (curate_cmd->parsed()) return run_curate(ca, out);
    if (synth_cmd->parsed()) return run_synth(sa, out);
    if (train_cmd->parsed()) return run_train(ta, out, err);
    if (gen_cmd->parsed()) return run_generate(ga, out);
    if (eval_cmd->parsed()) return run_evaluate(ea, out);
    if (inspect_cmd->parsed()) return run_inspect(inspect_path, out);
  } catch (const Error& e) {
    const int status = exit_code_for(e.category());
    report_error(err, e.code(), e.what(), status);
    return status;
  } catch (const json::exception& e) {
    report_error(err, "InvalidConfig", e.what(), kExitUsage);
    return kExitUsage;
  } catch (const fs::filesystem_error& e) {
    report_error(err, "IoError", e.what(), kExitData);
    return kExitData;
  } catch (const std::exception& e) {
    report_error(err, "InternalError", e.what(), kExitData);
    return kExitData;
  }
  report_error(err, "UsageError", "no subcommand given", kExitUsage);
  return kExitUsage;
}

}  // namespace condseq
