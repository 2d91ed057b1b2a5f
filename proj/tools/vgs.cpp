#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "vgs/analysis.hpp"
#include "vgs/checkpoint.hpp"
#include "vgs/data.hpp"
#include "vgs/error.hpp"
#include "vgs/model.hpp"
#include "vgs/retrieval.hpp"
#include "vgs/rng.hpp"
#include "vgs/synth.hpp"
#include "vgs/threading.hpp"
#include "vgs/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vgs;

namespace {

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << text;
}

std::string abspath(const std::string& p) {
  return p.empty() ? p : fs::absolute(p).lexically_normal().string();
}

std::string zpad(std::size_t v, int width) {
  std::ostringstream ss;
  ss << std::setfill('0') << std::setw(width) << v;
  return ss.str();
}

// ---------------------------------------------------------------------------
// Run configuration: JSON file sections overridden by flags. The top-level
// seed and thread count win over the train section's copies; after
// resolution the train section always carries the top-level values.
//
// Path and protocol arguments may live in the config file under the same
// keys the resolved_config.json echo uses, so any subcommand can be
// replayed with `--config <out>/resolved_config.json`. Flags always win.

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  PeakConfig peaks;
  std::uint64_t seed = 0;
  int threads = 1;
  bool has_model_section = false;
  std::optional<SynthSpec> synth;
  std::map<std::string, json> args;
};

PeakConfig peaks_from_json(const json& j, const std::string& path) {
  PeakConfig p;
  for (const auto& [key, val] : j.items()) {
    if (key == "rel_threshold")
      p.rel_threshold = val.get<double>();
    else if (key == "min_separation")
      p.min_separation = val.get<std::size_t>();
    else if (key == "layer")
      p.layer = val.get<std::size_t>();
    else
      throw ValidationError("config " + path + ": unknown peaks key \"" + key + "\"");
  }
  return p;
}

RunConfig load_run_config(const std::string& path) {
  RunConfig rc;
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw ValidationError("config " + path + ": " + e.what());
  }
  if (!j.is_object()) throw ValidationError("config " + path + ": expected a JSON object");
  static const std::set<std::string> string_args = {
      "out",          "manifest",   "val_manifest", "resume",
      "half",         "checkpoint", "reference_manifest",
      "checkpoint_a", "checkpoint_b", "manifest_a", "manifest_b",
      "pivot_manifest"};
  static const std::set<std::string> count_args = {"n_pivots", "trials", "pool"};
  // Echo-only keys, accepted so a resolved_config.json loads back unchanged.
  static const std::set<std::string> ignored = {"command", "model_a", "model_b", "pivots_used"};

  bool top_seed = false;
  bool top_threads = false;
  for (const auto& [key, val] : j.items()) {
    if (key == "model") {
      rc.model = ModelConfig::from_json(val.dump());
      rc.has_model_section = true;
    } else if (key == "train") {
      rc.train = TrainConfig::from_json(val.dump());
    } else if (key == "peaks") {
      rc.peaks = peaks_from_json(val, path);
    } else if (key == "synth") {
      rc.synth = SynthSpec::from_json(val.dump());
    } else if (key == "seed") {
      rc.seed = val.get<std::uint64_t>();
      top_seed = true;
    } else if (key == "threads") {
      rc.threads = val.get<int>();
      top_threads = true;
    } else if (string_args.count(key)) {
      if (!val.is_string())
        throw ValidationError("config " + path + ": \"" + key + "\" must be a string");
      rc.args[key] = val;
    } else if (count_args.count(key)) {
      if (!val.is_number_unsigned())
        throw ValidationError("config " + path + ": \"" + key + "\" must be a nonnegative count");
      rc.args[key] = val;
    } else if (key == "dump_distances") {
      if (!val.is_boolean())
        throw ValidationError("config " + path + ": \"dump_distances\" must be a boolean");
      rc.args[key] = val;
    } else if (!ignored.count(key)) {
      throw ValidationError("config " + path + ": unknown key \"" + key + "\"");
    }
  }
  if (!top_seed) rc.seed = rc.train.seed;
  if (!top_threads) rc.threads = rc.train.threads;
  return rc;
}

std::string arg_str(const RunConfig& rc, const CLI::Option* opt, const std::string& flag_val,
                    const std::string& key) {
  if (opt->count()) return flag_val;
  auto it = rc.args.find(key);
  return it == rc.args.end() ? std::string() : it->second.get<std::string>();
}

std::size_t arg_count(const RunConfig& rc, const CLI::Option* opt, std::size_t flag_val,
                      const std::string& key, std::size_t fallback) {
  if (opt->count()) return flag_val;
  auto it = rc.args.find(key);
  return it == rc.args.end() ? fallback : it->second.get<std::size_t>();
}

bool arg_flag(const RunConfig& rc, const CLI::Option* opt, const std::string& key) {
  if (opt->count()) return true;
  auto it = rc.args.find(key);
  return it == rc.args.end() ? false : it->second.get<bool>();
}

const std::string& require_arg(const std::string& value, const std::string& flag) {
  if (value.empty())
    throw ValidationError(flag + " is required (as a flag or a config key)");
  return value;
}

struct CommonOpts {
  std::string config_path;
  std::uint64_t seed = 0;
  int threads = 1;
  CLI::Option* config_opt = nullptr;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* threads_opt = nullptr;

  void attach(CLI::App* cmd) {
    config_opt = cmd->add_option("--config", config_path,
                                 "JSON run config (model/train/peaks/seed/threads)")
                     ->check(CLI::ExistingFile);
    seed_opt = cmd->add_option("--seed", seed,
                               "top-level seed; every random stream derives from it");
    threads_opt = cmd->add_option("--threads", threads,
                                  "worker threads; 1 is the bit-reproducible serial mode");
  }

  RunConfig resolve() const {
    RunConfig rc = config_opt->count() ? load_run_config(config_path) : RunConfig{};
    if (seed_opt->count()) rc.seed = seed;
    if (threads_opt->count()) rc.threads = threads;
    if (rc.threads < 1) throw ValidationError("threads must be >= 1");
    rc.train.seed = rc.seed;
    rc.train.threads = rc.threads;
    return rc;
  }
};

struct PeakOpts {
  double rel_threshold = 0.6;
  std::size_t min_separation = 1;
  std::size_t layer = 0;
  CLI::Option* rt = nullptr;
  CLI::Option* ms = nullptr;
  CLI::Option* ly = nullptr;

  void attach(CLI::App* cmd) {
    rt = cmd->add_option("--rel-threshold", rel_threshold,
                         "keep peaks at least this fraction of the highest")
             ->capture_default_str();
    ms = cmd->add_option("--min-separation", min_separation,
                         "minimum encoder steps between kept peaks")
             ->capture_default_str();
    ly = cmd->add_option("--layer", layer, "attention head (GRU layer index); 0 = top head")
             ->capture_default_str();
  }

  void apply(PeakConfig& p) const {
    if (rt->count()) p.rel_threshold = rel_threshold;
    if (ms->count()) p.min_separation = min_separation;
    if (ly->count()) p.layer = layer;
    p.validate();
  }
};

json peaks_json(const PeakConfig& p) {
  return json{{"rel_threshold", p.rel_threshold},
              {"min_separation", p.min_separation},
              {"layer", p.layer}};
}

void write_resolved(const fs::path& out_dir, const json& j) {
  fs::create_directories(out_dir);
  write_text(out_dir / "resolved_config.json", j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Corpus loading and encoding shared by the subcommands.

struct LoadedCorpus {
  Manifest manifest;
  std::vector<Tensor> mfccs;           // aligned with manifest.records
  std::vector<std::string> image_ids;  // pool in image-id order
  std::vector<Tensor> image_feats;
  std::vector<std::size_t> gold;  // record -> pool index
};

Tensor single_row(const Tensor& feat, const std::string& what) {
  if (feat.rank() != 2 || feat.dim(0) != 1)
    throw FormatError(what + ": expected a single feature row, got " +
                      std::to_string(feat.dim(0)) + " rows");
  Tensor v({feat.dim(1)});
  std::copy(feat.data(), feat.data() + feat.size(), v.data());
  return v;
}

LoadedCorpus load_corpus(const std::string& manifest_path) {
  LoadedCorpus c;
  c.manifest = load_manifest(manifest_path);
  c.manifest.validate();
  std::map<std::string, std::size_t> pool;
  for (const auto& [id, ref] : c.manifest.images) {
    pool.emplace(id, c.image_ids.size());
    c.image_ids.push_back(id);
    c.image_feats.push_back(single_row(load_features(c.manifest.resolve(ref)), "image " + id));
  }
  for (const auto& rec : c.manifest.records) {
    Tensor f = load_features(c.manifest.resolve(rec.feature_ref));
    if (f.rank() != 2 || f.dim(0) != rec.n_frames)
      throw FormatError(rec.caption_id + ": feature file has " + std::to_string(f.dim(0)) +
                        " rows but the manifest says n_frames=" + std::to_string(rec.n_frames));
    c.mfccs.push_back(std::move(f));
    c.gold.push_back(pool.at(rec.image_id));
  }
  return c;
}

void check_dims(const Model& model, const LoadedCorpus& c) {
  const ModelConfig& cfg = model.config();
  if (!c.mfccs.empty() && c.mfccs.front().dim(1) != cfg.mfcc_dim)
    throw ValidationError("corpus mfcc_dim " + std::to_string(c.mfccs.front().dim(1)) +
                          " does not match the model's " + std::to_string(cfg.mfcc_dim));
  if (!c.image_feats.empty() && c.image_feats.front().dim(0) != cfg.image_dim)
    throw ValidationError("corpus image_dim " + std::to_string(c.image_feats.front().dim(0)) +
                          " does not match the model's " + std::to_string(cfg.image_dim));
}

std::vector<EncodedUtterance> encode_utterances(const Model& model,
                                                const std::vector<Tensor>& mfccs, int threads) {
  std::vector<EncodedUtterance> out(mfccs.size());
  parallel_for(mfccs.size(), threads, [&](int, std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) out[i] = model.encode_utterance(mfccs[i]);
  });
  return out;
}

std::vector<Tensor> encode_images(const Model& model, const std::vector<Tensor>& feats,
                                  int threads) {
  std::vector<Tensor> out(feats.size());
  parallel_for(feats.size(), threads, [&](int, std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) out[i] = model.encode_image(feats[i]).vector;
  });
  return out;
}

std::vector<Tensor> utterance_vectors(const std::vector<EncodedUtterance>& enc) {
  std::vector<Tensor> v;
  v.reserve(enc.size());
  for (const auto& e : enc) v.push_back(e.vector);
  return v;
}

std::size_t resolve_layer(const std::map<std::size_t, Tensor>& attention, std::size_t requested) {
  if (requested == 0) return attention.rbegin()->first;
  if (!attention.count(requested)) {
    std::string avail;
    for (const auto& [k, t] : attention) {
      if (!avail.empty()) avail += ", ";
      avail += std::to_string(k);
    }
    throw ValidationError("no attention head after layer " + std::to_string(requested) +
                          "; heads sit after layers " + avail);
  }
  return requested;
}

std::vector<UtteranceAnalysis> analyze_set(const Model& model, const LoadedCorpus& c,
                                           const PeakConfig& pcfg, int threads) {
  auto enc = encode_utterances(model, c.mfccs, threads);
  const std::size_t layer = resolve_layer(enc.front().attention, pcfg.layer);
  std::vector<UtteranceAnalysis> utts;
  utts.reserve(enc.size());
  for (std::size_t i = 0; i < enc.size(); ++i) {
    const auto& rec = c.manifest.records[i];
    utts.push_back(analyze_utterance(rec.caption_id, enc[i].attention.at(layer), rec.tokens,
                                     model.config(), pcfg));
  }
  return utts;
}

void require_records(const LoadedCorpus& c) {
  if (c.manifest.records.empty())
    throw ValidationError("manifest " + c.manifest.split + " has no captions");
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  std::string spec_path;
  std::string out;
  CommonOpts common;
  CLI::Option* spec_opt = nullptr;
  CLI::Option* out_opt = nullptr;
};

void run_synth(const SynthArgs& a) {
  RunConfig rc = a.common.resolve();
  SynthSpec spec;
  if (a.spec_opt->count())
    spec = SynthSpec::from_json(read_text(a.spec_path));
  else if (rc.synth)
    spec = *rc.synth;
  else
    throw ValidationError("--spec is required (as a flag or a synth config section)");
  if (a.common.seed_opt->count()) spec.seed = rc.seed;
  spec.validate();
  const std::string out = require_arg(arg_str(rc, a.out_opt, a.out, "out"), "--out");

  json resolved;
  resolved["command"] = "synth";
  resolved["out"] = abspath(out);
  resolved["synth"] = json::parse(spec.to_json());
  write_resolved(out, resolved);

  auto manifests = generate_synthetic(spec, out);
  auto sizes = spec.split_sizes();
  std::cout << "corpus: " << spec.n_images << " images (" << sizes[0] << "/" << sizes[1] << "/"
            << sizes[2] << " train/val/test), " << spec.languages.size() << " languages\n"
            << "wrote " << manifests.size() << " manifests under " << out << "\n";
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string manifest;
  std::string val_manifest;
  std::string out;
  std::string resume;
  std::string half;
  std::size_t epochs = 0;
  std::size_t batch_size = 0;
  std::size_t checkpoint_every = 0;
  double learning_rate = 0.0;
  double grad_clip = 0.0;
  CommonOpts common;
  CLI::Option* manifest_opt = nullptr;
  CLI::Option* val_opt = nullptr;
  CLI::Option* out_opt = nullptr;
  CLI::Option* resume_opt = nullptr;
  CLI::Option* half_opt = nullptr;
  CLI::Option* ep = nullptr;
  CLI::Option* bs = nullptr;
  CLI::Option* lr = nullptr;
  CLI::Option* gc = nullptr;
  CLI::Option* ce = nullptr;
  CLI::Option* nsh = nullptr;
};

std::vector<std::size_t> half_indices(const LoadedCorpus& c, const std::string& half) {
  std::vector<std::size_t> keep;
  if (half.empty()) {
    for (std::size_t i = 0; i < c.manifest.records.size(); ++i) keep.push_back(i);
    return keep;
  }
  const std::size_t n_first = (c.image_ids.size() + 1) / 2;
  std::set<std::string> chosen;
  if (half == "first")
    chosen.insert(c.image_ids.begin(), c.image_ids.begin() + n_first);
  else
    chosen.insert(c.image_ids.begin() + n_first, c.image_ids.end());
  for (std::size_t i = 0; i < c.manifest.records.size(); ++i)
    if (chosen.count(c.manifest.records[i].image_id)) keep.push_back(i);
  return keep;
}

void run_train(const TrainArgs& a) {
  RunConfig rc = a.common.resolve();
  if (a.ep->count()) rc.train.epochs = a.epochs;
  if (a.bs->count()) rc.train.batch_size = a.batch_size;
  if (a.lr->count()) rc.train.learning_rate = a.learning_rate;
  if (a.gc->count()) rc.train.grad_clip_norm = a.grad_clip;
  if (a.ce->count()) rc.train.checkpoint_every = a.checkpoint_every;
  if (a.nsh->count()) rc.train.shuffle = false;
  rc.train.validate();

  const std::string manifest =
      require_arg(arg_str(rc, a.manifest_opt, a.manifest, "manifest"), "--manifest");
  const std::string val_manifest = arg_str(rc, a.val_opt, a.val_manifest, "val_manifest");
  const std::string out = require_arg(arg_str(rc, a.out_opt, a.out, "out"), "--out");
  const std::string resume = arg_str(rc, a.resume_opt, a.resume, "resume");
  const std::string half = arg_str(rc, a.half_opt, a.half, "half");
  if (!half.empty() && half != "first" && half != "second")
    throw ValidationError("half must be \"first\" or \"second\"");

  LoadedCorpus corpus = load_corpus(manifest);
  const std::vector<std::size_t> keep = half_indices(corpus, half);

  TrainState state;
  std::optional<Model> model;
  if (!resume.empty()) {
    model.emplace(load_checkpoint(resume, state));
    if (rc.has_model_section && rc.model.to_json() != model->config().to_json())
      throw ValidationError(
          "a resumed run takes its architecture from the checkpoint; "
          "the config file's model section disagrees");
    rc.model = model->config();
  } else {
    rc.model.validate();
    Rng init_rng = Rng(rc.seed).derive("init");
    model.emplace(Model::init(rc.model, init_rng));
  }
  check_dims(*model, corpus);

  std::vector<TrainItem> pairs;
  pairs.reserve(keep.size());
  for (std::size_t i : keep)
    pairs.push_back({corpus.mfccs[i], corpus.image_feats[corpus.gold[i]]});

  std::optional<EvalSet> val;
  if (!val_manifest.empty()) {
    LoadedCorpus vc = load_corpus(val_manifest);
    check_dims(*model, vc);
    val.emplace(EvalSet{vc.mfccs, vc.gold, vc.image_feats});
  }

  json resolved;
  resolved["command"] = "train";
  resolved["manifest"] = abspath(manifest);
  resolved["val_manifest"] = abspath(val_manifest);
  resolved["resume"] = abspath(resume);
  resolved["half"] = half;
  resolved["out"] = abspath(out);
  resolved["model"] = json::parse(rc.model.to_json());
  resolved["train"] = json::parse(rc.train.to_json());
  resolved["seed"] = rc.seed;
  resolved["threads"] = rc.threads;
  write_resolved(out, resolved);

  TrainLog log = train(*model, pairs, val ? &*val : nullptr, rc.train, state, out);

  std::cout << "trained on " << pairs.size() << " pairs for " << log.size() << " epochs\n";
  if (!log.empty()) {
    std::cout << "loss " << log.front().train_loss << " -> " << log.back().train_loss << "\n";
    if (log.back().has_val)
      std::cout << "val median rank " << log.back().val_median_rank << "\n";
  }
  std::cout << "model: " << (fs::path(out) / "model_final.vgsc").string() << "\n";
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string checkpoint;
  std::string manifest;
  std::string out;
  CommonOpts common;
  CLI::Option* ckpt_opt = nullptr;
  CLI::Option* manifest_opt = nullptr;
  CLI::Option* out_opt = nullptr;
};

void run_eval(const EvalArgs& a) {
  RunConfig rc = a.common.resolve();
  const std::string checkpoint =
      require_arg(arg_str(rc, a.ckpt_opt, a.checkpoint, "checkpoint"), "--checkpoint");
  const std::string manifest =
      require_arg(arg_str(rc, a.manifest_opt, a.manifest, "manifest"), "--manifest");
  const std::string out = require_arg(arg_str(rc, a.out_opt, a.out, "out"), "--out");

  Model model = load_checkpoint(checkpoint);
  LoadedCorpus c = load_corpus(manifest);
  require_records(c);
  check_dims(model, c);

  json resolved;
  resolved["command"] = "eval";
  resolved["checkpoint"] = abspath(checkpoint);
  resolved["manifest"] = abspath(manifest);
  resolved["out"] = abspath(out);
  resolved["model"] = json::parse(model.config().to_json());
  resolved["threads"] = rc.threads;
  write_resolved(out, resolved);

  auto uv = utterance_vectors(encode_utterances(model, c.mfccs, rc.threads));
  auto iv = encode_images(model, c.image_feats, rc.threads);
  RankingResult r = rank_images(uv, iv, c.gold);

  write_text(fs::path(out) / "metrics.json", r.to_json() + "\n");
  write_metrics_csv((fs::path(out) / "metrics.csv").string(), {{"speech->image", r}});

  std::cout << uv.size() << " queries over " << iv.size() << " images\n"
            << "R@1 " << r.r_at_1 << "  R@5 " << r.r_at_5 << "  R@10 " << r.r_at_10
            << "  median rank " << r.median_rank << " (chance " << chance_median(iv.size())
            << ")\n";
}

// ---------------------------------------------------------------------------
// analyze and export-attention

struct AnalyzeArgs {
  std::string checkpoint;
  std::string manifest;
  std::string reference;
  std::string out;
  CommonOpts common;
  PeakOpts peaks;
  CLI::Option* ckpt_opt = nullptr;
  CLI::Option* manifest_opt = nullptr;
  CLI::Option* ref_opt = nullptr;
  CLI::Option* out_opt = nullptr;
};

struct AnalyzePaths {
  std::string checkpoint;
  std::string manifest;
  std::string reference;
  std::string out;
};

AnalyzePaths analyze_paths(const AnalyzeArgs& a, const RunConfig& rc) {
  AnalyzePaths p;
  p.checkpoint = require_arg(arg_str(rc, a.ckpt_opt, a.checkpoint, "checkpoint"), "--checkpoint");
  p.manifest = require_arg(arg_str(rc, a.manifest_opt, a.manifest, "manifest"), "--manifest");
  p.reference = a.ref_opt ? arg_str(rc, a.ref_opt, a.reference, "reference_manifest")
                          : std::string();
  p.out = require_arg(arg_str(rc, a.out_opt, a.out, "out"), "--out");
  return p;
}

void run_analyze(const AnalyzeArgs& a) {
  RunConfig rc = a.common.resolve();
  a.peaks.apply(rc.peaks);
  const AnalyzePaths p = analyze_paths(a, rc);
  Model model = load_checkpoint(p.checkpoint);
  LoadedCorpus c = load_corpus(p.manifest);
  require_records(c);
  check_dims(model, c);

  std::vector<CaptionRecord> reference = c.manifest.records;
  if (!p.reference.empty() && abspath(p.reference) != abspath(p.manifest)) {
    Manifest rm = load_manifest(p.reference);
    rm.validate();
    reference = rm.records;
  }

  json resolved;
  resolved["command"] = "analyze";
  resolved["checkpoint"] = abspath(p.checkpoint);
  resolved["manifest"] = abspath(p.manifest);
  resolved["reference_manifest"] = abspath(p.reference.empty() ? p.manifest : p.reference);
  resolved["out"] = abspath(p.out);
  resolved["model"] = json::parse(model.config().to_json());
  resolved["peaks"] = peaks_json(rc.peaks);
  resolved["seed"] = rc.seed;
  resolved["threads"] = rc.threads;
  write_resolved(p.out, resolved);

  auto utts = analyze_set(model, c, rc.peaks, rc.threads);
  Rng root(rc.seed);
  AnalysisReport rep = analyze_corpus(utts, reference, model.config(), root);

  write_text(fs::path(p.out) / "report.json", rep.to_json() + "\n");
  write_analysis_csvs(p.out, rep);

  auto noun_pct = [](const PosDistribution& d) {
    auto it = d.pct.find(Upos::Noun);
    return it == d.pct.end() ? 0.0 : it->second;
  };
  std::cout << rep.n_utterances << " utterances, " << rep.total_peaks << " peaks ("
            << rep.peaks_per_utterance << " per utterance)\n"
            << "NOUN share under peaks " << noun_pct(rep.observed) << "% vs baseline "
            << noun_pct(rep.baseline) << "%\n";
}

void run_export_attention(const AnalyzeArgs& a) {
  RunConfig rc = a.common.resolve();
  a.peaks.apply(rc.peaks);
  const AnalyzePaths p = analyze_paths(a, rc);
  Model model = load_checkpoint(p.checkpoint);
  LoadedCorpus c = load_corpus(p.manifest);
  require_records(c);
  check_dims(model, c);

  json resolved;
  resolved["command"] = "export-attention";
  resolved["checkpoint"] = abspath(p.checkpoint);
  resolved["manifest"] = abspath(p.manifest);
  resolved["out"] = abspath(p.out);
  resolved["model"] = json::parse(model.config().to_json());
  resolved["peaks"] = peaks_json(rc.peaks);
  resolved["threads"] = rc.threads;
  write_resolved(p.out, resolved);

  auto utts = analyze_set(model, c, rc.peaks, rc.threads);
  const fs::path dir = fs::path(p.out) / "attention";
  fs::create_directories(dir);
  for (const auto& u : utts) write_text(dir / (u.caption_id + ".json"), utterance_to_json(u) + "\n");
  std::cout << "wrote " << utts.size() << " attention files under " << dir.string() << "\n";
}

// ---------------------------------------------------------------------------
// xlingual

struct XlingualArgs {
  std::string checkpoint_a;
  std::string checkpoint_b;
  std::string manifest_a;
  std::string manifest_b;
  std::string pivot_manifest;
  std::string out;
  std::size_t n_pivots = 0;
  std::size_t trials = 0;
  std::size_t pool = 0;
  bool dump = false;
  CommonOpts common;
  CLI::Option* ca_opt = nullptr;
  CLI::Option* cb_opt = nullptr;
  CLI::Option* ma_opt = nullptr;
  CLI::Option* mb_opt = nullptr;
  CLI::Option* pm_opt = nullptr;
  CLI::Option* out_opt = nullptr;
  CLI::Option* np_opt = nullptr;
  CLI::Option* tr_opt = nullptr;
  CLI::Option* pl_opt = nullptr;
  CLI::Option* dump_opt = nullptr;
};

void run_xlingual(const XlingualArgs& a) {
  RunConfig rc = a.common.resolve();
  const std::string ckpt_a =
      require_arg(arg_str(rc, a.ca_opt, a.checkpoint_a, "checkpoint_a"), "--checkpoint-a");
  const std::string ckpt_b =
      require_arg(arg_str(rc, a.cb_opt, a.checkpoint_b, "checkpoint_b"), "--checkpoint-b");
  const std::string man_a =
      require_arg(arg_str(rc, a.ma_opt, a.manifest_a, "manifest_a"), "--manifest-a");
  const std::string man_b =
      require_arg(arg_str(rc, a.mb_opt, a.manifest_b, "manifest_b"), "--manifest-b");
  const std::string pivot_manifest =
      require_arg(arg_str(rc, a.pm_opt, a.pivot_manifest, "pivot_manifest"), "--pivot-manifest");
  const std::string out = require_arg(arg_str(rc, a.out_opt, a.out, "out"), "--out");
  const std::size_t n_pivots = arg_count(rc, a.np_opt, a.n_pivots, "n_pivots", 500);
  const std::size_t trials = arg_count(rc, a.tr_opt, a.trials, "trials", 10);
  const std::size_t pool = arg_count(rc, a.pl_opt, a.pool, "pool", 1000);
  const bool dump = arg_flag(rc, a.dump_opt, "dump_distances");

  Model ma = load_checkpoint(ckpt_a);
  Model mb = load_checkpoint(ckpt_b);
  LoadedCorpus ca = load_corpus(man_a);
  LoadedCorpus cb = load_corpus(man_b);
  require_records(ca);
  require_records(cb);
  check_dims(ma, ca);
  check_dims(mb, cb);

  Manifest pm = load_manifest(pivot_manifest);
  pm.validate();
  std::vector<std::string> pivot_ids;
  for (const auto& [id, ref] : pm.images) pivot_ids.push_back(id);
  if (pivot_ids.empty()) throw ValidationError("pivot manifest has no images");
  if (n_pivots > 0 && n_pivots < pivot_ids.size()) {
    Rng(rc.seed).derive("pivots").shuffle(pivot_ids);
    pivot_ids.resize(n_pivots);
    std::sort(pivot_ids.begin(), pivot_ids.end());
  }
  std::vector<Tensor> pivot_feats;
  pivot_feats.reserve(pivot_ids.size());
  for (const auto& id : pivot_ids)
    pivot_feats.push_back(single_row(load_features(pm.resolve(pm.images.at(id))), "pivot " + id));

  const std::string lang_a = ca.manifest.records.front().language;
  const std::string lang_b = cb.manifest.records.front().language;

  json resolved;
  resolved["command"] = "xlingual";
  resolved["checkpoint_a"] = abspath(ckpt_a);
  resolved["checkpoint_b"] = abspath(ckpt_b);
  resolved["manifest_a"] = abspath(man_a);
  resolved["manifest_b"] = abspath(man_b);
  resolved["pivot_manifest"] = abspath(pivot_manifest);
  resolved["out"] = abspath(out);
  resolved["n_pivots"] = n_pivots;
  resolved["pivots_used"] = pivot_ids.size();
  resolved["trials"] = trials;
  resolved["pool"] = pool;
  resolved["dump_distances"] = dump;
  resolved["model_a"] = json::parse(ma.config().to_json());
  resolved["model_b"] = json::parse(mb.config().to_json());
  resolved["seed"] = rc.seed;
  resolved["threads"] = rc.threads;
  write_resolved(out, resolved);

  auto make_side = [&](const Model& m, const LoadedCorpus& c, const std::string& lang) {
    SubsampleSide s;
    s.language = lang;
    auto uv = utterance_vectors(encode_utterances(m, c.mfccs, rc.threads));
    auto pv = encode_images(m, pivot_feats, rc.threads);
    s.dist = pivot_distances(uv, pv);
    for (std::size_t i = 0; i < c.manifest.records.size(); ++i)
      s.captions_by_image[c.manifest.records[i].image_id].push_back(i);
    return s;
  };
  SubsampleSide sa = make_side(ma, ca, lang_a);
  SubsampleSide sb = make_side(mb, cb, lang_b);

  Rng root(rc.seed);
  std::vector<Tensor> mats_ab;
  std::vector<Tensor> mats_ba;
  SubsampleResult ab = subsample_eval(sa, sb, trials, pool, root, dump ? &mats_ab : nullptr);
  SubsampleResult ba = subsample_eval(sb, sa, trials, pool, root, dump ? &mats_ba : nullptr);

  json report;
  report["language_a"] = lang_a;
  report["language_b"] = lang_b;
  report["n_pivots"] = pivot_ids.size();
  report["pool_size"] = pool;
  report["n_trials"] = trials;
  report["chance_median"] = chance_median(pool);
  report["a_to_b"] = json::parse(ab.to_json());
  report["b_to_a"] = json::parse(ba.to_json());
  write_text(fs::path(out) / "report.json", report.dump(2) + "\n");

  auto as_ranking = [](const SubsampleResult& s) {
    RankingResult r;
    r.r_at_1 = s.r_at_1;
    r.r_at_5 = s.r_at_5;
    r.r_at_10 = s.r_at_10;
    r.median_rank = s.median_rank;
    return r;
  };
  write_metrics_csv((fs::path(out) / "metrics.csv").string(),
                    {{lang_a + "->" + lang_b, as_ranking(ab)},
                     {lang_b + "->" + lang_a, as_ranking(ba)}});

  if (dump) {
    const fs::path dir = fs::path(out) / "distances";
    fs::create_directories(dir);
    write_features((dir / "a_pivot_dist.vgsf").string(), sa.dist);
    write_features((dir / "b_pivot_dist.vgsf").string(), sb.dist);
    for (std::size_t t = 0; t < mats_ab.size(); ++t) {
      write_features((dir / ("a_to_b_trial_" + zpad(t, 2) + ".vgsf")).string(), mats_ab[t]);
      write_features((dir / ("b_to_a_trial_" + zpad(t, 2) + ".vgsf")).string(), mats_ba[t]);
    }
    json index;
    index["language_a"] = lang_a;
    index["language_b"] = lang_b;
    index["pivot_ids"] = pivot_ids;
    json rows_a = json::array();
    for (const auto& rec : ca.manifest.records) rows_a.push_back(rec.caption_id);
    json rows_b = json::array();
    for (const auto& rec : cb.manifest.records) rows_b.push_back(rec.caption_id);
    index["a_rows"] = std::move(rows_a);
    index["b_rows"] = std::move(rows_b);
    write_text(dir / "index.json", index.dump(2) + "\n");
  }

  std::cout << lang_a << "->" << lang_b << ": median rank " << ab.median_rank << "  R@10 "
            << ab.r_at_10 << "\n"
            << lang_b << "->" << lang_a << ": median rank " << ba.median_rank << "  R@10 "
            << ba.r_at_10 << "\n"
            << "chance median " << chance_median(pool) << " over a pool of " << pool << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"visually grounded speech: synthesis, training, retrieval and attention analysis"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "vgs 0.1.0");

  SynthArgs synth_args;
  auto* synth_cmd = app.add_subcommand("synth", "generate a deterministic synthetic corpus");
  synth_args.spec_opt = synth_cmd->add_option("--spec", synth_args.spec_path, "corpus spec JSON")
                            ->check(CLI::ExistingFile);
  synth_args.out_opt = synth_cmd->add_option("--out", synth_args.out, "output directory");
  synth_args.common.attach(synth_cmd);

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "train a model on a caption manifest");
  train_args.manifest_opt =
      train_cmd->add_option("--manifest", train_args.manifest, "training manifest (JSONL)")
          ->check(CLI::ExistingFile);
  train_args.val_opt = train_cmd
                           ->add_option("--val-manifest", train_args.val_manifest,
                                        "held-out manifest scored after every epoch")
                           ->check(CLI::ExistingFile);
  train_args.out_opt = train_cmd->add_option("--out", train_args.out, "output directory");
  train_args.resume_opt =
      train_cmd->add_option("--resume", train_args.resume, "checkpoint to continue from")
          ->check(CLI::ExistingFile);
  train_args.half_opt =
      train_cmd
          ->add_option("--half", train_args.half,
                       "train on one image half of the manifest (disjoint-half protocol)")
          ->check(CLI::IsMember({"first", "second"}));
  train_args.ep = train_cmd->add_option("--epochs", train_args.epochs, "training epochs");
  train_args.bs = train_cmd->add_option("--batch-size", train_args.batch_size, "mini-batch size");
  train_args.lr =
      train_cmd->add_option("--learning-rate", train_args.learning_rate, "Adam learning rate");
  train_args.gc = train_cmd->add_option("--grad-clip", train_args.grad_clip,
                                        "global gradient norm clip; <= 0 disables");
  train_args.ce = train_cmd->add_option("--checkpoint-every", train_args.checkpoint_every,
                                        "write ckpt_epoch_NNNN.vgsc every N epochs");
  train_args.nsh = train_cmd->add_flag("--no-shuffle", "keep corpus order within every epoch");
  train_args.common.attach(train_cmd);

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "speech-to-image retrieval metrics");
  eval_args.ckpt_opt = eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "model checkpoint")
                           ->check(CLI::ExistingFile);
  eval_args.manifest_opt =
      eval_cmd->add_option("--manifest", eval_args.manifest, "evaluation manifest")
          ->check(CLI::ExistingFile);
  eval_args.out_opt = eval_cmd->add_option("--out", eval_args.out, "output directory");
  eval_args.common.attach(eval_cmd);

  AnalyzeArgs analyze_args;
  auto* analyze_cmd = app.add_subcommand("analyze", "attention peak and POS statistics");
  analyze_args.ckpt_opt =
      analyze_cmd->add_option("--checkpoint", analyze_args.checkpoint, "model checkpoint")
          ->check(CLI::ExistingFile);
  analyze_args.manifest_opt =
      analyze_cmd->add_option("--manifest", analyze_args.manifest, "manifest to analyze")
          ->check(CLI::ExistingFile);
  analyze_args.ref_opt =
      analyze_cmd
          ->add_option("--reference-manifest", analyze_args.reference,
                       "corpus for reference word frequencies (defaults to --manifest)")
          ->check(CLI::ExistingFile);
  analyze_args.out_opt = analyze_cmd->add_option("--out", analyze_args.out, "output directory");
  analyze_args.peaks.attach(analyze_cmd);
  analyze_args.common.attach(analyze_cmd);

  AnalyzeArgs export_args;
  auto* export_cmd =
      app.add_subcommand("export-attention", "per-utterance attention weights and peaks");
  export_args.ckpt_opt =
      export_cmd->add_option("--checkpoint", export_args.checkpoint, "model checkpoint")
          ->check(CLI::ExistingFile);
  export_args.manifest_opt =
      export_cmd->add_option("--manifest", export_args.manifest, "manifest to export")
          ->check(CLI::ExistingFile);
  export_args.out_opt = export_cmd->add_option("--out", export_args.out, "output directory");
  export_args.peaks.attach(export_cmd);
  export_args.common.attach(export_cmd);

  XlingualArgs xl_args;
  auto* xl_cmd = app.add_subcommand("xlingual", "cross-lingual retrieval via image pivots");
  xl_args.ca_opt = xl_cmd->add_option("--checkpoint-a", xl_args.checkpoint_a, "model for side A")
                       ->check(CLI::ExistingFile);
  xl_args.cb_opt = xl_cmd->add_option("--checkpoint-b", xl_args.checkpoint_b, "model for side B")
                       ->check(CLI::ExistingFile);
  xl_args.ma_opt = xl_cmd->add_option("--manifest-a", xl_args.manifest_a, "side A captions")
                       ->check(CLI::ExistingFile);
  xl_args.mb_opt = xl_cmd->add_option("--manifest-b", xl_args.manifest_b, "side B captions")
                       ->check(CLI::ExistingFile);
  xl_args.pm_opt = xl_cmd
                       ->add_option("--pivot-manifest", xl_args.pivot_manifest,
                                    "manifest whose image pool provides the pivots")
                       ->check(CLI::ExistingFile);
  xl_args.out_opt = xl_cmd->add_option("--out", xl_args.out, "output directory");
  xl_args.np_opt = xl_cmd->add_option("--n-pivots", xl_args.n_pivots,
                                      "pivot images to keep (default 500); 0 = all");
  xl_args.tr_opt = xl_cmd->add_option("--trials", xl_args.trials, "subsample trials (default 10)");
  xl_args.pl_opt =
      xl_cmd->add_option("--pool", xl_args.pool, "images per trial pool (default 1000)");
  xl_args.dump_opt =
      xl_cmd->add_flag("--dump-distances", xl_args.dump,
                       "write pivot-distance and per-trial score matrices for offline checks");
  xl_args.common.attach(xl_cmd);

  synth_cmd->callback([&] { run_synth(synth_args); });
  train_cmd->callback([&] { run_train(train_args); });
  eval_cmd->callback([&] { run_eval(eval_args); });
  analyze_cmd->callback([&] { run_analyze(analyze_args); });
  export_cmd->callback([&] { run_export_attention(export_args); });
  xl_cmd->callback([&] { run_xlingual(xl_args); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const DimensionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
