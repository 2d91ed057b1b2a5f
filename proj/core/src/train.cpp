#include "vgs/train.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "nlohmann/json.hpp"
#include "vgs/error.hpp"
#include "vgs/retrieval.hpp"
#include "vgs/rng.hpp"

namespace fs = std::filesystem;

namespace vgs {

void TrainConfig::validate() const {
  if (epochs < 1) throw ValidationError("train config: epochs must be >= 1");
  if (batch_size < 2)
    throw ValidationError("train config: batch_size must be >= 2, in-batch contrast needs it");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw ValidationError("train config: learning_rate must be finite and >= 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw ValidationError("train config: adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ValidationError("train config: adam_eps must be > 0");
  if (threads < 1) throw ValidationError("train config: threads must be >= 1");
}

std::string TrainConfig::to_json() const {
  nlohmann::json j;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["learning_rate"] = learning_rate;
  j["adam_beta1"] = adam_beta1;
  j["adam_beta2"] = adam_beta2;
  j["adam_eps"] = adam_eps;
  j["seed"] = seed;
  j["shuffle"] = shuffle;
  j["checkpoint_every"] = checkpoint_every;
  j["grad_clip_norm"] = grad_clip_norm;
  j["threads"] = threads;
  return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  static const char* known[] = {"epochs",     "batch_size", "learning_rate",
                                "adam_beta1", "adam_beta2", "adam_eps",
                                "seed",       "shuffle",    "checkpoint_every",
                                "grad_clip_norm", "threads"};
  try {
    nlohmann::json j = nlohmann::json::parse(text);
    if (!j.is_object()) throw FormatError("train config: expected a JSON object");
    for (const auto& item : j.items()) {
      bool ok = false;
      for (const char* k : known) ok = ok || item.key() == k;
      if (!ok) throw FormatError("train config: unknown key '" + item.key() + "'");
    }
    TrainConfig c;
    auto get = [&j](const char* key, auto& into) {
      if (j.contains(key)) into = j.at(key).template get<std::decay_t<decltype(into)>>();
    };
    get("epochs", c.epochs);
    get("batch_size", c.batch_size);
    get("learning_rate", c.learning_rate);
    get("adam_beta1", c.adam_beta1);
    get("adam_beta2", c.adam_beta2);
    get("adam_eps", c.adam_eps);
    get("seed", c.seed);
    get("shuffle", c.shuffle);
    get("checkpoint_every", c.checkpoint_every);
    get("grad_clip_norm", c.grad_clip_norm);
    get("threads", c.threads);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("train config: ") + e.what());
  }
}

std::string EpochRecord::to_json() const {
  nlohmann::json j;
  j["epoch"] = epoch;
  j["train_loss"] = train_loss;
  if (has_val) {
    j["val_r_at_1"] = val_r_at_1;
    j["val_r_at_5"] = val_r_at_5;
    j["val_r_at_10"] = val_r_at_10;
    j["val_median_rank"] = val_median_rank;
  }
  j["wall_time_s"] = wall_time_s;
  return j.dump();
}

TrainState init_train_state(const ParamCollection& params) {
  TrainState state;
  state.m.reserve(params.size());
  state.v.reserve(params.size());
  for (const auto& p : params) {
    state.m.push_back(Tensor::zeros(p.value.shape()));
    state.v.push_back(Tensor::zeros(p.value.shape()));
  }
  return state;
}

void adam_step(ParamCollection& params, TrainState& state, const TrainConfig& cfg) {
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw DimensionError("adam_step: optimizer state does not match parameter table");

  if (cfg.grad_clip_norm > 0.0) {
    const double norm = params.grad_global_norm();
    if (norm > cfg.grad_clip_norm) params.scale_grads(cfg.grad_clip_norm / norm);
  }

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.adam_beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.adam_beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    if (!m.same_shape(p.value))
      throw DimensionError("adam_step: moment shape mismatch at '" + p.name + "'");
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = p.grad[k];
      m[k] = cfg.adam_beta1 * m[k] + (1.0 - cfg.adam_beta1) * g;
      v[k] = cfg.adam_beta2 * v[k] + (1.0 - cfg.adam_beta2) * g * g;
      const double m_hat = m[k] / bc1;
      const double v_hat = v[k] / bc2;
      p.value[k] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
    }
  }
}

namespace {

std::string ckpt_name(std::size_t epoch) {
  std::ostringstream os;
  os << "ckpt_epoch_" << std::setw(4) << std::setfill('0') << epoch << ".vgsc";
  return os.str();
}

EpochRecord validate_epoch(Model& model, const EvalSet& val) {
  std::vector<Tensor> utt;
  utt.reserve(val.utterances.size());
  for (const auto& m : val.utterances) utt.push_back(model.encode_utterance(m).vector);
  std::vector<Tensor> img;
  img.reserve(val.images.size());
  for (const auto& f : val.images) img.push_back(model.encode_image(f).vector);
  RankingResult r = rank_images(utt, img, val.gold);
  EpochRecord rec;
  rec.has_val = true;
  rec.val_r_at_1 = r.r_at_1;
  rec.val_r_at_5 = r.r_at_5;
  rec.val_r_at_10 = r.r_at_10;
  rec.val_median_rank = r.median_rank;
  return rec;
}

}  // namespace

TrainLog train(Model& model, const std::vector<TrainItem>& pairs, const EvalSet* val,
               const TrainConfig& cfg, TrainState& state, const std::string& out_dir) {
  cfg.validate();
  if (pairs.empty()) throw ValidationError("train: empty dataset");
  if (state.m.empty()) state = init_train_state(model.params());
  if (state.epochs_done > cfg.epochs)
    throw ValidationError("train: checkpoint already has " + std::to_string(state.epochs_done) +
                          " epochs, config asks for " + std::to_string(cfg.epochs));

  const bool resumed = state.epochs_done > 0;
  const Rng root(cfg.seed);
  TrainLog log;

  for (std::size_t epoch = state.epochs_done + 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();

    std::vector<std::size_t> order(pairs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    if (cfg.shuffle) root.derive("shuffle", epoch).shuffle(order);

    double loss_sum = 0.0;
    std::size_t pair_count = 0;
    std::size_t batch_index = 0;
    for (std::size_t at = 0; at < order.size(); at += cfg.batch_size, ++batch_index) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - at);
      if (n < 2) break;  // ragged tail of one pair carries no contrast
      std::vector<Tensor> mfccs, images;
      mfccs.reserve(n);
      images.reserve(n);
      for (std::size_t k = 0; k < n; ++k) {
        mfccs.push_back(pairs[order[at + k]].mfcc);
        images.push_back(pairs[order[at + k]].image);
      }
      model.params().zero_grads();
      double loss = 0.0;
      try {
        loss = model.batch_loss_grad(mfccs, images, true, cfg.threads);
      } catch (const NumericError& e) {
        throw NumericError("train: epoch " + std::to_string(epoch) + " batch " +
                           std::to_string(batch_index) + ": " + e.what());
      }
      adam_step(model.params(), state, cfg);
      loss_sum += loss;
      pair_count += n;
    }
    if (pair_count == 0)
      throw ValidationError("train: no usable batch, need >= 2 pairs");

    EpochRecord rec;
    if (val && !val->utterances.empty()) rec = validate_epoch(model, *val);
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(pair_count);
    state.epochs_done = epoch;
    rec.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.push_back(rec);

    if (!out_dir.empty() && cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0)
      save_checkpoint((fs::path(out_dir) / ckpt_name(epoch)).string(), model, &state);
  }

  if (!out_dir.empty()) {
    save_checkpoint((fs::path(out_dir) / "model_final.vgsc").string(), model, &state);
    const std::string log_path = (fs::path(out_dir) / "train_log.jsonl").string();
    const auto mode = std::ios::binary | (resumed ? std::ios::app : std::ios::trunc);
    std::ofstream out(log_path, mode);
    if (!out) throw FormatError("cannot write train log '" + log_path + "'");
    for (const auto& rec : log) out << rec.to_json() << "\n";
    out.close();
    if (!out) throw FormatError("failed writing train log '" + log_path + "'");
  }
  return log;
}

}  // namespace vgs
