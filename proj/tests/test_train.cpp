#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "nlohmann/json.hpp"
#include "vgs/checkpoint.hpp"
#include "vgs/error.hpp"
#include "vgs/model.hpp"
#include "vgs/rng.hpp"
#include "vgs/train.hpp"

using namespace vgs;
using vgstest::TempDir;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.image_dim = 5;
  c.embed_dim = 4;
  c.mfcc_dim = 3;
  c.conv_kernel = 3;
  c.conv_stride = 2;
  c.conv_channels = 3;
  c.gru_layers = 2;
  c.attention_after_layers = {1, 2};
  return c;
}

std::vector<TrainItem> random_pairs(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TrainItem> out;
  for (std::size_t i = 0; i < n; ++i) {
    TrainItem item;
    const std::size_t t = 8 + rng.below(5);
    item.mfcc = Tensor({t, 3});
    for (std::size_t k = 0; k < item.mfcc.size(); ++k) item.mfcc[k] = rng.normal();
    item.image = Tensor({5});
    for (std::size_t k = 0; k < 5; ++k) item.image[k] = rng.normal();
    out.push_back(std::move(item));
  }
  return out;
}

bool params_equal(const Model& a, const Model& b) {
  for (std::size_t i = 0; i < a.params().size(); ++i)
    for (std::size_t k = 0; k < a.params()[i].value.size(); ++k)
      if (a.params()[i].value[k] != b.params()[i].value[k]) return false;
  return true;
}

}  // namespace

TEST_CASE("train config validation and JSON") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  SUBCASE("bounds") {
    TrainConfig bad = c;
    bad.epochs = 0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = c;
    bad.batch_size = 1;  // a batch of one has nothing to contrast against
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = c;
    bad.adam_beta1 = 1.0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = c;
    bad.adam_eps = 0.0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = c;
    bad.threads = 0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = c;
    bad.learning_rate = -1.0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
  }
  SUBCASE("round trip") {
    c.epochs = 3;
    c.batch_size = 4;
    c.learning_rate = 0.5;
    c.seed = 99;
    c.shuffle = false;
    c.grad_clip_norm = -1.0;
    TrainConfig r = TrainConfig::from_json(c.to_json());
    CHECK(r.to_json() == c.to_json());
    CHECK(r.epochs == 3);
    CHECK(r.shuffle == false);
    CHECK(r.grad_clip_norm == -1.0);
  }
  SUBCASE("defaults from empty object") {
    TrainConfig r = TrainConfig::from_json("{}");
    CHECK(r.epochs == 15);
    CHECK(r.batch_size == 16);
    CHECK(r.learning_rate == 2e-4);
    CHECK(r.grad_clip_norm == 2.0);
  }
  SUBCASE("unknown keys are rejected") {
    CHECK_THROWS_AS(TrainConfig::from_json(R"({"epochz": 3})"), FormatError);
    CHECK_THROWS_AS(TrainConfig::from_json("[]"), FormatError);
  }
}

TEST_CASE("adam scalar step matches the closed-form sequence") {
  ParamCollection pc;
  Parameter& p = pc.add("w", Tensor({1}));
  p.value[0] = 1.0;
  TrainState s = init_train_state(pc);
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.grad_clip_norm = 0.0;  // disabled

  p.grad[0] = 0.5;
  adam_step(pc, s, cfg);
  CHECK(s.step == 1);
  CHECK(s.m[0][0] == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(s.v[0][0] == doctest::Approx(0.00025).epsilon(1e-12));
  CHECK(p.value[0] == doctest::Approx(0.900000002).epsilon(1e-12));

  p.grad[0] = 0.5;
  adam_step(pc, s, cfg);
  CHECK(s.step == 2);
  CHECK(s.m[0][0] == doctest::Approx(0.095).epsilon(1e-12));
  CHECK(s.v[0][0] == doctest::Approx(0.00049975).epsilon(1e-12));
  CHECK(p.value[0] == doctest::Approx(0.8000000040000006).epsilon(1e-12));
}

TEST_CASE("gradient clipping rescales to the configured global norm") {
  auto build = [] {
    ParamCollection pc;
    pc.add("a", Tensor({1}));
    pc.add("b", Tensor({1}));
    pc[0].value[0] = 0.0;
    pc[1].value[0] = 0.0;
    return pc;
  };

  // grads (3, 4): global norm 5, clip 2 -> effective grads (1.2, 1.6)
  ParamCollection clipped = build();
  clipped[0].grad[0] = 3.0;
  clipped[1].grad[0] = 4.0;
  TrainState s1 = init_train_state(clipped);
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.grad_clip_norm = 2.0;
  adam_step(clipped, s1, cfg);

  ParamCollection manual = build();
  manual[0].grad[0] = 1.2;
  manual[1].grad[0] = 1.6;
  TrainState s2 = init_train_state(manual);
  TrainConfig no_clip = cfg;
  no_clip.grad_clip_norm = 0.0;
  adam_step(manual, s2, no_clip);

  CHECK(clipped[0].value[0] == doctest::Approx(manual[0].value[0]).epsilon(1e-14));
  CHECK(clipped[1].value[0] == doctest::Approx(manual[1].value[0]).epsilon(1e-14));
  CHECK(clipped[0].grad[0] == doctest::Approx(1.2).epsilon(1e-14));

  // below the threshold nothing changes
  ParamCollection small = build();
  small[0].grad[0] = 0.3;
  small[1].grad[0] = 0.4;
  TrainState s3 = init_train_state(small);
  adam_step(small, s3, cfg);
  CHECK(small[0].grad[0] == 0.3);
  CHECK(small[1].grad[0] == 0.4);
}

TEST_CASE("zero learning rate leaves the model untouched") {
  Rng rng(11);
  Model m = Model::init(small_config(), rng);
  Model before(small_config());
  for (std::size_t i = 0; i < m.params().size(); ++i)
    before.params()[i].value = m.params()[i].value;

  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.learning_rate = 0.0;
  cfg.seed = 5;
  cfg.shuffle = false;  // identical batch partition in both epochs
  TrainState state;
  TrainLog log = train(m, random_pairs(8, 3), nullptr, cfg, state);
  REQUIRE(log.size() == 2);
  CHECK(params_equal(m, before));
  CHECK(log[0].train_loss > 0.0);
  CHECK(log[0].train_loss == log[1].train_loss);
  CHECK(state.step == 4);  // 2 epochs x 2 batches
  CHECK(state.epochs_done == 2);
}

TEST_CASE("training is deterministic for a fixed seed") {
  auto run = [](std::uint64_t seed) {
    Rng rng(17);
    Model m = Model::init(small_config(), rng);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 4;
    cfg.learning_rate = 1e-3;
    cfg.seed = seed;
    TrainState state;
    TrainLog log = train(m, random_pairs(10, 29), nullptr, cfg, state);
    return std::make_pair(std::move(m), std::move(log));
  };
  auto [m1, log1] = run(7);
  auto [m2, log2] = run(7);
  CHECK(params_equal(m1, m2));
  REQUIRE(log1.size() == log2.size());
  for (std::size_t e = 0; e < log1.size(); ++e)
    CHECK(log1[e].train_loss == log2[e].train_loss);  // bit-identical

  auto [m3, log3] = run(8);  // a different shuffle moves the numbers
  CHECK_FALSE(params_equal(m1, m3));
}

TEST_CASE("loss drops on a small fixed dataset") {
  Rng rng(23);
  Model m = Model::init(small_config(), rng);
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.batch_size = 6;
  cfg.learning_rate = 2e-3;
  cfg.seed = 1;
  TrainState state;
  TrainLog log = train(m, random_pairs(12, 31), nullptr, cfg, state);
  REQUIRE(log.size() == 10);
  CHECK(log.back().train_loss < log.front().train_loss);
}

TEST_CASE("ragged tails below two pairs are dropped") {
  Rng rng(41);
  Model m = Model::init(small_config(), rng);
  const auto pairs5 = random_pairs(5, 13);

  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 4;
  cfg.learning_rate = 0.0;  // keep the model fixed so losses are direct
  cfg.shuffle = false;
  TrainState state;
  TrainLog log = train(m, pairs5, nullptr, cfg, state);

  // only pairs 0..3 count: the tail holds a single pair
  std::vector<Tensor> mf, im;
  for (std::size_t i = 0; i < 4; ++i) {
    mf.push_back(pairs5[i].mfcc);
    im.push_back(pairs5[i].image);
  }
  const double expect = m.batch_loss_grad(mf, im, false) / 4.0;
  CHECK(log[0].train_loss == expect);
  CHECK(state.step == 1);

  // six pairs: the tail of two is kept
  const auto pairs6 = random_pairs(6, 13);
  TrainState state6;
  TrainLog log6 = train(m, pairs6, nullptr, cfg, state6);
  std::vector<Tensor> mf1, im1, mf2, im2;
  for (std::size_t i = 0; i < 4; ++i) {
    mf1.push_back(pairs6[i].mfcc);
    im1.push_back(pairs6[i].image);
  }
  for (std::size_t i = 4; i < 6; ++i) {
    mf2.push_back(pairs6[i].mfcc);
    im2.push_back(pairs6[i].image);
  }
  const double expect6 =
      (m.batch_loss_grad(mf1, im1, false) + m.batch_loss_grad(mf2, im2, false)) / 6.0;
  CHECK(log6[0].train_loss == doctest::Approx(expect6).epsilon(1e-15));
  CHECK(state6.step == 2);

  // a dataset that only yields a ragged tail of one cannot train
  TrainState state1;
  Model m2 = Model::init(small_config(), rng);
  CHECK_THROWS_AS(train(m2, random_pairs(1, 13), nullptr, cfg, state1), ValidationError);
}

TEST_CASE("resumed training replays the uninterrupted schedule bit-exactly") {
  TempDir tmp;
  const auto pairs = random_pairs(10, 47);

  TrainConfig cfg;
  cfg.epochs = 6;
  cfg.batch_size = 4;
  cfg.learning_rate = 1e-3;
  cfg.seed = 99;

  // one uninterrupted run
  Rng rng(53);
  Model full = Model::init(small_config(), rng);
  TrainState full_state;
  TrainLog full_log = train(full, pairs, nullptr, cfg, full_state);

  // the same run split in half across a checkpoint
  Rng rng2(53);
  Model part = Model::init(small_config(), rng2);
  TrainConfig first_half = cfg;
  first_half.epochs = 3;
  TrainState part_state;
  train(part, pairs, nullptr, first_half, part_state, tmp.at("run"));

  TrainState resumed_state;
  Model resumed =
      load_checkpoint((tmp.path / "run" / "model_final.vgsc").string(), resumed_state);
  CHECK(resumed_state.epochs_done == 3);
  TrainLog tail_log = train(resumed, pairs, nullptr, cfg, resumed_state);

  REQUIRE(tail_log.size() == 3);
  CHECK(tail_log[0].epoch == 4);
  CHECK(params_equal(full, resumed));
  CHECK(full_state.step == resumed_state.step);
  for (std::size_t i = 0; i < full_state.m.size(); ++i)
    for (std::size_t k = 0; k < full_state.m[i].size(); ++k) {
      CHECK(full_state.m[i][k] == resumed_state.m[i][k]);
      CHECK(full_state.v[i][k] == resumed_state.v[i][k]);
    }
  for (std::size_t e = 0; e < 3; ++e)
    CHECK(tail_log[e].train_loss == full_log[e + 3].train_loss);

  // resuming past the configured horizon is an error; at the horizon, a no-op
  TrainState done = resumed_state;
  TrainLog empty_log = train(resumed, pairs, nullptr, cfg, done);
  CHECK(empty_log.empty());
  TrainConfig shorter = cfg;
  shorter.epochs = 4;
  CHECK_THROWS_AS(train(resumed, pairs, nullptr, shorter, done), ValidationError);
}

TEST_CASE("training writes checkpoints, a final model and a parseable log") {
  TempDir tmp;
  Rng rng(61);
  Model m = Model::init(small_config(), rng);
  auto pairs = random_pairs(8, 67);

  std::vector<Tensor> val_utt, val_img;
  std::vector<std::size_t> gold;
  for (std::size_t i = 0; i < 4; ++i) {
    val_utt.push_back(pairs[i].mfcc);
    val_img.push_back(pairs[i].image);
    gold.push_back(i);
  }
  EvalSet val{val_utt, gold, val_img};

  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.batch_size = 4;
  cfg.learning_rate = 1e-3;
  cfg.checkpoint_every = 2;
  TrainState state;
  TrainLog log = train(m, pairs, &val, cfg, state, tmp.at("out"));

  namespace fs = std::filesystem;
  CHECK(fs::exists(tmp.path / "out" / "ckpt_epoch_0002.vgsc"));
  CHECK(fs::exists(tmp.path / "out" / "ckpt_epoch_0004.vgsc"));
  CHECK(fs::exists(tmp.path / "out" / "model_final.vgsc"));

  std::ifstream in(tmp.at("out") + "/train_log.jsonl");
  REQUIRE(in.good());
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    ++lines;
    CHECK(j.at("epoch").get<std::size_t>() == lines);
    CHECK(j.contains("train_loss"));
    CHECK(j.contains("val_median_rank"));
    CHECK(j.contains("wall_time_s"));
  }
  CHECK(lines == 4);
  REQUIRE(log.size() == 4);
  for (const auto& rec : log) {
    CHECK(rec.has_val);
    CHECK(rec.val_median_rank >= 1.0);
    CHECK(rec.val_r_at_1 >= 0.0);
    CHECK(rec.val_r_at_1 <= 1.0);
  }

  // the mid-run checkpoint resumes
  TrainState s2;
  Model m2 = load_checkpoint((tmp.path / "out" / "ckpt_epoch_0002.vgsc").string(), s2);
  CHECK(s2.epochs_done == 2);

  CHECK_THROWS_AS(train(m2, {}, nullptr, cfg, s2), ValidationError);
}
