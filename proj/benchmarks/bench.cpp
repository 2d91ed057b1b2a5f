#include <benchmark/benchmark.h>

#include <cstddef>
#include <vector>

#include "vgs/analysis.hpp"
#include "vgs/model.hpp"
#include "vgs/ops.hpp"
#include "vgs/param.hpp"
#include "vgs/retrieval.hpp"
#include "vgs/rng.hpp"
#include "vgs/tensor.hpp"

using namespace vgs;

namespace {

Tensor randn(std::vector<std::size_t> shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
  return t;
}

ModelConfig bench_config() {
  ModelConfig c;
  c.image_dim = 512;
  c.embed_dim = 64;
  c.mfcc_dim = 13;
  c.conv_kernel = 6;
  c.conv_stride = 2;
  c.conv_channels = 64;
  c.gru_layers = 2;
  c.attention_after_layers = {1, 2};
  return c;
}

void bm_conv1d_forward(benchmark::State& state) {
  Rng rng(1);
  const Tensor x = randn({200, 13}, rng);
  Parameter kernel("k", randn({6, 13, 64}, rng));
  Parameter bias("b", Tensor({64}));
  for (auto _ : state) benchmark::DoNotOptimize(conv1d(x, kernel, bias, 2));
}
BENCHMARK(bm_conv1d_forward);

void bm_gru_layer_forward(benchmark::State& state) {
  const std::size_t d = 64, t = 100;
  Rng rng(2);
  const Tensor x = randn({t, d}, rng);
  ParamCollection params;
  GruLayerParams p{
      &params.add("wz", randn({d, d}, rng)), &params.add("uz", randn({d, d}, rng)),
      &params.add("bz", Tensor({d})),        &params.add("wr", randn({d, d}, rng)),
      &params.add("ur", randn({d, d}, rng)), &params.add("br", Tensor({d})),
      &params.add("wh", randn({d, d}, rng)), &params.add("uh", randn({d, d}, rng)),
      &params.add("bh", Tensor({d})),
  };
  for (auto _ : state) benchmark::DoNotOptimize(gru_layer(x, p));
}
BENCHMARK(bm_gru_layer_forward);

void bm_encode_utterance(benchmark::State& state) {
  Rng rng(3);
  Model m = Model::init(bench_config(), rng);
  const Tensor mfcc = randn({static_cast<std::size_t>(state.range(0)), 13}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(m.encode_utterance(mfcc));
}
BENCHMARK(bm_encode_utterance)->Arg(100)->Arg(300);

void bm_encode_image(benchmark::State& state) {
  Rng rng(4);
  Model m = Model::init(bench_config(), rng);
  const Tensor feat = randn({512}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(m.encode_image(feat));
}
BENCHMARK(bm_encode_image);

void bm_batch_loss_grad(benchmark::State& state) {
  Rng rng(5);
  Model m = Model::init(bench_config(), rng);
  std::vector<Tensor> mfccs, images;
  for (int k = 0; k < 16; ++k) {
    mfccs.push_back(randn({80, 13}, rng));
    images.push_back(randn({512}, rng));
  }
  for (auto _ : state) {
    m.params().zero_grads();
    benchmark::DoNotOptimize(m.batch_loss_grad(mfccs, images, true, 1));
  }
}
BENCHMARK(bm_batch_loss_grad);

void bm_detect_peaks(benchmark::State& state) {
  Rng rng(6);
  Tensor alpha({500});
  for (std::size_t i = 0; i < alpha.size(); ++i)
    alpha[i] = static_cast<double>(rng.below(16)) / 16.0;
  PeakConfig cfg;
  cfg.min_separation = 2;
  for (auto _ : state) benchmark::DoNotOptimize(detect_peaks(alpha, cfg));
}
BENCHMARK(bm_detect_peaks);

void bm_rank_images(benchmark::State& state) {
  const std::size_t pool = static_cast<std::size_t>(state.range(0));
  Rng rng(7);
  std::vector<Tensor> utts(pool), imgs(pool);
  std::vector<std::size_t> gold(pool);
  for (std::size_t i = 0; i < pool; ++i) {
    utts[i] = l2_normalize(randn({64}, rng));
    imgs[i] = l2_normalize(randn({64}, rng));
    gold[i] = i;
  }
  for (auto _ : state) benchmark::DoNotOptimize(rank_images(utts, imgs, gold));
}
BENCHMARK(bm_rank_images)->Arg(100)->Arg(500);

void bm_crosslingual_rank(benchmark::State& state) {
  const std::size_t n = 200, pivots = 40;
  Rng rng(8);
  Tensor src({n, pivots}), tgt({n, pivots});
  for (std::size_t i = 0; i < src.size(); ++i) src[i] = rng.uniform(0.0, 2.0);
  for (std::size_t i = 0; i < tgt.size(); ++i) tgt[i] = rng.uniform(0.0, 2.0);
  std::vector<std::size_t> gold(n);
  for (std::size_t q = 0; q < n; ++q) gold[q] = q;
  for (auto _ : state) benchmark::DoNotOptimize(crosslingual_rank(src, tgt, gold));
}
BENCHMARK(bm_crosslingual_rank);

}  // namespace

BENCHMARK_MAIN();
