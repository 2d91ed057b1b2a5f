#include "vgs/model.hpp"

#include <algorithm>
#include <cmath>

#include "nlohmann/json.hpp"
#include "vgs/error.hpp"
#include "vgs/ops.hpp"
#include "vgs/threading.hpp"

namespace vgs {

namespace {

std::string gru_name(std::size_t layer, const char* field) {
  return "gru" + std::to_string(layer) + "." + field;
}

std::string attn_name(std::size_t layer, const char* field) {
  return "attn" + std::to_string(layer) + "." + field;
}

GruLayerParams gru_view(const ParamCollection& pc, std::size_t layer) {
  return GruLayerParams{
      &pc.get(gru_name(layer, "Wz")), &pc.get(gru_name(layer, "Uz")),
      &pc.get(gru_name(layer, "bz")), &pc.get(gru_name(layer, "Wr")),
      &pc.get(gru_name(layer, "Ur")), &pc.get(gru_name(layer, "br")),
      &pc.get(gru_name(layer, "Wh")), &pc.get(gru_name(layer, "Uh")),
      &pc.get(gru_name(layer, "bh"))};
}

GruLayerGrads gru_grads(ParamCollection& pc, std::size_t layer) {
  return GruLayerGrads{
      &pc.get(gru_name(layer, "Wz")).grad, &pc.get(gru_name(layer, "Uz")).grad,
      &pc.get(gru_name(layer, "bz")).grad, &pc.get(gru_name(layer, "Wr")).grad,
      &pc.get(gru_name(layer, "Ur")).grad, &pc.get(gru_name(layer, "br")).grad,
      &pc.get(gru_name(layer, "Wh")).grad, &pc.get(gru_name(layer, "Uh")).grad,
      &pc.get(gru_name(layer, "bh")).grad};
}

struct HeadTrace {
  Tensor a;        // tanh(H W), [T, d_a]
  Tensor alpha;    // [T]
  Tensor context;  // [d_h]
};

struct UttTrace {
  Conv1dTrace conv;
  Tensor conv_pre;  // pre-activation, kept only for relu
  std::vector<GruLayerTrace> layers;
  std::vector<HeadTrace> heads;  // aligned with config.attention_after_layers
  L2NormTrace norm;
};

struct ImgTrace {
  AffineTrace aff;
  L2NormTrace norm;
};

void head_fwd(const Tensor& h, const Parameter& w, const Parameter& v, HeadTrace& tr) {
  const std::size_t t = h.dim(0), d_h = h.dim(1), d_a = w.value.dim(1);
  if (w.value.dim(0) != d_h || v.value.dim(0) != d_a)
    throw DimensionError("attention_head: params " + shape_str(w.value) + "/" +
                         shape_str(v.value) + " do not fit hidden states " + shape_str(h));
  Tensor pre({t, d_a});
  matmul(h.data(), w.value.data(), pre.data(), t, d_h, d_a, false);
  for (std::size_t i = 0; i < pre.size(); ++i) pre[i] = std::tanh(pre[i]);
  Tensor scores({t});
  for (std::size_t ti = 0; ti < t; ++ti) {
    double s = 0.0;
    for (std::size_t j = 0; j < d_a; ++j) s += pre.at(ti, j) * v.value[j];
    scores[ti] = s;
  }
  tr.a = std::move(pre);
  tr.alpha = softmax(scores);
  Tensor ctx({d_h});
  for (std::size_t ti = 0; ti < t; ++ti)
    for (std::size_t d = 0; d < d_h; ++d) ctx[d] += tr.alpha[ti] * h.at(ti, d);
  tr.context = std::move(ctx);
}

/// Accumulates into w_grad, v_grad and d_h_all.
void head_bwd(const Tensor& d_ctx, const Tensor& h, const HeadTrace& tr, const Parameter& w,
              const Parameter& v, Tensor& w_grad, Tensor& v_grad, Tensor& d_h_all) {
  const std::size_t t = h.dim(0), d_h = h.dim(1), d_a = w.value.dim(1);

  Tensor d_alpha({t});
  for (std::size_t ti = 0; ti < t; ++ti) {
    double s = 0.0;
    for (std::size_t d = 0; d < d_h; ++d) {
      s += h.at(ti, d) * d_ctx[d];
      d_h_all.at(ti, d) += tr.alpha[ti] * d_ctx[d];
    }
    d_alpha[ti] = s;
  }

  double mix = 0.0;
  for (std::size_t ti = 0; ti < t; ++ti) mix += tr.alpha[ti] * d_alpha[ti];

  Tensor d_pre({t, d_a});
  for (std::size_t ti = 0; ti < t; ++ti) {
    const double ds = tr.alpha[ti] * (d_alpha[ti] - mix);
    for (std::size_t j = 0; j < d_a; ++j) {
      const double a = tr.a.at(ti, j);
      v_grad[j] += ds * a;
      d_pre.at(ti, j) = ds * v.value[j] * (1.0 - a * a);
    }
  }
  matmul_at_b_acc(h.data(), d_pre.data(), w_grad.data(), t, d_h, d_a);
  matmul_a_bt_acc(d_pre.data(), w.value.data(), d_h_all.data(), t, d_h, d_a);
}

Tensor utt_fwd(const Tensor& mfcc, const ModelConfig& cfg, const ParamCollection& pc,
               UttTrace& tr) {
  if (mfcc.rank() != 2 || mfcc.dim(1) != cfg.mfcc_dim)
    throw DimensionError("encode_utterance: expected [T x " + std::to_string(cfg.mfcc_dim) +
                         "] input, got " + shape_str(mfcc));
  ensure_finite(mfcc, "encode_utterance input");

  Tensor h = conv1d_fwd(mfcc, pc.get("conv.K"), pc.get("conv.b"), cfg.conv_stride, tr.conv);
  if (cfg.conv_activation == "relu") {
    tr.conv_pre = h;
    for (std::size_t i = 0; i < h.size(); ++i) h[i] = std::max(0.0, h[i]);
  }

  tr.layers.resize(cfg.gru_layers);
  for (std::size_t l = 1; l <= cfg.gru_layers; ++l)
    h = gru_layer_fwd(l == 1 ? h : tr.layers[l - 2].h, gru_view(pc, l), tr.layers[l - 1]);

  tr.heads.resize(cfg.attention_after_layers.size());
  Tensor prod = Tensor::full({cfg.hidden()}, 1.0);
  for (std::size_t hi = 0; hi < tr.heads.size(); ++hi) {
    const std::size_t layer = cfg.attention_after_layers[hi];
    head_fwd(tr.layers[layer - 1].h, pc.get(attn_name(layer, "W")),
             pc.get(attn_name(layer, "v")), tr.heads[hi]);
    for (std::size_t d = 0; d < prod.size(); ++d) prod[d] *= tr.heads[hi].context[d];
  }
  return l2_normalize_fwd(prod, tr.norm);
}

/// Accumulates every parameter gradient for one utterance into `grads`.
void utt_bwd(const Tensor& d_vec, const ModelConfig& cfg, const ParamCollection& pc,
             const UttTrace& tr, ParamCollection& grads) {
  const std::size_t d_h = cfg.hidden();
  const std::size_t n_heads = tr.heads.size();

  Tensor d_prod({d_h});
  l2_normalize_bwd(d_vec, tr.norm, d_prod);

  // d_h_by_layer[l-1] collects contributions flowing into layer l's output
  std::vector<Tensor> d_h_by_layer;
  d_h_by_layer.reserve(cfg.gru_layers);
  for (std::size_t l = 1; l <= cfg.gru_layers; ++l)
    d_h_by_layer.push_back(Tensor::zeros(tr.layers[l - 1].h.shape()));

  for (std::size_t hi = 0; hi < n_heads; ++hi) {
    // leave-one-out product of the other contexts
    Tensor d_ctx({d_h});
    for (std::size_t d = 0; d < d_h; ++d) {
      double others = 1.0;
      for (std::size_t hj = 0; hj < n_heads; ++hj)
        if (hj != hi) others *= tr.heads[hj].context[d];
      d_ctx[d] = d_prod[d] * others;
    }
    const std::size_t layer = cfg.attention_after_layers[hi];
    head_bwd(d_ctx, tr.layers[layer - 1].h, tr.heads[hi], pc.get(attn_name(layer, "W")),
             pc.get(attn_name(layer, "v")), grads.get(attn_name(layer, "W")).grad,
             grads.get(attn_name(layer, "v")).grad, d_h_by_layer[layer - 1]);
  }

  Tensor d_conv = Tensor::zeros(tr.layers[0].x.shape());
  for (std::size_t l = cfg.gru_layers; l >= 1; --l) {
    Tensor* dx = l > 1 ? &d_h_by_layer[l - 2] : &d_conv;
    gru_layer_bwd(d_h_by_layer[l - 1], tr.layers[l - 1], gru_view(pc, l), gru_grads(grads, l),
                  dx);
  }

  if (cfg.conv_activation == "relu")
    for (std::size_t i = 0; i < d_conv.size(); ++i)
      if (tr.conv_pre[i] <= 0.0) d_conv[i] = 0.0;
  conv1d_bwd(d_conv, tr.conv, pc.get("conv.K"), grads.get("conv.K").grad,
             grads.get("conv.b").grad, nullptr);
}

Tensor img_fwd(const Tensor& feat, const ModelConfig& cfg, const ParamCollection& pc,
               ImgTrace& tr) {
  if (feat.rank() != 1 || feat.dim(0) != cfg.image_dim)
    throw DimensionError("encode_image: expected [" + std::to_string(cfg.image_dim) +
                         "] input, got " + shape_str(feat));
  ensure_finite(feat, "encode_image input");
  Tensor row({1, cfg.image_dim});
  std::copy(feat.data(), feat.data() + feat.size(), row.data());
  Tensor out = affine_fwd(row, pc.get("image.W"), pc.get("image.b"), tr.aff);
  Tensor flat({cfg.embed_dim});
  std::copy(out.data(), out.data() + out.size(), flat.data());
  return l2_normalize_fwd(flat, tr.norm);
}

void img_bwd(const Tensor& d_vec, const ModelConfig& cfg, const ParamCollection& pc,
             const ImgTrace& tr, ParamCollection& grads) {
  Tensor d_aff_flat({cfg.embed_dim});
  l2_normalize_bwd(d_vec, tr.norm, d_aff_flat);
  Tensor d_aff({1, cfg.embed_dim});
  std::copy(d_aff_flat.data(), d_aff_flat.data() + d_aff_flat.size(), d_aff.data());
  affine_bwd(d_aff, tr.aff, pc.get("image.W"), grads.get("image.W").grad,
             grads.get("image.b").grad, nullptr);
}

/// Hinge sweep shared by loss and gradient paths. When g is non-null it
/// receives d loss / d distance for every (utterance, image) cell.
double hinge_sweep(const std::vector<Tensor>& dist, double margin, std::vector<Tensor>* g) {
  const std::size_t b = dist.size();
  double loss = 0.0;
  for (std::size_t k = 0; k < b; ++k) {
    const double matched = dist[k][k];
    for (std::size_t j = 0; j < b; ++j) {
      if (j == k) continue;
      const double h1 = margin + matched - dist[j][k];  // contrast utterance
      if (h1 > 0.0) {
        loss += h1;
        if (g) {
          (*g)[k][k] += 1.0;
          (*g)[j][k] -= 1.0;
        }
      }
      const double h2 = margin + matched - dist[k][j];  // contrast image
      if (h2 > 0.0) {
        loss += h2;
        if (g) {
          (*g)[k][k] += 1.0;
          (*g)[k][j] -= 1.0;
        }
      }
    }
  }
  return loss;
}

}  // namespace

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* what) {
    if (v < 1) throw ValidationError(std::string("model config: ") + what + " must be >= 1");
  };
  positive(image_dim, "image_dim");
  positive(embed_dim, "embed_dim");
  positive(mfcc_dim, "mfcc_dim");
  positive(conv_kernel, "conv_kernel");
  positive(conv_channels, "conv_channels");
  positive(gru_layers, "gru_layers");
  positive(hidden(), "gru_hidden");
  positive(attn_dim(), "attention_dim");
  if (conv_stride < 1) throw ValidationError("model config: conv_stride must be >= 1");
  if (!(margin >= 0.0) || !std::isfinite(margin))
    throw ValidationError("model config: margin must be a finite value >= 0");
  if (!(frame_hop_ms > 0.0))
    throw ValidationError("model config: frame_hop_ms must be > 0");
  if (conv_activation != "identity" && conv_activation != "relu")
    throw ValidationError("model config: conv_activation must be 'identity' or 'relu', got '" +
                          conv_activation + "'");
  if (hidden() != embed_dim)
    throw ValidationError(
        "model config: gru_hidden (" + std::to_string(hidden()) + ") must equal embed_dim (" +
        std::to_string(embed_dim) +
        "); the attention combiner keeps the utterance embedding in the hidden space");
  if (attention_after_layers.empty())
    throw ValidationError("model config: attention_after_layers must not be empty");
  for (std::size_t i = 0; i < attention_after_layers.size(); ++i) {
    const std::size_t l = attention_after_layers[i];
    if (l < 1 || l > gru_layers)
      throw ValidationError("model config: attention layer " + std::to_string(l) +
                            " outside 1.." + std::to_string(gru_layers));
    if (i > 0 && attention_after_layers[i - 1] >= l)
      throw ValidationError("model config: attention_after_layers must be strictly increasing");
  }
  if (attention_after_layers.back() != gru_layers)
    throw ValidationError("model config: attention_after_layers must contain the top layer " +
                          std::to_string(gru_layers));
}

std::string ModelConfig::to_json() const {
  nlohmann::json j;
  j["image_dim"] = image_dim;
  j["embed_dim"] = embed_dim;
  j["mfcc_dim"] = mfcc_dim;
  j["conv_kernel"] = conv_kernel;
  j["conv_stride"] = conv_stride;
  j["conv_channels"] = conv_channels;
  j["gru_layers"] = gru_layers;
  j["gru_hidden"] = hidden();
  j["attention_dim"] = attn_dim();
  j["margin"] = margin;
  j["attention_after_layers"] = attention_after_layers;
  j["frame_hop_ms"] = frame_hop_ms;
  j["conv_activation"] = conv_activation;
  return j.dump(2);
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  static const char* known[] = {
      "image_dim",   "embed_dim",  "mfcc_dim",      "conv_kernel",
      "conv_stride", "conv_channels", "gru_layers", "gru_hidden",
      "attention_dim", "margin",   "attention_after_layers", "frame_hop_ms",
      "conv_activation"};
  try {
    nlohmann::json j = nlohmann::json::parse(text);
    if (!j.is_object()) throw FormatError("model config: expected a JSON object");
    for (const auto& item : j.items()) {
      if (std::find_if(std::begin(known), std::end(known), [&](const char* k) {
            return item.key() == k;
          }) == std::end(known))
        throw FormatError("model config: unknown key '" + item.key() + "'");
    }
    ModelConfig c;
    auto get = [&j](const char* key, auto& into) {
      if (j.contains(key)) into = j.at(key).template get<std::decay_t<decltype(into)>>();
    };
    get("image_dim", c.image_dim);
    get("embed_dim", c.embed_dim);
    get("mfcc_dim", c.mfcc_dim);
    get("conv_kernel", c.conv_kernel);
    get("conv_stride", c.conv_stride);
    get("conv_channels", c.conv_channels);
    get("gru_layers", c.gru_layers);
    get("gru_hidden", c.gru_hidden);
    get("attention_dim", c.attention_dim);
    get("margin", c.margin);
    get("attention_after_layers", c.attention_after_layers);
    get("frame_hop_ms", c.frame_hop_ms);
    get("conv_activation", c.conv_activation);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model config: ") + e.what());
  }
}

std::pair<Tensor, Tensor> attention_head(const Tensor& h, const Parameter& w,
                                         const Parameter& v) {
  if (h.rank() != 2) throw DimensionError("attention_head: expected [T x d_h], got " + shape_str(h));
  HeadTrace tr;
  head_fwd(h, w, v, tr);
  return {std::move(tr.alpha), std::move(tr.context)};
}

double distance(const EncodedUtterance& u, const EncodedImage& i) {
  return cosine_distance(u.vector, i.vector);
}

double cosine_distance(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    throw DimensionError("distance: shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  double dot = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) dot += a[k] * b[k];
  return 1.0 - dot;
}

double batch_loss(const std::vector<EncodedUtterance>& u, const std::vector<EncodedImage>& i,
                  double margin) {
  if (u.empty()) throw ValidationError("batch_loss: empty batch");
  if (u.size() != i.size())
    throw DimensionError("batch_loss: " + std::to_string(u.size()) + " utterances vs " +
                         std::to_string(i.size()) + " images");
  const std::size_t b = u.size();
  std::vector<Tensor> dist(b, Tensor({b}));
  for (std::size_t k = 0; k < b; ++k)
    for (std::size_t l = 0; l < b; ++l) dist[k][l] = distance(u[k], i[l]);
  return hinge_sweep(dist, margin, nullptr);
}

Model::Model(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  const std::size_t d_h = config_.hidden();
  const std::size_t d_a = config_.attn_dim();

  params_.add("image.W", Tensor::zeros({config_.image_dim, config_.embed_dim}));
  params_.add("image.b", Tensor::zeros({config_.embed_dim}));
  params_.add("conv.K",
              Tensor::zeros({config_.conv_kernel, config_.mfcc_dim, config_.conv_channels}));
  params_.add("conv.b", Tensor::zeros({config_.conv_channels}));
  for (std::size_t l = 1; l <= config_.gru_layers; ++l) {
    const std::size_t d_in = l == 1 ? config_.conv_channels : d_h;
    for (const char* f : {"Wz", "Uz", "bz", "Wr", "Ur", "br", "Wh", "Uh", "bh"}) {
      std::vector<std::size_t> shape;
      if (f[0] == 'W') shape = {d_in, d_h};
      else if (f[0] == 'U') shape = {d_h, d_h};
      else shape = {d_h};
      params_.add(gru_name(l, f), Tensor::zeros(shape));
    }
  }
  for (std::size_t l : config_.attention_after_layers) {
    params_.add(attn_name(l, "W"), Tensor::zeros({d_h, d_a}));
    params_.add(attn_name(l, "v"), Tensor::zeros({d_a}));
  }
}

Model Model::init(ModelConfig config, Rng& rng) {
  Model m(std::move(config));
  for (auto& p : m.params_) {
    double a = 0.0;
    if (p.value.rank() == 2) {
      a = std::sqrt(6.0 / static_cast<double>(p.value.dim(0) + p.value.dim(1)));
    } else if (p.value.rank() == 3) {
      a = std::sqrt(6.0 /
                    static_cast<double>(p.value.dim(0) * p.value.dim(1) + p.value.dim(2)));
    } else if (p.name.size() > 2 && p.name.compare(p.name.size() - 2, 2, ".v") == 0) {
      a = std::sqrt(6.0 / static_cast<double>(p.value.dim(0) + 1));
    } else {
      continue;  // biases stay zero
    }
    for (std::size_t k = 0; k < p.value.size(); ++k) p.value[k] = rng.uniform(-a, a);
  }
  return m;
}

EncodedImage Model::encode_image(const Tensor& feat) const {
  ImgTrace tr;
  return EncodedImage{img_fwd(feat, config_, params_, tr)};
}

EncodedUtterance Model::encode_utterance(const Tensor& mfcc) const {
  UttTrace tr;
  EncodedUtterance out;
  out.vector = utt_fwd(mfcc, config_, params_, tr);
  out.encoder_len = tr.layers[0].h.dim(0);
  for (std::size_t hi = 0; hi < tr.heads.size(); ++hi)
    out.attention.emplace(config_.attention_after_layers[hi], std::move(tr.heads[hi].alpha));
  return out;
}

std::size_t Model::encoder_len(std::size_t t) const {
  return conv1d_out_len(t, config_.conv_kernel, config_.conv_stride);
}

double Model::batch_loss_grad(const std::vector<Tensor>& mfccs,
                              const std::vector<Tensor>& images, bool with_grad, int threads) {
  if (mfccs.empty()) throw ValidationError("batch_loss_grad: empty batch");
  if (mfccs.size() != images.size())
    throw DimensionError("batch_loss_grad: " + std::to_string(mfccs.size()) +
                         " utterances vs " + std::to_string(images.size()) + " images");
  const std::size_t b = mfccs.size();
  const std::size_t n_items = 2 * b;

  std::vector<UttTrace> utts(b);
  std::vector<ImgTrace> imgs(b);
  std::vector<Tensor> u_vec(b), i_vec(b);
  parallel_for(n_items, threads, [&](int, std::size_t begin, std::size_t end) {
    for (std::size_t idx = begin; idx < end; ++idx) {
      if (idx < b)
        u_vec[idx] = utt_fwd(mfccs[idx], config_, params_, utts[idx]);
      else
        i_vec[idx - b] = img_fwd(images[idx - b], config_, params_, imgs[idx - b]);
    }
  });

  std::vector<Tensor> dist(b, Tensor({b}));
  for (std::size_t k = 0; k < b; ++k)
    for (std::size_t l = 0; l < b; ++l) dist[k][l] = cosine_distance(u_vec[k], i_vec[l]);

  std::vector<Tensor> g(b, Tensor({b}));
  const double loss = hinge_sweep(dist, config_.margin, &g);
  if (!std::isfinite(loss)) throw NumericError("batch_loss_grad: non-finite loss");
  if (!with_grad) return loss;

  // d distance / d u = -i, d distance / d i = -u
  std::vector<Tensor> d_u(b), d_i(b);
  for (std::size_t k = 0; k < b; ++k) {
    d_u[k] = Tensor::zeros({config_.embed_dim});
    d_i[k] = Tensor::zeros({config_.embed_dim});
  }
  for (std::size_t k = 0; k < b; ++k)
    for (std::size_t l = 0; l < b; ++l) {
      const double gkl = g[k][l];
      if (gkl == 0.0) continue;
      for (std::size_t c = 0; c < config_.embed_dim; ++c) {
        d_u[k][c] -= gkl * i_vec[l][c];
        d_i[l][c] -= gkl * u_vec[k][c];
      }
    }

  const std::size_t n_workers =
      (threads <= 1 || n_items <= 1)
          ? 1
          : std::min<std::size_t>(static_cast<std::size_t>(threads), n_items);
  std::vector<ParamCollection> buffers;
  buffers.reserve(n_workers);
  for (std::size_t w = 0; w < n_workers; ++w) buffers.push_back(params_.clone_shapes());

  parallel_for(n_items, threads, [&](int worker, std::size_t begin, std::size_t end) {
    ParamCollection& buf = buffers[static_cast<std::size_t>(worker)];
    for (std::size_t idx = begin; idx < end; ++idx) {
      if (idx < b)
        utt_bwd(d_u[idx], config_, params_, utts[idx], buf);
      else
        img_bwd(d_i[idx - b], config_, params_, imgs[idx - b], buf);
    }
  });
  for (auto& buf : buffers) params_.accumulate_grads(buf);
  return loss;
}

}  // namespace vgs
