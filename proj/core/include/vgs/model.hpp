#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "vgs/param.hpp"
#include "vgs/rng.hpp"
#include "vgs/tensor.hpp"

namespace vgs {

/// Architecture and loss hyperparameters.
///
/// gru_hidden and attention_dim of 0 mean "same as embed_dim" / "same as
/// gru_hidden". The dual-attention combiner is an element-wise product of
/// context vectors, so the utterance embedding lives in the GRU hidden space;
/// validate() therefore requires hidden() == embed_dim.
struct ModelConfig {
  std::size_t image_dim = 4096;
  std::size_t embed_dim = 512;
  std::size_t mfcc_dim = 13;
  std::size_t conv_kernel = 6;
  int conv_stride = 2;
  std::size_t conv_channels = 64;
  std::size_t gru_layers = 5;
  std::size_t gru_hidden = 0;
  std::size_t attention_dim = 0;
  double margin = 0.2;
  std::vector<std::size_t> attention_after_layers = {1, 5};
  double frame_hop_ms = 10.0;
  std::string conv_activation = "identity";  // or "relu"

  std::size_t hidden() const { return gru_hidden ? gru_hidden : embed_dim; }
  std::size_t attn_dim() const { return attention_dim ? attention_dim : hidden(); }

  /// Throws ValidationError on inconsistent settings.
  void validate() const;

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

struct EncodedImage {
  Tensor vector;  // [embed_dim], unit norm
};

struct EncodedUtterance {
  Tensor vector;                          // [embed_dim], unit norm
  std::map<std::size_t, Tensor> attention;  // layer index -> weights over encoder steps
  std::size_t encoder_len = 0;
};

/// Cosine distance 1 - <a, b> for unit vectors; range [0, 2].
double distance(const EncodedUtterance& u, const EncodedImage& i);
double cosine_distance(const Tensor& a, const Tensor& b);

/// Scores s_t = v . tanh(W^T h_t), weights = softmax(s),
/// context = sum_t weights_t h_t. Returns (weights, context).
std::pair<Tensor, Tensor> attention_head(const Tensor& h, const Parameter& w,
                                         const Parameter& v);

/// The double-hinge contrastive loss over aligned pairs (U[k], I[k]).
/// Contrast sets are the other members of the batch; the matched pair is
/// excluded, so a solved batch scores exactly zero.
double batch_loss(const std::vector<EncodedUtterance>& u,
                  const std::vector<EncodedImage>& i, double margin);

/// Image encoder, dual-attention speech encoder and the contrastive loss,
/// with hand-derived backward passes for every parameter.
class Model {
public:
  /// Validates the config and allocates zero parameters.
  explicit Model(ModelConfig config);

  /// Scaled-uniform initialization for matrices, zeros for biases.
  static Model init(ModelConfig config, Rng& rng);

  const ModelConfig& config() const { return config_; }
  ParamCollection& params() { return params_; }
  const ParamCollection& params() const { return params_; }

  EncodedImage encode_image(const Tensor& feat) const;
  EncodedUtterance encode_utterance(const Tensor& mfcc) const;

  /// Encoder steps produced for an input of T frames.
  std::size_t encoder_len(std::size_t t) const;

  /// Loss over aligned pairs; when with_grad, accumulates (+=) into the
  /// parameters' grad tensors. Worker threads own private gradient buffers
  /// merged in worker order, so results are deterministic for a fixed thread
  /// count and threads=1 is the bit-reproducible serial reference.
  double batch_loss_grad(const std::vector<Tensor>& mfccs,
                         const std::vector<Tensor>& images, bool with_grad,
                         int threads = 1);

private:
  ModelConfig config_;
  ParamCollection params_;
};

}  // namespace vgs
