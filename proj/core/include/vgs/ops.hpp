#pragma once

#include "vgs/param.hpp"
#include "vgs/tensor.hpp"

namespace vgs {

// Forward operations are pure functions over immutable inputs. Each op that
// participates in training has a *_fwd variant filling a small trace struct
// and a *_bwd variant that consumes the trace, accumulates parameter
// gradients (+=) and produces/accumulates input gradients. Traces own copies
// of whatever the backward pass needs; at the scales this library targets the
// copies are cheap.

// ---------------------------------------------------------------------------
// affine: out[i,j] = sum_k x[i,k] * W[k,j] + b[j]

struct AffineTrace {
  Tensor x;
};

Tensor affine(const Tensor& x, const Parameter& w, const Parameter& b);
Tensor affine_fwd(const Tensor& x, const Parameter& w, const Parameter& b, AffineTrace& trace);
/// dx may be null when the input gradient is not needed.
void affine_bwd(const Tensor& d_out, const AffineTrace& trace, const Parameter& w,
                Tensor& w_grad, Tensor& b_grad, Tensor* dx);

// ---------------------------------------------------------------------------
// conv1d: valid (no padding) 1-D convolution over time.
//   out[t] = b + sum_{j<k} x[t*stride + j] * K[j],  K of shape [k, d_in, d_out]
//   T' = floor((T - k) / stride) + 1

struct Conv1dTrace {
  Tensor x;
  int stride = 1;
};

/// Output length for a valid convolution; throws if t < k or stride < 1.
std::size_t conv1d_out_len(std::size_t t, std::size_t k, int stride);

Tensor conv1d(const Tensor& x, const Parameter& kernel, const Parameter& b, int stride);
Tensor conv1d_fwd(const Tensor& x, const Parameter& kernel, const Parameter& b, int stride,
                  Conv1dTrace& trace);
void conv1d_bwd(const Tensor& d_out, const Conv1dTrace& trace, const Parameter& kernel,
                Tensor& kernel_grad, Tensor& b_grad, Tensor* dx);

// ---------------------------------------------------------------------------
// GRU. Update rule, for one timestep:
//   z = sigmoid(x Wz + h Uz + bz)
//   r = sigmoid(x Wr + h Ur + br)
//   c = tanh(x Wh + (r . h) Uh + bh)
//   h' = (1 - z) . h + z . c

/// Non-owning view over the nine parameters of one GRU layer.
struct GruLayerParams {
  const Parameter* wz;
  const Parameter* uz;
  const Parameter* bz;
  const Parameter* wr;
  const Parameter* ur;
  const Parameter* br;
  const Parameter* wh;
  const Parameter* uh;
  const Parameter* bh;
};

/// Gradient sinks matching GruLayerParams, in the same order.
struct GruLayerGrads {
  Tensor* wz;
  Tensor* uz;
  Tensor* bz;
  Tensor* wr;
  Tensor* ur;
  Tensor* br;
  Tensor* wh;
  Tensor* uh;
  Tensor* bh;
};

Tensor gru_cell(const Tensor& x_t, const Tensor& h_prev, const GruLayerParams& p);

struct GruLayerTrace {
  Tensor x;       // [T, d_in]
  Tensor h;       // [T, d_h], post-update hidden states
  Tensor z;       // [T, d_h]
  Tensor r;       // [T, d_h]
  Tensor c;       // [T, d_h], tanh candidates
};

/// Left-to-right scan returning all hidden states; h0 defaults to zeros.
Tensor gru_layer(const Tensor& x, const GruLayerParams& p, const Tensor* h0 = nullptr);
Tensor gru_layer_fwd(const Tensor& x, const GruLayerParams& p, GruLayerTrace& trace);
/// d_h carries gradients for every timestep's hidden state.
void gru_layer_bwd(const Tensor& d_h, const GruLayerTrace& trace, const GruLayerParams& p,
                   const GruLayerGrads& grads, Tensor* dx);

// ---------------------------------------------------------------------------
// softmax / l2 normalization

/// Numerically stable softmax over a rank-1 tensor.
Tensor softmax(const Tensor& s);

struct L2NormTrace {
  Tensor y;       // normalized output
  double norm = 0.0;
};

/// v / ||v||2; throws NumericError when ||v||2 <= 1e-12.
Tensor l2_normalize(const Tensor& v);
Tensor l2_normalize_fwd(const Tensor& v, L2NormTrace& trace);
void l2_normalize_bwd(const Tensor& d_out, const L2NormTrace& trace, Tensor& dv);

// ---------------------------------------------------------------------------
// low-level kernels shared by the ops (exposed for reuse in the model layer)

/// y[n,p] (+)= x[n,m] . w[m,p]
void matmul(const double* x, const double* w, double* y, std::size_t n, std::size_t m,
            std::size_t p, bool accumulate);
/// dw[m,p] += x[n,m]^T . dy[n,p]
void matmul_at_b_acc(const double* x, const double* dy, double* dw, std::size_t n,
                     std::size_t m, std::size_t p);
/// dx[n,m] += dy[n,p] . w[m,p]^T
void matmul_a_bt_acc(const double* dy, const double* w, double* dx, std::size_t n,
                     std::size_t m, std::size_t p);

double sigmoid(double x);

}  // namespace vgs
