#include "vgs/ops.hpp"

#include <cmath>

#include "vgs/error.hpp"

namespace vgs {

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
  if (t.rank() != rank)
    throw DimensionError(std::string(op) + ": " + what + " must have rank " +
                         std::to_string(rank) + ", got " + shape_str(t));
}

}  // namespace

void matmul(const double* x, const double* w, double* y, std::size_t n, std::size_t m,
            std::size_t p, bool accumulate) {
  if (!accumulate)
    for (std::size_t i = 0; i < n * p; ++i) y[i] = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* xi = x + i * m;
    double* yi = y + i * p;
    for (std::size_t k = 0; k < m; ++k) {
      const double xv = xi[k];
      const double* wk = w + k * p;
      for (std::size_t j = 0; j < p; ++j) yi[j] += xv * wk[j];
    }
  }
}

void matmul_at_b_acc(const double* x, const double* dy, double* dw, std::size_t n,
                     std::size_t m, std::size_t p) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* xi = x + i * m;
    const double* di = dy + i * p;
    for (std::size_t k = 0; k < m; ++k) {
      const double xv = xi[k];
      double* wk = dw + k * p;
      for (std::size_t j = 0; j < p; ++j) wk[j] += xv * di[j];
    }
  }
}

void matmul_a_bt_acc(const double* dy, const double* w, double* dx, std::size_t n,
                     std::size_t m, std::size_t p) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* di = dy + i * p;
    double* xi = dx + i * m;
    for (std::size_t k = 0; k < m; ++k) {
      const double* wk = w + k * p;
      double acc = 0.0;
      for (std::size_t j = 0; j < p; ++j) acc += di[j] * wk[j];
      xi[k] += acc;
    }
  }
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// ---------------------------------------------------------------------------
// affine

Tensor affine(const Tensor& x, const Parameter& w, const Parameter& b) {
  AffineTrace unused;
  return affine_fwd(x, w, b, unused);
}

Tensor affine_fwd(const Tensor& x, const Parameter& w, const Parameter& b, AffineTrace& trace) {
  require_rank(x, 2, "affine", "input");
  require_rank(w.value, 2, "affine", "weight");
  require_rank(b.value, 1, "affine", "bias");
  const std::size_t n = x.dim(0), m = x.dim(1);
  const std::size_t p = w.value.dim(1);
  if (w.value.dim(0) != m || b.value.dim(0) != p)
    throw DimensionError("affine: shape mismatch, x " + shape_str(x) + " vs W " +
                         shape_str(w.value) + " / b " + shape_str(b.value));
  Tensor out({n, p});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < p; ++j) out.at(i, j) = b.value[j];
  matmul(x.data(), w.value.data(), out.data(), n, m, p, /*accumulate=*/true);
  trace.x = x;
  return out;
}

void affine_bwd(const Tensor& d_out, const AffineTrace& trace, const Parameter& w,
                Tensor& w_grad, Tensor& b_grad, Tensor* dx) {
  const std::size_t n = trace.x.dim(0), m = trace.x.dim(1), p = w.value.dim(1);
  matmul_at_b_acc(trace.x.data(), d_out.data(), w_grad.data(), n, m, p);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < p; ++j) b_grad[j] += d_out.at(i, j);
  if (dx) matmul_a_bt_acc(d_out.data(), w.value.data(), dx->data(), n, m, p);
}

// ---------------------------------------------------------------------------
// conv1d

std::size_t conv1d_out_len(std::size_t t, std::size_t k, int stride) {
  if (stride < 1) throw ValidationError("conv1d: stride must be >= 1");
  if (t < k)
    throw DimensionError("conv1d: input too short, T=" + std::to_string(t) +
                         " frames < kernel k=" + std::to_string(k));
  return (t - k) / static_cast<std::size_t>(stride) + 1;
}

Tensor conv1d(const Tensor& x, const Parameter& kernel, const Parameter& b, int stride) {
  Conv1dTrace unused;
  return conv1d_fwd(x, kernel, b, stride, unused);
}

Tensor conv1d_fwd(const Tensor& x, const Parameter& kernel, const Parameter& b, int stride,
                  Conv1dTrace& trace) {
  require_rank(x, 2, "conv1d", "input");
  require_rank(kernel.value, 3, "conv1d", "kernel");
  require_rank(b.value, 1, "conv1d", "bias");
  const std::size_t t = x.dim(0), d_in = x.dim(1);
  const std::size_t k = kernel.value.dim(0), d_out = kernel.value.dim(2);
  if (kernel.value.dim(1) != d_in || b.value.dim(0) != d_out)
    throw DimensionError("conv1d: shape mismatch, x " + shape_str(x) + " vs K " +
                         shape_str(kernel.value));
  const std::size_t t_out = conv1d_out_len(t, k, stride);

  Tensor out({t_out, d_out});
  const double* kd = kernel.value.data();
  for (std::size_t ti = 0; ti < t_out; ++ti) {
    double* row = out.data() + ti * d_out;
    for (std::size_t j = 0; j < d_out; ++j) row[j] = b.value[j];
    const std::size_t base = ti * static_cast<std::size_t>(stride);
    // one k-step is a [d_in] x [d_in, d_out] product
    for (std::size_t kk = 0; kk < k; ++kk)
      matmul(x.data() + (base + kk) * d_in, kd + kk * d_in * d_out, row, 1, d_in, d_out, true);
  }
  trace.x = x;
  trace.stride = stride;
  return out;
}

void conv1d_bwd(const Tensor& d_out, const Conv1dTrace& trace, const Parameter& kernel,
                Tensor& kernel_grad, Tensor& b_grad, Tensor* dx) {
  const std::size_t d_in = trace.x.dim(1);
  const std::size_t k = kernel.value.dim(0), d_out_dim = kernel.value.dim(2);
  const std::size_t t_out = d_out.dim(0);
  for (std::size_t ti = 0; ti < t_out; ++ti) {
    const double* drow = d_out.data() + ti * d_out_dim;
    for (std::size_t j = 0; j < d_out_dim; ++j) b_grad[j] += drow[j];
    const std::size_t base = ti * static_cast<std::size_t>(trace.stride);
    for (std::size_t kk = 0; kk < k; ++kk) {
      matmul_at_b_acc(trace.x.data() + (base + kk) * d_in, drow,
                      kernel_grad.data() + kk * d_in * d_out_dim, 1, d_in, d_out_dim);
      if (dx)
        matmul_a_bt_acc(drow, kernel.value.data() + kk * d_in * d_out_dim,
                        dx->data() + (base + kk) * d_in, 1, d_in, d_out_dim);
    }
  }
}

// ---------------------------------------------------------------------------
// GRU

namespace {

void require_gru_shapes(const GruLayerParams& p, std::size_t d_in, std::size_t d_h,
                        const char* op) {
  auto check = [&](const Parameter* m, std::size_t r, std::size_t c) {
    if (m->value.rank() != 2 || m->value.dim(0) != r || m->value.dim(1) != c)
      throw DimensionError(std::string(op) + ": parameter '" + m->name + "' has shape " +
                           shape_str(m->value) + ", expected " + shape_str({r, c}));
  };
  auto check_vec = [&](const Parameter* v) {
    if (v->value.rank() != 1 || v->value.dim(0) != d_h)
      throw DimensionError(std::string(op) + ": bias '" + v->name + "' has shape " +
                           shape_str(v->value) + ", expected " + shape_str({d_h}));
  };
  check(p.wz, d_in, d_h);
  check(p.wr, d_in, d_h);
  check(p.wh, d_in, d_h);
  check(p.uz, d_h, d_h);
  check(p.ur, d_h, d_h);
  check(p.uh, d_h, d_h);
  check_vec(p.bz);
  check_vec(p.br);
  check_vec(p.bh);
}

// One timestep; gate activations are written to z/r/c rows, h_next to h row.
void gru_step(const double* x_t, const double* h_prev, const GruLayerParams& p,
              std::size_t d_in, std::size_t d_h, double* z, double* r, double* c, double* h_next,
              std::vector<double>& scratch) {
  scratch.assign(d_h, 0.0);
  for (std::size_t j = 0; j < d_h; ++j) z[j] = p.bz->value[j];
  matmul(x_t, p.wz->value.data(), z, 1, d_in, d_h, true);
  matmul(h_prev, p.uz->value.data(), z, 1, d_h, d_h, true);
  for (std::size_t j = 0; j < d_h; ++j) z[j] = sigmoid(z[j]);

  for (std::size_t j = 0; j < d_h; ++j) r[j] = p.br->value[j];
  matmul(x_t, p.wr->value.data(), r, 1, d_in, d_h, true);
  matmul(h_prev, p.ur->value.data(), r, 1, d_h, d_h, true);
  for (std::size_t j = 0; j < d_h; ++j) r[j] = sigmoid(r[j]);

  for (std::size_t j = 0; j < d_h; ++j) scratch[j] = r[j] * h_prev[j];
  for (std::size_t j = 0; j < d_h; ++j) c[j] = p.bh->value[j];
  matmul(x_t, p.wh->value.data(), c, 1, d_in, d_h, true);
  matmul(scratch.data(), p.uh->value.data(), c, 1, d_h, d_h, true);
  for (std::size_t j = 0; j < d_h; ++j) c[j] = std::tanh(c[j]);

  for (std::size_t j = 0; j < d_h; ++j) h_next[j] = (1.0 - z[j]) * h_prev[j] + z[j] * c[j];
}

}  // namespace

Tensor gru_cell(const Tensor& x_t, const Tensor& h_prev, const GruLayerParams& p) {
  require_rank(x_t, 1, "gru_cell", "input");
  require_rank(h_prev, 1, "gru_cell", "hidden state");
  const std::size_t d_in = x_t.dim(0), d_h = h_prev.dim(0);
  require_gru_shapes(p, d_in, d_h, "gru_cell");
  Tensor h({d_h});
  std::vector<double> z(d_h), r(d_h), c(d_h), scratch;
  gru_step(x_t.data(), h_prev.data(), p, d_in, d_h, z.data(), r.data(), c.data(), h.data(),
           scratch);
  return h;
}

Tensor gru_layer(const Tensor& x, const GruLayerParams& p, const Tensor* h0) {
  GruLayerTrace unused;
  if (h0) {
    // explicit h0: run the scan by hand on top of the cell
    require_rank(x, 2, "gru_layer", "input");
    const std::size_t t = x.dim(0), d_in = x.dim(1), d_h = h0->dim(0);
    require_gru_shapes(p, d_in, d_h, "gru_layer");
    Tensor out({t, d_h});
    std::vector<double> z(d_h), r(d_h), c(d_h), scratch;
    const double* prev = h0->data();
    for (std::size_t ti = 0; ti < t; ++ti) {
      gru_step(x.data() + ti * d_in, prev, p, d_in, d_h, z.data(), r.data(), c.data(),
               out.data() + ti * d_h, scratch);
      prev = out.data() + ti * d_h;
    }
    return out;
  }
  return gru_layer_fwd(x, p, unused);
}

Tensor gru_layer_fwd(const Tensor& x, const GruLayerParams& p, GruLayerTrace& trace) {
  require_rank(x, 2, "gru_layer", "input");
  const std::size_t t = x.dim(0), d_in = x.dim(1);
  const std::size_t d_h = p.uz->value.dim(0);
  require_gru_shapes(p, d_in, d_h, "gru_layer");

  trace.x = x;
  trace.h = Tensor({t, d_h});
  trace.z = Tensor({t, d_h});
  trace.r = Tensor({t, d_h});
  trace.c = Tensor({t, d_h});

  std::vector<double> h0(d_h, 0.0), scratch;
  const double* prev = h0.data();
  for (std::size_t ti = 0; ti < t; ++ti) {
    gru_step(x.data() + ti * d_in, prev, p, d_in, d_h, trace.z.data() + ti * d_h,
             trace.r.data() + ti * d_h, trace.c.data() + ti * d_h, trace.h.data() + ti * d_h,
             scratch);
    prev = trace.h.data() + ti * d_h;
  }
  return trace.h;
}

void gru_layer_bwd(const Tensor& d_h_all, const GruLayerTrace& trace, const GruLayerParams& p,
                   const GruLayerGrads& grads, Tensor* dx) {
  const std::size_t t = trace.x.dim(0), d_in = trace.x.dim(1);
  const std::size_t d_h = p.uz->value.dim(0);

  std::vector<double> dh(d_h, 0.0);          // running gradient on h_t
  std::vector<double> dh_prev(d_h);          // gradient handed to step t-1
  std::vector<double> dz_pre(d_h), dr_pre(d_h), dc_pre(d_h), drh(d_h), rh(d_h);
  std::vector<double> zero_h(d_h, 0.0);

  for (std::size_t ti = t; ti-- > 0;) {
    const double* z = trace.z.data() + ti * d_h;
    const double* r = trace.r.data() + ti * d_h;
    const double* c = trace.c.data() + ti * d_h;
    const double* h_prev = (ti == 0) ? zero_h.data() : trace.h.data() + (ti - 1) * d_h;
    const double* x_t = trace.x.data() + ti * d_in;

    for (std::size_t j = 0; j < d_h; ++j) dh[j] += d_h_all.at(ti, j);

    for (std::size_t j = 0; j < d_h; ++j) {
      const double dz = dh[j] * (c[j] - h_prev[j]);
      dz_pre[j] = dz * z[j] * (1.0 - z[j]);
      const double dc = dh[j] * z[j];
      dc_pre[j] = dc * (1.0 - c[j] * c[j]);
      dh_prev[j] = dh[j] * (1.0 - z[j]);
      rh[j] = r[j] * h_prev[j];
    }

    // candidate path: c_pre = x Wh + (r.h) Uh + bh
    matmul_at_b_acc(x_t, dc_pre.data(), grads.wh->data(), 1, d_in, d_h);
    matmul_at_b_acc(rh.data(), dc_pre.data(), grads.uh->data(), 1, d_h, d_h);
    for (std::size_t j = 0; j < d_h; ++j) (*grads.bh)[j] += dc_pre[j];
    std::fill(drh.begin(), drh.end(), 0.0);
    matmul_a_bt_acc(dc_pre.data(), p.uh->value.data(), drh.data(), 1, d_h, d_h);
    if (dx) matmul_a_bt_acc(dc_pre.data(), p.wh->value.data(), dx->data() + ti * d_in, 1, d_in, d_h);

    for (std::size_t j = 0; j < d_h; ++j) {
      dh_prev[j] += drh[j] * r[j];
      const double dr = drh[j] * h_prev[j];
      dr_pre[j] = dr * r[j] * (1.0 - r[j]);
    }

    // reset gate path
    matmul_at_b_acc(x_t, dr_pre.data(), grads.wr->data(), 1, d_in, d_h);
    matmul_at_b_acc(h_prev, dr_pre.data(), grads.ur->data(), 1, d_h, d_h);
    for (std::size_t j = 0; j < d_h; ++j) (*grads.br)[j] += dr_pre[j];
    matmul_a_bt_acc(dr_pre.data(), p.ur->value.data(), dh_prev.data(), 1, d_h, d_h);
    if (dx) matmul_a_bt_acc(dr_pre.data(), p.wr->value.data(), dx->data() + ti * d_in, 1, d_in, d_h);

    // update gate path
    matmul_at_b_acc(x_t, dz_pre.data(), grads.wz->data(), 1, d_in, d_h);
    matmul_at_b_acc(h_prev, dz_pre.data(), grads.uz->data(), 1, d_h, d_h);
    for (std::size_t j = 0; j < d_h; ++j) (*grads.bz)[j] += dz_pre[j];
    matmul_a_bt_acc(dz_pre.data(), p.uz->value.data(), dh_prev.data(), 1, d_h, d_h);
    if (dx) matmul_a_bt_acc(dz_pre.data(), p.wz->value.data(), dx->data() + ti * d_in, 1, d_in, d_h);

    dh.swap(dh_prev);
  }
}

// ---------------------------------------------------------------------------
// softmax / l2

Tensor softmax(const Tensor& s) {
  require_rank(s, 1, "softmax", "input");
  const std::size_t n = s.dim(0);
  double mx = s[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, s[i]);
  Tensor out({n});
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = std::exp(s[i] - mx);
    sum += out[i];
  }
  for (std::size_t i = 0; i < n; ++i) out[i] /= sum;
  return out;
}

Tensor l2_normalize(const Tensor& v) {
  L2NormTrace unused;
  return l2_normalize_fwd(v, unused);
}

Tensor l2_normalize_fwd(const Tensor& v, L2NormTrace& trace) {
  require_rank(v, 1, "l2_normalize", "input");
  double sq = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) sq += v[i] * v[i];
  const double norm = std::sqrt(sq);
  if (!(norm > 1e-12))
    throw NumericError("l2_normalize: degenerate vector, ||v|| = " + std::to_string(norm));
  Tensor out({v.size()});
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / norm;
  trace.y = out;
  trace.norm = norm;
  return out;
}

void l2_normalize_bwd(const Tensor& d_out, const L2NormTrace& trace, Tensor& dv) {
  const std::size_t n = trace.y.size();
  double dot = 0.0;
  for (std::size_t i = 0; i < n; ++i) dot += trace.y[i] * d_out[i];
  for (std::size_t i = 0; i < n; ++i) dv[i] += (d_out[i] - trace.y[i] * dot) / trace.norm;
}

}  // namespace vgs
