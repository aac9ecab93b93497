#include "gfb/nn.hpp"

#include <Eigen/Core>

#include <cmath>
#include <limits>

namespace gfb::nn {

namespace {
using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Map = Eigen::Map<RowMat>;
using CMap = Eigen::Map<const RowMat>;
constexpr double kInvSqrt2 = 0.7071067811865475;
constexpr double kInvSqrt2Pi = 0.3989422804014327;
}  // namespace

void matmul(const float* a, const float* b, float* c, int m, int k, int n, bool trans_a,
            bool trans_b, bool accumulate) {
  Map cc(c, m, n);
  if (!trans_a && !trans_b) {
    CMap aa(a, m, k), bb(b, k, n);
    if (accumulate)
      cc.noalias() += aa * bb;
    else
      cc.noalias() = aa * bb;
  } else if (trans_a && !trans_b) {
    CMap aa(a, k, m), bb(b, k, n);
    if (accumulate)
      cc.noalias() += aa.transpose() * bb;
    else
      cc.noalias() = aa.transpose() * bb;
  } else if (!trans_a && trans_b) {
    CMap aa(a, m, k), bb(b, n, k);
    if (accumulate)
      cc.noalias() += aa * bb.transpose();
    else
      cc.noalias() = aa * bb.transpose();
  } else {
    CMap aa(a, k, m), bb(b, n, k);
    if (accumulate)
      cc.noalias() += aa.transpose() * bb.transpose();
    else
      cc.noalias() = aa.transpose() * bb.transpose();
  }
}

void xavier_uniform(Tensor& w, int fan_in, int fan_out, Rng& rng) {
  double limit = std::sqrt(6.0 / (fan_in + fan_out));
  for (auto& x : w.v) x = static_cast<float>((rng.uniform() * 2.0 - 1.0) * limit);
}

void he_normal(Tensor& w, int fan_in, Rng& rng) {
  double stddev = std::sqrt(2.0 / fan_in);
  for (auto& x : w.v) x = static_cast<float>(rng.normal(0.0, stddev));
}

void trunc_normal(Tensor& w, double stddev, Rng& rng) {
  for (auto& x : w.v) {
    double y;
    do {
      y = rng.normal(0.0, stddev);
    } while (std::abs(y) > 2.0 * stddev);
    x = static_cast<float>(y);
  }
}

Tensor softmax_rows(const Tensor& x) {
  int r = x.dim(0), c = x.ndim() == 2 ? x.dim(1) : static_cast<int>(x.size() / x.dim(0));
  Tensor y = x;
  for (int i = 0; i < r; ++i) {
    float* row = y.data() + static_cast<int64_t>(i) * c;
    float mx = row[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    float sum = 0.0f;
    for (int j = 0; j < c; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (int j = 0; j < c; ++j) row[j] /= sum;
  }
  return y;
}

// ---------------------------------------------------------------- Dense

Dense::Dense(int in, int out, Rng& rng, const std::string& name)
    : w(name + ".w", {in, out}), b(name + ".b", {out}), in_dim(in), out_dim(out) {
  xavier_uniform(w.value, in, out, rng);
}

Tensor Dense::forward(const Tensor& x) {
  int rows = static_cast<int>(x.size() / in_dim);
  x_ = x;
  Tensor y({rows, out_dim});
  matmul(x.data(), w.value.data(), y.data(), rows, in_dim, out_dim);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < out_dim; ++j) y[static_cast<int64_t>(i) * out_dim + j] += b.value[j];
  return y;
}

Tensor Dense::backward(const Tensor& gout) {
  int rows = static_cast<int>(gout.size() / out_dim);
  matmul(x_.data(), gout.data(), w.grad.data(), in_dim, rows, out_dim, true, false, true);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < out_dim; ++j) b.grad[j] += gout[static_cast<int64_t>(i) * out_dim + j];
  Tensor gx(x_.shape);
  matmul(gout.data(), w.value.data(), gx.data(), rows, out_dim, in_dim, false, true);
  return gx;
}

void Dense::collect_params(std::vector<Param*>& out) {
  out.push_back(&w);
  out.push_back(&b);
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(int cin_, int cout_, int k_, int stride_, int pad_, Rng& rng,
               const std::string& name)
    : w(name + ".w", {k_ * k_ * cin_, cout_}),
      b(name + ".b", {cout_}),
      cin(cin_),
      cout(cout_),
      k(k_),
      stride(stride_),
      pad(pad_) {
  he_normal(w.value, k * k * cin, rng);
}

Tensor Conv2d::forward(const Tensor& x) {
  h_ = x.dim(0);
  wd_ = x.dim(1);
  ho_ = (h_ + 2 * pad - k) / stride + 1;
  wo_ = (wd_ + 2 * pad - k) / stride + 1;
  const int kk = k * k * cin;
  col_ = Tensor({ho_ * wo_, kk});
  for (int oy = 0; oy < ho_; ++oy) {
    for (int ox = 0; ox < wo_; ++ox) {
      float* dst = col_.data() + (static_cast<int64_t>(oy) * wo_ + ox) * kk;
      for (int ky = 0; ky < k; ++ky) {
        int iy = oy * stride - pad + ky;
        for (int kx = 0; kx < k; ++kx) {
          int ix = ox * stride - pad + kx;
          float* cell = dst + (ky * k + kx) * cin;
          if (iy >= 0 && iy < h_ && ix >= 0 && ix < wd_) {
            const float* src = x.data() + (static_cast<int64_t>(iy) * wd_ + ix) * cin;
            std::copy(src, src + cin, cell);
          }
        }
      }
    }
  }
  Tensor y({ho_, wo_, cout});
  matmul(col_.data(), w.value.data(), y.data(), ho_ * wo_, kk, cout);
  for (int64_t i = 0; i < static_cast<int64_t>(ho_) * wo_; ++i)
    for (int j = 0; j < cout; ++j) y[i * cout + j] += b.value[j];
  return y;
}

Tensor Conv2d::backward(const Tensor& gout) {
  const int kk = k * k * cin;
  const int64_t npix = static_cast<int64_t>(ho_) * wo_;
  matmul(col_.data(), gout.data(), w.grad.data(), kk, static_cast<int>(npix), cout, true, false,
         true);
  for (int64_t i = 0; i < npix; ++i)
    for (int j = 0; j < cout; ++j) b.grad[j] += gout[i * cout + j];

  Tensor gcol({static_cast<int>(npix), kk});
  matmul(gout.data(), w.value.data(), gcol.data(), static_cast<int>(npix), cout, kk, false, true);

  Tensor gx({h_, wd_, cin});
  for (int oy = 0; oy < ho_; ++oy) {
    for (int ox = 0; ox < wo_; ++ox) {
      const float* src = gcol.data() + (static_cast<int64_t>(oy) * wo_ + ox) * kk;
      for (int ky = 0; ky < k; ++ky) {
        int iy = oy * stride - pad + ky;
        if (iy < 0 || iy >= h_) continue;
        for (int kx = 0; kx < k; ++kx) {
          int ix = ox * stride - pad + kx;
          if (ix < 0 || ix >= wd_) continue;
          float* dst = gx.data() + (static_cast<int64_t>(iy) * wd_ + ix) * cin;
          const float* cell = src + (ky * k + kx) * cin;
          for (int c = 0; c < cin; ++c) dst[c] += cell[c];
        }
      }
    }
  }
  return gx;
}

void Conv2d::collect_params(std::vector<Param*>& out) {
  out.push_back(&w);
  out.push_back(&b);
}

// ------------------------------------------------------- ConvTranspose2x

ConvTranspose2x::ConvTranspose2x(int cin_, int cout_, Rng& rng, const std::string& name)
    : w(name + ".w", {cin_, 4 * cout_}), b(name + ".b", {cout_}), cin(cin_), cout(cout_) {
  he_normal(w.value, cin, rng);
}

Tensor ConvTranspose2x::forward(const Tensor& x) {
  h_ = x.dim(0);
  wd_ = x.dim(1);
  x_ = x;
  const int64_t npix = static_cast<int64_t>(h_) * wd_;
  Tensor z({static_cast<int>(npix), 4 * cout});
  matmul(x.data(), w.value.data(), z.data(), static_cast<int>(npix), cin, 4 * cout);
  Tensor y({2 * h_, 2 * wd_, cout});
  for (int i = 0; i < h_; ++i) {
    for (int j = 0; j < wd_; ++j) {
      const float* row = z.data() + (static_cast<int64_t>(i) * wd_ + j) * 4 * cout;
      for (int dy = 0; dy < 2; ++dy) {
        for (int dx = 0; dx < 2; ++dx) {
          float* dst = y.data() + ((static_cast<int64_t>(2 * i + dy)) * (2 * wd_) + 2 * j + dx) * cout;
          const float* src = row + (dy * 2 + dx) * cout;
          for (int c = 0; c < cout; ++c) dst[c] = src[c] + b.value[c];
        }
      }
    }
  }
  return y;
}

Tensor ConvTranspose2x::backward(const Tensor& gout) {
  const int64_t npix = static_cast<int64_t>(h_) * wd_;
  Tensor gz({static_cast<int>(npix), 4 * cout});
  for (int i = 0; i < h_; ++i) {
    for (int j = 0; j < wd_; ++j) {
      float* row = gz.data() + (static_cast<int64_t>(i) * wd_ + j) * 4 * cout;
      for (int dy = 0; dy < 2; ++dy) {
        for (int dx = 0; dx < 2; ++dx) {
          const float* src =
              gout.data() + ((static_cast<int64_t>(2 * i + dy)) * (2 * wd_) + 2 * j + dx) * cout;
          float* dst = row + (dy * 2 + dx) * cout;
          for (int c = 0; c < cout; ++c) {
            dst[c] = src[c];
            b.grad[c] += src[c];
          }
        }
      }
    }
  }
  matmul(x_.data(), gz.data(), w.grad.data(), cin, static_cast<int>(npix), 4 * cout, true, false,
         true);
  Tensor gx({h_, wd_, cin});
  matmul(gz.data(), w.value.data(), gx.data(), static_cast<int>(npix), 4 * cout, cin, false, true);
  return gx;
}

void ConvTranspose2x::collect_params(std::vector<Param*>& out) {
  out.push_back(&w);
  out.push_back(&b);
}

// ---------------------------------------------------------------- ReLU / Gelu

Tensor ReLU::forward(const Tensor& x) {
  x_ = x;
  Tensor y = x;
  for (auto& e : y.v) e = e > 0.0f ? e : 0.0f;
  return y;
}

Tensor ReLU::backward(const Tensor& gout) {
  Tensor gx = gout;
  for (int64_t i = 0; i < gx.size(); ++i)
    if (x_[i] <= 0.0f) gx[i] = 0.0f;
  return gx;
}

Tensor Gelu::forward(const Tensor& x) {
  x_ = x;
  Tensor y = x;
  for (auto& e : y.v) {
    double xd = e;
    e = static_cast<float>(xd * 0.5 * (1.0 + std::erf(xd * kInvSqrt2)));
  }
  return y;
}

Tensor Gelu::backward(const Tensor& gout) {
  Tensor gx = gout;
  for (int64_t i = 0; i < gx.size(); ++i) {
    double xd = x_[i];
    double phi = 0.5 * (1.0 + std::erf(xd * kInvSqrt2));
    double pdf = kInvSqrt2Pi * std::exp(-0.5 * xd * xd);
    gx[i] = static_cast<float>(gout[i] * (phi + xd * pdf));
  }
  return gx;
}

// ---------------------------------------------------------------- MaxPool2x

Tensor MaxPool2x::forward(const Tensor& x) {
  if (x.ndim() != 3) fail(Err::Shape, "maxpool expects (H, W, C), got " + shape_str(x.shape));
  h_ = x.dim(0);
  wd_ = x.dim(1);
  c_ = x.dim(2);
  if (h_ % 2 || wd_ % 2) fail(Err::Shape, "maxpool needs even spatial dims");
  const int ho = h_ / 2, wo = wd_ / 2;
  Tensor y({ho, wo, c_});
  argmax_.assign(static_cast<size_t>(ho) * wo * c_, 0);
  for (int i = 0; i < ho; ++i)
    for (int j = 0; j < wo; ++j)
      for (int c = 0; c < c_; ++c) {
        float best = -std::numeric_limits<float>::infinity();
        int best_idx = 0;
        for (int di = 0; di < 2; ++di)
          for (int dj = 0; dj < 2; ++dj) {
            const int idx = ((2 * i + di) * wd_ + (2 * j + dj)) * c_ + c;
            if (x[idx] > best) {
              best = x[idx];
              best_idx = idx;
            }
          }
        const size_t o = (static_cast<size_t>(i) * wo + j) * c_ + static_cast<size_t>(c);
        y[static_cast<int64_t>(o)] = best;
        argmax_[o] = best_idx;
      }
  return y;
}

Tensor MaxPool2x::backward(const Tensor& gout) {
  Tensor gx({h_, wd_, c_});
  for (size_t o = 0; o < argmax_.size(); ++o)
    gx[argmax_[o]] += gout[static_cast<int64_t>(o)];
  return gx;
}

// ---------------------------------------------------------------- LayerNorm

LayerNorm::LayerNorm(int dim_, const std::string& name)
    : gamma(name + ".g", {dim_}), beta(name + ".b", {dim_}), dim(dim_) {
  gamma.value.fill(1.0f);
}

Tensor LayerNorm::forward(const Tensor& x) {
  int rows = static_cast<int>(x.size() / dim);
  xhat_ = Tensor(x.shape);
  inv_std_.assign(rows, 0.0f);
  Tensor y(x.shape);
  for (int i = 0; i < rows; ++i) {
    const float* row = x.data() + static_cast<int64_t>(i) * dim;
    double mean = 0.0;
    for (int j = 0; j < dim; ++j) mean += row[j];
    mean /= dim;
    double var = 0.0;
    for (int j = 0; j < dim; ++j) {
      double d = row[j] - mean;
      var += d * d;
    }
    var /= dim;
    float istd = static_cast<float>(1.0 / std::sqrt(var + eps));
    inv_std_[i] = istd;
    float* xh = xhat_.data() + static_cast<int64_t>(i) * dim;
    float* yo = y.data() + static_cast<int64_t>(i) * dim;
    for (int j = 0; j < dim; ++j) {
      xh[j] = static_cast<float>((row[j] - mean) * istd);
      yo[j] = xh[j] * gamma.value[j] + beta.value[j];
    }
  }
  return y;
}

Tensor LayerNorm::backward(const Tensor& gout) {
  int rows = static_cast<int>(gout.size() / dim);
  Tensor gx(gout.shape);
  for (int i = 0; i < rows; ++i) {
    const float* gy = gout.data() + static_cast<int64_t>(i) * dim;
    const float* xh = xhat_.data() + static_cast<int64_t>(i) * dim;
    double mean_h = 0.0, mean_hx = 0.0;
    for (int j = 0; j < dim; ++j) {
      double h = static_cast<double>(gy[j]) * gamma.value[j];
      mean_h += h;
      mean_hx += h * xh[j];
      gamma.grad[j] += gy[j] * xh[j];
      beta.grad[j] += gy[j];
    }
    mean_h /= dim;
    mean_hx /= dim;
    float* go = gx.data() + static_cast<int64_t>(i) * dim;
    for (int j = 0; j < dim; ++j) {
      double h = static_cast<double>(gy[j]) * gamma.value[j];
      go[j] = static_cast<float>((h - mean_h - xh[j] * mean_hx) * inv_std_[i]);
    }
  }
  return gx;
}

void LayerNorm::collect_params(std::vector<Param*>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

// ------------------------------------------------------ MultiHeadAttention

MultiHeadAttention::MultiHeadAttention(int dim_, int heads_, Rng& rng, const std::string& name)
    : dim(dim_),
      heads(heads_),
      dk(dim_ / heads_),
      qkv_(dim_, 3 * dim_, rng, name + ".qkv"),
      proj_(dim_, dim_, rng, name + ".proj") {
  if (dim % heads != 0) fail(Err::Config, "attention dim must divide heads");
}

Tensor MultiHeadAttention::forward(const Tensor& x) {
  t_ = x.dim(0);
  Tensor qkv = qkv_.forward(x);  // (T, 3D)
  q_ = Tensor({t_, dim});
  k_ = Tensor({t_, dim});
  v_ = Tensor({t_, dim});
  for (int t = 0; t < t_; ++t) {
    const float* row = qkv.data() + static_cast<int64_t>(t) * 3 * dim;
    std::copy(row, row + dim, q_.data() + static_cast<int64_t>(t) * dim);
    std::copy(row + dim, row + 2 * dim, k_.data() + static_cast<int64_t>(t) * dim);
    std::copy(row + 2 * dim, row + 3 * dim, v_.data() + static_cast<int64_t>(t) * dim);
  }
  const float scale = static_cast<float>(1.0 / std::sqrt(static_cast<double>(dk)));
  attn_ = Tensor({heads, t_, t_});
  Tensor ctx({t_, dim});
  std::vector<float> scores(static_cast<size_t>(t_) * t_);
  for (int h = 0; h < heads; ++h) {
    // Gather per-head strided views into compact buffers.
    std::vector<float> qh(static_cast<size_t>(t_) * dk), kh(qh.size()), vh(qh.size());
    for (int t = 0; t < t_; ++t)
      for (int d = 0; d < dk; ++d) {
        qh[static_cast<size_t>(t) * dk + d] = q_[static_cast<int64_t>(t) * dim + h * dk + d];
        kh[static_cast<size_t>(t) * dk + d] = k_[static_cast<int64_t>(t) * dim + h * dk + d];
        vh[static_cast<size_t>(t) * dk + d] = v_[static_cast<int64_t>(t) * dim + h * dk + d];
      }
    matmul(qh.data(), kh.data(), scores.data(), t_, dk, t_, false, true);
    float* a = attn_.data() + static_cast<int64_t>(h) * t_ * t_;
    for (int i = 0; i < t_; ++i) {
      float mx = -1e30f;
      for (int j = 0; j < t_; ++j) {
        scores[static_cast<size_t>(i) * t_ + j] *= scale;
        mx = std::max(mx, scores[static_cast<size_t>(i) * t_ + j]);
      }
      float sum = 0.0f;
      for (int j = 0; j < t_; ++j) {
        float e = std::exp(scores[static_cast<size_t>(i) * t_ + j] - mx);
        a[static_cast<int64_t>(i) * t_ + j] = e;
        sum += e;
      }
      for (int j = 0; j < t_; ++j) a[static_cast<int64_t>(i) * t_ + j] /= sum;
    }
    std::vector<float> oh(static_cast<size_t>(t_) * dk);
    matmul(a, vh.data(), oh.data(), t_, t_, dk);
    for (int t = 0; t < t_; ++t)
      for (int d = 0; d < dk; ++d)
        ctx[static_cast<int64_t>(t) * dim + h * dk + d] = oh[static_cast<size_t>(t) * dk + d];
  }
  return proj_.forward(ctx);
}

Tensor MultiHeadAttention::backward(const Tensor& gout) {
  Tensor gctx = proj_.backward(gout);  // (T, D)
  Tensor gq({t_, dim}), gk({t_, dim}), gv({t_, dim});
  const float scale = static_cast<float>(1.0 / std::sqrt(static_cast<double>(dk)));
  std::vector<float> gs(static_cast<size_t>(t_) * t_);
  for (int h = 0; h < heads; ++h) {
    std::vector<float> qh(static_cast<size_t>(t_) * dk), kh(qh.size()), vh(qh.size()),
        goh(qh.size());
    for (int t = 0; t < t_; ++t)
      for (int d = 0; d < dk; ++d) {
        qh[static_cast<size_t>(t) * dk + d] = q_[static_cast<int64_t>(t) * dim + h * dk + d];
        kh[static_cast<size_t>(t) * dk + d] = k_[static_cast<int64_t>(t) * dim + h * dk + d];
        vh[static_cast<size_t>(t) * dk + d] = v_[static_cast<int64_t>(t) * dim + h * dk + d];
        goh[static_cast<size_t>(t) * dk + d] = gctx[static_cast<int64_t>(t) * dim + h * dk + d];
      }
    const float* a = attn_.data() + static_cast<int64_t>(h) * t_ * t_;
    // dV = A^T dO ; dA = dO V^T
    std::vector<float> gvh(static_cast<size_t>(t_) * dk), ga(static_cast<size_t>(t_) * t_);
    matmul(a, goh.data(), gvh.data(), t_, t_, dk, true, false);
    matmul(goh.data(), vh.data(), ga.data(), t_, dk, t_, false, true);
    // softmax backward row-wise: dS = A * (dA - sum(dA*A))
    for (int i = 0; i < t_; ++i) {
      double dot = 0.0;
      for (int j = 0; j < t_; ++j)
        dot += static_cast<double>(ga[static_cast<size_t>(i) * t_ + j]) *
               a[static_cast<int64_t>(i) * t_ + j];
      for (int j = 0; j < t_; ++j) {
        gs[static_cast<size_t>(i) * t_ + j] =
            a[static_cast<int64_t>(i) * t_ + j] *
            (ga[static_cast<size_t>(i) * t_ + j] - static_cast<float>(dot));
      }
    }
    for (auto& e : gs) e *= scale;
    std::vector<float> gqh(static_cast<size_t>(t_) * dk), gkh(gqh.size());
    matmul(gs.data(), kh.data(), gqh.data(), t_, t_, dk);
    matmul(gs.data(), qh.data(), gkh.data(), t_, t_, dk, true, false);
    for (int t = 0; t < t_; ++t)
      for (int d = 0; d < dk; ++d) {
        gq[static_cast<int64_t>(t) * dim + h * dk + d] = gqh[static_cast<size_t>(t) * dk + d];
        gk[static_cast<int64_t>(t) * dim + h * dk + d] = gkh[static_cast<size_t>(t) * dk + d];
        gv[static_cast<int64_t>(t) * dim + h * dk + d] = gvh[static_cast<size_t>(t) * dk + d];
      }
  }
  Tensor gqkv({t_, 3 * dim});
  for (int t = 0; t < t_; ++t) {
    float* row = gqkv.data() + static_cast<int64_t>(t) * 3 * dim;
    std::copy(gq.data() + static_cast<int64_t>(t) * dim, gq.data() + (static_cast<int64_t>(t) + 1) * dim, row);
    std::copy(gk.data() + static_cast<int64_t>(t) * dim, gk.data() + (static_cast<int64_t>(t) + 1) * dim, row + dim);
    std::copy(gv.data() + static_cast<int64_t>(t) * dim, gv.data() + (static_cast<int64_t>(t) + 1) * dim, row + 2 * dim);
  }
  return qkv_.backward(gqkv);
}

void MultiHeadAttention::collect_params(std::vector<Param*>& out) {
  qkv_.collect_params(out);
  proj_.collect_params(out);
}

// ------------------------------------------------------- TransformerBlock

TransformerBlock::TransformerBlock(int dim, int heads, int mlp_ratio, Rng& rng,
                                   const std::string& name)
    : ln1_(dim, name + ".ln1"),
      ln2_(dim, name + ".ln2"),
      attn_(dim, heads, rng, name + ".attn"),
      fc1_(dim, dim * mlp_ratio, rng, name + ".fc1"),
      fc2_(dim * mlp_ratio, dim, rng, name + ".fc2") {}

Tensor TransformerBlock::forward(const Tensor& x) {
  Tensor a = attn_.forward(ln1_.forward(x));
  Tensor x1 = x;
  for (int64_t i = 0; i < x1.size(); ++i) x1[i] += a[i];
  Tensor m = fc2_.forward(gelu_.forward(fc1_.forward(ln2_.forward(x1))));
  Tensor x2 = x1;
  for (int64_t i = 0; i < x2.size(); ++i) x2[i] += m[i];
  return x2;
}

Tensor TransformerBlock::backward(const Tensor& gout) {
  Tensor gm = ln2_.backward(fc1_.backward(gelu_.backward(fc2_.backward(gout))));
  Tensor gx1 = gout;
  for (int64_t i = 0; i < gx1.size(); ++i) gx1[i] += gm[i];
  Tensor ga = ln1_.backward(attn_.backward(gx1));
  Tensor gx = gx1;
  for (int64_t i = 0; i < gx.size(); ++i) gx[i] += ga[i];
  return gx;
}

void TransformerBlock::collect_params(std::vector<Param*>& out) {
  ln1_.collect_params(out);
  attn_.collect_params(out);
  ln2_.collect_params(out);
  fc1_.collect_params(out);
  fc2_.collect_params(out);
}

// ---------------------------------------------------------------- Adam

Adam::Adam(std::vector<Param*> params, double lr_, double beta1, double beta2, double eps,
           double weight_decay)
    : lr(lr_), params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps),
      wd_(weight_decay) {
  for (auto* p : params_) {
    m_.emplace_back(p->size(), 0.0);
    v_.emplace_back(p->size(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    Param* p = params_[pi];
    auto& m = m_[pi];
    auto& v = v_[pi];
    for (int64_t i = 0; i < p->size(); ++i) {
      double g = p->grad[i];
      if (wd_ != 0.0) g += wd_ * p->value[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      p->value[i] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + eps_));
    }
  }
}

void Adam::zero_grad() {
  for (auto* p : params_) p->zero_grad();
}

}  // namespace gfb::nn
