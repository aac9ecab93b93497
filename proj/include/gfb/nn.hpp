#pragma once

#include <memory>
#include <vector>

#include "gfb/rng.hpp"
#include "gfb/tensor.hpp"

namespace gfb::nn {

// Layers follow a forward/backward protocol: forward caches what backward
// needs, backward consumes the upstream gradient, accumulates parameter
// gradients (+=) and returns the gradient w.r.t. the layer input. One
// forward per backward.
class Module {
 public:
  virtual ~Module() = default;
  virtual Tensor forward(const Tensor& x) = 0;
  virtual Tensor backward(const Tensor& gout) = 0;
  virtual void collect_params(std::vector<Param*>& out) {}
};

// y = xW + b on rows; x is (R, in), W is (in, out).
class Dense : public Module {
 public:
  Dense(int in, int out, Rng& rng, const std::string& name = "dense");
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& gout) override;
  void collect_params(std::vector<Param*>& out) override;

  Param w, b;
  int in_dim, out_dim;

 private:
  Tensor x_;
};

// Channel-last 2D convolution with zero padding.
class Conv2d : public Module {
 public:
  Conv2d(int cin, int cout, int k, int stride, int pad, Rng& rng,
         const std::string& name = "conv");
  Tensor forward(const Tensor& x) override;  // x: (H, W, cin)
  Tensor backward(const Tensor& gout) override;
  void collect_params(std::vector<Param*>& out) override;

  Param w, b;  // w: (k*k*cin, cout)
  int cin, cout, k, stride, pad;

 private:
  Tensor col_;
  int h_ = 0, wd_ = 0, ho_ = 0, wo_ = 0;
};

// Transposed convolution with kernel 2, stride 2: exact 2x upsampling with
// non-overlapping output blocks.
class ConvTranspose2x : public Module {
 public:
  ConvTranspose2x(int cin, int cout, Rng& rng, const std::string& name = "convt");
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& gout) override;
  void collect_params(std::vector<Param*>& out) override;

  Param w, b;  // w: (cin, 4*cout)
  int cin, cout;

 private:
  Tensor x_;
  int h_ = 0, wd_ = 0;
};

class ReLU : public Module {
 public:
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& gout) override;

 private:
  Tensor x_;
};

class Gelu : public Module {
 public:
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& gout) override;

 private:
  Tensor x_;
};

// 2x2 max pooling with stride 2 on a channel-last (H, W, C) tensor.
class MaxPool2x : public Module {
 public:
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& gout) override;

 private:
  std::vector<int> argmax_;
  int h_ = 0, wd_ = 0, c_ = 0;
};

// Row-wise layer norm over the last dimension of a (T, D) tensor.
class LayerNorm : public Module {
 public:
  LayerNorm(int dim, const std::string& name = "ln");
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& gout) override;
  void collect_params(std::vector<Param*>& out) override;

  Param gamma, beta;
  int dim;
  double eps = 1e-5;

 private:
  Tensor xhat_;
  std::vector<float> inv_std_;
};

// Multi-head self-attention on a (T, D) sequence.
class MultiHeadAttention : public Module {
 public:
  MultiHeadAttention(int dim, int heads, Rng& rng, const std::string& name = "attn");
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& gout) override;
  void collect_params(std::vector<Param*>& out) override;

  int dim, heads, dk;

 private:
  Dense qkv_, proj_;
  Tensor q_, k_, v_;    // each (T, D), head-interleaved
  Tensor attn_;         // (heads, T, T)
  int t_ = 0;
};

// Pre-norm transformer block: x + MHSA(LN(x)); then x + MLP(LN(x)).
class TransformerBlock : public Module {
 public:
  TransformerBlock(int dim, int heads, int mlp_ratio, Rng& rng, const std::string& name = "blk");
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& gout) override;
  void collect_params(std::vector<Param*>& out) override;

 private:
  LayerNorm ln1_, ln2_;
  MultiHeadAttention attn_;
  Dense fc1_, fc2_;
  Gelu gelu_;
};

// Adam with bias correction; holds non-owning pointers to the trainable set.
class Adam {
 public:
  Adam(std::vector<Param*> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8, double weight_decay = 0.0);
  void step();
  void zero_grad();
  const std::vector<Param*>& params() const { return params_; }
  double lr;

 private:
  std::vector<Param*> params_;
  std::vector<std::vector<double>> m_, v_;
  double beta1_, beta2_, eps_, wd_;
  int64_t t_ = 0;
};

// Init helpers.
void xavier_uniform(Tensor& w, int fan_in, int fan_out, Rng& rng);
void he_normal(Tensor& w, int fan_in, Rng& rng);
void trunc_normal(Tensor& w, double stddev, Rng& rng);

// Row-wise softmax of an (R, C) tensor, numerically stabilised.
Tensor softmax_rows(const Tensor& x);

// GEMM wrappers (row-major). c = a @ b with optional transposes.
void matmul(const float* a, const float* b, float* c, int m, int k, int n, bool trans_a = false,
            bool trans_b = false, bool accumulate = false);

}  // namespace gfb::nn
