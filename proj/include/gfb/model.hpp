#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "gfb/nn.hpp"
#include "gfb/rng.hpp"
#include "gfb/tensor.hpp"

namespace gfb {

// The six-band interface the pretrained encoder expects; adapters map any
// input band set onto these slots.
const std::vector<std::string>& hls_interface_bands();

enum class AdapterKind { none, linear, conv_head };
enum class Tuning { frozen, full };
enum class EncoderKind { toy_vit, external_checkpoint };

const char* adapter_kind_name(AdapterKind k);
AdapterKind adapter_kind_from_name(const std::string& name);
const char* tuning_name(Tuning t);
Tuning tuning_from_name(const std::string& name);

struct AdapterSpec {
  AdapterKind kind = AdapterKind::linear;
  int b_in = 6;
  int b_pre = 6;
  int width = 32;  // conv_head hidden width
  int depth = 2;   // conv_head 3x3 layer count
};

struct EncoderSpec {
  EncoderKind kind = EncoderKind::toy_vit;
  int image_size = 128;
  int patch_size = 16;
  int embed_dim = 64;
  int depth = 4;
  int heads = 4;
  int t_steps = 1;
  std::string checkpoint_path;  // external_checkpoint only
};

struct DecoderSpec {
  int stages = 4;  // 2^stages must equal patch_size
  int classes = 2;
};

struct ModelSpec {
  std::string arch = "prithvi_toy";  // or "reference_unet"
  AdapterSpec adapter;
  EncoderSpec encoder;
  DecoderSpec decoder;
  Tuning tuning = Tuning::full;
  std::vector<std::string> input_bands;

  std::string to_json() const;
  static ModelSpec from_json(const std::string& text);
};

class Adapter {
 public:
  virtual ~Adapter() = default;
  virtual Tensor forward(const Tensor& x) = 0;  // (H, W, b_in) -> (H, W, 6)
  virtual Tensor backward(const Tensor& g) = 0;
  virtual void collect_params(std::vector<Param*>& out) {}

  int b_in = 6;
  int b_out = 6;
};

std::unique_ptr<Adapter> make_adapter(const AdapterSpec& spec,
                                      const std::vector<std::string>& input_bands, Rng& rng);

// Patch-embedding ViT over a 6-band image: learned positional and temporal
// embeddings, pre-norm transformer blocks, final layer norm. The visible
// variants run on a token subset for masked pretraining.
class ToyViT {
 public:
  ToyViT(const EncoderSpec& spec, Rng& rng);

  Tensor forward(const Tensor& x6);                // -> (tokens, D)
  Tensor backward(const Tensor& gtokens);          // -> (H, W, 6)
  Tensor forward_visible(const Tensor& x6, const std::vector<int>& visible);
  Tensor backward_visible(const Tensor& gvisible);
  void collect_params(std::vector<Param*>& out);

  int grid() const { return grid_; }
  int tokens() const { return grid_ * grid_; }
  int patch_pixels() const { return spec_.patch_size * spec_.patch_size * 6; }
  const EncoderSpec& spec() const { return spec_; }

  // (H, W, 6) <-> (tokens, p*p*6), row-major (di, dj, c) inside a token.
  Tensor patchify(const Tensor& x6) const;
  Tensor unpatchify_grad(const Tensor& gpatches) const;

 private:
  Tensor run_blocks(Tensor z);
  Tensor unrun_blocks(Tensor g);

  EncoderSpec spec_;
  int grid_;
  nn::Dense patch_embed_;
  Param pos_emb_;   // (tokens, D)
  Param time_emb_;  // (1, D)
  std::vector<std::unique_ptr<nn::TransformerBlock>> blocks_;
  nn::LayerNorm ln_;
  std::vector<int> visible_;  // token ids of the last forward
};

// Token grid to per-pixel logits through 2x transposed-convolution stages
// interleaved with 3x3 convolutions; widths halve per stage.
class SegDecoder {
 public:
  SegDecoder(const DecoderSpec& spec, int embed_dim, int patch_size, int grid, Rng& rng);

  Tensor forward(const Tensor& tokens);    // (g*g, D) -> (H, W, classes)
  Tensor backward(const Tensor& glogits);  // -> (g*g, D)
  void collect_params(std::vector<Param*>& out);

 private:
  int grid_, embed_;
  std::vector<std::unique_ptr<nn::ConvTranspose2x>> ups_;
  std::vector<std::unique_ptr<nn::Conv2d>> convs_;
  std::vector<nn::ReLU> relu_up_, relu_conv_;
  std::unique_ptr<nn::Conv2d> head_;
};

class SegModel {
 public:
  virtual ~SegModel() = default;
  virtual Tensor forward(const Tensor& x) = 0;         // (H, W, B_in) -> (H, W, C) logits
  virtual Tensor backward(const Tensor& glogits) = 0;  // -> input gradient
  virtual void encoder_params(std::vector<Param*>& out) = 0;
  virtual void head_params(std::vector<Param*>& out) = 0;  // adapter + decoder

  void all_params(std::vector<Param*>& out);
  // Honors the tuning strategy: frozen excludes encoder parameters.
  void trainable_params(std::vector<Param*>& out);
  int64_t param_count();

  const ModelSpec& spec() const { return spec_; }

 protected:
  ModelSpec spec_;
};

std::unique_ptr<SegModel> build_model(const ModelSpec& spec, uint64_t init_seed);

// (H, W, C) logits -> per-pixel softmax probabilities.
Tensor softmax_logits(const Tensor& logits);
// Landslide iff p(landslide) >= threshold; ties go to the rare class.
std::vector<uint8_t> predict_mask(const Tensor& probs, double threshold = 0.5);

// Masked-autoencoder pretraining head: mask token + decoder positional
// embedding + one transformer block + linear reconstruction of patch pixels.
class MaeDecoder {
 public:
  MaeDecoder(const EncoderSpec& enc, int grid, int decoder_dim, Rng& rng);
  void collect_params(std::vector<Param*>& out);

  int decoder_dim() const { return dim_; }

  nn::Dense embed_;
  Param mask_token_;  // (1, dd)
  Param dec_pos_;     // (tokens, dd)
  nn::TransformerBlock block_;
  nn::LayerNorm ln_;
  nn::Dense head_;  // dd -> p*p*6

 private:
  int dim_;
};

struct MaeStepResult {
  double loss = 0.0;
  std::vector<int> masked;  // sorted token indices
  Tensor recon;             // (tokens, p*p*6), populated when keep_recon
  Tensor recon_grad;
};

// One forward/backward of masked reconstruction on a single 6-band image;
// parameter gradients are accumulated, the optimizer step is the caller's.
MaeStepResult mae_pretrain_step(ToyViT& encoder, MaeDecoder& decoder, const Tensor& x6,
                                double mask_ratio, Rng& rng, bool keep_recon = false);

struct CheckpointMeta {
  std::string run_id;
  std::string config_fingerprint;
  std::string corpus_hash;
  std::string fitted_split;
  std::string subset_manifest_sha;
  int epoch = -1;
};

void save_checkpoint(SegModel& model, const CheckpointMeta& meta, const std::string& path);
CheckpointMeta load_checkpoint(SegModel& model, const std::string& path);
ModelSpec checkpoint_model_spec(const std::string& path);
// Copies only the encoder blob of a saved checkpoint into the model, so
// frozen runs can share one pretrained encoder across heads.
void load_encoder_section(SegModel& model, const std::string& path);

}  // namespace gfb
