#include "gfb/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "gfb/io.hpp"
#include "json.hpp"

using nlohmann::json;

namespace gfb {

const std::vector<std::string>& hls_interface_bands() {
  static const std::vector<std::string> bands = {"B2", "B3", "B4", "B8", "B11", "B12"};
  return bands;
}

const char* adapter_kind_name(AdapterKind k) {
  switch (k) {
    case AdapterKind::none:
      return "none";
    case AdapterKind::linear:
      return "linear";
    case AdapterKind::conv_head:
      return "conv_head";
  }
  return "?";
}

AdapterKind adapter_kind_from_name(const std::string& name) {
  if (name == "none") return AdapterKind::none;
  if (name == "linear") return AdapterKind::linear;
  if (name == "conv_head" || name == "conv") return AdapterKind::conv_head;
  fail(Err::Config, "unknown adapter kind '" + name + "'");
}

const char* tuning_name(Tuning t) { return t == Tuning::frozen ? "frozen" : "full"; }

Tuning tuning_from_name(const std::string& name) {
  if (name == "frozen") return Tuning::frozen;
  if (name == "full") return Tuning::full;
  fail(Err::Config, "unknown tuning strategy '" + name + "'");
}

// ----------------------------------------------------------------- ModelSpec

std::string ModelSpec::to_json() const {
  json j;
  j["arch"] = arch;
  j["adapter"] = {{"kind", adapter_kind_name(adapter.kind)},
                  {"b_in", adapter.b_in},
                  {"b_pre", adapter.b_pre},
                  {"width", adapter.width},
                  {"depth", adapter.depth}};
  j["encoder"] = {{"kind", encoder.kind == EncoderKind::toy_vit ? "toy_vit" : "external_checkpoint"},
                  {"image_size", encoder.image_size},
                  {"patch_size", encoder.patch_size},
                  {"embed_dim", encoder.embed_dim},
                  {"depth", encoder.depth},
                  {"heads", encoder.heads},
                  {"t_steps", encoder.t_steps},
                  {"checkpoint_path", encoder.checkpoint_path}};
  j["decoder"] = {{"stages", decoder.stages}, {"classes", decoder.classes}};
  j["tuning"] = tuning_name(tuning);
  j["input_bands"] = input_bands;
  return j.dump();
}

ModelSpec ModelSpec::from_json(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) fail(Err::Config, "invalid model spec JSON");
  ModelSpec s;
  s.arch = j.value("arch", std::string("prithvi_toy"));
  if (j.contains("adapter")) {
    const json& a = j["adapter"];
    s.adapter.kind = adapter_kind_from_name(a.value("kind", std::string("linear")));
    s.adapter.b_in = a.value("b_in", 6);
    s.adapter.b_pre = a.value("b_pre", 6);
    s.adapter.width = a.value("width", 32);
    s.adapter.depth = a.value("depth", 2);
  }
  if (j.contains("encoder")) {
    const json& e = j["encoder"];
    s.encoder.kind = e.value("kind", std::string("toy_vit")) == "external_checkpoint"
                         ? EncoderKind::external_checkpoint
                         : EncoderKind::toy_vit;
    s.encoder.image_size = e.value("image_size", 128);
    s.encoder.patch_size = e.value("patch_size", 16);
    s.encoder.embed_dim = e.value("embed_dim", 64);
    s.encoder.depth = e.value("depth", 4);
    s.encoder.heads = e.value("heads", 4);
    s.encoder.t_steps = e.value("t_steps", 1);
    s.encoder.checkpoint_path = e.value("checkpoint_path", std::string{});
  }
  if (j.contains("decoder")) {
    s.decoder.stages = j["decoder"].value("stages", 4);
    s.decoder.classes = j["decoder"].value("classes", 2);
  }
  s.tuning = tuning_from_name(j.value("tuning", std::string("full")));
  s.input_bands = j.value("input_bands", std::vector<std::string>{});
  return s;
}

// ------------------------------------------------------------------ Adapters

namespace {

class NoAdapter : public Adapter {
 public:
  explicit NoAdapter(int channels) {
    b_in = channels;
    b_out = channels;
  }
  Tensor forward(const Tensor& x) override {
    if (x.dim(2) != b_in)
      fail(Err::ChannelCount, "adapter expected " + std::to_string(b_in) + " channels, got " +
                                  std::to_string(x.dim(2)));
    return x;
  }
  Tensor backward(const Tensor& g) override { return g; }
};

class LinearAdapter : public Adapter {
 public:
  LinearAdapter(int channels, const std::vector<std::string>& input_bands, Rng& rng)
      : dense_(channels, 6, scratch_rng(), "adapter.linear") {
    b_in = channels;
    b_out = 6;
    // Warm start: map any input band that matches an interface slot straight
    // through; slots with no matching band keep a small random column. Only
    // the unmatched columns draw from the shared stream, so a fully matched
    // adapter leaves the downstream initialization untouched and the bypass
    // path stays equivalent to it.
    dense_.w.value.zero();
    dense_.b.value.zero();
    const std::vector<std::string>& target = hls_interface_bands();
    for (int o = 0; o < 6; ++o) {
      int src = -1;
      for (size_t i = 0; i < input_bands.size(); ++i)
        if (input_bands[i] == target[static_cast<size_t>(o)]) {
          src = static_cast<int>(i);
          break;
        }
      if (src >= 0) {
        dense_.w.value[src * 6 + o] = 1.0f;
      } else {
        for (int i = 0; i < channels; ++i)
          dense_.w.value[i * 6 + o] = static_cast<float>(rng.normal(0.0, 0.02));
      }
    }
  }

  Tensor forward(const Tensor& x) override {
    if (x.dim(2) != b_in)
      fail(Err::ChannelCount, "adapter expected " + std::to_string(b_in) + " channels, got " +
                                  std::to_string(x.dim(2)));
    h_ = x.dim(0);
    w_ = x.dim(1);
    Tensor rows({h_ * w_, b_in}, x.v);
    Tensor y = dense_.forward(rows);
    return Tensor({h_, w_, 6}, std::move(y.v));
  }

  Tensor backward(const Tensor& g) override {
    Tensor grows({h_ * w_, 6}, g.v);
    Tensor gx = dense_.backward(grows);
    return Tensor({h_, w_, b_in}, std::move(gx.v));
  }

  void collect_params(std::vector<Param*>& out) override { dense_.collect_params(out); }

  nn::Dense dense_;

 private:
  // Throwaway stream for the dense constructor; the warm start overwrites
  // every value it produced.
  static Rng& scratch_rng() {
    static thread_local Rng rng(0);
    return rng;
  }

  int h_ = 0, w_ = 0;
};

class ConvHeadAdapter : public Adapter {
 public:
  ConvHeadAdapter(int channels, int width, int depth, Rng& rng) {
    b_in = channels;
    b_out = 6;
    int cin = channels;
    for (int d = 0; d < depth; ++d) {
      convs_.push_back(std::make_unique<nn::Conv2d>(cin, width, 3, 1, 1, rng,
                                                    "adapter.conv" + std::to_string(d)));
      cin = width;
    }
    relus_.resize(convs_.size());
    proj_ = std::make_unique<nn::Conv2d>(cin, 6, 1, 1, 0, rng, "adapter.proj");
  }

  Tensor forward(const Tensor& x) override {
    if (x.dim(2) != b_in)
      fail(Err::ChannelCount, "adapter expected " + std::to_string(b_in) + " channels, got " +
                                  std::to_string(x.dim(2)));
    Tensor y = x;
    for (size_t i = 0; i < convs_.size(); ++i) {
      y = convs_[i]->forward(y);
      y = relus_[i].forward(y);
    }
    return proj_->forward(y);
  }

  Tensor backward(const Tensor& g) override {
    Tensor gy = proj_->backward(g);
    for (size_t i = convs_.size(); i-- > 0;) {
      gy = relus_[i].backward(gy);
      gy = convs_[i]->backward(gy);
    }
    return gy;
  }

  void collect_params(std::vector<Param*>& out) override {
    for (auto& c : convs_) c->collect_params(out);
    proj_->collect_params(out);
  }

 private:
  std::vector<std::unique_ptr<nn::Conv2d>> convs_;
  std::vector<nn::ReLU> relus_;
  std::unique_ptr<nn::Conv2d> proj_;
};

}  // namespace

std::unique_ptr<Adapter> make_adapter(const AdapterSpec& spec,
                                      const std::vector<std::string>& input_bands, Rng& rng) {
  if (spec.b_pre != 6) fail(Err::Config, "the encoder interface is fixed at six bands");
  switch (spec.kind) {
    case AdapterKind::none:
      if (spec.b_in != spec.b_pre)
        fail(Err::AdapterBypass, "bypass requires exactly " + std::to_string(spec.b_pre) +
                                     " input bands, got " + std::to_string(spec.b_in));
      return std::make_unique<NoAdapter>(spec.b_in);
    case AdapterKind::linear:
      return std::make_unique<LinearAdapter>(spec.b_in, input_bands, rng);
    case AdapterKind::conv_head:
      return std::make_unique<ConvHeadAdapter>(spec.b_in, spec.width, spec.depth, rng);
  }
  fail(Err::Config, "unknown adapter kind");
}

// -------------------------------------------------------------------- ToyViT

namespace {

// Fixed 2D sin-cos positional table: the first half of the channels encodes
// the token row, the second half the column, so attention can resolve token
// positions from initialization instead of having to learn them.
void sincos_pos_embed(Tensor& table, int grid) {
  const int dim = table.dim(1);
  const int half = dim / 2;
  const int pairs = std::max(1, half / 2);
  for (int gi = 0; gi < grid; ++gi)
    for (int gj = 0; gj < grid; ++gj) {
      float* row = table.data() + static_cast<size_t>(gi * grid + gj) * dim;
      for (int c = 0; c < dim; ++c) {
        const int axis = c < half ? gi : gj;
        const int r = c < half ? c : c - half;
        const double freq = std::pow(10000.0, -static_cast<double>(r / 2) / pairs);
        row[c] = static_cast<float>(r % 2 == 0 ? std::sin(axis * freq) : std::cos(axis * freq));
      }
    }
}

}  // namespace

ToyViT::ToyViT(const EncoderSpec& spec, Rng& rng)
    : spec_(spec),
      grid_(spec.image_size / spec.patch_size),
      patch_embed_(spec.patch_size * spec.patch_size * 6, spec.embed_dim, rng, "enc.embed"),
      pos_emb_("enc.pos", {(spec.image_size / spec.patch_size) * (spec.image_size / spec.patch_size),
                           spec.embed_dim}),
      time_emb_("enc.time", {1, spec.embed_dim}),
      ln_(spec.embed_dim, "enc.ln") {
  if (spec.image_size % spec.patch_size != 0)
    fail(Err::PatchGrid, "image size " + std::to_string(spec.image_size) +
                             " not divisible by patch size " + std::to_string(spec.patch_size));
  if (spec.embed_dim % spec.heads != 0)
    fail(Err::Config, "embed_dim must be divisible by heads");
  sincos_pos_embed(pos_emb_.value, grid_);
  nn::trunc_normal(time_emb_.value, 0.02, rng);
  for (int d = 0; d < spec.depth; ++d)
    blocks_.push_back(std::make_unique<nn::TransformerBlock>(spec.embed_dim, spec.heads, 4, rng,
                                                             "enc.blk" + std::to_string(d)));
}

Tensor ToyViT::patchify(const Tensor& x6) const {
  const int p = spec_.patch_size;
  const int w = x6.dim(1);
  Tensor out({tokens(), patch_pixels()});
  for (int gi = 0; gi < grid_; ++gi)
    for (int gj = 0; gj < grid_; ++gj) {
      float* row = out.data() + static_cast<size_t>(gi * grid_ + gj) * patch_pixels();
      for (int di = 0; di < p; ++di) {
        const float* src = x6.data() + (static_cast<size_t>(gi * p + di) * w + gj * p) * 6;
        std::memcpy(row + static_cast<size_t>(di) * p * 6, src, sizeof(float) * 6 * p);
      }
    }
  return out;
}

Tensor ToyViT::unpatchify_grad(const Tensor& gpatches) const {
  const int p = spec_.patch_size;
  const int hw = spec_.image_size;
  Tensor out({hw, hw, 6});
  for (int gi = 0; gi < grid_; ++gi)
    for (int gj = 0; gj < grid_; ++gj) {
      const float* row = gpatches.data() + static_cast<size_t>(gi * grid_ + gj) * patch_pixels();
      for (int di = 0; di < p; ++di) {
        float* dst = out.data() + (static_cast<size_t>(gi * p + di) * hw + gj * p) * 6;
        std::memcpy(dst, row + static_cast<size_t>(di) * p * 6, sizeof(float) * 6 * p);
      }
    }
  return out;
}

Tensor ToyViT::run_blocks(Tensor z) {
  for (auto& blk : blocks_) z = blk->forward(z);
  return ln_.forward(z);
}

Tensor ToyViT::unrun_blocks(Tensor g) {
  g = ln_.backward(g);
  for (size_t i = blocks_.size(); i-- > 0;) g = blocks_[i]->backward(g);
  return g;
}

Tensor ToyViT::forward(const Tensor& x6) {
  if (x6.ndim() != 3 || x6.dim(2) != 6)
    fail(Err::ChannelCount, "encoder expects (H, W, 6), got " + shape_str(x6.shape));
  if (x6.dim(0) % spec_.patch_size != 0 || x6.dim(1) % spec_.patch_size != 0)
    fail(Err::PatchGrid, "spatial dims " + shape_str(x6.shape) + " not divisible by patch size " +
                             std::to_string(spec_.patch_size));
  if (x6.dim(0) != spec_.image_size || x6.dim(1) != spec_.image_size)
    fail(Err::PatchGrid, "encoder built for " + std::to_string(spec_.image_size) + "x" +
                             std::to_string(spec_.image_size) + ", got " + shape_str(x6.shape));
  visible_.clear();
  Tensor z = patch_embed_.forward(patchify(x6));
  const int d = spec_.embed_dim;
  for (int t = 0; t < tokens(); ++t)
    for (int c = 0; c < d; ++c)
      z[static_cast<int64_t>(t) * d + c] += pos_emb_.value[t * d + c] + time_emb_.value[c];
  return run_blocks(std::move(z));
}

Tensor ToyViT::forward_visible(const Tensor& x6, const std::vector<int>& visible) {
  if (visible.empty()) fail(Err::Shape, "visible token set must be non-empty");
  for (int t : visible)
    if (t < 0 || t >= tokens()) fail(Err::Shape, "visible token index out of range");
  visible_ = visible;
  Tensor patches = patchify(x6);
  const int ppc = patch_pixels();
  Tensor vis({static_cast<int>(visible.size()), ppc});
  for (size_t r = 0; r < visible.size(); ++r)
    std::memcpy(vis.data() + r * static_cast<size_t>(ppc),
                patches.data() + static_cast<size_t>(visible[r]) * ppc,
                sizeof(float) * static_cast<size_t>(ppc));
  Tensor z = patch_embed_.forward(vis);
  const int d = spec_.embed_dim;
  for (size_t r = 0; r < visible.size(); ++r)
    for (int c = 0; c < d; ++c)
      z[static_cast<int64_t>(r) * d + c] += pos_emb_.value[visible[r] * d + c] + time_emb_.value[c];
  return run_blocks(std::move(z));
}

Tensor ToyViT::backward(const Tensor& gtokens) {
  if (!visible_.empty()) fail(Err::Shape, "last forward used a visible subset");
  Tensor g = unrun_blocks(gtokens);
  const int d = spec_.embed_dim;
  for (int t = 0; t < tokens(); ++t)
    for (int c = 0; c < d; ++c) {
      const float gv = g[static_cast<int64_t>(t) * d + c];
      pos_emb_.grad[t * d + c] += gv;
      time_emb_.grad[c] += gv;
    }
  return unpatchify_grad(patch_embed_.backward(g));
}

Tensor ToyViT::backward_visible(const Tensor& gvisible) {
  if (visible_.empty()) fail(Err::Shape, "last forward was not on a visible subset");
  Tensor g = unrun_blocks(gvisible);
  const int d = spec_.embed_dim;
  for (size_t r = 0; r < visible_.size(); ++r)
    for (int c = 0; c < d; ++c) {
      const float gv = g[static_cast<int64_t>(r) * d + c];
      pos_emb_.grad[visible_[r] * d + c] += gv;
      time_emb_.grad[c] += gv;
    }
  Tensor gvis_patches = patch_embed_.backward(g);
  const int ppc = patch_pixels();
  Tensor gpatches({tokens(), ppc});
  for (size_t r = 0; r < visible_.size(); ++r)
    std::memcpy(gpatches.data() + static_cast<size_t>(visible_[r]) * ppc,
                gvis_patches.data() + r * static_cast<size_t>(ppc),
                sizeof(float) * static_cast<size_t>(ppc));
  return unpatchify_grad(gpatches);
}

void ToyViT::collect_params(std::vector<Param*>& out) {
  patch_embed_.collect_params(out);
  out.push_back(&pos_emb_);
  out.push_back(&time_emb_);
  for (auto& blk : blocks_) blk->collect_params(out);
  ln_.collect_params(out);
}

// ---------------------------------------------------------------- SegDecoder

SegDecoder::SegDecoder(const DecoderSpec& spec, int embed_dim, int patch_size, int grid, Rng& rng)
    : grid_(grid), embed_(embed_dim) {
  if ((1 << spec.stages) != patch_size)
    fail(Err::UpsampleConfig, "2^" + std::to_string(spec.stages) +
                                  " upsampling stages cannot rebuild patch size " +
                                  std::to_string(patch_size));
  int cin = embed_dim;
  for (int s = 0; s < spec.stages; ++s) {
    const int cout = std::max(cin / 2, 4);
    ups_.push_back(std::make_unique<nn::ConvTranspose2x>(cin, cout, rng,
                                                         "dec.up" + std::to_string(s)));
    convs_.push_back(std::make_unique<nn::Conv2d>(cout, cout, 3, 1, 1, rng,
                                                  "dec.conv" + std::to_string(s)));
    cin = cout;
  }
  relu_up_.resize(ups_.size());
  relu_conv_.resize(convs_.size());
  head_ = std::make_unique<nn::Conv2d>(cin, spec.classes, 1, 1, 0, rng, "dec.head");
}

Tensor SegDecoder::forward(const Tensor& tokens) {
  if (tokens.ndim() != 2 || tokens.dim(0) != grid_ * grid_ || tokens.dim(1) != embed_)
    fail(Err::Shape, "decoder expects (" + std::to_string(grid_ * grid_) + ", " +
                         std::to_string(embed_) + ") tokens, got " + shape_str(tokens.shape));
  Tensor x({grid_, grid_, embed_}, tokens.v);  // row-major token order IS the grid
  for (size_t s = 0; s < ups_.size(); ++s) {
    x = ups_[s]->forward(x);
    x = relu_up_[s].forward(x);
    x = convs_[s]->forward(x);
    x = relu_conv_[s].forward(x);
  }
  return head_->forward(x);
}

Tensor SegDecoder::backward(const Tensor& glogits) {
  Tensor g = head_->backward(glogits);
  for (size_t s = ups_.size(); s-- > 0;) {
    g = relu_conv_[s].backward(g);
    g = convs_[s]->backward(g);
    g = relu_up_[s].backward(g);
    g = ups_[s]->backward(g);
  }
  return Tensor({grid_ * grid_, embed_}, std::move(g.v));
}

void SegDecoder::collect_params(std::vector<Param*>& out) {
  for (size_t s = 0; s < ups_.size(); ++s) {
    ups_[s]->collect_params(out);
    convs_[s]->collect_params(out);
  }
  head_->collect_params(out);
}

// ------------------------------------------------------------------ SegModel

void SegModel::all_params(std::vector<Param*>& out) {
  encoder_params(out);
  head_params(out);
}

void SegModel::trainable_params(std::vector<Param*>& out) {
  if (spec_.tuning == Tuning::full) encoder_params(out);
  head_params(out);
}

int64_t SegModel::param_count() {
  std::vector<Param*> ps;
  all_params(ps);
  int64_t n = 0;
  for (Param* p : ps) n += p->size();
  return n;
}

namespace {

class PrithviToySeg : public SegModel {
 public:
  PrithviToySeg(const ModelSpec& spec, uint64_t init_seed) {
    spec_ = spec;
    Rng rng(init_seed);
    adapter_ = make_adapter(spec.adapter, spec.input_bands, rng);
    EncoderSpec enc = spec.encoder;
    enc.kind = EncoderKind::toy_vit;
    vit_ = std::make_unique<ToyViT>(enc, rng);
    dec_ = std::make_unique<SegDecoder>(spec.decoder, enc.embed_dim, enc.patch_size, vit_->grid(),
                                        rng);
  }

  Tensor forward(const Tensor& x) override {
    return dec_->forward(vit_->forward(adapter_->forward(x)));
  }

  Tensor backward(const Tensor& glogits) override {
    return adapter_->backward(vit_->backward(dec_->backward(glogits)));
  }

  void encoder_params(std::vector<Param*>& out) override { vit_->collect_params(out); }
  void head_params(std::vector<Param*>& out) override {
    adapter_->collect_params(out);
    dec_->collect_params(out);
  }

  ToyViT& encoder() { return *vit_; }
  Adapter& adapter() { return *adapter_; }

 private:
  std::unique_ptr<Adapter> adapter_;
  std::unique_ptr<ToyViT> vit_;
  std::unique_ptr<SegDecoder> dec_;
};

// Compact U-Net: two down blocks, bottleneck, two up blocks with skip
// concatenation. Stands in for the task-specific CNN family; consumes the
// input bands directly (no pretrained interface, no adapter).
class ReferenceCnn : public SegModel {
 public:
  ReferenceCnn(const ModelSpec& spec, uint64_t init_seed) {
    spec_ = spec;
    spec_.adapter.kind = AdapterKind::none;
    Rng rng(init_seed);
    const int b = spec.adapter.b_in;
    e1a_ = std::make_unique<nn::Conv2d>(b, 16, 3, 1, 1, rng, "unet.e1a");
    e1b_ = std::make_unique<nn::Conv2d>(16, 16, 3, 1, 1, rng, "unet.e1b");
    e2a_ = std::make_unique<nn::Conv2d>(16, 32, 3, 1, 1, rng, "unet.e2a");
    e2b_ = std::make_unique<nn::Conv2d>(32, 32, 3, 1, 1, rng, "unet.e2b");
    b1_ = std::make_unique<nn::Conv2d>(32, 64, 3, 1, 1, rng, "unet.b1");
    b2_ = std::make_unique<nn::Conv2d>(64, 64, 3, 1, 1, rng, "unet.b2");
    up2_ = std::make_unique<nn::ConvTranspose2x>(64, 32, rng, "unet.up2");
    d2a_ = std::make_unique<nn::Conv2d>(64, 32, 3, 1, 1, rng, "unet.d2a");
    d2b_ = std::make_unique<nn::Conv2d>(32, 32, 3, 1, 1, rng, "unet.d2b");
    up1_ = std::make_unique<nn::ConvTranspose2x>(32, 16, rng, "unet.up1");
    d1a_ = std::make_unique<nn::Conv2d>(32, 16, 3, 1, 1, rng, "unet.d1a");
    d1b_ = std::make_unique<nn::Conv2d>(16, 16, 3, 1, 1, rng, "unet.d1b");
    head_ = std::make_unique<nn::Conv2d>(16, spec.decoder.classes, 1, 1, 0, rng, "unet.head");
  }

  Tensor forward(const Tensor& x) override {
    if (x.dim(2) != spec_.adapter.b_in)
      fail(Err::ChannelCount, "baseline expected " + std::to_string(spec_.adapter.b_in) +
                                  " channels, got " + std::to_string(x.dim(2)));
    if (x.dim(0) % 4 || x.dim(1) % 4)
      fail(Err::Shape, "baseline needs spatial dims divisible by 4");
    Tensor s1 = r_e1b_.forward(e1b_->forward(r_e1a_.forward(e1a_->forward(x))));
    Tensor p1 = pool1_.forward(s1);
    Tensor s2 = r_e2b_.forward(e2b_->forward(r_e2a_.forward(e2a_->forward(p1))));
    Tensor p2 = pool2_.forward(s2);
    Tensor bt = r_b2_.forward(b2_->forward(r_b1_.forward(b1_->forward(p2))));
    Tensor u2 = r_up2_.forward(up2_->forward(bt));
    Tensor c2 = concat_channels(u2, s2);
    Tensor d2 = r_d2b_.forward(d2b_->forward(r_d2a_.forward(d2a_->forward(c2))));
    Tensor u1 = r_up1_.forward(up1_->forward(d2));
    Tensor c1 = concat_channels(u1, s1);
    Tensor d1 = r_d1b_.forward(d1b_->forward(r_d1a_.forward(d1a_->forward(c1))));
    return head_->forward(d1);
  }

  Tensor backward(const Tensor& glogits) override {
    Tensor g = head_->backward(glogits);
    g = d1a_->backward(r_d1a_.backward(d1b_->backward(r_d1b_.backward(g))));
    auto [gu1, gs1_skip] = split_channels(g, 16);
    g = up1_->backward(r_up1_.backward(gu1));
    g = d2a_->backward(r_d2a_.backward(d2b_->backward(r_d2b_.backward(g))));
    auto [gu2, gs2_skip] = split_channels(g, 32);
    Tensor gbt = up2_->backward(r_up2_.backward(gu2));
    Tensor gp2 = b1_->backward(r_b1_.backward(b2_->backward(r_b2_.backward(gbt))));
    Tensor gs2 = pool2_.backward(gp2);
    for (int64_t i = 0; i < gs2.size(); ++i) gs2[i] += gs2_skip[i];
    Tensor gp1 = e2a_->backward(r_e2a_.backward(e2b_->backward(r_e2b_.backward(gs2))));
    Tensor gs1 = pool1_.backward(gp1);
    for (int64_t i = 0; i < gs1.size(); ++i) gs1[i] += gs1_skip[i];
    return e1a_->backward(r_e1a_.backward(e1b_->backward(r_e1b_.backward(gs1))));
  }

  void encoder_params(std::vector<Param*>& out) override {}
  void head_params(std::vector<Param*>& out) override {
    for (auto* m : std::initializer_list<nn::Module*>{e1a_.get(), e1b_.get(), e2a_.get(),
                                                      e2b_.get(), b1_.get(), b2_.get(), up2_.get(),
                                                      d2a_.get(), d2b_.get(), up1_.get(),
                                                      d1a_.get(), d1b_.get(), head_.get()})
      m->collect_params(out);
  }

 private:
  static Tensor concat_channels(const Tensor& a, const Tensor& b) {
    const int h = a.dim(0), w = a.dim(1), ca = a.dim(2), cb = b.dim(2);
    Tensor out({h, w, ca + cb});
    for (int64_t px = 0; px < static_cast<int64_t>(h) * w; ++px) {
      std::memcpy(out.data() + px * (ca + cb), a.data() + px * ca, sizeof(float) * ca);
      std::memcpy(out.data() + px * (ca + cb) + ca, b.data() + px * cb, sizeof(float) * cb);
    }
    return out;
  }

  static std::pair<Tensor, Tensor> split_channels(const Tensor& g, int ca) {
    const int h = g.dim(0), w = g.dim(1), c = g.dim(2), cb = c - ca;
    Tensor ga({h, w, ca}), gb({h, w, cb});
    for (int64_t px = 0; px < static_cast<int64_t>(h) * w; ++px) {
      std::memcpy(ga.data() + px * ca, g.data() + px * c, sizeof(float) * ca);
      std::memcpy(gb.data() + px * cb, g.data() + px * c + ca, sizeof(float) * cb);
    }
    return {std::move(ga), std::move(gb)};
  }

  std::unique_ptr<nn::Conv2d> e1a_, e1b_, e2a_, e2b_, b1_, b2_, d2a_, d2b_, d1a_, d1b_, head_;
  std::unique_ptr<nn::ConvTranspose2x> up2_, up1_;
  nn::MaxPool2x pool1_, pool2_;
  nn::ReLU r_e1a_, r_e1b_, r_e2a_, r_e2b_, r_b1_, r_b2_, r_up2_, r_d2a_, r_d2b_, r_up1_, r_d1a_,
      r_d1b_;
};

}  // namespace

std::unique_ptr<SegModel> build_model(const ModelSpec& spec, uint64_t init_seed) {
  if (spec.input_bands.empty()) fail(Err::Config, "model spec names no input bands");
  if (spec.adapter.b_in != static_cast<int>(spec.input_bands.size()))
    fail(Err::ChannelCount, "adapter b_in " + std::to_string(spec.adapter.b_in) +
                                " disagrees with " + std::to_string(spec.input_bands.size()) +
                                " input bands");
  if (spec.arch == "reference_unet") {
    if (spec.tuning == Tuning::frozen)
      fail(Err::BaselineTuning, "the reference baseline has no pretrained backbone to freeze");
    return std::make_unique<ReferenceCnn>(spec, init_seed);
  }
  if (spec.arch != "prithvi_toy") fail(Err::Config, "unknown architecture '" + spec.arch + "'");
  if (spec.encoder.image_size % spec.encoder.patch_size != 0)
    fail(Err::PatchGrid, "image size not divisible by patch size");
  ModelSpec resolved = spec;
  if (spec.encoder.kind == EncoderKind::external_checkpoint) {
    if (spec.encoder.checkpoint_path.empty())
      fail(Err::Config, "external_checkpoint encoder needs a checkpoint path");
    ModelSpec stored = checkpoint_model_spec(spec.encoder.checkpoint_path);
    resolved.encoder = stored.encoder;
    resolved.encoder.kind = EncoderKind::toy_vit;
    resolved.encoder.checkpoint_path = spec.encoder.checkpoint_path;
  }
  auto model = std::make_unique<PrithviToySeg>(resolved, init_seed);
  if (spec.encoder.kind == EncoderKind::external_checkpoint)
    load_encoder_section(*model, spec.encoder.checkpoint_path);
  return model;
}

Tensor softmax_logits(const Tensor& logits) {
  if (logits.ndim() != 3) fail(Err::Shape, "logits must be (H, W, C)");
  const int h = logits.dim(0), w = logits.dim(1), c = logits.dim(2);
  Tensor rows({h * w, c}, logits.v);
  Tensor sm = nn::softmax_rows(rows);
  return Tensor({h, w, c}, std::move(sm.v));
}

std::vector<uint8_t> predict_mask(const Tensor& probs, double threshold) {
  if (probs.ndim() != 3 || probs.dim(2) != 2) fail(Err::Shape, "probs must be (H, W, 2)");
  const int64_t pixels = static_cast<int64_t>(probs.dim(0)) * probs.dim(1);
  std::vector<uint8_t> mask(static_cast<size_t>(pixels));
  for (int64_t i = 0; i < pixels; ++i)
    mask[static_cast<size_t>(i)] = probs[2 * i + 1] >= threshold ? 1 : 0;
  return mask;
}

// ----------------------------------------------------------------------- MAE

MaeDecoder::MaeDecoder(const EncoderSpec& enc, int grid, int decoder_dim, Rng& rng)
    : embed_(enc.embed_dim, decoder_dim, rng, "mae.embed"),
      mask_token_("mae.mask_token", {1, decoder_dim}),
      dec_pos_("mae.pos", {grid * grid, decoder_dim}),
      block_(decoder_dim, 4, 4, rng, "mae.blk"),
      ln_(decoder_dim, "mae.ln"),
      head_(decoder_dim, enc.patch_size * enc.patch_size * 6, rng, "mae.head"),
      dim_(decoder_dim) {
  if (decoder_dim % 4 != 0) fail(Err::Config, "mae decoder dim must be divisible by 4 heads");
  nn::trunc_normal(mask_token_.value, 0.02, rng);
  sincos_pos_embed(dec_pos_.value, grid);
}

void MaeDecoder::collect_params(std::vector<Param*>& out) {
  embed_.collect_params(out);
  out.push_back(&mask_token_);
  out.push_back(&dec_pos_);
  block_.collect_params(out);
  ln_.collect_params(out);
  head_.collect_params(out);
}

MaeStepResult mae_pretrain_step(ToyViT& encoder, MaeDecoder& decoder, const Tensor& x6,
                                double mask_ratio, Rng& rng, bool keep_recon) {
  if (!(mask_ratio > 0.0) || !(mask_ratio < 1.0))
    fail(Err::MaskRatio, "mask ratio must lie strictly inside (0, 1)");
  const int n_tokens = encoder.tokens();
  int n_mask = static_cast<int>(std::ceil(mask_ratio * n_tokens));
  if (n_mask >= n_tokens) n_mask = n_tokens - 1;  // keep at least one visible token
  if (n_mask < 1) n_mask = 1;

  std::vector<int> ids(static_cast<size_t>(n_tokens));
  std::iota(ids.begin(), ids.end(), 0);
  for (int i = 0; i < n_mask; ++i) {
    const int64_t j = i + rng.below(n_tokens - i);
    std::swap(ids[static_cast<size_t>(i)], ids[static_cast<size_t>(j)]);
  }
  std::vector<int> masked(ids.begin(), ids.begin() + n_mask);
  std::sort(masked.begin(), masked.end());
  std::vector<int> visible(ids.begin() + n_mask, ids.end());
  std::sort(visible.begin(), visible.end());

  Tensor zv = encoder.forward_visible(x6, visible);
  Tensor ev = decoder.embed_.forward(zv);

  const int dd = decoder.decoder_dim();
  Tensor seq({n_tokens, dd});
  std::vector<uint8_t> is_masked(static_cast<size_t>(n_tokens), 1);
  for (size_t r = 0; r < visible.size(); ++r) {
    is_masked[static_cast<size_t>(visible[r])] = 0;
    for (int c = 0; c < dd; ++c)
      seq[static_cast<int64_t>(visible[r]) * dd + c] = ev[static_cast<int64_t>(r) * dd + c];
  }
  for (int t = 0; t < n_tokens; ++t) {
    float* row = seq.data() + static_cast<size_t>(t) * dd;
    if (is_masked[static_cast<size_t>(t)])
      for (int c = 0; c < dd; ++c) row[c] = decoder.mask_token_.value[c];
    for (int c = 0; c < dd; ++c) row[c] += decoder.dec_pos_.value[t * dd + c];
  }

  Tensor recon = decoder.head_.forward(decoder.ln_.forward(decoder.block_.forward(seq)));
  Tensor targets = encoder.patchify(x6);
  const int ppc = encoder.patch_pixels();

  double loss = 0.0;
  Tensor grecon({n_tokens, ppc});  // zero at every unmasked row by construction
  const double denom = static_cast<double>(n_mask) * ppc;
  for (int t : masked) {
    const float* r = recon.data() + static_cast<size_t>(t) * ppc;
    const float* y = targets.data() + static_cast<size_t>(t) * ppc;
    float* gr = grecon.data() + static_cast<size_t>(t) * ppc;
    for (int j = 0; j < ppc; ++j) {
      const double diff = static_cast<double>(r[j]) - y[j];
      loss += diff * diff;
      gr[j] = static_cast<float>(2.0 * diff / denom);
    }
  }
  loss /= denom;

  Tensor gseq = decoder.block_.backward(decoder.ln_.backward(decoder.head_.backward(grecon)));
  for (int t = 0; t < n_tokens; ++t) {
    const float* row = gseq.data() + static_cast<size_t>(t) * dd;
    for (int c = 0; c < dd; ++c) decoder.dec_pos_.grad[t * dd + c] += row[c];
    if (is_masked[static_cast<size_t>(t)])
      for (int c = 0; c < dd; ++c) decoder.mask_token_.grad[c] += row[c];
  }
  Tensor gev({static_cast<int>(visible.size()), dd});
  for (size_t r = 0; r < visible.size(); ++r)
    std::memcpy(gev.data() + r * static_cast<size_t>(dd),
                gseq.data() + static_cast<size_t>(visible[r]) * dd, sizeof(float) * dd);
  encoder.backward_visible(decoder.embed_.backward(gev));

  MaeStepResult res;
  res.loss = loss;
  res.masked = std::move(masked);
  if (keep_recon) {
    res.recon = std::move(recon);
    res.recon_grad = std::move(grecon);
  }
  return res;
}

// --------------------------------------------------------------- Checkpoints

namespace {

constexpr char kCkptMagic[8] = {'G', 'F', 'B', 'C', 'K', 'P', 'T', '1'};

json param_entries(std::vector<Param*>& ps) {
  json arr = json::array();
  for (Param* p : ps) arr.push_back({{"name", p->name}, {"shape", p->value.shape}});
  return arr;
}

}  // namespace

void save_checkpoint(SegModel& model, const CheckpointMeta& meta, const std::string& path) {
  std::vector<Param*> enc, head;
  model.encoder_params(enc);
  model.head_params(head);

  json header;
  header["spec"] = json::parse(model.spec().to_json());
  header["meta"] = {{"run_id", meta.run_id},
                    {"config_fingerprint", meta.config_fingerprint},
                    {"corpus_hash", meta.corpus_hash},
                    {"fitted_split", meta.fitted_split},
                    {"subset_manifest_sha", meta.subset_manifest_sha},
                    {"epoch", meta.epoch}};
  header["encoder"] = param_entries(enc);
  header["head"] = param_entries(head);
  const std::string htext = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Err::Io, "cannot write " + path);
  out.write(kCkptMagic, 8);
  const uint64_t hlen = htext.size();
  out.write(reinterpret_cast<const char*>(&hlen), 8);
  out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
  for (const auto* group : {&enc, &head})
    for (Param* p : *group)
      out.write(reinterpret_cast<const char*>(p->value.data()),
                static_cast<std::streamsize>(p->value.size() * sizeof(float)));
  if (!out) fail(Err::Io, "short write to " + path);
}

static json read_checkpoint_header(std::ifstream& in, const std::string& path) {
  char magic[8];
  uint64_t hlen = 0;
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(&hlen), 8);
  if (!in || std::memcmp(magic, kCkptMagic, 8) != 0)
    fail(Err::Io, path + " is not a checkpoint container");
  std::string htext(hlen, '\0');
  in.read(htext.data(), static_cast<std::streamsize>(hlen));
  if (!in) fail(Err::Io, "truncated checkpoint header in " + path);
  json header = json::parse(htext, nullptr, false);
  if (header.is_discarded()) fail(Err::Io, "corrupt checkpoint header in " + path);
  return header;
}

CheckpointMeta load_checkpoint(SegModel& model, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Err::Io, "cannot open " + path);
  json header = read_checkpoint_header(in, path);

  std::vector<Param*> enc, head;
  model.encoder_params(enc);
  model.head_params(head);
  for (const char* section : {"encoder", "head"}) {
    std::vector<Param*>& group = section == std::string("encoder") ? enc : head;
    const json& entries = header.at(section);
    if (entries.size() != group.size())
      fail(Err::Config, "checkpoint " + path + " parameter set does not match the model");
    for (size_t j = 0; j < group.size(); ++j) {
      const json& e = entries[j];
      Param* p = group[j];
      if (e.at("name").get<std::string>() != p->name ||
          e.at("shape").get<std::vector<int>>() != p->value.shape)
        fail(Err::Config, "checkpoint entry '" + e.at("name").get<std::string>() +
                              "' does not match model parameter '" + p->name + "'");
      in.read(reinterpret_cast<char*>(p->value.data()),
              static_cast<std::streamsize>(p->value.size() * sizeof(float)));
    }
  }
  if (!in) fail(Err::Io, "truncated checkpoint payload in " + path);

  const json& m = header.at("meta");
  CheckpointMeta meta;
  meta.run_id = m.value("run_id", std::string{});
  meta.config_fingerprint = m.value("config_fingerprint", std::string{});
  meta.corpus_hash = m.value("corpus_hash", std::string{});
  meta.fitted_split = m.value("fitted_split", std::string{});
  meta.subset_manifest_sha = m.value("subset_manifest_sha", std::string{});
  meta.epoch = m.value("epoch", -1);
  return meta;
}

ModelSpec checkpoint_model_spec(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Err::Io, "cannot open " + path);
  json header = read_checkpoint_header(in, path);
  return ModelSpec::from_json(header.at("spec").dump());
}

void load_encoder_section(SegModel& model, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Err::Io, "cannot open " + path);
  json header = read_checkpoint_header(in, path);

  std::vector<Param*> enc;
  model.encoder_params(enc);
  const json& entries = header.at("encoder");
  if (entries.size() != enc.size())
    fail(Err::Config, "checkpoint " + path + " encoder section does not match the model");
  for (size_t j = 0; j < enc.size(); ++j) {
    const json& e = entries[j];
    Param* p = enc[j];
    if (e.at("name").get<std::string>() != p->name ||
        e.at("shape").get<std::vector<int>>() != p->value.shape)
      fail(Err::Config, "checkpoint encoder entry '" + e.at("name").get<std::string>() +
                            "' does not match model parameter '" + p->name + "'");
    in.read(reinterpret_cast<char*>(p->value.data()),
            static_cast<std::streamsize>(p->value.size() * sizeof(float)));
  }
  if (!in) fail(Err::Io, "truncated checkpoint payload in " + path);
}

}  // namespace gfb
