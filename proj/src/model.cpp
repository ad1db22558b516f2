#include "lego/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace lego {

namespace {

constexpr float kMaskValue = -1e9f;

int conv_channels(int unit) { return std::min(32, 8 << std::min(unit, 2)); }

// feature map side after the backbone (M pools once after unit 2, S pools
// after every unit)
int feature_side(const ModelConfig& c) {
  if (c.variant == Variant::MultiView) return c.conv_units >= 2 ? c.image_side / 2 : c.image_side;
  int s = c.image_side;
  for (int i = 0; i < c.conv_units; ++i) s /= 2;
  return s;
}

int naive_steps(const ModelConfig& c) {
  const int m = c.grid_side / c.output_patch_side;
  return m * m * m;
}

void write_u32(std::ofstream& f, uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }
void write_i32(std::ofstream& f, int32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }
void write_u8(std::ofstream& f, uint8_t v) { f.write(reinterpret_cast<const char*>(&v), 1); }
void write_f32(std::ofstream& f, float v) { f.write(reinterpret_cast<const char*>(&v), 4); }
uint32_t read_u32(std::ifstream& f) {
  uint32_t v = 0;
  f.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
int32_t read_i32(std::ifstream& f) {
  int32_t v = 0;
  f.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
uint8_t read_u8(std::ifstream& f) {
  uint8_t v = 0;
  f.read(reinterpret_cast<char*>(&v), 1);
  return v;
}
float read_f32(std::ifstream& f) {
  float v = 0;
  f.read(reinterpret_cast<char*>(&v), 4);
  return v;
}

}  // namespace

std::string to_string(Variant v) {
  return v == Variant::MultiView ? "multi-view" : "single-view";
}

std::string to_string(Scheme s) {
  switch (s) {
    case Scheme::Factors: return "factors";
    case Scheme::Naive: return "naive";
    case Scheme::NaiveNar: return "naive-nar";
    case Scheme::NaiveFull: return "naive-full";
  }
  throw std::invalid_argument("unknown scheme");
}

Variant variant_from_string(const std::string& s) {
  if (s == "multi-view" || s == "m") return Variant::MultiView;
  if (s == "single-view" || s == "s") return Variant::SingleView;
  throw std::invalid_argument("unknown variant: " + s);
}

Scheme scheme_from_string(const std::string& s) {
  if (s == "factors") return Scheme::Factors;
  if (s == "naive") return Scheme::Naive;
  if (s == "naive-nar") return Scheme::NaiveNar;
  if (s == "naive-full") return Scheme::NaiveFull;
  throw std::invalid_argument("unknown scheme: " + s);
}

std::string to_string(AttentionKind k) {
  switch (k) {
    case AttentionKind::EncoderEncoder: return "encoder-encoder";
    case AttentionKind::DecoderEncoder: return "decoder-encoder";
    case AttentionKind::DecoderDecoder: return "decoder-decoder";
  }
  throw std::invalid_argument("unknown attention kind");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("model config: " + m); };
  if (grid_side < 2) fail("grid_side must be >= 2");
  if (image_side < 4) fail("image_side must be >= 4");
  if (d_model < 2 || d_model % 2) fail("d_model must be even and >= 2");
  if (ff_dim < 1) fail("ff_dim must be >= 1");
  if (n_layers < 1) fail("n_layers must be >= 1");
  if (n_heads < 1 || d_model % n_heads) fail("d_model must be divisible by n_heads");
  if (n_queries < 1) fail("n_queries must be >= 1");
  if (conv_units < 1) fail("conv_units must be >= 1");
  if (query_std <= 0.f) fail("query_std must be > 0");
  const int fs = feature_side(*this);
  if (fs < 1) fail("conv_units too large for image_side " + std::to_string(image_side));
  if (variant == Variant::SingleView) {
    if (d_model % 4) fail("single-view needs d_model divisible by 4 (2D positional codes)");
    if (patch_side < 1 || fs % patch_side)
      fail("feature side " + std::to_string(fs) + " not divisible by patch_side " +
           std::to_string(patch_side));
  }
  if (scheme == Scheme::Naive || scheme == Scheme::NaiveNar) {
    if (output_patch_side < 1 || grid_side % output_patch_side)
      fail("grid_side must be divisible by output_patch_side");
  }
}

Tensor sincos_positional(int count, int d_model, const std::string& layout) {
  if (count < 1) throw std::invalid_argument("positional count must be >= 1");
  auto code_1d = [](int pos, int d, float* out) {
    for (int j = 0; j < d / 2; ++j) {
      const double freq = std::pow(10000.0, 2.0 * j / d);
      out[2 * j] = static_cast<float>(std::sin(pos / freq));
      out[2 * j + 1] = static_cast<float>(std::cos(pos / freq));
    }
  };
  Tensor out({count, d_model});
  if (layout == "1d") {
    if (d_model % 2) throw std::invalid_argument("1d positional needs even d_model");
    for (int i = 0; i < count; ++i) code_1d(i, d_model, out.data.data() + i * d_model);
  } else if (layout == "2d") {
    if (d_model % 4) throw std::invalid_argument("2d positional needs d_model divisible by 4");
    const int g = static_cast<int>(std::lround(std::sqrt(static_cast<double>(count))));
    if (g * g != count) throw std::invalid_argument("2d positional needs a square count");
    const int half = d_model / 2;
    for (int r = 0; r < g; ++r)
      for (int c = 0; c < g; ++c) {
        float* row = out.data.data() + (r * g + c) * d_model;
        code_1d(r, half, row);
        code_1d(c, half, row + half);
      }
  } else {
    throw std::invalid_argument("positional layout must be 1d or 2d, got " + layout);
  }
  return out;
}

std::vector<int64_t> patch_scatter_indices(int n, int s) {
  const int m = n / s;
  std::vector<int64_t> idx(static_cast<size_t>(n) * n * n);
  size_t q = 0;
  for (int pz = 0; pz < m; ++pz)
    for (int py = 0; py < m; ++py)
      for (int px = 0; px < m; ++px)
        for (int wz = 0; wz < s; ++wz)
          for (int wy = 0; wy < s; ++wy)
            for (int wx = 0; wx < s; ++wx)
              idx[q++] = (static_cast<int64_t>(pz * s + wz) * n + (py * s + wy)) * n + (px * s + wx);
  return idx;
}

std::vector<int64_t> patch_gather_indices(int n, int s) {
  const auto inv = patch_scatter_indices(n, s);
  std::vector<int64_t> idx(inv.size());
  for (size_t q = 0; q < inv.size(); ++q) idx[inv[q]] = static_cast<int64_t>(q);
  return idx;
}

Model::Model(const ModelConfig& cfg, uint32_t seed) : cfg_(cfg) {
  cfg_.validate();
  build(seed);
}

Model::Model(const ModelConfig& cfg, std::map<std::string, Tensor> weights) : cfg_(cfg) {
  cfg_.validate();
  build(0);
  for (auto& [name, t] : params_) {
    auto it = weights.find(name);
    if (it == weights.end()) throw std::runtime_error("checkpoint missing parameter " + name);
    if (it->second.shape != t.shape)
      throw std::runtime_error("checkpoint shape mismatch for " + name + ": expected " +
                               shape_str(t.shape) + ", got " + shape_str(it->second.shape));
    t = std::move(it->second);
  }
}

void Model::build(uint32_t seed) {
  std::mt19937 rng(seed);
  auto linear_init = [&](const std::string& w, const std::string& b, int fan_in, int fan_out) {
    params_[w] = Tensor::randn({fan_in, fan_out}, rng, 0.f, 1.f / std::sqrt((float)fan_in));
    params_[b] = Tensor({fan_out});
  };
  auto ln_init = [&](const std::string& prefix, int d) {
    params_[prefix + ".g"] = Tensor({d}, 1.f);
    params_[prefix + ".b"] = Tensor({d});
  };

  // backbone
  int in_ch = 1;
  for (int i = 0; i < cfg_.conv_units; ++i) {
    const int out_ch = conv_channels(i);
    params_["backbone.conv" + std::to_string(i) + ".w"] =
        Tensor::randn({out_ch, in_ch, 3, 3}, rng, 0.f, std::sqrt(2.f / (in_ch * 9)));
    params_["backbone.conv" + std::to_string(i) + ".b"] = Tensor({out_ch});
    ln_init("backbone.norm" + std::to_string(i), out_ch);
    in_ch = out_ch;
  }
  const int fs = feature_side(cfg_);
  if (cfg_.variant == Variant::MultiView) {
    linear_init("backbone.proj.w", "backbone.proj.b", in_ch * fs * fs, cfg_.d_model);
  } else {
    linear_init("backbone.proj.w", "backbone.proj.b", in_ch * cfg_.patch_side * cfg_.patch_side,
                cfg_.d_model);
  }

  auto attn_init = [&](const std::string& prefix) {
    for (const char* n : {"wq", "wk", "wv", "wo"})
      linear_init(prefix + "." + n, prefix + "." + n + "b", cfg_.d_model, cfg_.d_model);
  };
  auto layer_init = [&](const std::string& prefix, bool decoder) {
    ln_init(prefix + ".ln1", cfg_.d_model);
    attn_init(prefix + ".self");
    if (decoder) {
      ln_init(prefix + ".ln2", cfg_.d_model);
      attn_init(prefix + ".cross");
      ln_init(prefix + ".ln3", cfg_.d_model);
    } else {
      ln_init(prefix + ".ln2", cfg_.d_model);
    }
    linear_init(prefix + ".ff.w1", prefix + ".ff.b1", cfg_.d_model, cfg_.ff_dim);
    linear_init(prefix + ".ff.w2", prefix + ".ff.b2", cfg_.ff_dim, cfg_.d_model);
  };
  const int stacks = cfg_.share_layer_weights ? 1 : cfg_.n_layers;
  for (int l = 0; l < stacks; ++l) {
    layer_init(layer_prefix("enc", l), false);
    layer_init(layer_prefix("dec", l), true);
  }
  ln_init("enc.final", cfg_.d_model);
  ln_init("dec.final", cfg_.d_model);

  // queries and output heads
  switch (cfg_.scheme) {
    case Scheme::Factors: {
      params_["queries.q"] =
          Tensor::randn({cfg_.n_queries, cfg_.d_model}, rng, cfg_.query_mean, cfg_.query_std);
      for (const char* ax : {"z", "y", "x"}) {
        linear_init(std::string("heads.w") + ax, std::string("heads.b") + ax, cfg_.d_model,
                    cfg_.grid_side);
        // Start each factor dim (sigmoid(-2)^3 per voxel) so the clipped sum
        // of many parts does not begin saturated: with zero bias every part
        // contributes 0.5^3 and at 8 queries the sum sits on the clip
        // boundary, where the zero subgradient stalls learning on empty
        // voxels.
        for (auto& v : params_[std::string("heads.b") + ax].data) v = -2.f;
      }
      break;
    }
    case Scheme::Naive: {
      const int s3 = cfg_.output_patch_side * cfg_.output_patch_side * cfg_.output_patch_side;
      params_["embed.start"] =
          Tensor::randn({1, cfg_.d_model}, rng, cfg_.query_mean, cfg_.query_std);
      linear_init("embed.patch.w", "embed.patch.b", s3, cfg_.d_model);
      linear_init("head.w", "head.b", cfg_.d_model, s3);
      break;
    }
    case Scheme::NaiveNar: {
      const int s3 = cfg_.output_patch_side * cfg_.output_patch_side * cfg_.output_patch_side;
      params_["queries.q"] =
          Tensor::randn({naive_steps(cfg_), cfg_.d_model}, rng, cfg_.query_mean, cfg_.query_std);
      linear_init("head.w", "head.b", cfg_.d_model, s3);
      break;
    }
    case Scheme::NaiveFull: {
      params_["queries.q"] =
          Tensor::randn({1, cfg_.d_model}, rng, cfg_.query_mean, cfg_.query_std);
      linear_init("head.w", "head.b", cfg_.d_model,
                  cfg_.grid_side * cfg_.grid_side * cfg_.grid_side);
      break;
    }
  }
}

std::string Model::layer_prefix(const std::string& stack, int layer) const {
  return stack + "." + (cfg_.share_layer_weights ? "s" : std::to_string(layer));
}

int64_t Model::parameter_count() const {
  int64_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

int64_t parameter_count(const ModelConfig& cfg) { return Model(cfg, 0).parameter_count(); }

Tensor Model::p(Tape& tape, const std::string& name) {
  if (tape.id() != tape_id_) {
    tape_id_ = tape.id();
    watched_.clear();
  }
  auto it = watched_.find(name);
  if (it != watched_.end()) return it->second;
  auto pit = params_.find(name);
  if (pit == params_.end()) throw std::logic_error("unknown parameter " + name);
  Tensor t = tape.watch(pit->second);
  watched_.emplace(name, t);
  return t;
}

Tensor Model::backbone_features(Tape& tape, const Tensor& view) {
  if (view.dim() != 3 || view.shape[0] != 1 || view.shape[1] != cfg_.image_side ||
      view.shape[2] != cfg_.image_side)
    throw std::invalid_argument("view must be [1," + std::to_string(cfg_.image_side) + "," +
                                std::to_string(cfg_.image_side) + "], got " +
                                shape_str(view.shape));
  Tensor x = view;
  for (int i = 0; i < cfg_.conv_units; ++i) {
    const std::string si = std::to_string(i);
    x = tape.conv2d(x, p(tape, "backbone.conv" + si + ".w"), p(tape, "backbone.conv" + si + ".b"),
                    1, 1);
    // normalize over channels at each pixel, per-channel affine
    Tensor t = tape.transpose(x, {1, 2, 0});
    t = tape.layer_norm(t, p(tape, "backbone.norm" + si + ".g"),
                        p(tape, "backbone.norm" + si + ".b"), 1e-5f);
    x = tape.relu(tape.transpose(t, {2, 0, 1}));
    const bool pool =
        cfg_.variant == Variant::SingleView || (i == 1 && cfg_.conv_units >= 2);
    if (pool) x = tape.maxpool2(x);
  }
  return x;  // [C, fs, fs]
}

Tensor Model::embed_views(Tape& tape, const std::vector<Tensor>& views) {
  if (cfg_.variant != Variant::MultiView)
    throw std::invalid_argument("embed_views requires the multi-view variant");
  if (views.empty()) throw std::invalid_argument("embed_views needs at least one view");
  std::vector<Tensor> tokens;
  for (const Tensor& v : views) {
    Tensor f = backbone_features(tape, v);
    Tensor flat = tape.reshape(f, {1, static_cast<int>(f.numel())});
    tokens.push_back(
        tape.add(tape.matmul(flat, p(tape, "backbone.proj.w")), p(tape, "backbone.proj.b")));
  }
  return tokens.size() == 1 ? tokens[0] : tape.concat(tokens, 0);  // [v, d_model]
}

Tensor Model::embed_patches(Tape& tape, const Tensor& view) {
  if (cfg_.variant != Variant::SingleView)
    throw std::invalid_argument("embed_patches requires the single-view variant");
  Tensor f = backbone_features(tape, view);  // [C, fs, fs]
  const int C = f.shape[0], fs = f.shape[1], ps = cfg_.patch_side;
  const int g = fs / ps, t = g * g, pd = C * ps * ps;
  std::vector<int64_t> idx;
  idx.reserve(static_cast<size_t>(t) * pd);
  for (int pr = 0; pr < g; ++pr)
    for (int pc = 0; pc < g; ++pc)
      for (int c = 0; c < C; ++c)
        for (int y = 0; y < ps; ++y)
          for (int x = 0; x < ps; ++x)
            idx.push_back((static_cast<int64_t>(c) * fs + (pr * ps + y)) * fs + (pc * ps + x));
  Tensor patches = tape.gather(f, idx, {t, pd});
  Tensor tokens =
      tape.add(tape.matmul(patches, p(tape, "backbone.proj.w")), p(tape, "backbone.proj.b"));
  return tape.add(tokens, sincos_positional(t, cfg_.d_model, "2d"));
}

Tensor Model::attention_block(Tape& tape, const Tensor& q_in, const Tensor& kv_in,
                              const std::string& prefix, const Tensor* mask, AttentionKind kind,
                              int layer, std::vector<AttentionRecord>* cap) {
  const int h = cfg_.n_heads, d = cfg_.d_model, dh = d / h;
  const int tq = q_in.shape[0], tk = kv_in.shape[0];
  auto proj = [&](const Tensor& x, const char* n) {
    return tape.add(tape.matmul(x, p(tape, prefix + "." + n)), p(tape, prefix + "." + n + "b"));
  };
  Tensor q = tape.transpose(tape.reshape(proj(q_in, "wq"), {tq, h, dh}), {1, 0, 2});
  Tensor k = tape.transpose(tape.reshape(proj(kv_in, "wk"), {tk, h, dh}), {1, 0, 2});
  Tensor v = tape.transpose(tape.reshape(proj(kv_in, "wv"), {tk, h, dh}), {1, 0, 2});
  Tensor scores = tape.scale(tape.matmul(q, tape.transpose(k, {0, 2, 1})),
                             1.f / std::sqrt(static_cast<float>(dh)));  // [h, tq, tk]
  if (mask) scores = tape.masked_fill(scores, *mask, kMaskValue);
  Tensor probs = tape.softmax(scores, 2);
  // exact zeros at masked entries; a fully masked row becomes all-zero
  if (mask) probs = tape.masked_fill(probs, *mask, 0.f);
  if (cap) {
    for (int head = 0; head < h; ++head) {
      AttentionRecord rec;
      rec.kind = kind;
      rec.layer = layer;
      rec.head = head;
      rec.rows = tq;
      rec.cols = tk;
      const float* base = probs.data.data() + static_cast<size_t>(head) * tq * tk;
      rec.scores.assign(base, base + static_cast<size_t>(tq) * tk);
      cap->push_back(std::move(rec));
    }
  }
  Tensor ctx = tape.reshape(tape.transpose(tape.matmul(probs, v), {1, 0, 2}), {tq, d});
  return proj(ctx, "wo");
}

Tensor Model::ff_block(Tape& tape, const Tensor& x, const std::string& prefix) {
  Tensor hidden =
      tape.relu(tape.add(tape.matmul(x, p(tape, prefix + ".ff.w1")), p(tape, prefix + ".ff.b1")));
  return tape.add(tape.matmul(hidden, p(tape, prefix + ".ff.w2")), p(tape, prefix + ".ff.b2"));
}

Tensor Model::encode(Tape& tape, const Tensor& tokens, std::vector<AttentionRecord>* cap) {
  Tensor x = tokens;
  for (int l = 0; l < cfg_.n_layers; ++l) {
    const std::string pre = layer_prefix("enc", l);
    Tensor a = tape.layer_norm(x, p(tape, pre + ".ln1.g"), p(tape, pre + ".ln1.b"), 1e-5f);
    x = tape.add(x, attention_block(tape, a, a, pre + ".self", nullptr,
                                    AttentionKind::EncoderEncoder, l, cap));
    Tensor b = tape.layer_norm(x, p(tape, pre + ".ln2.g"), p(tape, pre + ".ln2.b"), 1e-5f);
    x = tape.add(x, ff_block(tape, b, pre));
  }
  return tape.layer_norm(x, p(tape, "enc.final.g"), p(tape, "enc.final.b"), 1e-5f);
}

Tensor Model::decode(Tape& tape, const Tensor& memory, const Tensor& queries, bool causal,
                     std::vector<AttentionRecord>* cap) {
  const int k = queries.shape[0];
  Tensor mask({k, k});
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j)
      mask.data[i * k + j] = causal ? (j > i ? 1.f : 0.f) : (i == j ? 1.f : 0.f);
  Tensor x = queries;
  for (int l = 0; l < cfg_.n_layers; ++l) {
    const std::string pre = layer_prefix("dec", l);
    Tensor a = tape.layer_norm(x, p(tape, pre + ".ln1.g"), p(tape, pre + ".ln1.b"), 1e-5f);
    x = tape.add(x, attention_block(tape, a, a, pre + ".self", &mask,
                                    AttentionKind::DecoderDecoder, l, cap));
    Tensor b = tape.layer_norm(x, p(tape, pre + ".ln2.g"), p(tape, pre + ".ln2.b"), 1e-5f);
    x = tape.add(x, attention_block(tape, b, memory, pre + ".cross", nullptr,
                                    AttentionKind::DecoderEncoder, l, cap));
    Tensor c = tape.layer_norm(x, p(tape, pre + ".ln3.g"), p(tape, pre + ".ln3.b"), 1e-5f);
    x = tape.add(x, ff_block(tape, c, pre));
  }
  return tape.layer_norm(x, p(tape, "dec.final.g"), p(tape, "dec.final.b"), 1e-5f);
}

Tensor Model::tokens_for(Tape& tape, const std::vector<Tensor>& views) {
  if (cfg_.variant == Variant::MultiView) return embed_views(tape, views);
  if (views.size() != 1)
    throw std::invalid_argument("single-view variant takes exactly one view, got " +
                                std::to_string(views.size()));
  return embed_patches(tape, views[0]);
}

ForwardResult Model::forward(Tape& tape, const std::vector<Tensor>& views,
                             const ForwardOptions& opts) {
  ForwardResult res;
  std::vector<AttentionRecord>* cap = opts.capture ? &res.attention : nullptr;
  Tensor memory = encode(tape, tokens_for(tape, views), cap);
  const int n = cfg_.grid_side;
  const int s = cfg_.output_patch_side, s3 = s * s * s;

  switch (cfg_.scheme) {
    case Scheme::Factors: {
      Tensor queries = tape.add(p(tape, "queries.q"),
                                sincos_positional(cfg_.n_queries, cfg_.d_model, "1d"));
      Tensor dec = decode(tape, memory, queries, false, cap);
      FactorHeads heads{p(tape, "heads.wz"), p(tape, "heads.wy"), p(tape, "heads.wx"),
                        p(tape, "heads.bz"), p(tape, "heads.by"), p(tape, "heads.bx")};
      res.factors = apply_factor_heads(tape, dec, heads, &res.tracked_z, &res.tracked_y,
                                       &res.tracked_x);
      res.pred = tape.compose_clipped(res.tracked_z, res.tracked_y, res.tracked_x);
      break;
    }
    case Scheme::NaiveFull: {
      Tensor dec = decode(tape, memory, p(tape, "queries.q"), false, cap);
      Tensor flat =
          tape.sigmoid(tape.add(tape.matmul(dec, p(tape, "head.w")), p(tape, "head.b")));
      res.pred = tape.reshape(flat, {n, n, n});
      break;
    }
    case Scheme::NaiveNar: {
      const int m = naive_steps(cfg_);
      Tensor queries =
          tape.add(p(tape, "queries.q"), sincos_positional(m, cfg_.d_model, "1d"));
      Tensor dec = decode(tape, memory, queries, false, cap);
      Tensor patches =
          tape.sigmoid(tape.add(tape.matmul(dec, p(tape, "head.w")), p(tape, "head.b")));
      res.pred = tape.gather(tape.reshape(patches, {m * s3}), patch_gather_indices(n, s),
                             {n, n, n});
      break;
    }
    case Scheme::Naive: {
      const int m = naive_steps(cfg_);
      const Tensor pos = sincos_positional(m, cfg_.d_model, "1d");
      auto pos_row = [&](int i) {
        return Tensor({1, cfg_.d_model},
                      std::vector<float>(pos.data.begin() + static_cast<size_t>(i) * cfg_.d_model,
                                         pos.data.begin() +
                                             static_cast<size_t>(i + 1) * cfg_.d_model));
      };
      if (opts.teacher) {
        if (opts.teacher->side != n)
          throw std::invalid_argument("teacher grid side mismatch");
        // teacher forcing: one parallel decode over ground-truth patch inputs
        const auto split = patch_scatter_indices(n, s);
        std::vector<Tensor> rows{tape.add(p(tape, "embed.start"), pos_row(0))};
        for (int i = 1; i < m; ++i) {
          std::vector<float> patch(s3);
          for (int j = 0; j < s3; ++j)
            patch[j] = opts.teacher->values[split[static_cast<size_t>(i - 1) * s3 + j]];
          Tensor emb = tape.add(tape.matmul(Tensor({1, s3}, patch), p(tape, "embed.patch.w")),
                                p(tape, "embed.patch.b"));
          rows.push_back(tape.add(emb, pos_row(i)));
        }
        Tensor dec = decode(tape, memory, tape.concat(rows, 0), true, cap);
        Tensor patches =
            tape.sigmoid(tape.add(tape.matmul(dec, p(tape, "head.w")), p(tape, "head.b")));
        res.pred = tape.gather(tape.reshape(patches, {m * s3}), patch_gather_indices(n, s),
                               {n, n, n});
      } else {
        // free-running generation, re-decoding the growing sequence each step
        std::vector<Tensor> rows{tape.add(p(tape, "embed.start"), pos_row(0))};
        std::vector<Tensor> out_patches;
        for (int i = 0; i < m; ++i) {
          const bool last = i + 1 == m;
          Tensor dec = decode(tape, memory, rows.size() == 1 ? rows[0] : tape.concat(rows, 0),
                              true, last ? cap : nullptr);
          std::vector<int64_t> idx(cfg_.d_model);
          for (int j = 0; j < cfg_.d_model; ++j)
            idx[j] = static_cast<int64_t>(i) * cfg_.d_model + j;
          Tensor lastrow = tape.gather(dec, idx, {1, cfg_.d_model});
          Tensor patch = tape.sigmoid(
              tape.add(tape.matmul(lastrow, p(tape, "head.w")), p(tape, "head.b")));
          out_patches.push_back(patch);
          if (!last) {
            Tensor emb = tape.add(tape.matmul(patch, p(tape, "embed.patch.w")),
                                  p(tape, "embed.patch.b"));
            rows.push_back(tape.add(emb, pos_row(i + 1)));
          }
        }
        res.pred = tape.gather(tape.reshape(tape.concat(out_patches, 0), {m * s3}),
                               patch_gather_indices(n, s), {n, n, n});
      }
      break;
    }
  }

  res.grid = OccupancyGrid(n);
  res.grid.values = res.pred.data;
  return res;
}

void save_lgfc(const std::string& path, const ModelConfig& cfg,
               const std::map<std::string, Tensor>& tensors) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f.write("LGFC", 4);
  write_u32(f, 1);  // format version
  write_i32(f, cfg.grid_side);
  write_i32(f, cfg.image_side);
  write_i32(f, cfg.d_model);
  write_i32(f, cfg.ff_dim);
  write_i32(f, cfg.n_layers);
  write_i32(f, cfg.n_heads);
  write_i32(f, cfg.n_queries);
  write_u8(f, cfg.variant == Variant::MultiView ? 0 : 1);
  write_u8(f, static_cast<uint8_t>(cfg.scheme));
  write_i32(f, cfg.conv_units);
  write_i32(f, cfg.patch_side);
  write_i32(f, cfg.output_patch_side);
  write_u8(f, cfg.share_layer_weights ? 1 : 0);
  write_f32(f, cfg.query_mean);
  write_f32(f, cfg.query_std);
  write_u32(f, static_cast<uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    write_u32(f, static_cast<uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(f, static_cast<uint32_t>(t.dim()));
    for (int d : t.shape) write_u32(f, static_cast<uint32_t>(d));
    f.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

std::pair<ModelConfig, std::map<std::string, Tensor>> load_lgfc(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "LGFC", 4) != 0)
    throw std::runtime_error("bad checkpoint magic in " + path);
  const uint32_t version = read_u32(f);
  if (version != 1)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  ModelConfig cfg;
  cfg.grid_side = read_i32(f);
  cfg.image_side = read_i32(f);
  cfg.d_model = read_i32(f);
  cfg.ff_dim = read_i32(f);
  cfg.n_layers = read_i32(f);
  cfg.n_heads = read_i32(f);
  cfg.n_queries = read_i32(f);
  cfg.variant = read_u8(f) == 0 ? Variant::MultiView : Variant::SingleView;
  cfg.scheme = static_cast<Scheme>(read_u8(f));
  cfg.conv_units = read_i32(f);
  cfg.patch_side = read_i32(f);
  cfg.output_patch_side = read_i32(f);
  cfg.share_layer_weights = read_u8(f) != 0;
  cfg.query_mean = read_f32(f);
  cfg.query_std = read_f32(f);
  if (!f) throw std::runtime_error("truncated checkpoint header in " + path);
  cfg.validate();
  const uint32_t count = read_u32(f);
  std::map<std::string, Tensor> tensors;
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t len = read_u32(f);
    if (!f || len > 4096) throw std::runtime_error("bad tensor name in " + path);
    std::string name(len, '\0');
    f.read(name.data(), len);
    const uint32_t rank = read_u32(f);
    if (!f || rank > 8) throw std::runtime_error("bad tensor rank in " + path);
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(read_u32(f));
    Tensor t(shape);
    f.read(reinterpret_cast<char*>(t.data.data()),
           static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!f) throw std::runtime_error("truncated tensor payload in " + path);
    tensors.emplace(std::move(name), std::move(t));
  }
  return {cfg, std::move(tensors)};
}

}  // namespace lego
