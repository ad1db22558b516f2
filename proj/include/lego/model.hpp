#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lego/tensor.hpp"
#include "lego/voxel.hpp"

namespace lego {

enum class Variant { MultiView, SingleView };
enum class Scheme { Factors, Naive, NaiveNar, NaiveFull };

std::string to_string(Variant v);
std::string to_string(Scheme s);
Variant variant_from_string(const std::string& s);
Scheme scheme_from_string(const std::string& s);

struct ModelConfig {
  int grid_side = 16;
  int image_side = 32;
  int d_model = 64;
  int ff_dim = 128;
  int n_layers = 2;
  int n_heads = 4;
  int n_queries = 8;
  Variant variant = Variant::MultiView;
  Scheme scheme = Scheme::Factors;
  int conv_units = 3;        // M default; S uses fewer with a pool per unit
  int patch_side = 4;        // single-view token patch size on the feature map
  int output_patch_side = 4; // naive/naive-nar 3D patch side
  bool share_layer_weights = false;
  float query_mean = 0.f;
  float query_std = 1.f;

  void validate() const;  // throws std::invalid_argument
  bool operator==(const ModelConfig&) const = default;
};

enum class AttentionKind { EncoderEncoder, DecoderEncoder, DecoderDecoder };

std::string to_string(AttentionKind k);

/// Post-softmax score matrix of one head; masked entries are exactly zero.
struct AttentionRecord {
  AttentionKind kind;
  int layer = 0;
  int head = 0;
  int rows = 0, cols = 0;
  std::vector<float> scores;  // row-major [rows, cols]
};

/// sin/cos positional codes. 1d: pair j of position pos is
/// (sin(pos/10000^(2j/d)), cos(...)). 2d: count must be a perfect square;
/// first d/2 channels encode the row index, the rest the column index.
Tensor sincos_positional(int count, int d_model, const std::string& layout);

struct ForwardOptions {
  bool capture = false;
  // ground-truth grid for teacher forcing (naive scheme training)
  const OccupancyGrid* teacher = nullptr;
};

struct ForwardResult {
  Tensor pred;            // tracked [N,N,N] occupancy, values in [0,1]
  OccupancyGrid grid;     // detached copy of pred
  FactorSet factors;      // scheme == Factors only
  std::vector<Tensor> tracked_z, tracked_y, tracked_x;  // per-factor, tracked
  std::vector<AttentionRecord> attention;
};

class Model {
 public:
  Model(const ModelConfig& cfg, uint32_t seed);
  Model(const ModelConfig& cfg, std::map<std::string, Tensor> weights);

  const ModelConfig& config() const { return cfg_; }
  std::map<std::string, Tensor>& params() { return params_; }
  const std::map<std::string, Tensor>& params() const { return params_; }
  int64_t parameter_count() const;

  /// One token per view, no positional encoding (multi-view variant).
  Tensor embed_views(Tape& tape, const std::vector<Tensor>& views);
  /// (feature_side/p)^2 tokens plus 2D positional codes (single-view variant).
  Tensor embed_patches(Tape& tape, const Tensor& view);
  Tensor encode(Tape& tape, const Tensor& tokens, std::vector<AttentionRecord>* cap = nullptr);
  /// Decoder stack over `queries` with diagonal (anti-self) or causal masking.
  Tensor decode(Tape& tape, const Tensor& memory, const Tensor& queries, bool causal,
                std::vector<AttentionRecord>* cap = nullptr);

  ForwardResult forward(Tape& tape, const std::vector<Tensor>& views,
                        const ForwardOptions& opts = {});

 private:
  Tensor tokens_for(Tape& tape, const std::vector<Tensor>& views);
  Tensor backbone_features(Tape& tape, const Tensor& view);
  Tensor attention_block(Tape& tape, const Tensor& q_in, const Tensor& kv_in,
                         const std::string& prefix, const Tensor* mask, AttentionKind kind,
                         int layer, std::vector<AttentionRecord>* cap);
  Tensor ff_block(Tape& tape, const Tensor& x, const std::string& prefix);
  std::string layer_prefix(const std::string& stack, int layer) const;
  Tensor p(Tape& tape, const std::string& name);  // watch-once parameter lookup

  void build(uint32_t seed);

  ModelConfig cfg_;
  std::map<std::string, Tensor> params_;
  // per-tape watch cache so each parameter is watched once per pass
  uint64_t tape_id_ = 0;
  std::map<std::string, Tensor> watched_;
};

int64_t parameter_count(const ModelConfig& cfg);

// Checkpoint format: magic "LGFC", u32 version, serialized config, then each
// named tensor: u32 name length, name bytes, u32 rank, u32 dims, float payload.
// Everything little-endian.
void save_lgfc(const std::string& path, const ModelConfig& cfg,
               const std::map<std::string, Tensor>& tensors);
std::pair<ModelConfig, std::map<std::string, Tensor>> load_lgfc(const std::string& path);

// Patch raster helpers shared by the naive schemes (z-major patch grid,
// z-major within each patch).
std::vector<int64_t> patch_gather_indices(int n, int s);    // grid index -> patch-flat index
std::vector<int64_t> patch_scatter_indices(int n, int s);   // patch-flat index -> grid index

}  // namespace lego
