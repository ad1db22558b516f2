#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lego/tensor.hpp"

namespace lego {

/// N^3 voxel volume, raster order z-major, y-middle, x-minor.
struct OccupancyGrid {
  int side = 0;
  std::vector<float> values;

  OccupancyGrid() = default;
  explicit OccupancyGrid(int n, float fill = 0.f)
      : side(n), values(static_cast<size_t>(n) * n * n, fill) {}

  float& at(int z, int y, int x) { return values[(static_cast<size_t>(z) * side + y) * side + x]; }
  float at(int z, int y, int x) const {
    return values[(static_cast<size_t>(z) * side + y) * side + x];
  }
  bool is_binary() const;
  int64_t count_occupied() const;  // values > 0.5 (binary grids)
};

/// k triplets (z_i, y_i, x_i) of length-N vectors with entries in [0,1].
struct FactorSet {
  int side = 0;
  std::vector<std::vector<float>> z, y, x;

  int count() const { return static_cast<int>(z.size()); }
  void validate() const;  // throws if entries leave [0,1] or sizes disagree
};

/// Per-query projection heads: three N x d_model matrices plus biases.
struct FactorHeads {
  Tensor wz, wy, wx;  // [d_model, N]
  Tensor bz, by, bx;  // [N]
};

/// sigmoid(decoder_output @ W + b) per head; one factor triplet per row of
/// decoder_output [k, d_model].
FactorSet apply_factor_heads(Tape& tape, const Tensor& decoder_output, const FactorHeads& heads,
                             std::vector<Tensor>* tracked_z = nullptr,
                             std::vector<Tensor>* tracked_y = nullptr,
                             std::vector<Tensor>* tracked_x = nullptr);

/// P = min(1, sum_i z_i (x) y_i (x) x_i).
OccupancyGrid compose_factors(const FactorSet& f);

/// Single rank-1 term z (x) y (x) x, unclipped.
OccupancyGrid rank1_grid(const std::vector<float>& z, const std::vector<float>& y,
                         const std::vector<float>& x);

/// (1/N^3) sum (P - G)^2.
float mse_loss(const OccupancyGrid& p, const OccupancyGrid& g);

/// 1 where p >= tau else 0. tau must lie in (0,1).
OccupancyGrid threshold(const OccupancyGrid& p, float tau);

struct CpFitOptions {
  int iterations = 2000;
  float learning_rate = 25.f;
  int restarts = 4;  // independent inits from derived seeds, best loss wins
};

/// Gradient-descent fit of k factors (pre-sigmoid parametrization)
/// minimizing mse_loss(compose_factors(f), g). Deterministic given seed.
/// Test/diagnostic tool; quality is asserted by callers.
FactorSet cp_fit_oracle(const OccupancyGrid& g, int k, uint32_t seed,
                        const CpFitOptions& opts = {});

// Voxel grid file format: magic "VOXG", little-endian u32 side, u8 flag
// (0 = binary bytes, 1 = float32 payload), then N^3 payload in z-major
// raster order.
void save_voxg(const std::string& path, const OccupancyGrid& g, bool binary);
OccupancyGrid load_voxg(const std::string& path);

}  // namespace lego
