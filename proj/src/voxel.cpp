#include "lego/voxel.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "lego/kernels.hpp"

namespace lego {

bool OccupancyGrid::is_binary() const {
  for (float v : values)
    if (v != 0.f && v != 1.f) return false;
  return true;
}

int64_t OccupancyGrid::count_occupied() const {
  int64_t n = 0;
  for (float v : values) n += v > 0.5f;
  return n;
}

void FactorSet::validate() const {
  if (count() < 1) throw std::invalid_argument("factor set must contain at least one triplet");
  if (y.size() != z.size() || x.size() != z.size())
    throw std::invalid_argument("factor set component counts disagree");
  for (int i = 0; i < count(); ++i) {
    if (static_cast<int>(z[i].size()) != side || static_cast<int>(y[i].size()) != side ||
        static_cast<int>(x[i].size()) != side)
      throw std::invalid_argument("factor " + std::to_string(i) + " length does not match side " +
                                  std::to_string(side));
    for (const auto* vec : {&z[i], &y[i], &x[i]})
      for (float v : *vec)
        if (!(v >= 0.f && v <= 1.f))
          throw std::invalid_argument("factor entry " + std::to_string(v) + " outside [0,1]");
  }
}

FactorSet apply_factor_heads(Tape& tape, const Tensor& decoder_output, const FactorHeads& heads,
                             std::vector<Tensor>* tracked_z, std::vector<Tensor>* tracked_y,
                             std::vector<Tensor>* tracked_x) {
  if (decoder_output.dim() != 2)
    throw std::invalid_argument("apply_factor_heads expects [k, d_model], got " +
                                shape_str(decoder_output.shape));
  const int d_model = decoder_output.shape[1];
  if (heads.wz.shape[0] != d_model || heads.wy.shape[0] != d_model || heads.wx.shape[0] != d_model)
    throw std::invalid_argument("factor head input size does not match d_model " +
                                std::to_string(d_model));
  const int k = decoder_output.shape[0];
  const int n = heads.wz.shape[1];
  FactorSet out;
  out.side = n;
  Tensor fz = tape.sigmoid(tape.add(tape.matmul(decoder_output, heads.wz), heads.bz));
  Tensor fy = tape.sigmoid(tape.add(tape.matmul(decoder_output, heads.wy), heads.by));
  Tensor fx = tape.sigmoid(tape.add(tape.matmul(decoder_output, heads.wx), heads.bx));
  for (int i = 0; i < k; ++i) {
    std::vector<int64_t> idx(n);
    for (int j = 0; j < n; ++j) idx[j] = static_cast<int64_t>(i) * n + j;
    Tensor zi = tape.gather(fz, idx, {n});
    Tensor yi = tape.gather(fy, idx, {n});
    Tensor xi = tape.gather(fx, idx, {n});
    out.z.push_back(zi.data);
    out.y.push_back(yi.data);
    out.x.push_back(xi.data);
    if (tracked_z) tracked_z->push_back(zi);
    if (tracked_y) tracked_y->push_back(yi);
    if (tracked_x) tracked_x->push_back(xi);
  }
  return out;
}

OccupancyGrid compose_factors(const FactorSet& f) {
  f.validate();
  OccupancyGrid g(f.side, 0.f);
  std::vector<float> zs, ys, xs;
  for (int i = 0; i < f.count(); ++i) {
    zs.insert(zs.end(), f.z[i].begin(), f.z[i].end());
    ys.insert(ys.end(), f.y[i].begin(), f.y[i].end());
    xs.insert(xs.end(), f.x[i].begin(), f.x[i].end());
  }
  kernels::rank1_accumulate(zs.data(), ys.data(), xs.data(), f.count(), f.side, g.values.data(),
                            true);
  return g;
}

OccupancyGrid rank1_grid(const std::vector<float>& z, const std::vector<float>& y,
                         const std::vector<float>& x) {
  const int n = static_cast<int>(z.size());
  OccupancyGrid g(n, 0.f);
  kernels::rank1_accumulate(z.data(), y.data(), x.data(), 1, n, g.values.data(), false);
  return g;
}

float mse_loss(const OccupancyGrid& p, const OccupancyGrid& g) {
  if (p.side != g.side)
    throw std::invalid_argument("mse_loss side mismatch: " + std::to_string(p.side) + " vs " +
                                std::to_string(g.side));
  double acc = 0.0;
  for (size_t i = 0; i < p.values.size(); ++i) {
    const double d = static_cast<double>(p.values[i]) - g.values[i];
    acc += d * d;
  }
  return static_cast<float>(acc / static_cast<double>(p.values.size()));
}

OccupancyGrid threshold(const OccupancyGrid& p, float tau) {
  if (!(tau > 0.f && tau < 1.f))
    throw std::invalid_argument("threshold tau must lie in (0,1), got " + std::to_string(tau));
  OccupancyGrid out(p.side);
  for (size_t i = 0; i < p.values.size(); ++i) out.values[i] = p.values[i] >= tau ? 1.f : 0.f;
  return out;
}

FactorSet cp_fit_oracle(const OccupancyGrid& g, int k, uint32_t seed, const CpFitOptions& opts) {
  if (k < 1) throw std::invalid_argument("cp_fit_oracle needs k >= 1");
  const int n = g.side;
  Tensor target({n, n, n}, g.values);

  float best_loss = std::numeric_limits<float>::max();
  std::vector<Tensor> best;
  for (int r = 0; r < opts.restarts; ++r) {
    std::mt19937 rng(seed + 0x9e3779b9u * static_cast<uint32_t>(r));
    // pre-sigmoid parameters, one [3,n] tensor per factor
    std::vector<Tensor> params;
    for (int i = 0; i < k; ++i) params.push_back(Tensor::randn({3, n}, rng, 0.f, 0.5f));
    for (int it = 0; it < opts.iterations; ++it) {
      Tape tape;
      std::vector<Tensor> tracked, zs, ys, xs;
      for (auto& p : params) {
        Tensor tp = tape.watch(p);
        tracked.push_back(tp);
        std::vector<int64_t> iz(n), iy(n), ix(n);
        for (int j = 0; j < n; ++j) {
          iz[j] = j;
          iy[j] = n + j;
          ix[j] = 2 * n + j;
        }
        zs.push_back(tape.sigmoid(tape.gather(tp, iz, {n})));
        ys.push_back(tape.sigmoid(tape.gather(tp, iy, {n})));
        xs.push_back(tape.sigmoid(tape.gather(tp, ix, {n})));
      }
      Tensor p = tape.compose_clipped(zs, ys, xs);
      Tensor diff = tape.add(p, tape.scale(target, -1.f));
      Tensor loss = tape.mean(tape.mul(diff, diff));
      if (loss.item() < best_loss) {
        best_loss = loss.item();
        best = params;
      }
      tape.backward(loss);
      for (auto& w : tape.watched()) {
        const auto grad = tape.grad_node(w.node);
        for (size_t j = 0; j < w.param->data.size(); ++j)
          w.param->data[j] -= opts.learning_rate * grad[j];
      }
    }
  }
  FactorSet out;
  out.side = n;
  Tape tape;
  for (auto& p : best) {
    std::vector<int64_t> iz(n), iy(n), ix(n);
    for (int j = 0; j < n; ++j) {
      iz[j] = j;
      iy[j] = n + j;
      ix[j] = 2 * n + j;
    }
    out.z.push_back(tape.sigmoid(tape.gather(p, iz, {n})).data);
    out.y.push_back(tape.sigmoid(tape.gather(p, iy, {n})).data);
    out.x.push_back(tape.sigmoid(tape.gather(p, ix, {n})).data);
  }
  return out;
}

void save_voxg(const std::string& path, const OccupancyGrid& g, bool binary) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f.write("VOXG", 4);
  const uint32_t side = static_cast<uint32_t>(g.side);
  f.write(reinterpret_cast<const char*>(&side), 4);
  const uint8_t flag = binary ? 0 : 1;
  f.write(reinterpret_cast<const char*>(&flag), 1);
  if (binary) {
    std::vector<uint8_t> buf(g.values.size());
    for (size_t i = 0; i < buf.size(); ++i) buf[i] = g.values[i] >= 0.5f ? 1 : 0;
    f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  } else {
    f.write(reinterpret_cast<const char*>(g.values.data()),
            static_cast<std::streamsize>(g.values.size() * sizeof(float)));
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

OccupancyGrid load_voxg(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "VOXG", 4) != 0)
    throw std::runtime_error("bad voxel file magic in " + path);
  uint32_t side = 0;
  f.read(reinterpret_cast<char*>(&side), 4);
  uint8_t flag = 0;
  f.read(reinterpret_cast<char*>(&flag), 1);
  if (!f || side == 0 || flag > 1) throw std::runtime_error("bad voxel header in " + path);
  OccupancyGrid g(static_cast<int>(side));
  if (flag == 0) {
    std::vector<uint8_t> buf(g.values.size());
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    for (size_t i = 0; i < buf.size(); ++i) g.values[i] = buf[i] ? 1.f : 0.f;
  } else {
    f.read(reinterpret_cast<char*>(g.values.data()),
           static_cast<std::streamsize>(g.values.size() * sizeof(float)));
  }
  if (!f) throw std::runtime_error("truncated voxel file: " + path);
  return g;
}

}  // namespace lego
