#include "lego/tensor.hpp"

namespace lego {

std::string shape_str(const std::vector<int>& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

namespace detail {

std::vector<int> broadcast_shape(const std::vector<int>& a, const std::vector<int>& b) {
  const size_t nd = std::max(a.size(), b.size());
  std::vector<int> out(nd);
  for (size_t i = 0; i < nd; ++i) {
    const int da = i < nd - a.size() ? 1 : a[i - (nd - a.size())];
    const int db = i < nd - b.size() ? 1 : b[i - (nd - b.size())];
    if (da != db && da != 1 && db != 1)
      throw std::invalid_argument("shapes not broadcastable: " + shape_str(a) + " vs " +
                                  shape_str(b));
    out[i] = std::max(da, db);
  }
  return out;
}

// Flat strides of `shape` viewed inside broadcast shape `out` (0 on broadcast dims).
static std::vector<int64_t> broadcast_strides(const std::vector<int>& shape,
                                              const std::vector<int>& out) {
  std::vector<int64_t> st(out.size(), 0);
  int64_t stride = 1;
  for (int i = static_cast<int>(shape.size()) - 1; i >= 0; --i) {
    const size_t oi = out.size() - shape.size() + i;
    st[oi] = (shape[i] == 1 && out[oi] != 1) ? 0 : stride;
    stride *= shape[i];
  }
  return st;
}

std::vector<int64_t> index_map(const std::vector<int>& in_shape, const std::vector<int>& out_shape) {
  const auto st = broadcast_strides(in_shape, out_shape);
  int64_t total = 1;
  for (int d : out_shape) total *= d;
  std::vector<int64_t> map(static_cast<size_t>(total));
  std::vector<int> idx(out_shape.size(), 0);
  int64_t cur = 0;
  for (int64_t f = 0; f < total; ++f) {
    map[f] = cur;
    for (int d = static_cast<int>(out_shape.size()) - 1; d >= 0; --d) {
      cur += st[d];
      if (++idx[d] < out_shape[d]) break;
      idx[d] = 0;
      cur -= static_cast<int64_t>(out_shape[d]) * st[d];
    }
  }
  return map;
}

}  // namespace detail

template struct TensorT<float>;
template struct TensorT<double>;
template class TapeT<float>;
template class TapeT<double>;

}  // namespace lego
