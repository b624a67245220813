#include "stemm/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "stemm/errors.hpp"
#include "stemm/rng.hpp"

namespace stemm {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;
template <typename T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

template <typename T>
bool wants_grad(const Node<T>& n, std::size_t i) {
  return n.inputs[i]->requires_grad;
}

template <typename T>
std::vector<T>& in_grad(Node<T>& n, std::size_t i) {
  return n.inputs[i]->grad;
}

template <typename T>
const std::vector<T>& in_value(const Node<T>& n, std::size_t i) {
  return n.inputs[i]->value;
}

template <typename T>
void require_matrix(const Tensor<T>& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + " expects a matrix, got " +
                         shape_string(t.shape()));
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b,
                        const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

template <typename T>
Tensor<T> unary(const Tensor<T>& x, const char* op, T (*f)(T),
                T (*df)(T x, T y)) {
  std::vector<T> out(x.numel());
  auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return detail::make_result<T>(x.shape(), std::move(out), op, {x},
                                [df](Node<T>& n) {
                                  const auto& xv = in_value(n, 0);
                                  auto& gx = in_grad(n, 0);
                                  for (std::size_t i = 0; i < xv.size(); ++i) {
                                    gx[i] += n.grad[i] * df(xv[i], n.value[i]);
                                  }
                                });
}

}  // namespace

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ, " +
                         shape_string(a.shape()) + " · " +
                         shape_string(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<T> out(m * n);
  MapMat<T>(out.data(), m, n).noalias() =
      ConstMapMat<T>(a.data().data(), m, k) *
      ConstMapMat<T>(b.data().data(), k, n);
  return detail::make_result<T>({m, n}, std::move(out), "matmul", {a, b},
                                [m, k, n](Node<T>& node) {
    ConstMapMat<T> g(node.grad.data(), m, n);
    if (wants_grad(node, 0)) {
      MapMat<T>(in_grad(node, 0).data(), m, k).noalias() +=
          g * ConstMapMat<T>(in_value(node, 1).data(), k, n).transpose();
    }
    if (wants_grad(node, 1)) {
      MapMat<T>(in_grad(node, 1).data(), k, n).noalias() +=
          ConstMapMat<T>(in_value(node, 0).data(), m, k).transpose() * g;
    }
  });
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: inner dimensions differ, " +
                         shape_string(a.shape()) + " · " +
                         shape_string(b.shape()) + "ᵀ");
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  std::vector<T> out(m * n);
  MapMat<T>(out.data(), m, n).noalias() =
      ConstMapMat<T>(a.data().data(), m, k) *
      ConstMapMat<T>(b.data().data(), n, k).transpose();
  return detail::make_result<T>({m, n}, std::move(out), "matmul_nt", {a, b},
                                [m, k, n](Node<T>& node) {
    ConstMapMat<T> g(node.grad.data(), m, n);
    if (wants_grad(node, 0)) {
      MapMat<T>(in_grad(node, 0).data(), m, k).noalias() +=
          g * ConstMapMat<T>(in_value(node, 1).data(), n, k);
    }
    if (wants_grad(node, 1)) {
      MapMat<T>(in_grad(node, 1).data(), n, k).noalias() +=
          g.transpose() * ConstMapMat<T>(in_value(node, 0).data(), m, k);
    }
  });
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return detail::make_result<T>(a.shape(), std::move(out), "add", {a, b},
                                [](Node<T>& n) {
    for (std::size_t s = 0; s < 2; ++s) {
      if (!wants_grad(n, s)) continue;
      auto& g = in_grad(n, s);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return detail::make_result<T>(a.shape(), std::move(out), "sub", {a, b},
                                [](Node<T>& n) {
    if (wants_grad(n, 0)) {
      auto& g = in_grad(n, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (wants_grad(n, 1)) {
      auto& g = in_grad(n, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return detail::make_result<T>(a.shape(), std::move(out), "mul", {a, b},
                                [](Node<T>& n) {
    const auto& av = in_value(n, 0);
    const auto& bv = in_value(n, 1);
    if (wants_grad(n, 0)) {
      auto& g = in_grad(n, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * bv[i];
    }
    if (wants_grad(n, 1)) {
      auto& g = in_grad(n, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * av[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.numel());
  auto av = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
  return detail::make_result<T>(a.shape(), std::move(out), "scale", {a},
                                [factor](Node<T>& n) {
    auto& g = in_grad(n, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * factor;
  });
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  require_matrix(x, "add_bias");
  if (bias.numel() != x.cols()) {
    throw DimensionError("add_bias: bias " + shape_string(bias.shape()) +
                         " does not match rows of " + shape_string(x.shape()));
  }
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<T> out(x.data().begin(), x.data().end());
  auto bv = bias.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += bv[j];
  return detail::make_result<T>(x.shape(), std::move(out), "add_bias",
                                {x, bias}, [r, c](Node<T>& n) {
    if (wants_grad(n, 0)) {
      auto& g = in_grad(n, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (wants_grad(n, 1)) {
      auto& g = in_grad(n, 1);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[j] += n.grad[i * c + j];
    }
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary<T>(
      x, "relu", [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  return unary<T>(
      x, "gelu",
      [](T v) {
        return T(0.5) * v * (T(1) + std::erf(v * std::numbers::sqrt2_v<T> / T(2)));
      },
      [](T v, T) {
        const T cdf = T(0.5) * (T(1) + std::erf(v * std::numbers::sqrt2_v<T> / T(2)));
        const T pdf = std::exp(T(-0.5) * v * v) * std::numbers::inv_sqrtpi_v<T> /
                      std::numbers::sqrt2_v<T>;
        return cdf + v * pdf;
      });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return unary<T>(
      x, "exp", [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  return unary<T>(
      x, "log", [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  double acc = 0.0;
  for (T v : x.data()) acc += v;
  return detail::make_result<T>({1}, {static_cast<T>(acc)}, "sum", {x},
                                [](Node<T>& n) {
    auto& g = in_grad(n, 0);
    for (auto& v : g) v += n.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) +
                         " out of range for " + shape_string(x.shape()));
  }
  std::size_t outer = 1, inner = 1;
  const std::size_t len = x.dim(axis);
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  std::vector<T> out(x.numel());
  auto in = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t s = 0; s < inner; ++s) {
      const std::size_t base = o * len * inner + s;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, in[base + j * inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        T e = std::exp(in[base + j * inner] - mx);
        out[base + j * inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < len; ++j)
        out[base + j * inner] = static_cast<T>(out[base + j * inner] / z);
    }
  }
  return detail::make_result<T>(x.shape(), std::move(out), "softmax", {x},
                                [outer, inner, len](Node<T>& n) {
    auto& g = in_grad(n, 0);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t s = 0; s < inner; ++s) {
        const std::size_t base = o * len * inner + s;
        double dot = 0.0;
        for (std::size_t j = 0; j < len; ++j)
          dot += n.grad[base + j * inner] * n.value[base + j * inner];
        for (std::size_t j = 0; j < len; ++j) {
          const std::size_t i = base + j * inner;
          g[i] += n.value[i] * static_cast<T>(n.grad[i] - dot);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x) {
  if (x.rank() == 0) throw DimensionError("log_softmax of a scalar");
  const std::size_t len = x.shape().back();
  const std::size_t outer = len == 0 ? 0 : x.numel() / len;
  std::vector<T> out(x.numel());
  auto in = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    const T* row = in.data() + o * len;
    T mx = *std::max_element(row, row + len);
    double z = 0.0;
    for (std::size_t j = 0; j < len; ++j) z += std::exp(row[j] - mx);
    const T lz = mx + static_cast<T>(std::log(z));
    for (std::size_t j = 0; j < len; ++j) out[o * len + j] = row[j] - lz;
  }
  return detail::make_result<T>(x.shape(), std::move(out), "log_softmax", {x},
                                [outer, len](Node<T>& n) {
    auto& g = in_grad(n, 0);
    for (std::size_t o = 0; o < outer; ++o) {
      const std::size_t base = o * len;
      double gs = 0.0;
      for (std::size_t j = 0; j < len; ++j) gs += n.grad[base + j];
      for (std::size_t j = 0; j < len; ++j) {
        g[base + j] += n.grad[base + j] -
                       static_cast<T>(std::exp(n.value[base + j]) * gs);
      }
    }
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain,
                     const Tensor<T>& bias, T eps) {
  if (x.rank() == 0) throw DimensionError("layer_norm of a scalar");
  const std::size_t d = x.shape().back();
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layer_norm: gain " + shape_string(gain.shape()) +
                         " / bias " + shape_string(bias.shape()) +
                         " do not match feature axis of " +
                         shape_string(x.shape()));
  }
  const std::size_t rows = d == 0 ? 0 : x.numel() / d;
  std::vector<T> out(x.numel());
  std::vector<T> xhat(x.numel());
  std::vector<T> inv_std(rows);
  auto in = x.data();
  auto gv = gain.data(), bv = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = in.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + static_cast<double>(eps));
    inv_std[r] = static_cast<T>(is);
    for (std::size_t j = 0; j < d; ++j) {
      const T h = static_cast<T>((row[j] - mu) * is);
      xhat[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  return detail::make_result<T>(
      x.shape(), std::move(out), "layer_norm", {x, gain, bias},
      [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& n) {
        const auto& gv = in_value(n, 1);
        if (wants_grad(n, 1) || wants_grad(n, 2)) {
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < d; ++j) {
              if (wants_grad(n, 1)) in_grad(n, 1)[j] += n.grad[r * d + j] * xhat[r * d + j];
              if (wants_grad(n, 2)) in_grad(n, 2)[j] += n.grad[r * d + j];
            }
          }
        }
        if (!wants_grad(n, 0)) return;
        auto& gx = in_grad(n, 0);
        for (std::size_t r = 0; r < rows; ++r) {
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double dh = static_cast<double>(n.grad[r * d + j]) * gv[j];
            m1 += dh;
            m2 += dh * xhat[r * d + j];
          }
          m1 /= static_cast<double>(d);
          m2 /= static_cast<double>(d);
          for (std::size_t j = 0; j < d; ++j) {
            const double dh = static_cast<double>(n.grad[r * d + j]) * gv[j];
            gx[r * d + j] += static_cast<T>(
                inv_std[r] * (dh - m1 - xhat[r * d + j] * m2));
          }
        }
      });
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const int> ids) {
  require_matrix(table, "embedding");
  const std::size_t d = table.cols();
  const std::size_t vocab = table.rows();
  std::vector<T> out(ids.size() * d);
  auto tv = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw IndexError("token id " + std::to_string(ids[i]) + " at position " +
                       std::to_string(i) + " outside vocabulary of size " +
                       std::to_string(vocab));
    }
    std::copy_n(tv.begin() + ids[i] * d, d, out.begin() + i * d);
  }
  std::vector<int> saved(ids.begin(), ids.end());
  return detail::make_result<T>({ids.size(), d}, std::move(out), "embedding",
                                {table}, [d, saved = std::move(saved)](Node<T>& n) {
    auto& g = in_grad(n, 0);
    for (std::size_t i = 0; i < saved.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) g[saved[i] * d + j] += n.grad[i * d + j];
  });
}

template <typename T>
Tensor<T> gather_rows(std::span<const Tensor<T>> sources,
                      std::span<const RowRef> refs) {
  if (sources.empty()) throw DimensionError("gather_rows: no sources");
  const std::size_t d = sources.front().cols();
  for (const auto& s : sources) {
    require_matrix(s, "gather_rows");
    if (s.cols() != d) {
      throw DimensionError("gather_rows: source widths differ, " +
                           shape_string(sources.front().shape()) + " vs " +
                           shape_string(s.shape()));
    }
  }
  std::vector<T> out(refs.size() * d, T(0));
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const RowRef& r = refs[i];
    if (r.source < 0) continue;
    if (static_cast<std::size_t>(r.source) >= sources.size() ||
        r.row >= sources[r.source].rows()) {
      throw IndexError("gather_rows: reference (" + std::to_string(r.source) +
                       ", " + std::to_string(r.row) + ") out of range");
    }
    auto sv = sources[r.source].data();
    std::copy_n(sv.begin() + r.row * d, d, out.begin() + i * d);
  }
  std::vector<RowRef> saved(refs.begin(), refs.end());
  std::vector<Tensor<T>> inputs(sources.begin(), sources.end());
  return detail::make_result<T>({refs.size(), d}, std::move(out), "gather_rows",
                                std::move(inputs), [d, saved = std::move(saved)](Node<T>& n) {
    for (std::size_t i = 0; i < saved.size(); ++i) {
      const RowRef& r = saved[i];
      if (r.source < 0 || !wants_grad(n, r.source)) continue;
      auto& g = in_grad(n, r.source);
      for (std::size_t j = 0; j < d; ++j) g[r.row * d + j] += n.grad[i * d + j];
    }
  });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  if (begin > end || end > x.rows()) {
    throw IndexError("slice_rows: [" + std::to_string(begin) + ", " +
                     std::to_string(end) + ") outside " +
                     shape_string(x.shape()));
  }
  std::vector<RowRef> refs;
  refs.reserve(end - begin);
  for (std::size_t r = begin; r < end; ++r) refs.push_back({0, r});
  const Tensor<T> src[] = {x};
  return gather_rows<T>(src, refs);
}

template <typename T>
Tensor<T> concat_rows(std::span<const Tensor<T>> parts) {
  std::vector<RowRef> refs;
  for (std::size_t s = 0; s < parts.size(); ++s)
    for (std::size_t r = 0; r < parts[s].rows(); ++r)
      refs.push_back({static_cast<int>(s), r});
  return gather_rows<T>(parts, refs);
}

// ---------------------------------------------------------------------------

std::size_t conv_out_len(std::size_t len, std::size_t kernel,
                         std::size_t stride, std::size_t padding) {
  if (len + 2 * padding < kernel) return 0;
  return (len + 2 * padding - kernel) / stride + 1;
}

std::vector<std::size_t> ConvGeometry::out_lengths() const {
  std::vector<std::size_t> out;
  out.reserve(lengths.size());
  for (auto l : lengths) out.push_back(conv_out_len(l, kernel, stride, padding));
  return out;
}

template <typename T>
Tensor<T> unfold1d(const Tensor<T>& x, const ConvGeometry& geom) {
  require_matrix(x, "unfold1d");
  if (x.rows() != geom.batch * geom.in_len || geom.lengths.size() != geom.batch) {
    throw DimensionError("unfold1d: input " + shape_string(x.shape()) +
                         " does not match batch " + std::to_string(geom.batch) +
                         " x length " + std::to_string(geom.in_len));
  }
  const std::size_t c = x.cols();
  const std::size_t out_len = geom.out_len();
  const std::size_t width = geom.kernel * c;
  const auto out_lengths = geom.out_lengths();
  // Source row for every (output row, tap); -1 reads as zero.
  std::vector<long> src(geom.batch * out_len * geom.kernel, -1);
  for (std::size_t b = 0; b < geom.batch; ++b) {
    for (std::size_t t = 0; t < out_lengths[b]; ++t) {
      for (std::size_t kk = 0; kk < geom.kernel; ++kk) {
        const long pos = static_cast<long>(t * geom.stride + kk) -
                         static_cast<long>(geom.padding);
        if (pos >= 0 && pos < static_cast<long>(geom.lengths[b])) {
          src[(b * out_len + t) * geom.kernel + kk] =
              static_cast<long>(b * geom.in_len) + pos;
        }
      }
    }
  }
  std::vector<T> out(geom.batch * out_len * width, T(0));
  auto xv = x.data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i] >= 0) std::copy_n(xv.begin() + src[i] * c, c, out.begin() + i * c);
  }
  return detail::make_result<T>({geom.batch * out_len, width}, std::move(out),
                                "unfold1d", {x}, [c, src = std::move(src)](Node<T>& n) {
    auto& g = in_grad(n, 0);
    for (std::size_t i = 0; i < src.size(); ++i) {
      if (src[i] < 0) continue;
      for (std::size_t j = 0; j < c; ++j) g[src[i] * c + j] += n.grad[i * c + j];
    }
  });
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                    const AttentionGeometry& geom,
                    std::span<const std::uint8_t> key_pad) {
  require_matrix(q, "attention");
  require_matrix(k, "attention");
  require_matrix(v, "attention");
  const std::size_t d = q.cols();
  const std::size_t B = geom.batch, Tq = geom.q_len, Tk = geom.k_len, H = geom.heads;
  if (H == 0 || d % H != 0) {
    throw DimensionError("attention: width " + std::to_string(d) +
                         " not divisible by " + std::to_string(H) + " heads");
  }
  if (q.rows() != B * Tq || k.rows() != B * Tk || v.rows() != B * Tk ||
      k.cols() != d || v.cols() != d) {
    throw DimensionError("attention: q " + shape_string(q.shape()) + ", k " +
                         shape_string(k.shape()) + ", v " +
                         shape_string(v.shape()) + " inconsistent with batch " +
                         std::to_string(B));
  }
  if (!key_pad.empty() && key_pad.size() != B * Tk) {
    throw DimensionError("attention: key mask has " +
                         std::to_string(key_pad.size()) + " entries, expected " +
                         std::to_string(B * Tk));
  }
  if (geom.causal && Tq != Tk) {
    throw DimensionError("attention: causal masking needs q_len == k_len");
  }
  const std::size_t dk = d / H;
  const T inv_scale = T(1) / std::sqrt(static_cast<T>(dk));
  std::vector<T> probs(B * H * Tq * Tk, T(0));
  std::vector<T> out(B * Tq * d, T(0));
  RowMat<T> scores(Tq, Tk);
  const T neg_inf = -std::numeric_limits<T>::infinity();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < H; ++h) {
      ConstStridedMap<T> Qh(q.data().data() + b * Tq * d + h * dk, Tq, dk,
                            Eigen::OuterStride<>(d));
      ConstStridedMap<T> Kh(k.data().data() + b * Tk * d + h * dk, Tk, dk,
                            Eigen::OuterStride<>(d));
      ConstStridedMap<T> Vh(v.data().data() + b * Tk * d + h * dk, Tk, dk,
                            Eigen::OuterStride<>(d));
      scores.noalias() = (Qh * Kh.transpose()) * inv_scale;
      MapMat<T> P(probs.data() + (b * H + h) * Tq * Tk, Tq, Tk);
      for (std::size_t i = 0; i < Tq; ++i) {
        T mx = neg_inf;
        for (std::size_t j = 0; j < Tk; ++j) {
          const bool masked = (!key_pad.empty() && key_pad[b * Tk + j]) ||
                              (geom.causal && j > i);
          if (masked) scores(i, j) = neg_inf;
          mx = std::max(mx, scores(i, j));
        }
        if (mx == neg_inf) continue;  // every key masked: zero output row
        double z = 0.0;
        for (std::size_t j = 0; j < Tk; ++j) {
          const T e = scores(i, j) == neg_inf ? T(0) : std::exp(scores(i, j) - mx);
          P(i, j) = e;
          z += e;
        }
        for (std::size_t j = 0; j < Tk; ++j) P(i, j) = static_cast<T>(P(i, j) / z);
      }
      StridedMap<T> Oh(out.data() + b * Tq * d + h * dk, Tq, dk,
                       Eigen::OuterStride<>(d));
      Oh.noalias() = P * Vh;
    }
  }
  return detail::make_result<T>(
      {B * Tq, d}, std::move(out), "attention", {q, k, v},
      [B, Tq, Tk, H, d, dk, inv_scale, probs = std::move(probs)](Node<T>& n) {
        RowMat<T> dP(Tq, Tk), dS(Tq, Tk);
        const T* qv = in_value(n, 0).data();
        const T* kv = in_value(n, 1).data();
        const T* vv = in_value(n, 2).data();
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t h = 0; h < H; ++h) {
            ConstMapMat<T> P(probs.data() + (b * H + h) * Tq * Tk, Tq, Tk);
            ConstStridedMap<T> dO(n.grad.data() + b * Tq * d + h * dk, Tq, dk,
                                  Eigen::OuterStride<>(d));
            ConstStridedMap<T> Qh(qv + b * Tq * d + h * dk, Tq, dk, Eigen::OuterStride<>(d));
            ConstStridedMap<T> Kh(kv + b * Tk * d + h * dk, Tk, dk, Eigen::OuterStride<>(d));
            ConstStridedMap<T> Vh(vv + b * Tk * d + h * dk, Tk, dk, Eigen::OuterStride<>(d));
            if (wants_grad(n, 2)) {
              StridedMap<T> dV(in_grad(n, 2).data() + b * Tk * d + h * dk, Tk, dk,
                               Eigen::OuterStride<>(d));
              dV.noalias() += P.transpose() * dO;
            }
            if (!wants_grad(n, 0) && !wants_grad(n, 1)) continue;
            dP.noalias() = dO * Vh.transpose();
            for (std::size_t i = 0; i < Tq; ++i) {
              T dot = T(0);
              for (std::size_t j = 0; j < Tk; ++j) dot += dP(i, j) * P(i, j);
              for (std::size_t j = 0; j < Tk; ++j)
                dS(i, j) = P(i, j) * (dP(i, j) - dot) * inv_scale;
            }
            if (wants_grad(n, 0)) {
              StridedMap<T> dQ(in_grad(n, 0).data() + b * Tq * d + h * dk, Tq, dk,
                               Eigen::OuterStride<>(d));
              dQ.noalias() += dS * Kh;
            }
            if (wants_grad(n, 1)) {
              StridedMap<T> dK(in_grad(n, 1).data() + b * Tk * d + h * dk, Tk, dk,
                               Eigen::OuterStride<>(d));
              dK.noalias() += dS.transpose() * Qh;
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, std::uint64_t seed) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw ConfigError("dropout rate must be below 1");
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> mask(x.numel());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = unit_interval(mix_seed(seed, i)) < rate ? T(0) : keep_scale;
  }
  std::vector<T> out(x.numel());
  auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * mask[i];
  return detail::make_result<T>(x.shape(), std::move(out), "dropout", {x},
                                [mask = std::move(mask)](Node<T>& n) {
    auto& g = in_grad(n, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * mask[i];
  });
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> smoothed_nll(const Tensor<T>& log_probs, std::span<const int> targets,
                       T eps) {
  require_matrix(log_probs, "smoothed_nll");
  const std::size_t N = log_probs.rows(), V = log_probs.cols();
  if (targets.size() != N) {
    throw DimensionError("smoothed_nll: " + std::to_string(targets.size()) +
                         " targets for log-probs " +
                         shape_string(log_probs.shape()));
  }
  auto lp = log_probs.data();
  const double off = static_cast<double>(eps) / static_cast<double>(V);
  const double on = 1.0 - static_cast<double>(eps);
  double total = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    if (targets[i] < 0) continue;
    if (static_cast<std::size_t>(targets[i]) >= V) {
      throw IndexError("smoothed_nll: target " + std::to_string(targets[i]) +
                       " outside vocabulary of size " + std::to_string(V));
    }
    double row_sum = 0.0;
    for (std::size_t j = 0; j < V; ++j) row_sum += lp[i * V + j];
    total -= on * lp[i * V + targets[i]] + off * row_sum;
  }
  std::vector<int> saved(targets.begin(), targets.end());
  return detail::make_result<T>({1}, {static_cast<T>(total)}, "smoothed_nll",
                                {log_probs}, [N, V, on, off, saved = std::move(saved)](Node<T>& n) {
    auto& g = in_grad(n, 0);
    const T up = n.grad[0];
    for (std::size_t i = 0; i < N; ++i) {
      if (saved[i] < 0) continue;
      for (std::size_t j = 0; j < V; ++j) g[i * V + j] -= up * static_cast<T>(off);
      g[i * V + saved[i]] -= up * static_cast<T>(on);
    }
  });
}

template <typename T>
Tensor<T> jsd(const Tensor<T>& log_p, const Tensor<T>& log_q,
              std::span<const std::uint8_t> row_mask) {
  require_matrix(log_p, "jsd");
  require_same_shape(log_p, log_q, "jsd");
  const std::size_t N = log_p.rows(), V = log_p.cols();
  if (!row_mask.empty() && row_mask.size() != N) {
    throw DimensionError("jsd: row mask has " + std::to_string(row_mask.size()) +
                         " entries for " + std::to_string(N) + " rows");
  }
  auto lp = log_p.data(), lq = log_q.data();
  // log m = logaddexp(lp, lq) - log 2, kept for backward.
  std::vector<T> log_m(N * V, T(0));
  double total = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    if (!row_mask.empty() && !row_mask[i]) continue;
    double row = 0.0;
    for (std::size_t j = 0; j < V; ++j) {
      const double a = lp[i * V + j], b = lq[i * V + j];
      const double hi = std::max(a, b);
      const double lm = hi + std::log1p(std::exp(-std::abs(a - b))) - std::numbers::ln2;
      log_m[i * V + j] = static_cast<T>(lm);
      row += 0.5 * std::exp(a) * (a - lm) + 0.5 * std::exp(b) * (b - lm);
    }
    total += row;
  }
  std::vector<std::uint8_t> mask(row_mask.begin(), row_mask.end());
  return detail::make_result<T>(
      {1}, {static_cast<T>(total)}, "jsd", {log_p, log_q},
      [N, V, mask = std::move(mask), log_m = std::move(log_m)](Node<T>& n) {
        const T up = n.grad[0];
        for (std::size_t s = 0; s < 2; ++s) {
          if (!wants_grad(n, s)) continue;
          const auto& l = in_value(n, s);
          auto& g = in_grad(n, s);
          for (std::size_t i = 0; i < N; ++i) {
            if (!mask.empty() && !mask[i]) continue;
            for (std::size_t j = 0; j < V; ++j) {
              const std::size_t idx = i * V + j;
              g[idx] += up * T(0.5) * std::exp(l[idx]) * (l[idx] - log_m[idx]);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------

#define STEMM_INSTANTIATE_OPS(T)                                               \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> scale(const Tensor<T>&, T);                               \
  template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> relu(const Tensor<T>&);                                   \
  template Tensor<T> gelu(const Tensor<T>&);                                   \
  template Tensor<T> exp(const Tensor<T>&);                                    \
  template Tensor<T> log(const Tensor<T>&);                                    \
  template Tensor<T> sum(const Tensor<T>&);                                    \
  template Tensor<T> mean(const Tensor<T>&);                                   \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                   \
  template Tensor<T> log_softmax(const Tensor<T>&);                            \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&,            \
                                const Tensor<T>&, T);                          \
  template Tensor<T> embedding(const Tensor<T>&, std::span<const int>);        \
  template Tensor<T> gather_rows(std::span<const Tensor<T>>,                   \
                                 std::span<const RowRef>);                     \
  template Tensor<T> slice_rows(const Tensor<T>&, std::size_t, std::size_t);   \
  template Tensor<T> concat_rows(std::span<const Tensor<T>>);                  \
  template Tensor<T> unfold1d(const Tensor<T>&, const ConvGeometry&);          \
  template Tensor<T> attention(const Tensor<T>&, const Tensor<T>&,             \
                               const Tensor<T>&, const AttentionGeometry&,     \
                               std::span<const std::uint8_t>);                 \
  template Tensor<T> dropout(const Tensor<T>&, double, std::uint64_t);         \
  template Tensor<T> smoothed_nll(const Tensor<T>&, std::span<const int>, T);  \
  template Tensor<T> jsd(const Tensor<T>&, const Tensor<T>&,                   \
                         std::span<const std::uint8_t>);

STEMM_INSTANTIATE_OPS(float)
STEMM_INSTANTIATE_OPS(double)

#undef STEMM_INSTANTIATE_OPS

}  // namespace stemm
