#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "sr2/errors.hpp"
#include "sr2/rng.hpp"

namespace sr2 {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << "]";
  return os.str();
}

// ---------------------------------------------------------------------------
// Tape mode flags.
//
// Grad mode is thread-local so evaluation workers can run tape-free forward
// passes concurrently. Finite checks scan every op output and raise on
// NaN/Inf; they default to on in debug builds and off in release builds,
// and can be toggled at runtime.
// ---------------------------------------------------------------------------

namespace detail {
inline thread_local bool g_grad_enabled = true;
inline bool& finite_checks_flag() {
#ifdef NDEBUG
  static bool v = false;
#else
  static bool v = true;
#endif
  return v;
}
}  // namespace detail

inline bool grad_enabled() { return detail::g_grad_enabled; }

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(detail::g_grad_enabled) { detail::g_grad_enabled = false; }
  ~NoGradGuard() { detail::g_grad_enabled = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

inline void set_finite_checks(bool on) { detail::finite_checks_flag() = on; }
inline bool finite_checks_enabled() { return detail::finite_checks_flag(); }

// ---------------------------------------------------------------------------
// Tensor and tape.
//
// A Tensor is a dense row-major n-d array. Ops on tensors that require grad
// record a TapeNode carrying the backward closure; backward() replays the
// recorded nodes in reverse topological order. A detached tensor shares its
// producer's data but has no node, so traversal stops there and nothing
// upstream receives gradient.
// ---------------------------------------------------------------------------

template <class T>
struct TapeNode {
  std::vector<std::shared_ptr<TapeNode<T>>> parents;
  std::function<void()> backward;
};

template <class T>
class Tensor {
 public:
  Shape shape;
  std::shared_ptr<std::vector<T>> data;
  std::shared_ptr<std::vector<T>> grad;  // allocated iff requires_grad
  bool requires_grad = false;
  std::shared_ptr<TapeNode<T>> node;  // producing op; null for leaves

  Tensor() = default;

  static Tensor zeros(Shape s, bool rg = false) {
    return filled(std::move(s), T(0), rg);
  }

  static Tensor full(Shape s, T value, bool rg = false) {
    return filled(std::move(s), value, rg);
  }

  static Tensor scalar(T value, bool rg = false) {
    return filled(Shape{1}, value, rg);
  }

  static Tensor from_data(Shape s, std::vector<T> values, bool rg = false) {
    if (shape_numel(s) != static_cast<std::int64_t>(values.size())) {
      throw DimensionError("from_data: shape " + shape_str(s) + " wants " +
                           std::to_string(shape_numel(s)) + " values, got " +
                           std::to_string(values.size()));
    }
    Tensor t;
    t.shape = std::move(s);
    t.data = std::make_shared<std::vector<T>>(std::move(values));
    t.set_requires_grad(rg);
    return t;
  }

  static Tensor randn(Shape s, Rng& rng, double stddev, bool rg = false) {
    Tensor t = zeros(std::move(s), rg);
    for (auto& v : *t.data) v = static_cast<T>(rand_normal(rng) * stddev);
    return t;
  }

  // Truncated at +/-2 standard deviations, matching the init contract.
  static Tensor trunc_normal(Shape s, Rng& rng, double stddev, bool rg = false) {
    Tensor t = zeros(std::move(s), rg);
    for (auto& v : *t.data) v = static_cast<T>(rand_trunc_normal(rng) * stddev);
    return t;
  }

  std::int64_t numel() const { return shape_numel(shape); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

  const std::vector<T>& values() const { return *data; }
  std::vector<T>& values() { return *data; }

  T item() const {
    if (numel() != 1) {
      throw DimensionError("item: tensor " + shape_str(shape) + " is not scalar");
    }
    return (*data)[0];
  }

  // Row-major multi-index access, test convenience.
  T at(std::initializer_list<int> idx) const {
    return (*data)[flat_index(idx)];
  }
  T& at_mut(std::initializer_list<int> idx) { return (*data)[flat_index(idx)]; }

  void set_requires_grad(bool rg) {
    requires_grad = rg;
    if (rg && !grad) {
      grad = std::make_shared<std::vector<T>>(static_cast<std::size_t>(numel()), T(0));
    }
  }

  void zero_grad() {
    if (grad) std::fill(grad->begin(), grad->end(), T(0));
  }

  bool is_leaf() const { return node == nullptr; }

 private:
  static Tensor filled(Shape s, T value, bool rg) {
    Tensor t;
    t.shape = std::move(s);
    for (int d : t.shape) {
      if (d < 0) throw DimensionError("tensor dims must be non-negative: " + shape_str(t.shape));
    }
    t.data = std::make_shared<std::vector<T>>(static_cast<std::size_t>(shape_numel(t.shape)), value);
    t.set_requires_grad(rg);
    return t;
  }

  std::size_t flat_index(std::initializer_list<int> idx) const {
    if (static_cast<int>(idx.size()) != rank()) {
      throw DimensionError("index rank mismatch for " + shape_str(shape));
    }
    std::size_t flat = 0;
    auto it = idx.begin();
    for (int i = 0; i < rank(); ++i, ++it) {
      if (*it < 0 || *it >= shape[static_cast<std::size_t>(i)]) {
        throw IndexError("index out of range in dim " + std::to_string(i));
      }
      flat = flat * static_cast<std::size_t>(shape[static_cast<std::size_t>(i)]) +
             static_cast<std::size_t>(*it);
    }
    return flat;
  }
};

namespace detail {

template <class T>
bool want_grad(const Tensor<T>& t) {
  return g_grad_enabled && t.requires_grad;
}

template <class T>
void check_finite(const Tensor<T>& t, const char* op) {
  if (!finite_checks_flag()) return;
  for (const T& v : *t.data) {
    if (!std::isfinite(static_cast<double>(v))) {
      throw NumericError(std::string(op) + ": non-finite value in output");
    }
  }
}

template <class T>
Tensor<T> make_output(Shape s, bool rg) {
  Tensor<T> out;
  out.shape = std::move(s);
  out.data = std::make_shared<std::vector<T>>(static_cast<std::size_t>(shape_numel(out.shape)));
  out.set_requires_grad(rg);
  return out;
}

template <class T>
void attach_node(Tensor<T>& out, std::initializer_list<const Tensor<T>*> inputs,
                 std::function<void()> backward) {
  auto node = std::make_shared<TapeNode<T>>();
  for (const Tensor<T>* in : inputs) {
    if (in->node) node->parents.push_back(in->node);
  }
  node->backward = std::move(backward);
  out.node = node;
}

template <class T>
void accumulate(const std::shared_ptr<std::vector<T>>& grad, std::size_t i, T v) {
  (*grad)[i] += v;
}

using EigenIndex = Eigen::Index;

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using CMap = Eigen::Map<const RowMat<T>>;
template <class T>
using MMap = Eigen::Map<RowMat<T>>;

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops.
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape != b.shape) {
    throw DimensionError("add: shape mismatch " + shape_str(a.shape) + " vs " +
                         shape_str(b.shape));
  }
  const bool rg = detail::want_grad(a) || detail::want_grad(b);
  Tensor<T> out = detail::make_output<T>(a.shape, rg);
  const std::size_t n = a.data->size();
  for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] + (*b.data)[i];
  detail::check_finite(out, "add");
  if (rg) {
    detail::attach_node(out, {&a, &b}, [a, b, og = out.grad] {
      const std::size_t nn = og->size();
      if (a.requires_grad) {
        for (std::size_t i = 0; i < nn; ++i) (*a.grad)[i] += (*og)[i];
      }
      if (b.requires_grad) {
        for (std::size_t i = 0; i < nn; ++i) (*b.grad)[i] += (*og)[i];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape != b.shape) {
    throw DimensionError("mul: shape mismatch " + shape_str(a.shape) + " vs " +
                         shape_str(b.shape));
  }
  const bool rg = detail::want_grad(a) || detail::want_grad(b);
  Tensor<T> out = detail::make_output<T>(a.shape, rg);
  const std::size_t n = a.data->size();
  for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] * (*b.data)[i];
  detail::check_finite(out, "mul");
  if (rg) {
    detail::attach_node(out, {&a, &b}, [a, b, og = out.grad] {
      const std::size_t nn = og->size();
      if (a.requires_grad) {
        for (std::size_t i = 0; i < nn; ++i) (*a.grad)[i] += (*og)[i] * (*b.data)[i];
      }
      if (b.requires_grad) {
        for (std::size_t i = 0; i < nn; ++i) (*b.grad)[i] += (*og)[i] * (*a.data)[i];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T c) {
  const bool rg = detail::want_grad(x);
  Tensor<T> out = detail::make_output<T>(x.shape, rg);
  const std::size_t n = x.data->size();
  for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*x.data)[i] * c;
  detail::check_finite(out, "scale");
  if (rg) {
    detail::attach_node(out, {&x}, [x, c, og = out.grad] {
      const std::size_t nn = og->size();
      for (std::size_t i = 0; i < nn; ++i) (*x.grad)[i] += (*og)[i] * c;
    });
  }
  return out;
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return add(a, scale(b, T(-1)));
}

// Adds a length-D bias vector along the last axis of x.
template <class T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  if (x.rank() < 1 || bias.rank() != 1 || bias.dim(0) != x.shape.back()) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape) +
                         " does not match last axis of " + shape_str(x.shape));
  }
  const bool rg = detail::want_grad(x) || detail::want_grad(bias);
  Tensor<T> out = detail::make_output<T>(x.shape, rg);
  const std::size_t d = static_cast<std::size_t>(x.shape.back());
  const std::size_t rows = x.data->size() / d;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < d; ++i) {
      (*out.data)[r * d + i] = (*x.data)[r * d + i] + (*bias.data)[i];
    }
  }
  detail::check_finite(out, "add_bias");
  if (rg) {
    detail::attach_node(out, {&x, &bias}, [x, bias, og = out.grad, d, rows] {
      if (x.requires_grad) {
        const std::size_t nn = og->size();
        for (std::size_t i = 0; i < nn; ++i) (*x.grad)[i] += (*og)[i];
      }
      if (bias.requires_grad) {
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t i = 0; i < d; ++i) {
            (*bias.grad)[i] += (*og)[r * d + i];
          }
        }
      }
    });
  }
  return out;
}

// Adds p across the leading axes of x; p's shape must equal the trailing
// suffix of x's shape (e.g. positions [S,D] added to activations [B,S,D]).
template <class T>
Tensor<T> add_broadcast(const Tensor<T>& x, const Tensor<T>& p) {
  const int rx = x.rank(), rp = p.rank();
  bool suffix_ok = rp >= 1 && rp <= rx;
  for (int i = 0; suffix_ok && i < rp; ++i) {
    if (p.dim(i) != x.dim(rx - rp + i)) suffix_ok = false;
  }
  if (!suffix_ok) {
    throw DimensionError("add_broadcast: " + shape_str(p.shape) +
                         " is not a trailing suffix of " + shape_str(x.shape));
  }
  const bool rg = detail::want_grad(x) || detail::want_grad(p);
  Tensor<T> out = detail::make_output<T>(x.shape, rg);
  const std::size_t d = static_cast<std::size_t>(p.numel());
  const std::size_t rows = x.data->size() / d;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < d; ++i) {
      (*out.data)[r * d + i] = (*x.data)[r * d + i] + (*p.data)[i];
    }
  }
  detail::check_finite(out, "add_broadcast");
  if (rg) {
    detail::attach_node(out, {&x, &p}, [x, p, og = out.grad, d, rows] {
      if (x.requires_grad) {
        const std::size_t nn = og->size();
        for (std::size_t i = 0; i < nn; ++i) (*x.grad)[i] += (*og)[i];
      }
      if (p.requires_grad) {
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t i = 0; i < d; ++i) (*p.grad)[i] += (*og)[r * d + i];
        }
      }
    });
  }
  return out;
}

// GELU, tanh approximation.
template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  const bool rg = detail::want_grad(x);
  Tensor<T> out = detail::make_output<T>(x.shape, rg);
  const T c = static_cast<T>(std::sqrt(2.0 / M_PI));
  const T a = static_cast<T>(0.044715);
  const std::size_t n = x.data->size();
  for (std::size_t i = 0; i < n; ++i) {
    const T v = (*x.data)[i];
    const T u = c * (v + a * v * v * v);
    (*out.data)[i] = T(0.5) * v * (T(1) + std::tanh(u));
  }
  detail::check_finite(out, "gelu");
  if (rg) {
    detail::attach_node(out, {&x}, [x, og = out.grad, c, a] {
      const std::size_t nn = og->size();
      for (std::size_t i = 0; i < nn; ++i) {
        const T v = (*x.data)[i];
        const T u = c * (v + a * v * v * v);
        const T th = std::tanh(u);
        const T sech2 = T(1) - th * th;
        const T du = c * (T(1) + T(3) * a * v * v);
        const T dy = T(0.5) * (T(1) + th) + T(0.5) * v * sech2 * du;
        (*x.grad)[i] += (*og)[i] * dy;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shape ops.
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape) + " -> " +
                         shape_str(new_shape) + " changes element count");
  }
  const bool rg = detail::want_grad(x);
  Tensor<T> out;
  out.shape = std::move(new_shape);
  out.data = x.data;  // row-major contiguous view
  out.set_requires_grad(rg);
  if (rg) {
    detail::attach_node(out, {&x}, [x, og = out.grad] {
      const std::size_t nn = og->size();
      for (std::size_t i = 0; i < nn; ++i) (*x.grad)[i] += (*og)[i];
    });
  }
  return out;
}

namespace detail {

inline std::vector<std::int64_t> row_major_strides(const Shape& s) {
  std::vector<std::int64_t> st(s.size());
  std::int64_t acc = 1;
  for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
    st[static_cast<std::size_t>(i)] = acc;
    acc *= s[static_cast<std::size_t>(i)];
  }
  return st;
}

// out[j] = in[perm-mapped j]: returns data permuted so that axis i of the
// output is axis perm[i] of the input.
template <class T>
void permute_raw(const std::vector<T>& in, const Shape& in_shape,
                 const std::vector<int>& perm, std::vector<T>& out,
                 bool accumulate_out) {
  const int r = static_cast<int>(in_shape.size());
  Shape out_shape(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) out_shape[static_cast<std::size_t>(i)] = in_shape[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
  const auto in_st = row_major_strides(in_shape);
  std::vector<std::int64_t> out_axis_in_stride(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) out_axis_in_stride[static_cast<std::size_t>(i)] = in_st[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
  const std::int64_t n = shape_numel(in_shape);
  std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
  std::int64_t src = 0;
  for (std::int64_t flat = 0; flat < n; ++flat) {
    if (accumulate_out) {
      out[static_cast<std::size_t>(flat)] += in[static_cast<std::size_t>(src)];
    } else {
      out[static_cast<std::size_t>(flat)] = in[static_cast<std::size_t>(src)];
    }
    for (int ax = r - 1; ax >= 0; --ax) {
      idx[static_cast<std::size_t>(ax)]++;
      src += out_axis_in_stride[static_cast<std::size_t>(ax)];
      if (idx[static_cast<std::size_t>(ax)] < out_shape[static_cast<std::size_t>(ax)]) break;
      src -= out_axis_in_stride[static_cast<std::size_t>(ax)] * out_shape[static_cast<std::size_t>(ax)];
      idx[static_cast<std::size_t>(ax)] = 0;
    }
  }
}

}  // namespace detail

template <class T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& perm) {
  const int r = x.rank();
  if (static_cast<int>(perm.size()) != r) {
    throw DimensionError("permute: perm rank mismatch for " + shape_str(x.shape));
  }
  std::vector<bool> seen(static_cast<std::size_t>(r), false);
  for (int p : perm) {
    if (p < 0 || p >= r || seen[static_cast<std::size_t>(p)]) {
      throw DimensionError("permute: invalid permutation");
    }
    seen[static_cast<std::size_t>(p)] = true;
  }
  Shape out_shape(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) out_shape[static_cast<std::size_t>(i)] = x.dim(perm[static_cast<std::size_t>(i)]);
  const bool rg = detail::want_grad(x);
  Tensor<T> out = detail::make_output<T>(out_shape, rg);
  detail::permute_raw(*x.data, x.shape, perm, *out.data, false);
  if (rg) {
    std::vector<int> inv(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i) inv[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = i;
    detail::attach_node(out, {&x}, [x, og = out.grad, out_shape, inv] {
      detail::permute_raw(*og, out_shape, inv, *x.grad, true);
    });
  }
  return out;
}

template <class T>
Tensor<T> transpose_last2(const Tensor<T>& x) {
  if (x.rank() < 2) {
    throw DimensionError("transpose_last2: rank must be >= 2, got " + shape_str(x.shape));
  }
  std::vector<int> perm(static_cast<std::size_t>(x.rank()));
  for (int i = 0; i < x.rank(); ++i) perm[static_cast<std::size_t>(i)] = i;
  std::swap(perm[static_cast<std::size_t>(x.rank() - 2)], perm[static_cast<std::size_t>(x.rank() - 1)]);
  return permute(x, perm);
}

// ---------------------------------------------------------------------------
// Matrix multiply. a: [.., i, k], b: [.., k, j] with identical batch dims, or
// b: [k, j] broadcast over a's batch. Inner kernel delegates to Eigen.
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw DimensionError("matmul: both operands need rank >= 2: " +
                         shape_str(a.shape) + " vs " + shape_str(b.shape));
  }
  const int ai = a.dim(a.rank() - 2), ak = a.dim(a.rank() - 1);
  const int bk = b.dim(b.rank() - 2), bj = b.dim(b.rank() - 1);
  if (ak != bk) {
    throw DimensionError("matmul: inner dimensions disagree: " + shape_str(a.shape) +
                         " vs " + shape_str(b.shape));
  }
  const bool b_broadcast = (b.rank() == 2 && a.rank() > 2);
  if (!b_broadcast && a.rank() != b.rank()) {
    throw DimensionError("matmul: batch ranks disagree: " + shape_str(a.shape) +
                         " vs " + shape_str(b.shape));
  }
  std::int64_t batch = 1;
  Shape out_shape;
  for (int i = 0; i < a.rank() - 2; ++i) {
    const int d = a.dim(i);
    if (!b_broadcast && b.dim(i) != d) {
      throw DimensionError("matmul: batch dims disagree: " + shape_str(a.shape) +
                           " vs " + shape_str(b.shape));
    }
    batch *= d;
    out_shape.push_back(d);
  }
  out_shape.push_back(ai);
  out_shape.push_back(bj);

  const bool rg = detail::want_grad(a) || detail::want_grad(b);
  Tensor<T> out = detail::make_output<T>(out_shape, rg);

  const T* pa = a.data->data();
  const T* pb = b.data->data();
  T* po = out.data->data();
  if (b_broadcast) {
    // Fold batch into rows: one gemm.
    detail::CMap<T> ma(pa, batch * ai, ak);
    detail::CMap<T> mb(pb, bk, bj);
    detail::MMap<T> mo(po, batch * ai, bj);
    mo.noalias() = ma * mb;
  } else {
    for (std::int64_t s = 0; s < batch; ++s) {
      detail::CMap<T> ma(pa + s * ai * ak, ai, ak);
      detail::CMap<T> mb(pb + s * bk * bj, bk, bj);
      detail::MMap<T> mo(po + s * ai * bj, ai, bj);
      mo.noalias() = ma * mb;
    }
  }
  detail::check_finite(out, "matmul");

  if (rg) {
    detail::attach_node(out, {&a, &b},
                        [a, b, og = out.grad, batch, ai, ak, bj, b_broadcast] {
      const T* pa2 = a.data->data();
      const T* pb2 = b.data->data();
      const T* pg = og->data();
      if (b_broadcast) {
        detail::CMap<T> mg(pg, batch * ai, bj);
        if (a.requires_grad) {
          detail::CMap<T> mb(pb2, ak, bj);
          detail::MMap<T> mga(a.grad->data(), batch * ai, ak);
          mga.noalias() += mg * mb.transpose();
        }
        if (b.requires_grad) {
          detail::CMap<T> ma(pa2, batch * ai, ak);
          detail::MMap<T> mgb(b.grad->data(), ak, bj);
          mgb.noalias() += ma.transpose() * mg;
        }
      } else {
        for (std::int64_t s = 0; s < batch; ++s) {
          detail::CMap<T> mg(pg + s * ai * bj, ai, bj);
          if (a.requires_grad) {
            detail::CMap<T> mb(pb2 + s * ak * bj, ak, bj);
            detail::MMap<T> mga(a.grad->data() + s * ai * ak, ai, ak);
            mga.noalias() += mg * mb.transpose();
          }
          if (b.requires_grad) {
            detail::CMap<T> ma(pa2 + s * ai * ak, ai, ak);
            detail::MMap<T> mgb(b.grad->data() + s * ak * bj, ak, bj);
            mgb.noalias() += ma.transpose() * mg;
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Softmax along an axis, max-subtracted.
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  if (axis < 0) axis += x.rank();
  if (axis < 0 || axis >= x.rank()) {
    throw DimensionError("softmax: axis out of range for " + shape_str(x.shape));
  }
  const bool rg = detail::want_grad(x);
  Tensor<T> out = detail::make_output<T>(x.shape, rg);
  const std::int64_t n_axis = x.dim(axis);
  std::int64_t inner = 1;
  for (int i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::int64_t outer = x.numel() / (n_axis * inner);
  const T* px = x.data->data();
  T* po = out.data->data();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t in = 0; in < inner; ++in) {
      const std::int64_t base = o * n_axis * inner + in;
      T mx = px[base];
      for (std::int64_t k = 1; k < n_axis; ++k) mx = std::max(mx, px[base + k * inner]);
      T denom = T(0);
      for (std::int64_t k = 0; k < n_axis; ++k) {
        const T e = std::exp(px[base + k * inner] - mx);
        po[base + k * inner] = e;
        denom += e;
      }
      for (std::int64_t k = 0; k < n_axis; ++k) po[base + k * inner] /= denom;
    }
  }
  detail::check_finite(out, "softmax");
  if (rg) {
    detail::attach_node(out, {&x}, [x, og = out.grad, od = out.data, n_axis, inner,
                                    outer] {
      const T* py = od->data();
      const T* pg = og->data();
      for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t in = 0; in < inner; ++in) {
          const std::int64_t base = o * n_axis * inner + in;
          T dot = T(0);
          for (std::int64_t k = 0; k < n_axis; ++k) {
            dot += pg[base + k * inner] * py[base + k * inner];
          }
          for (std::int64_t k = 0; k < n_axis; ++k) {
            (*x.grad)[static_cast<std::size_t>(base + k * inner)] +=
                py[base + k * inner] * (pg[base + k * inner] - dot);
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// RMSNorm over the last axis: y_i = gain_i * x_i / sqrt(mean(x^2) + eps).
// ---------------------------------------------------------------------------

inline constexpr double kRmsNormEps = 1e-6;

template <class T>
Tensor<T> rms_norm(const Tensor<T>& x, const Tensor<T>& gain) {
  if (x.rank() < 1 || gain.rank() != 1 || gain.dim(0) != x.shape.back()) {
    throw DimensionError("rms_norm: gain " + shape_str(gain.shape) +
                         " does not match last axis of " + shape_str(x.shape));
  }
  const bool rg = detail::want_grad(x) || detail::want_grad(gain);
  Tensor<T> out = detail::make_output<T>(x.shape, rg);
  const std::size_t d = static_cast<std::size_t>(x.shape.back());
  const std::size_t rows = x.data->size() / d;
  const T* px = x.data->data();
  const T* pgain = gain.data->data();
  T* po = out.data->data();
  std::vector<T> inv_rms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    T ms = T(0);
    for (std::size_t i = 0; i < d; ++i) {
      const T v = px[r * d + i];
      ms += v * v;
    }
    ms = ms / static_cast<T>(d) + static_cast<T>(kRmsNormEps);
    const T inv = T(1) / std::sqrt(ms);
    inv_rms[r] = inv;
    for (std::size_t i = 0; i < d; ++i) {
      po[r * d + i] = pgain[i] * px[r * d + i] * inv;
    }
  }
  detail::check_finite(out, "rms_norm");
  if (rg) {
    detail::attach_node(out, {&x, &gain},
                        [x, gain, og = out.grad, inv_rms = std::move(inv_rms), d, rows] {
      const T* px2 = x.data->data();
      const T* pgain2 = gain.data->data();
      const T* pg = og->data();
      for (std::size_t r = 0; r < rows; ++r) {
        const T inv = inv_rms[r];
        if (x.requires_grad) {
          T dot = T(0);
          for (std::size_t i = 0; i < d; ++i) {
            dot += pg[r * d + i] * pgain2[i] * px2[r * d + i];
          }
          const T coef = inv * inv * inv * dot / static_cast<T>(d);
          for (std::size_t i = 0; i < d; ++i) {
            (*x.grad)[r * d + i] += pg[r * d + i] * pgain2[i] * inv - coef * px2[r * d + i];
          }
        }
        if (gain.requires_grad) {
          for (std::size_t i = 0; i < d; ++i) {
            (*gain.grad)[i] += pg[r * d + i] * px2[r * d + i] * inv;
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Embedding lookup: gathers rows of table by token id; backward scatters.
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> embedding(const Tensor<T>& table, const std::vector<int>& ids,
                    const Shape& ids_shape) {
  if (table.rank() != 2) {
    throw DimensionError("embedding: table must be [vocab, dim], got " +
                         shape_str(table.shape));
  }
  if (shape_numel(ids_shape) != static_cast<std::int64_t>(ids.size())) {
    throw DimensionError("embedding: ids_shape does not match id count");
  }
  const int vocab = table.dim(0);
  const std::size_t dm = static_cast<std::size_t>(table.dim(1));
  for (int id : ids) {
    if (id < 0 || id >= vocab) {
      throw IndexError("embedding: token id " + std::to_string(id) +
                       " out of range [0," + std::to_string(vocab) + ")");
    }
  }
  Shape out_shape = ids_shape;
  out_shape.push_back(static_cast<int>(dm));
  const bool rg = detail::want_grad(table);
  Tensor<T> out = detail::make_output<T>(out_shape, rg);
  const T* pt = table.data->data();
  T* po = out.data->data();
  for (std::size_t p = 0; p < ids.size(); ++p) {
    const std::size_t row = static_cast<std::size_t>(ids[p]);
    std::copy(pt + row * dm, pt + (row + 1) * dm, po + p * dm);
  }
  detail::check_finite(out, "embedding");
  if (rg) {
    detail::attach_node(out, {&table}, [table, og = out.grad, ids, dm] {
      const T* pg = og->data();
      for (std::size_t p = 0; p < ids.size(); ++p) {
        const std::size_t row = static_cast<std::size_t>(ids[p]);
        for (std::size_t i = 0; i < dm; ++i) {
          (*table.grad)[row * dm + i] += pg[p * dm + i];
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cross entropy: mean negative log-softmax probability of the target class
// over unmasked positions. logits: [.., vocab] flattened to [P, vocab].
// mask (optional): 1 = scored, 0 = ignored, length P.
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& targets,
                        const std::vector<std::uint8_t>& mask = {}) {
  if (logits.rank() < 2) {
    throw DimensionError("cross_entropy: logits must have rank >= 2, got " +
                         shape_str(logits.shape));
  }
  const std::int64_t vocab = logits.shape.back();
  const std::int64_t positions = logits.numel() / vocab;
  if (static_cast<std::int64_t>(targets.size()) != positions) {
    throw DimensionError("cross_entropy: expected " + std::to_string(positions) +
                         " targets, got " + std::to_string(targets.size()));
  }
  if (!mask.empty() && static_cast<std::int64_t>(mask.size()) != positions) {
    throw DimensionError("cross_entropy: mask length mismatch");
  }
  std::int64_t active = 0;
  for (std::int64_t p = 0; p < positions; ++p) {
    if (mask.empty() || mask[static_cast<std::size_t>(p)]) {
      ++active;
      const int t = targets[static_cast<std::size_t>(p)];
      if (t < 0 || t >= vocab) {
        throw IndexError("cross_entropy: target " + std::to_string(t) +
                         " out of range [0," + std::to_string(vocab) + ")");
      }
    }
  }
  if (active == 0) throw Error("cross_entropy: no unmasked positions");

  const bool rg = detail::want_grad(logits);
  Tensor<T> out = detail::make_output<T>(Shape{1}, rg);
  const T* pl = logits.data->data();
  double total = 0.0;
  for (std::int64_t p = 0; p < positions; ++p) {
    if (!mask.empty() && !mask[static_cast<std::size_t>(p)]) continue;
    const T* row = pl + p * vocab;
    T mx = row[0];
    for (std::int64_t k = 1; k < vocab; ++k) mx = std::max(mx, row[k]);
    double lse = 0.0;
    for (std::int64_t k = 0; k < vocab; ++k) lse += std::exp(static_cast<double>(row[k] - mx));
    lse = std::log(lse) + static_cast<double>(mx);
    total += lse - static_cast<double>(row[targets[static_cast<std::size_t>(p)]]);
  }
  (*out.data)[0] = static_cast<T>(total / static_cast<double>(active));
  detail::check_finite(out, "cross_entropy");
  if (rg) {
    detail::attach_node(out, {&logits},
                        [logits, og = out.grad, targets, mask, vocab, positions, active] {
      const T go = (*og)[0];
      const T* pl2 = logits.data->data();
      const T invn = T(1) / static_cast<T>(active);
      for (std::int64_t p = 0; p < positions; ++p) {
        if (!mask.empty() && !mask[static_cast<std::size_t>(p)]) continue;
        const T* row = pl2 + p * vocab;
        T mx = row[0];
        for (std::int64_t k = 1; k < vocab; ++k) mx = std::max(mx, row[k]);
        T denom = T(0);
        for (std::int64_t k = 0; k < vocab; ++k) denom += std::exp(row[k] - mx);
        for (std::int64_t k = 0; k < vocab; ++k) {
          const T soft = std::exp(row[k] - mx) / denom;
          const T onehot = (k == targets[static_cast<std::size_t>(p)]) ? T(1) : T(0);
          (*logits.grad)[static_cast<std::size_t>(p * vocab + k)] +=
              go * invn * (soft - onehot);
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions and non-differentiable ops.
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  const bool rg = detail::want_grad(x);
  Tensor<T> out = detail::make_output<T>(Shape{1}, rg);
  double total = 0.0;
  for (const T& v : *x.data) total += static_cast<double>(v);
  (*out.data)[0] = static_cast<T>(total);
  detail::check_finite(out, "sum");
  if (rg) {
    detail::attach_node(out, {&x}, [x, og = out.grad] {
      const T g = (*og)[0];
      for (auto& gv : *x.grad) gv += g;
    });
  }
  return out;
}

template <class T>
std::vector<int> argmax(const Tensor<T>& x, int axis = -1) {
  if (axis < 0) axis += x.rank();
  if (axis < 0 || axis >= x.rank()) {
    throw DimensionError("argmax: axis out of range for " + shape_str(x.shape));
  }
  const std::int64_t n_axis = x.dim(axis);
  std::int64_t inner = 1;
  for (int i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::int64_t outer = x.numel() / (n_axis * inner);
  std::vector<int> out(static_cast<std::size_t>(outer * inner));
  const T* px = x.data->data();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t in = 0; in < inner; ++in) {
      const std::int64_t base = o * n_axis * inner + in;
      int best = 0;
      T bv = px[base];
      for (std::int64_t k = 1; k < n_axis; ++k) {
        if (px[base + k * inner] > bv) {
          bv = px[base + k * inner];
          best = static_cast<int>(k);
        }
      }
      out[static_cast<std::size_t>(o * inner + in)] = best;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Detach: same values, no producer node. Gradient flow stops here; the
// result accumulates its own grad as a fresh leaf (used by the training loop
// as the cross-block boundary tensor).
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> detach(const Tensor<T>& x) {
  Tensor<T> out;
  out.shape = x.shape;
  out.data = x.data;
  out.set_requires_grad(grad_enabled());
  return out;
}

// ---------------------------------------------------------------------------
// Reverse pass. Seeds d(loss)/d(loss) = 1 and walks the tape in reverse
// topological order; grads accumulate additively into every reachable
// requires_grad tensor. Traversal never crosses a leaf (detached or input).
// ---------------------------------------------------------------------------

template <class T>
void backward(Tensor<T>& loss) {
  if (loss.numel() != 1) {
    throw Error("backward: loss must be scalar, got " + shape_str(loss.shape));
  }
  if (!loss.requires_grad) {
    throw Error("backward: loss does not require grad");
  }
  (*loss.grad)[0] = T(1);
  if (!loss.node) return;

  // Iterative post-order DFS: parents precede children in `order`, so the
  // reversed list runs each node only after all of its consumers.
  std::vector<TapeNode<T>*> order;
  std::unordered_set<TapeNode<T>*> visited;
  std::vector<std::pair<TapeNode<T>*, std::size_t>> stack;
  stack.emplace_back(loss.node.get(), 0);
  visited.insert(loss.node.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TapeNode<T>* p = node->parents[next].get();
      ++next;
      if (visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    (*it)->backward();
  }
}

}  // namespace sr2
