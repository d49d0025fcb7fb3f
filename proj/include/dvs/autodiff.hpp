#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace dvs::ad {

using Mat = Eigen::MatrixXd;

struct Node {
  Mat val;
  Mat grad;  // allocated lazily on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void accumulate(const Mat& g) {
    if (!requires_grad) return;
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

/// Handle to one value in a dynamically built computation graph. Values are
/// dense double matrices; building an expression records the backward pass.
/// Graphs are rebuilt per evaluation and freed when the last handle drops.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> n) : n_(std::move(n)) {}

  /// Leaf that does not receive gradients.
  static Var constant(Mat m) {
    auto n = std::make_shared<Node>();
    n->val = std::move(m);
    return Var(std::move(n));
  }
  static Var constant(double s) { return constant(Mat::Constant(1, 1, s)); }

  /// Leaf that accumulates gradients (a trainable parameter or probed input).
  static Var param(Mat m) {
    auto n = std::make_shared<Node>();
    n->val = std::move(m);
    n->requires_grad = true;
    return Var(std::move(n));
  }

  bool defined() const { return n_ != nullptr; }
  const Mat& val() const { return n_->val; }
  Mat& val_mut() { return n_->val; }
  const Mat& grad() const { return n_->grad; }
  bool requires_grad() const { return n_ && n_->requires_grad; }
  void set_requires_grad(bool b) { n_->requires_grad = b; }
  void zero_grad() { n_->grad.setZero(n_->val.rows(), n_->val.cols()); }
  double scalar() const {
    if (n_->val.size() != 1) throw std::logic_error("Var::scalar on non-scalar");
    return n_->val(0, 0);
  }

  long rows() const { return n_->val.rows(); }
  long cols() const { return n_->val.cols(); }
  const std::shared_ptr<Node>& node() const { return n_; }

 private:
  std::shared_ptr<Node> n_;
};

namespace detail {

inline bool any_grad(std::initializer_list<const Var*> vs) {
  for (auto* v : vs)
    if (v->requires_grad()) return true;
  return false;
}

/// Creates an op node. `backward` may be empty when no parent needs grads,
/// in which case the node degenerates to a constant.
inline Var make_op(Mat val, std::vector<Var> parents, std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->val = std::move(val);
  bool need = false;
  for (const auto& p : parents) need = need || p.requires_grad();
  if (need) {
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backward = std::move(backward);
  }
  return Var(std::move(n));
}

inline void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

}  // namespace detail

/// Runs reverse-mode accumulation from `root`, seeding with ones (or the
/// given seed). Gradients land in every reachable node with requires_grad.
inline void backward(const Var& root, const Mat* seed = nullptr) {
  if (!root.requires_grad()) return;
  // Iterative post-order DFS for a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  Node* r = root.node().get();
  r->accumulate(seed ? *seed : Mat::Ones(r->val.rows(), r->val.cols()));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.size() != 0) n->backward(*n);
  }
}

// ---------------------------------------------------------------------------
// Elementwise binary ops
// ---------------------------------------------------------------------------

inline Var add(const Var& a, const Var& b) {
  detail::check_same_shape(a, b, "add");
  return detail::make_op(a.val() + b.val(), {a, b}, [](Node& n) {
    n.parents[0]->accumulate(n.grad);
    n.parents[1]->accumulate(n.grad);
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::check_same_shape(a, b, "sub");
  return detail::make_op(a.val() - b.val(), {a, b}, [](Node& n) {
    n.parents[0]->accumulate(n.grad);
    n.parents[1]->accumulate(-n.grad);
  });
}

inline Var mul(const Var& a, const Var& b) {
  detail::check_same_shape(a, b, "mul");
  return detail::make_op(a.val().cwiseProduct(b.val()), {a, b}, [](Node& n) {
    n.parents[0]->accumulate(n.grad.cwiseProduct(n.parents[1]->val));
    n.parents[1]->accumulate(n.grad.cwiseProduct(n.parents[0]->val));
  });
}

inline Var div(const Var& a, const Var& b) {
  detail::check_same_shape(a, b, "div");
  return detail::make_op(a.val().cwiseQuotient(b.val()), {a, b}, [](Node& n) {
    const Mat& bv = n.parents[1]->val;
    n.parents[0]->accumulate(n.grad.cwiseQuotient(bv));
    n.parents[1]->accumulate(
        -(n.grad.cwiseProduct(n.val).cwiseQuotient(bv)));
  });
}

// ---------------------------------------------------------------------------
// Matrix product and broadcasts
// ---------------------------------------------------------------------------

inline Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dim mismatch");
  Mat v;
  v.noalias() = a.val() * b.val();
  return detail::make_op(std::move(v), {a, b}, [](Node& n) {
    Node& a = *n.parents[0];
    Node& b = *n.parents[1];
    if (a.requires_grad) {
      if (a.grad.size() == 0) a.grad.setZero(a.val.rows(), a.val.cols());
      a.grad.noalias() += n.grad * b.val.transpose();
    }
    if (b.requires_grad) {
      if (b.grad.size() == 0) b.grad.setZero(b.val.rows(), b.val.cols());
      b.grad.noalias() += a.val.transpose() * n.grad;
    }
  });
}

/// A (r x m) + column vector b (r x 1) broadcast over columns.
inline Var add_bias(const Var& a, const Var& b) {
  if (b.cols() != 1 || a.rows() != b.rows())
    throw std::invalid_argument("add_bias: bias must be (rows x 1)");
  return detail::make_op(a.val().colwise() + b.val().col(0), {a, b}, [](Node& n) {
    n.parents[0]->accumulate(n.grad);
    n.parents[1]->accumulate(n.grad.rowwise().sum());
  });
}

/// Scales each column j of A (r x m) by w(0, j); w is a (1 x m) row.
inline Var mul_rows(const Var& a, const Var& w) {
  if (w.rows() != 1 || a.cols() != w.cols())
    throw std::invalid_argument("mul_rows: weight must be (1 x cols)");
  Mat v = a.val().array().rowwise() * w.val().row(0).array();
  return detail::make_op(std::move(v), {a, w}, [](Node& n) {
    Node& a = *n.parents[0];
    Node& w = *n.parents[1];
    if (a.requires_grad)
      a.accumulate(n.grad.array().rowwise() * w.val.row(0).array());
    if (w.requires_grad)
      w.accumulate(n.grad.cwiseProduct(a.val).colwise().sum());
  });
}

// ---------------------------------------------------------------------------
// Scalar-parameter ops
// ---------------------------------------------------------------------------

inline Var scale(const Var& a, double s) {
  return detail::make_op(a.val() * s, {a},
                         [s](Node& n) { n.parents[0]->accumulate(n.grad * s); });
}

inline Var neg(const Var& a) { return scale(a, -1.0); }

inline Var add_scalar(const Var& a, double s) {
  return detail::make_op(a.val().array() + s, {a},
                         [](Node& n) { n.parents[0]->accumulate(n.grad); });
}

// ---------------------------------------------------------------------------
// Elementwise unary ops
// ---------------------------------------------------------------------------

inline Var relu(const Var& a) {
  return detail::make_op(a.val().cwiseMax(0.0), {a}, [](Node& n) {
    n.parents[0]->accumulate(
        (n.parents[0]->val.array() > 0.0).cast<double>().matrix().cwiseProduct(n.grad));
  });
}

inline Var softplus(const Var& a) {
  // Overflow-safe log(1 + exp(x)).
  Mat v = a.val().unaryExpr([](double x) {
    if (x > 35.0) return x;
    if (x < -35.0) return std::exp(x);
    return std::log1p(std::exp(x));
  });
  return detail::make_op(std::move(v), {a}, [](Node& n) {
    Mat d = n.parents[0]->val.unaryExpr(
        [](double x) { return 1.0 / (1.0 + std::exp(-x)); });
    n.parents[0]->accumulate(n.grad.cwiseProduct(d));
  });
}

inline Var sigmoid(const Var& a) {
  Mat v = a.val().unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  return detail::make_op(std::move(v), {a}, [](Node& n) {
    Mat d = n.val.cwiseProduct((1.0 - n.val.array()).matrix());
    n.parents[0]->accumulate(n.grad.cwiseProduct(d));
  });
}

inline Var exp(const Var& a) {
  return detail::make_op(a.val().array().exp(), {a}, [](Node& n) {
    n.parents[0]->accumulate(n.grad.cwiseProduct(n.val));
  });
}

inline Var log(const Var& a) {
  return detail::make_op(a.val().array().log(), {a}, [](Node& n) {
    n.parents[0]->accumulate(n.grad.cwiseQuotient(n.parents[0]->val));
  });
}

inline Var sin(const Var& a) {
  return detail::make_op(a.val().array().sin(), {a}, [](Node& n) {
    n.parents[0]->accumulate(n.grad.cwiseProduct(n.parents[0]->val.array().cos().matrix()));
  });
}

inline Var cos(const Var& a) {
  return detail::make_op(a.val().array().cos(), {a}, [](Node& n) {
    n.parents[0]->accumulate(-n.grad.cwiseProduct(n.parents[0]->val.array().sin().matrix()));
  });
}

inline Var square(const Var& a) {
  return detail::make_op(a.val().array().square(), {a}, [](Node& n) {
    n.parents[0]->accumulate(2.0 * n.grad.cwiseProduct(n.parents[0]->val));
  });
}

/// Square root with a guarded backward: d/dx sqrt(x) clamps the denominator
/// so an exact-zero argument yields a zero (not NaN) gradient.
inline Var sqrt(const Var& a) {
  return detail::make_op(a.val().array().sqrt(), {a}, [](Node& n) {
    Mat d = n.val.unaryExpr([](double s) { return 0.5 / std::max(s, 1e-12); });
    n.parents[0]->accumulate(n.grad.cwiseProduct(d));
  });
}

inline Var abs(const Var& a) {
  return detail::make_op(a.val().cwiseAbs(), {a}, [](Node& n) {
    Mat sgn = n.parents[0]->val.unaryExpr(
        [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
    n.parents[0]->accumulate(n.grad.cwiseProduct(sgn));
  });
}

inline Var clamp_min(const Var& a, double lo) {
  return detail::make_op(a.val().cwiseMax(lo), {a}, [lo](Node& n) {
    Mat pass = (n.parents[0]->val.array() > lo).cast<double>();
    n.parents[0]->accumulate(n.grad.cwiseProduct(pass));
  });
}

/// Identity on the value, but blocks the gradient.
inline Var detach(const Var& a) { return Var::constant(a.val()); }

// ---------------------------------------------------------------------------
// Reductions and shape ops
// ---------------------------------------------------------------------------

inline Var sum(const Var& a) {
  return detail::make_op(Mat::Constant(1, 1, a.val().sum()), {a}, [](Node& n) {
    Node& p = *n.parents[0];
    p.accumulate(Mat::Constant(p.val.rows(), p.val.cols(), n.grad(0, 0)));
  });
}

inline Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.val().size())); }

/// Sums over rows: (r x m) -> (1 x m).
inline Var sum_rows(const Var& a) {
  return detail::make_op(a.val().colwise().sum(), {a}, [](Node& n) {
    Node& p = *n.parents[0];
    p.accumulate(n.grad.row(0).replicate(p.val.rows(), 1));
  });
}

/// Row-concatenates the given vars (all must share the column count).
inline Var vcat(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("vcat: empty");
  long cols = parts[0].cols(), rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("vcat: column mismatch");
    rows += p.rows();
  }
  Mat v(rows, cols);
  long r = 0;
  for (const auto& p : parts) {
    v.middleRows(r, p.rows()) = p.val();
    r += p.rows();
  }
  std::vector<Var> parents(parts.begin(), parts.end());
  return detail::make_op(std::move(v), parents, [](Node& n) {
    long r = 0;
    for (auto& p : n.parents) {
      p->accumulate(n.grad.middleRows(r, p->val.rows()));
      r += p->val.rows();
    }
  });
}

/// Row slice [r0, r0+nr).
inline Var rows(const Var& a, long r0, long nr) {
  if (r0 < 0 || r0 + nr > a.rows()) throw std::invalid_argument("rows: out of range");
  return detail::make_op(a.val().middleRows(r0, nr), {a}, [r0, nr](Node& n) {
    Node& p = *n.parents[0];
    if (!p.requires_grad) return;
    if (p.grad.size() == 0) p.grad.setZero(p.val.rows(), p.val.cols());
    p.grad.middleRows(r0, nr) += n.grad;
  });
}

/// Sums each ray's K consecutive columns: (r x R*K) -> (r x R).
inline Var sum_segments(const Var& a, int k) {
  if (k <= 0 || a.cols() % k != 0) throw std::invalid_argument("sum_segments: bad K");
  const long nseg = a.cols() / k;
  Mat v(a.rows(), nseg);
  for (long j = 0; j < nseg; ++j) v.col(j) = a.val().middleCols(j * k, k).rowwise().sum();
  return detail::make_op(std::move(v), {a}, [k, nseg](Node& n) {
    Node& p = *n.parents[0];
    if (!p.requires_grad) return;
    if (p.grad.size() == 0) p.grad.setZero(p.val.rows(), p.val.cols());
    for (long j = 0; j < nseg; ++j)
      p.grad.middleCols(j * k, k).colwise() += n.grad.col(j);
  });
}

/// Repeats each column K times: (r x R) -> (r x R*K). Inverse shape of
/// sum_segments; used to divide per-sample rows by per-ray totals.
inline Var repeat_segments(const Var& a, int k) {
  const long nseg = a.cols();
  Mat v(a.rows(), nseg * k);
  for (long j = 0; j < nseg; ++j)
    v.middleCols(j * k, k) = a.val().col(j).replicate(1, k);
  return detail::make_op(std::move(v), {a}, [k, nseg](Node& n) {
    Node& p = *n.parents[0];
    if (!p.requires_grad) return;
    if (p.grad.size() == 0) p.grad.setZero(p.val.rows(), p.val.cols());
    for (long j = 0; j < nseg; ++j)
      p.grad.col(j) += n.grad.middleCols(j * k, k).rowwise().sum();
  });
}

/// Gathers whole K-column blocks (rays) by index.
inline Var gather_blocks(const Var& a, int k, std::vector<int> idx) {
  if (k <= 0 || a.cols() % k != 0) throw std::invalid_argument("gather_blocks: bad K");
  Mat v(a.rows(), static_cast<long>(idx.size()) * k);
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || (idx[i] + 1) * static_cast<long>(k) > a.cols())
      throw std::invalid_argument("gather_blocks: index out of range");
    v.middleCols(static_cast<long>(i) * k, k) = a.val().middleCols(idx[i] * k, k);
  }
  return detail::make_op(std::move(v), {a}, [k, idx = std::move(idx)](Node& n) {
    Node& p = *n.parents[0];
    if (!p.requires_grad) return;
    if (p.grad.size() == 0) p.grad.setZero(p.val.rows(), p.val.cols());
    for (size_t i = 0; i < idx.size(); ++i)
      p.grad.middleCols(idx[i] * k, k) += n.grad.middleCols(static_cast<long>(i) * k, k);
  });
}

/// Exclusive prefix sum within each K-column segment of a (1 x R*K) row.
inline Var cumsum_excl_segments(const Var& a, int k) {
  if (a.rows() != 1) throw std::invalid_argument("cumsum_excl_segments: expects a row");
  if (k <= 0 || a.cols() % k != 0) throw std::invalid_argument("cumsum_excl_segments: bad K");
  const long nseg = a.cols() / k;
  Mat v(1, a.cols());
  for (long j = 0; j < nseg; ++j) {
    double acc = 0;
    for (int i = 0; i < k; ++i) {
      v(0, j * k + i) = acc;
      acc += a.val()(0, j * k + i);
    }
  }
  return detail::make_op(std::move(v), {a}, [k, nseg](Node& n) {
    // d out_i / d in_j = 1 for j < i in the same segment, so the input grad
    // is the exclusive suffix sum of the output grad.
    Mat g(1, n.val.cols());
    for (long j = 0; j < nseg; ++j) {
      double acc = 0;
      for (int i = k - 1; i >= 0; --i) {
        g(0, j * k + i) = acc;
        acc += n.grad(0, j * k + i);
      }
    }
    n.parents[0]->accumulate(g);
  });
}

// ---------------------------------------------------------------------------
// Positional encoding
// ---------------------------------------------------------------------------

/// NeRF-style frequency encoding: rows are
/// [x; sin(2^0 pi x); cos(2^0 pi x); ...; sin(2^{L-1} pi x); cos(2^{L-1} pi x)],
/// giving k(2L+1) output rows for a k-row input.
///
/// `alpha` in [0, 1] anneals the bands coarse-to-fine: band l is scaled by
/// clamp(alpha * L - l, 0, 1), so alpha = 0 leaves only the raw input and
/// alpha = 1 is the plain encoding (scaling by 1.0 is exact, so the annealed
/// and plain paths agree bitwise there). Both sin and cos rows of a band
/// carry the same factor, which keeps the backward pass below valid as-is:
/// it reads the scaled rows from the stored forward values, and
/// d(w sin(fx))/dx = f * (w cos(fx)) is exactly f times the stored cos row.
inline Var positional_encode(const Var& x, int num_freqs, double alpha = 1.0) {
  if (num_freqs < 0) throw std::invalid_argument("positional_encode: L must be >= 0");
  if (!(alpha >= 0.0)) throw std::invalid_argument("positional_encode: alpha must be >= 0");
  const long k = x.rows(), m = x.cols();
  Mat v(k * (2 * num_freqs + 1), m);
  v.topRows(k) = x.val();
  constexpr double kPi = 3.14159265358979323846;
  for (int l = 0; l < num_freqs; ++l) {
    const double f = std::ldexp(kPi, l);  // 2^l * pi
    const double band = std::clamp(alpha * num_freqs - l, 0.0, 1.0);
    v.middleRows(k + 2 * l * k, k) = band * (x.val() * f).array().sin();
    v.middleRows(k + (2 * l + 1) * k, k) = band * (x.val() * f).array().cos();
  }
  return detail::make_op(std::move(v), {x}, [k, num_freqs](Node& n) {
    constexpr double kPi = 3.14159265358979323846;
    Mat g = n.grad.topRows(k);
    for (int l = 0; l < num_freqs; ++l) {
      const double f = std::ldexp(kPi, l);
      // sin rows were stored at k + 2lk, cos rows at k + (2l+1)k; their
      // derivatives reuse the forward values stored in n.val.
      g += f * n.grad.middleRows(k + 2 * l * k, k)
               .cwiseProduct(n.val.middleRows(k + (2 * l + 1) * k, k));
      g -= f * n.grad.middleRows(k + (2 * l + 1) * k, k)
               .cwiseProduct(n.val.middleRows(k + 2 * l * k, k));
    }
    n.parents[0]->accumulate(g);
  });
}

// ---------------------------------------------------------------------------
// Bilinear image sampling
// ---------------------------------------------------------------------------

/// Samples a (channels x W*H) image (pixel index = y*W + x, row-major) at
/// fractional coordinates uv (2 x M). Coordinates are clamped to the image;
/// validity of out-of-bounds samples is the caller's concern (it holds the
/// mask). Gradients flow into both the image and the coordinates; clamped
/// coordinates get zero coordinate-gradient.
inline Var bilinear_sample(const Var& img, const Var& uv, int width, int height) {
  if (uv.rows() != 2) throw std::invalid_argument("bilinear_sample: uv must be 2 x M");
  if (img.cols() != static_cast<long>(width) * height)
    throw std::invalid_argument("bilinear_sample: image size mismatch");
  const long m = uv.cols();
  const long ch = img.rows();
  struct Tap {
    int i00, i10, i01, i11;
    double fu, fv;
    bool u_clamped, v_clamped;
  };
  auto taps = std::make_shared<std::vector<Tap>>(m);
  Mat v(ch, m);
  for (long j = 0; j < m; ++j) {
    double u = uv.val()(0, j), vv = uv.val()(1, j);
    Tap& t = (*taps)[j];
    t.u_clamped = u < 0.0 || u > width - 1.0;
    t.v_clamped = vv < 0.0 || vv > height - 1.0;
    u = std::min(std::max(u, 0.0), static_cast<double>(width - 1));
    vv = std::min(std::max(vv, 0.0), static_cast<double>(height - 1));
    int x0 = std::min(static_cast<int>(u), width - 2 >= 0 ? width - 2 : 0);
    int y0 = std::min(static_cast<int>(vv), height - 2 >= 0 ? height - 2 : 0);
    x0 = std::max(x0, 0);
    y0 = std::max(y0, 0);
    const int x1 = std::min(x0 + 1, width - 1);
    const int y1 = std::min(y0 + 1, height - 1);
    t.fu = u - x0;
    t.fv = vv - y0;
    t.i00 = y0 * width + x0;
    t.i10 = y0 * width + x1;
    t.i01 = y1 * width + x0;
    t.i11 = y1 * width + x1;
    v.col(j) = (1 - t.fu) * (1 - t.fv) * img.val().col(t.i00) +
               t.fu * (1 - t.fv) * img.val().col(t.i10) +
               (1 - t.fu) * t.fv * img.val().col(t.i01) + t.fu * t.fv * img.val().col(t.i11);
  }
  return detail::make_op(std::move(v), {img, uv}, [taps](Node& n) {
    Node& img = *n.parents[0];
    Node& uv = *n.parents[1];
    const long m = n.val.cols();
    if (img.requires_grad && img.grad.size() == 0)
      img.grad.setZero(img.val.rows(), img.val.cols());
    if (uv.requires_grad && uv.grad.size() == 0) uv.grad.setZero(2, m);
    for (long j = 0; j < m; ++j) {
      const Tap& t = (*taps)[j];
      const auto g = n.grad.col(j);
      if (img.requires_grad) {
        img.grad.col(t.i00) += (1 - t.fu) * (1 - t.fv) * g;
        img.grad.col(t.i10) += t.fu * (1 - t.fv) * g;
        img.grad.col(t.i01) += (1 - t.fu) * t.fv * g;
        img.grad.col(t.i11) += t.fu * t.fv * g;
      }
      if (uv.requires_grad) {
        const auto c00 = img.val.col(t.i00), c10 = img.val.col(t.i10);
        const auto c01 = img.val.col(t.i01), c11 = img.val.col(t.i11);
        if (!t.u_clamped)
          uv.grad(0, j) +=
              g.dot(((c10 - c00) * (1 - t.fv) + (c11 - c01) * t.fv).eval());
        if (!t.v_clamped)
          uv.grad(1, j) +=
              g.dot(((c01 - c00) * (1 - t.fu) + (c11 - c10) * t.fu).eval());
      }
    }
  });
}

}  // namespace dvs::ad
