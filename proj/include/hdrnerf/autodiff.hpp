#pragma once

// Minimal define-by-run reverse-mode differentiation over dense row-major
// double tensors. A Tape records operations as they execute; backward()
// walks the records once in reverse. Gradients are overwritten, not
// accumulated, on every backward call.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "hdrnerf/error.hpp"

namespace hdrnerf::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

// 64-byte aligned so Eigen's vectorized kernels peel the same way on every
// call. With unaligned heap blocks the packet/scalar split moved with the
// address and results differed in the last bit between identical calls.
using Buffer = std::vector<double, Eigen::aligned_allocator<double>>;

struct Node {
  Shape shape;
  Buffer value;
  Buffer grad;  // empty until a backward pass reaches the node
  bool requires_grad = false;
  bool from_tape = false;  // produced by a recorded operation (not a leaf)

  std::span<double> grad_slot() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

/// Shared handle to a tensor node. Copies alias the same storage.
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
    if (shape_size(shape) != values.size()) {
      throw ShapeError("shape " + shape_string(shape) + " holds " + std::to_string(shape_size(shape)) +
                       " values, got " + std::to_string(values.size()));
    }
    for (double v : values) {
      if (!std::isfinite(v)) throw NumericError("non-finite value in tensor construction");
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value.assign(values.begin(), values.end());
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = shape_size(shape);
    return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor scalar(double v, bool requires_grad = false) { return from({1, 1}, {v}, requires_grad); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->value.size(); }
  // 2-D view used by matrix ops: leading dimension by everything else.
  std::size_t rows() const { return shape().empty() ? 1 : shape()[0]; }
  std::size_t cols() const { return shape().size() <= 1 ? 1 : size() / rows(); }

  std::span<const double> data() const { return node_->value; }
  // Direct mutation is reserved for parameter updates between tapes.
  std::span<double> mutable_data() { return node_->value; }
  double item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape()));
    return node_->value[0];
  }
  double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}
  friend class Tape;
  std::shared_ptr<Node> node_;
};

enum class OpKind { matmul, add, mul, exp, log, relu, softplus, sigmoid, sum, mean_sq_err, concat, broadcast };

inline const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::mul: return "mul";
    case OpKind::exp: return "exp";
    case OpKind::log: return "log";
    case OpKind::relu: return "relu";
    case OpKind::softplus: return "softplus";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::sum: return "sum";
    case OpKind::mean_sq_err: return "mean_sq_err";
    case OpKind::concat: return "concat";
    case OpKind::broadcast: return "broadcast";
  }
  return "?";
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using MatrixMap = Eigen::Map<RowMatrix>;

/// One recorded operation. `backward` reads output->grad and accumulates
/// into the grad slots of inputs that require gradients.
struct Record {
  std::vector<std::shared_ptr<Node>> inputs;
  std::shared_ptr<Node> output;
  std::function<void(Record&)> backward;
};

class Tape {
 public:
  // A non-recording tape evaluates forward values only (inference mode).
  explicit Tape(bool record = true) : record_(record) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  bool recording() const { return record_; }
  std::size_t size() const { return records_.size(); }

  Tensor apply(OpKind kind, std::span<const Tensor> in) {
    auto need = [&](std::size_t n) {
      if (in.size() != n) {
        throw ShapeError(std::string(op_name(kind)) + " expects " + std::to_string(n) + " inputs, got " +
                         std::to_string(in.size()));
      }
    };
    switch (kind) {
      case OpKind::matmul: need(2); return matmul(in[0], in[1]);
      case OpKind::add: need(2); return add(in[0], in[1]);
      case OpKind::mul: need(2); return mul(in[0], in[1]);
      case OpKind::exp: need(1); return exp(in[0]);
      case OpKind::log: need(1); return log(in[0]);
      case OpKind::relu: need(1); return relu(in[0]);
      case OpKind::softplus: need(1); return softplus(in[0]);
      case OpKind::sigmoid: need(1); return sigmoid(in[0]);
      case OpKind::sum: need(1); return sum(in[0]);
      case OpKind::mean_sq_err: need(2); return mean_sq_err(in[0], in[1]);
      case OpKind::concat: return concat(std::vector<Tensor>(in.begin(), in.end()));
      case OpKind::broadcast:
        throw ShapeError("broadcast needs a target row count; call Tape::broadcast(tensor, rows)");
    }
    throw ShapeError("unknown op");
  }

  Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.cols() != b.rows()) {
      throw ShapeError("matmul " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
    }
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    Buffer out(n * m);
    MatrixMap(out.data(), n, m).noalias() = ConstMatrixMap(a.data().data(), n, k) * ConstMatrixMap(b.data().data(), k, m);
    return emit("matmul", {n, m}, std::move(out), {a, b}, [n, k, m](Record& r) {
      ConstMatrixMap g(r.output->grad.data(), n, m);
      if (r.inputs[0]->requires_grad) {
        MatrixMap(r.inputs[0]->grad_slot().data(), n, k).noalias() +=
            g * ConstMatrixMap(r.inputs[1]->value.data(), k, m).transpose();
      }
      if (r.inputs[1]->requires_grad) {
        MatrixMap(r.inputs[1]->grad_slot().data(), k, m).noalias() +=
            ConstMatrixMap(r.inputs[0]->value.data(), n, k).transpose() * g;
      }
    });
  }

  enum class Activation { none, relu, softplus, sigmoid };

  /// Fused dense layer act(x W + b) with b a 1 x cols(W) row. One node
  /// instead of three keeps large batches out of extra temporaries.
  Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b, Activation act = Activation::none) {
    if (x.shape().size() != 2 || w.shape().size() != 2 || x.cols() != w.rows() || b.rows() != 1 ||
        b.cols() != w.cols()) {
      throw ShapeError("affine " + shape_string(x.shape()) + " x " + shape_string(w.shape()) + " + " +
                       shape_string(b.shape()));
    }
    const std::size_t n = x.rows(), k = x.cols(), m = w.cols();
    Buffer pre(n * m);
    MatrixMap z(pre.data(), n, m);
    z.noalias() = ConstMatrixMap(x.data().data(), n, k) * ConstMatrixMap(w.data().data(), k, m);
    z.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.data().data(), m);
    Buffer out;
    if (act == Activation::none) {
      out = pre;
    } else {
      out.resize(n * m);
      for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = pre[i];
        out[i] = act == Activation::relu ? (v > 0.0 ? v : 0.0) : act == Activation::softplus ? ad::softplus(v)
                                                                                              : ad::sigmoid(v);
      }
    }
    static constexpr const char* names[] = {"affine", "affine_relu", "affine_softplus", "affine_sigmoid"};
    const bool keep_pre = act == Activation::softplus;
    return emit(names[static_cast<int>(act)], {n, m}, std::move(out), {x, w, b},
                [n, k, m, act, pre = keep_pre ? std::move(pre) : Buffer{}](Record& r) {
                  const auto& y = r.output->value;
                  Buffer gz(r.output->grad);
                  switch (act) {
                    case Activation::none: break;
                    case Activation::relu:
                      for (std::size_t i = 0; i < gz.size(); ++i) gz[i] = y[i] > 0.0 ? gz[i] : 0.0;
                      break;
                    case Activation::softplus:
                      for (std::size_t i = 0; i < gz.size(); ++i) gz[i] *= ad::sigmoid(pre[i]);
                      break;
                    case Activation::sigmoid:
                      for (std::size_t i = 0; i < gz.size(); ++i) gz[i] *= y[i] * (1.0 - y[i]);
                      break;
                  }
                  ConstMatrixMap g(gz.data(), n, m);
                  if (r.inputs[0]->requires_grad) {
                    MatrixMap(r.inputs[0]->grad_slot().data(), n, k).noalias() +=
                        g * ConstMatrixMap(r.inputs[1]->value.data(), k, m).transpose();
                  }
                  if (r.inputs[1]->requires_grad) {
                    MatrixMap(r.inputs[1]->grad_slot().data(), k, m).noalias() +=
                        ConstMatrixMap(r.inputs[0]->value.data(), n, k).transpose() * g;
                  }
                  if (r.inputs[2]->requires_grad) {
                    Eigen::Map<Eigen::RowVectorXd>(r.inputs[2]->grad_slot().data(), m) += g.colwise().sum();
                  }
                });
  }

  // b may match a's shape, be a 1 x cols(a) row (broadcast over rows), or a single value.
  Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, false); }
  Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, true); }

  Tensor exp(const Tensor& a) {
    return unary("exp", a, [](double x) { return std::exp(x); },
                 [](double, double y) { return y; });
  }

  Tensor log(const Tensor& a) {
    for (double v : a.data()) {
      if (!(v > 0.0)) throw DomainError("log of non-positive value " + std::to_string(v));
    }
    return unary("log", a, [](double x) { return std::log(x); },
                 [](double x, double) { return 1.0 / x; });
  }

  Tensor relu(const Tensor& a) {
    return unary("relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
                 [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
  }

  Tensor softplus(const Tensor& a) {
    return unary("softplus", a, [](double x) { return ad::softplus(x); },
                 [](double x, double) { return ad::sigmoid(x); });
  }

  Tensor sigmoid(const Tensor& a) {
    return unary("sigmoid", a, [](double x) { return ad::sigmoid(x); },
                 [](double, double y) { return y * (1.0 - y); });
  }

  Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    return emit("sum", {1, 1}, {s}, {a}, [](Record& r) {
      const double g = r.output->grad[0];
      for (double& d : r.inputs[0]->grad_slot()) d += g;
    });
  }

  /// Mean over rows of the squared L2 distance between rows: sum((p-t)^2) / rows.
  Tensor mean_sq_err(const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape()) {
      throw ShapeError("mean_sq_err " + shape_string(pred.shape()) + " vs " + shape_string(target.shape()));
    }
    if (pred.size() == 0) throw ShapeError("mean_sq_err of empty tensors");
    const double inv_rows = 1.0 / static_cast<double>(pred.rows());
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const double d = pred.data()[i] - target.data()[i];
      s += d * d;
    }
    return emit("mean_sq_err", {1, 1}, {s * inv_rows}, {pred, target}, [inv_rows](Record& r) {
      const double g = r.output->grad[0] * 2.0 * inv_rows;
      const auto& p = r.inputs[0]->value;
      const auto& t = r.inputs[1]->value;
      if (r.inputs[0]->requires_grad) {
        auto d = r.inputs[0]->grad_slot();
        for (std::size_t i = 0; i < p.size(); ++i) d[i] += g * (p[i] - t[i]);
      }
      if (r.inputs[1]->requires_grad) {
        auto d = r.inputs[1]->grad_slot();
        for (std::size_t i = 0; i < p.size(); ++i) d[i] -= g * (p[i] - t[i]);
      }
    });
  }

  /// Column-wise concatenation of 2-D tensors with equal row counts.
  Tensor concat(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat of zero tensors");
    const std::size_t n = parts[0].rows();
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const auto& p : parts) {
      if (p.rows() != n) throw ShapeError("concat row mismatch: " + shape_string(p.shape()));
      widths.push_back(p.cols());
      total += p.cols();
    }
    Buffer out(n * total);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const auto src = parts[k].data();
      for (std::size_t r = 0; r < n; ++r) {
        std::copy_n(src.begin() + r * widths[k], widths[k], out.begin() + r * total + offset);
      }
      offset += widths[k];
    }
    return emit("concat", {n, total}, std::move(out), parts, [n, total, widths](Record& r) {
      std::size_t off = 0;
      for (std::size_t k = 0; k < r.inputs.size(); ++k) {
        if (r.inputs[k]->requires_grad) {
          auto d = r.inputs[k]->grad_slot();
          for (std::size_t row = 0; row < n; ++row) {
            for (std::size_t c = 0; c < widths[k]; ++c) d[row * widths[k] + c] += r.output->grad[row * total + off + c];
          }
        }
        off += widths[k];
      }
    });
  }

  /// Repeats a 1 x C row `rows` times.
  Tensor broadcast(const Tensor& a, std::size_t rows) {
    if (a.rows() != 1) throw ShapeError("broadcast expects a single row, got " + shape_string(a.shape()));
    const std::size_t c = a.cols();
    Buffer out(rows * c);
    for (std::size_t r = 0; r < rows; ++r) std::copy(a.data().begin(), a.data().end(), out.begin() + r * c);
    return emit("broadcast", {rows, c}, std::move(out), {a}, [rows, c](Record& r) {
      auto d = r.inputs[0]->grad_slot();
      for (std::size_t row = 0; row < rows; ++row) {
        for (std::size_t j = 0; j < c; ++j) d[j] += r.output->grad[row * c + j];
      }
    });
  }

  /// Extracts column j of a 2-D tensor as rows x 1.
  Tensor column(const Tensor& a, std::size_t j) {
    const std::size_t n = a.rows(), c = a.cols();
    if (j >= c) throw ShapeError("column " + std::to_string(j) + " of " + shape_string(a.shape()));
    Buffer out(n);
    for (std::size_t r = 0; r < n; ++r) out[r] = a.data()[r * c + j];
    return emit("column", {n, 1}, std::move(out), {a}, [n, c, j](Record& r) {
      auto d = r.inputs[0]->grad_slot();
      for (std::size_t row = 0; row < n; ++row) d[row * c + j] += r.output->grad[row];
    });
  }

  using BackwardFn = std::function<void(Record&)>;

  /// Records an operation whose forward value was computed by the caller.
  /// Used by fused kernels (e.g. volume compositing) that are cheaper to
  /// differentiate by hand than as a chain of primitive ops.
  Tensor custom(const std::string& name, Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                BackwardFn backward) {
    return emit(name, std::move(shape), Buffer(value.begin(), value.end()), inputs, std::move(backward));
  }

  /// Reverse pass from a scalar loss. Leaf tensors on the tape (and any
  /// extra `params`) have their gradients reset first, so a parameter that
  /// does not influence the loss ends with an all-zero gradient. A tape can
  /// be differentiated once; a second call throws.
  void backward(const Tensor& loss, std::span<Tensor> params = {}) {
    if (loss.size() != 1) throw ShapeError("backward needs a scalar loss, got " + shape_string(loss.shape()));
    if (consumed_) throw Error("tape already differentiated; record a new tape");
    if (!record_) throw Error("backward on a non-recording tape");
    consumed_ = true;
    for (auto& p : params) p.zero_grad();
    for (auto& rec : records_) {
      for (auto& in : rec.inputs) {
        if (!in->from_tape && in->requires_grad) in->grad.assign(in->value.size(), 0.0);
      }
    }
    if (!loss.node()->from_tape) {
      if (loss.requires_grad()) loss.node()->grad.assign(1, 1.0);
      return;
    }
    loss.node()->grad.assign(1, 1.0);
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
      if (it->output->grad.empty()) continue;
      it->backward(*it);
    }
  }

 private:
  Tensor emit(const std::string& name, Shape shape, Buffer value, const std::vector<Tensor>& inputs,
              BackwardFn backward) {
    for (double v : value) {
      if (!std::isfinite(v)) throw NumericError(name + " produced a non-finite value");
    }
    auto out = std::make_shared<Node>();
    out->shape = std::move(shape);
    out->value = std::move(value);
    bool any = false;
    for (const auto& t : inputs) any = any || t.requires_grad();
    if (record_ && any) {
      out->requires_grad = true;
      out->from_tape = true;
      Record rec;
      rec.inputs.reserve(inputs.size());
      for (const auto& t : inputs) rec.inputs.push_back(t.shared());
      rec.output = out;
      rec.backward = std::move(backward);
      records_.push_back(std::move(rec));
    }
    return Tensor(std::move(out));
  }

  template <typename F, typename DF>
  Tensor unary(const char* name, const Tensor& a, F f, DF df) {
    Buffer out(a.size());
    const auto x = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
    return emit(name, a.shape(), std::move(out), {a}, [df](Record& r) {
      const auto& x = r.inputs[0]->value;
      const auto& y = r.output->value;
      const auto& g = r.output->grad;
      auto d = r.inputs[0]->grad_slot();
      for (std::size_t i = 0; i < x.size(); ++i) d[i] += g[i] * df(x[i], y[i]);
    });
  }

  Tensor binary(const Tensor& a, const Tensor& b, bool multiply) {
    enum class Mode { same, row, scalar };
    Mode mode;
    if (a.shape() == b.shape()) {
      mode = Mode::same;
    } else if (b.size() == 1) {
      mode = Mode::scalar;
    } else if (b.rows() == 1 && b.cols() == a.cols() && a.shape().size() == 2) {
      mode = Mode::row;
    } else {
      throw ShapeError(std::string(multiply ? "mul " : "add ") + shape_string(a.shape()) + " with " +
                       shape_string(b.shape()));
    }
    const std::size_t n = a.size(), c = a.cols();
    auto bidx = [mode, c](std::size_t i) -> std::size_t {
      return mode == Mode::same ? i : mode == Mode::row ? i % c : 0;
    };
    Buffer out(n);
    const auto x = a.data();
    const auto y = b.data();
    if (mode == Mode::row && !multiply) {
      const std::size_t rows = a.rows();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < c; ++j) out[r * c + j] = x[r * c + j] + y[j];
      }
    } else {
      for (std::size_t i = 0; i < n; ++i) out[i] = multiply ? x[i] * y[bidx(i)] : x[i] + y[bidx(i)];
    }
    return emit(multiply ? "mul" : "add", a.shape(), std::move(out), {a, b}, [bidx, multiply, n](Record& r) {
      const auto& g = r.output->grad;
      const auto& xa = r.inputs[0]->value;
      const auto& xb = r.inputs[1]->value;
      if (r.inputs[0]->requires_grad) {
        auto d = r.inputs[0]->grad_slot();
        for (std::size_t i = 0; i < n; ++i) d[i] += multiply ? g[i] * xb[bidx(i)] : g[i];
      }
      if (r.inputs[1]->requires_grad) {
        auto d = r.inputs[1]->grad_slot();
        for (std::size_t i = 0; i < n; ++i) d[bidx(i)] += multiply ? g[i] * xa[i] : g[i];
      }
    });
  }

  bool record_ = true;
  bool consumed_ = false;
  std::vector<Record> records_;
};

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  long long t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
};

/// Bias-corrected Adam update, in place. `grads[i]` belongs to `params[i]`.
/// Moment buffers are created on the first call.
inline void adam_step(std::span<Tensor> params, std::span<const std::vector<double>> grads, AdamState& state,
                      double lr) {
  if (!(lr > 0.0)) throw InputError("learning rate must be positive");
  if (params.size() != grads.size()) throw ShapeError("adam_step: params and grads differ in count");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.size(), 0.0);
      state.v.emplace_back(p.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step: state tracks a different parameter set");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i].size() || state.m[i].size() != params[i].size()) {
      throw ShapeError("adam_step: gradient shape mismatch at parameter " + std::to_string(i));
    }
  }
  state.t += 1;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].mutable_data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = grads[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
      w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + state.epsilon);
    }
  }
}

inline void adam_step(std::span<Tensor> params, AdamState& state, double lr) {
  std::vector<std::vector<double>> grads;
  grads.reserve(params.size());
  for (const auto& p : params) {
    if (p.has_grad()) {
      grads.emplace_back(p.grad().begin(), p.grad().end());
    } else {
      grads.emplace_back(p.size(), 0.0);
    }
  }
  adam_step(params, grads, state, lr);
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check

struct FiniteDiffReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  bool passed = true;
};

struct FiniteDiffOptions {
  double h = 1e-5;
  double rel_tol = 1e-5;
  // Denominator floor of the relative error, so coordinates whose true
  // gradient is ~0 are judged on absolute error instead.
  double denom_floor = 1e-8;
};

/// Compares analytic gradients from one backward pass of `model_eval` with
/// central differences (f(p+h) - f(p-h)) / 2h on every parameter coordinate.
/// `model_eval` must build its graph on the tape it is given and return a
/// scalar loss; it is called with non-recording tapes for the probes.
template <typename Eval>
FiniteDiffReport finite_diff_check(Eval&& model_eval, std::span<Tensor> params, const FiniteDiffOptions& opts = {}) {
  if (!(opts.h > 0.0)) throw InputError("finite difference step must be positive");
  auto eval_value = [&] {
    Tape probe(false);
    return model_eval(probe).item();
  };
  const double f0 = eval_value();
  const double f0_again = eval_value();
  if (f0 != f0_again) {
    throw DeterminismError("model evaluation returned " + std::to_string(f0) + " then " + std::to_string(f0_again));
  }

  Tape tape;
  Tensor loss = model_eval(tape);
  tape.backward(loss, params);

  FiniteDiffReport report;
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto w = params[p].mutable_data();
    const std::vector<double> analytic(params[p].grad().begin(), params[p].grad().end());
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double saved = w[j];
      w[j] = saved + opts.h;
      const double fp = eval_value();
      w[j] = saved - opts.h;
      const double fm = eval_value();
      w[j] = saved;
      const double numeric = (fp - fm) / (2.0 * opts.h);
      const double abs_err = std::abs(analytic[j] - numeric);
      const double rel_err = abs_err / std::max({std::abs(analytic[j]), std::abs(numeric), opts.denom_floor});
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      if (rel_err > report.max_rel_error) {
        report.max_rel_error = rel_err;
        report.worst_param = p;
        report.worst_index = j;
        report.worst_analytic = analytic[j];
        report.worst_numeric = numeric;
      }
      ++report.checked;
    }
  }
  report.passed = report.max_rel_error <= opts.rel_tol;
  return report;
}

}  // namespace hdrnerf::ad
