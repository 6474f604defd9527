#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "jodie/common.hpp"

namespace jodie {

using Vec = std::vector<double>;

// Dense row-major matrix of doubles.
class Mat {
 public:
  Mat() = default;
  Mat(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), d_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return d_.size(); }

  double* row(std::size_t r) { return d_.data() + r * cols_; }
  const double* row(std::size_t r) const { return d_.data() + r * cols_; }

  double& operator()(std::size_t r, std::size_t c) { return d_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return d_[r * cols_ + c]; }

  double* data() { return d_.data(); }
  const double* data() const { return d_.data(); }

  void fill(double v) { std::fill(d_.begin(), d_.end(), v); }

  bool same_shape(const Mat& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  bool operator==(const Mat& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && d_ == o.d_;
  }

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double> d_;
};

inline void debug_assert_finite(const double* y, std::size_t n) {
#ifndef NDEBUG
  for (std::size_t i = 0; i < n; ++i) assert(std::isfinite(y[i]));
#else
  (void)y;
  (void)n;
#endif
}

// y = W x
inline void matvec(const Mat& w, const double* x, std::size_t nx, double* y) {
  check(w.cols() == nx, "matvec: shape mismatch");
  for (std::size_t r = 0; r < w.rows(); ++r) y[r] = dot(w.row(r), x, nx);
}

// y += W^T g  (accumulates, used by backward passes)
inline void matvec_transpose_add(const Mat& w, const double* g, double* y) {
  for (std::size_t r = 0; r < w.rows(); ++r) axpy(g[r], w.row(r), y, w.cols());
}

// grad_W += g x^T
inline void outer_add(Mat& grad_w, const double* g, const double* x) {
  for (std::size_t r = 0; r < grad_w.rows(); ++r) axpy(g[r], x, grad_w.row(r), grad_w.cols());
}

inline double l2_dist(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

inline double l2_dist(const Vec& a, const Vec& b) {
  check(a.size() == b.size(), "l2_dist: length mismatch");
  return l2_dist(a.data(), b.data(), a.size());
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Fully connected layer, y = W x (+ b).
struct LinearLayer {
  Mat w;
  Vec b;
  bool has_bias = true;

  LinearLayer() = default;
  LinearLayer(std::size_t out, std::size_t in, bool bias = true)
      : w(out, in), b(bias ? out : 0), has_bias(bias) {}

  std::size_t out_dim() const { return w.rows(); }
  std::size_t in_dim() const { return w.cols(); }

  void forward_into(const double* x, std::size_t nx, double* y) const {
    matvec(w, x, nx, y);
    if (has_bias)
      for (std::size_t r = 0; r < out_dim(); ++r) y[r] += b[r];
    debug_assert_finite(y, out_dim());
  }

  Vec forward(const Vec& x) const {
    Vec y(out_dim());
    forward_into(x.data(), x.size(), y.data());
    return y;
  }
};

struct LinearGrads {
  Mat w;
  Vec b;

  LinearGrads() = default;
  explicit LinearGrads(const LinearLayer& l) : w(l.w.rows(), l.w.cols()), b(l.b.size()) {}

  void zero() {
    w.fill(0.0);
    std::fill(b.begin(), b.end(), 0.0);
  }
};

// Accumulates parameter gradients; optionally produces grad wrt the input.
inline void linear_backward(const LinearLayer& layer, const double* x, const double* grad_out,
                            LinearGrads& grads, double* grad_x) {
  outer_add(grads.w, grad_out, x);
  if (layer.has_bias) axpy(1.0, grad_out, grads.b.data(), layer.out_dim());
  if (grad_x) matvec_transpose_add(layer.w, grad_out, grad_x);
}

inline void linear_backward(const LinearLayer& layer, const Vec& x, const Vec& grad_out,
                            LinearGrads& grads, Vec* grad_x) {
  check(x.size() == layer.in_dim() && grad_out.size() == layer.out_dim(),
        "linear_backward: shape mismatch");
  if (grad_x) grad_x->assign(layer.in_dim(), 0.0);
  linear_backward(layer, x.data(), grad_out.data(), grads, grad_x ? grad_x->data() : nullptr);
}

// Single-layer tanh recurrent cell:
//   new_state = tanh(W_state * state + W_input * input + b)
struct RnnCell {
  Mat w_state;
  Mat w_input;
  Vec b;

  RnnCell() = default;
  RnnCell(std::size_t state_dim, std::size_t input_dim)
      : w_state(state_dim, state_dim), w_input(state_dim, input_dim), b(state_dim) {}

  std::size_t state_dim() const { return w_state.rows(); }
  std::size_t input_dim() const { return w_input.cols(); }

  void forward_into(const double* state, const double* input, double* out) const {
    const std::size_t n = state_dim();
    for (std::size_t r = 0; r < n; ++r) {
      double acc = dot(w_state.row(r), state, n);
      acc += dot(w_input.row(r), input, input_dim());
      out[r] = std::tanh(acc + b[r]);
    }
    debug_assert_finite(out, n);
  }

  Vec forward(const Vec& state, const Vec& input) const {
    check(state.size() == state_dim() && input.size() == input_dim(),
          "rnn forward: shape mismatch");
    Vec out(state_dim());
    forward_into(state.data(), input.data(), out.data());
    return out;
  }
};

struct RnnGrads {
  Mat w_state;
  Mat w_input;
  Vec b;

  RnnGrads() = default;
  explicit RnnGrads(const RnnCell& c)
      : w_state(c.w_state.rows(), c.w_state.cols()),
        w_input(c.w_input.rows(), c.w_input.cols()),
        b(c.b.size()) {}

  void zero() {
    w_state.fill(0.0);
    w_input.fill(0.0);
    std::fill(b.begin(), b.end(), 0.0);
  }
};

// Backward through the tanh cell. `output` is the forward result (tanh value),
// so dtanh = 1 - output^2. grad_state / grad_input accumulate.
inline void rnn_backward(const RnnCell& cell, const double* state, const double* input,
                         const double* output, const double* grad_out, RnnGrads& grads,
                         double* grad_state, double* grad_input, double* pre_scratch) {
  const std::size_t n = cell.state_dim();
  for (std::size_t r = 0; r < n; ++r)
    pre_scratch[r] = grad_out[r] * (1.0 - output[r] * output[r]);
  outer_add(grads.w_state, pre_scratch, state);
  outer_add(grads.w_input, pre_scratch, input);
  axpy(1.0, pre_scratch, grads.b.data(), n);
  if (grad_state) matvec_transpose_add(cell.w_state, pre_scratch, grad_state);
  if (grad_input) matvec_transpose_add(cell.w_input, pre_scratch, grad_input);
}

inline void rnn_backward(const RnnCell& cell, const Vec& state, const Vec& input,
                         const Vec& output, const Vec& grad_out, RnnGrads& grads, Vec* grad_state,
                         Vec* grad_input) {
  check(state.size() == cell.state_dim() && input.size() == cell.input_dim() &&
            output.size() == cell.state_dim() && grad_out.size() == cell.state_dim(),
        "rnn_backward: shape mismatch");
  if (grad_state) grad_state->assign(cell.state_dim(), 0.0);
  if (grad_input) grad_input->assign(cell.input_dim(), 0.0);
  Vec pre(cell.state_dim());
  rnn_backward(cell, state.data(), input.data(), output.data(), grad_out.data(), grads,
               grad_state ? grad_state->data() : nullptr,
               grad_input ? grad_input->data() : nullptr, pre.data());
}

// Central finite differences, (f(x+h e_i) - f(x-h e_i)) / 2h.
inline Vec finite_diff_grad(const std::function<double(const Vec&)>& f, const Vec& x,
                            double step) {
  check(step > 0.0, "finite_diff_grad: step must be positive");
  Vec g(x.size());
  Vec probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + step;
    const double up = f(probe);
    probe[i] = saved - step;
    const double down = f(probe);
    probe[i] = saved;
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

// ||d|| with the norm/squared-norm switch used by the losses. The plain norm
// uses subgradient 0 at 0, handled by callers.
inline double norm_term(const double* d, std::size_t n, bool squared) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += d[i] * d[i];
  return squared ? acc : std::sqrt(acc);
}

}  // namespace jodie
