#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "epcfusion/diffcore/tensor.hpp"
#include "epcfusion/random.hpp"

namespace epcfusion::diffcore {

namespace detail {
inline std::string shape_str(const Tensor& t) {
  return "(" + std::to_string(t.rows()) + "x" + std::to_string(t.cols()) + ")";
}
inline Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }
}  // namespace detail

// y = x W + b, x: n x in, W: in x out, b: 1 x out.
inline Tensor dense(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_shape(x.cols() == weight.rows(), "dense: input " + detail::shape_str(x) + " vs weight " +
                                               detail::shape_str(weight));
  require_shape(bias.rows() == 1 && bias.cols() == weight.cols(), "dense: bias shape");
  Matrix y(x.rows(), weight.cols());
  y.noalias() = x.value() * weight.value();
  y.rowwise() += bias.value().row(0);
  return make_result(std::move(y), {x, weight, bias}, [](Node& self) {
    Node& xn = detail::parent(self, 0);
    Node& wn = detail::parent(self, 1);
    Node& bn = detail::parent(self, 2);
    if (xn.requires_grad) {
      Matrix dx(self.grad.rows(), wn.value.rows());
      dx.noalias() = self.grad * wn.value.transpose();
      xn.accumulate(std::move(dx));
    }
    if (wn.requires_grad) {
      Matrix dw(wn.value.rows(), wn.value.cols());
      dw.noalias() = xn.value.transpose() * self.grad;
      wn.accumulate(std::move(dw));
    }
    if (bn.requires_grad) bn.accumulate(self.grad.colwise().sum());
  });
}

// Rows of `table` selected by `indices`.
inline Tensor embedding_lookup(const Tensor& table, std::span<const int> indices) {
  Matrix y(static_cast<Index>(indices.size()), table.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const int idx = indices[i];
    require_shape(idx >= 0 && idx < table.rows(), "embedding index " + std::to_string(idx) +
                                                      " outside table of " + std::to_string(table.rows()));
    y.row(static_cast<Index>(i)) = table.value().row(idx);
  }
  std::vector<int> saved(indices.begin(), indices.end());
  return make_result(std::move(y), {table}, [saved = std::move(saved)](Node& self) {
    Node& tn = detail::parent(self, 0);
    Matrix d = Matrix::Zero(tn.value.rows(), tn.value.cols());
    for (std::size_t i = 0; i < saved.size(); ++i) d.row(saved[i]) += self.grad.row(static_cast<Index>(i));
    tn.accumulate(std::move(d));
  });
}

/// Kernel-3, padding-1 convolution over sequences stored as (B*L x C_in).
/// Weight layout is (3*C_in x C_out): rows [k*C_in, (k+1)*C_in) multiply the
/// input at offset k-1. Evaluated as three shifted GEMMs over the whole batch;
/// the products that straddle two sequences are subtracted afterwards.
inline Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, Index seq_len) {
  require_shape(seq_len > 0 && x.rows() % seq_len == 0, "conv1d: rows not a multiple of sequence length");
  require_shape(weight.rows() == 3 * x.cols(), "conv1d: weight rows must be 3 * input channels");
  require_shape(bias.rows() == 1 && bias.cols() == weight.cols(), "conv1d: bias shape");
  const Matrix& xv = x.value();
  const Index n = xv.rows();
  const Index c_in = xv.cols();
  const auto w0 = weight.value().topRows(c_in);
  const auto w1 = weight.value().middleRows(c_in, c_in);
  const auto w2 = weight.value().bottomRows(c_in);
  Matrix y(n, weight.cols());
  y.noalias() = xv * w1;
  if (n > 1) {
    y.bottomRows(n - 1).noalias() += xv.topRows(n - 1) * w0;
    y.topRows(n - 1).noalias() += xv.bottomRows(n - 1) * w2;
  }
  for (Index start = seq_len; start < n; start += seq_len) {
    y.row(start).noalias() -= xv.row(start - 1) * w0;
    y.row(start - 1).noalias() -= xv.row(start) * w2;
  }
  y.rowwise() += bias.value().row(0);
  return make_result(std::move(y), {x, weight, bias}, [seq_len](Node& self) {
    Node& xn = detail::parent(self, 0);
    Node& wn = detail::parent(self, 1);
    Node& bn = detail::parent(self, 2);
    const Matrix& g = self.grad;
    const Matrix& xv = xn.value;
    const Index n = xv.rows();
    const Index c_in = xv.cols();
    if (wn.requires_grad) {
      Matrix dw(wn.value.rows(), wn.value.cols());
      dw.middleRows(c_in, c_in).noalias() = xv.transpose() * g;
      dw.topRows(c_in).setZero();
      dw.bottomRows(c_in).setZero();
      if (n > 1) {
        dw.topRows(c_in).noalias() += xv.topRows(n - 1).transpose() * g.bottomRows(n - 1);
        dw.bottomRows(c_in).noalias() += xv.bottomRows(n - 1).transpose() * g.topRows(n - 1);
      }
      for (Index start = seq_len; start < n; start += seq_len) {
        dw.topRows(c_in).noalias() -= xv.row(start - 1).transpose() * g.row(start);
        dw.bottomRows(c_in).noalias() -= xv.row(start).transpose() * g.row(start - 1);
      }
      wn.accumulate(std::move(dw));
    }
    if (bn.requires_grad) bn.accumulate(g.colwise().sum());
    if (xn.requires_grad) {
      const auto w0 = wn.value.topRows(c_in);
      const auto w1 = wn.value.middleRows(c_in, c_in);
      const auto w2 = wn.value.bottomRows(c_in);
      Matrix dx(n, c_in);
      dx.noalias() = g * w1.transpose();
      if (n > 1) {
        dx.topRows(n - 1).noalias() += g.bottomRows(n - 1) * w0.transpose();
        dx.bottomRows(n - 1).noalias() += g.topRows(n - 1) * w2.transpose();
      }
      for (Index start = seq_len; start < n; start += seq_len) {
        dx.row(start - 1).noalias() -= g.row(start) * w0.transpose();
        dx.row(start).noalias() -= g.row(start - 1) * w2.transpose();
      }
      xn.accumulate(std::move(dx));
    }
  });
}

// Subgradient at 0 is 0.
inline Tensor relu(const Tensor& x) {
  Matrix y = x.value().cwiseMax(0.0);
  return make_result(std::move(y), {x}, [](Node& self) {
    Node& xn = detail::parent(self, 0);
    xn.accumulate((xn.value.array() > 0.0).select(self.grad, 0.0));
  });
}

// Counter-based dropout masks: element i of call c keeps iff
// hash(seed, c, i) >= p. Same seed and call order -> same masks.
class DropoutStream {
 public:
  explicit DropoutStream(std::uint64_t seed) : seed_(seed) {}
  std::uint64_t next_call() { return calls_++; }
  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::uint64_t calls_ = 0;
};

// Inverted dropout; identity unless `training`.
inline Tensor dropout(const Tensor& x, double p, bool training, DropoutStream* stream) {
  if (!training || p <= 0.0) return x;
  if (p >= 1.0) fail(ErrorKind::InvalidConfig, "dropout probability must be < 1");
  if (stream == nullptr) fail(ErrorKind::InvalidConfig, "training-mode dropout needs a DropoutStream");
  const std::uint64_t call = stream->next_call();
  const std::uint64_t key = mix64(stream->seed(), call);
  const double scale = 1.0 / (1.0 - p);
  Matrix mask(x.rows(), x.cols());
  double* m = mask.data();
  for (Index i = 0; i < mask.size(); ++i) {
    m[i] = to_unit(mix64(key, static_cast<std::uint64_t>(i))) >= p ? scale : 0.0;
  }
  Matrix y = x.value().cwiseProduct(mask);
  return make_result(std::move(y), {x}, [mask = std::move(mask)](Node& self) {
    detail::parent(self, 0).accumulate(self.grad.cwiseProduct(mask));
  });
}

// (B*L x C) -> (B x C), mean over each sequence.
inline Tensor global_average_pool(const Tensor& x, Index seq_len) {
  require_shape(seq_len > 0 && x.rows() % seq_len == 0, "global_average_pool: rows not a multiple of L");
  const Index batch = x.rows() / seq_len;
  Matrix y(batch, x.cols());
  for (Index b = 0; b < batch; ++b) {
    y.row(b) = x.value().middleRows(b * seq_len, seq_len).colwise().sum() / static_cast<double>(seq_len);
  }
  return make_result(std::move(y), {x}, [seq_len](Node& self) {
    Node& xn = detail::parent(self, 0);
    Matrix d(xn.value.rows(), xn.value.cols());
    const double inv = 1.0 / static_cast<double>(seq_len);
    for (Index b = 0; b < self.grad.rows(); ++b) {
      d.middleRows(b * seq_len, seq_len).rowwise() = self.grad.row(b) * inv;
    }
    xn.accumulate(std::move(d));
  });
}

/// (B*K x H) slot vectors with a (B x K) 0/1 mask -> (B x H) mean of the
/// present slots. A row with no present slot raises MissingModality.
inline Tensor masked_mean_pool(const Tensor& x, const Matrix& mask) {
  const Index slots = mask.cols();
  require_shape(slots > 0 && x.rows() == mask.rows() * slots, "masked_mean_pool: mask shape");
  const Index batch = mask.rows();
  Matrix y = Matrix::Zero(batch, x.cols());
  Eigen::VectorXd denom(batch);
  for (Index b = 0; b < batch; ++b) {
    double total = 0.0;
    for (Index k = 0; k < slots; ++k) {
      const double m = mask(b, k);
      if (m != 0.0) y.row(b) += m * x.value().row(b * slots + k);
      total += m;
    }
    if (!(total > 0.0)) fail(ErrorKind::MissingModality, "masked_mean_pool: no present slot in row " + std::to_string(b));
    denom(b) = total;
    y.row(b) /= total;
  }
  return make_result(std::move(y), {x}, [mask, denom](Node& self) {
    Node& xn = detail::parent(self, 0);
    const Index k_slots = mask.cols();
    Matrix d = Matrix::Zero(xn.value.rows(), xn.value.cols());
    for (Index b = 0; b < mask.rows(); ++b) {
      for (Index k = 0; k < k_slots; ++k) {
        const double w = mask(b, k) / denom(b);
        if (w != 0.0) d.row(b * k_slots + k) = w * self.grad.row(b);
      }
    }
    xn.accumulate(std::move(d));
  });
}

inline Matrix softmax_rows(const Matrix& x) {
  Matrix y(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const double top = x.row(r).maxCoeff();
    y.row(r) = (x.row(r).array() - top).exp().matrix();
    y.row(r) /= y.row(r).sum();
  }
  return y;
}

// Row-wise softmax.
inline Tensor softmax(const Tensor& x) {
  Matrix y = softmax_rows(x.value());
  return make_result(y, {x}, [y](Node& self) {
    Matrix d(y.rows(), y.cols());
    for (Index r = 0; r < y.rows(); ++r) {
      const double dot = self.grad.row(r).dot(y.row(r));
      d.row(r) = y.row(r).cwiseProduct((self.grad.row(r).array() - dot).matrix());
    }
    detail::parent(self, 0).accumulate(std::move(d));
  });
}

// Column-wise concatenation of tensors with equal row counts.
inline Tensor concat(const std::vector<Tensor>& parts) {
  require_shape(!parts.empty(), "concat: no inputs");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const Tensor& p : parts) {
    require_shape(p.rows() == rows, "concat: row mismatch");
    cols += p.cols();
  }
  Matrix y(rows, cols);
  std::vector<Index> widths;
  Index offset = 0;
  for (const Tensor& p : parts) {
    y.middleCols(offset, p.cols()) = p.value();
    widths.push_back(p.cols());
    offset += p.cols();
  }
  return make_result(std::move(y), parts, [widths = std::move(widths)](Node& self) {
    Index off = 0;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      Node& pn = detail::parent(self, i);
      if (pn.requires_grad) pn.accumulate(self.grad.middleCols(off, widths[i]));
      off += widths[i];
    }
  });
}

inline Tensor slice_cols(const Tensor& x, Index start, Index count) {
  require_shape(start >= 0 && count >= 0 && start + count <= x.cols(), "slice_cols: range");
  Matrix y = x.value().middleCols(start, count);
  return make_result(std::move(y), {x}, [start, count](Node& self) {
    Node& xn = detail::parent(self, 0);
    Matrix d = Matrix::Zero(xn.value.rows(), xn.value.cols());
    d.middleCols(start, count) = self.grad;
    xn.accumulate(std::move(d));
  });
}

// (B*L x C) + tiled (L x C).
inline Tensor add_tiled(const Tensor& x, const Tensor& pattern) {
  const Index seq_len = pattern.rows();
  require_shape(seq_len > 0 && x.rows() % seq_len == 0 && x.cols() == pattern.cols(), "add_tiled: shape");
  Matrix y = x.value();
  for (Index b = 0; b < x.rows() / seq_len; ++b) y.middleRows(b * seq_len, seq_len) += pattern.value();
  return make_result(std::move(y), {x, pattern}, [seq_len](Node& self) {
    Node& xn = detail::parent(self, 0);
    Node& pn = detail::parent(self, 1);
    if (xn.requires_grad) xn.accumulate(self.grad);
    if (pn.requires_grad) {
      Matrix d = Matrix::Zero(seq_len, self.grad.cols());
      for (Index b = 0; b < self.grad.rows() / seq_len; ++b) d += self.grad.middleRows(b * seq_len, seq_len);
      pn.accumulate(std::move(d));
    }
  });
}

// Each row of z scaled by weights(row, column).
inline Tensor scale_rows_by(const Tensor& z, const Tensor& weights, Index column) {
  require_shape(weights.rows() == z.rows() && column >= 0 && column < weights.cols(), "scale_rows_by: shape");
  Eigen::VectorXd w = weights.value().col(column);
  Matrix y = w.asDiagonal() * z.value();
  return make_result(std::move(y), {z, weights}, [column](Node& self) {
    Node& zn = detail::parent(self, 0);
    Node& wn = detail::parent(self, 1);
    if (zn.requires_grad) {
      Eigen::VectorXd wc = wn.value.col(column);
      zn.accumulate(wc.asDiagonal() * self.grad);
    }
    if (wn.requires_grad) {
      Matrix d = Matrix::Zero(wn.value.rows(), wn.value.cols());
      d.col(column) = self.grad.cwiseProduct(zn.value).rowwise().sum();
      wn.accumulate(std::move(d));
    }
  });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  Matrix y = a.value() + b.value();
  return make_result(std::move(y), {a, b}, [](Node& self) {
    detail::parent(self, 0).accumulate(self.grad);
    detail::parent(self, 1).accumulate(self.grad);
  });
}

inline Tensor scale(const Tensor& a, double factor) {
  Matrix y = a.value() * factor;
  return make_result(std::move(y), {a}, [factor](Node& self) {
    detail::parent(self, 0).accumulate(self.grad * factor);
  });
}

// Mean of all elements, as a 1x1 tensor.
inline Tensor mean_all(const Tensor& a) {
  Matrix y(1, 1);
  y(0, 0) = a.value().mean();
  return make_result(std::move(y), {a}, [](Node& self) {
    Node& an = detail::parent(self, 0);
    const double g = self.grad(0, 0) / static_cast<double>(an.value.size());
    an.accumulate(Matrix::Constant(an.value.rows(), an.value.cols(), g));
  });
}

/// Huber loss averaged over every element of `pred`. At |e| == delta the
/// quadratic branch (and its derivative) is used.
inline Tensor huber_loss(const Tensor& pred, const Matrix& target, double delta = 1.0) {
  require_shape(pred.rows() == target.rows() && pred.cols() == target.cols(), "huber_loss: shape mismatch");
  if (!(delta > 0.0)) fail(ErrorKind::InvalidConfig, "huber delta must be > 0");
  const Matrix err = pred.value() - target;
  double total = 0.0;
  for (Index i = 0; i < err.size(); ++i) {
    const double e = err.data()[i];
    const double a = std::abs(e);
    total += a <= delta ? 0.5 * e * e : delta * a - 0.5 * delta * delta;
  }
  Matrix y(1, 1);
  y(0, 0) = total / static_cast<double>(err.size());
  return make_result(std::move(y), {pred}, [err, delta](Node& self) {
    const double g = self.grad(0, 0) / static_cast<double>(err.size());
    Matrix d(err.rows(), err.cols());
    for (Index i = 0; i < err.size(); ++i) {
      const double e = err.data()[i];
      d.data()[i] = g * (std::abs(e) <= delta ? e : delta * (e > 0 ? 1.0 : -1.0));
    }
    detail::parent(self, 0).accumulate(std::move(d));
  });
}

/// Mean over rows of -log softmax(logits)[label], max-shift stabilized.
inline Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_shape(static_cast<Index>(labels.size()) == logits.rows(), "cross_entropy: label count");
  const Matrix& x = logits.value();
  Matrix probs(x.rows(), x.cols());
  double total = 0.0;
  for (Index r = 0; r < x.rows(); ++r) {
    const int label = labels[static_cast<std::size_t>(r)];
    require_shape(label >= 0 && label < x.cols(), "cross_entropy: label out of range");
    const double top = x.row(r).maxCoeff();
    const Eigen::ArrayXd shifted = x.row(r).array().transpose() - top;
    const double log_sum = std::log(shifted.exp().sum());
    total += log_sum - shifted(label);
    probs.row(r) = (shifted - log_sum).exp().matrix().transpose();
  }
  Matrix y(1, 1);
  y(0, 0) = total / static_cast<double>(x.rows());
  std::vector<int> saved(labels.begin(), labels.end());
  return make_result(std::move(y), {logits}, [probs = std::move(probs), saved = std::move(saved)](Node& self) {
    const double g = self.grad(0, 0) / static_cast<double>(probs.rows());
    Matrix d = probs;
    for (Index r = 0; r < d.rows(); ++r) d(r, saved[static_cast<std::size_t>(r)]) -= 1.0;
    detail::parent(self, 0).accumulate(d * g);
  });
}

}  // namespace epcfusion::diffcore
