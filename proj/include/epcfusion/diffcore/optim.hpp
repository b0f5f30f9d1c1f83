#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "epcfusion/diffcore/tensor.hpp"

namespace epcfusion::diffcore {

struct ParamGroup {
  std::string name;
  double lr = 1e-3;
  std::vector<Tensor> params;
};

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

inline double global_grad_norm(const std::vector<ParamGroup>& groups) {
  double sq = 0.0;
  for (const ParamGroup& g : groups) {
    for (const Tensor& p : g.params) {
      if (p.has_grad()) sq += p.grad().squaredNorm();
    }
  }
  return std::sqrt(sq);
}

// Rescales all gradients so the global L2 norm is at most max_norm.
// Returns the norm before clipping.
inline double clip_grad_norm(std::vector<ParamGroup>& groups, double max_norm) {
  const double norm = global_grad_norm(groups);
  if (norm > max_norm && norm > 0.0) {
    const double factor = max_norm / norm;
    for (ParamGroup& g : groups) {
      for (Tensor& p : g.params) {
        if (p.has_grad()) p.mutable_grad() *= factor;
      }
    }
  }
  return norm;
}

class Adam {
 public:
  explicit Adam(std::vector<ParamGroup> groups, AdamOptions options = {})
      : groups_(std::move(groups)), options_(options) {
    for (const ParamGroup& g : groups_) {
      if (!(g.lr > 0.0)) fail(ErrorKind::InvalidConfig, "learning rate of group " + g.name + " must be > 0");
      std::vector<Matrix> m;
      std::vector<Matrix> v;
      for (const Tensor& p : g.params) {
        m.push_back(Matrix::Zero(p.rows(), p.cols()));
        v.push_back(Matrix::Zero(p.rows(), p.cols()));
      }
      first_.push_back(std::move(m));
      second_.push_back(std::move(v));
    }
  }

  std::vector<ParamGroup>& groups() { return groups_; }
  const std::vector<ParamGroup>& groups() const { return groups_; }
  std::int64_t step_count() const { return step_; }

  void zero_grad() {
    for (ParamGroup& g : groups_) {
      for (Tensor& p : g.params) p.zero_grad();
    }
  }

  double clip(double max_norm) { return clip_grad_norm(groups_, max_norm); }

  void scale_learning_rates(double factor) {
    for (ParamGroup& g : groups_) g.lr *= factor;
  }

  // Parameters without a gradient are treated as having a zero gradient.
  void step() {
    ++step_;
    const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(step_));
    for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
      ParamGroup& g = groups_[gi];
      for (std::size_t pi = 0; pi < g.params.size(); ++pi) {
        Tensor& p = g.params[pi];
        Matrix& m = first_[gi][pi];
        Matrix& v = second_[gi][pi];
        if (p.has_grad()) {
          m = options_.beta1 * m + (1.0 - options_.beta1) * p.grad();
          v = options_.beta2 * v + (1.0 - options_.beta2) * p.grad().cwiseAbs2();
        } else {
          m *= options_.beta1;
          v *= options_.beta2;
        }
        const auto m_hat = m.array() / bc1;
        const auto v_hat = v.array() / bc2;
        p.mutable_value().array() -= g.lr * m_hat / (v_hat.sqrt() + options_.eps);
      }
    }
  }

 private:
  std::vector<ParamGroup> groups_;
  AdamOptions options_;
  std::vector<std::vector<Matrix>> first_;
  std::vector<std::vector<Matrix>> second_;
  std::int64_t step_ = 0;
};

/// Halves learning rates after `patience` consecutive epochs without a
/// strict improvement of the monitored loss; the counter resets on
/// improvement and after each reduction.
class PlateauScheduler {
 public:
  explicit PlateauScheduler(double factor = 0.5, int patience = 5) : factor_(factor), patience_(patience) {}

  // Returns the multiplier to apply to every group rate this epoch (1 or factor).
  double step(double loss) {
    if (loss < best_) {
      best_ = loss;
      bad_epochs_ = 0;
      return 1.0;
    }
    if (++bad_epochs_ >= patience_) {
      bad_epochs_ = 0;
      return factor_;
    }
    return 1.0;
  }

  double best() const { return best_; }
  int bad_epochs() const { return bad_epochs_; }

 private:
  double factor_;
  int patience_;
  double best_ = std::numeric_limits<double>::infinity();
  int bad_epochs_ = 0;
};

}  // namespace epcfusion::diffcore
