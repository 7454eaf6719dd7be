#pragma once

// Adaptive-moment optimizer over an N x d parameter matrix with one learning rate per column.

#include <cmath>
#include <string>
#include <vector>

#include "gsproto/error.hpp"
#include "gsproto/gaussian.hpp"

namespace gsproto {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-15;
};

template <typename T> class Adam {
public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  /// Zero state for `rows` x `cols` parameters.
  void reset(Eigen::Index rows, Eigen::Index cols) {
    m_ = MatX<T>::Zero(rows, cols);
    v_ = MatX<T>::Zero(rows, cols);
    steps_ = 0;
  }

  /// params -= lr * m_hat / (sqrt(v_hat) + eps). `lr` has one entry per column.
  void step(MatX<T> &params, const MatX<T> &grad, const VecX<T> &lr) {
    if (grad.rows() != params.rows() || grad.cols() != params.cols())
      throw ShapeError("adam: gradient is " + std::to_string(grad.rows()) + "x" + std::to_string(grad.cols()) +
                       ", parameters are " + std::to_string(params.rows()) + "x" + std::to_string(params.cols()));
    if (lr.size() != params.cols())
      throw ShapeError("adam: need one learning rate per column");
    if (m_.rows() != params.rows() || m_.cols() != params.cols())
      throw ShapeError("adam: moment state has " + std::to_string(m_.rows()) + " rows, parameters have " +
                       std::to_string(params.rows()));
    ++steps_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, double(steps_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, double(steps_));
    const T b1 = T(cfg_.beta1), b2 = T(cfg_.beta2);
    for (Eigen::Index i = 0; i < params.rows(); ++i)
      for (Eigen::Index j = 0; j < params.cols(); ++j) {
        const T g = grad(i, j);
        T &m = m_(i, j);
        T &v = v_(i, j);
        m = b1 * m + (T(1) - b1) * g;
        v = b2 * v + (T(1) - b2) * g * g;
        const double m_hat = double(m) / c1;
        const double v_hat = double(v) / c2;
        params(i, j) -= T(double(lr[j]) * m_hat / (std::sqrt(v_hat) + cfg_.eps));
      }
  }

  /// Row j of the new state is row source[j] of the old one.
  void reindex(const std::vector<std::size_t> &source) {
    MatX<T> m(Eigen::Index(source.size()), m_.cols()), v(Eigen::Index(source.size()), v_.cols());
    for (std::size_t j = 0; j < source.size(); ++j) {
      if (source[j] >= std::size_t(m_.rows()))
        throw ShapeError("adam: reindex source " + std::to_string(source[j]) + " out of range");
      m.row(Eigen::Index(j)) = m_.row(Eigen::Index(source[j]));
      v.row(Eigen::Index(j)) = v_.row(Eigen::Index(source[j]));
    }
    m_ = std::move(m);
    v_ = std::move(v);
  }

  /// Negate the first moment of the given rows over columns [col, col + count).
  void negate(const std::vector<std::size_t> &rows, Eigen::Index col, Eigen::Index count) {
    for (auto r : rows)
      m_.row(Eigen::Index(r)).segment(col, count) *= T(-1);
  }

  Eigen::Index rows() const { return m_.rows(); }
  long steps() const { return steps_; }
  const MatX<T> &first_moment() const { return m_; }
  const MatX<T> &second_moment() const { return v_; }

private:
  AdamConfig cfg_;
  MatX<T> m_, v_;
  long steps_ = 0;
};

} // namespace gsproto
