#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

namespace drivefix::ad {

using Mat = Eigen::MatrixXd;  // rows = tokens, cols = channels

struct Node {
  Mat val;
  Mat grad;
  bool needs_grad = false;
  std::function<void()> backward;  // pushes this->grad into parents
};

using Var = Node*;

// Reverse-mode tape over dense double matrices. Nodes are created in forward
// order; backward() walks them in reverse. One tape per forward pass.
class Tape {
 public:
  Var constant(Mat v) {
    auto* n = make();
    n->val = std::move(v);
    return n;
  }

  // Differentiable input; on backward the accumulated gradient is added into
  // *grad_sink (which must have the value's shape).
  Var leaf(const Mat& v, Mat* grad_sink) {
    auto* n = make();
    n->val = v;
    n->needs_grad = true;
    n->grad = Mat::Zero(v.rows(), v.cols());
    n->backward = [n, grad_sink] {
      if (grad_sink) *grad_sink += n->grad;
    };
    return n;
  }

  Var add(Var a, Var b) {
    auto* n = unary_shape(a->val + b->val, {a, b});
    n->backward = [n, a, b] {
      if (a->needs_grad) a->grad += n->grad;
      if (b->needs_grad) b->grad += n->grad;
    };
    return n;
  }

  Var sub(Var a, Var b) {
    auto* n = unary_shape(a->val - b->val, {a, b});
    n->backward = [n, a, b] {
      if (a->needs_grad) a->grad += n->grad;
      if (b->needs_grad) b->grad -= n->grad;
    };
    return n;
  }

  Var scale(Var a, double s) {
    auto* n = unary_shape(a->val * s, {a});
    n->backward = [n, a, s] {
      if (a->needs_grad) a->grad += n->grad * s;
    };
    return n;
  }

  Var hadamard(Var a, Var b) {
    auto* n = unary_shape(a->val.cwiseProduct(b->val), {a, b});
    n->backward = [n, a, b] {
      if (a->needs_grad) a->grad += n->grad.cwiseProduct(b->val);
      if (b->needs_grad) b->grad += n->grad.cwiseProduct(a->val);
    };
    return n;
  }

  Var matmul(Var a, Var b) {  // a (n,k) * b (k,m)
    auto* n = unary_shape(a->val * b->val, {a, b});
    n->backward = [n, a, b] {
      if (a->needs_grad) a->grad.noalias() += n->grad * b->val.transpose();
      if (b->needs_grad) b->grad.noalias() += a->val.transpose() * n->grad;
    };
    return n;
  }

  Var matmul_nt(Var a, Var b) {  // a (n,k) * b^T (k,m)
    auto* n = unary_shape(a->val * b->val.transpose(), {a, b});
    n->backward = [n, a, b] {
      if (a->needs_grad) a->grad.noalias() += n->grad * b->val;
      if (b->needs_grad) b->grad.noalias() += n->grad.transpose() * a->val;
    };
    return n;
  }

  // broadcast-add a 1xC row vector to every row
  Var add_rowvec(Var a, Var bias) {
    auto* n = unary_shape(a->val.rowwise() + Eigen::RowVectorXd(bias->val.row(0)), {a, bias});
    n->backward = [n, a, bias] {
      if (a->needs_grad) a->grad += n->grad;
      if (bias->needs_grad) bias->grad.row(0) += n->grad.colwise().sum();
    };
    return n;
  }

  Var slice_rows(Var a, Eigen::Index r0, Eigen::Index nrows) {
    auto* n = unary_shape(a->val.middleRows(r0, nrows), {a});
    n->backward = [n, a, r0, nrows] {
      if (a->needs_grad) a->grad.middleRows(r0, nrows) += n->grad;
    };
    return n;
  }

  Var slice_cols(Var a, Eigen::Index c0, Eigen::Index ncols) {
    auto* n = unary_shape(a->val.middleCols(c0, ncols), {a});
    n->backward = [n, a, c0, ncols] {
      if (a->needs_grad) a->grad.middleCols(c0, ncols) += n->grad;
    };
    return n;
  }

  Var concat_rows(const std::vector<Var>& parts) {
    Eigen::Index rows = 0;
    for (Var p : parts) rows += p->val.rows();
    Mat v(rows, parts.front()->val.cols());
    Eigen::Index r = 0;
    for (Var p : parts) {
      v.middleRows(r, p->val.rows()) = p->val;
      r += p->val.rows();
    }
    auto* n = unary_shape(std::move(v), parts);
    std::vector<Var> ps = parts;
    n->backward = [n, ps] {
      Eigen::Index r = 0;
      for (Var p : ps) {
        if (p->needs_grad) p->grad += n->grad.middleRows(r, p->val.rows());
        r += p->val.rows();
      }
    };
    return n;
  }

  // row permutation / selection; backward scatter-adds
  Var gather_rows(Var a, std::vector<Eigen::Index> idx) {
    Mat v(static_cast<Eigen::Index>(idx.size()), a->val.cols());
    for (size_t i = 0; i < idx.size(); ++i) v.row(i) = a->val.row(idx[i]);
    auto* n = unary_shape(std::move(v), {a});
    n->backward = [n, a, idx = std::move(idx)] {
      if (!a->needs_grad) return;
      for (size_t i = 0; i < idx.size(); ++i) a->grad.row(idx[i]) += n->grad.row(i);
    };
    return n;
  }

  // per-row layer normalization with learned gain/bias (1xC each)
  Var layernorm(Var x, Var gain, Var bias, double eps = 1e-6) {
    const Mat& X = x->val;
    Eigen::Index R = X.rows(), C = X.cols();
    Mat xhat(R, C);
    Eigen::VectorXd inv_sigma(R);
    for (Eigen::Index r = 0; r < R; ++r) {
      double mu = X.row(r).mean();
      double var = (X.row(r).array() - mu).square().mean();
      double is = 1.0 / std::sqrt(var + eps);
      inv_sigma(r) = is;
      xhat.row(r) = (X.row(r).array() - mu) * is;
    }
    Mat y = xhat * gain->val.row(0).asDiagonal();
    y = y.rowwise() + Eigen::RowVectorXd(bias->val.row(0));
    auto* n = unary_shape(std::move(y), {x, gain, bias});
    n->backward = [n, x, gain, bias, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma)] {
      const Mat& dy = n->grad;
      if (gain->needs_grad) gain->grad.row(0) += dy.cwiseProduct(xhat).colwise().sum();
      if (bias->needs_grad) bias->grad.row(0) += dy.colwise().sum();
      if (x->needs_grad) {
        Eigen::Index R = dy.rows();
        for (Eigen::Index r = 0; r < R; ++r) {
          Eigen::RowVectorXd g = dy.row(r).cwiseProduct(gain->val.row(0));
          double mg = g.mean();
          double mgx = g.cwiseProduct(xhat.row(r)).mean();
          x->grad.row(r) +=
              inv_sigma(r) * (g.array() - mg - xhat.row(r).array() * mgx).matrix();
        }
      }
    };
    return n;
  }

  Var softmax_rows(Var a) {
    Mat p = a->val;
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
      Eigen::RowVectorXd row = p.row(r);
      double m = row.maxCoeff();
      Eigen::ArrayXd e = (row.array() - m).exp();
      p.row(r) = (e / e.sum()).matrix().transpose();
    }
    auto* n = unary_shape(std::move(p), {a});
    n->backward = [n, a] {
      if (!a->needs_grad) return;
      for (Eigen::Index r = 0; r < n->val.rows(); ++r) {
        Eigen::RowVectorXd pd = n->grad.row(r).cwiseProduct(n->val.row(r));
        a->grad.row(r) += pd - pd.sum() * n->val.row(r);
      }
    };
    return n;
  }

  Var gelu(Var a) {
    const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * M_PI);
    Mat y = a->val.unaryExpr(
        [&](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); });
    auto* n = unary_shape(std::move(y), {a});
    n->backward = [n, a, inv_sqrt2, inv_sqrt2pi] {
      if (!a->needs_grad) return;
      a->grad += n->grad.cwiseProduct(a->val.unaryExpr([&](double v) {
        return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt2pi * std::exp(-0.5 * v * v);
      }));
    };
    return n;
  }

  // mean of squared error against a constant target; returns a 1x1 node
  Var mse_to(Var a, const Mat& target) {
    if (a->val.rows() != target.rows() || a->val.cols() != target.cols())
      throw std::invalid_argument("mse_to: shape mismatch");
    double inv_n = 1.0 / static_cast<double>(a->val.size());
    Mat diff = a->val - target;
    auto* n = unary_shape(Mat::Constant(1, 1, diff.squaredNorm() * inv_n), {a});
    n->backward = [n, a, diff = std::move(diff), inv_n] {
      if (a->needs_grad) a->grad += (2.0 * inv_n * n->grad(0, 0)) * diff;
    };
    return n;
  }

  Var mean_all(Var a) {
    double inv_n = 1.0 / static_cast<double>(a->val.size());
    auto* n = unary_shape(Mat::Constant(1, 1, a->val.sum() * inv_n), {a});
    n->backward = [n, a, inv_n] {
      if (a->needs_grad) a->grad.array() += inv_n * n->grad(0, 0);
    };
    return n;
  }

  // mean over unmasked rows of (1 - cos(f_r, g_r)), g constant
  Var angular_alignment(Var f, const Mat& g, const std::vector<bool>& mask, double eps = 1e-8) {
    Eigen::Index R = f->val.rows();
    double acc = 0;
    int n_used = 0;
    for (Eigen::Index r = 0; r < R; ++r) {
      if (!mask.empty() && !mask[r]) continue;
      double d = f->val.row(r).norm() * g.row(r).norm() + eps;
      acc += 1.0 - f->val.row(r).dot(g.row(r)) / d;
      ++n_used;
    }
    double val = n_used ? acc / n_used : 0.0;
    auto* n = unary_shape(Mat::Constant(1, 1, val), {f});
    n->backward = [n, f, g, mask, eps, n_used] {
      if (!f->needs_grad || n_used == 0) return;
      double s = n->grad(0, 0) / n_used;
      for (Eigen::Index r = 0; r < f->val.rows(); ++r) {
        if (!mask.empty() && !mask[r]) continue;
        double nf = f->val.row(r).norm(), ng = g.row(r).norm();
        double d = nf * ng + eps;
        double dot = f->val.row(r).dot(g.row(r));
        // d(1-cos)/df = -(g/d - dot*ng*(f/nf)/d^2)
        Eigen::RowVectorXd df = -(g.row(r) / d);
        if (nf > 0) df += (dot * ng / (d * d * nf)) * f->val.row(r);
        f->grad.row(r) += s * df;
      }
    };
    return n;
  }

  // mean over unmasked rows of (log(|f_r|+eps) - log(|g_r|+eps))^2
  Var scale_alignment(Var f, const Mat& g, const std::vector<bool>& mask, double eps = 1e-8) {
    Eigen::Index R = f->val.rows();
    double acc = 0;
    int n_used = 0;
    for (Eigen::Index r = 0; r < R; ++r) {
      if (!mask.empty() && !mask[r]) continue;
      double lr = std::log(f->val.row(r).norm() + eps) - std::log(g.row(r).norm() + eps);
      acc += lr * lr;
      ++n_used;
    }
    double val = n_used ? acc / n_used : 0.0;
    auto* n = unary_shape(Mat::Constant(1, 1, val), {f});
    n->backward = [n, f, g, mask, eps, n_used] {
      if (!f->needs_grad || n_used == 0) return;
      double s = n->grad(0, 0) / n_used;
      for (Eigen::Index r = 0; r < f->val.rows(); ++r) {
        if (!mask.empty() && !mask[r]) continue;
        double nf = f->val.row(r).norm();
        double lr = std::log(nf + eps) - std::log(g.row(r).norm() + eps);
        if (nf > 0) f->grad.row(r) += s * 2.0 * lr / (nf + eps) * (f->val.row(r) / nf);
      }
    };
    return n;
  }

  // run the reverse sweep from a 1x1 loss node
  void backward(Var loss) {
    if (loss->val.size() != 1) throw std::invalid_argument("backward: loss must be scalar");
    loss->grad(0, 0) = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
      if ((*it)->backward && (*it)->needs_grad) (*it)->backward();
  }

  void clear() { nodes_.clear(); }
  size_t size() const { return nodes_.size(); }

 private:
  Node* make() {
    nodes_.push_back(std::make_unique<Node>());
    return nodes_.back().get();
  }

  Node* unary_shape(Mat v, const std::vector<Var>& parents) {
    auto* n = make();
    n->val = std::move(v);
    for (Var p : parents)
      if (p->needs_grad) n->needs_grad = true;
    if (n->needs_grad) n->grad = Mat::Zero(n->val.rows(), n->val.cols());
    return n;
  }

  std::vector<std::unique_ptr<Node>> nodes_;
};

}  // namespace drivefix::ad
