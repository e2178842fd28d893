#ifndef DPOE_AUTOGRAD_HPP_
#define DPOE_AUTOGRAD_HPP_

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

namespace dpoe {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class S>
using Arr = Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Geometry of one strided convolution stage.
struct ConvShape {
  int in_c, in_h, in_w;
  int out_c, kernel, stride, pad;
  int out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
  int out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
};

/// Reverse-mode tape over row-major Eigen matrices. Rows are batch
/// instances, columns are features (images flattened channel-major).
/// A Tape instance covers one forward/backward pass and is then discarded.
template <class S>
class Tape {
 public:
  struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
  };

  Var input(Mat<S> value, bool requires_grad = false) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  const Mat<S>& val(Var v) const { return nodes_[v.id].value; }
  const Mat<S>& grad(Var v) const { return nodes_[v.id].grad; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  // ---- elementwise ----

  Var add(Var a, Var b) {
    return make({a, b}, val(a) + val(b), [this, a, b](const Mat<S>& g) {
      accum(a, g);
      accum(b, g);
    });
  }

  Var sub(Var a, Var b) {
    return make({a, b}, val(a) - val(b), [this, a, b](const Mat<S>& g) {
      accum(a, g);
      accum(b, -g);
    });
  }

  Var mul(Var a, Var b) {
    return make({a, b}, val(a).cwiseProduct(val(b)),
                [this, a, b](const Mat<S>& g) {
                  if (requires_grad_path(a)) accum(a, g.cwiseProduct(val(b)));
                  if (requires_grad_path(b)) accum(b, g.cwiseProduct(val(a)));
                });
  }

  Var scale(Var a, S k) {
    return make({a}, val(a) * k, [this, a, k](const Mat<S>& g) { accum(a, g * k); });
  }

  Var add_const(Var a, S k) {
    return make({a}, (val(a).array() + k).matrix(),
                [this, a](const Mat<S>& g) { accum(a, g); });
  }

  Var relu(Var a) {
    Mat<S> y = val(a).cwiseMax(S(0));
    return make({a}, std::move(y), [this, a](const Mat<S>& g) {
      accum(a, (val(a).array() > S(0)).template cast<S>().matrix().cwiseProduct(g));
    });
  }

  Var leaky_relu(Var a, S slope) {
    Arr<S> x = val(a).array();
    Mat<S> y = (x >= S(0)).select(x, x * slope).matrix();
    return make({a}, std::move(y), [this, a, slope](const Mat<S>& g) {
      Arr<S> m = (val(a).array() >= S(0)).select(Arr<S>::Constant(g.rows(), g.cols(), S(1)),
                                                 Arr<S>::Constant(g.rows(), g.cols(), slope));
      accum(a, (g.array() * m).matrix());
    });
  }

  Var exp(Var a) {
    Mat<S> y = val(a).array().exp().matrix();
    Var out = make({a}, std::move(y), nullptr);
    nodes_[out.id].backprop = [this, a, out](const Mat<S>& g) {
      accum(a, g.cwiseProduct(val(out)));
    };
    return out;
  }

  Var log(Var a) {
    return make({a}, val(a).array().log().matrix(), [this, a](const Mat<S>& g) {
      accum(a, (g.array() / val(a).array()).matrix());
    });
  }

  Var square(Var a) {
    return make({a}, val(a).cwiseProduct(val(a)), [this, a](const Mat<S>& g) {
      accum(a, S(2) * g.cwiseProduct(val(a)));
    });
  }

  Var abs(Var a) {
    return make({a}, val(a).cwiseAbs(), [this, a](const Mat<S>& g) {
      accum(a, g.cwiseProduct(val(a).array().sign().matrix()));
    });
  }

  Var sigmoid(Var a) {
    Mat<S> y = (S(1) / (S(1) + (-val(a).array()).exp())).matrix();
    Var out = make({a}, std::move(y), nullptr);
    nodes_[out.id].backprop = [this, a, out](const Mat<S>& g) {
      Arr<S> s = val(out).array();
      accum(a, (g.array() * s * (S(1) - s)).matrix());
    };
    return out;
  }

  Var clamp(Var a, S lo, S hi) {
    Mat<S> y = val(a).cwiseMax(lo).cwiseMin(hi);
    return make({a}, std::move(y), [this, a, lo, hi](const Mat<S>& g) {
      Arr<S> inside = (val(a).array() >= lo && val(a).array() <= hi).template cast<S>();
      accum(a, (g.array() * inside).matrix());
    });
  }

  // ---- linear algebra ----

  Var matmul(Var a, Var b) {
    Mat<S> y;
    y.noalias() = val(a) * val(b);
    return make({a, b}, std::move(y), [this, a, b](const Mat<S>& g) {
      if (requires_grad_path(a)) {
        Mat<S> ga;
        ga.noalias() = g * val(b).transpose();
        accum(a, ga);
      }
      if (requires_grad_path(b)) {
        Mat<S> gb;
        gb.noalias() = val(a).transpose() * g;
        accum(b, gb);
      }
    });
  }

  /// y = a + bias, bias is 1xC broadcast over rows.
  Var add_rowvec(Var a, Var bias) {
    Mat<S> y = val(a).rowwise() + val(bias).row(0);
    return make({a, bias}, std::move(y), [this, a, bias](const Mat<S>& g) {
      accum(a, g);
      if (requires_grad_path(bias)) accum(bias, g.colwise().sum());
    });
  }

  // ---- reductions / shape ----

  Var sum_rows(Var a) {  // Bx1
    Mat<S> y = val(a).rowwise().sum();
    return make({a}, std::move(y), [this, a](const Mat<S>& g) {
      accum(a, g * Mat<S>::Ones(1, val(a).cols()));
    });
  }

  Var sum_all(Var a) {  // 1x1
    Mat<S> y(1, 1);
    y(0, 0) = val(a).sum();
    return make({a}, std::move(y), [this, a](const Mat<S>& g) {
      accum(a, Mat<S>::Constant(val(a).rows(), val(a).cols(), g(0, 0)));
    });
  }

  Var mean_all(Var a) {
    S inv = S(1) / S(val(a).size());
    Mat<S> y(1, 1);
    y(0, 0) = val(a).sum() * inv;
    return make({a}, std::move(y), [this, a, inv](const Mat<S>& g) {
      accum(a, Mat<S>::Constant(val(a).rows(), val(a).cols(), g(0, 0) * inv));
    });
  }

  /// Bx1 -> BxC copy broadcast.
  Var broadcast_cols(Var a, int cols) {
    Mat<S> y = val(a) * Mat<S>::Ones(1, cols);
    return make({a}, std::move(y), [this, a](const Mat<S>& g) {
      accum(a, g.rowwise().sum());
    });
  }

  Var concat_cols(Var a, Var b) {
    Mat<S> y(val(a).rows(), val(a).cols() + val(b).cols());
    y << val(a), val(b);
    return make({a, b}, std::move(y), [this, a, b](const Mat<S>& g) {
      accum(a, g.leftCols(val(a).cols()));
      accum(b, g.rightCols(val(b).cols()));
    });
  }

  Var slice_cols(Var a, int begin, int n) {
    Mat<S> y = val(a).middleCols(begin, n);
    return make({a}, std::move(y), [this, a, begin, n](const Mat<S>& g) {
      Mat<S> ga = Mat<S>::Zero(val(a).rows(), val(a).cols());
      ga.middleCols(begin, n) = g;
      accum(a, ga);
    });
  }

  Var permute_rows(Var a, const std::vector<int>& perm) {
    Mat<S> y(val(a).rows(), val(a).cols());
    for (size_t i = 0; i < perm.size(); ++i) y.row(static_cast<int>(i)) = val(a).row(perm[i]);
    return make({a}, std::move(y), [this, a, perm](const Mat<S>& g) {
      Mat<S> ga = Mat<S>::Zero(val(a).rows(), val(a).cols());
      for (size_t i = 0; i < perm.size(); ++i) ga.row(perm[i]) += g.row(static_cast<int>(i));
      accum(a, ga);
    });
  }

  // ---- softmax family (row-wise) ----

  Var logsumexp_rows(Var a) {  // Bx1
    const Mat<S>& x = val(a);
    Mat<S> y(x.rows(), 1);
    for (int i = 0; i < x.rows(); ++i) {
      S m = x.row(i).maxCoeff();
      y(i, 0) = m + std::log((x.row(i).array() - m).exp().sum());
    }
    Var out = make({a}, std::move(y), nullptr);
    nodes_[out.id].backprop = [this, a, out](const Mat<S>& g) {
      Mat<S> soft = (val(a).colwise() - val(out).col(0)).array().exp().matrix();
      accum(a, soft.array().colwise() * g.col(0).array());
    };
    return out;
  }

  Var log_softmax_rows(Var a) {
    Var lse = logsumexp_rows(a);
    Var lseb = broadcast_cols(lse, static_cast<int>(val(a).cols()));
    return sub(a, lseb);
  }

  Var softmax_rows(Var a) { return exp(log_softmax_rows(a)); }

  // ---- batch normalization on the batch axis ----

  /// y = scale * (x - mean_col) / sqrt(var_col + eps); biased variance,
  /// statistics recomputed per batch, scale fixed (not learned).
  Var batch_center_scale(Var a, S bn_scale, S eps) {
    const Mat<S>& x = val(a);
    const S inv_b = S(1) / S(x.rows());
    Eigen::Matrix<S, 1, Eigen::Dynamic> mean = x.colwise().mean();
    Mat<S> centered = x.rowwise() - mean;
    Eigen::Matrix<S, 1, Eigen::Dynamic> var =
        centered.array().square().matrix().colwise().sum() * inv_b;
    Eigen::Matrix<S, 1, Eigen::Dynamic> inv_std = (var.array() + eps).rsqrt().matrix();
    Mat<S> xhat = centered.array().rowwise() * inv_std.array();
    Mat<S> y = xhat * bn_scale;
    Var out = make({a}, std::move(y), nullptr);
    nodes_[out.id].backprop = [this, a, bn_scale, inv_b, inv_std, xhat](const Mat<S>& g) {
      // dx = scale*inv_std * (g - mean(g) - xhat * mean(g .* xhat))
      Eigen::Matrix<S, 1, Eigen::Dynamic> gmean = g.colwise().mean();
      Eigen::Matrix<S, 1, Eigen::Dynamic> gxmean =
          g.cwiseProduct(xhat).colwise().sum() * inv_b;
      Mat<S> t = (g.rowwise() - gmean) - (xhat.array().rowwise() * gxmean.array()).matrix();
      accum(a, (t.array().rowwise() * (inv_std.array() * bn_scale)).matrix());
    };
    return out;
  }

  // ---- stable losses ----

  /// Per-row sum of Bernoulli cross-entropy between targets and sigmoid(logits).
  Var bce_with_logits_rows(Var logits, const Mat<S>& target) {
    const Arr<S> l = val(logits).array();
    const Arr<S> t = target.array();
    Arr<S> loss = l.max(S(0)) - l * t + (S(1) + (-l.abs()).exp()).log();
    Mat<S> y = loss.matrix().rowwise().sum();
    return make({logits}, std::move(y), [this, logits, target](const Mat<S>& g) {
      Arr<S> s = S(1) / (S(1) + (-val(logits).array()).exp());
      accum(logits, ((s - target.array()).colwise() * g.col(0).array()).matrix());
    });
  }

  // ---- convolution (kernel k, stride s, zero padding p) ----

  /// x: Bx(C*H*W), w: out_c x (in_c*k*k), b: 1 x out_c.
  Var conv2d(Var x, Var w, Var b, const ConvShape& cs) {
    const Mat<S>& xv = val(x);
    const int B = static_cast<int>(xv.rows());
    const int oh = cs.out_h(), ow = cs.out_w();
    Mat<S> y(B, cs.out_c * oh * ow);
    for (int i = 0; i < B; ++i) {
      Mat<S> col = im2col(xv.row(i), cs);
      Mat<S> out;
      out.noalias() = val(w) * col;  // out_c x (oh*ow)
      out.array().colwise() += val(b).row(0).transpose().array();
      y.row(i) = Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(out.data(), out.size());
    }
    return make({x, w, b}, std::move(y), [this, x, w, b, cs](const Mat<S>& g) {
      const Mat<S>& xv2 = val(x);
      const int B2 = static_cast<int>(xv2.rows());
      const int oh2 = cs.out_h(), ow2 = cs.out_w();
      Mat<S> gw = Mat<S>::Zero(val(w).rows(), val(w).cols());
      Mat<S> gb = Mat<S>::Zero(1, cs.out_c);
      Mat<S> gx = Mat<S>::Zero(xv2.rows(), xv2.cols());
      const bool need_x = requires_grad_path(x);
      const bool need_w = requires_grad_path(w);
      for (int i = 0; i < B2; ++i) {
        Eigen::Map<const Mat<S>> go(g.row(i).data(), cs.out_c, oh2 * ow2);
        if (need_w) {
          Mat<S> col = im2col(xv2.row(i), cs);
          gw.noalias() += go * col.transpose();
        }
        gb += go.rowwise().sum().transpose();
        if (need_x) {
          Mat<S> gcol;
          gcol.noalias() = val(w).transpose() * go;
          Mat<S> gxr = gx.row(i);
          col2im_add(gcol, cs, gxr);
          gx.row(i) = gxr;
        }
      }
      if (need_x) accum(x, gx);
      if (need_w) accum(w, gw);
      if (requires_grad_path(b)) accum(b, gb);
    });
  }

  /// Transposed convolution: maps (in_c, H, W) to (out_c, H*stride, ...),
  /// the adjoint of conv2d with the same geometry. cs describes the
  /// *output*-side conv: cs.in_c = out channels here, cs.out_c = in channels.
  Var conv2d_transpose(Var x, Var w, Var b, const ConvShape& cs) {
    // w: cs.out_c x (cs.in_c*k*k), same layout as the mirrored conv.
    const Mat<S>& xv = val(x);
    const int B = static_cast<int>(xv.rows());
    const int oh = cs.out_h(), ow = cs.out_w();  // these are the *input* dims here
    const int out_sz = cs.in_c * cs.in_h * cs.in_w;
    Mat<S> y(B, out_sz);
    for (int i = 0; i < B; ++i) {
      Eigen::Map<const Mat<S>> xi(xv.row(i).data(), cs.out_c, oh * ow);
      Mat<S> col;
      col.noalias() = val(w).transpose() * xi;  // (in_c*k*k) x (oh*ow)
      Mat<S> yr = Mat<S>::Zero(1, out_sz);
      col2im_add(col, cs, yr);
      for (int c = 0; c < cs.in_c; ++c)
        yr.middleCols(c * cs.in_h * cs.in_w, cs.in_h * cs.in_w).array() += val(b)(0, c);
      y.row(i) = yr;
    }
    return make({x, w, b}, std::move(y), [this, x, w, b, cs](const Mat<S>& g) {
      const Mat<S>& xv2 = val(x);
      const int B2 = static_cast<int>(xv2.rows());
      const int oh2 = cs.out_h(), ow2 = cs.out_w();
      Mat<S> gw = Mat<S>::Zero(val(w).rows(), val(w).cols());
      Mat<S> gb = Mat<S>::Zero(1, cs.in_c);
      Mat<S> gx = Mat<S>::Zero(xv2.rows(), xv2.cols());
      const bool need_x = requires_grad_path(x);
      const bool need_w = requires_grad_path(w);
      for (int i = 0; i < B2; ++i) {
        Mat<S> gcol = im2col(g.row(i), cs);  // (in_c*k*k) x (oh*ow)
        if (need_x) {
          Mat<S> gxi;
          gxi.noalias() = val(w) * gcol;
          gx.row(i) = Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(gxi.data(), gxi.size());
        }
        if (need_w) {
          Eigen::Map<const Mat<S>> xi(xv2.row(i).data(), cs.out_c, oh2 * ow2);
          gw.noalias() += xi * gcol.transpose();
        }
        for (int c = 0; c < cs.in_c; ++c)
          gb(0, c) += g.row(i).middleCols(c * cs.in_h * cs.in_w, cs.in_h * cs.in_w).sum();
      }
      if (need_x) accum(x, gx);
      if (need_w) accum(w, gw);
      if (requires_grad_path(b)) accum(b, gb);
    });
  }

  // ---- backward driver ----

  void backward(Var root) {
    if (val(root).size() != 1)
      throw std::logic_error("backward: root must be a scalar");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    ensure_grad(root.id);
    nodes_[root.id].grad(0, 0) = S(1);
    for (int i = root.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (!n.requires_grad || !n.backprop || n.grad.size() == 0) continue;
      n.backprop(n.grad);
    }
  }

 private:
  struct Node {
    Mat<S> value;
    Mat<S> grad;
    bool requires_grad = false;
    std::function<void(const Mat<S>&)> backprop;
  };

  std::vector<Node> nodes_;

  bool requires_grad_path(Var v) const { return nodes_[v.id].requires_grad; }

  Var make(std::initializer_list<Var> parents, Mat<S> value,
           std::function<void(const Mat<S>&)> backprop) {
    Node n;
    n.value = std::move(value);
    for (Var p : parents) n.requires_grad |= nodes_[p.id].requires_grad;
    if (n.requires_grad) n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  void ensure_grad(int id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) n.grad = Mat<S>::Zero(n.value.rows(), n.value.cols());
  }

  void accum(Var v, const Mat<S>& g) {
    if (!nodes_[v.id].requires_grad) return;
    ensure_grad(v.id);
    nodes_[v.id].grad += g;
  }

  template <class D>
  void accum(Var v, const Eigen::MatrixBase<D>& g) {
    if (!nodes_[v.id].requires_grad) return;
    ensure_grad(v.id);
    nodes_[v.id].grad += g;
  }

  // Patch matrix layout: row (c*k*k + ki*k + kj), column (oh_i*ow + ow_j).
  static Mat<S> im2col(const Eigen::Ref<const Eigen::Matrix<S, 1, Eigen::Dynamic>>& x,
                       const ConvShape& cs) {
    const int oh = cs.out_h(), ow = cs.out_w(), k = cs.kernel;
    Mat<S> col = Mat<S>::Zero(cs.in_c * k * k, oh * ow);
    for (int c = 0; c < cs.in_c; ++c)
      for (int ki = 0; ki < k; ++ki)
        for (int kj = 0; kj < k; ++kj) {
          const int r = (c * k + ki) * k + kj;
          for (int oi = 0; oi < oh; ++oi) {
            const int ii = oi * cs.stride + ki - cs.pad;
            if (ii < 0 || ii >= cs.in_h) continue;
            for (int oj = 0; oj < ow; ++oj) {
              const int jj = oj * cs.stride + kj - cs.pad;
              if (jj < 0 || jj >= cs.in_w) continue;
              col(r, oi * ow + oj) = x((c * cs.in_h + ii) * cs.in_w + jj);
            }
          }
        }
    return col;
  }

  static void col2im_add(const Mat<S>& col, const ConvShape& cs,
                         Eigen::Ref<Mat<S>> x_row) {
    const int oh = cs.out_h(), ow = cs.out_w(), k = cs.kernel;
    for (int c = 0; c < cs.in_c; ++c)
      for (int ki = 0; ki < k; ++ki)
        for (int kj = 0; kj < k; ++kj) {
          const int r = (c * k + ki) * k + kj;
          for (int oi = 0; oi < oh; ++oi) {
            const int ii = oi * cs.stride + ki - cs.pad;
            if (ii < 0 || ii >= cs.in_h) continue;
            for (int oj = 0; oj < ow; ++oj) {
              const int jj = oj * cs.stride + kj - cs.pad;
              if (jj < 0 || jj >= cs.in_w) continue;
              x_row(0, (c * cs.in_h + ii) * cs.in_w + jj) += col(r, oi * ow + oj);
            }
          }
        }
  }
};

}  // namespace dpoe

#endif  // DPOE_AUTOGRAD_HPP_
