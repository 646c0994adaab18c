#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include <trajlab/nn/tensor.hpp>

namespace trajlab::nn {

/// Reverse-mode autodiff tape over dense matrices. Every operation records
/// its output and a backward closure; backward() walks the record in reverse
/// creation order (a valid reverse topological order, since operations only
/// consume earlier nodes) and accumulates exact analytic partials. Leaves
/// bound to Params add their gradient into Param::grad.
class Tape {
public:
    struct Var {
        int id = -1;
        bool valid() const { return id >= 0; }
    };

    const Mat& val(Var v) const { return nodes_[check(v)].val; }
    bool needs_grad(Var v) const { return nodes_[check(v)].needs_grad; }

    Var constant(Mat m) { return push(std::move(m), false, nullptr, {}); }

    Var leaf(Param& p) {
        Var v = push(p.value, true, nullptr, {});
        nodes_[static_cast<std::size_t>(v.id)].param = &p;
        return v;
    }

    /// Composite operation with a hand-written backward: `back` receives the
    /// output gradient and must accumulate parameter gradients itself.
    Var custom(Mat out, std::function<void(const Mat&)> back) {
        return push(std::move(out), true, nullptr,
                    [back = std::move(back)](Tape&, const Mat& g) { back(g); });
    }

    // -- primitives ---------------------------------------------------------

    Var matmul(Var a, Var b) {
        const Mat &A = val(a), &B = val(b);
        require(A.cols() == B.rows(), "matmul: shape mismatch ", shape_str(A), " x ",
                shape_str(B));
        return binary(A * B, a, b, [](Tape& t, const Mat& g, Node& na, Node& nb) {
            if (na.needs_grad) na.grad_ref() += g * nb.val.transpose();
            if (nb.needs_grad) nb.grad_ref() += na.val.transpose() * g;
        });
    }

    Var add(Var a, Var b) {
        same_shape(a, b, "add");
        return binary(val(a) + val(b), a, b, [](Tape&, const Mat& g, Node& na, Node& nb) {
            if (na.needs_grad) na.grad_ref() += g;
            if (nb.needs_grad) nb.grad_ref() += g;
        });
    }

    Var sub(Var a, Var b) {
        same_shape(a, b, "sub");
        return binary(val(a) - val(b), a, b, [](Tape&, const Mat& g, Node& na, Node& nb) {
            if (na.needs_grad) na.grad_ref() += g;
            if (nb.needs_grad) nb.grad_ref() -= g;
        });
    }

    Var mul(Var a, Var b) {
        same_shape(a, b, "mul");
        return binary(val(a).cwiseProduct(val(b)), a, b,
                      [](Tape&, const Mat& g, Node& na, Node& nb) {
                          if (na.needs_grad) na.grad_ref() += g.cwiseProduct(nb.val);
                          if (nb.needs_grad) nb.grad_ref() += g.cwiseProduct(na.val);
                      });
    }

    /// Broadcast a 1xN row (bias) over all rows of a.
    Var add_rowvec(Var a, Var b) {
        const Mat &A = val(a), &B = val(b);
        require(B.rows() == 1 && B.cols() == A.cols(), "add_rowvec: need 1x", A.cols(),
                " row, got ", shape_str(B));
        Mat out = A.rowwise() + B.row(0);
        return binary(std::move(out), a, b, [](Tape&, const Mat& g, Node& na, Node& nb) {
            if (na.needs_grad) na.grad_ref() += g;
            if (nb.needs_grad) nb.grad_ref() += g.colwise().sum();
        });
    }

    /// Broadcast an Mx1 column over all columns of a.
    Var mul_colvec(Var a, Var c) {
        const Mat &A = val(a), &C = val(c);
        require(C.cols() == 1 && C.rows() == A.rows(), "mul_colvec: need ", A.rows(),
                "x1 column, got ", shape_str(C));
        Mat out = (A.array().colwise() * C.col(0).array()).matrix();
        return binary(std::move(out), a, c, [](Tape&, const Mat& g, Node& na, Node& nc) {
            if (na.needs_grad)
                na.grad_ref() += (g.array().colwise() * nc.val.col(0).array()).matrix();
            if (nc.needs_grad) nc.grad_ref() += g.cwiseProduct(na.val).rowwise().sum();
        });
    }

    Var scale(Var a, double s) {
        return unary(val(a) * s, a, [s](Tape&, const Mat& g, Node& na) {
            if (na.needs_grad) na.grad_ref() += g * s;
        });
    }

    Var add_const(Var a, double s) {
        return unary((val(a).array() + s).matrix(), a, [](Tape&, const Mat& g, Node& na) {
            if (na.needs_grad) na.grad_ref() += g;
        });
    }

    Var tanh(Var a) {
        Mat y = val(a).array().tanh().matrix();
        return unary_with_out(std::move(y), a, [](Tape&, const Mat& g, const Mat& y, Node& na) {
            if (na.needs_grad)
                na.grad_ref().array() += g.array() * (1.0 - y.array().square());
        });
    }

    Var sigmoid(Var a) {
        Mat y = (1.0 + (-val(a).array()).exp()).inverse().matrix();
        return unary_with_out(std::move(y), a, [](Tape&, const Mat& g, const Mat& y, Node& na) {
            if (na.needs_grad) na.grad_ref().array() += g.array() * y.array() * (1.0 - y.array());
        });
    }

    Var exp(Var a) {
        Mat y = val(a).array().exp().matrix();
        return unary_with_out(std::move(y), a, [](Tape&, const Mat& g, const Mat& y, Node& na) {
            if (na.needs_grad) na.grad_ref().array() += g.array() * y.array();
        });
    }

    Var log(Var a) {
        const Mat& A = val(a);
        require((A.array() > 0.0).all(), "log: non-positive input");
        return unary(A.array().log().matrix(), a, [](Tape&, const Mat& g, Node& na) {
            if (na.needs_grad) na.grad_ref().array() += g.array() / na.val.array();
        });
    }

    /// log(1 + exp(x)), evaluated stably. softplus(-z) = -log(sigmoid(z)).
    Var softplus(Var a) {
        Mat y = ((1.0 + (-val(a).array().abs()).exp()).log() + val(a).array().max(0.0)).matrix();
        return unary(std::move(y), a, [](Tape&, const Mat& g, Node& na) {
            if (na.needs_grad)
                na.grad_ref().array() += g.array() * (1.0 + (-na.val.array()).exp()).inverse();
        });
    }

    /// min(a, cap); gradient passes only through unclamped entries.
    Var clamp_max(Var a, double cap) {
        Mat y = val(a).array().min(cap).matrix();
        return unary(std::move(y), a, [cap](Tape&, const Mat& g, Node& na) {
            if (na.needs_grad)
                na.grad_ref().array() +=
                    g.array() * (na.val.array() < cap).template cast<double>();
        });
    }

    /// Row-wise log softmax.
    Var log_softmax(Var a) {
        const Mat& A = val(a);
        Mat y(A.rows(), A.cols());
        for (Eigen::Index i = 0; i < A.rows(); ++i) {
            double mx = A.row(i).maxCoeff();
            double lse = std::log((A.row(i).array() - mx).exp().sum()) + mx;
            y.row(i) = (A.row(i).array() - lse).matrix();
        }
        return unary_with_out(std::move(y), a, [](Tape&, const Mat& g, const Mat& y, Node& na) {
            if (!na.needs_grad) return;
            Mat soft = y.array().exp().matrix();
            Eigen::VectorXd rows = g.rowwise().sum();
            na.grad_ref() += g - (soft.array().colwise() * rows.array()).matrix();
        });
    }

    /// Row-wise softmax (exp of log_softmax, shares its stability).
    Var softmax(Var a) { return exp(log_softmax(a)); }

    Var slice_cols(Var a, Eigen::Index offset, Eigen::Index count) {
        const Mat& A = val(a);
        require(offset >= 0 && count >= 1 && offset + count <= A.cols(),
                "slice_cols: range [", offset, ", ", offset + count, ") out of ", shape_str(A));
        Mat out = A.middleCols(offset, count);
        return unary(std::move(out), a, [offset, count](Tape&, const Mat& g, Node& na) {
            if (na.needs_grad) na.grad_ref().middleCols(offset, count) += g;
        });
    }

    Var concat_cols(Var a, Var b) {
        const Mat &A = val(a), &B = val(b);
        require(A.rows() == B.rows(), "concat_cols: row mismatch ", shape_str(A), " vs ",
                shape_str(B));
        Mat out(A.rows(), A.cols() + B.cols());
        out << A, B;
        Eigen::Index ac = A.cols();
        return binary(std::move(out), a, b, [ac](Tape&, const Mat& g, Node& na, Node& nb) {
            if (na.needs_grad) na.grad_ref() += g.leftCols(ac);
            if (nb.needs_grad) nb.grad_ref() += g.rightCols(g.cols() - ac);
        });
    }

    /// out[i,:] = a[rows[i],:] (embedding lookup); backward scatter-adds.
    Var gather_rows(Var a, std::vector<int> rows) {
        const Mat& A = val(a);
        Mat out(static_cast<Eigen::Index>(rows.size()), A.cols());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            require(rows[i] >= 0 && rows[i] < A.rows(), "gather_rows: index ", rows[i],
                    " out of range for ", shape_str(A));
            out.row(static_cast<Eigen::Index>(i)) = A.row(rows[i]);
        }
        return unary(std::move(out), a,
                     [rows = std::move(rows)](Tape&, const Mat& g, Node& na) {
                         if (!na.needs_grad) return;
                         Mat& ag = na.grad_ref();
                         for (std::size_t i = 0; i < rows.size(); ++i)
                             ag.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
                     });
    }

    /// out[i,0] = a[i, cols[i]] (per-row column pick); backward scatter-adds.
    Var select_per_row(Var a, std::vector<int> cols) {
        const Mat& A = val(a);
        require(static_cast<Eigen::Index>(cols.size()) == A.rows(),
                "select_per_row: need one column index per row");
        Mat out(A.rows(), 1);
        for (Eigen::Index i = 0; i < A.rows(); ++i) {
            int c = cols[static_cast<std::size_t>(i)];
            require(c >= 0 && c < A.cols(), "select_per_row: column ", c, " out of range");
            out(i, 0) = A(i, c);
        }
        return unary(std::move(out), a,
                     [cols = std::move(cols)](Tape&, const Mat& g, Node& na) {
                         if (!na.needs_grad) return;
                         Mat& ag = na.grad_ref();
                         for (Eigen::Index i = 0; i < g.rows(); ++i)
                             ag(i, cols[static_cast<std::size_t>(i)]) += g(i, 0);
                     });
    }

    /// keep entries where keep01 is 1, replace by fill elsewhere; gradient
    /// flows only through kept entries.
    Var masked_fill(Var a, const Mat& keep01, double fill) {
        const Mat& A = val(a);
        require(keep01.rows() == A.rows() && keep01.cols() == A.cols(),
                "masked_fill: mask shape ", shape_str(keep01), " != ", shape_str(A));
        Mat out = (keep01.array() * A.array() + (1.0 - keep01.array()) * fill).matrix();
        return unary(std::move(out), a, [keep01](Tape&, const Mat& g, Node& na) {
            if (na.needs_grad) na.grad_ref().array() += g.array() * keep01.array();
        });
    }

    Var row_sum(Var a) {
        return unary(val(a).rowwise().sum(), a, [](Tape&, const Mat& g, Node& na) {
            if (na.needs_grad)
                na.grad_ref() += g.col(0).replicate(1, na.val.cols());
        });
    }

    Var sum_all(Var a) {
        Mat out(1, 1);
        out(0, 0) = val(a).sum();
        return unary(std::move(out), a, [](Tape&, const Mat& g, Node& na) {
            if (na.needs_grad) na.grad_ref().array() += g(0, 0);
        });
    }

    Var mean_all(Var a) {
        double n = static_cast<double>(val(a).size());
        Mat out(1, 1);
        out(0, 0) = val(a).sum() / n;
        return unary(std::move(out), a, [n](Tape&, const Mat& g, Node& na) {
            if (na.needs_grad) na.grad_ref().array() += g(0, 0) / n;
        });
    }

    /// Scalar sum of w (x) a for a fixed weight matrix.
    Var weighted_sum_all(Var a, const Mat& w) {
        const Mat& A = val(a);
        require(w.rows() == A.rows() && w.cols() == A.cols(), "weighted_sum_all: weight shape ",
                shape_str(w), " != ", shape_str(A));
        Mat out(1, 1);
        out(0, 0) = A.cwiseProduct(w).sum();
        return unary(std::move(out), a, [w](Tape&, const Mat& g, Node& na) {
            if (na.needs_grad) na.grad_ref() += g(0, 0) * w;
        });
    }

    Var square(Var a) {
        return unary(val(a).array().square().matrix(), a, [](Tape&, const Mat& g, Node& na) {
            if (na.needs_grad) na.grad_ref().array() += 2.0 * g.array() * na.val.array();
        });
    }

    // ------------------------------------------------------------------------

    double scalar(Var v) const {
        const Mat& m = val(v);
        require(m.size() == 1, "scalar: variable has shape ", shape_str(m));
        return m(0, 0);
    }

    /// Backpropagates d(loss)/d(node) for every recorded node and adds
    /// d(loss)/d(param) into each leaf's Param::grad.
    void backward(Var loss) {
        Node& top = nodes_[check(loss)];
        require(top.val.size() == 1, "backward: loss must be scalar, got ",
                shape_str(top.val));
        require(top.needs_grad, "backward: loss does not depend on any parameter");
        for (Node& n : nodes_) n.grad.resize(0, 0);
        top.grad_ref()(0, 0) = 1.0;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            if (!it->needs_grad || it->grad.size() == 0) continue;
            if (it->back) it->back(*this, it->grad);
            if (it->param) it->param->grad += it->grad;
        }
    }

    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Mat val;
        Mat grad;
        bool needs_grad = false;
        Param* param = nullptr;
        std::function<void(Tape&, const Mat&)> back;

        Mat& grad_ref() {
            if (grad.size() == 0) grad = Mat::Zero(val.rows(), val.cols());
            return grad;
        }
    };

    std::size_t check(Var v) const {
        require(v.valid() && static_cast<std::size_t>(v.id) < nodes_.size(),
                "invalid tape variable");
        return static_cast<std::size_t>(v.id);
    }

    Var push(Mat val, bool needs_grad, Param* p, std::function<void(Tape&, const Mat&)> back) {
        Node n;
        n.val = std::move(val);
        n.needs_grad = needs_grad;
        n.param = p;
        n.back = std::move(back);
        nodes_.push_back(std::move(n));
        return {static_cast<int>(nodes_.size()) - 1};
    }

    void same_shape(Var a, Var b, const char* op) {
        require(val(a).rows() == val(b).rows() && val(a).cols() == val(b).cols(), op,
                ": shape mismatch ", shape_str(val(a)), " vs ", shape_str(val(b)));
    }

    template <typename Back>
    Var unary(Mat out, Var a, Back&& bk) {
        bool ng = needs_grad(a);
        std::size_t ia = check(a);
        return push(std::move(out), ng, nullptr,
                    ng ? std::function<void(Tape&, const Mat&)>(
                             [ia, bk = std::forward<Back>(bk)](Tape& t, const Mat& g) {
                                 bk(t, g, t.nodes_[ia]);
                             })
                       : nullptr);
    }

    // variant whose backward needs the output value as well
    template <typename Back>
    Var unary_with_out(Mat out, Var a, Back&& bk) {
        bool ng = needs_grad(a);
        std::size_t ia = check(a);
        Var v = push(std::move(out), ng, nullptr, nullptr);
        if (ng) {
            std::size_t iv = static_cast<std::size_t>(v.id);
            nodes_[iv].back = [ia, iv, bk = std::forward<Back>(bk)](Tape& t, const Mat& g) {
                bk(t, g, t.nodes_[iv].val, t.nodes_[ia]);
            };
        }
        return v;
    }

    template <typename Back>
    Var binary(Mat out, Var a, Var b, Back&& bk) {
        bool ng = needs_grad(a) || needs_grad(b);
        std::size_t ia = check(a), ib = check(b);
        return push(std::move(out), ng, nullptr,
                    ng ? std::function<void(Tape&, const Mat&)>(
                             [ia, ib, bk = std::forward<Back>(bk)](Tape& t, const Mat& g) {
                                 bk(t, g, t.nodes_[ia], t.nodes_[ib]);
                             })
                       : nullptr);
    }

    std::vector<Node> nodes_;
};

using Var = Tape::Var;

}  // namespace trajlab::nn
