#include "ctdg/ad.hpp"

#include <cmath>
#include <stdexcept>

namespace ctdg::ad {

int Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

Var Tape::leaf(Mat value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.op = Op::Leaf;
    n.requires_grad = requires_grad;
    return Var{this, push(std::move(n))};
}

Var Tape::add(Var a, Var b) {
    assert(a.tape == this && b.tape == this);
    Node n;
    n.value = value(a) + value(b);
    n.op = Op::Add;
    n.a = a.idx;
    n.b = b.idx;
    n.requires_grad = rg(a) || rg(b);
    return Var{this, push(std::move(n))};
}

Var Tape::sub(Var a, Var b) {
    Node n;
    n.value = value(a) - value(b);
    n.op = Op::Sub;
    n.a = a.idx;
    n.b = b.idx;
    n.requires_grad = rg(a) || rg(b);
    return Var{this, push(std::move(n))};
}

Var Tape::mul(Var a, Var b) {
    Node n;
    n.value = value(a).cwiseProduct(value(b));
    n.op = Op::Mul;
    n.a = a.idx;
    n.b = b.idx;
    n.requires_grad = rg(a) || rg(b);
    return Var{this, push(std::move(n))};
}

Var Tape::div(Var a, Var b) {
    Node n;
    n.value = value(a).cwiseQuotient(value(b));
    n.op = Op::Div;
    n.a = a.idx;
    n.b = b.idx;
    n.requires_grad = rg(a) || rg(b);
    return Var{this, push(std::move(n))};
}

Var Tape::scale(Var a, double alpha) {
    Node n;
    n.value = value(a) * alpha;
    n.op = Op::Scale;
    n.a = a.idx;
    n.alpha = alpha;
    n.requires_grad = rg(a);
    return Var{this, push(std::move(n))};
}

Var Tape::matmul(Var a, Var b) {
    Node n;
    n.value = value(a) * value(b);
    n.op = Op::MatMul;
    n.a = a.idx;
    n.b = b.idx;
    n.requires_grad = rg(a) || rg(b);
    return Var{this, push(std::move(n))};
}

Var Tape::mul_scalar(Var m, Var s) {
    assert(value(s).size() == 1);
    Node n;
    n.value = value(m) * value(s)(0, 0);
    n.op = Op::MulScalar;
    n.a = m.idx;
    n.b = s.idx;
    n.requires_grad = rg(m) || rg(s);
    return Var{this, push(std::move(n))};
}

Var Tape::dot(Var a, Var b) {
    assert(value(a).cols() == 1 && value(b).cols() == 1);
    Node n;
    n.value = Mat::Constant(1, 1, value(a).col(0).dot(value(b).col(0)));
    n.op = Op::Dot;
    n.a = a.idx;
    n.b = b.idx;
    n.requires_grad = rg(a) || rg(b);
    return Var{this, push(std::move(n))};
}

Var Tape::sum(Var a) {
    Node n;
    n.value = Mat::Constant(1, 1, value(a).sum());
    n.op = Op::Sum;
    n.a = a.idx;
    n.requires_grad = rg(a);
    return Var{this, push(std::move(n))};
}

Var Tape::concat_rows(Var a, Var b) {
    assert(value(a).cols() == value(b).cols());
    Node n;
    n.value.resize(value(a).rows() + value(b).rows(), value(a).cols());
    n.value.topRows(value(a).rows()) = value(a);
    n.value.bottomRows(value(b).rows()) = value(b);
    n.op = Op::ConcatRows;
    n.a = a.idx;
    n.b = b.idx;
    n.alpha = static_cast<double>(value(a).rows());
    n.requires_grad = rg(a) || rg(b);
    return Var{this, push(std::move(n))};
}

Var Tape::stack(const std::vector<Var>& scalars) {
    Node n;
    n.value.resize(static_cast<Eigen::Index>(scalars.size()), 1);
    n.extra.reserve(scalars.size());
    for (std::size_t i = 0; i < scalars.size(); ++i) {
        n.value(static_cast<Eigen::Index>(i), 0) = value(scalars[i])(0, 0);
        n.extra.push_back(scalars[i].idx);
        n.requires_grad = n.requires_grad || rg(scalars[i]);
    }
    n.op = Op::Stack;
    return Var{this, push(std::move(n))};
}

Var Tape::at(Var a, int row) {
    Node n;
    n.value = Mat::Constant(1, 1, value(a)(row, 0));
    n.op = Op::At;
    n.a = a.idx;
    n.b = row;
    n.requires_grad = rg(a);
    return Var{this, push(std::move(n))};
}

Var Tape::softmax_col(Var a) {
    const Mat& x = value(a);
    assert(x.cols() == 1);
    Node n;
    const double m = x.maxCoeff();
    Mat e = (x.array() - m).exp().matrix();
    n.value = e / e.sum();
    n.op = Op::SoftmaxCol;
    n.a = a.idx;
    n.requires_grad = rg(a);
    return Var{this, push(std::move(n))};
}

Var Tape::logsumexp(Var a) {
    const Mat& x = value(a);
    assert(x.cols() == 1);
    const double m = x.maxCoeff();
    const double s = (x.array() - m).exp().sum();
    Node n;
    n.value = Mat::Constant(1, 1, m + std::log(s));
    n.op = Op::LogSumExp;
    n.a = a.idx;
    n.requires_grad = rg(a);
    return Var{this, push(std::move(n))};
}

Var Tape::leaky_relu(Var a, double slope) {
    Node n;
    n.value = value(a).unaryExpr([slope](double v) { return v > 0.0 ? v : slope * v; });
    n.op = Op::LeakyRelu;
    n.a = a.idx;
    n.alpha = slope;
    n.requires_grad = rg(a);
    return Var{this, push(std::move(n))};
}

Var Tape::softplus(Var a) {
    Node n;
    n.value = value(a).unaryExpr([](double v) { return softplus_stable(v); });
    n.op = Op::Softplus;
    n.a = a.idx;
    n.requires_grad = rg(a);
    return Var{this, push(std::move(n))};
}

Var Tape::exp(Var a) {
    Node n;
    n.value = value(a).array().exp().matrix();
    n.op = Op::Exp;
    n.a = a.idx;
    n.requires_grad = rg(a);
    return Var{this, push(std::move(n))};
}

Var Tape::log(Var a) {
    Node n;
    n.value = value(a).array().log().matrix();
    n.op = Op::Log;
    n.a = a.idx;
    n.requires_grad = rg(a);
    return Var{this, push(std::move(n))};
}

Var Tape::combine(Var weights, const std::vector<Var>& vecs) {
    const Mat& w = value(weights);
    assert(w.cols() == 1 && static_cast<std::size_t>(w.rows()) == vecs.size());
    assert(!vecs.empty());
    Node n;
    n.value = Mat::Zero(value(vecs[0]).rows(), 1);
    n.extra.reserve(vecs.size());
    n.requires_grad = rg(weights);
    for (std::size_t i = 0; i < vecs.size(); ++i) {
        n.value += w(static_cast<Eigen::Index>(i), 0) * value(vecs[i]);
        n.extra.push_back(vecs[i].idx);
        n.requires_grad = n.requires_grad || rg(vecs[i]);
    }
    n.op = Op::Combine;
    n.a = weights.idx;
    return Var{this, push(std::move(n))};
}

void Tape::accum(int idx, const Mat& delta) {
    Node& n = nodes_[idx];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
        n.grad = delta;
    } else {
        n.grad += delta;
    }
}

void Tape::step_backward(int i) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.size() == 0) return;
    const Mat& g = n.grad;
    switch (n.op) {
        case Op::Leaf:
            break;
        case Op::Add:
            accum(n.a, g);
            accum(n.b, g);
            break;
        case Op::Sub:
            accum(n.a, g);
            accum(n.b, -g);
            break;
        case Op::Mul:
            accum(n.a, g.cwiseProduct(nodes_[n.b].value));
            accum(n.b, g.cwiseProduct(nodes_[n.a].value));
            break;
        case Op::Div: {
            const Mat& bv = nodes_[n.b].value;
            accum(n.a, g.cwiseQuotient(bv));
            accum(n.b, -g.cwiseProduct(n.value).cwiseQuotient(bv));
            break;
        }
        case Op::Scale:
            accum(n.a, g * n.alpha);
            break;
        case Op::MatMul:
            accum(n.a, g * nodes_[n.b].value.transpose());
            accum(n.b, nodes_[n.a].value.transpose() * g);
            break;
        case Op::MulScalar: {
            accum(n.a, g * nodes_[n.b].value(0, 0));
            accum(n.b, Mat::Constant(1, 1, g.cwiseProduct(nodes_[n.a].value).sum()));
            break;
        }
        case Op::Dot: {
            const double gs = g(0, 0);
            accum(n.a, gs * nodes_[n.b].value);
            accum(n.b, gs * nodes_[n.a].value);
            break;
        }
        case Op::Sum:
            accum(n.a, Mat::Constant(nodes_[n.a].value.rows(), nodes_[n.a].value.cols(), g(0, 0)));
            break;
        case Op::ConcatRows: {
            const auto split = static_cast<Eigen::Index>(n.alpha);
            accum(n.a, g.topRows(split));
            accum(n.b, g.bottomRows(g.rows() - split));
            break;
        }
        case Op::Stack:
            for (std::size_t i2 = 0; i2 < n.extra.size(); ++i2) {
                accum(n.extra[i2], Mat::Constant(1, 1, g(static_cast<Eigen::Index>(i2), 0)));
            }
            break;
        case Op::At: {
            Mat d = Mat::Zero(nodes_[n.a].value.rows(), nodes_[n.a].value.cols());
            d(n.b, 0) = g(0, 0);
            accum(n.a, d);
            break;
        }
        case Op::SoftmaxCol: {
            const Mat& y = n.value;
            const double inner = y.cwiseProduct(g).sum();
            accum(n.a, y.cwiseProduct(g.array().matrix() - Mat::Constant(g.rows(), 1, inner)));
            break;
        }
        case Op::LogSumExp: {
            const Mat& x = nodes_[n.a].value;
            Mat sm = (x.array() - n.value(0, 0)).exp().matrix();
            accum(n.a, sm * g(0, 0));
            break;
        }
        case Op::LeakyRelu: {
            const Mat& x = nodes_[n.a].value;
            const double slope = n.alpha;
            Mat d = x.unaryExpr([slope](double v) { return v > 0.0 ? 1.0 : slope; });
            accum(n.a, g.cwiseProduct(d));
            break;
        }
        case Op::Softplus: {
            const Mat& x = nodes_[n.a].value;
            Mat d = x.unaryExpr([](double v) { return sigmoid_stable(v); });
            accum(n.a, g.cwiseProduct(d));
            break;
        }
        case Op::Exp:
            accum(n.a, g.cwiseProduct(n.value));
            break;
        case Op::Log:
            accum(n.a, g.cwiseQuotient(nodes_[n.a].value));
            break;
        case Op::Combine: {
            const Mat& w = nodes_[n.a].value;
            Mat gw(w.rows(), 1);
            for (std::size_t i2 = 0; i2 < n.extra.size(); ++i2) {
                const Eigen::Index r = static_cast<Eigen::Index>(i2);
                gw(r, 0) = nodes_[n.extra[i2]].value.col(0).dot(g.col(0));
                accum(n.extra[i2], g * w(r, 0));
            }
            accum(n.a, gw);
            break;
        }
    }
}

void Tape::backward(Var output) {
    assert(output.tape == this);
    const Mat& out = value(output);
    if (out.rows() != 1 || out.cols() != 1) {
        throw std::invalid_argument("backward() expects a scalar output node");
    }
    nodes_[output.idx].grad = Mat::Constant(1, 1, 1.0);
    for (int i = output.idx; i >= 0; --i) {
        step_backward(i);
    }
}

Mat Tape::grad(Var v) const {
    const Node& n = nodes_[v.idx];
    if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
}

void Tape::clear() { nodes_.clear(); }

}  // namespace ctdg::ad
