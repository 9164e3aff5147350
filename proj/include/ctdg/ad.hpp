#ifndef CTDG_AD_HPP
#define CTDG_AD_HPP

#include <Eigen/Dense>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

namespace ctdg::ad {

using Mat = Eigen::MatrixXd;

class Tape;

// Handle to a node on the tape. Cheap to copy; valid until Tape::clear().
struct Var {
    Tape* tape = nullptr;
    int idx = -1;
    bool valid() const { return tape != nullptr && idx >= 0; }
    const Mat& val() const;
    double scalar() const;
};

// Reverse-mode tape over Eigen matrices. Nodes are recorded in evaluation
// order; backward() walks them in reverse. Scalars are 1x1 matrices.
class Tape {
  public:
    Var leaf(Mat value, bool requires_grad = true);

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);      // elementwise
    Var div(Var a, Var b);      // elementwise
    Var scale(Var a, double alpha);
    Var matmul(Var a, Var b);
    Var mul_scalar(Var m, Var s);  // matrix times 1x1 scalar
    Var dot(Var a, Var b);         // column vectors -> 1x1
    Var sum(Var a);                // all entries -> 1x1
    Var concat_rows(Var a, Var b);
    Var stack(const std::vector<Var>& scalars);  // n scalars -> n x 1
    Var at(Var a, int row);                      // entry (row, 0) -> 1x1
    Var softmax_col(Var a);                      // n x 1, max-subtracted
    Var logsumexp(Var a);                        // n x 1 -> 1x1
    Var leaky_relu(Var a, double slope);
    Var softplus(Var a);  // elementwise, log1p(exp(x)) in the stable branch form
    Var exp(Var a);
    Var log(Var a);
    // h = sum_i weights[i] * vecs[i]; weights is n x 1, vecs are d x 1.
    Var combine(Var weights, const std::vector<Var>& vecs);

    void backward(Var output);  // output must be 1x1
    const Mat& value(Var v) const { return nodes_[v.idx].value; }
    // Zero matrix if the node was never reached during backward.
    Mat grad(Var v) const;

    void clear();
    std::size_t size() const { return nodes_.size(); }

  private:
    enum class Op : std::uint8_t {
        Leaf, Add, Sub, Mul, Div, Scale, MatMul, MulScalar, Dot, Sum,
        ConcatRows, Stack, At, SoftmaxCol, LogSumExp, LeakyRelu, Softplus,
        Exp, Log, Combine,
    };
    struct Node {
        Mat value;
        Mat grad;  // empty until touched in backward
        Op op = Op::Leaf;
        int a = -1, b = -1;
        double alpha = 0.0;
        std::vector<int> extra;
        bool requires_grad = false;
    };
    int push(Node n);
    void accum(int idx, const Mat& delta);
    void step_backward(int i);
    bool rg(Var v) const { return nodes_[v.idx].requires_grad; }

    std::vector<Node> nodes_;
};

inline const Mat& Var::val() const { return tape->value(*this); }
inline double Var::scalar() const {
    const Mat& m = tape->value(*this);
    assert(m.rows() == 1 && m.cols() == 1);
    return m(0, 0);
}

// Numerically stable softplus and its derivative, shared with non-tape code.
// The result is floored at the smallest normal double so downstream
// logarithms of intensities stay finite even when exp(x) underflows.
inline double softplus_stable(double x) {
    if (x > 0.0) return x + std::log1p(std::exp(-x));
    const double v = std::log1p(std::exp(x));
    return v > 0.0 ? v : std::numeric_limits<double>::min();
}
inline double sigmoid_stable(double x) {
    if (x >= 0.0) {
        const double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace ctdg::ad

#endif  // CTDG_AD_HPP
