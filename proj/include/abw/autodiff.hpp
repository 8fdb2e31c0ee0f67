#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "abw/common.hpp"
#include "abw/nn_math.hpp"
#include "abw/tensor.hpp"

namespace abw {

// Reverse-mode tape at primitive granularity (matmul, broadcast add,
// elementwise nonlinearity, reductions). One tape records one forward pass;
// backward() walks the nodes once in reverse. Leaves reference parameter
// tensors by pointer plus a stable param_id, so building a tape never copies
// weights.

enum class OpKind {
    leaf,
    constant,
    matmul,
    add,
    sub,
    mul,
    add_rowvec,
    mul_rowvec,
    exp_op,
    tanh_op,
    square,
    scale,
    activation,
    slice_cols,
    concat_cols,
    concat_rows,
    permute_cols,
    row_sum,
    sum_all,
    pool_mean_rows,
    pool_max_rows,
};

inline const char* op_name(OpKind k) {
    switch (k) {
        case OpKind::leaf: return "leaf";
        case OpKind::constant: return "constant";
        case OpKind::matmul: return "matmul";
        case OpKind::add: return "add";
        case OpKind::sub: return "sub";
        case OpKind::mul: return "mul";
        case OpKind::add_rowvec: return "add_rowvec";
        case OpKind::mul_rowvec: return "mul_rowvec";
        case OpKind::exp_op: return "exp";
        case OpKind::tanh_op: return "tanh";
        case OpKind::square: return "square";
        case OpKind::scale: return "scale";
        case OpKind::activation: return "activation";
        case OpKind::slice_cols: return "slice_cols";
        case OpKind::concat_cols: return "concat_cols";
        case OpKind::concat_rows: return "concat_rows";
        case OpKind::permute_cols: return "permute_cols";
        case OpKind::row_sum: return "row_sum";
        case OpKind::sum_all: return "sum_all";
        case OpKind::pool_mean_rows: return "pool_mean_rows";
        case OpKind::pool_max_rows: return "pool_max_rows";
    }
    return "?";
}

class Tape;

struct Var {
    Tape* tape = nullptr;
    uint32_t id = 0;
};

class Tape {
  public:
    struct Node {
        OpKind op;
        std::vector<uint32_t> inputs;
        Tensor value;               // owned value (empty for leaves)
        const Tensor* ref = nullptr;  // external storage for leaf/constant views
        int param_id = -1;
        double scalar = 0.0;
        std::size_t c0 = 0, c1 = 0;          // slice range
        std::vector<std::size_t> aux;        // permutation / argmax indices
        Activation act = Activation::mish;
    };

    const Tensor& value(uint32_t id) const {
        const Node& n = nodes_[id];
        return n.ref ? *n.ref : n.value;
    }
    const Tensor& value(Var v) const { return value(v.id); }
    std::size_t node_count() const { return nodes_.size(); }

    Var leaf(const Tensor& param, int param_id) {
        Node n;
        n.op = OpKind::leaf;
        n.ref = &param;
        n.param_id = param_id;
        return push(std::move(n));
    }

    Var constant(Tensor value) {
        Node n;
        n.op = OpKind::constant;
        n.value = std::move(value);
        return push(std::move(n));
    }

    Var constant_ref(const Tensor& value) {
        Node n;
        n.op = OpKind::constant;
        n.ref = &value;
        return push(std::move(n));
    }

    Var matmul(Var a, Var b) {
        const Tensor& ta = value(a);
        const Tensor& tb = value(b);
        require(ta.cols() == tb.rows(), "matmul: inner dimension mismatch");
        std::size_t m = ta.rows(), k = ta.cols(), n = tb.cols();
        Tensor out = Tensor::matrix(m, n);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
                double aip = ta.at(i, p);
                const double* brow = &tb.data[p * n];
                double* orow = &out.data[i * n];
                for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
            }
        return binary(OpKind::matmul, a, b, std::move(out));
    }

    Var add(Var a, Var b) {
        const Tensor& ta = value(a);
        const Tensor& tb = value(b);
        require(ta.same_shape(tb), "add: shape mismatch");
        Tensor out = ta;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += tb[i];
        return binary(OpKind::add, a, b, std::move(out));
    }

    Var sub(Var a, Var b) {
        const Tensor& ta = value(a);
        const Tensor& tb = value(b);
        require(ta.same_shape(tb), "sub: shape mismatch");
        Tensor out = ta;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] -= tb[i];
        return binary(OpKind::sub, a, b, std::move(out));
    }

    Var mul(Var a, Var b) {
        const Tensor& ta = value(a);
        const Tensor& tb = value(b);
        require(ta.same_shape(tb), "mul: shape mismatch");
        Tensor out = ta;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= tb[i];
        return binary(OpKind::mul, a, b, std::move(out));
    }

    // b is [1,k] broadcast over the rows of a.
    Var add_rowvec(Var a, Var b) {
        const Tensor& ta = value(a);
        const Tensor& tb = value(b);
        require(tb.rows() == 1 && tb.cols() == ta.cols(), "add_rowvec: bad row vector");
        Tensor out = ta;
        std::size_t k = ta.cols();
        for (std::size_t r = 0; r < ta.rows(); ++r)
            for (std::size_t c = 0; c < k; ++c) out.at(r, c) += tb[c];
        return binary(OpKind::add_rowvec, a, b, std::move(out));
    }

    Var mul_rowvec(Var a, Var b) {
        const Tensor& ta = value(a);
        const Tensor& tb = value(b);
        require(tb.rows() == 1 && tb.cols() == ta.cols(), "mul_rowvec: bad row vector");
        Tensor out = ta;
        std::size_t k = ta.cols();
        for (std::size_t r = 0; r < ta.rows(); ++r)
            for (std::size_t c = 0; c < k; ++c) out.at(r, c) *= tb[c];
        return binary(OpKind::mul_rowvec, a, b, std::move(out));
    }

    Var exp(Var a) {
        Tensor out = value(a);
        for (auto& x : out.data) x = std::exp(x);
        return unary(OpKind::exp_op, a, std::move(out));
    }

    Var tanh(Var a) {
        Tensor out = value(a);
        for (auto& x : out.data) x = std::tanh(x);
        return unary(OpKind::tanh_op, a, std::move(out));
    }

    Var square(Var a) {
        Tensor out = value(a);
        for (auto& x : out.data) x = x * x;
        return unary(OpKind::square, a, std::move(out));
    }

    Var scale(Var a, double s) {
        Tensor out = value(a);
        for (auto& x : out.data) x *= s;
        Var v = unary(OpKind::scale, a, std::move(out));
        nodes_[v.id].scalar = s;
        return v;
    }

    Var activation(Var a, Activation act) {
        Tensor out = value(a);
        for (auto& x : out.data) x = activate(act, x);
        Var v = unary(OpKind::activation, a, std::move(out));
        nodes_[v.id].act = act;
        return v;
    }

    Var slice_cols(Var a, std::size_t c0, std::size_t c1) {
        const Tensor& ta = value(a);
        require(c0 < c1 && c1 <= ta.cols(), "slice_cols: bad range");
        Tensor out = Tensor::matrix(ta.rows(), c1 - c0);
        for (std::size_t r = 0; r < ta.rows(); ++r)
            for (std::size_t c = c0; c < c1; ++c) out.at(r, c - c0) = ta.at(r, c);
        Var v = unary(OpKind::slice_cols, a, std::move(out));
        nodes_[v.id].c0 = c0;
        nodes_[v.id].c1 = c1;
        return v;
    }

    Var concat_cols(Var a, Var b) {
        const Tensor& ta = value(a);
        const Tensor& tb = value(b);
        require(ta.rows() == tb.rows(), "concat_cols: row mismatch");
        Tensor out = Tensor::matrix(ta.rows(), ta.cols() + tb.cols());
        for (std::size_t r = 0; r < ta.rows(); ++r) {
            for (std::size_t c = 0; c < ta.cols(); ++c) out.at(r, c) = ta.at(r, c);
            for (std::size_t c = 0; c < tb.cols(); ++c) out.at(r, ta.cols() + c) = tb.at(r, c);
        }
        Var v = binary(OpKind::concat_cols, a, b, std::move(out));
        nodes_[v.id].c0 = ta.cols();
        return v;
    }

    Var concat_rows(const std::vector<Var>& parts) {
        require(!parts.empty(), "concat_rows: empty list");
        std::size_t cols = value(parts[0]).cols();
        std::size_t rows = 0;
        for (Var p : parts) {
            require(value(p).cols() == cols, "concat_rows: column mismatch");
            rows += value(p).rows();
        }
        Tensor out = Tensor::matrix(rows, cols);
        std::size_t r0 = 0;
        Node n;
        n.op = OpKind::concat_rows;
        for (Var p : parts) {
            const Tensor& tp = value(p);
            for (std::size_t r = 0; r < tp.rows(); ++r)
                for (std::size_t c = 0; c < cols; ++c) out.at(r0 + r, c) = tp.at(r, c);
            n.inputs.push_back(p.id);
            n.aux.push_back(tp.rows());
            r0 += tp.rows();
        }
        n.value = std::move(out);
        return push(std::move(n));
    }

    Var permute_cols(Var a, const std::vector<std::size_t>& perm) {
        const Tensor& ta = value(a);
        require(perm.size() == ta.cols(), "permute_cols: size mismatch");
        Tensor out = Tensor::matrix(ta.rows(), ta.cols());
        for (std::size_t r = 0; r < ta.rows(); ++r)
            for (std::size_t c = 0; c < ta.cols(); ++c) out.at(r, c) = ta.at(r, perm[c]);
        Var v = unary(OpKind::permute_cols, a, std::move(out));
        nodes_[v.id].aux = perm;
        return v;
    }

    Var row_sum(Var a) {
        const Tensor& ta = value(a);
        Tensor out = Tensor::matrix(ta.rows(), 1);
        for (std::size_t r = 0; r < ta.rows(); ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < ta.cols(); ++c) s += ta.at(r, c);
            out.at(r, 0) = s;
        }
        return unary(OpKind::row_sum, a, std::move(out));
    }

    Var sum_all(Var a) {
        const Tensor& ta = value(a);
        double s = 0.0;
        for (double x : ta.data) s += x;
        Tensor out = Tensor::matrix(1, 1);
        out[0] = s;
        return unary(OpKind::sum_all, a, std::move(out));
    }

    Var pool_mean_rows(Var a) {
        const Tensor& ta = value(a);
        require(ta.rows() >= 1, "pool_mean_rows: empty input");
        Tensor out = Tensor::matrix(1, ta.cols());
        std::vector<double> col(ta.rows());
        for (std::size_t c = 0; c < ta.cols(); ++c) {
            for (std::size_t r = 0; r < ta.rows(); ++r) col[r] = ta.at(r, c);
            out[c] = sorted_sum(col) / static_cast<double>(ta.rows());
        }
        return unary(OpKind::pool_mean_rows, a, std::move(out));
    }

    Var pool_max_rows(Var a) {
        const Tensor& ta = value(a);
        require(ta.rows() >= 1, "pool_max_rows: empty input");
        Tensor out = Tensor::matrix(1, ta.cols());
        Var v;
        std::vector<std::size_t> arg(ta.cols(), 0);
        for (std::size_t c = 0; c < ta.cols(); ++c) {
            double best = ta.at(0, c);
            for (std::size_t r = 1; r < ta.rows(); ++r)
                if (ta.at(r, c) > best) {
                    best = ta.at(r, c);
                    arg[c] = r;
                }
            out[c] = best;
        }
        v = unary(OpKind::pool_max_rows, a, std::move(out));
        nodes_[v.id].aux = std::move(arg);
        return v;
    }

    // Reverse pass from a scalar loss node; returns param_id -> gradient.
    std::map<int, Tensor> backward(Var loss) const {
        const Tensor& lv = value(loss);
        require(lv.size() == 1, "backward: loss must be scalar");
        std::vector<Tensor> grads(nodes_.size());
        grads[loss.id] = Tensor(lv.shape, 1.0);

        std::map<int, Tensor> out;
        for (std::size_t ii = loss.id + 1; ii > 0; --ii) {
            std::size_t i = ii - 1;
            const Node& n = nodes_[i];
            Tensor& g = grads[i];
            if (g.data.empty()) continue;
            for (double x : g.data)
                if (!std::isfinite(x))
                    throw NumericFailure(std::string("NaN gradient at node ") +
                                         std::to_string(i) + " (" + op_name(n.op) + ")");
            switch (n.op) {
                case OpKind::leaf: {
                    auto it = out.find(n.param_id);
                    if (it == out.end()) {
                        out.emplace(n.param_id, g);
                    } else {
                        for (std::size_t j = 0; j < g.size(); ++j) it->second[j] += g[j];
                    }
                    break;
                }
                case OpKind::constant:
                    break;
                case OpKind::matmul: {
                    const Tensor& a = value(n.inputs[0]);
                    const Tensor& b = value(n.inputs[1]);
                    Tensor& ga = grad_slot(grads, n.inputs[0]);
                    Tensor& gb = grad_slot(grads, n.inputs[1]);
                    std::size_t m = a.rows(), k = a.cols(), nn = b.cols();
                    // dA = dC B^T
                    for (std::size_t r = 0; r < m; ++r)
                        for (std::size_t j = 0; j < nn; ++j) {
                            double gij = g.at(r, j);
                            if (gij == 0.0) continue;
                            for (std::size_t p = 0; p < k; ++p) ga.at(r, p) += gij * b.at(p, j);
                        }
                    // dB = A^T dC
                    for (std::size_t r = 0; r < m; ++r)
                        for (std::size_t p = 0; p < k; ++p) {
                            double arp = a.at(r, p);
                            if (arp == 0.0) continue;
                            for (std::size_t j = 0; j < nn; ++j) gb.at(p, j) += arp * g.at(r, j);
                        }
                    break;
                }
                case OpKind::add: {
                    accumulate(grads, n.inputs[0], g);
                    accumulate(grads, n.inputs[1], g);
                    break;
                }
                case OpKind::sub: {
                    accumulate(grads, n.inputs[0], g);
                    Tensor& gb = grad_slot(grads, n.inputs[1]);
                    for (std::size_t j = 0; j < g.size(); ++j) gb[j] -= g[j];
                    break;
                }
                case OpKind::mul: {
                    const Tensor& a = value(n.inputs[0]);
                    const Tensor& b = value(n.inputs[1]);
                    Tensor& ga = grad_slot(grads, n.inputs[0]);
                    Tensor& gb = grad_slot(grads, n.inputs[1]);
                    for (std::size_t j = 0; j < g.size(); ++j) {
                        ga[j] += g[j] * b[j];
                        gb[j] += g[j] * a[j];
                    }
                    break;
                }
                case OpKind::add_rowvec: {
                    accumulate(grads, n.inputs[0], g);
                    Tensor& gb = grad_slot(grads, n.inputs[1]);
                    std::size_t k = g.cols();
                    for (std::size_t r = 0; r < g.rows(); ++r)
                        for (std::size_t c = 0; c < k; ++c) gb[c] += g.at(r, c);
                    break;
                }
                case OpKind::mul_rowvec: {
                    const Tensor& a = value(n.inputs[0]);
                    const Tensor& b = value(n.inputs[1]);
                    Tensor& ga = grad_slot(grads, n.inputs[0]);
                    Tensor& gb = grad_slot(grads, n.inputs[1]);
                    std::size_t k = g.cols();
                    for (std::size_t r = 0; r < g.rows(); ++r)
                        for (std::size_t c = 0; c < k; ++c) {
                            ga.at(r, c) += g.at(r, c) * b[c];
                            gb[c] += g.at(r, c) * a.at(r, c);
                        }
                    break;
                }
                case OpKind::exp_op: {
                    Tensor& ga = grad_slot(grads, n.inputs[0]);
                    for (std::size_t j = 0; j < g.size(); ++j) ga[j] += g[j] * n.value[j];
                    break;
                }
                case OpKind::tanh_op: {
                    Tensor& ga = grad_slot(grads, n.inputs[0]);
                    for (std::size_t j = 0; j < g.size(); ++j)
                        ga[j] += g[j] * (1.0 - n.value[j] * n.value[j]);
                    break;
                }
                case OpKind::square: {
                    const Tensor& a = value(n.inputs[0]);
                    Tensor& ga = grad_slot(grads, n.inputs[0]);
                    for (std::size_t j = 0; j < g.size(); ++j) ga[j] += 2.0 * a[j] * g[j];
                    break;
                }
                case OpKind::scale: {
                    Tensor& ga = grad_slot(grads, n.inputs[0]);
                    for (std::size_t j = 0; j < g.size(); ++j) ga[j] += n.scalar * g[j];
                    break;
                }
                case OpKind::activation: {
                    const Tensor& a = value(n.inputs[0]);
                    Tensor& ga = grad_slot(grads, n.inputs[0]);
                    for (std::size_t j = 0; j < g.size(); ++j)
                        ga[j] += g[j] * activate_deriv(n.act, a[j]);
                    break;
                }
                case OpKind::slice_cols: {
                    Tensor& ga = grad_slot(grads, n.inputs[0]);
                    for (std::size_t r = 0; r < g.rows(); ++r)
                        for (std::size_t c = 0; c < g.cols(); ++c)
                            ga.at(r, n.c0 + c) += g.at(r, c);
                    break;
                }
                case OpKind::concat_cols: {
                    Tensor& ga = grad_slot(grads, n.inputs[0]);
                    Tensor& gb = grad_slot(grads, n.inputs[1]);
                    std::size_t ka = n.c0;
                    for (std::size_t r = 0; r < g.rows(); ++r) {
                        for (std::size_t c = 0; c < ka; ++c) ga.at(r, c) += g.at(r, c);
                        for (std::size_t c = ka; c < g.cols(); ++c) gb.at(r, c - ka) += g.at(r, c);
                    }
                    break;
                }
                case OpKind::concat_rows: {
                    std::size_t r0 = 0;
                    for (std::size_t p = 0; p < n.inputs.size(); ++p) {
                        Tensor& gp = grad_slot(grads, n.inputs[p]);
                        std::size_t nr = n.aux[p];
                        for (std::size_t r = 0; r < nr; ++r)
                            for (std::size_t c = 0; c < g.cols(); ++c)
                                gp.at(r, c) += g.at(r0 + r, c);
                        r0 += nr;
                    }
                    break;
                }
                case OpKind::permute_cols: {
                    Tensor& ga = grad_slot(grads, n.inputs[0]);
                    for (std::size_t r = 0; r < g.rows(); ++r)
                        for (std::size_t c = 0; c < g.cols(); ++c)
                            ga.at(r, n.aux[c]) += g.at(r, c);
                    break;
                }
                case OpKind::row_sum: {
                    Tensor& ga = grad_slot(grads, n.inputs[0]);
                    for (std::size_t r = 0; r < ga.rows(); ++r)
                        for (std::size_t c = 0; c < ga.cols(); ++c) ga.at(r, c) += g.at(r, 0);
                    break;
                }
                case OpKind::sum_all: {
                    Tensor& ga = grad_slot(grads, n.inputs[0]);
                    for (std::size_t j = 0; j < ga.size(); ++j) ga[j] += g[0];
                    break;
                }
                case OpKind::pool_mean_rows: {
                    Tensor& ga = grad_slot(grads, n.inputs[0]);
                    double inv = 1.0 / static_cast<double>(ga.rows());
                    for (std::size_t r = 0; r < ga.rows(); ++r)
                        for (std::size_t c = 0; c < ga.cols(); ++c) ga.at(r, c) += g[c] * inv;
                    break;
                }
                case OpKind::pool_max_rows: {
                    Tensor& ga = grad_slot(grads, n.inputs[0]);
                    for (std::size_t c = 0; c < ga.cols(); ++c) ga.at(n.aux[c], c) += g[c];
                    break;
                }
            }
        }
        return out;
    }

  private:
    std::vector<Node> nodes_;

    Var push(Node n) {
        nodes_.push_back(std::move(n));
        return Var{this, static_cast<uint32_t>(nodes_.size() - 1)};
    }

    Var unary(OpKind op, Var a, Tensor out) {
        Node n;
        n.op = op;
        n.inputs = {a.id};
        n.value = std::move(out);
        return push(std::move(n));
    }

    Var binary(OpKind op, Var a, Var b, Tensor out) {
        Node n;
        n.op = op;
        n.inputs = {a.id, b.id};
        n.value = std::move(out);
        return push(std::move(n));
    }

    Tensor& grad_slot(std::vector<Tensor>& grads, uint32_t id) const {
        Tensor& g = grads[id];
        if (g.data.empty()) g = Tensor(value(id).shape, 0.0);
        return g;
    }

    void accumulate(std::vector<Tensor>& grads, uint32_t id, const Tensor& g) const {
        Tensor& dst = grad_slot(grads, id);
        for (std::size_t j = 0; j < g.size(); ++j) dst[j] += g[j];
    }
};

}  // namespace abw
