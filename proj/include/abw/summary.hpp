#pragma once

#include <string>
#include <vector>

#include "abw/autodiff.hpp"
#include "abw/models.hpp"
#include "abw/nn_math.hpp"
#include "abw/optimizer.hpp"
#include "abw/rng.hpp"
#include "abw/tensor.hpp"

namespace abw {

enum class Pooling { mean, max };

struct SummaryConfig {
    int out_dim = 16;
    int equivariant_depth = 1;
    int hidden_units = 64;
    Pooling pooling = Pooling::mean;
    Activation activation = Activation::mish;
    double dropout_rate = 0.05;
    int in_fields = 1;
    bool bypass = false;  // bernoulli_glm: use the exact sufficient statistic

    static SummaryConfig for_model(const ModelSpec& spec) {
        SummaryConfig c;
        c.in_fields = spec.obs_fields;
        switch (spec.model_id) {
            case ModelId::gaussian_conjugate:
                c.equivariant_depth = 1;
                c.pooling = Pooling::mean;
                c.activation = Activation::gelu;
                break;
            case ModelId::gev:
                c.equivariant_depth = 1;
                c.pooling = Pooling::max;
                c.activation = Activation::mish;
                break;
            case ModelId::bernoulli_glm:
                c.bypass = true;
                c.out_dim = 10;
                c.dropout_rate = 0.0;
                break;
            case ModelId::psychometric:
                c.equivariant_depth = 2;
                c.pooling = Pooling::mean;
                c.activation = Activation::gelu;
                break;
        }
        return c;
    }
};

// Per-field affine input scaling, frozen from training simulations.
struct Standardizer {
    std::vector<double> mean;
    std::vector<double> sd;

    Tensor apply(const Tensor& rows) const {
        require(rows.cols() == mean.size(), "standardizer: field count mismatch");
        Tensor out = rows;
        for (std::size_t r = 0; r < rows.rows(); ++r)
            for (std::size_t c = 0; c < rows.cols(); ++c)
                out.at(r, c) = (rows.at(r, c) - mean[c]) / sd[c];
        return out;
    }

    static Standardizer fit(const std::vector<Tensor>& row_blocks) {
        require(!row_blocks.empty(), "standardizer: no data");
        std::size_t fields = row_blocks[0].cols();
        Standardizer s;
        s.mean.assign(fields, 0.0);
        s.sd.assign(fields, 0.0);
        double n = 0.0;
        for (const auto& block : row_blocks) {
            for (std::size_t r = 0; r < block.rows(); ++r)
                for (std::size_t c = 0; c < fields; ++c) s.mean[c] += block.at(r, c);
            n += static_cast<double>(block.rows());
        }
        for (auto& m : s.mean) m /= n;
        for (const auto& block : row_blocks)
            for (std::size_t r = 0; r < block.rows(); ++r)
                for (std::size_t c = 0; c < fields; ++c) {
                    double d = block.at(r, c) - s.mean[c];
                    s.sd[c] += d * d;
                }
        for (auto& v : s.sd) {
            v = std::sqrt(v / n);
            if (v < 1e-12) v = 1.0;  // constant field guard
        }
        return s;
    }
};

// DeepSet: equivariant layers h_i <- act(W h_i + U pool(h) + b), a final
// pool over rows, then a two-hidden-layer invariant head.
struct SummaryNet {
    SummaryConfig config;
    std::vector<int> eq_w, eq_u, eq_b;
    int inv_w1 = -1, inv_b1 = -1, inv_w2 = -1, inv_b2 = -1, out_w = -1, out_b = -1;

    int n_dropout_slots() const { return config.bypass ? 0 : config.equivariant_depth + 2; }
};

namespace detail {

inline Tensor init_dense(std::size_t in, std::size_t out, RngStream& rng) {
    Tensor t = Tensor::matrix(in, out);
    double scale = std::sqrt(2.0 / static_cast<double>(in));
    for (auto& x : t.data) x = rng.normal() * scale;
    return t;
}

}  // namespace detail

inline SummaryNet build_summary_net(ParamStore& params, const SummaryConfig& config,
                                    RngStream& rng) {
    SummaryNet net;
    net.config = config;
    if (config.bypass) return net;
    int h = config.hidden_units;
    int in = config.in_fields;
    for (int l = 0; l < config.equivariant_depth; ++l) {
        std::string p = "summary.eq" + std::to_string(l);
        net.eq_w.push_back(params.add(p + ".w", detail::init_dense(in, h, rng)));
        net.eq_u.push_back(params.add(p + ".u", detail::init_dense(in, h, rng)));
        net.eq_b.push_back(params.add(p + ".b", Tensor::matrix(1, h)));
        in = h;
    }
    net.inv_w1 = params.add("summary.inv1.w", detail::init_dense(h, h, rng));
    net.inv_b1 = params.add("summary.inv1.b", Tensor::matrix(1, h));
    net.inv_w2 = params.add("summary.inv2.w", detail::init_dense(h, h, rng));
    net.inv_b2 = params.add("summary.inv2.b", Tensor::matrix(1, h));
    net.out_w = params.add("summary.out.w", detail::init_dense(h, config.out_dim, rng));
    net.out_b = params.add("summary.out.b", Tensor::matrix(1, config.out_dim));
    return net;
}

// Inverted dropout masks (entries 0 or 1/(1-rate)), one tensor per slot.
inline std::vector<Tensor> dropout_masks(const SummaryNet& net, std::size_t n_rows,
                                         RngStream& rng) {
    std::vector<Tensor> masks;
    double rate = net.config.dropout_rate;
    double keep_scale = 1.0 / (1.0 - rate);
    int h = net.config.hidden_units;
    for (int slot = 0; slot < net.n_dropout_slots(); ++slot) {
        std::size_t rows = slot < net.config.equivariant_depth ? n_rows : 1;
        Tensor m = Tensor::matrix(rows, h);
        for (auto& x : m.data) x = rng.uniform() < rate ? 0.0 : keep_scale;
        masks.push_back(std::move(m));
    }
    return masks;
}

// Tape forward pass over one dataset's standardized rows -> [1, out_dim].
// Pass masks for training mode; nullptr runs eval mode (no dropout).
struct SummaryVars {
    std::vector<Var> eq_w, eq_u, eq_b;
    Var inv_w1, inv_b1, inv_w2, inv_b2, out_w, out_b;
};

inline SummaryVars summary_leaves(Tape& tape, const ParamStore& params, const SummaryNet& net) {
    SummaryVars v;
    for (std::size_t l = 0; l < net.eq_w.size(); ++l) {
        v.eq_w.push_back(tape.leaf(params.tensors[net.eq_w[l]], net.eq_w[l]));
        v.eq_u.push_back(tape.leaf(params.tensors[net.eq_u[l]], net.eq_u[l]));
        v.eq_b.push_back(tape.leaf(params.tensors[net.eq_b[l]], net.eq_b[l]));
    }
    v.inv_w1 = tape.leaf(params.tensors[net.inv_w1], net.inv_w1);
    v.inv_b1 = tape.leaf(params.tensors[net.inv_b1], net.inv_b1);
    v.inv_w2 = tape.leaf(params.tensors[net.inv_w2], net.inv_w2);
    v.inv_b2 = tape.leaf(params.tensors[net.inv_b2], net.inv_b2);
    v.out_w = tape.leaf(params.tensors[net.out_w], net.out_w);
    v.out_b = tape.leaf(params.tensors[net.out_b], net.out_b);
    return v;
}

inline Var summarize_on_tape(Tape& tape, const SummaryVars& leaves, const SummaryNet& net,
                             const Tensor& standardized_rows,
                             const std::vector<Tensor>* masks = nullptr) {
    require(!net.config.bypass, "summarize_on_tape: bypass model has no network");
    require(standardized_rows.rows() >= 1, "summarize: empty dataset");
    Var h = tape.constant(standardized_rows);
    auto pool = [&](Var x) {
        return net.config.pooling == Pooling::mean ? tape.pool_mean_rows(x)
                                                   : tape.pool_max_rows(x);
    };
    for (int l = 0; l < net.config.equivariant_depth; ++l) {
        Var per_elem = tape.matmul(h, leaves.eq_w[l]);
        Var pooled = tape.matmul(pool(h), leaves.eq_u[l]);
        Var pre = tape.add_rowvec(tape.add_rowvec(per_elem, pooled), leaves.eq_b[l]);
        h = tape.activation(pre, net.config.activation);
        if (masks) h = tape.mul(h, tape.constant_ref((*masks)[l]));
    }
    Var p = pool(h);
    Var z1 = tape.activation(tape.add_rowvec(tape.matmul(p, leaves.inv_w1), leaves.inv_b1),
                             net.config.activation);
    if (masks) z1 = tape.mul(z1, tape.constant_ref((*masks)[net.config.equivariant_depth]));
    Var z2 = tape.activation(tape.add_rowvec(tape.matmul(z1, leaves.inv_w2), leaves.inv_b2),
                             net.config.activation);
    if (masks) z2 = tape.mul(z2, tape.constant_ref((*masks)[net.config.equivariant_depth + 1]));
    return tape.add_rowvec(tape.matmul(z2, leaves.out_w), leaves.out_b);
}

// Deterministic eval-mode pass without a tape.
inline std::vector<double> summarize_eval(const ParamStore& params, const SummaryNet& net,
                                          const Tensor& standardized_rows) {
    require(!net.config.bypass, "summarize_eval: bypass model has no network");
    require(standardized_rows.rows() >= 1, "summarize: empty dataset");
    Tape tape;
    SummaryVars leaves = summary_leaves(tape, params, net);
    Var out = summarize_on_tape(tape, leaves, net, standardized_rows, nullptr);
    return tape.value(out).data;
}

// Exact sufficient statistic for the Bernoulli GLM: design^T y, with
// order-independent summation so the statistic is bitwise invariant to any
// joint reordering of (v_i, y_i) pairs.
inline std::vector<double> sufficient_statistic_glm(const ModelSpec& spec,
                                                    const DatasetRecord& data) {
    require(spec.model_id == ModelId::bernoulli_glm,
            "sufficient_statistic_glm: wrong model");
    validate_dataset(spec, data);
    std::size_t dim = spec.design.cols();
    std::vector<double> stat(dim);
    std::vector<double> products(spec.design.rows());
    for (std::size_t d = 0; d < dim; ++d) {
        for (std::size_t i = 0; i < spec.design.rows(); ++i)
            products[i] = spec.design.at(i, d) * data.observations.at(i, 0);
        stat[d] = sorted_sum(products);
    }
    return stat;
}

}  // namespace abw
