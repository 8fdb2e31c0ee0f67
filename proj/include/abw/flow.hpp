#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "abw/autodiff.hpp"
#include "abw/draws.hpp"
#include "abw/linalg.hpp"
#include "abw/optimizer.hpp"
#include "abw/rng.hpp"
#include "abw/summary.hpp"

namespace abw {

// Conditional coupling flow between unconstrained parameter space and a
// standard normal latent. Each layer is actnorm, two affine couplings on
// alternating halves, and a fixed random permutation. Parameters of
// dimension one get a chain of purely summary-conditioned affine maps.
struct FlowConfig {
    int n_layers = 6;
    int couplings_per_layer = 2;
    int hidden_units = 128;
    int dim_theta = 1;
    int summary_dim = 16;
    Activation activation = Activation::mish;
    uint64_t permutation_seed = 77;
    double scale_clamp = 3.0;  // log-scales bounded via s -> 2 tanh(s/2) clamp
};

struct CouplingDef {
    int w1 = -1, b1 = -1, w2 = -1, b2 = -1, w3 = -1, b3 = -1;
    std::size_t cond_lo = 0, cond_hi = 0;  // conditioning coordinates (may be empty)
    std::size_t out_lo = 0, out_hi = 0;    // transformed coordinates
};

struct FlowLayerDef {
    int log_scale = -1, shift = -1;
    std::vector<CouplingDef> couplings;
    std::vector<std::size_t> perm, inv_perm;
};

struct FlowNet {
    FlowConfig config;
    std::vector<FlowLayerDef> layers;
};

inline FlowNet build_flow(ParamStore& params, const FlowConfig& config) {
    require(config.n_layers >= 1, "build_flow: need at least one layer");
    require(config.dim_theta >= 1, "build_flow: dim_theta must be positive");
    FlowNet net;
    net.config = config;
    std::size_t d = static_cast<std::size_t>(config.dim_theta);
    std::size_t d1 = d / 2;  // first half [0, d1), second half [d1, d)
    RngStream init_rng = RngStream::derive(config.permutation_seed, "flow-init");
    for (int l = 0; l < config.n_layers; ++l) {
        FlowLayerDef layer;
        std::string p = "flow.l" + std::to_string(l);
        layer.log_scale = params.add(p + ".actnorm.log_scale", Tensor::matrix(1, d));
        layer.shift = params.add(p + ".actnorm.shift", Tensor::matrix(1, d));
        int n_couplings = d >= 2 ? config.couplings_per_layer : 1;
        for (int c = 0; c < n_couplings; ++c) {
            CouplingDef cp;
            if (d >= 2) {
                if (c % 2 == 0) {
                    cp.cond_lo = 0;
                    cp.cond_hi = d1;
                    cp.out_lo = d1;
                    cp.out_hi = d;
                } else {
                    cp.cond_lo = d1;
                    cp.cond_hi = d;
                    cp.out_lo = 0;
                    cp.out_hi = d1;
                }
            } else {
                cp.cond_lo = cp.cond_hi = 0;  // summary-only conditioner
                cp.out_lo = 0;
                cp.out_hi = 1;
            }
            std::size_t in = (cp.cond_hi - cp.cond_lo) + config.summary_dim;
            std::size_t out = 2 * (cp.out_hi - cp.out_lo);
            std::string cpn = p + ".c" + std::to_string(c);
            int h = config.hidden_units;
            cp.w1 = params.add(cpn + ".w1", detail::init_dense(in, h, init_rng));
            cp.b1 = params.add(cpn + ".b1", Tensor::matrix(1, h));
            cp.w2 = params.add(cpn + ".w2", detail::init_dense(h, h, init_rng));
            cp.b2 = params.add(cpn + ".b2", Tensor::matrix(1, h));
            // zero last layer: the flow starts as the identity map
            cp.w3 = params.add(cpn + ".w3", Tensor::matrix(h, out));
            cp.b3 = params.add(cpn + ".b3", Tensor::matrix(1, out));
            layer.couplings.push_back(cp);
        }
        RngStream perm_rng = RngStream::derive(config.permutation_seed, "flow-perm", l);
        layer.perm = perm_rng.permutation(d);
        layer.inv_perm.resize(d);
        for (std::size_t i = 0; i < d; ++i) layer.inv_perm[layer.perm[i]] = i;
        net.layers.push_back(std::move(layer));
    }
    return net;
}

struct FlowVars {
    struct CouplingVars {
        Var w1, b1, w2, b2, w3, b3;
    };
    struct LayerVars {
        Var log_scale, shift;
        std::vector<CouplingVars> couplings;
    };
    std::vector<LayerVars> layers;
};

inline FlowVars flow_leaves(Tape& tape, const ParamStore& params, const FlowNet& net) {
    FlowVars v;
    for (const auto& layer : net.layers) {
        FlowVars::LayerVars lv;
        lv.log_scale = tape.leaf(params.tensors[layer.log_scale], layer.log_scale);
        lv.shift = tape.leaf(params.tensors[layer.shift], layer.shift);
        for (const auto& cp : layer.couplings) {
            FlowVars::CouplingVars cv;
            cv.w1 = tape.leaf(params.tensors[cp.w1], cp.w1);
            cv.b1 = tape.leaf(params.tensors[cp.b1], cp.b1);
            cv.w2 = tape.leaf(params.tensors[cp.w2], cp.w2);
            cv.b2 = tape.leaf(params.tensors[cp.b2], cp.b2);
            cv.w3 = tape.leaf(params.tensors[cp.w3], cp.w3);
            cv.b3 = tape.leaf(params.tensors[cp.b3], cp.b3);
            lv.couplings.push_back(cv);
        }
        v.layers.push_back(std::move(lv));
    }
    return v;
}

struct FlowTapeResult {
    Var z;
    Var row_logdet;  // [n, 1], log |det d z / d theta| per row
};

// Forward map theta -> z on a tape, batched over rows; summary rows align
// with theta rows.
inline FlowTapeResult flow_forward_on_tape(Tape& tape, const FlowVars& vars, const FlowNet& net,
                                           Var x, Var summary) {
    std::size_t d = static_cast<std::size_t>(net.config.dim_theta);
    std::size_t n = tape.value(x).rows();
    Var logdet = tape.constant(Tensor::matrix(n, 1));
    Tensor ones = Tensor::matrix(n, d, 1.0);
    Var ones_c = tape.constant(std::move(ones));
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        const auto& lv = vars.layers[l];
        // actnorm: x * exp(log_scale) + shift
        Var scale = tape.exp(lv.log_scale);
        x = tape.add_rowvec(tape.mul_rowvec(x, scale), lv.shift);
        logdet = tape.add(logdet, tape.row_sum(tape.mul_rowvec(ones_c, lv.log_scale)));
        for (std::size_t c = 0; c < net.layers[l].couplings.size(); ++c) {
            const CouplingDef& cp = net.layers[l].couplings[c];
            const auto& cv = lv.couplings[c];
            Var cond_in = cp.cond_hi > cp.cond_lo
                              ? tape.concat_cols(tape.slice_cols(x, cp.cond_lo, cp.cond_hi),
                                                 summary)
                              : summary;
            Var h1 = tape.activation(tape.add_rowvec(tape.matmul(cond_in, cv.w1), cv.b1),
                                     net.config.activation);
            Var h2 = tape.activation(tape.add_rowvec(tape.matmul(h1, cv.w2), cv.b2),
                                     net.config.activation);
            Var out = tape.add_rowvec(tape.matmul(h2, cv.w3), cv.b3);
            std::size_t dt = cp.out_hi - cp.out_lo;
            Var s_raw = tape.slice_cols(out, 0, dt);
            Var t = tape.slice_cols(out, dt, 2 * dt);
            Var s = tape.scale(tape.tanh(tape.scale(s_raw, 0.5)), 2.0 * net.config.scale_clamp);
            Var xt = cp.cond_hi > cp.cond_lo ? tape.slice_cols(x, cp.out_lo, cp.out_hi) : x;
            Var xt_new = tape.add(tape.mul(xt, tape.exp(s)), t);
            logdet = tape.add(logdet, tape.row_sum(s));
            if (cp.cond_hi > cp.cond_lo) {
                x = cp.out_lo == 0 ? tape.concat_cols(xt_new, tape.slice_cols(x, cp.out_hi, d))
                                   : tape.concat_cols(tape.slice_cols(x, 0, cp.out_lo), xt_new);
            } else {
                x = xt_new;
            }
        }
        if (d >= 2) x = tape.permute_cols(x, net.layers[l].perm);
    }
    return {x, logdet};
}

// ---------------------------------------------------------------------------
// plain (tape-free) evaluation path for inference

namespace flow_detail {

inline Tensor dense_act(const Tensor& x, const Tensor& w, const Tensor& b, Activation act) {
    Tensor out = linalg::matmul(x, w);
    for (std::size_t r = 0; r < out.rows(); ++r)
        for (std::size_t c = 0; c < out.cols(); ++c)
            out.at(r, c) = activate(act, out.at(r, c) + b[c]);
    return out;
}

inline Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b) {
    Tensor out = linalg::matmul(x, w);
    for (std::size_t r = 0; r < out.rows(); ++r)
        for (std::size_t c = 0; c < out.cols(); ++c) out.at(r, c) += b[c];
    return out;
}

// conditioner output: s (clamped) and t for a batch
inline void conditioner(const ParamStore& params, const FlowConfig& config,
                        const CouplingDef& cp, const Tensor& cond_in, Tensor* s, Tensor* t) {
    Tensor h1 = dense_act(cond_in, params.tensors[cp.w1], params.tensors[cp.b1],
                          config.activation);
    Tensor h2 = dense_act(h1, params.tensors[cp.w2], params.tensors[cp.b2], config.activation);
    Tensor out = dense(h2, params.tensors[cp.w3], params.tensors[cp.b3]);
    std::size_t dt = cp.out_hi - cp.out_lo;
    *s = Tensor::matrix(out.rows(), dt);
    *t = Tensor::matrix(out.rows(), dt);
    for (std::size_t r = 0; r < out.rows(); ++r)
        for (std::size_t c = 0; c < dt; ++c) {
            s->at(r, c) = 2.0 * config.scale_clamp * std::tanh(0.5 * out.at(r, c));
            t->at(r, c) = out.at(r, dt + c);
        }
}

inline Tensor gather_cols(const Tensor& x, std::size_t lo, std::size_t hi) {
    Tensor out = Tensor::matrix(x.rows(), hi - lo);
    for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t c = lo; c < hi; ++c) out.at(r, c - lo) = x.at(r, c);
    return out;
}

inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
    Tensor out = Tensor::matrix(a.rows(), a.cols() + b.cols());
    for (std::size_t r = 0; r < a.rows(); ++r) {
        for (std::size_t c = 0; c < a.cols(); ++c) out.at(r, c) = a.at(r, c);
        for (std::size_t c = 0; c < b.cols(); ++c) out.at(r, a.cols() + c) = b.at(r, c);
    }
    return out;
}

}  // namespace flow_detail

struct FlowMapResult {
    Tensor values;               // z (forward) or theta (inverse)
    std::vector<double> logdet;  // per row, always of the forward map theta -> z
};

inline FlowMapResult flow_forward(const ParamStore& params, const FlowNet& net, Tensor x,
                                  const Tensor& summary_rows) {
    using namespace flow_detail;
    const FlowConfig& config = net.config;
    std::size_t d = static_cast<std::size_t>(config.dim_theta);
    std::size_t n = x.rows();
    require(summary_rows.rows() == n, "flow_forward: summary row mismatch");
    std::vector<double> logdet(n, 0.0);
    for (const auto& layer : net.layers) {
        const Tensor& ls = params.tensors[layer.log_scale];
        const Tensor& sh = params.tensors[layer.shift];
        double ls_sum = 0.0;
        for (double v : ls.data) ls_sum += v;
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < d; ++c)
                x.at(r, c) = x.at(r, c) * std::exp(ls[c]) + sh[c];
            logdet[r] += ls_sum;
        }
        for (const CouplingDef& cp : layer.couplings) {
            Tensor cond_in = cp.cond_hi > cp.cond_lo
                                 ? concat_cols(gather_cols(x, cp.cond_lo, cp.cond_hi),
                                               summary_rows)
                                 : summary_rows;
            Tensor s, t;
            conditioner(params, config, cp, cond_in, &s, &t);
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = cp.out_lo; c < cp.out_hi; ++c) {
                    std::size_t j = c - cp.out_lo;
                    x.at(r, c) = x.at(r, c) * std::exp(s.at(r, j)) + t.at(r, j);
                    logdet[r] += s.at(r, j);
                }
        }
        if (d >= 2) {
            Tensor permuted = Tensor::matrix(n, d);
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < d; ++c) permuted.at(r, c) = x.at(r, layer.perm[c]);
            x = std::move(permuted);
        }
    }
    if (!x.all_finite()) throw NumericFailure("flow_forward: non-finite output");
    return {std::move(x), std::move(logdet)};
}

inline FlowMapResult flow_inverse(const ParamStore& params, const FlowNet& net, Tensor z,
                                  const Tensor& summary_rows) {
    using namespace flow_detail;
    const FlowConfig& config = net.config;
    std::size_t d = static_cast<std::size_t>(config.dim_theta);
    std::size_t n = z.rows();
    require(summary_rows.rows() == n, "flow_inverse: summary row mismatch");
    std::vector<double> logdet(n, 0.0);  // of the forward map, accumulated backwards
    for (auto it = net.layers.rbegin(); it != net.layers.rend(); ++it) {
        const FlowLayerDef& layer = *it;
        if (d >= 2) {
            Tensor unpermuted = Tensor::matrix(n, d);
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < d; ++c)
                    unpermuted.at(r, c) = z.at(r, layer.inv_perm[c]);
            z = std::move(unpermuted);
        }
        for (auto cit = layer.couplings.rbegin(); cit != layer.couplings.rend(); ++cit) {
            const CouplingDef& cp = *cit;
            Tensor cond_in = cp.cond_hi > cp.cond_lo
                                 ? concat_cols(gather_cols(z, cp.cond_lo, cp.cond_hi),
                                               summary_rows)
                                 : summary_rows;
            Tensor s, t;
            conditioner(params, config, cp, cond_in, &s, &t);
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = cp.out_lo; c < cp.out_hi; ++c) {
                    std::size_t j = c - cp.out_lo;
                    z.at(r, c) = (z.at(r, c) - t.at(r, j)) * std::exp(-s.at(r, j));
                    logdet[r] += s.at(r, j);
                }
        }
        const Tensor& ls = params.tensors[layer.log_scale];
        const Tensor& sh = params.tensors[layer.shift];
        double ls_sum = 0.0;
        for (double v : ls.data) ls_sum += v;
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < d; ++c)
                z.at(r, c) = (z.at(r, c) - sh[c]) * std::exp(-ls[c]);
            logdet[r] += ls_sum;
        }
    }
    if (!z.all_finite()) throw NumericFailure("flow_inverse: non-finite output");
    return {std::move(z), std::move(logdet)};
}

inline double standard_normal_logpdf_row(const Tensor& z, std::size_t r) {
    double ss = 0.0;
    for (std::size_t c = 0; c < z.cols(); ++c) ss += z.at(r, c) * z.at(r, c);
    return -0.5 * ss - 0.5 * static_cast<double>(z.cols()) * std::log(2.0 * M_PI);
}

inline double flow_log_density(const ParamStore& params, const FlowNet& net,
                               const std::vector<double>& theta_u,
                               const std::vector<double>& summary) {
    require(static_cast<int>(theta_u.size()) == net.config.dim_theta,
            "flow_log_density: bad theta dimension");
    require(static_cast<int>(summary.size()) == net.config.summary_dim,
            "flow_log_density: bad summary dimension");
    Tensor x({1, theta_u.size()}, theta_u);
    Tensor s({1, summary.size()}, summary);
    auto fwd = flow_forward(params, net, std::move(x), s);
    return standard_normal_logpdf_row(fwd.values, 0) + fwd.logdet[0];
}

inline PosteriorDraws flow_sample(const ParamStore& params, const FlowNet& net,
                                  const std::vector<double>& summary, std::size_t n_draws,
                                  RngStream& rng, std::string dataset_id = "") {
    require(n_draws >= 1, "flow_sample: need at least one draw");
    std::size_t d = static_cast<std::size_t>(net.config.dim_theta);
    Tensor z = Tensor::matrix(n_draws, d);
    for (auto& v : z.data) v = rng.normal();
    Tensor summary_rows = Tensor::matrix(n_draws, summary.size());
    for (std::size_t r = 0; r < n_draws; ++r)
        for (std::size_t c = 0; c < summary.size(); ++c) summary_rows.at(r, c) = summary[c];
    PosteriorDraws out;
    out.provenance = Provenance::step1;
    out.dataset_id = std::move(dataset_id);
    out.log_density.resize(n_draws);
    auto inv = flow_inverse(params, net, z, summary_rows);
    for (std::size_t r = 0; r < n_draws; ++r)
        out.log_density[r] = standard_normal_logpdf_row(z, r) + inv.logdet[r];
    out.draws_u = std::move(inv.values);
    return out;
}

// Data-dependent actnorm initialization: forward the batch layer by layer
// and set each actnorm so its outputs have per-dimension mean 0, variance 1
// on the batch.
inline void actnorm_initialize(ParamStore& params, const FlowNet& net, Tensor batch,
                               const Tensor& summary_rows) {
    using namespace flow_detail;
    std::size_t n = batch.rows();
    require(n >= 2, "actnorm_initialize: batch size must be >= 2");
    std::size_t d = static_cast<std::size_t>(net.config.dim_theta);
    for (const auto& layer : net.layers) {
        Tensor& ls = params.tensors[layer.log_scale];
        Tensor& sh = params.tensors[layer.shift];
        for (std::size_t c = 0; c < d; ++c) {
            double mean = 0.0;
            for (std::size_t r = 0; r < n; ++r) mean += batch.at(r, c);
            mean /= static_cast<double>(n);
            double var = 0.0;
            for (std::size_t r = 0; r < n; ++r) {
                double dv = batch.at(r, c) - mean;
                var += dv * dv;
            }
            var /= static_cast<double>(n);
            double sd = var > 1e-12 ? std::sqrt(var) : std::sqrt(var + 1e-6);
            ls[c] = -std::log(sd);
            sh[c] = -mean / sd;
        }
        // advance the batch through this layer with the new parameters
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < d; ++c)
                batch.at(r, c) = batch.at(r, c) * std::exp(ls[c]) + sh[c];
        for (const CouplingDef& cp : layer.couplings) {
            Tensor cond_in = cp.cond_hi > cp.cond_lo
                                 ? concat_cols(gather_cols(batch, cp.cond_lo, cp.cond_hi),
                                               summary_rows)
                                 : summary_rows;
            Tensor s, t;
            conditioner(params, net.config, cp, cond_in, &s, &t);
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = cp.out_lo; c < cp.out_hi; ++c) {
                    std::size_t j = c - cp.out_lo;
                    batch.at(r, c) = batch.at(r, c) * std::exp(s.at(r, j)) + t.at(r, j);
                }
        }
        if (d >= 2) {
            Tensor permuted = Tensor::matrix(n, d);
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < d; ++c) permuted.at(r, c) = batch.at(r, layer.perm[c]);
            batch = std::move(permuted);
        }
    }
}

}  // namespace abw
