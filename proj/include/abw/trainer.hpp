#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "abw/amortizer.hpp"
#include "abw/optimizer.hpp"
#include "abw/parallel.hpp"

namespace abw {

struct TrainConfig {
    int n_train = 10000;
    int n_val = 1000;
    int batch_size = 512;
    int epochs = 100;
    double initial_lr = 2.5e-4;
    double warmup_target = 5.0e-4;
    double lr_alpha = 0.0;
    long total_decay_steps = 0;  // 0: batch_size * epochs
    long warmup_steps = -1;      // -1: 5% of total_decay_steps
    double clip_norm = 1.5;
    double weight_decay = 1.0e-3;
    uint64_t seed = 1;
    int workers = 0;      // 0: default_workers()
    int chunk_size = 16;  // examples per tape; fixed so reductions are
                          // independent of the worker count
    int flow_layers = 6;
    int flow_hidden = 128;
};

struct TrainHistory {
    std::vector<double> train_loss;
    std::vector<double> val_loss;
    std::vector<double> learning_rate;
    int best_epoch = -1;
};

using SimPair = std::pair<ParameterVector, DatasetRecord>;  // theta in unconstrained space

// M i.i.d. joint draws from prior and simulator.
inline std::vector<SimPair> generate_training_set(const ModelSpec& spec, int count,
                                                  RngStream& rng) {
    require(count >= 1, "generate_training_set: count must be >= 1");
    std::vector<SimPair> out;
    out.reserve(count);
    for (int m = 0; m < count; ++m) {
        ParameterVector theta = prior_sample(spec, rng, 1.0);
        DatasetRecord data;
        try {
            data = simulate(spec, theta, rng);
        } catch (const std::exception& e) {
            throw NumericFailure("simulator failure at draw " + std::to_string(m) + ": " +
                                 e.what());
        }
        out.emplace_back(to_unconstrained(spec, theta), std::move(data));
    }
    return out;
}

namespace train_detail {

struct PreparedExample {
    std::vector<double> theta_u;
    Tensor inputs;  // standardized obs rows, or the standardized GLM statistic [1, d]
};

inline std::vector<PreparedExample> prepare(const Amortizer& a,
                                            const std::vector<SimPair>& set) {
    std::vector<PreparedExample> out(set.size());
    for (std::size_t i = 0; i < set.size(); ++i) {
        require(set[i].first.space == Space::unconstrained,
                "trainer: training parameters must be unconstrained");
        out[i].theta_u = set[i].first.values;
        if (a.summary.config.bypass) {
            auto stat = sufficient_statistic_glm(a.spec, set[i].second);
            Tensor row = Tensor::matrix(1, stat.size());
            for (std::size_t c = 0; c < stat.size(); ++c)
                row[c] = (stat[c] - a.standardizer.mean[c]) / a.standardizer.sd[c];
            out[i].inputs = std::move(row);
        } else {
            out[i].inputs = a.standardizer.apply(set[i].second.observations);
        }
    }
    return out;
}

struct ChunkResult {
    double loss_sum = 0.0;  // sum over rows of -log q (constants included)
    GradMap grads;
};

// One tape over a handful of examples; returns the summed loss and, when
// requested, gradients of the summed loss.
inline ChunkResult chunk_pass(const Amortizer& a, const std::vector<PreparedExample>& examples,
                              const std::vector<std::size_t>& index, std::size_t lo,
                              std::size_t hi, bool train_mode, bool want_grads,
                              uint64_t dropout_base, uint64_t root_seed) {
    std::size_t count = hi - lo;
    std::size_t d = static_cast<std::size_t>(a.flow.config.dim_theta);
    Tape tape;
    Var summary_batch;
    std::vector<std::vector<Tensor>> masks(count);
    if (a.summary.config.bypass) {
        Tensor s = Tensor::matrix(count, a.summary.config.out_dim);
        for (std::size_t i = 0; i < count; ++i) {
            const Tensor& row = examples[index[lo + i]].inputs;
            for (std::size_t c = 0; c < row.size(); ++c) s.at(i, c) = row[c];
        }
        summary_batch = tape.constant(std::move(s));
    } else {
        SummaryVars leaves = summary_leaves(tape, a.params, a.summary);
        std::vector<Var> summaries;
        summaries.reserve(count);
        for (std::size_t i = 0; i < count; ++i) {
            const PreparedExample& ex = examples[index[lo + i]];
            const std::vector<Tensor>* mask_ptr = nullptr;
            if (train_mode && a.summary.config.dropout_rate > 0.0) {
                RngStream mask_rng =
                    RngStream::derive(root_seed, "dropout", dropout_base + lo + i);
                masks[i] = dropout_masks(a.summary, ex.inputs.rows(), mask_rng);
                mask_ptr = &masks[i];
            }
            summaries.push_back(summarize_on_tape(tape, leaves, a.summary, ex.inputs, mask_ptr));
        }
        summary_batch = count == 1 ? summaries[0] : tape.concat_rows(summaries);
    }
    Tensor theta = Tensor::matrix(count, d);
    for (std::size_t i = 0; i < count; ++i)
        for (std::size_t c = 0; c < d; ++c) theta.at(i, c) = examples[index[lo + i]].theta_u[c];
    Var theta_var = tape.constant(std::move(theta));
    FlowVars fvars = flow_leaves(tape, a.params, a.flow);
    FlowTapeResult fwd = flow_forward_on_tape(tape, fvars, a.flow, theta_var, summary_batch);
    Var loss = tape.sub(tape.sum_all(tape.scale(tape.square(fwd.z), 0.5)),
                        tape.sum_all(fwd.row_logdet));
    ChunkResult result;
    double norm_const =
        0.5 * static_cast<double>(d) * std::log(2.0 * M_PI) * static_cast<double>(count);
    result.loss_sum = tape.value(loss)[0] + norm_const;
    if (want_grads) result.grads = tape.backward(loss);
    return result;
}

// Chunked evaluation over an index range with order-fixed reduction.
inline double mean_loss(const Amortizer& a, const std::vector<PreparedExample>& examples,
                        const std::vector<std::size_t>& index, int chunk_size, int workers) {
    std::size_t n = index.size();
    std::size_t n_chunks = (n + chunk_size - 1) / chunk_size;
    std::vector<double> sums(n_chunks, 0.0);
    parallel_for(n_chunks, workers, [&](std::size_t c) {
        std::size_t lo = c * chunk_size;
        std::size_t hi = std::min(n, lo + chunk_size);
        sums[c] = chunk_pass(a, examples, index, lo, hi, false, false, 0, 0).loss_sum;
    });
    double total = 0.0;
    for (double s : sums) total += s;
    return total / static_cast<double>(n);
}

}  // namespace train_detail

// Mean -log q over a simulation set under the current weights (eval mode).
inline double mean_neg_log_q(const Amortizer& a, const std::vector<SimPair>& set,
                             int workers = 0, int chunk_size = 16) {
    auto prepared = train_detail::prepare(a, set);
    std::vector<std::size_t> index(set.size());
    for (std::size_t i = 0; i < index.size(); ++i) index[i] = i;
    return train_detail::mean_loss(a, prepared, index, chunk_size,
                                   workers > 0 ? workers : default_workers());
}

struct TrainResult {
    Amortizer amortizer;
    TrainHistory history;
};

namespace train_detail {

inline TrainResult train_attempt(const ModelSpec& spec, const std::vector<SimPair>& train_set,
                                 const std::vector<SimPair>& val_set, const TrainConfig& config,
                                 double lr_scale) {
    int workers = config.workers > 0 ? config.workers : default_workers();
    Amortizer a = build_amortizer(spec, derive_seed(config.seed, "weights", 0),
                                  config.flow_layers, config.flow_hidden);

    // input standardization fit on the training simulations, frozen
    if (a.summary.config.bypass) {
        std::vector<Tensor> stats;
        stats.reserve(train_set.size());
        for (const auto& [theta, data] : train_set) {
            auto s = sufficient_statistic_glm(spec, data);
            stats.push_back(Tensor({1, s.size()}, s));
        }
        a.standardizer = Standardizer::fit(stats);
    } else {
        std::vector<Tensor> blocks;
        blocks.reserve(train_set.size());
        for (const auto& [theta, data] : train_set) blocks.push_back(data.observations);
        a.standardizer = Standardizer::fit(blocks);
    }

    auto prepared = prepare(a, train_set);
    auto prepared_val = prepare(a, val_set);
    std::vector<std::size_t> val_index(val_set.size());
    for (std::size_t i = 0; i < val_index.size(); ++i) val_index[i] = i;

    std::size_t n = prepared.size();
    std::size_t batch = static_cast<std::size_t>(config.batch_size);
    require(n >= batch, "train: n_train must be at least batch_size");

    // actnorm initialization from the first batch of the first epoch
    auto first_perm = RngStream::derive(config.seed, "shuffle", 0).permutation(n);
    {
        std::size_t m = std::min(batch, n);
        std::size_t d = static_cast<std::size_t>(a.flow.config.dim_theta);
        Tensor theta_batch = Tensor::matrix(m, d);
        Tensor summary_batch = Tensor::matrix(m, a.summary.config.out_dim);
        for (std::size_t i = 0; i < m; ++i) {
            const auto& ex = prepared[first_perm[i]];
            for (std::size_t c = 0; c < d; ++c) theta_batch.at(i, c) = ex.theta_u[c];
            std::vector<double> s = a.summary.config.bypass
                                        ? ex.inputs.data
                                        : summarize_eval(a.params, a.summary, ex.inputs);
            for (std::size_t c = 0; c < s.size(); ++c) summary_batch.at(i, c) = s[c];
        }
        actnorm_initialize(a.params, a.flow, theta_batch, summary_batch);
    }

    long total_steps = config.total_decay_steps > 0
                           ? config.total_decay_steps
                           : static_cast<long>(config.batch_size) * config.epochs;
    LrSchedule schedule = LrSchedule::cosine(config.initial_lr * lr_scale,
                                             config.warmup_target * lr_scale, config.lr_alpha,
                                             total_steps, config.warmup_steps);
    OptimizerState opt(a.params, config.weight_decay);

    TrainHistory history;
    std::vector<Tensor> best_weights;
    double best_val = INFINITY;
    long global_step = 0;
    std::size_t chunk_size = static_cast<std::size_t>(config.chunk_size);

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        auto perm = epoch == 0 ? first_perm
                               : RngStream::derive(config.seed, "shuffle", epoch).permutation(n);
        double epoch_loss_sum = 0.0;
        std::size_t processed = 0;
        double lr_last = schedule.rate(global_step);
        for (std::size_t start = 0; start < n; start += batch) {
            std::size_t stop = std::min(n, start + batch);
            std::size_t bsize = stop - start;
            std::size_t n_chunks = (bsize + chunk_size - 1) / chunk_size;
            std::vector<ChunkResult> results(n_chunks);
            uint64_t dropout_base = static_cast<uint64_t>(epoch) * n + start;
            parallel_for(n_chunks, workers, [&](std::size_t c) {
                std::size_t lo = start + c * chunk_size;
                std::size_t hi = std::min(stop, lo + chunk_size);
                results[c] = chunk_pass(a, prepared, perm, lo, hi, true, true, dropout_base,
                                        config.seed);
            });
            GradMap grads;
            double batch_loss_sum = 0.0;
            for (const auto& r : results) {  // chunk-index order
                batch_loss_sum += r.loss_sum;
                for (const auto& [id, g] : r.grads) {
                    auto it = grads.find(id);
                    if (it == grads.end()) {
                        grads.emplace(id, g);
                    } else {
                        for (std::size_t j = 0; j < g.size(); ++j) it->second[j] += g[j];
                    }
                }
            }
            double batch_loss = batch_loss_sum / static_cast<double>(bsize);
            if (!std::isfinite(batch_loss))
                throw NumericFailure("non-finite training loss at epoch " +
                                     std::to_string(epoch) + ", batch " +
                                     std::to_string(start / batch));
            for (auto& [id, g] : grads)
                for (double& x : g.data) x /= static_cast<double>(bsize);
            grads = clip_global_norm(std::move(grads), config.clip_norm);
            lr_last = schedule.rate(global_step);
            optimizer_step(a.params, grads, opt, lr_last);
            ++global_step;
            epoch_loss_sum += batch_loss_sum;
            processed += bsize;
        }
        double val = mean_loss(a, prepared_val, val_index, chunk_size, workers);
        if (!std::isfinite(val))
            throw NumericFailure("non-finite validation loss at epoch " + std::to_string(epoch));
        history.train_loss.push_back(epoch_loss_sum / static_cast<double>(processed));
        history.val_loss.push_back(val);
        history.learning_rate.push_back(lr_last);
        if (val < best_val) {
            best_val = val;
            history.best_epoch = epoch;
            best_weights = a.params.tensors;
        }
    }
    require(history.best_epoch >= 0, "train: no epoch completed");
    a.params.tensors = std::move(best_weights);
    return {std::move(a), std::move(history)};
}

}  // namespace train_detail

// Simulation-based maximum-likelihood training of summary net + flow.
// A non-finite loss aborts the attempt; one retry with halved learning
// rates is made before giving up.
inline TrainResult train(const ModelSpec& spec, const std::vector<SimPair>& train_set,
                         const std::vector<SimPair>& val_set, const TrainConfig& config) {
    require(!train_set.empty() && !val_set.empty(), "train: empty training or validation set");
    try {
        return train_detail::train_attempt(spec, train_set, val_set, config, 1.0);
    } catch (const NumericFailure&) {
        return train_detail::train_attempt(spec, train_set, val_set, config, 0.5);
    }
}

}  // namespace abw
