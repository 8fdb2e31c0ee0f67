#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "abw/checkpoint.hpp"
#include "abw/flow.hpp"
#include "abw/models.hpp"
#include "abw/summary.hpp"

namespace abw {

// The trained artifact: summary network + coupling flow + input scaling,
// all weights in one ParamStore so the optimizer sees a single parameter
// set.
struct Amortizer {
    ModelSpec spec;
    ParamStore params;
    SummaryNet summary;
    FlowNet flow;
    Standardizer standardizer;  // obs fields, or the GLM statistic
    uint64_t init_seed = 0;

    const SummaryConfig& summary_config() const { return summary.config; }
    const FlowConfig& flow_config() const { return flow.config; }
};

inline Amortizer build_amortizer(const ModelSpec& spec, uint64_t seed,
                                 int n_layers = 6, int hidden_units = 128) {
    Amortizer a;
    a.spec = spec;
    a.init_seed = seed;
    SummaryConfig sc = SummaryConfig::for_model(spec);
    RngStream init_rng = RngStream::derive(seed, "amortizer-init");
    a.summary = build_summary_net(a.params, sc, init_rng);
    FlowConfig fc;
    fc.n_layers = n_layers;
    fc.hidden_units = hidden_units;
    fc.dim_theta = spec.dim_theta;
    fc.summary_dim = sc.out_dim;
    fc.activation = sc.bypass ? Activation::gelu : sc.activation;
    fc.permutation_seed = derive_seed(seed, "flow-perms", 0);
    a.flow = build_flow(a.params, fc);
    // identity scaling until the trainer fits real statistics
    std::size_t fields = sc.bypass ? static_cast<std::size_t>(sc.out_dim)
                                   : static_cast<std::size_t>(spec.obs_fields);
    a.standardizer.mean.assign(fields, 0.0);
    a.standardizer.sd.assign(fields, 1.0);
    return a;
}

// Eval-mode summary statistic for one dataset (learned network, or the
// standardized exact statistic for the GLM).
inline std::vector<double> summarize_dataset(const Amortizer& a, const DatasetRecord& data) {
    validate_dataset(a.spec, data);
    if (a.summary.config.bypass) {
        auto stat = sufficient_statistic_glm(a.spec, data);
        for (std::size_t i = 0; i < stat.size(); ++i)
            stat[i] = (stat[i] - a.standardizer.mean[i]) / a.standardizer.sd[i];
        return stat;
    }
    Tensor rows = a.standardizer.apply(data.observations);
    return summarize_eval(a.params, a.summary, rows);
}

inline PosteriorDraws amortized_sample(const Amortizer& a, const DatasetRecord& data,
                                       std::size_t n_draws, RngStream& rng) {
    auto summary = summarize_dataset(a, data);
    return flow_sample(a.params, a.flow, summary, n_draws, rng, data.dataset_id);
}

// ---------------------------------------------------------------------------
// config serialization

inline nlohmann::json summary_config_to_json(const SummaryConfig& c) {
    nlohmann::json j;
    j["out_dim"] = c.out_dim;
    j["equivariant_depth"] = c.equivariant_depth;
    j["hidden_units"] = c.hidden_units;
    j["pooling"] = c.pooling == Pooling::mean ? "mean" : "max";
    j["activation"] = c.activation == Activation::mish   ? "mish"
                      : c.activation == Activation::gelu ? "gelu"
                                                         : "tanh";
    j["dropout_rate"] = c.dropout_rate;
    j["in_fields"] = c.in_fields;
    j["bypass"] = c.bypass;
    return j;
}

inline SummaryConfig summary_config_from_json(const nlohmann::json& j) {
    SummaryConfig c;
    c.out_dim = j.at("out_dim").get<int>();
    c.equivariant_depth = j.at("equivariant_depth").get<int>();
    c.hidden_units = j.at("hidden_units").get<int>();
    c.pooling = j.at("pooling").get<std::string>() == "mean" ? Pooling::mean : Pooling::max;
    std::string act = j.at("activation").get<std::string>();
    c.activation = act == "mish" ? Activation::mish
                   : act == "gelu" ? Activation::gelu
                                   : Activation::tanh_act;
    c.dropout_rate = j.at("dropout_rate").get<double>();
    c.in_fields = j.at("in_fields").get<int>();
    c.bypass = j.at("bypass").get<bool>();
    return c;
}

inline nlohmann::json flow_config_to_json(const FlowConfig& c) {
    nlohmann::json j;
    j["n_layers"] = c.n_layers;
    j["couplings_per_layer"] = c.couplings_per_layer;
    j["hidden_units"] = c.hidden_units;
    j["dim_theta"] = c.dim_theta;
    j["summary_dim"] = c.summary_dim;
    j["activation"] = c.activation == Activation::mish   ? "mish"
                      : c.activation == Activation::gelu ? "gelu"
                                                         : "tanh";
    j["permutation_seed"] = c.permutation_seed;
    j["scale_clamp"] = c.scale_clamp;
    return j;
}

inline FlowConfig flow_config_from_json(const nlohmann::json& j) {
    FlowConfig c;
    c.n_layers = j.at("n_layers").get<int>();
    c.couplings_per_layer = j.at("couplings_per_layer").get<int>();
    c.hidden_units = j.at("hidden_units").get<int>();
    c.dim_theta = j.at("dim_theta").get<int>();
    c.summary_dim = j.at("summary_dim").get<int>();
    std::string act = j.at("activation").get<std::string>();
    c.activation = act == "mish" ? Activation::mish
                   : act == "gelu" ? Activation::gelu
                                   : Activation::tanh_act;
    c.permutation_seed = j.at("permutation_seed").get<uint64_t>();
    c.scale_clamp = j.at("scale_clamp").get<double>();
    return c;
}

// ---------------------------------------------------------------------------
// checkpoint I/O

inline void save_amortizer(const std::string& path, const Amortizer& a,
                           const nlohmann::json& extra = {}) {
    nlohmann::json header;
    header["format_version"] = kFormatVersion;
    header["kind"] = "checkpoint";
    header["model"] = model_to_json(a.spec);
    header["summary_config"] = summary_config_to_json(a.summary.config);
    header["flow_config"] = flow_config_to_json(a.flow.config);
    header["standardizer"] = {{"mean", a.standardizer.mean}, {"sd", a.standardizer.sd}};
    header["init_seed"] = a.init_seed;
    if (!extra.is_null() && !extra.empty()) header["extra"] = extra;
    nlohmann::json arrays = nlohmann::json::array();
    std::vector<const std::vector<double>*> data;
    for (std::size_t i = 0; i < a.params.size(); ++i) {
        nlohmann::json e;
        e["name"] = a.params.names[i];
        e["shape"] = a.params.tensors[i].shape;
        e["count"] = a.params.tensors[i].size();
        arrays.push_back(e);
        data.push_back(&a.params.tensors[i].data);
    }
    header["arrays"] = arrays;
    write_container(path, header, data);
}

inline Amortizer load_amortizer(const std::string& path, nlohmann::json* extra_out = nullptr) {
    Container c = read_container(path, "checkpoint");
    ModelSpec spec = model_from_json(c.header.at("model"));
    Amortizer a;
    a.spec = spec;
    a.init_seed = c.header.at("init_seed").get<uint64_t>();
    SummaryConfig sc = summary_config_from_json(c.header.at("summary_config"));
    RngStream dummy_rng = RngStream::derive(a.init_seed, "amortizer-init");
    a.summary = build_summary_net(a.params, sc, dummy_rng);
    FlowConfig fc = flow_config_from_json(c.header.at("flow_config"));
    a.flow = build_flow(a.params, fc);
    a.standardizer.mean = c.header.at("standardizer").at("mean").get<std::vector<double>>();
    a.standardizer.sd = c.header.at("standardizer").at("sd").get<std::vector<double>>();
    // overwrite the freshly initialized tensors with the stored ones
    const auto& arrays = c.header.at("arrays");
    require(arrays.size() == a.params.size(), "checkpoint: tensor count mismatch");
    for (std::size_t i = 0; i < a.params.size(); ++i) {
        require(arrays[i].at("name").get<std::string>() == a.params.names[i],
                "checkpoint: tensor name mismatch at index " + std::to_string(i));
        auto shape = arrays[i].at("shape").get<std::vector<std::size_t>>();
        require(shape == a.params.tensors[i].shape, "checkpoint: tensor shape mismatch for " +
                                                        a.params.names[i]);
        require(c.arrays[i].size() == a.params.tensors[i].size(),
                "checkpoint: tensor size mismatch for " + a.params.names[i]);
        a.params.tensors[i].data = std::move(c.arrays[i]);
    }
    if (extra_out) *extra_out = c.header.value("extra", nlohmann::json::object());
    return a;
}

}  // namespace abw
