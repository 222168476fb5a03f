#ifndef BLINDEQ_CLI_CONFIG_HPP
#define BLINDEQ_CLI_CONFIG_HPP

#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include <json.hpp>

#include "blindeq/experiments.hpp"

namespace blindeq {

enum class Profile { Desk, Paper };

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

using json = nlohmann::json;

inline void reject_unknown(const json& j, const std::set<std::string>& allowed,
                           const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            throw ConfigError("unknown key '" + it.key() + "' in " + where);
}

template <typename T>
inline void maybe(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

inline void parse_equalizer(const json& j, EqualizerSpec& e) {
    reject_unknown(j,
                   {"kind", "lr", "rho", "dynamic_psi", "taps", "l2_weight", "switch_ser",
                    "dbp_steps", "cma_mu0"},
                   "equalizers[]");
    if (!j.contains("kind")) throw ConfigError("equalizers[]: missing 'kind'");
    const std::string kind = j.at("kind").get<std::string>();
    auto k = equalizer_kind_from_name(kind);
    if (!k) throw ConfigError("equalizers[]: unknown kind '" + kind + "'");
    e.kind = *k;
    maybe(j, "lr", e.lr);
    maybe(j, "rho", e.rho);
    maybe(j, "dynamic_psi", e.dynamic_psi);
    maybe(j, "taps", e.taps);
    maybe(j, "l2_weight", e.l2_weight);
    maybe(j, "switch_ser", e.switch_ser);
    maybe(j, "dbp_steps", e.dbp_steps);
    maybe(j, "cma_mu0", e.cma_mu0);
}

inline void parse_fiber(const json& j, FiberLink& f) {
    reject_unknown(j,
                   {"alpha_db_per_km", "beta2_ps2_per_km", "gamma_per_w_km", "length_km",
                    "ssfm_steps", "launch_power_dbm", "rx_noise_dbm", "lpf_bandwidth_ghz",
                    "rx_sample_rate_ghz", "cd_precomp_fraction", "symbol_rate_gbaud", "sim_sps"},
                   "channel.fiber");
    maybe(j, "alpha_db_per_km", f.alpha_db_per_km);
    maybe(j, "beta2_ps2_per_km", f.beta2_ps2_per_km);
    maybe(j, "gamma_per_w_km", f.gamma_per_w_km);
    maybe(j, "length_km", f.length_km);
    maybe(j, "ssfm_steps", f.ssfm_steps);
    maybe(j, "launch_power_dbm", f.launch_power_dbm);
    maybe(j, "rx_noise_dbm", f.rx_noise_dbm);
    maybe(j, "lpf_bandwidth_ghz", f.lpf_bandwidth_ghz);
    maybe(j, "rx_sample_rate_ghz", f.rx_sample_rate_ghz);
    maybe(j, "cd_precomp_fraction", f.cd_precomp_fraction);
    maybe(j, "symbol_rate_gbaud", f.symbol_rate_gbaud);
    maybe(j, "sim_sps", f.sim_sps);
}

inline void parse_channel(const json& j, ChannelSpec& c) {
    reject_unknown(j, {"family", "taps", "ps_rolloff", "fiber", "pa"}, "channel");
    if (j.contains("family")) {
        const std::string fam = j.at("family").get<std::string>();
        if (fam == "linear")
            c.family = ChannelFamily::Linear;
        else if (fam == "fiber")
            c.family = ChannelFamily::Fiber;
        else if (fam == "pa")
            c.family = ChannelFamily::Pa;
        else
            throw ConfigError("channel.family must be linear|fiber|pa");
    }
    if (j.contains("taps")) {
        c.linear_taps.clear();
        for (const auto& t : j.at("taps")) {
            if (!t.is_array() || t.size() != 2)
                throw ConfigError("channel.taps entries must be [re, im]");
            c.linear_taps.push_back({t[0].get<double>(), t[1].get<double>()});
        }
        if (c.linear_taps.empty()) throw ConfigError("channel.taps must be nonempty");
    }
    maybe(j, "ps_rolloff", c.ps_rolloff);
    if (j.contains("fiber")) parse_fiber(j.at("fiber"), c.fiber);
    if (j.contains("pa")) {
        const json& p = j.at("pa");
        reject_unknown(p, {"noise_std_volts", "noise_std_is_per_dim", "load_ohms", "model"},
                       "channel.pa");
        maybe(p, "noise_std_volts", c.pa.noise_std_volts);
        maybe(p, "noise_std_is_per_dim", c.pa.noise_std_is_per_dim);
        maybe(p, "load_ohms", c.pa.load_ohms);
        if (p.contains("model")) {
            const std::string m = p.at("model").get<std::string>();
            if (m == "surrogate") {
                c.pa.pa = make_surrogate_pa();
            } else {
                std::ifstream f(m);
                if (!f) throw ConfigError("channel.pa.model: cannot open '" + m + "'");
                c.pa.pa = gmp_load(f);
            }
        }
    }
}

inline void parse_training(const json& j, TrainingSpec& t) {
    reject_unknown(j, {"total_symbols", "batch", "epochs", "on_the_fly", "steps"}, "training");
    maybe(j, "total_symbols", t.total_symbols);
    maybe(j, "batch", t.batch);
    maybe(j, "epochs", t.epochs);
    maybe(j, "on_the_fly", t.on_the_fly);
    maybe(j, "steps", t.steps);
}

} // namespace detail

/// Named experiment presets matching the reproduced setups.
inline ExperimentConfig config_preset(const std::string& name) {
    ExperimentConfig cfg;
    cfg.name = name;
    if (name == "paper-linear-16qam") {
        cfg.channel.family = ChannelFamily::Linear;
        cfg.constellation_order = 16;
        cfg.snr_db = {15, 18, 21, 24};
        cfg.training = TrainingSpec{1 << 16, 1024, 60, false, 3000};
        cfg.equalizers = {
            {EqualizerKind::VqVaeFir, 2e-3},
            {EqualizerKind::FfeMmse, 1e-2},
            {EqualizerKind::VaeLinear, 1e-3},
            {EqualizerKind::CmaBatch, 2e-3},
            {EqualizerKind::Cma, 1e-3},
        };
    } else if (name == "paper-ssmf" || name == "paper-nzdsf") {
        cfg.channel.family = ChannelFamily::Fiber;
        cfg.channel.fiber = (name == "paper-ssmf") ? make_ssmf_link() : make_nzdsf_link();
        cfg.channel.ps_rolloff = 0.1;
        cfg.constellation_order = 16;
        cfg.launch_power_dbm = {4, 5, 6, 7, 8, 9, 10};
        cfg.channel.fiber.ssfm_steps = 20; // desk profile
        cfg.training = TrainingSpec{1 << 15, 1024, 30, false, 3000};
        cfg.guard_symbols = 256;
        EqualizerSpec ffe{EqualizerKind::FfeMmse, 1e-2};
        ffe.taps = 43;
        cfg.equalizers = {
            ffe,
            {EqualizerKind::VqVaeNn, 1e-3},
            {EqualizerKind::VqVaeMp, 1e-3},
            {EqualizerKind::VaeMp, 1e-3},
            {EqualizerKind::Dbp, 0.0},
        };
    } else if (name == "paper-pa-surrogate") {
        cfg.channel.family = ChannelFamily::Pa;
        cfg.channel.pa.pa = make_surrogate_pa();
        cfg.channel.ps_rolloff = 0.2;
        cfg.constellation_order = 64;
        cfg.pa_power_dbm = {26, 28, 30, 32, 34, 36};
        cfg.training = TrainingSpec{1 << 16, 4096, 120, false, 3000};
        cfg.guard_symbols = 128;
        EqualizerSpec ffe{EqualizerKind::FfeMmse, 5e-3};
        cfg.equalizers = {
            ffe,
            {EqualizerKind::VqVaeNn, 1e-3},
        };
    } else {
        throw ConfigError("unknown preset '" + name + "'");
    }
    return cfg;
}

/// Restores the publication-scale knobs (SSFM steps, dataset sizes).
inline void apply_profile(ExperimentConfig& cfg, Profile p) {
    if (p == Profile::Desk) return;
    switch (cfg.channel.family) {
        case ChannelFamily::Linear:
            cfg.training.total_symbols = 1 << 16;
            break;
        case ChannelFamily::Fiber:
            cfg.channel.fiber.ssfm_steps = 100;
            cfg.training.total_symbols = 1 << 16;
            cfg.training.batch = 2048;
            for (auto& e : cfg.equalizers)
                if (e.kind == EqualizerKind::Dbp) e.dbp_steps = 100;
            break;
        case ChannelFamily::Pa:
            cfg.training.total_symbols = 1 << 18;
            cfg.training.batch = 1 << 14;
            break;
    }
}

/// Parses a config document; a "preset" key seeds the defaults and the other
/// keys override it. Unknown keys are rejected with their JSON path; parse
/// errors carry the line number.
inline ExperimentConfig parse_config(const std::string& text) {
    detail::json j;
    try {
        j = detail::json::parse(text);
    } catch (const detail::json::parse_error& e) {
        std::size_t line = 1;
        for (std::size_t i = 0; i < std::min(e.byte, text.size()); ++i)
            if (text[i] == '\n') ++line;
        throw ConfigError("parse error at line " + std::to_string(line) + ": " + e.what());
    }
    if (!j.is_object()) throw ConfigError("config root must be an object");
    detail::reject_unknown(j,
                           {"preset", "name", "channel", "constellation_order", "equalizers",
                            "training", "snr_db", "launch_power_dbm", "pa_power_dbm", "seed",
                            "guard_symbols", "record_trace", "min_errors", "eval_cap_symbols"},
                           "config");

    ExperimentConfig cfg;
    if (j.contains("preset")) cfg = config_preset(j.at("preset").get<std::string>());
    detail::maybe(j, "name", cfg.name);
    if (j.contains("channel")) detail::parse_channel(j.at("channel"), cfg.channel);
    detail::maybe(j, "constellation_order", cfg.constellation_order);
    if (j.contains("equalizers")) {
        cfg.equalizers.clear();
        for (const auto& je : j.at("equalizers")) {
            EqualizerSpec e;
            detail::parse_equalizer(je, e);
            cfg.equalizers.push_back(e);
        }
    }
    if (j.contains("training")) detail::parse_training(j.at("training"), cfg.training);
    if (j.contains("snr_db")) cfg.snr_db = j.at("snr_db").get<std::vector<double>>();
    if (j.contains("launch_power_dbm"))
        cfg.launch_power_dbm = j.at("launch_power_dbm").get<std::vector<double>>();
    if (j.contains("pa_power_dbm")) cfg.pa_power_dbm = j.at("pa_power_dbm").get<std::vector<double>>();
    detail::maybe(j, "seed", cfg.seed);
    detail::maybe(j, "guard_symbols", cfg.guard_symbols);
    detail::maybe(j, "record_trace", cfg.record_trace);
    detail::maybe(j, "min_errors", cfg.min_errors);
    detail::maybe(j, "eval_cap_symbols", cfg.eval_cap_symbols);

    // presets must stay on their channel family's sweep axis
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    const bool axis_matches =
        (cfg.channel.family == ChannelFamily::Linear && !cfg.snr_db.empty()) ||
        (cfg.channel.family == ChannelFamily::Fiber && !cfg.launch_power_dbm.empty()) ||
        (cfg.channel.family == ChannelFamily::Pa && !cfg.pa_power_dbm.empty());
    if (!axis_matches) throw ConfigError("sweep axis does not match the channel family");
    return cfg;
}

inline ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

/// Serialized config echo for the experiment record.
inline std::string config_to_json(const ExperimentConfig& cfg) {
    detail::json j;
    j["name"] = cfg.name;
    j["constellation_order"] = cfg.constellation_order;
    j["seed"] = cfg.seed;
    j["guard_symbols"] = cfg.guard_symbols;
    j["min_errors"] = cfg.min_errors;
    j["eval_cap_symbols"] = cfg.eval_cap_symbols;
    switch (cfg.channel.family) {
        case ChannelFamily::Linear: {
            j["channel"]["family"] = "linear";
            auto& taps = j["channel"]["taps"];
            for (auto t : cfg.channel.linear_taps) taps.push_back({t.real(), t.imag()});
            break;
        }
        case ChannelFamily::Fiber: {
            j["channel"]["family"] = "fiber";
            const auto& f = cfg.channel.fiber;
            j["channel"]["fiber"] = {{"alpha_db_per_km", f.alpha_db_per_km},
                                     {"beta2_ps2_per_km", f.beta2_ps2_per_km},
                                     {"gamma_per_w_km", f.gamma_per_w_km},
                                     {"length_km", f.length_km},
                                     {"ssfm_steps", f.ssfm_steps},
                                     {"rx_noise_dbm", f.rx_noise_dbm},
                                     {"lpf_bandwidth_ghz", f.lpf_bandwidth_ghz},
                                     {"rx_sample_rate_ghz", f.rx_sample_rate_ghz},
                                     {"cd_precomp_fraction", f.cd_precomp_fraction},
                                     {"symbol_rate_gbaud", f.symbol_rate_gbaud},
                                     {"sim_sps", f.sim_sps}};
            break;
        }
        case ChannelFamily::Pa: {
            j["channel"]["family"] = "pa";
            j["channel"]["pa"] = {{"noise_std_volts", cfg.channel.pa.noise_std_volts},
                                  {"noise_std_is_per_dim", cfg.channel.pa.noise_std_is_per_dim},
                                  {"load_ohms", cfg.channel.pa.load_ohms}};
            break;
        }
    }
    j["channel"]["ps_rolloff"] = cfg.channel.ps_rolloff;
    j["training"] = {{"total_symbols", cfg.training.total_symbols},
                     {"batch", cfg.training.batch},
                     {"epochs", cfg.training.epochs},
                     {"on_the_fly", cfg.training.on_the_fly},
                     {"steps", cfg.training.steps}};
    for (const auto& e : cfg.equalizers)
        j["equalizers"].push_back({{"kind", e.name()},
                                   {"lr", e.lr},
                                   {"rho", e.rho},
                                   {"dynamic_psi", e.dynamic_psi},
                                   {"taps", e.taps},
                                   {"l2_weight", e.l2_weight}});
    if (!cfg.snr_db.empty()) j["snr_db"] = cfg.snr_db;
    if (!cfg.launch_power_dbm.empty()) j["launch_power_dbm"] = cfg.launch_power_dbm;
    if (!cfg.pa_power_dbm.empty()) j["pa_power_dbm"] = cfg.pa_power_dbm;
    return j.dump(2);
}

inline void write_record_json(const ExperimentRecord& rec, std::ostream& os) {
    detail::json j;
    j["library_version"] = rec.library_version;
    j["wall_ms"] = rec.wall_ms;
    j["config"] = detail::json::parse(config_to_json(rec.config));
    for (const auto& p : rec.points) {
        detail::json jp = {{"axis_value", p.axis_value}, {"equalizer", p.equalizer},
                           {"ser", p.ser},               {"errors", p.errors},
                           {"compared", p.compared},     {"censored", p.censored},
                           {"diverged", p.diverged},     {"loss_final", p.loss_final},
                           {"steps", p.steps},           {"wall_ms", p.wall_ms},
                           {"seed", p.seed},             {"checksum", p.checksum}};
        j["points"].push_back(jp);
    }
    os << j.dump(2) << '\n';
}

} // namespace blindeq

#endif
