#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "quicsim/netem.hpp"
#include "quicsim/profiles.hpp"
#include "quicsim/scenario.hpp"

namespace quicsim {

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("config: " + msg) {}
};

// Grid of scenarios: list-valued fields expand to their cross product.
struct GridConfig {
    std::string name = "grid";
    std::vector<Duration> rtt_us{ms(9)};
    std::vector<Duration> delta_t_us{0};
    std::vector<ServerMode> modes{ServerMode::Iack};
    std::vector<std::string> profiles{"quic-go"};
    std::vector<std::int64_t> cert_bytes{1212};
    std::int64_t bandwidth_bits_per_s = 10'000'000;
    std::optional<Duration> owd_compensation_us;  // owd = rtt/2 - this
    std::vector<LossRule> loss_rules;
    bool pad_iack = false;
    bool early_settings = false;
    bool request_after_handshake = false;
    Duration stack_delay_us = 0;
    Duration stack_delay_jitter_us = 0;
    std::uint64_t seed = 1;
    int repetitions = 1;
    Duration server_default_pto_us = ms(200);
    std::int64_t response_bytes = 10240;
    SimTime quiescence_limit_us = kDefaultQuiescenceLimitUs;
    SizeModel sizes;
    std::vector<ImplementationProfile> custom_profiles;
};

namespace config_impl {

using nlohmann::json;

inline void reject_unknown(const json& obj, const std::set<std::string>& allowed,
                           const std::string& path) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (!allowed.count(it.key())) {
            throw ConfigError("unknown key '" + path + it.key() + "'");
        }
    }
}

inline std::vector<std::int64_t> int_list(const json& v, const std::string& path) {
    std::vector<std::int64_t> out;
    if (v.is_number_integer()) {
        out.push_back(v.get<std::int64_t>());
    } else if (v.is_array()) {
        for (const auto& e : v) {
            if (!e.is_number_integer()) {
                throw ConfigError("'" + path + "' must hold integers");
            }
            out.push_back(e.get<std::int64_t>());
        }
    } else {
        throw ConfigError("'" + path + "' must be an integer or integer list");
    }
    if (out.empty()) throw ConfigError("'" + path + "' must not be empty");
    return out;
}

inline std::vector<std::string> string_list(const json& v, const std::string& path) {
    std::vector<std::string> out;
    if (v.is_string()) {
        out.push_back(v.get<std::string>());
    } else if (v.is_array()) {
        for (const auto& e : v) {
            if (!e.is_string()) throw ConfigError("'" + path + "' must hold strings");
            out.push_back(e.get<std::string>());
        }
    } else {
        throw ConfigError("'" + path + "' must be a string or string list");
    }
    if (out.empty()) throw ConfigError("'" + path + "' must not be empty");
    return out;
}

inline ServerMode mode_from_string(const std::string& s) {
    if (s == "iack") return ServerMode::Iack;
    if (s == "wfc") return ServerMode::Wfc;
    throw ConfigError("'modes' entries must be 'iack' or 'wfc', got '" + s + "'");
}

inline LossRule parse_loss_rule(const json& v, const std::string& path) {
    if (!v.is_object()) throw ConfigError("'" + path + "' must be an object");
    reject_unknown(v, {"direction", "by_index", "by_content", "max_applications"}, path + ".");
    LossRule rule;
    if (!v.contains("direction")) throw ConfigError("'" + path + ".direction' is required");
    const std::string dir = v["direction"].get<std::string>();
    if (dir == "client_to_server") {
        rule.direction = Direction::ClientToServer;
    } else if (dir == "server_to_client") {
        rule.direction = Direction::ServerToClient;
    } else {
        throw ConfigError("'" + path + ".direction' must be client_to_server or server_to_client");
    }
    const bool has_index = v.contains("by_index");
    const bool has_content = v.contains("by_content");
    if (has_index == has_content) {
        throw ConfigError("'" + path + "' needs exactly one of by_index / by_content");
    }
    if (has_index) {
        for (std::int64_t i : int_list(v["by_index"], path + ".by_index")) {
            if (i < 1) throw ConfigError("'" + path + ".by_index' entries are 1-based");
            rule.indices.push_back(static_cast<std::uint64_t>(i));
        }
    } else {
        rule.by_content = true;
        try {
            rule.content = content_selector_from_string(v["by_content"].get<std::string>());
        } catch (const std::exception& e) {
            throw ConfigError("'" + path + ".by_content': " + e.what());
        }
    }
    if (v.contains("max_applications")) {
        rule.max_applications = v["max_applications"].get<std::size_t>();
    }
    return rule;
}

inline ImplementationProfile parse_custom_profile(const json& v, const std::string& path) {
    if (!v.is_object()) throw ConfigError("'" + path + "' must be an object");
    reject_unknown(v,
                   {"name", "default_pto_us", "second_flight_datagrams", "probe_count", "quirks",
                    "erroneous_init_smoothed_us"},
                   path + ".");
    ImplementationProfile p;
    if (!v.contains("name")) throw ConfigError("'" + path + ".name' is required");
    p.name = v["name"].get<std::string>();
    if (!v.contains("default_pto_us")) throw ConfigError("'" + path + ".default_pto_us' is required");
    p.default_pto_us = v["default_pto_us"].get<std::int64_t>();
    if (p.default_pto_us <= 0) throw ConfigError("'" + path + ".default_pto_us' must be positive");
    if (!v.contains("second_flight_datagrams")) {
        throw ConfigError("'" + path + ".second_flight_datagrams' is required");
    }
    for (std::int64_t i : int_list(v["second_flight_datagrams"], path + ".second_flight_datagrams")) {
        p.second_flight_datagrams.push_back(static_cast<std::uint64_t>(i));
    }
    if (v.contains("probe_count")) p.probe_count = v["probe_count"].get<int>();
    if (v.contains("quirks")) {
        if (!v["quirks"].is_array()) throw ConfigError("'" + path + ".quirks' must be a list");
        for (const auto& q : v["quirks"]) {
            if (!q.is_string()) throw ConfigError("'" + path + ".quirks' must hold strings");
            try {
                p.quirks.insert(quirk_from_string(q.get<std::string>()));
            } catch (const std::exception& e) {
                throw ConfigError("'" + path + ".quirks': " + e.what());
            }
        }
    }
    if (v.contains("erroneous_init_smoothed_us")) {
        p.erroneous_init_smoothed_us = v["erroneous_init_smoothed_us"].get<std::int64_t>();
    }
    return p;
}

inline SizeModel parse_sizes(const json& v, SizeModel base) {
    reject_unknown(v,
                   {"client_initial", "iack_plain", "iack_padded", "ack_only", "flight_overhead",
                    "flight_initial_head", "max_datagram", "second_flight_datagram",
                    "settings_datagram", "datagram_overhead", "response_payload_per_datagram"},
                   "sizes.");
    auto get = [&](const char* key, std::int64_t& field) {
        if (v.contains(key)) field = v[key].get<std::int64_t>();
    };
    get("client_initial", base.client_initial);
    get("iack_plain", base.iack_plain);
    get("iack_padded", base.iack_padded);
    get("ack_only", base.ack_only);
    get("flight_overhead", base.flight_overhead);
    get("flight_initial_head", base.flight_initial_head);
    get("max_datagram", base.max_datagram);
    get("second_flight_datagram", base.second_flight_datagram);
    get("settings_datagram", base.settings_datagram);
    get("datagram_overhead", base.datagram_overhead);
    get("response_payload_per_datagram", base.response_payload_per_datagram);
    return base;
}

}  // namespace config_impl

inline GridConfig parse_grid_config(const std::string& text) {
    using nlohmann::json;
    json j;
    try {
        j = json::parse(text);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("top level must be an object");
    config_impl::reject_unknown(
        j,
        {"name", "rtt_us", "delta_t_us", "modes", "profiles", "cert_bytes",
         "bandwidth_bits_per_s", "owd_compensation_us", "loss_rules", "pad_iack", "early_settings",
         "request_after_handshake", "stack_delay_us", "stack_delay_jitter_us", "seed",
         "repetitions", "server_default_pto_us", "response_bytes", "quiescence_limit_us", "sizes",
         "custom_profiles"},
        "");

    GridConfig cfg;
    if (j.contains("name")) cfg.name = j["name"].get<std::string>();
    if (j.contains("rtt_us")) cfg.rtt_us = config_impl::int_list(j["rtt_us"], "rtt_us");
    for (Duration r : cfg.rtt_us) {
        if (r <= 0) throw ConfigError("'rtt_us' entries must be positive");
    }
    if (j.contains("delta_t_us")) cfg.delta_t_us = config_impl::int_list(j["delta_t_us"], "delta_t_us");
    for (Duration d : cfg.delta_t_us) {
        if (d < 0) throw ConfigError("'delta_t_us' entries must be non-negative");
    }
    if (j.contains("modes")) {
        cfg.modes.clear();
        for (const std::string& m : config_impl::string_list(j["modes"], "modes")) {
            cfg.modes.push_back(config_impl::mode_from_string(m));
        }
    }
    if (j.contains("profiles")) cfg.profiles = config_impl::string_list(j["profiles"], "profiles");
    if (j.contains("cert_bytes")) cfg.cert_bytes = config_impl::int_list(j["cert_bytes"], "cert_bytes");
    if (j.contains("bandwidth_bits_per_s")) {
        cfg.bandwidth_bits_per_s = j["bandwidth_bits_per_s"].get<std::int64_t>();
        if (cfg.bandwidth_bits_per_s <= 0) throw ConfigError("'bandwidth_bits_per_s' must be positive");
    }
    if (j.contains("owd_compensation_us")) {
        cfg.owd_compensation_us = j["owd_compensation_us"].get<std::int64_t>();
    }
    if (j.contains("loss_rules")) {
        if (!j["loss_rules"].is_array()) throw ConfigError("'loss_rules' must be a list");
        int i = 0;
        for (const auto& r : j["loss_rules"]) {
            cfg.loss_rules.push_back(
                config_impl::parse_loss_rule(r, "loss_rules[" + std::to_string(i++) + "]"));
        }
    }
    auto get_bool = [&](const char* key, bool& field) {
        if (j.contains(key)) {
            if (!j[key].is_boolean()) throw ConfigError(std::string("'") + key + "' must be a boolean");
            field = j[key].get<bool>();
        }
    };
    get_bool("pad_iack", cfg.pad_iack);
    get_bool("early_settings", cfg.early_settings);
    get_bool("request_after_handshake", cfg.request_after_handshake);
    auto get_int = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j[key].get<std::decay_t<decltype(field)>>();
    };
    get_int("stack_delay_us", cfg.stack_delay_us);
    get_int("stack_delay_jitter_us", cfg.stack_delay_jitter_us);
    get_int("seed", cfg.seed);
    get_int("repetitions", cfg.repetitions);
    get_int("server_default_pto_us", cfg.server_default_pto_us);
    get_int("response_bytes", cfg.response_bytes);
    get_int("quiescence_limit_us", cfg.quiescence_limit_us);
    if (cfg.repetitions < 1) throw ConfigError("'repetitions' must be >= 1");
    if (j.contains("sizes")) cfg.sizes = config_impl::parse_sizes(j["sizes"], cfg.sizes);
    if (j.contains("custom_profiles")) {
        if (!j["custom_profiles"].is_array()) throw ConfigError("'custom_profiles' must be a list");
        int i = 0;
        for (const auto& p : j["custom_profiles"]) {
            cfg.custom_profiles.push_back(config_impl::parse_custom_profile(
                p, "custom_profiles[" + std::to_string(i++) + "]"));
        }
    }
    return cfg;
}

inline ImplementationProfile resolve_profile(const GridConfig& cfg, const std::string& name) {
    for (const ImplementationProfile& p : cfg.custom_profiles) {
        if (p.name == name) return p;
    }
    try {
        return lookup_profile(name);
    } catch (const std::exception&) {
        throw ConfigError("'profiles' names unknown profile '" + name + "'");
    }
}

struct GridCell {
    ScenarioParams params;  // id carries the repetition suffix
    int repetition = 0;
};

// Cross product of the grid dimensions; every expanded cell gets a unique
// scenario id of the form name/rtt<us>/dt<us>/<mode>/<profile>/cert<b>/r<rep>.
inline std::vector<GridCell> expand_grid(const GridConfig& cfg) {
    std::vector<GridCell> cells;
    for (Duration rtt : cfg.rtt_us) {
        for (Duration dt : cfg.delta_t_us) {
            for (ServerMode mode : cfg.modes) {
                for (const std::string& prof_name : cfg.profiles) {
                    for (std::int64_t cert : cfg.cert_bytes) {
                        for (int rep = 0; rep < cfg.repetitions; ++rep) {
                            ScenarioParams p;
                            p.rtt_us = rtt;
                            if (cfg.owd_compensation_us) {
                                p.owd_us = rtt / 2 - *cfg.owd_compensation_us;
                            }
                            p.delta_t_us = dt;
                            p.mode = mode;
                            p.profile = resolve_profile(cfg, prof_name);
                            p.cert_bytes = cert;
                            p.bandwidth_bits_per_s = cfg.bandwidth_bits_per_s;
                            p.loss_rules = cfg.loss_rules;
                            p.pad_iack = cfg.pad_iack;
                            p.early_settings = cfg.early_settings;
                            p.request_after_handshake = cfg.request_after_handshake;
                            p.server_default_pto_us = cfg.server_default_pto_us;
                            p.response_bytes = cfg.response_bytes;
                            p.quiescence_limit_us = cfg.quiescence_limit_us;
                            p.sizes = cfg.sizes;
                            p.client_stack_delay_us = cfg.stack_delay_us;
                            p.server_stack_delay_us = cfg.stack_delay_us;
                            p.id = cfg.name + "/rtt" + std::to_string(rtt) + "/dt" +
                                   std::to_string(dt) + "/" + to_string(mode) + "/" + prof_name +
                                   "/cert" + std::to_string(cert) + "/r" + std::to_string(rep);
                            cells.push_back(GridCell{std::move(p), rep});
                        }
                    }
                }
            }
        }
    }
    return cells;
}

}  // namespace quicsim
