// Copyright (c) 2026 The spair authors
// SPDX-License-Identifier: Apache-2.0

#ifndef SPAIR_CONFIG_HPP
#define SPAIR_CONFIG_HPP

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "spair/train.hpp"

namespace spair {

// Line-oriented `key = value` configuration with `#` comments and dotted key
// paths. Consumers take the keys they understand out of the map; whatever is
// left at the end is unknown and rejected.

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace configdetail {

inline std::string trim(const std::string& s) {
    const size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

} // namespace configdetail

using ConfigMap = std::map<std::string, std::string>;

inline ConfigMap parse_config(const std::string& text, const std::string& origin = "config") {
    ConfigMap kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = configdetail::trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected `key = value`");
        const std::string key = configdetail::trim(line.substr(0, eq));
        const std::string val = configdetail::trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
        if (!kv.emplace(key, val).second)
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key `" + key +
                              "`");
    }
    return kv;
}

inline ConfigMap load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError(path + ": cannot open config file");
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return parse_config(text, path);
}

namespace configdetail {

inline bool take(ConfigMap& kv, const std::string& key, std::string& out) {
    const auto it = kv.find(key);
    if (it == kv.end()) return false;
    out = it->second;
    kv.erase(it);
    return true;
}

template <typename Parse>
void take_as(ConfigMap& kv, const std::string& key, const Parse& parse) {
    std::string raw;
    if (!take(kv, key, raw)) return;
    try {
        parse(raw);
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError("config key `" + key + "`: bad value `" + raw + "`: " + e.what());
    }
}

inline void take_int(ConfigMap& kv, const std::string& key, int& field, int lo, int hi) {
    take_as(kv, key, [&](const std::string& raw) {
        size_t used = 0;
        const long long v = std::stoll(raw, &used);
        if (used != raw.size()) throw ConfigError("config key `" + key + "`: not an integer: " + raw);
        if (v < lo || v > hi)
            throw ConfigError("config key `" + key + "`: " + raw + " outside [" +
                              std::to_string(lo) + ", " + std::to_string(hi) + "]");
        field = int(v);
    });
}

inline void take_u64(ConfigMap& kv, const std::string& key, uint64_t& field) {
    take_as(kv, key, [&](const std::string& raw) {
        size_t used = 0;
        const unsigned long long v = std::stoull(raw, &used);
        if (used != raw.size()) throw ConfigError("config key `" + key + "`: not an integer: " + raw);
        field = v;
    });
}

inline void take_double(ConfigMap& kv, const std::string& key, double& field) {
    take_as(kv, key, [&](const std::string& raw) {
        size_t used = 0;
        const double v = std::stod(raw, &used);
        if (used != raw.size()) throw ConfigError("config key `" + key + "`: not a number: " + raw);
        field = v;
    });
}

inline void take_bool(ConfigMap& kv, const std::string& key, bool& field) {
    take_as(kv, key, [&](const std::string& raw) {
        if (raw == "true" || raw == "1") field = true;
        else if (raw == "false" || raw == "0") field = false;
        else throw ConfigError("config key `" + key + "`: expected true/false, got " + raw);
    });
}

} // namespace configdetail

// Applies `net.*` keys to a NetSpec, removing each consumed key.
inline void apply_net_config(ConfigMap& kv, NetSpec& spec) {
    using namespace configdetail;
    take_int(kv, "net.levels", spec.levels, 2, 8);
    take_int(kv, "net.base_channels", spec.base_channels, 1, 4096);
    take_int(kv, "net.dense_block_depth", spec.dense_block_depth, 1, 64);
    take_int(kv, "net.growth", spec.growth, 1, 4096);
    take_int(kv, "net.sc_growth", spec.sc_growth, 1, 4096);
    take_int(kv, "net.in_channels", spec.in_ch, 1, 64);
}

// Applies `train.*` keys (and `net.variant`) to a TrainConfig.
inline void apply_train_config(ConfigMap& kv, TrainConfig& cfg) {
    using namespace configdetail;
    take_as(kv, "net.variant", [&](const std::string& raw) { cfg.variant = variant_from_name(raw); });
    take_double(kv, "train.learning_rate", cfg.learning_rate);
    take_int(kv, "train.lr_halving_period_epochs", cfg.lr_halving_period_epochs, 1, 1 << 20);
    take_int(kv, "train.iters_per_epoch", cfg.iters_per_epoch, 1, 1 << 30);
    take_int(kv, "train.iters", cfg.iters, 1, 1 << 30);
    take_int(kv, "train.batch_size", cfg.batch_size, 1, 4096);
    take_int(kv, "train.patch_size", cfg.patch_size, 4, 4096);
    take_u64(kv, "train.seed", cfg.seed);
    take_double(kv, "train.mask_threshold", cfg.mask_threshold);
    take_bool(kv, "train.hflip", cfg.hflip);
    take_bool(kv, "train.vflip", cfg.vflip);
    take_as(kv, "train.snl_step2", [&](const std::string& raw) {
        if (raw == "clean_only") cfg.policy2 = SnlPolicy::clean_only;
        else if (raw == "all_pixels") cfg.policy2 = SnlPolicy::all_pixels;
        else throw ConfigError("config key `train.snl_step2`: expected clean_only or all_pixels");
    });
    take_as(kv, "train.mask_source", [&](const std::string& raw) {
        if (raw == "predicted") cfg.mask_source = MaskSource::predicted;
        else if (raw == "ground_truth") cfg.mask_source = MaskSource::ground_truth;
        else throw ConfigError("config key `train.mask_source`: expected predicted or ground_truth");
    });
    take_int(kv, "train.log_every", cfg.log_every, 0, 1 << 30);
    take_int(kv, "train.val_every", cfg.val_every, 0, 1 << 30);
}

// Call after all consumers have taken their keys.
inline void reject_unknown_keys(const ConfigMap& kv) {
    if (kv.empty()) return;
    std::string msg = "unknown config key(s):";
    for (const auto& [k, v] : kv) msg += " `" + k + "`";
    throw ConfigError(msg);
}

// One line per key, for `--help` and the README.
inline const char* config_key_reference() {
    return "net.levels              encoder/decoder resolutions (default 3)\n"
           "net.base_channels       stem width (default 16)\n"
           "net.dense_block_depth   layers per dense block (default 4)\n"
           "net.growth              dense block growth (default 8)\n"
           "net.sc_growth           guided conv block growth (default 8)\n"
           "net.in_channels         image channels (default 3)\n"
           "net.variant             net1..net5 (default net5)\n"
           "train.learning_rate     initial Adam step size (default 2e-4)\n"
           "train.lr_halving_period_epochs  halve lr every N epochs (default 50)\n"
           "train.iters_per_epoch   iterations per epoch for the lr schedule (default 10)\n"
           "train.iters             total training iterations (default 1000)\n"
           "train.batch_size        patches per step (default 8)\n"
           "train.patch_size        square crop size (default 64)\n"
           "train.seed              training PRNG seed (default 1)\n"
           "train.mask_threshold    probability cut for predicted masks (default 0.5)\n"
           "train.hflip             random horizontal flips (default true)\n"
           "train.vflip             random vertical flips (default true)\n"
           "train.snl_step2         clean_only | all_pixels (default clean_only)\n"
           "train.mask_source       predicted | ground_truth (default predicted)\n"
           "train.log_every         log every N iterations, 0 = off (default 50)\n"
           "train.val_every         validate every N iterations, 0 = off (default 0)\n";
}

} // namespace spair

#endif
