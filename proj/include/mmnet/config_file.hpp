#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "mmnet/dataio.hpp"
#include "mmnet/evalkit.hpp"
#include "mmnet/model.hpp"
#include "mmnet/tracker.hpp"
#include "mmnet/trainer.hpp"

namespace mmnet {

/// Every configurable value of a run, grouped as in the config file:
///   [backbone]  network shape, heads and CF layer
///   [train]     optimizer, strategy and pair sampling
///   [tracker]   online tracking
///   [eval]      evaluation protocol
struct RunConfig {
    ModelConfig model;
    SamplerConfig sampler;
    TrainConfig train;
    TrackerConfig tracker;
    EvalConfig eval;

    void validate() const;
};

/// Parses key = value text with [section] headers; '#' and ';' start
/// comments. Unknown sections or keys, duplicates and malformed values are
/// ConfigErrors naming `origin`. Missing keys keep their defaults.
RunConfig parse_config(std::string_view text, const std::string& origin = "config");
RunConfig load_config(const std::filesystem::path& file);

/// Complete text form of `cfg` (every key, every section).
std::string to_ini(const RunConfig& cfg);

/// "section.key" of every recognized setting, in file order.
std::vector<std::string> config_keys();

} // namespace mmnet
