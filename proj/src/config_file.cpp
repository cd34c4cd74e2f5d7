#include "mmnet/config_file.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "mmnet/error.hpp"

namespace mmnet {

namespace {

struct Field {
    const char* section;
    const char* key;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

template <typename I>
I parse_integer(const std::string& v)
{
    I out{};
    auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size()) throw ConfigError("not an integer: '" + v + "'");
    return out;
}

double parse_real(const std::string& v)
{
    try {
        return parse_double(v);
    } catch (const FormatError&) {
        throw ConfigError("not a number: '" + v + "'");
    }
}

bool parse_bool(const std::string& v)
{
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("not a boolean: '" + v + "'");
}

template <typename Get>
Field int_field(const char* section, const char* key, Get ref)
{
    return {section, key, [ref](RunConfig& c, const std::string& v) { ref(c) = parse_integer<int>(v); },
            [ref](const RunConfig& c) { return std::to_string(ref(c)); }};
}

template <typename Get>
Field real_field(const char* section, const char* key, Get ref)
{
    return {section, key, [ref](RunConfig& c, const std::string& v) { ref(c) = parse_real(v); },
            [ref](const RunConfig& c) { return format_double(ref(c)); }};
}

template <typename Get>
Field bool_field(const char* section, const char* key, Get ref)
{
    return {section, key, [ref](RunConfig& c, const std::string& v) { ref(c) = parse_bool(v); },
            [ref](const RunConfig& c) { return std::string(ref(c) ? "true" : "false"); }};
}

const std::vector<Field>& fields()
{
    static const std::vector<Field> table = [] {
        std::vector<Field> f;
        // preset first: it resets the layer table the size keys refine.
        f.push_back({"backbone", "preset",
                     [](RunConfig& c, const std::string& v) {
                         const int ez = c.model.backbone.exemplar_size, sz = c.model.backbone.search_size;
                         c.model.backbone = BackboneConfig::from_preset(v);
                         c.model.backbone.exemplar_size = ez;
                         c.model.backbone.search_size = sz;
                     },
                     [](const RunConfig& c) { return c.model.backbone.preset; }});
        f.push_back(int_field("backbone", "exemplar_size", [](auto& c) -> auto& { return c.model.backbone.exemplar_size; }));
        f.push_back(int_field("backbone", "search_size", [](auto& c) -> auto& { return c.model.backbone.search_size; }));
        f.push_back(int_field("backbone", "num_classes", [](auto& c) -> auto& { return c.model.num_classes; }));
        f.push_back(real_field("backbone", "gain_init", [](auto& c) -> auto& { return c.model.gain_init; }));
        f.push_back(real_field("backbone", "label_radius", [](auto& c) -> auto& { return c.model.label_radius; }));
        f.push_back(real_field("backbone", "pos_weight_share", [](auto& c) -> auto& { return c.model.pos_weight_share; }));
        f.push_back(real_field("backbone", "cf_lambda", [](auto& c) -> auto& { return c.model.cf.lambda; }));
        f.push_back(real_field("backbone", "cf_sigma_fraction", [](auto& c) -> auto& { return c.model.cf.sigma_fraction; }));
        f.push_back(bool_field("backbone", "cf_window", [](auto& c) -> auto& { return c.model.cf.window; }));

        f.push_back({"train", "strategy",
                     [](RunConfig& c, const std::string& v) { c.train.strategy = parse_strategy(v); },
                     [](const RunConfig& c) { return to_string(c.train.strategy); }});
        f.push_back(int_field("train", "epochs", [](auto& c) -> auto& { return c.train.epochs; }));
        f.push_back(int_field("train", "pairs_per_epoch", [](auto& c) -> auto& { return c.train.pairs_per_epoch; }));
        f.push_back(int_field("train", "batch", [](auto& c) -> auto& { return c.train.batch; }));
        f.push_back(real_field("train", "momentum", [](auto& c) -> auto& { return c.train.momentum; }));
        f.push_back(real_field("train", "lr_hi", [](auto& c) -> auto& { return c.train.lr_hi; }));
        f.push_back(real_field("train", "lr_lo", [](auto& c) -> auto& { return c.train.lr_lo; }));
        f.push_back(real_field("train", "lambda1", [](auto& c) -> auto& { return c.train.lambda1; }));
        f.push_back(real_field("train", "lambda2", [](auto& c) -> auto& { return c.train.lambda2; }));
        f.push_back(real_field("train", "lambda3", [](auto& c) -> auto& { return c.train.lambda3; }));
        f.push_back({"train", "seed",
                     [](RunConfig& c, const std::string& v) { c.train.seed = parse_integer<std::uint64_t>(v); },
                     [](const RunConfig& c) { return std::to_string(c.train.seed); }});
        f.push_back(real_field("train", "weight_decay", [](auto& c) -> auto& { return c.train.weight_decay; }));
        f.push_back(real_field("train", "clip_norm", [](auto& c) -> auto& { return c.train.clip_norm; }));
        f.push_back(bool_field("train", "prefetch", [](auto& c) -> auto& { return c.train.prefetch; }));
        f.push_back(real_field("train", "context_amount", [](auto& c) -> auto& { return c.sampler.context_amount; }));
        f.push_back(int_field("train", "max_jitter", [](auto& c) -> auto& { return c.sampler.max_jitter; }));
        f.push_back(int_field("train", "jitter_step", [](auto& c) -> auto& { return c.sampler.jitter_step; }));
        f.push_back(int_field("train", "max_gap", [](auto& c) -> auto& { return c.sampler.max_gap; }));

        f.push_back(int_field("tracker", "scales", [](auto& c) -> auto& { return c.tracker.scales; }));
        f.push_back(real_field("tracker", "scale_step", [](auto& c) -> auto& { return c.tracker.scale_step; }));
        f.push_back(real_field("tracker", "scale_penalty", [](auto& c) -> auto& { return c.tracker.scale_penalty; }));
        f.push_back(real_field("tracker", "scale_damping", [](auto& c) -> auto& { return c.tracker.scale_damping; }));
        f.push_back(real_field("tracker", "window_weight", [](auto& c) -> auto& { return c.tracker.window_weight; }));
        f.push_back(int_field("tracker", "response_upsample", [](auto& c) -> auto& { return c.tracker.response_upsample; }));
        f.push_back({"tracker", "template_mode",
                     [](RunConfig& c, const std::string& v) { c.tracker.template_mode = parse_template_mode(v); },
                     [](const RunConfig& c) { return to_string(c.tracker.template_mode); }});
        f.push_back(real_field("tracker", "ema_rate", [](auto& c) -> auto& { return c.tracker.ema_rate; }));
        f.push_back(real_field("tracker", "branch_mix", [](auto& c) -> auto& { return c.tracker.branch_mix; }));
        f.push_back(real_field("tracker", "context_amount", [](auto& c) -> auto& { return c.tracker.context_amount; }));

        f.push_back({"eval", "protocol", [](RunConfig& c, const std::string& v) { c.eval.protocol = v; },
                     [](const RunConfig& c) { return c.eval.protocol; }});
        f.push_back(int_field("eval", "reinit_skip", [](auto& c) -> auto& { return c.eval.reinit_skip; }));
        f.push_back(int_field("eval", "burnin", [](auto& c) -> auto& { return c.eval.burnin; }));
        f.push_back(int_field("eval", "workers", [](auto& c) -> auto& { return c.eval.workers; }));
        f.push_back(bool_field("eval", "plots", [](auto& c) -> auto& { return c.eval.plots; }));
        return f;
    }();
    return table;
}

} // namespace

void RunConfig::validate() const
{
    model.validate();
    train.validate();
    tracker.validate();
    eval.validate();
    if (!(sampler.context_amount >= 0)) throw ConfigError("context_amount must be >= 0");
    if (sampler.max_jitter < 0) throw ConfigError("max_jitter must be >= 0");
    if (sampler.jitter_step < 1) throw ConfigError("jitter_step must be >= 1");
    if (sampler.max_gap < 1) throw ConfigError("max_gap must be >= 1");
}

RunConfig parse_config(std::string_view text, const std::string& origin)
{
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        std::istringstream in{std::string(text)};
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(origin + ": line " + std::to_string(e.line()) + ": " + e.message());
    }

    std::map<std::string, std::string> given;
    for (const auto& [section, body] : tree) {
        if (body.empty() && !body.data().empty())
            throw ConfigError(origin + ": key '" + section + "' must be inside a [section]");
        bool known_section = false;
        for (const auto& f : fields()) known_section = known_section || section == f.section;
        if (!known_section) throw ConfigError(origin + ": unknown section [" + section + "]");
        for (const auto& [key, value] : body) {
            bool known = false;
            for (const auto& f : fields()) known = known || (section == f.section && key == f.key);
            if (!known) throw ConfigError(origin + ": unknown key '" + key + "' in [" + section + "]");
            given[section + "." + key] = value.data();
        }
    }

    RunConfig cfg;
    for (const auto& f : fields()) {
        const auto it = given.find(std::string(f.section) + "." + f.key);
        if (it == given.end()) continue;
        try {
            f.set(cfg, it->second);
        } catch (const ConfigError& e) {
            throw ConfigError(origin + ": [" + f.section + "] " + f.key + ": " + e.what());
        }
    }
    try {
        cfg.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(origin + ": " + e.what());
    }
    return cfg;
}

RunConfig load_config(const std::filesystem::path& file)
{
    std::ifstream in(file);
    if (!in) throw IoError("cannot open config " + file.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), file.string());
}

std::string to_ini(const RunConfig& cfg)
{
    std::string out;
    std::string section;
    for (const auto& f : fields()) {
        if (section != f.section) {
            if (!section.empty()) out += "\n";
            section = f.section;
            out += "[" + section + "]\n";
        }
        out += std::string(f.key) + " = " + f.get(cfg) + "\n";
    }
    return out;
}

std::vector<std::string> config_keys()
{
    std::vector<std::string> keys;
    for (const auto& f : fields()) keys.push_back(std::string(f.section) + "." + f.key);
    return keys;
}

} // namespace mmnet
