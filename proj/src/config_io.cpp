#include "cntp/config_io.hpp"

#include <fstream>
#include <set>

namespace cntp {

using nlohmann::json;

json config_to_json(const DecodeConfig& c) {
    return json{
        {"h_min", c.h_min},
        {"h_max", c.h_max},
        {"n_max", c.n_max},
        {"temperature", c.temperature},
        {"top_p", c.top_p},
        {"punctuation", c.punctuation},
        {"branch_cap", c.branch_cap},
        {"global_cap", c.global_cap},
        {"seed", c.seed},
        {"confidence_measure", std::string(to_string(c.confidence_measure))},
        {"trial_scaling", std::string(to_string(c.trial_scaling))},
        {"fixed_trials", c.fixed_trials},
        {"confidence_on_sampling_dist", c.confidence_on_sampling_dist},
    };
}

namespace {

template <typename T>
T field(const json& j, const std::string& key) {
    try {
        return j.get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config field '" + key + "' has the wrong type");
    }
}

int int_field(const json& j, const std::string& key) {
    if (!j.is_number_integer()) throw ConfigError("config field '" + key + "' must be an integer");
    return j.get<int>();
}

std::uint64_t seed_field(const json& j) {
    if (j.is_number_unsigned()) return j.get<std::uint64_t>();
    if (j.is_number_integer() && j.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(j.get<std::int64_t>());
    if (j.is_string()) {
        try {
            return std::stoull(j.get<std::string>());
        } catch (const std::exception&) {
        }
    }
    throw ConfigError("config field 'seed' must be a non-negative integer");
}

}  // namespace

DecodeConfig config_from_json(const json& j, DecodeConfig c) {
    if (!j.is_object()) throw ConfigError("config must be an object");
    for (const auto& [key, value] : j.items()) {
        if (key == "h_min") c.h_min = field<double>(value, key);
        else if (key == "h_max") c.h_max = field<double>(value, key);
        else if (key == "n_max") c.n_max = int_field(value, key);
        else if (key == "temperature") c.temperature = field<double>(value, key);
        else if (key == "top_p") c.top_p = field<double>(value, key);
        else if (key == "punctuation") c.punctuation = field<std::string>(value, key);
        else if (key == "branch_cap") c.branch_cap = int_field(value, key);
        else if (key == "global_cap") c.global_cap = int_field(value, key);
        else if (key == "seed") c.seed = seed_field(value);
        else if (key == "confidence_measure") c.confidence_measure = parse_confidence_measure(field<std::string>(value, key));
        else if (key == "trial_scaling") c.trial_scaling = parse_trial_scaling(field<std::string>(value, key));
        else if (key == "fixed_trials") c.fixed_trials = int_field(value, key);
        else if (key == "confidence_on_sampling_dist") c.confidence_on_sampling_dist = field<bool>(value, key);
        else throw ConfigError("unknown config key '" + key + "'");
    }
    validate_config(c);
    return c;
}

DecodeConfig load_config(const std::filesystem::path& path, DecodeConfig base) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open config file " + path.string());
    json j;
    try {
        j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
    } catch (const json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    return config_from_json(j, std::move(base));
}

void save_config(const std::filesystem::path& path, const DecodeConfig& config) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write config file " + path.string());
    out << config_to_json(config).dump(2) << "\n";
}

json ledger_to_json(const CostLedger& c) {
    return json{{"forward_passes", c.forward_passes},
                {"generated_tokens", c.generated_tokens},
                {"high_entropy_steps", c.high_entropy_steps},
                {"total_steps", c.total_steps},
                {"trial_launches", c.trial_launches}};
}

CostLedger ledger_from_json(const json& j) {
    CostLedger c;
    try {
        c.forward_passes = j.at("forward_passes").get<std::int64_t>();
        c.generated_tokens = j.at("generated_tokens").get<std::int64_t>();
        c.high_entropy_steps = j.at("high_entropy_steps").get<std::int64_t>();
        c.total_steps = j.at("total_steps").get<std::int64_t>();
        c.trial_launches = j.value("trial_launches", std::int64_t{0});
    } catch (const json::exception& e) {
        throw ParseError(std::string("cost ledger: ") + e.what());
    }
    return c;
}

}  // namespace cntp
