#ifndef UAVIR_EXPERIMENT_HPP
#define UAVIR_EXPERIMENT_HPP

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "uavir/deployment_sim.hpp"

namespace uavir {

/// Everything one experiment run needs. Serialized as flat key=value text.
struct ExperimentConfig {
    SimConfig sim{};
    SceneGeometry scene{};
    double p_max_dbm = 40.0;

    int quantiles = 40;
    double discount = 0.9;
    double learning_rate = 0.1;
    double exploration_start = 0.3;
    double exploration_end = 0.02;
    bool sarsa_target = false;

    long training_slots = 50000;
    long training_episode_slots = 1000;  // 0 lets training episodes run until the battery is empty
    bool random_training_starts = true;
    std::uint64_t training_seed = 1000;
    long eval_slots = 1000;
    bool calibrate_threshold = false;  // replace the threshold by a static-run median
    long calibration_slots = 200;

    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    std::vector<double> altitudes{10, 20, 30, 40, 50, 60};
    std::vector<double> pmax_sweep_dbm{20, 25, 30, 35, 40};
    std::string output_dir = "results";

    /// Simulation parameters with the transmit budget converted to watts.
    SimConfig simulation() const {
        SimConfig s = sim;
        s.p_max = dbm_to_watts(p_max_dbm);
        return s;
    }

    void validate() const {
        simulation().validate();
        scene.validate();
        if (quantiles < 1) throw InvalidArgument("quantiles must be >= 1");
        if (!(discount == 0.0 || (discount > 0.0 && discount < 1.0))) throw InvalidArgument("discount must lie in [0, 1)");
        if (!(learning_rate > 0.0 && learning_rate <= 1.0)) throw InvalidArgument("learning_rate must lie in (0, 1]");
        if (!(exploration_start >= 0.0 && exploration_start <= 1.0))
            throw InvalidArgument("exploration_start must lie in [0, 1]");
        if (!(exploration_end >= 0.0 && exploration_end <= 1.0)) throw InvalidArgument("exploration_end must lie in [0, 1]");
        if (training_slots < 0) throw InvalidArgument("training_slots must be >= 0");
        if (training_episode_slots < 0) throw InvalidArgument("training_episode_slots must be >= 0");
        if (eval_slots < 0) throw InvalidArgument("eval_slots must be >= 0");
        if (calibration_slots < 1) throw InvalidArgument("calibration_slots must be >= 1");
        if (seeds.empty()) throw InvalidArgument("seeds must not be empty");
        if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
            throw InvalidArgument("seeds must be distinct");
        if (altitudes.empty()) throw InvalidArgument("altitudes must not be empty");
        for (double a : altitudes)
            if (!(a >= sim.min_altitude && a <= sim.max_altitude))
                throw InvalidArgument("altitudes must lie within [min_altitude, max_altitude]");
        if (pmax_sweep_dbm.empty()) throw InvalidArgument("pmax_sweep_dbm must not be empty");
        if (output_dir.empty()) throw InvalidArgument("output_dir must not be empty");
    }

    friend bool operator==(const ExperimentConfig& a, const ExperimentConfig& b);
};

namespace detail {

inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& key, const std::string& text) {
    double v = 0.0;
    const char* end = text.data() + text.size();
    const auto res = std::from_chars(text.data(), end, v);
    if (res.ec != std::errc() || res.ptr != end || !std::isfinite(v))
        throw InvalidArgument(key + ": expected a number, got '" + text + "'");
    return v;
}

template <class Int>
Int parse_int(const std::string& key, const std::string& text) {
    Int v{};
    const char* end = text.data() + text.size();
    const auto res = std::from_chars(text.data(), end, v);
    if (res.ec != std::errc() || res.ptr != end) throw InvalidArgument(key + ": expected an integer, got '" + text + "'");
    return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw InvalidArgument(key + ": expected true or false, got '" + text + "'");
}

inline std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(trim(item));
    if (out.size() == 1 && out[0].empty()) out.clear();
    return out;
}

struct ConfigField {
    std::string key;
    std::function<void(ExperimentConfig&, const std::string&)> parse;
    std::function<std::string(const ExperimentConfig&)> print;
};

template <class Get>
ConfigField real_field(std::string key, Get get) {
    return {key, [get, key](ExperimentConfig& c, const std::string& v) { get(c) = parse_double(key, v); },
            [get](const ExperimentConfig& c) { return format_double(get(const_cast<ExperimentConfig&>(c))); }};
}

template <class Int, class Get>
ConfigField int_field(std::string key, Get get) {
    return {key, [get, key](ExperimentConfig& c, const std::string& v) { get(c) = parse_int<Int>(key, v); },
            [get](const ExperimentConfig& c) { return std::to_string(get(const_cast<ExperimentConfig&>(c))); }};
}

template <class Get>
ConfigField bool_field(std::string key, Get get) {
    return {key, [get, key](ExperimentConfig& c, const std::string& v) { get(c) = parse_bool(key, v); },
            [get](const ExperimentConfig& c) { return std::string(get(const_cast<ExperimentConfig&>(c)) ? "true" : "false"); }};
}

inline const std::vector<ConfigField>& config_fields() {
    using C = ExperimentConfig;
    static const std::vector<ConfigField> fields = [] {
        std::vector<ConfigField> f;
        f.push_back(real_field("slot_duration", [](C& c) -> double& { return c.sim.slot_duration; }));
        f.push_back(real_field("rate_threshold", [](C& c) -> double& { return c.sim.rate_threshold; }));
        f.push_back(real_field("power_threshold", [](C& c) -> double& { return c.sim.power_threshold; }));
        f.push_back(real_field("state_gain_threshold_db", [](C& c) -> double& { return c.sim.state_gain_threshold_db; }));
        f.push_back(real_field("uav_speed", [](C& c) -> double& { return c.sim.uav_speed; }));
        f.push_back(real_field("p_hover", [](C& c) -> double& { return c.sim.p_hover; }));
        f.push_back(real_field("p_move", [](C& c) -> double& { return c.sim.p_move; }));
        f.push_back(real_field("p_reflect", [](C& c) -> double& { return c.sim.p_reflect; }));
        f.push_back(real_field("initial_energy", [](C& c) -> double& { return c.sim.initial_energy; }));
        f.push_back(int_field<int>("ue_count", [](C& c) -> int& { return c.sim.ue_count; }));
        f.push_back(real_field("bandwidth", [](C& c) -> double& { return c.sim.bandwidth; }));
        f.push_back(real_field("noise_power_dbm", [](C& c) -> double& { return c.sim.noise_power_dbm; }));
        f.push_back(real_field("p_max_dbm", [](C& c) -> double& { return c.p_max_dbm; }));
        f.push_back(real_field("min_altitude", [](C& c) -> double& { return c.sim.min_altitude; }));
        f.push_back(real_field("max_altitude", [](C& c) -> double& { return c.sim.max_altitude; }));
        f.push_back(real_field("initial_uav_x", [](C& c) -> double& { return c.sim.initial_uav_position.x(); }));
        f.push_back(real_field("initial_uav_y", [](C& c) -> double& { return c.sim.initial_uav_position.y(); }));
        f.push_back(real_field("initial_uav_z", [](C& c) -> double& { return c.sim.initial_uav_position.z(); }));
        f.push_back(real_field("static_ir_x", [](C& c) -> double& { return c.sim.static_ir_position.x(); }));
        f.push_back(real_field("static_ir_y", [](C& c) -> double& { return c.sim.static_ir_position.y(); }));
        f.push_back(real_field("static_ir_z", [](C& c) -> double& { return c.sim.static_ir_position.z(); }));
        f.push_back(int_field<int>("bs_rows", [](C& c) -> int& { return c.sim.channel.bs_array.rows; }));
        f.push_back(int_field<int>("bs_cols", [](C& c) -> int& { return c.sim.channel.bs_array.cols; }));
        f.push_back(int_field<int>("ir_rows", [](C& c) -> int& { return c.sim.channel.ir_array.rows; }));
        f.push_back(int_field<int>("ir_cols", [](C& c) -> int& { return c.sim.channel.ir_array.cols; }));
        f.push_back({"carrier_frequency",
                     [](C& c, const std::string& v) {
                         const double f = parse_double("carrier_frequency", v);
                         c.sim.channel.bs_array.carrier_frequency = f;
                         c.sim.channel.ir_array.carrier_frequency = f;
                     },
                     [](const C& c) { return format_double(c.sim.channel.bs_array.carrier_frequency); }});
        f.push_back(real_field("rician_k_db", [](C& c) -> double& { return c.sim.channel.rician_k_db; }));
        f.push_back(real_field("los_exponent", [](C& c) -> double& { return c.sim.channel.path_loss.los_exponent; }));
        f.push_back(real_field("nlos_exponent", [](C& c) -> double& { return c.sim.channel.path_loss.nlos_exponent; }));
        f.push_back(real_field("nlos_penalty_db", [](C& c) -> double& { return c.sim.channel.path_loss.nlos_penalty_db; }));
        f.push_back(real_field("ue_mean_x", [](C& c) -> double& { return c.sim.mobility.mean.x(); }));
        f.push_back(real_field("ue_mean_y", [](C& c) -> double& { return c.sim.mobility.mean.y(); }));
        f.push_back(real_field("ue_initial_variance", [](C& c) -> double& { return c.sim.mobility.initial_variance; }));
        f.push_back(real_field("ue_step_variance", [](C& c) -> double& { return c.sim.mobility.step_variance; }));
        f.push_back(real_field("arena_min_x", [](C& c) -> double& { return c.sim.mobility.arena_min.x(); }));
        f.push_back(real_field("arena_min_y", [](C& c) -> double& { return c.sim.mobility.arena_min.y(); }));
        f.push_back(real_field("arena_max_x", [](C& c) -> double& { return c.sim.mobility.arena_max.x(); }));
        f.push_back(real_field("arena_max_y", [](C& c) -> double& { return c.sim.mobility.arena_max.y(); }));
        f.push_back(real_field("bs_x", [](C& c) -> double& { return c.scene.bs_position.x(); }));
        f.push_back(real_field("bs_y", [](C& c) -> double& { return c.scene.bs_position.y(); }));
        f.push_back(real_field("bs_z", [](C& c) -> double& { return c.scene.bs_position.z(); }));
        f.push_back({"building",
                     [](C& c, const std::string& v) {
                         if (parse_bool("building", v)) {
                             if (!c.scene.building) c.scene.building = Box{};
                         } else {
                             c.scene.building.reset();
                         }
                     },
                     [](const C& c) { return std::string(c.scene.building ? "true" : "false"); }});
        // Building geometry keys only apply while the building is enabled;
        // they are ignored otherwise and print the default box.
        auto box = [](C& c) -> Box& {
            static thread_local Box scratch;
            if (c.scene.building) return *c.scene.building;
            scratch = Box{};
            return scratch;
        };
        f.push_back(real_field("building_center_x", [box](C& c) -> double& { return box(c).center.x(); }));
        f.push_back(real_field("building_center_y", [box](C& c) -> double& { return box(c).center.y(); }));
        f.push_back(real_field("building_size_x", [box](C& c) -> double& { return box(c).size_x; }));
        f.push_back(real_field("building_size_y", [box](C& c) -> double& { return box(c).size_y; }));
        f.push_back(real_field("building_height", [box](C& c) -> double& { return box(c).height; }));
        f.push_back(real_field("ue_blockage_probability", [](C& c) -> double& { return c.scene.ue_blockage_probability; }));
        f.push_back(real_field("building_penetration_loss_db",
                               [](C& c) -> double& { return c.scene.building_penetration_loss_db; }));
        f.push_back(real_field("optimizer_outer_tolerance", [](C& c) -> double& { return c.sim.optimizer.outer_tolerance; }));
        f.push_back(int_field<int>("optimizer_max_outer", [](C& c) -> int& { return c.sim.optimizer.max_outer_iterations; }));
        f.push_back(real_field("optimizer_inner_tolerance", [](C& c) -> double& { return c.sim.optimizer.inner_tolerance; }));
        f.push_back(int_field<int>("optimizer_max_inner", [](C& c) -> int& { return c.sim.optimizer.max_inner_iterations; }));
        f.push_back(int_field<int>("quantiles", [](C& c) -> int& { return c.quantiles; }));
        f.push_back(real_field("discount", [](C& c) -> double& { return c.discount; }));
        f.push_back(real_field("learning_rate", [](C& c) -> double& { return c.learning_rate; }));
        f.push_back(real_field("exploration_start", [](C& c) -> double& { return c.exploration_start; }));
        f.push_back(real_field("exploration_end", [](C& c) -> double& { return c.exploration_end; }));
        f.push_back(bool_field("sarsa_target", [](C& c) -> bool& { return c.sarsa_target; }));
        f.push_back(int_field<long>("training_slots", [](C& c) -> long& { return c.training_slots; }));
        f.push_back(int_field<long>("training_episode_slots", [](C& c) -> long& { return c.training_episode_slots; }));
        f.push_back(bool_field("random_training_starts", [](C& c) -> bool& { return c.random_training_starts; }));
        f.push_back(int_field<std::uint64_t>("training_seed", [](C& c) -> std::uint64_t& { return c.training_seed; }));
        f.push_back(int_field<long>("eval_slots", [](C& c) -> long& { return c.eval_slots; }));
        f.push_back(bool_field("calibrate_threshold", [](C& c) -> bool& { return c.calibrate_threshold; }));
        f.push_back(int_field<long>("calibration_slots", [](C& c) -> long& { return c.calibration_slots; }));
        f.push_back({"seeds",
                     [](C& c, const std::string& v) {
                         c.seeds.clear();
                         for (const auto& s : split_list(v)) c.seeds.push_back(parse_int<std::uint64_t>("seeds", s));
                     },
                     [](const C& c) {
                         std::string out;
                         for (std::size_t i = 0; i < c.seeds.size(); ++i) out += (i ? "," : "") + std::to_string(c.seeds[i]);
                         return out;
                     }});
        auto list_field = [](std::string key, std::vector<double> C::*member) {
            return ConfigField{key,
                               [key, member](C& c, const std::string& v) {
                                   (c.*member).clear();
                                   for (const auto& s : split_list(v)) (c.*member).push_back(parse_double(key, s));
                               },
                               [member](const C& c) {
                                   std::string out;
                                   const auto& xs = c.*member;
                                   for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + format_double(xs[i]);
                                   return out;
                               }};
        };
        f.push_back(list_field("altitudes", &C::altitudes));
        f.push_back(list_field("pmax_sweep_dbm", &C::pmax_sweep_dbm));
        f.push_back({"output_dir", [](C& c, const std::string& v) { c.output_dir = v; },
                     [](const C& c) { return c.output_dir; }});
        return f;
    }();
    return fields;
}

}  // namespace detail

/// Canonical key=value rendering; every field is written.
inline std::string write_config(const ExperimentConfig& cfg) {
    std::string out;
    for (const auto& f : detail::config_fields()) out += f.key + " = " + f.print(cfg) + "\n";
    return out;
}

inline bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
    return write_config(a) == write_config(b);
}

/// Parse key=value text on top of the defaults. '#' starts a comment.
inline ExperimentConfig parse_config(const std::string& text) {
    std::map<std::string, const detail::ConfigField*> by_key;
    for (const auto& f : detail::config_fields()) by_key[f.key] = &f;
    ExperimentConfig cfg;
    std::stringstream ss(text);
    std::string line;
    int line_no = 0;
    std::set<std::string> seen;
    while (std::getline(ss, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw InvalidArgument("line " + std::to_string(line_no) + ": expected key = value");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        const auto it = by_key.find(key);
        if (it == by_key.end()) throw InvalidArgument("unknown config key '" + key + "'");
        if (!seen.insert(key).second) throw InvalidArgument(key + ": given more than once");
        it->second->parse(cfg, value);
    }
    cfg.validate();
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot open config file '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

inline void save_config(const ExperimentConfig& cfg, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InvalidArgument("cannot write config file '" + path + "'");
    out << write_config(cfg);
}

/// FNV-1a over the canonical rendering, as 16 hex digits.
inline std::string config_hash(const ExperimentConfig& cfg) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : write_config(cfg)) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ---------------------------------------------------------------------------
// Agent persistence

inline constexpr int kAgentFormatVersion = 1;

inline nlohmann::json agent_to_json(const QuantileTable& table) {
    nlohmann::json j;
    j["format"] = "uavir-quantile-table";
    j["version"] = kAgentFormatVersion;
    j["K"] = table.users();
    j["Q"] = table.q_count();
    j["gamma"] = table.discount();
    j["learning_rate"] = table.learning_rate();
    nlohmann::json entries = nlohmann::json::object();
    for (const auto& [key, z] : table.entries()) {
        const StateCode s{key.first, table.users()};
        entries["e:" + s.to_string() + "|a:" + std::to_string(key.second)] = z;
    }
    j["entries"] = entries;
    return j;
}

struct AgentExpectations {
    std::optional<int> users;
    std::optional<int> q_count;
};

inline QuantileTable agent_from_json(const nlohmann::json& j, const AgentExpectations& expect = {}) {
    auto field = [&](const char* name) -> const nlohmann::json& {
        if (!j.contains(name)) throw InvalidArgument(std::string("agent file: missing field '") + name + "'");
        return j.at(name);
    };
    try {
        if (field("version").get<int>() != kAgentFormatVersion)
            throw InvalidArgument("agent file: version mismatch (expected " + std::to_string(kAgentFormatVersion) + ")");
        const int users = field("K").get<int>();
        const int q = field("Q").get<int>();
        if (expect.users && *expect.users != users)
            throw InvalidArgument("agent file: K mismatch (file " + std::to_string(users) + ", expected " +
                                  std::to_string(*expect.users) + ")");
        if (expect.q_count && *expect.q_count != q)
            throw InvalidArgument("agent file: Q mismatch (file " + std::to_string(q) + ", expected " +
                                  std::to_string(*expect.q_count) + ")");
        const double lr = j.contains("learning_rate") ? j.at("learning_rate").get<double>() : 1.0;
        QuantileTable table(users, q, field("gamma").get<double>(), lr);
        for (const auto& [key, value] : field("entries").items()) {
            const auto bar = key.find("|a:");
            if (key.rfind("e:", 0) != 0 || bar == std::string::npos)
                throw InvalidArgument("agent file: malformed entry key '" + key + "'");
            const StateCode s = StateCode::from_string(key.substr(2, bar - 2));
            if (s.users != users) throw InvalidArgument("agent file: entry '" + key + "' has the wrong K");
            const int a = detail::parse_int<int>("agent entry action", key.substr(bar + 3));
            auto z = value.get<std::vector<double>>();
            if (static_cast<int>(z.size()) != q)
                throw InvalidArgument("agent file: entry '" + key + "' has " + std::to_string(z.size()) +
                                      " supports, Q is " + std::to_string(q));
            table.set(s, ActionId{a}, std::move(z));
        }
        return table;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("agent file: ") + e.what());
    }
}

inline void persist_agent(const QuantileTable& table, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InvalidArgument("cannot write agent file '" + path + "'");
    out << agent_to_json(table).dump(1) << "\n";
}

inline QuantileTable load_agent(const std::string& path, const AgentExpectations& expect = {}) {
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot open agent file '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("agent file: ") + e.what());
    }
    return agent_from_json(j, expect);
}

struct ReturnDistribution {
    ActionId action;
    std::vector<double> supports;
    double mean = 0.0;
    bool visited = false;
};

struct ReturnReadout {
    StateCode state;
    std::vector<ReturnDistribution> actions;
    ActionId argmax;
};

inline ReturnReadout dump_return_distributions(const QuantileTable& table, StateCode state) {
    ReturnReadout out;
    out.state = state;
    for (int a = 0; a < table.actions(); ++a) {
        ReturnDistribution d;
        d.action = ActionId{a};
        d.supports = table.supports(state, d.action);
        d.mean = expected_return(table, state, d.action);
        d.visited = table.visited(state, d.action);
        out.actions.push_back(std::move(d));
    }
    out.argmax = greedy_action(table, state);
    return out;
}

inline nlohmann::json readout_to_json(const ReturnReadout& r) {
    nlohmann::json j;
    j["state"] = r.state.to_string();
    j["argmax_action"] = r.argmax.name();
    j["argmax_ordinal"] = r.argmax.ordinal;
    nlohmann::json acts = nlohmann::json::array();
    for (const auto& d : r.actions) {
        nlohmann::json a;
        a["action"] = d.action.name();
        a["ordinal"] = d.action.ordinal;
        a["visited"] = d.visited;
        a["mean"] = d.mean;
        a["supports"] = d.supports;
        acts.push_back(a);
    }
    j["actions"] = acts;
    return j;
}

// ---------------------------------------------------------------------------
// Experiments

struct MetricsRow {
    std::string policy;
    double axis = 0.0;  // altitude in m or p_max in dBm
    std::uint64_t seed = 0;
    double los_probability = 0.0;
    double avg_rate_bps = 0.0;
    double energy_used_j = 0.0;
    long slots = 0;
};

inline MetricsRow metrics_row(const EpisodeLog& log, double axis, std::uint64_t seed) {
    MetricsRow r;
    r.policy = policy_name(log.policy);
    r.axis = axis;
    r.seed = seed;
    r.los_probability = log.los_probability();
    r.avg_rate_bps = log.average_rate();
    r.energy_used_j = log.energy_drawn;
    r.slots = log.terminal_slot();
    return r;
}

/// Simulation config with a median-calibrated threshold when requested.
inline SimConfig prepared_simulation(const ExperimentConfig& cfg) {
    SimConfig sim = cfg.simulation();
    if (cfg.calibrate_threshold)
        sim.power_threshold = calibrate_power_threshold(sim, cfg.scene, mix_seed(cfg.training_seed, 7), cfg.calibration_slots);
    return sim;
}

/// Uniform start over the arena and altitude band, outside the building.
inline Vec3 random_start(const SimConfig& sim, const SceneGeometry& scene, Rng& rng) {
    std::uniform_real_distribution<double> ux(sim.mobility.arena_min.x(), sim.mobility.arena_max.x());
    std::uniform_real_distribution<double> uy(sim.mobility.arena_min.y(), sim.mobility.arena_max.y());
    std::uniform_real_distribution<double> uz(sim.min_altitude, sim.max_altitude);
    for (;;) {
        const Vec3 p(ux(rng), uy(rng), uz(rng));
        if (!scene.building || !scene.building->contains(p)) return p;
    }
}

/// Train a fresh table for training_slots slots. Each episode gets a full
/// battery and starts either at the configured initial UAV position or at a
/// uniformly drawn one; the exploration schedule runs across episodes.
inline QuantileTable train_agent(const ExperimentConfig& cfg, const SimConfig& sim) {
    QuantileTable table(sim.ue_count, cfg.quantiles, cfg.discount, cfg.learning_rate);
    Rng start_rng(mix_seed(cfg.training_seed, 11));
    long done = 0;
    for (std::uint64_t episode = 0; done < cfg.training_slots; ++episode) {
        SimConfig s = sim;
        s.max_slots = cfg.training_slots - done;
        if (cfg.training_episode_slots > 0) s.max_slots = std::min(s.max_slots, cfg.training_episode_slots);
        Policy p{PolicyKind::Drl};
        if (cfg.random_training_starts) p.start_position = random_start(sim, cfg.scene, start_rng);
        p.drl.table = &table;
        p.drl.learn = true;
        p.drl.exploration_start = cfg.exploration_start;
        p.drl.exploration_end = cfg.exploration_end;
        p.drl.exploration_decay_slots = cfg.training_slots / 2;
        p.drl.slot_offset = done;
        p.drl.sarsa_target = cfg.sarsa_target;
        const EpisodeLog log = run_episode(s, cfg.scene, p, mix_seed(cfg.training_seed, 100 + episode));
        if (log.terminal_slot() == 0) throw InvalidArgument("initial_energy does not cover a single training slot");
        done += log.terminal_slot();
    }
    return table;
}

inline EpisodeLog evaluate_policy(const ExperimentConfig& cfg, SimConfig sim, PolicyKind kind,
                                  const QuantileTable* table, std::optional<Vec3> start, std::uint64_t seed) {
    sim.max_slots = cfg.eval_slots;
    Policy p{kind};
    p.start_position = start;
    if (kind == PolicyKind::Drl) {
        if (table == nullptr) throw InvalidArgument("DRL evaluation needs a trained agent");
        p.drl.table = const_cast<QuantileTable*>(table);
        p.drl.learn = false;
    }
    return run_episode(sim, cfg.scene, p, seed);
}

/// LOS probability per (policy, altitude, seed). UAV policies start above
/// the static reflector's horizontal position at the swept altitude.
inline std::vector<MetricsRow> run_los_probability_experiment(const ExperimentConfig& cfg, const SimConfig& sim,
                                                              const QuantileTable& table) {
    std::vector<MetricsRow> rows;
    for (double alt : cfg.altitudes) {
        const Vec3 start(sim.static_ir_position.x(), sim.static_ir_position.y(), alt);
        for (std::uint64_t seed : cfg.seeds) {
            rows.push_back(metrics_row(evaluate_policy(cfg, sim, PolicyKind::Drl, &table, start, seed), alt, seed));
            rows.push_back(
                metrics_row(evaluate_policy(cfg, sim, PolicyKind::NonLearning, nullptr, start, seed), alt, seed));
        }
    }
    // The static reflector ignores the sweep; evaluate once per seed.
    for (std::uint64_t seed : cfg.seeds) {
        const EpisodeLog log = evaluate_policy(cfg, sim, PolicyKind::Static, nullptr, std::nullopt, seed);
        for (double alt : cfg.altitudes) rows.push_back(metrics_row(log, alt, seed));
    }
    return rows;
}

/// Time-average rate per (policy, p_max, seed).
inline std::vector<MetricsRow> run_rate_vs_power_experiment(const ExperimentConfig& cfg, const SimConfig& sim,
                                                            const QuantileTable& table) {
    std::vector<MetricsRow> rows;
    for (double dbm : cfg.pmax_sweep_dbm) {
        SimConfig s = sim;
        s.p_max = dbm_to_watts(dbm);
        for (std::uint64_t seed : cfg.seeds)
            for (PolicyKind k : {PolicyKind::Drl, PolicyKind::NonLearning, PolicyKind::Static, PolicyKind::Direct})
                rows.push_back(metrics_row(evaluate_policy(cfg, s, k, &table, std::nullopt, seed), dbm, seed));
    }
    return rows;
}

inline std::string rows_to_csv(const std::vector<MetricsRow>& rows, const std::string& axis_name,
                               const std::string& hash) {
    std::string out = "policy," + axis_name + ",seed,los_probability,avg_rate_bps,energy_used_j,slots,config_hash\n";
    for (const auto& r : rows) {
        out += r.policy + "," + detail::format_double(r.axis) + "," + std::to_string(r.seed) + "," +
               detail::format_double(r.los_probability) + "," + detail::format_double(r.avg_rate_bps) + "," +
               detail::format_double(r.energy_used_j) + "," + std::to_string(r.slots) + "," + hash + "\n";
    }
    return out;
}

struct AggregateRow {
    std::string policy;
    double axis = 0.0;
    double los_probability = 0.0;
    double avg_rate_bps = 0.0;
    int seeds = 0;
};

/// Seed-averaged metrics per (policy, axis), in first-seen order.
inline std::vector<AggregateRow> aggregate(const std::vector<MetricsRow>& rows) {
    std::vector<AggregateRow> out;
    for (const auto& r : rows) {
        auto it = std::find_if(out.begin(), out.end(),
                               [&](const AggregateRow& a) { return a.policy == r.policy && a.axis == r.axis; });
        if (it == out.end()) {
            out.push_back({r.policy, r.axis, 0.0, 0.0, 0});
            it = out.end() - 1;
        }
        it->los_probability += r.los_probability;
        it->avg_rate_bps += r.avg_rate_bps;
        ++it->seeds;
    }
    for (auto& a : out) {
        a.los_probability /= a.seeds;
        a.avg_rate_bps /= a.seeds;
    }
    return out;
}

inline nlohmann::json aggregate_to_json(const std::vector<AggregateRow>& rows, const std::string& axis_name) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& a : rows) {
        nlohmann::json j;
        j["policy"] = a.policy;
        j[axis_name] = a.axis;
        j["los_probability"] = a.los_probability;
        j["avg_rate_bps"] = a.avg_rate_bps;
        j["seeds"] = a.seeds;
        arr.push_back(j);
    }
    return arr;
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidArgument("cannot write '" + path + "'");
    out << text;
}

}  // namespace uavir

#endif  // UAVIR_EXPERIMENT_HPP
