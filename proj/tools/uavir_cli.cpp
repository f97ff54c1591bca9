#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "uavir/experiment.hpp"

namespace fs = std::filesystem;
using namespace uavir;

namespace {

struct CommonArgs {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string agent_path;
};

ExperimentConfig resolve_config(const CommonArgs& args) {
    ExperimentConfig cfg = args.config_path.empty() ? ExperimentConfig{} : load_config(args.config_path);
    if (args.seed) cfg.training_seed = *args.seed;
    if (!args.out.empty()) cfg.output_dir = args.out;
    cfg.validate();
    fs::create_directories(cfg.output_dir);
    return cfg;
}

std::string out_path(const ExperimentConfig& cfg, const std::string& name) {
    return (fs::path(cfg.output_dir) / name).string();
}

QuantileTable obtain_agent(const ExperimentConfig& cfg, const SimConfig& sim, const std::string& agent_path) {
    if (!agent_path.empty())
        return load_agent(agent_path, AgentExpectations{sim.ue_count, cfg.quantiles});
    std::cerr << "training agent for " << cfg.training_slots << " slots\n";
    QuantileTable table = train_agent(cfg, sim);
    persist_agent(table, out_path(cfg, "agent.json"));
    return table;
}

nlohmann::json config_echo(const ExperimentConfig& cfg, const SimConfig& sim) {
    nlohmann::json j;
    j["config"] = write_config(cfg);
    j["config_hash"] = config_hash(cfg);
    j["power_threshold_w"] = sim.state_threshold();
    return j;
}

void run_los(const ExperimentConfig& cfg, const SimConfig& sim, const QuantileTable& table, nlohmann::json& summary) {
    const auto rows = run_los_probability_experiment(cfg, sim, table);
    write_text(out_path(cfg, "los_probability.csv"), rows_to_csv(rows, "altitude_m", config_hash(cfg)));
    summary["los_probability"] = aggregate_to_json(aggregate(rows), "altitude_m");
    for (const auto& a : aggregate(rows))
        std::cout << "los " << a.policy << " altitude=" << a.axis << " p=" << a.los_probability << "\n";
}

void run_rate(const ExperimentConfig& cfg, const SimConfig& sim, const QuantileTable& table, nlohmann::json& summary) {
    const auto rows = run_rate_vs_power_experiment(cfg, sim, table);
    write_text(out_path(cfg, "rate_vs_power.csv"), rows_to_csv(rows, "pmax_dbm", config_hash(cfg)));
    summary["rate_vs_power"] = aggregate_to_json(aggregate(rows), "pmax_dbm");
    for (const auto& a : aggregate(rows))
        std::cout << "rate " << a.policy << " pmax_dbm=" << a.axis << " bps=" << a.avg_rate_bps << "\n";
}

nlohmann::json run_dump(const QuantileTable& table, const std::string& state_text) {
    const StateCode state = state_text.empty() ? StateCode::zero(table.users()) : StateCode::from_string(state_text);
    if (state.users != table.users()) throw InvalidArgument("state bitstring length must equal K");
    const ReturnReadout r = dump_return_distributions(table, state);
    for (const auto& d : r.actions)
        std::cout << "returns " << d.action.name() << " mean=" << d.mean << (d.visited ? "" : " unvisited") << "\n";
    std::cout << "argmax " << r.argmax.name() << "\n";
    return readout_to_json(r);
}

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "key=value config file (defaults when omitted)");
    cmd->add_option("--seed", args.seed, "training and calibration seed");
    cmd->add_option("--out", args.out, "output directory");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"UAV-mounted reflector deployment experiments"};
    app.require_subcommand(1);

    CommonArgs args;
    std::string state_text;

    auto* train = app.add_subcommand("train", "train the distributional agent and write agent.json");
    add_common(train, args);

    auto* eval_los = app.add_subcommand("eval-los", "LOS probability versus altitude");
    add_common(eval_los, args);
    eval_los->add_option("--agent", args.agent_path, "trained agent file (trains one when omitted)");

    auto* eval_rate = app.add_subcommand("eval-rate", "average rate versus transmit power");
    add_common(eval_rate, args);
    eval_rate->add_option("--agent", args.agent_path, "trained agent file (trains one when omitted)");

    auto* dump = app.add_subcommand("dump-returns", "per-action return distributions at one state");
    add_common(dump, args);
    dump->add_option("--agent", args.agent_path, "trained agent file")->required();
    dump->add_option("--state", state_text, "state bitstring, UE 1 first (all zeros when omitted)");

    auto* all = app.add_subcommand("run-all", "train, run both sweeps and dump the all-zero state");
    add_common(all, args);

    CLI11_PARSE(app, argc, argv);

    try {
        const ExperimentConfig cfg = resolve_config(args);
        if (*dump) {
            const QuantileTable table = load_agent(args.agent_path, AgentExpectations{cfg.sim.ue_count, cfg.quantiles});
            write_text(out_path(cfg, "return_distributions.json"), run_dump(table, state_text).dump(2) + "\n");
            return 0;
        }

        const SimConfig sim = prepared_simulation(cfg);
        nlohmann::json summary = config_echo(cfg, sim);
        if (*train) {
            const QuantileTable table = train_agent(cfg, sim);
            persist_agent(table, out_path(cfg, "agent.json"));
            summary["agent_entries"] = table.entries().size();
            write_text(out_path(cfg, "train_summary.json"), summary.dump(2) + "\n");
        } else if (*eval_los) {
            run_los(cfg, sim, obtain_agent(cfg, sim, args.agent_path), summary);
            write_text(out_path(cfg, "los_summary.json"), summary.dump(2) + "\n");
        } else if (*eval_rate) {
            run_rate(cfg, sim, obtain_agent(cfg, sim, args.agent_path), summary);
            write_text(out_path(cfg, "rate_summary.json"), summary.dump(2) + "\n");
        } else if (*all) {
            const QuantileTable table = obtain_agent(cfg, sim, "");
            run_los(cfg, sim, table, summary);
            run_rate(cfg, sim, table, summary);
            summary["returns_all_zero_state"] = run_dump(table, "");
            write_text(out_path(cfg, "return_distributions.json"), summary["returns_all_zero_state"].dump(2) + "\n");
            write_text(out_path(cfg, "summary.json"), summary.dump(2) + "\n");
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
