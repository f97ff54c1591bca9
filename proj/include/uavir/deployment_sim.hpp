#ifndef UAVIR_DEPLOYMENT_SIM_HPP
#define UAVIR_DEPLOYMENT_SIM_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "uavir/channel_model.hpp"
#include "uavir/drl_agent.hpp"
#include "uavir/sumrate_optimizer.hpp"

// Slot-level simulation of the reflector-carrying UAV. A slot is either a
// movement slot (flying, drawing p_move, no downlink) or a communication slot
// (hovering, drawing p_hover + p_reflect, one channel draw and one
// precoder/reflection optimization).

namespace uavir {

/// Mean-reverting Gaussian walk around the UE cluster centre; its stationary
/// law is N(mean, initial_variance I) and the per-step displacement variance
/// per axis at stationarity is step_variance.
struct MobilityParams {
    Vec2 mean{20.0, 0.0};
    double initial_variance = 8.0;
    double step_variance = 0.25;
    Vec2 arena_min{0.0, -20.0};
    Vec2 arena_max{40.0, 20.0};

    double reversion() const {
        return initial_variance > 0.0 ? 1.0 - step_variance / (2.0 * initial_variance) : 1.0;
    }
};

struct SimConfig {
    double slot_duration = 0.1;     // s
    double rate_threshold = 1e6;    // bits/s per UE
    double power_threshold = 0.0;   // W; 0 derives it from state_gain_threshold_db
    double state_gain_threshold_db = -167.0;  // reflected power per watt of p_max
    double uav_speed = 10.0;        // m/s
    double p_hover = 16.0;
    double p_move = 20.0;
    double p_reflect = 0.16;
    double initial_energy = 72000.0;  // J (20 Wh)
    int ue_count = 4;
    double bandwidth = 2e6;
    double noise_power_dbm = -104.0;
    double p_max = 10.0;  // W
    double min_altitude = 5.0;
    double max_altitude = 60.0;
    Vec3 initial_uav_position{10.0, 0.0, 25.0};
    Vec3 static_ir_position{20.0, 10.0, 20.0};
    long max_slots = 0;  // 0 runs until the energy is exhausted

    ChannelConfig channel{};
    MobilityParams mobility{};
    OptimizerConfig optimizer = [] {
        OptimizerConfig c;
        c.outer_tolerance = 1e-3;
        c.max_outer_iterations = 8;
        c.inner_tolerance = 1e-3;
        c.max_inner_iterations = 4;
        return c;
    }();

    double noise_power() const { return dbm_to_watts(noise_power_dbm); }
    double max_slot_power() const { return std::max(p_move, p_hover + p_reflect); }

    /// Received-power threshold for the state bits. Unless fixed explicitly it
    /// sits a p_max-proportional margin above the noise floor, so a state bit
    /// reflects channel quality rather than the transmit budget.
    double state_threshold() const {
        if (power_threshold > 0.0) return power_threshold;
        return noise_power() + db_to_linear(state_gain_threshold_db) * p_max;
    }

    OptimizerConfig optimizer_config() const {
        OptimizerConfig c = optimizer;
        c.p_max = p_max;
        return c;
    }

    void validate() const {
        auto positive = [](double v, const char* name) {
            if (!(v > 0.0)) throw InvalidArgument(std::string(name) + " must be > 0");
        };
        positive(slot_duration, "slot_duration");
        positive(uav_speed, "uav_speed");
        positive(p_hover, "p_hover");
        positive(p_move, "p_move");
        if (!(p_reflect >= 0.0)) throw InvalidArgument("p_reflect must be >= 0");
        if (!(initial_energy >= 0.0)) throw InvalidArgument("initial_energy must be >= 0");
        positive(bandwidth, "bandwidth");
        positive(p_max, "p_max");
        if (!(rate_threshold >= 0.0)) throw InvalidArgument("rate_threshold must be >= 0");
        if (!(power_threshold >= 0.0)) throw InvalidArgument("power_threshold must be >= 0");
        if (!std::isfinite(state_gain_threshold_db)) throw InvalidArgument("state_gain_threshold_db must be finite");
        if (ue_count < 1 || ue_count > 31) throw InvalidArgument("ue_count must be in 1..31");
        positive(min_altitude, "min_altitude");
        if (!(max_altitude >= min_altitude)) throw InvalidArgument("max_altitude must be >= min_altitude");
        if (max_slots < 0) throw InvalidArgument("max_slots must be >= 0");
        if (mobility.initial_variance < 0.0 || mobility.step_variance < 0.0)
            throw InvalidArgument("mobility variances must be >= 0");
        if (mobility.step_variance > 4.0 * mobility.initial_variance && mobility.initial_variance > 0.0)
            throw InvalidArgument("mobility step_variance too large for the stationary variance");
        channel.validate();
        optimizer_config().validate();
    }
};

struct UavState {
    Vec3 position = Vec3::Zero();
    double speed = 0.0;
    double energy = 0.0;
    std::optional<Vec3> move_target;
    int movement_slots_left = 0;
};

/// Hovering draws p_hover + p_reflect, flying draws p_move.
inline double power_cost(double speed, const SimConfig& cfg) {
    if (speed < 0.0) throw InvalidArgument("speed must be >= 0");
    return speed == 0.0 ? cfg.p_hover + cfg.p_reflect : cfg.p_move;
}

/// Data delivered in the slot; nothing is delivered while flying.
inline double slot_reward(double rate, double speed, double slot_duration) {
    if (rate < 0.0) throw InvalidArgument("rate must be >= 0");
    return speed == 0.0 ? rate * slot_duration : 0.0;
}

/// Average per-UE rate strictly below the threshold.
inline bool blockage_triggered(double rate, const SimConfig& cfg) {
    return rate < cfg.ue_count * cfg.rate_threshold;
}

struct UePopulation {
    std::vector<Vec2> positions;
    Rng rng;

    std::vector<Vec3> positions3() const {
        std::vector<Vec3> out;
        out.reserve(positions.size());
        for (const Vec2& p : positions) out.emplace_back(p.x(), p.y(), 0.0);
        return out;
    }
};

namespace detail {

inline double reflect_into(double v, double lo, double hi) {
    if (hi <= lo) return lo;
    for (int i = 0; i < 8 && (v < lo || v > hi); ++i) {
        if (v < lo) v = 2.0 * lo - v;
        if (v > hi) v = 2.0 * hi - v;
    }
    return std::clamp(v, lo, hi);
}

inline bool inside_footprint(const Vec2& p, const SceneGeometry& scene) {
    if (!scene.building) return false;
    const Box& b = *scene.building;
    return std::abs(p.x() - b.center.x()) <= 0.5 * b.size_x && std::abs(p.y() - b.center.y()) <= 0.5 * b.size_y;
}

}  // namespace detail

inline UePopulation make_population(const SimConfig& cfg, const SceneGeometry& scene, std::uint64_t seed) {
    UePopulation pop;
    pop.rng.seed(seed);
    std::normal_distribution<double> n(0.0, std::sqrt(cfg.mobility.initial_variance));
    for (int k = 0; k < cfg.ue_count; ++k) {
        Vec2 p;
        for (int attempt = 0; attempt < 100; ++attempt) {
            const double dx = n(pop.rng);
            const double dy = n(pop.rng);
            p = cfg.mobility.mean + Vec2(dx, dy);
            p.x() = detail::reflect_into(p.x(), cfg.mobility.arena_min.x(), cfg.mobility.arena_max.x());
            p.y() = detail::reflect_into(p.y(), cfg.mobility.arena_min.y(), cfg.mobility.arena_max.y());
            if (!detail::inside_footprint(p, scene)) break;
        }
        pop.positions.push_back(p);
    }
    return pop;
}

/// One Markov step for every UE. Steps that would land inside the building
/// footprint are rejected and the UE stays put; heights are always zero.
inline UePopulation step_ue_mobility(UePopulation pop, const MobilityParams& params,
                                     const SceneGeometry& scene) {
    const double a = params.reversion();
    const double sd = std::sqrt(std::max(params.initial_variance * (1.0 - a * a), 0.0));
    std::normal_distribution<double> n(0.0, 1.0);
    for (Vec2& p : pop.positions) {
        const double ex = n(pop.rng);
        const double ey = n(pop.rng);
        if (sd == 0.0) continue;
        Vec2 next = params.mean + a * (p - params.mean) + sd * Vec2(ex, ey);
        next.x() = detail::reflect_into(next.x(), params.arena_min.x(), params.arena_max.x());
        next.y() = detail::reflect_into(next.y(), params.arena_min.y(), params.arena_max.y());
        if (!detail::inside_footprint(next, scene)) p = next;
    }
    return pop;
}

struct ActionOutcome {
    UavState uav;
    bool clamped = false;
};

/// Start the 1 m displacement of an action. Altitude is clamped to the
/// configured band and targets inside the building are refused; both cases
/// are flagged. A zero displacement completes at once and the UAV keeps
/// hovering.
inline ActionOutcome apply_action(const UavState& uav, ActionId action, std::span<const Vec3> ue_positions,
                                  const SimConfig& cfg, const SceneGeometry& scene) {
    ActionOutcome out{uav, false};
    Vec3 target = uav.position;
    switch (action.kind()) {
        case ActionId::Kind::Ascend: target.z() += 1.0; break;
        case ActionId::Kind::Descend: target.z() -= 1.0; break;
        case ActionId::Kind::MoveTowardUe: {
            const int k = action.target_ue();
            if (k < 0 || k >= static_cast<int>(ue_positions.size())) throw InvalidArgument("action targets an unknown UE");
            Vec2 dir = ue_positions[static_cast<std::size_t>(k)].head<2>() - uav.position.head<2>();
            const double dist = dir.norm();
            if (dist > 1e-9) {
                const double step = std::min(1.0, dist);
                target.head<2>() += dir / dist * step;
            }
            break;
        }
    }
    if (target.z() < cfg.min_altitude) {
        target.z() = cfg.min_altitude;
        out.clamped = true;
    }
    if (target.z() > cfg.max_altitude) {
        target.z() = cfg.max_altitude;
        out.clamped = true;
    }
    if (scene.building && scene.building->contains(target)) {
        target = uav.position;
        out.clamped = true;
    }
    const double dist = (target - uav.position).norm();
    if (dist <= 1e-12) {
        out.uav.move_target.reset();
        out.uav.movement_slots_left = 0;
        out.uav.speed = 0.0;
        return out;
    }
    out.uav.move_target = target;
    out.uav.movement_slots_left =
        std::max(1, static_cast<int>(std::ceil(dist / (cfg.uav_speed * cfg.slot_duration) - 1e-9)));
    return out;
}

enum class PolicyKind { Drl, Static, NonLearning, Direct };

inline std::string policy_name(PolicyKind k) {
    switch (k) {
        case PolicyKind::Drl: return "drl";
        case PolicyKind::Static: return "static";
        case PolicyKind::NonLearning: return "nonlearning";
        case PolicyKind::Direct: return "direct";
    }
    return "unknown";
}

struct DrlOptions {
    QuantileTable* table = nullptr;
    bool learn = false;
    double exploration_start = 0.3;
    double exploration_end = 0.02;
    long exploration_decay_slots = 25000;
    long slot_offset = 0;  // position of slot 0 in the exploration schedule
    bool sarsa_target = false;

    double exploration(long global_slot) const {
        if (!learn) return 0.0;
        if (exploration_decay_slots <= 0) return exploration_end;
        const double f = std::min(1.0, static_cast<double>(global_slot) / static_cast<double>(exploration_decay_slots));
        return exploration_start + (exploration_end - exploration_start) * f;
    }
};

struct Policy {
    PolicyKind kind = PolicyKind::Static;
    DrlOptions drl{};
    // Overrides the UAV start position for the Drl and NonLearning policies.
    std::optional<Vec3> start_position;
};

struct SlotRecord {
    long slot = 0;
    UavState uav;  // position at the end of the slot, speed during it, energy after it
    bool hovering = true;
    std::optional<StateCode> state;
    std::optional<ActionId> action;
    double rate = 0.0;    // bits/s
    double reward = 0.0;  // bits
    std::vector<bool> los_flags;
    std::vector<double> received_powers;
    double energy_spent = 0.0;
    bool clamped = false;
};

struct EpisodeLog {
    PolicyKind policy = PolicyKind::Static;
    std::vector<SlotRecord> slots;
    double initial_energy = 0.0;
    double energy_drawn = 0.0;  // accumulated slot by slot, in slot order

    long terminal_slot() const { return static_cast<long>(slots.size()); }
    double residual_energy() const { return initial_energy - energy_drawn; }

    long hovering_slots() const {
        return std::count_if(slots.begin(), slots.end(), [](const SlotRecord& r) { return r.hovering; });
    }

    /// Fraction of hovering UE-slots whose link was LOS.
    double los_probability() const {
        long total = 0, los = 0;
        for (const auto& r : slots) {
            if (!r.hovering) continue;
            for (bool f : r.los_flags) {
                ++total;
                los += f ? 1 : 0;
            }
        }
        return total == 0 ? 0.0 : static_cast<double>(los) / static_cast<double>(total);
    }

    /// Sum-rate averaged over hovering slots.
    double average_rate() const {
        double acc = 0.0;
        long n = 0;
        for (const auto& r : slots) {
            if (!r.hovering) continue;
            acc += r.rate;
            ++n;
        }
        return n == 0 ? 0.0 : acc / static_cast<double>(n);
    }

    double total_reward() const {
        double acc = 0.0;
        for (const auto& r : slots) acc += r.reward;
        return acc;
    }
};

/// Expected received power per UE: sum_i |theta D_k w_i|^2 + sigma^2.
inline std::vector<double> received_powers(const BeamformingSolution& sol, const EffectiveCsi& csi) {
    std::vector<double> out(csi.users());
    for (int k = 0; k < csi.users(); ++k)
        out[k] = stream_gains(sol.W, sol.theta, csi.D[k]).squaredNorm() + csi.noise_power;
    return out;
}

namespace detail {

inline constexpr std::uint64_t kMobilityStream = 1;
inline constexpr std::uint64_t kChannelStream = 2;
inline constexpr std::uint64_t kPolicyStream = 3;

struct PendingDecision {
    StateCode state;
    ActionId action;
};

}  // namespace detail

/// Run one episode until the UAV cannot afford its next slot (or max_slots).
inline EpisodeLog run_episode(const SimConfig& cfg, const SceneGeometry& scene, const Policy& policy,
                              std::uint64_t seed) {
    cfg.validate();
    scene.validate();
    if (policy.kind == PolicyKind::Drl) {
        if (policy.drl.table == nullptr) throw InvalidArgument("DRL policy needs a quantile table");
        if (policy.drl.table->users() != cfg.ue_count) throw InvalidArgument("quantile table K differs from ue_count");
    }

    UePopulation ues = make_population(cfg, scene, mix_seed(seed, detail::kMobilityStream));
    Rng channel_rng(mix_seed(seed, detail::kChannelStream));
    Rng policy_rng(mix_seed(seed, detail::kPolicyStream));
    const OptimizerConfig opt = cfg.optimizer_config();
    const double noise = cfg.noise_power();
    const bool moves = policy.kind == PolicyKind::Drl || policy.kind == PolicyKind::NonLearning;

    UavState uav;
    uav.energy = cfg.initial_energy;
    if (policy.kind == PolicyKind::Static || policy.kind == PolicyKind::Direct)
        uav.position = cfg.static_ir_position;
    else
        uav.position = policy.start_position.value_or(cfg.initial_uav_position);

    EpisodeLog log;
    log.policy = policy.kind;
    log.initial_energy = cfg.initial_energy;
    std::optional<detail::PendingDecision> pending;

    for (long t = 0; cfg.max_slots == 0 || t < cfg.max_slots; ++t) {
        const bool moving = uav.movement_slots_left > 0;
        const double power = moving ? cfg.p_move : cfg.p_hover + cfg.p_reflect;
        const double spend = power * cfg.slot_duration;
        if (log.initial_energy - log.energy_drawn < spend) break;

        SlotRecord rec;
        rec.slot = t;
        if (moving) {
            const Vec3 step = (*uav.move_target - uav.position) / static_cast<double>(uav.movement_slots_left);
            uav.position += step;
            uav.speed = step.norm() / cfg.slot_duration;
            if (--uav.movement_slots_left == 0) {
                uav.position = *uav.move_target;
                uav.move_target.reset();
            }
            rec.hovering = false;
        } else {
            uav.speed = 0.0;
            const std::vector<Vec3> ue3 = ues.positions3();
            EffectiveCsi csi;
            CRowVector theta0;
            if (policy.kind == PolicyKind::Direct) {
                const DirectRealization d = sample_direct_channels(scene, cfg.channel, ue3, channel_rng);
                csi = direct_csi(d, noise, cfg.bandwidth);
                rec.los_flags = d.los_flags;
            } else {
                const ChannelRealization r = sample_channels(scene, cfg.channel, uav.position, ue3, channel_rng);
                csi = effective_csi(r, noise, cfg.bandwidth);
                rec.los_flags = r.los_flags;
            }
            OptimizerConfig slot_opt = opt;
            slot_opt.fixed_reflection = policy.kind == PolicyKind::Direct;
            auto [W0, th0] = initial_point(csi, slot_opt.p_max);
            const BeamformingSolution sol = optimize(csi, slot_opt, std::move(W0), std::move(th0));
            rec.rate = sol.sum_rate;
            rec.reward = slot_reward(sol.sum_rate, 0.0, cfg.slot_duration);
            rec.received_powers = received_powers(sol, csi);
            const StateCode state = encode_state(rec.received_powers, cfg.state_threshold());
            rec.state = state;

            const bool trigger = moves && blockage_triggered(sol.sum_rate, cfg);
            std::optional<ActionId> chosen;
            if (trigger && policy.kind == PolicyKind::Drl) {
                const double eps = policy.drl.exploration(policy.drl.slot_offset + t);
                chosen = select_action(*policy.drl.table, state, eps, policy_rng);
            } else if (trigger && policy.kind == PolicyKind::NonLearning) {
                std::vector<int> blocked;
                for (int k = 0; k < cfg.ue_count; ++k)
                    if (!rec.los_flags[static_cast<std::size_t>(k)]) blocked.push_back(k);
                if (blocked.empty())
                    for (int k = 0; k < cfg.ue_count; ++k) blocked.push_back(k);
                std::uniform_int_distribution<std::size_t> pick(0, blocked.size() - 1);
                chosen = ActionId::toward(blocked[pick(policy_rng)]);
            }

            if (policy.kind == PolicyKind::Drl && policy.drl.learn && pending) {
                TransitionSample sample;
                sample.state = pending->state;
                sample.action = pending->action;
                sample.reward = rec.reward;
                sample.next_state = state;
                sample.next_action = (policy.drl.sarsa_target && chosen) ? *chosen : greedy_action(*policy.drl.table, state);
                update(*policy.drl.table, sample);
            }
            pending.reset();

            if (chosen) {
                rec.action = chosen;
                const ActionOutcome out = apply_action(uav, *chosen, ue3, cfg, scene);
                uav = out.uav;
                rec.clamped = out.clamped;
                if (policy.kind == PolicyKind::Drl) pending = detail::PendingDecision{state, *chosen};
            }
        }

        log.energy_drawn += spend;
        rec.energy_spent = spend;
        uav.energy = log.initial_energy - log.energy_drawn;
        rec.uav = uav;
        rec.uav.speed = rec.hovering ? 0.0 : rec.uav.speed;
        log.slots.push_back(std::move(rec));
        ues = step_ue_mobility(std::move(ues), cfg.mobility, scene);
    }
    return log;
}

inline EpisodeLog baseline_direct(const SimConfig& cfg, const SceneGeometry& scene, std::uint64_t seed) {
    return run_episode(cfg, scene, Policy{PolicyKind::Direct}, seed);
}

inline EpisodeLog baseline_static_ir(const SimConfig& cfg, const SceneGeometry& scene, std::uint64_t seed) {
    return run_episode(cfg, scene, Policy{PolicyKind::Static}, seed);
}

inline EpisodeLog baseline_nonlearning(const SimConfig& cfg, const SceneGeometry& scene, std::uint64_t seed) {
    return run_episode(cfg, scene, Policy{PolicyKind::NonLearning}, seed);
}

/// Median per-UE received power over a short static-reflector run.
inline double calibrate_power_threshold(SimConfig cfg, const SceneGeometry& scene, std::uint64_t seed,
                                        long slots = 200) {
    cfg.max_slots = slots;
    cfg.power_threshold = 0.0;
    cfg.initial_energy = std::max(cfg.initial_energy, cfg.max_slot_power() * cfg.slot_duration * (slots + 1));
    const EpisodeLog log = baseline_static_ir(cfg, scene, seed);
    std::vector<double> powers;
    for (const auto& r : log.slots) powers.insert(powers.end(), r.received_powers.begin(), r.received_powers.end());
    if (powers.empty()) throw NumericalError("calibration produced no received-power samples");
    std::nth_element(powers.begin(), powers.begin() + static_cast<long>(powers.size() / 2), powers.end());
    return powers[powers.size() / 2];
}

}  // namespace uavir

#endif  // UAVIR_DEPLOYMENT_SIM_HPP
