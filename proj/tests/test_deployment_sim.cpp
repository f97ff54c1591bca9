#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "uavir/deployment_sim.hpp"

using namespace uavir;

namespace {

SimConfig short_config(long slots) {
    SimConfig cfg;
    cfg.max_slots = slots;
    return cfg;
}

SceneGeometry open_scene() {
    SceneGeometry s;
    s.building.reset();
    return s;
}

}  // namespace

TEST(SlotCost, HoverAndMovePower) {
    const SimConfig cfg;
    EXPECT_DOUBLE_EQ(power_cost(0.0, cfg), 16.16);
    EXPECT_DOUBLE_EQ(power_cost(10.0, cfg), 20.0);
    EXPECT_THROW(power_cost(-1.0, cfg), InvalidArgument);
}

TEST(SlotCost, RewardOnlyWhileHovering) {
    EXPECT_DOUBLE_EQ(slot_reward(2e6, 0.0, 0.1), 2e5);
    EXPECT_DOUBLE_EQ(slot_reward(2e6, 10.0, 0.1), 0.0);
    EXPECT_THROW(slot_reward(-1.0, 0.0, 0.1), InvalidArgument);
}

TEST(BlockageTrigger, StrictlyBelowThreshold) {
    const SimConfig cfg;  // K = 4, 1 Mbit/s per UE
    EXPECT_FALSE(blockage_triggered(4e6, cfg));
    EXPECT_TRUE(blockage_triggered(std::nextafter(4e6, 0.0), cfg));
    EXPECT_TRUE(blockage_triggered(0.0, cfg));
}

TEST(StateThreshold, ScalesWithTransmitBudget) {
    SimConfig cfg;
    const double margin = db_to_linear(cfg.state_gain_threshold_db);
    EXPECT_NEAR(cfg.state_threshold(), cfg.noise_power() + margin * 10.0, 1e-30);
    cfg.p_max = 0.1;
    EXPECT_NEAR(cfg.state_threshold(), cfg.noise_power() + margin * 0.1, 1e-30);
    cfg.power_threshold = 5e-13;
    EXPECT_DOUBLE_EQ(cfg.state_threshold(), 5e-13);
}

TEST(SimConfigValidation, NamesTheOffendingField) {
    SimConfig cfg;
    cfg.slot_duration = 0.0;
    try {
        cfg.validate();
        FAIL() << "expected an error";
    } catch (const InvalidArgument& e) {
        EXPECT_NE(std::string(e.what()).find("slot_duration"), std::string::npos);
    }
    SimConfig bad_alt;
    bad_alt.max_altitude = 1.0;
    EXPECT_THROW(bad_alt.validate(), InvalidArgument);
}

TEST(Mobility, StationaryMomentsAreKept) {
    MobilityParams params;
    params.arena_min = Vec2(-1e6, -1e6);
    params.arena_max = Vec2(1e6, 1e6);
    const SceneGeometry scene = open_scene();
    UePopulation pop;
    pop.rng.seed(11);
    std::normal_distribution<double> n(0.0, std::sqrt(params.initial_variance));
    for (int i = 0; i < 10000; ++i) pop.positions.push_back(params.mean + Vec2(n(pop.rng), n(pop.rng)));
    for (int step = 0; step < 100; ++step) pop = step_ue_mobility(std::move(pop), params, scene);

    double mx = 0, my = 0;
    for (const Vec2& p : pop.positions) {
        mx += p.x();
        my += p.y();
    }
    mx /= pop.positions.size();
    my /= pop.positions.size();
    double vx = 0, vy = 0;
    for (const Vec2& p : pop.positions) {
        vx += (p.x() - mx) * (p.x() - mx);
        vy += (p.y() - my) * (p.y() - my);
    }
    vx /= pop.positions.size() - 1;
    vy /= pop.positions.size() - 1;
    EXPECT_NEAR(mx, params.mean.x(), 0.1);
    EXPECT_NEAR(my, params.mean.y(), 0.1);
    EXPECT_NEAR(vx / params.initial_variance, 1.0, 0.05);
    EXPECT_NEAR(vy / params.initial_variance, 1.0, 0.05);
}

TEST(Mobility, StepVarianceMatches) {
    MobilityParams params;
    params.arena_min = Vec2(-1e6, -1e6);
    params.arena_max = Vec2(1e6, 1e6);
    UePopulation pop;
    pop.rng.seed(12);
    pop.positions.assign(10000, params.mean);
    const UePopulation next = step_ue_mobility(pop, params, open_scene());
    double v = 0;
    for (const Vec2& p : next.positions) v += (p - params.mean).squaredNorm();
    v /= 2.0 * next.positions.size();
    const double a = params.reversion();
    EXPECT_NEAR(v / (params.initial_variance * (1 - a * a)), 1.0, 0.05);
}

TEST(Mobility, ZeroVarianceFreezesUes) {
    MobilityParams params;
    params.initial_variance = 0.0;
    params.step_variance = 0.0;
    SimConfig cfg;
    cfg.mobility = params;
    UePopulation pop = make_population(cfg, open_scene(), 3);
    for (const Vec2& p : pop.positions) EXPECT_EQ(p, params.mean);
    const auto before = pop.positions;
    for (int i = 0; i < 5; ++i) pop = step_ue_mobility(std::move(pop), params, open_scene());
    EXPECT_EQ(pop.positions, before);
}

TEST(Mobility, UesStayInArenaAndOutsideBuilding) {
    SimConfig cfg;
    cfg.mobility.mean = Vec2(12.0, 0.0);  // centred near the building
    cfg.mobility.initial_variance = 40.0;
    cfg.mobility.step_variance = 10.0;
    const SceneGeometry scene;
    UePopulation pop = make_population(cfg, scene, 5);
    for (int step = 0; step < 500; ++step) {
        for (const Vec2& p : pop.positions) {
            EXPECT_FALSE(detail::inside_footprint(p, scene));
            EXPECT_GE(p.x(), cfg.mobility.arena_min.x());
            EXPECT_LE(p.x(), cfg.mobility.arena_max.x());
            EXPECT_GE(p.y(), cfg.mobility.arena_min.y());
            EXPECT_LE(p.y(), cfg.mobility.arena_max.y());
        }
        pop = step_ue_mobility(std::move(pop), cfg.mobility, scene);
    }
}

TEST(ApplyAction, AscendTakesOneSlotAtDefaultSpeed) {
    const SimConfig cfg;
    UavState uav;
    uav.position = Vec3(10, 0, 25);
    const auto out = apply_action(uav, ActionId::ascend(), {}, cfg, SceneGeometry{});
    ASSERT_TRUE(out.uav.move_target.has_value());
    EXPECT_TRUE(out.uav.move_target->isApprox(Vec3(10, 0, 26)));
    EXPECT_EQ(out.uav.movement_slots_left, 1);
    EXPECT_FALSE(out.clamped);
}

TEST(ApplyAction, SlowUavNeedsSeveralSlots) {
    SimConfig cfg;
    cfg.uav_speed = 2.0;
    UavState uav;
    uav.position = Vec3(30, 5, 25);
    const auto out = apply_action(uav, ActionId::descend(), {}, cfg, SceneGeometry{});
    EXPECT_EQ(out.uav.movement_slots_left, 5);
}

TEST(ApplyAction, AltitudeIsClamped) {
    const SimConfig cfg;
    UavState uav;
    uav.position = Vec3(30, 0, cfg.min_altitude);
    const auto down = apply_action(uav, ActionId::descend(), {}, cfg, SceneGeometry{});
    EXPECT_TRUE(down.clamped);
    EXPECT_FALSE(down.uav.move_target.has_value());
    uav.position.z() = cfg.max_altitude - 0.5;
    const auto up = apply_action(uav, ActionId::ascend(), {}, cfg, SceneGeometry{});
    EXPECT_TRUE(up.clamped);
    ASSERT_TRUE(up.uav.move_target.has_value());
    EXPECT_DOUBLE_EQ(up.uav.move_target->z(), cfg.max_altitude);
}

TEST(ApplyAction, MovesOneMetreTowardTheUe) {
    const SimConfig cfg;
    UavState uav;
    uav.position = Vec3(20, 10, 20);
    const std::vector<Vec3> ues{Vec3(23, 14, 0), Vec3(20, 10, 0), Vec3(20.3, 10, 0)};
    const auto a = apply_action(uav, ActionId::toward(0), ues, cfg, SceneGeometry{});
    ASSERT_TRUE(a.uav.move_target.has_value());
    EXPECT_TRUE(a.uav.move_target->isApprox(Vec3(20.6, 10.8, 20)));
    // Directly overhead: nothing to do, the UAV keeps hovering.
    const auto b = apply_action(uav, ActionId::toward(1), ues, cfg, SceneGeometry{});
    EXPECT_FALSE(b.uav.move_target.has_value());
    EXPECT_FALSE(b.clamped);
    // Closer than one metre: stop above the UE.
    const auto c = apply_action(uav, ActionId::toward(2), ues, cfg, SceneGeometry{});
    ASSERT_TRUE(c.uav.move_target.has_value());
    EXPECT_TRUE(c.uav.move_target->isApprox(Vec3(20.3, 10, 20)));
    EXPECT_THROW(apply_action(uav, ActionId::toward(3), ues, cfg, SceneGeometry{}), InvalidArgument);
}

TEST(ApplyAction, RefusesToEnterTheBuilding) {
    const SimConfig cfg;
    UavState uav;
    uav.position = Vec3(7.5, 0, 10);
    const std::vector<Vec3> ues{Vec3(20, 0, 0)};
    const auto out = apply_action(uav, ActionId::toward(0), ues, cfg, SceneGeometry{});
    EXPECT_TRUE(out.clamped);
    EXPECT_FALSE(out.uav.move_target.has_value());
}

TEST(Episode, NoEnergyMeansNoSlots) {
    SimConfig cfg;
    cfg.initial_energy = 0.0;
    EXPECT_EQ(baseline_static_ir(cfg, SceneGeometry{}, 1).terminal_slot(), 0);
    cfg.initial_energy = 1.0;  // less than one hovering slot
    EXPECT_EQ(baseline_static_ir(cfg, SceneGeometry{}, 1).terminal_slot(), 0);
}

TEST(Episode, RunsAreDeterministic) {
    const SimConfig cfg = short_config(40);
    const EpisodeLog a = baseline_nonlearning(cfg, SceneGeometry{}, 9);
    const EpisodeLog b = baseline_nonlearning(cfg, SceneGeometry{}, 9);
    ASSERT_EQ(a.terminal_slot(), b.terminal_slot());
    for (std::size_t i = 0; i < a.slots.size(); ++i) {
        EXPECT_EQ(a.slots[i].rate, b.slots[i].rate);
        EXPECT_EQ(a.slots[i].uav.position, b.slots[i].uav.position);
        EXPECT_EQ(a.slots[i].los_flags, b.slots[i].los_flags);
    }
}

TEST(Episode, EnergyAccountingIsExact) {
    SimConfig cfg;
    cfg.initial_energy = 40.0;  // about 24 slots
    cfg.rate_threshold = 1e9;   // always triggered, so the UAV keeps moving
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const EpisodeLog log = baseline_nonlearning(cfg, SceneGeometry{}, seed);
        double drawn = 0.0;
        bool moved = false;
        for (const auto& r : log.slots) {
            drawn += power_cost(r.uav.speed, cfg) * cfg.slot_duration;
            moved = moved || !r.hovering;
        }
        EXPECT_TRUE(moved);
        EXPECT_EQ(drawn, log.energy_drawn);
        EXPECT_GE(log.residual_energy(), 0.0);
        EXPECT_LT(log.residual_energy(), cfg.max_slot_power() * cfg.slot_duration);
        EXPECT_EQ(log.slots.back().uav.energy, log.residual_energy());
    }
}

TEST(Episode, MovementSlotsDeliverNothing) {
    SimConfig cfg = short_config(30);
    cfg.rate_threshold = 1e9;
    const EpisodeLog log = baseline_nonlearning(cfg, SceneGeometry{}, 2);
    for (const auto& r : log.slots) {
        if (r.hovering) continue;
        EXPECT_EQ(r.rate, 0.0);
        EXPECT_EQ(r.reward, 0.0);
        EXPECT_GT(r.uav.speed, 0.0);
    }
}

TEST(Episode, UntriggeredUavMatchesStaticReflector) {
    SimConfig cfg = short_config(25);
    cfg.rate_threshold = 0.0;  // never triggered
    Policy p{PolicyKind::NonLearning};
    p.start_position = cfg.static_ir_position;
    const EpisodeLog uav = run_episode(cfg, SceneGeometry{}, p, 4);
    const EpisodeLog fixed = baseline_static_ir(cfg, SceneGeometry{}, 4);
    ASSERT_EQ(uav.terminal_slot(), fixed.terminal_slot());
    for (std::size_t i = 0; i < uav.slots.size(); ++i) {
        EXPECT_EQ(uav.slots[i].rate, fixed.slots[i].rate);
        EXPECT_EQ(uav.slots[i].los_flags, fixed.slots[i].los_flags);
        EXPECT_FALSE(uav.slots[i].action.has_value());
    }
}

TEST(Episode, NoBlockersMeansFullLos) {
    SceneGeometry scene = open_scene();
    scene.ue_blockage_probability = 0.0;
    const EpisodeLog log = baseline_static_ir(short_config(20), scene, 6);
    EXPECT_DOUBLE_EQ(log.los_probability(), 1.0);
}

TEST(Episode, DirectLinkThroughOpaqueBuildingCarriesNothing) {
    SceneGeometry scene;
    scene.building_penetration_loss_db = 400.0;
    const EpisodeLog log = baseline_direct(short_config(20), scene, 7);
    ASSERT_EQ(log.terminal_slot(), 20);
    for (const auto& r : log.slots) {
        bool any_los = false;
        for (bool f : r.los_flags) any_los = any_los || f;
        if (!any_los) EXPECT_LT(r.rate, 1e-3);
    }
}

TEST(Episode, GreedyAscendPolicyClimbsOneMetrePerMove) {
    SimConfig cfg = short_config(12);
    cfg.rate_threshold = 1e9;
    QuantileTable table(cfg.ue_count, 2, 0.9);
    for (std::uint32_t b = 0; b < 16; ++b) table.set(StateCode{b, 4}, ActionId::ascend(), {1.0, 1.0});
    Policy p{PolicyKind::Drl};
    p.drl.table = &table;
    const EpisodeLog log = run_episode(cfg, SceneGeometry{}, p, 8);
    double z = cfg.initial_uav_position.z();
    for (std::size_t i = 0; i < log.slots.size(); ++i) {
        const auto& r = log.slots[i];
        EXPECT_EQ(r.hovering, i % 2 == 0);
        if (r.hovering) EXPECT_EQ(r.action, ActionId::ascend());
        else z += 1.0;
        EXPECT_NEAR(r.uav.position.z(), z, 1e-12);
    }
}

TEST(Episode, LearningFillsTheTable) {
    SimConfig cfg = short_config(60);
    cfg.rate_threshold = 1e9;
    QuantileTable table(cfg.ue_count, 4, 0.9);
    Policy p{PolicyKind::Drl};
    p.drl.table = &table;
    p.drl.learn = true;
    run_episode(cfg, SceneGeometry{}, p, 10);
    EXPECT_FALSE(table.entries().empty());
    Policy frozen = p;
    frozen.drl.learn = false;
    const auto before = table.entries();
    run_episode(cfg, SceneGeometry{}, frozen, 10);
    EXPECT_EQ(table.entries(), before);
}

TEST(Episode, DrlNeedsMatchingTable) {
    Policy p{PolicyKind::Drl};
    EXPECT_THROW(run_episode(short_config(1), SceneGeometry{}, p, 0), InvalidArgument);
    QuantileTable table(3, 2, 0.9);
    p.drl.table = &table;
    EXPECT_THROW(run_episode(short_config(1), SceneGeometry{}, p, 0), InvalidArgument);
}
