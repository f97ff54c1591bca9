#ifndef UAVIR_CHANNEL_MODEL_HPP
#define UAVIR_CHANNEL_MODEL_HPP

#include <algorithm>
#include <optional>
#include <span>
#include <vector>

#include "uavir/common.hpp"

// Geometric mmWave channel generation for the BS -> reflector -> UE cascade.
//
// Frames: ground plane is z = 0. The BS array lies in the y-z plane with its
// boresight along +x. The reflector array is horizontal (x-y plane) and faces
// down. Each array indexes its elements row-major, index = row * cols + col.

namespace uavir {

/// Axis-aligned building standing on the ground.
struct Box {
    Vec2 center{10.0, 0.0};
    double size_x = 4.0;   // full extent along x
    double size_y = 20.0;  // full extent along y
    double height = 18.0;

    bool contains(const Vec3& p) const {
        return std::abs(p.x() - center.x()) <= 0.5 * size_x &&
               std::abs(p.y() - center.y()) <= 0.5 * size_y && p.z() < height && p.z() >= 0.0;
    }
};

struct SceneGeometry {
    Vec3 bs_position{0.0, 0.0, 20.0};
    std::optional<Box> building = Box{};
    // Per-slot body-blockage probability of a link arriving at the horizon;
    // it shrinks with the cosine of the arrival elevation.
    double ue_blockage_probability = 0.9;
    // Extra loss on any link whose straight path crosses the building.
    double building_penetration_loss_db = 60.0;

    void validate() const {
        if (building) {
            if (!(building->height > 0.0)) throw InvalidArgument("building height must be > 0");
            if (!(building->size_x > 0.0) || !(building->size_y > 0.0))
                throw InvalidArgument("building extents must be > 0");
        }
        if (!(ue_blockage_probability >= 0.0 && ue_blockage_probability <= 1.0))
            throw InvalidArgument("ue_blockage_probability must lie in [0,1]");
        if (!(building_penetration_loss_db >= 0.0))
            throw InvalidArgument("building_penetration_loss_db must be >= 0");
    }
};

struct ArrayGeometry {
    int rows = 4;
    int cols = 4;
    double element_spacing = 0.0;  // meters; 0 selects half a wavelength
    double carrier_frequency = 30e9;

    int size() const { return rows * cols; }
    double wavelength() const { return kSpeedOfLight / carrier_frequency; }
    double spacing() const { return element_spacing > 0.0 ? element_spacing : 0.5 * wavelength(); }

    void validate() const {
        if (rows < 1 || cols < 1) throw InvalidArgument("array rows and cols must be positive");
        if (!(carrier_frequency > 0.0)) throw InvalidArgument("carrier_frequency must be > 0");
        if (element_spacing < 0.0) throw InvalidArgument("element_spacing must be >= 0");
    }
};

/// Log-distance path loss anchored at free space at the reference distance.
struct PathLossModel {
    double los_exponent = 2.0;
    double nlos_exponent = 3.3;
    double nlos_penalty_db = 20.0;
    double reference_distance = 1.0;
};

struct ChannelConfig {
    ArrayGeometry bs_array{4, 4};
    ArrayGeometry ir_array{4, 4};
    PathLossModel path_loss{};
    double rician_k_db = 10.0;

    void validate() const {
        bs_array.validate();
        ir_array.validate();
        if (bs_array.carrier_frequency != ir_array.carrier_frequency)
            throw InvalidArgument("BS and reflector arrays must share a carrier frequency");
    }
};

struct ChannelRealization {
    CMatrix G;                   // N x M, BS -> reflector
    std::vector<CRowVector> h;   // K rows of 1 x N, reflector -> UE k
    std::vector<bool> los_flags; // reflector -> UE link LOS in this slot
    bool bs_ir_los = true;
};

/// Composite per-UE channel D_k = diag(h_k) G plus the link budget scalars.
struct EffectiveCsi {
    std::vector<CMatrix> D;  // K matrices of N x M
    double noise_power = 1.0;
    double bandwidth = 1.0;

    int users() const { return static_cast<int>(D.size()); }
    int elements() const { return D.empty() ? 0 : static_cast<int>(D.front().rows()); }
    int antennas() const { return D.empty() ? 0 : static_cast<int>(D.front().cols()); }
};

/// Steering vector of a uniform planar array for a direction given in the
/// array's local frame (azimuth from boresight in the horizontal plane,
/// elevation above it). Columns run along local y, rows along local z.
inline CVector array_response(const ArrayGeometry& geom, double azimuth, double elevation) {
    const int n = geom.size();
    CVector a(n);
    const double k = 2.0 * kPi * geom.spacing() / geom.wavelength();
    const double uy = std::cos(elevation) * std::sin(azimuth);
    const double uz = std::sin(elevation);
    for (int r = 0; r < geom.rows; ++r) {
        for (int c = 0; c < geom.cols; ++c) {
            const double phase = k * (c * uy + r * uz);
            a(r * geom.cols + c) = std::polar(1.0, phase);
        }
    }
    return a;
}

namespace detail {

inline void local_angles(const Vec3& local_dir, double& azimuth, double& elevation) {
    const Vec3 u = local_dir.normalized();
    elevation = std::asin(std::clamp(u.z(), -1.0, 1.0));
    azimuth = std::atan2(u.y(), u.x());
}

/// Steering vector of the BS array toward a global direction.
inline CVector bs_response(const ArrayGeometry& geom, const Vec3& dir) {
    double az = 0.0, el = 0.0;
    local_angles(dir, az, el);
    return array_response(geom, az, el);
}

/// Steering vector of the downward-facing reflector toward a global direction.
/// Local boresight is -z, local y is global x, local z is global y.
inline CVector ir_response(const ArrayGeometry& geom, const Vec3& dir) {
    double az = 0.0, el = 0.0;
    local_angles(Vec3(-dir.z(), dir.x(), dir.y()), az, el);
    return array_response(geom, az, el);
}

}  // namespace detail

/// Linear large-scale power gain of a link.
inline double path_gain(double distance, bool is_los, double frequency, const PathLossModel& model = {}) {
    if (!(distance > 0.0)) throw InvalidArgument("degenerate geometry: link distance must be > 0");
    const double d0 = model.reference_distance;
    const double d = std::max(distance, d0);
    const double lambda = kSpeedOfLight / frequency;
    const double anchor = std::pow(lambda / (4.0 * kPi * d0), 2.0);
    if (is_los) return anchor * std::pow(d0 / d, model.los_exponent);
    return anchor * std::pow(d0 / d, model.nlos_exponent) * db_to_linear(-model.nlos_penalty_db);
}

/// True iff the open segment p1-p2 stays clear of the building volume that
/// lies strictly below the roof. A ray grazing the roof counts as visible.
inline bool los_visible(const Vec3& p1, const Vec3& p2, const SceneGeometry& scene) {
    if (!scene.building) return true;
    const Box& b = *scene.building;
    const Vec3 d = p2 - p1;
    double t0 = 0.0, t1 = 1.0;
    const double lo[2] = {b.center.x() - 0.5 * b.size_x, b.center.y() - 0.5 * b.size_y};
    const double hi[2] = {b.center.x() + 0.5 * b.size_x, b.center.y() + 0.5 * b.size_y};
    for (int axis = 0; axis < 2; ++axis) {
        const double o = p1[axis];
        const double dv = d[axis];
        if (dv == 0.0) {
            if (o < lo[axis] || o > hi[axis]) return true;
            continue;
        }
        double ta = (lo[axis] - o) / dv;
        double tb = (hi[axis] - o) / dv;
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
        if (t0 > t1) return true;
    }
    // z is linear in t, so the lowest point over [t0, t1] is an endpoint.
    const double z0 = p1.z() + t0 * d.z();
    const double z1 = p1.z() + t1 * d.z();
    return std::min(z0, z1) >= b.height;
}

/// Body-blockage probability of a link whose far end sits at the given
/// elevation (radians) above the UE.
inline double body_blockage_probability(const SceneGeometry& scene, double elevation) {
    const double e = std::clamp(elevation, 0.0, kPi / 2.0);
    return std::clamp(scene.ue_blockage_probability * std::cos(e), 0.0, 1.0);
}

inline double elevation_from(const Vec3& ue, const Vec3& other) {
    const Vec3 d = other - ue;
    const double n = d.norm();
    if (n == 0.0) return kPi / 2.0;
    return std::asin(std::clamp(d.z() / n, -1.0, 1.0));
}

namespace detail {

/// Large-scale gain of one link given geometry and body-blockage outcome.
inline double link_gain(const Vec3& a, const Vec3& b, bool geometric_los, bool body_blocked,
                        const SceneGeometry& scene, const ChannelConfig& cfg) {
    const double f = cfg.bs_array.carrier_frequency;
    const double dist = (b - a).norm();
    if (!geometric_los)
        return path_gain(dist, false, f, cfg.path_loss) * db_to_linear(-scene.building_penetration_loss_db);
    return path_gain(dist, !body_blocked, f, cfg.path_loss);
}

}  // namespace detail

/// Draw one coherence-slot realization. Every call consumes the same number of
/// variates from the stream regardless of the outcome, so policies sharing a
/// seed see common random numbers.
inline ChannelRealization sample_channels(const SceneGeometry& scene, const ChannelConfig& cfg,
                                          const Vec3& ir_position, std::span<const Vec3> ue_positions,
                                          Rng& rng) {
    if (!(ir_position.z() > 0.0)) throw InvalidArgument("reflector must be above ground");
    if (ue_positions.empty()) throw InvalidArgument("at least one UE is required");
    const int m = cfg.bs_array.size();
    const int n = cfg.ir_array.size();
    const double k_factor = db_to_linear(cfg.rician_k_db);
    const double los_amp = std::sqrt(k_factor / (k_factor + 1.0));
    const double nlos_amp = std::sqrt(1.0 / (k_factor + 1.0));
    std::uniform_real_distribution<double> uni(0.0, 1.0);

    ChannelRealization out;
    out.bs_ir_los = los_visible(scene.bs_position, ir_position, scene);
    {
        const Vec3 to_ir = ir_position - scene.bs_position;
        const double g = detail::link_gain(scene.bs_position, ir_position, out.bs_ir_los, false, scene, cfg);
        const double phase = 2.0 * kPi * uni(rng);
        CMatrix scatter(n, m);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < m; ++j) scatter(i, j) = sample_cn(rng);
        if (out.bs_ir_los) {
            const CVector at = detail::bs_response(cfg.bs_array, to_ir);
            const CVector ar = detail::ir_response(cfg.ir_array, -to_ir);
            out.G = std::sqrt(g) * (los_amp * std::polar(1.0, phase) * ar * at.adjoint() + nlos_amp * scatter);
        } else {
            out.G = std::sqrt(g) * scatter;
        }
    }

    out.h.reserve(ue_positions.size());
    out.los_flags.reserve(ue_positions.size());
    for (const Vec3& ue : ue_positions) {
        const bool geo = los_visible(ir_position, ue, scene);
        const double p_block = body_blockage_probability(scene, elevation_from(ue, ir_position));
        const bool body_blocked = uni(rng) < p_block;
        const bool los = geo && !body_blocked;
        const double g = detail::link_gain(ir_position, ue, geo, body_blocked, scene, cfg);
        const double phase = 2.0 * kPi * uni(rng);
        CRowVector scatter(n);
        for (int i = 0; i < n; ++i) scatter(i) = sample_cn(rng);
        CRowVector hk;
        if (los) {
            const CVector a = detail::ir_response(cfg.ir_array, ue - ir_position);
            hk = std::sqrt(g) * (los_amp * std::polar(1.0, phase) * a.transpose() + nlos_amp * scatter);
        } else {
            hk = std::sqrt(g) * scatter;
        }
        out.h.push_back(std::move(hk));
        out.los_flags.push_back(los);
    }
    return out;
}

/// Direct BS -> UE rows (1 x M each) used by the no-reflector baseline.
struct DirectRealization {
    std::vector<CRowVector> rows;
    std::vector<bool> los_flags;
};

inline DirectRealization sample_direct_channels(const SceneGeometry& scene, const ChannelConfig& cfg,
                                                std::span<const Vec3> ue_positions, Rng& rng) {
    const int m = cfg.bs_array.size();
    const double k_factor = db_to_linear(cfg.rician_k_db);
    const double los_amp = std::sqrt(k_factor / (k_factor + 1.0));
    const double nlos_amp = std::sqrt(1.0 / (k_factor + 1.0));
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    DirectRealization out;
    for (const Vec3& ue : ue_positions) {
        const bool geo = los_visible(scene.bs_position, ue, scene);
        const double p_block = body_blockage_probability(scene, elevation_from(ue, scene.bs_position));
        const bool body_blocked = uni(rng) < p_block;
        const bool los = geo && !body_blocked;
        const double g = detail::link_gain(scene.bs_position, ue, geo, body_blocked, scene, cfg);
        const double phase = 2.0 * kPi * uni(rng);
        CRowVector scatter(m);
        for (int i = 0; i < m; ++i) scatter(i) = sample_cn(rng);
        CRowVector row;
        if (los) {
            const CVector a = detail::bs_response(cfg.bs_array, ue - scene.bs_position);
            row = std::sqrt(g) * (los_amp * std::polar(1.0, phase) * a.adjoint() + nlos_amp * scatter);
        } else {
            row = std::sqrt(g) * scatter;
        }
        out.rows.push_back(std::move(row));
        out.los_flags.push_back(los);
    }
    return out;
}

/// D_k[n, m] = h_k[n] * G[n, m].
inline EffectiveCsi effective_csi(const ChannelRealization& real, double noise_power, double bandwidth) {
    const auto n = real.G.rows();
    EffectiveCsi csi;
    csi.noise_power = noise_power;
    csi.bandwidth = bandwidth;
    csi.D.reserve(real.h.size());
    for (const CRowVector& hk : real.h) {
        if (hk.size() != n) throw InvalidArgument("effective_csi: h_k length does not match G rows");
        csi.D.push_back(hk.transpose().asDiagonal() * real.G);
    }
    return csi;
}

/// Direct links expressed as single-element cascades (N = 1, theta = [1]).
inline EffectiveCsi direct_csi(const DirectRealization& real, double noise_power, double bandwidth) {
    EffectiveCsi csi;
    csi.noise_power = noise_power;
    csi.bandwidth = bandwidth;
    for (const CRowVector& row : real.rows) csi.D.push_back(CMatrix(row));
    return csi;
}

/// Thermal noise power over a bandwidth, -174 dBm/Hz plus a noise figure.
inline double thermal_noise_watts(double bandwidth, double noise_figure_db) {
    return dbm_to_watts(-174.0 + 10.0 * std::log10(bandwidth) + noise_figure_db);
}

}  // namespace uavir

#endif  // UAVIR_CHANNEL_MODEL_HPP
