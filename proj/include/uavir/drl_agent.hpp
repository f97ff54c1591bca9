#ifndef UAVIR_DRL_AGENT_HPP
#define UAVIR_DRL_AGENT_HPP

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "uavir/common.hpp"

namespace uavir {

/// Binary communication state: bit k set iff UE k's received power >= tau.
/// Rendered UE 1 first, so powers (2t, 0, 2t, 0) read "1010".
struct StateCode {
    std::uint32_t bits = 0;
    int users = 0;

    bool bit(int k) const { return (bits >> k) & 1U; }

    std::string to_string() const {
        std::string s(static_cast<std::size_t>(users), '0');
        for (int k = 0; k < users; ++k)
            if (bit(k)) s[static_cast<std::size_t>(k)] = '1';
        return s;
    }

    static StateCode from_string(const std::string& s) {
        if (s.empty() || s.size() > 31) throw InvalidArgument("state bitstring must have 1..31 characters");
        StateCode c;
        c.users = static_cast<int>(s.size());
        for (int k = 0; k < c.users; ++k) {
            const char ch = s[static_cast<std::size_t>(k)];
            if (ch == '1')
                c.bits |= (1U << k);
            else if (ch != '0')
                throw InvalidArgument("state bitstring may only contain 0 and 1");
        }
        return c;
    }

    static StateCode zero(int users) { return {0U, users}; }

    friend bool operator==(const StateCode&, const StateCode&) = default;
    friend auto operator<=>(const StateCode&, const StateCode&) = default;
};

inline StateCode encode_state(std::span<const double> received_powers, double tau) {
    if (received_powers.empty()) throw InvalidArgument("encode_state needs at least one UE");
    if (received_powers.size() > 31) throw InvalidArgument("at most 31 UEs are supported");
    StateCode c;
    c.users = static_cast<int>(received_powers.size());
    for (int k = 0; k < c.users; ++k)
        if (received_powers[static_cast<std::size_t>(k)] >= tau) c.bits |= (1U << k);
    return c;
}

/// Ordinal 0 = ascend 1 m, 1 = descend 1 m, 2 + k = move 1 m toward UE k.
struct ActionId {
    enum class Kind { Ascend, Descend, MoveTowardUe };

    int ordinal = 0;

    static ActionId ascend() { return {0}; }
    static ActionId descend() { return {1}; }
    static ActionId toward(int ue) { return {2 + ue}; }

    Kind kind() const {
        if (ordinal == 0) return Kind::Ascend;
        if (ordinal == 1) return Kind::Descend;
        return Kind::MoveTowardUe;
    }
    int target_ue() const { return ordinal - 2; }

    std::string name() const {
        switch (kind()) {
            case Kind::Ascend: return "ascend";
            case Kind::Descend: return "descend";
            default: return "toward_ue" + std::to_string(target_ue() + 1);
        }
    }

    friend bool operator==(const ActionId&, const ActionId&) = default;
    friend auto operator<=>(const ActionId&, const ActionId&) = default;
};

inline int action_count(int users) { return users + 2; }

struct TransitionSample {
    StateCode state;
    ActionId action;
    double reward = 0.0;  // bits
    StateCode next_state;
    ActionId next_action;
};

/// Quantile midpoint (2q - 1) / (2Q) for 1-based q.
inline double quantile_midpoint(int q, int q_count) {
    return (2.0 * q - 1.0) / (2.0 * q_count);
}

/// sum_q mean_j |w_q - 1{t_j < z_q}| (t_j - z_q)^2 over uniform target samples.
inline double qr_loss(std::span<const double> supports, std::span<const double> targets) {
    if (targets.empty()) throw InvalidArgument("qr_loss: target set is empty");
    const int q_count = static_cast<int>(supports.size());
    double total = 0.0;
    for (int q = 1; q <= q_count; ++q) {
        const double w = quantile_midpoint(q, q_count);
        const double zq = supports[static_cast<std::size_t>(q - 1)];
        double acc = 0.0;
        for (double t : targets) {
            const double weight = std::abs(w - (t < zq ? 1.0 : 0.0));
            acc += weight * (t - zq) * (t - zq);
        }
        total += acc / static_cast<double>(targets.size());
    }
    return total;
}

namespace detail {

/// Exact minimizer of mean_j |w - 1{t_j < z}| (t_j - z)^2 over z for sorted t.
/// The objective is strictly convex and continuously differentiable; on the
/// interval where exactly j samples lie below z its stationary point is
/// ((1 - w) S_below + w S_above) / ((1 - w) j + w (n - j)).
inline double asymmetric_mean(std::span<const double> sorted, std::span<const double> prefix, double w) {
    const std::size_t n = sorted.size();
    const double total = prefix[n];
    double best = sorted.front();
    double best_violation = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j <= n; ++j) {
        const double below = prefix[j];
        const double above = total - below;
        const double denom = (1.0 - w) * static_cast<double>(j) + w * static_cast<double>(n - j);
        const double z = ((1.0 - w) * below + w * above) / denom;
        const double lo = j == 0 ? -std::numeric_limits<double>::infinity() : sorted[j - 1];
        const double hi = j == n ? std::numeric_limits<double>::infinity() : sorted[j];
        if (z >= lo && z <= hi) return z;
        const double violation = z < lo ? lo - z : z - hi;
        if (violation < best_violation) {
            best_violation = violation;
            best = std::clamp(z, lo, hi);
        }
    }
    return best;
}

}  // namespace detail

/// Minimizer of qr_loss over the supports. The loss separates across q, so
/// each support is solved independently in closed form; the result is sorted
/// afterwards to keep the quantile-function reading.
inline std::vector<double> fit_quantiles(std::span<const double> targets, int q_count,
                                         std::span<const double> previous_supports = {}) {
    if (targets.empty()) throw InvalidArgument("fit_quantiles: target set is empty");
    if (q_count < 1) throw InvalidArgument("fit_quantiles: Q must be >= 1");
    if (!previous_supports.empty() && static_cast<int>(previous_supports.size()) != q_count)
        throw InvalidArgument("fit_quantiles: previous supports must have Q entries");
    std::vector<double> sorted(targets.begin(), targets.end());
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> prefix(sorted.size() + 1, 0.0);
    for (std::size_t i = 0; i < sorted.size(); ++i) prefix[i + 1] = prefix[i] + sorted[i];

    std::vector<double> out(static_cast<std::size_t>(q_count));
    for (int q = 1; q <= q_count; ++q)
        out[static_cast<std::size_t>(q - 1)] = detail::asymmetric_mean(sorted, prefix, quantile_midpoint(q, q_count));
    std::sort(out.begin(), out.end());
    return out;
}

/// Tabular Q-quantile return model over (state, action) pairs. Unvisited
/// entries read as Q zeros.
class QuantileTable {
public:
    using Key = std::pair<std::uint32_t, int>;

    QuantileTable() = default;
    QuantileTable(int users, int q_count, double discount, double learning_rate = 1.0)
        : users_(users), q_count_(q_count), discount_(discount), learning_rate_(learning_rate) {
        if (users < 1 || users > 31) throw InvalidArgument("QuantileTable: K must be in 1..31");
        if (q_count < 1) throw InvalidArgument("QuantileTable: Q must be >= 1");
        if (!(discount > 0.0 && discount < 1.0) && discount != 0.0)
            throw InvalidArgument("QuantileTable: discount must lie in [0, 1)");
        if (!(learning_rate > 0.0 && learning_rate <= 1.0))
            throw InvalidArgument("QuantileTable: learning_rate must lie in (0, 1]");
    }

    int users() const { return users_; }
    int q_count() const { return q_count_; }
    double discount() const { return discount_; }
    double learning_rate() const { return learning_rate_; }
    int actions() const { return action_count(users_); }

    bool visited(StateCode s, ActionId a) const { return entries_.count(key(s, a)) != 0; }

    std::vector<double> supports(StateCode s, ActionId a) const {
        const auto it = entries_.find(key(s, a));
        if (it == entries_.end()) return std::vector<double>(static_cast<std::size_t>(q_count_), 0.0);
        return it->second;
    }

    void set(StateCode s, ActionId a, std::vector<double> z) {
        if (static_cast<int>(z.size()) != q_count_) throw InvalidArgument("QuantileTable: entry must have Q supports");
        if (!std::is_sorted(z.begin(), z.end())) throw InvalidArgument("QuantileTable: supports must be sorted");
        entries_[key(s, a)] = std::move(z);
    }

    const std::map<Key, std::vector<double>>& entries() const { return entries_; }

    friend bool operator==(const QuantileTable&, const QuantileTable&) = default;

private:
    Key key(StateCode s, ActionId a) const {
        if (s.users != users_) throw InvalidArgument("QuantileTable: state has wrong number of UEs");
        if (a.ordinal < 0 || a.ordinal >= actions()) throw InvalidArgument("QuantileTable: action out of range");
        return {s.bits, a.ordinal};
    }

    int users_ = 1;
    int q_count_ = 1;
    double discount_ = 0.9;
    double learning_rate_ = 1.0;
    std::map<Key, std::vector<double>> entries_;
};

/// Mean of the Q supports.
inline double expected_return(const QuantileTable& table, StateCode s, ActionId a) {
    const auto z = table.supports(s, a);
    return std::accumulate(z.begin(), z.end(), 0.0) / static_cast<double>(z.size());
}

/// Argmax of expected return, lowest ordinal on ties.
inline ActionId greedy_action(const QuantileTable& table, StateCode s) {
    ActionId best{0};
    double best_value = expected_return(table, s, best);
    for (int a = 1; a < table.actions(); ++a) {
        const double v = expected_return(table, s, ActionId{a});
        if (v > best_value) {
            best_value = v;
            best = ActionId{a};
        }
    }
    return best;
}

inline ActionId select_action(const QuantileTable& table, StateCode s, double exploration, Rng& rng) {
    if (exploration > 0.0) {
        std::uniform_real_distribution<double> uni(0.0, 1.0);
        if (uni(rng) < exploration) {
            std::uniform_int_distribution<int> pick(0, table.actions() - 1);
            return ActionId{pick(rng)};
        }
    }
    return greedy_action(table, s);
}

/// reward + discount * z_i(next_state, next_action) for every support i.
inline std::vector<double> bellman_target(const TransitionSample& sample, const QuantileTable& table) {
    auto z = table.supports(sample.next_state, sample.next_action);
    for (double& v : z) v = sample.reward + table.discount() * v;
    return z;
}

/// Refit the sampled entry to its distributional Bellman target. With
/// learning_rate 1 the entry is replaced by the fit; smaller rates move each
/// support that fraction of the way toward it.
inline void update(QuantileTable& table, const TransitionSample& sample) {
    const auto target = bellman_target(sample, table);
    const auto old = table.supports(sample.state, sample.action);
    auto fitted = fit_quantiles(target, table.q_count(), old);
    if (table.learning_rate() < 1.0) {
        const double lr = table.learning_rate();
        for (std::size_t i = 0; i < fitted.size(); ++i) fitted[i] = old[i] + lr * (fitted[i] - old[i]);
        std::sort(fitted.begin(), fitted.end());
    }
    table.set(sample.state, sample.action, std::move(fitted));
}

}  // namespace uavir

#endif  // UAVIR_DRL_AGENT_HPP
