#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "deliberec/corpus.hpp"
#include "deliberec/error.hpp"
#include "deliberec/io.hpp"
#include "deliberec/random.hpp"

namespace deliberec::mf {

struct Hyperparams {
    std::size_t dims = 32;
    double learning_rate = 0.005;
    double l2 = 0.02;
    std::size_t epochs = 30;
    std::uint64_t seed = 42;

    bool operator==(const Hyperparams&) const = default;

    [[nodiscard]] json to_json() const {
        return json{{"dims", dims}, {"learning_rate", learning_rate}, {"l2", l2}, {"epochs", epochs}, {"seed", seed}};
    }
    static Hyperparams from_json(const json& j) {
        Hyperparams h;
        h.dims = j.value("dims", h.dims);
        h.learning_rate = j.value("learning_rate", h.learning_rate);
        h.l2 = j.value("l2", h.l2);
        h.epochs = j.value("epochs", h.epochs);
        h.seed = j.value("seed", h.seed);
        return h;
    }
};

/// Biased matrix factorization: mu + b_u + b_i + p_u . q_i
struct Model {
    double global_mean = 0;
    std::map<std::string, std::size_t> user_index;
    std::map<std::string, std::size_t> item_index;
    std::vector<double> user_bias;
    std::vector<double> item_bias;
    std::vector<std::vector<double>> user_factors;
    std::vector<std::vector<double>> item_factors;
    Hyperparams hyperparams;

    bool operator==(const Model&) const = default;

    /// Unclipped score for indexed entities.
    [[nodiscard]] double raw_score(std::size_t u, std::size_t i) const {
        double s = global_mean + user_bias[u] + item_bias[i];
        const auto& p = user_factors[u];
        const auto& q = item_factors[i];
        for (std::size_t k = 0; k < p.size(); ++k) s += p[k] * q[k];
        return s;
    }
};

/// Score clipped to [1,5]. Unknown users or items drop their terms.
inline double predict(const Model& m, const std::string& user, const std::string& item) {
    auto u = m.user_index.find(user);
    auto i = m.item_index.find(item);
    double s = m.global_mean;
    if (u != m.user_index.end() && i != m.item_index.end()) {
        s = m.raw_score(u->second, i->second);
    } else if (u != m.user_index.end()) {
        s += m.user_bias[u->second];
    } else if (i != m.item_index.end()) {
        s += m.item_bias[i->second];
    }
    return std::clamp(s, 1.0, 5.0);
}

/// Gradient of the per-interaction objective
/// 0.5 * (r - score)^2 + 0.5 * l2 * (b_u^2 + b_i^2 + |p_u|^2 + |q_i|^2).
struct Gradient {
    double user_bias = 0;
    double item_bias = 0;
    std::vector<double> user_factors;
    std::vector<double> item_factors;
};

inline double interaction_loss(const Model& m, std::size_t u, std::size_t i, double rating) {
    const double e = rating - m.raw_score(u, i);
    double reg = m.user_bias[u] * m.user_bias[u] + m.item_bias[i] * m.item_bias[i];
    for (double v : m.user_factors[u]) reg += v * v;
    for (double v : m.item_factors[i]) reg += v * v;
    return 0.5 * e * e + 0.5 * m.hyperparams.l2 * reg;
}

inline Gradient interaction_gradient(const Model& m, std::size_t u, std::size_t i, double rating) {
    const double e = rating - m.raw_score(u, i);
    const double l2 = m.hyperparams.l2;
    const auto& p = m.user_factors[u];
    const auto& q = m.item_factors[i];
    Gradient g;
    g.user_bias = -e + l2 * m.user_bias[u];
    g.item_bias = -e + l2 * m.item_bias[i];
    g.user_factors.resize(p.size());
    g.item_factors.resize(q.size());
    for (std::size_t k = 0; k < p.size(); ++k) {
        g.user_factors[k] = -e * q[k] + l2 * p[k];
        g.item_factors[k] = -e * p[k] + l2 * q[k];
    }
    return g;
}

inline void apply_step(Model& m, std::size_t u, std::size_t i, const Gradient& g, double lr) {
    m.user_bias[u] -= lr * g.user_bias;
    m.item_bias[i] -= lr * g.item_bias;
    for (std::size_t k = 0; k < g.user_factors.size(); ++k) {
        m.user_factors[u][k] -= lr * g.user_factors[k];
        m.item_factors[i][k] -= lr * g.item_factors[k];
    }
}

/// One training rating. Kept separate from Interaction so synthetic and
/// externally produced continuous ratings can be fitted directly.
struct Observation {
    std::string user;
    std::string item;
    double rating = 0;
};

inline std::vector<Observation> observations(const Corpus& c) {
    std::vector<Observation> out;
    out.reserve(c.size());
    for (const auto& x : c.interactions()) out.push_back({x.user_id, x.item_id, static_cast<double>(x.rating)});
    return out;
}

/// Biases start at zero; factors are drawn uniformly from [-0.05, 0.05].
inline Model initialize(const std::vector<Observation>& train, const Hyperparams& hp) {
    require(!train.empty(), "MF needs a non-empty training corpus");
    require(hp.dims >= 1, "MF dimension must be >= 1");
    Model m;
    m.hyperparams = hp;
    std::set<std::string> users, items;
    double sum = 0;
    for (const auto& o : train) {
        require(std::isfinite(o.rating), "MF ratings must be finite");
        users.insert(o.user);
        items.insert(o.item);
        sum += o.rating;
    }
    m.global_mean = sum / static_cast<double>(train.size());
    for (const auto& u : users) m.user_index.emplace(u, m.user_index.size());
    for (const auto& i : items) m.item_index.emplace(i, m.item_index.size());
    m.user_bias.assign(m.user_index.size(), 0.0);
    m.item_bias.assign(m.item_index.size(), 0.0);
    std::mt19937_64 rng(hp.seed);
    auto draw = [&] { return (unit(rng) - 0.5) * 0.1; };
    m.user_factors.assign(m.user_index.size(), std::vector<double>(hp.dims));
    m.item_factors.assign(m.item_index.size(), std::vector<double>(hp.dims));
    for (auto& v : m.user_factors)
        for (auto& x : v) x = draw();
    for (auto& v : m.item_factors)
        for (auto& x : v) x = draw();
    return m;
}

inline Model initialize(const Corpus& train, const Hyperparams& hp) { return initialize(observations(train), hp); }

/// SGD over shuffled interactions, one gradient step per interaction.
inline Model fit(const std::vector<Observation>& train, const Hyperparams& hp) {
    Model m = initialize(train, hp);
    struct Obs {
        std::size_t u, i;
        double r;
    };
    std::vector<Obs> obs;
    obs.reserve(train.size());
    for (const auto& o : train) obs.push_back({m.user_index.at(o.user), m.item_index.at(o.item), o.rating});
    std::mt19937_64 rng(hp.seed ^ 0x9e3779b97f4a7c15ULL);
    for (std::size_t epoch = 0; epoch < hp.epochs; ++epoch) {
        portable_shuffle(std::span<Obs>(obs), rng);
        double loss = 0;
        for (const auto& o : obs) {
            apply_step(m, o.u, o.i, interaction_gradient(m, o.u, o.i, o.r), hp.learning_rate);
            loss += interaction_loss(m, o.u, o.i, o.r);
        }
        if (!std::isfinite(loss))
            fail(ErrorKind::numeric, "MF training diverged in epoch " + std::to_string(epoch + 1) +
                                         "; use a smaller learning rate");
    }
    return m;
}

inline Model fit(const Corpus& train, const Hyperparams& hp) { return fit(observations(train), hp); }

inline double rmse_on(const Model& m, const std::vector<Observation>& data) {
    require(!data.empty(), "RMSE needs data");
    double sq = 0;
    for (const auto& o : data) {
        const double e = o.rating - predict(m, o.user, o.item);
        sq += e * e;
    }
    return std::sqrt(sq / static_cast<double>(data.size()));
}

inline double rmse_on(const Model& m, const Corpus& data) { return rmse_on(m, observations(data)); }

struct GridResult {
    Hyperparams best;
    double best_valid_rmse = 0;
    std::vector<std::pair<Hyperparams, double>> trials;
};

/// Fits every combination and keeps the lowest validation RMSE.
inline GridResult grid_search(const Corpus& train, const Corpus& valid, const std::vector<std::size_t>& dims,
                              const std::vector<double>& learning_rates, const std::vector<double>& l2s,
                              const Hyperparams& base) {
    GridResult g;
    g.best_valid_rmse = std::numeric_limits<double>::infinity();
    for (auto d : dims)
        for (auto lr : learning_rates)
            for (auto l2 : l2s) {
                Hyperparams hp = base;
                hp.dims = d;
                hp.learning_rate = lr;
                hp.l2 = l2;
                double r;
                try {
                    r = rmse_on(fit(train, hp), valid);
                } catch (const Error& e) {
                    if (e.kind() != ErrorKind::numeric) throw;
                    r = std::numeric_limits<double>::infinity();
                }
                g.trials.emplace_back(hp, r);
                if (r < g.best_valid_rmse) {
                    g.best_valid_rmse = r;
                    g.best = hp;
                }
            }
    return g;
}

inline json to_json(const Model& m) {
    json users = json::object(), items = json::object();
    for (const auto& [u, k] : m.user_index) users[u] = {{"bias", m.user_bias[k]}, {"factors", m.user_factors[k]}};
    for (const auto& [i, k] : m.item_index) items[i] = {{"bias", m.item_bias[k]}, {"factors", m.item_factors[k]}};
    return json{{"global_mean", m.global_mean},
                {"hyperparams", m.hyperparams.to_json()},
                {"users", users},
                {"items", items}};
}

inline Model from_json(const json& j) {
    Model m;
    m.global_mean = j.at("global_mean").get<double>();
    m.hyperparams = Hyperparams::from_json(j.at("hyperparams"));
    for (const auto& [u, v] : j.at("users").items()) {
        m.user_index.emplace(u, m.user_bias.size());
        m.user_bias.push_back(v.at("bias").get<double>());
        m.user_factors.push_back(v.at("factors").get<std::vector<double>>());
        require(m.user_factors.back().size() == m.hyperparams.dims, "factor dimension mismatch for user " + u);
    }
    for (const auto& [i, v] : j.at("items").items()) {
        m.item_index.emplace(i, m.item_bias.size());
        m.item_bias.push_back(v.at("bias").get<double>());
        m.item_factors.push_back(v.at("factors").get<std::vector<double>>());
        require(m.item_factors.back().size() == m.hyperparams.dims, "factor dimension mismatch for item " + i);
    }
    return m;
}

} // namespace deliberec::mf
