#pragma once
// Finite-difference gradient checking, 64-bit only. The builder constructs
// the scalar under test on a fresh tape from named parameters; checks
// perturb the stored values, so the builder must read them through the
// store / tape.param on every call.
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "evr/nn/tape.hpp"
#include "evr/rng.hpp"

namespace evr::testing {

using Store = nn::ParamStoreT<double>;
using Tape = nn::TapeT<double>;

// Builds the graph and returns the id of the scalar root.
using ScalarBuilder = std::function<int(Tape&, Store&)>;

inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

inline double forward_value(Store& store, const ScalarBuilder& build) {
    Tape tape;
    int root = build(tape, store);
    const auto& v = tape.val(root);
    if (v.numel() != 1) throw ShapeError("gradcheck: root is not a scalar");
    return double(v.data[0]);
}

// Populates store gradients by one backward pass.
inline void analytic_grads(Store& store, const ScalarBuilder& build) {
    store.zero_grad();
    Tape tape;
    int root = build(tape, store);
    tape.backward(root);
}

struct GradCheckResult {
    double max_rel = 0;
    std::string worst; // "name[i]"
    int checked = 0;
};

// Central differences element by element. max_per_param < 0 checks every
// element; otherwise a deterministic random subset per parameter.
inline GradCheckResult check_gradients(Store& store, const ScalarBuilder& build, double eps = 1e-5,
                                       int max_per_param = -1, std::uint64_t seed = 17) {
    analytic_grads(store, build);
    GradCheckResult res;
    Rng rng(seed);
    for (auto& [name, entry] : store.params) {
        const std::size_t n = entry.value.numel();
        std::vector<std::size_t> idx;
        if (max_per_param < 0 || std::size_t(max_per_param) >= n) {
            idx.resize(n);
            for (std::size_t i = 0; i < n; ++i) idx[i] = i;
        } else {
            for (int k = 0; k < max_per_param; ++k)
                idx.push_back(std::size_t(rng.uniform_int(0, int(n) - 1)));
        }
        for (std::size_t i : idx) {
            const double saved = entry.value.data[i];
            entry.value.data[i] = saved + eps;
            const double fp = forward_value(store, build);
            entry.value.data[i] = saved - eps;
            const double fm = forward_value(store, build);
            entry.value.data[i] = saved;
            const double numeric = (fp - fm) / (2 * eps);
            const double analytic = entry.grad.data[i];
            const double e = rel_err(numeric, analytic);
            ++res.checked;
            if (e > res.max_rel) {
                res.max_rel = e;
                res.worst = name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return res;
}

// Directional derivative along one random unit direction across all
// parameters: g.v analytically vs (f(p+eps v) - f(p-eps v)) / (2 eps).
inline double check_directional(Store& store, const ScalarBuilder& build, double eps = 1e-5,
                                std::uint64_t seed = 17) {
    analytic_grads(store, build);
    Rng rng(seed);
    std::vector<std::vector<double>> dirs;
    double norm2 = 0, gdot = 0;
    for (auto& [name, entry] : store.params) {
        std::vector<double> d(entry.value.numel());
        for (auto& v : d) {
            v = rng.normal();
            norm2 += v * v;
        }
        dirs.push_back(std::move(d));
    }
    const double inv = 1.0 / std::sqrt(norm2);
    std::size_t k = 0;
    for (auto& [name, entry] : store.params) {
        for (std::size_t i = 0; i < dirs[k].size(); ++i) {
            dirs[k][i] *= inv;
            gdot += entry.grad.data[i] * dirs[k][i];
        }
        ++k;
    }
    auto shift = [&](double scale) {
        std::size_t j = 0;
        for (auto& [name, entry] : store.params) {
            for (std::size_t i = 0; i < dirs[j].size(); ++i)
                entry.value.data[i] += scale * dirs[j][i];
            ++j;
        }
    };
    shift(eps);
    const double fp = forward_value(store, build);
    shift(-2 * eps);
    const double fm = forward_value(store, build);
    shift(eps);
    return rel_err((fp - fm) / (2 * eps), gdot);
}

} // namespace evr::testing
