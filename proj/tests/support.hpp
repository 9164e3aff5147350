#ifndef CTDG_TESTS_SUPPORT_HPP
#define CTDG_TESTS_SUPPORT_HPP

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "ctdg/ad.hpp"
#include "ctdg/params.hpp"

namespace ctdg::testing {

// Scalar objective rebuilt from the live store values on a fresh tape.
using Objective = std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>;

struct GradCheckResult {
    double max_err = 0.0;
    std::string worst;
    int checked = 0;
    bool ok(double tol) const { return max_err <= tol; }
};

inline double objective_value(ParamStore& store, const Objective& objective) {
    ad::Tape tape;
    const std::vector<ad::Var> bound = store.bind(tape, false);
    return objective(tape, bound).scalar();
}

// Central finite differences against the tape gradient. Relative error uses
// max(|analytic|, |numeric|, floor) so near-zero gradients compare by a
// matching absolute tolerance.
inline GradCheckResult check_gradients(ParamStore& store, const Objective& objective,
                                       double step = 1e-5, int coords_per_tensor = 0,
                                       double denom_floor = 1e-3,
                                       std::uint64_t subsample_seed = 7) {
    GradCheckResult result;
    ad::Tape tape;
    const std::vector<ad::Var> bound = store.bind(tape, true);
    ad::Var obj = objective(tape, bound);
    tape.backward(obj);
    std::vector<Eigen::MatrixXd> analytic;
    analytic.reserve(bound.size());
    for (const ad::Var& v : bound) analytic.push_back(tape.grad(v));

    std::mt19937_64 rng(subsample_seed);
    for (int id = 0; id < store.count(); ++id) {
        Eigen::MatrixXd& theta = store.value(id);
        std::vector<Eigen::Index> coords;
        for (Eigen::Index i = 0; i < theta.size(); ++i) coords.push_back(i);
        if (coords_per_tensor > 0 && static_cast<int>(coords.size()) > coords_per_tensor) {
            std::shuffle(coords.begin(), coords.end(), rng);
            coords.resize(static_cast<std::size_t>(coords_per_tensor));
        }
        for (Eigen::Index c : coords) {
            const double saved = theta.data()[c];
            theta.data()[c] = saved + step;
            const double f_plus = objective_value(store, objective);
            theta.data()[c] = saved - step;
            const double f_minus = objective_value(store, objective);
            theta.data()[c] = saved;
            const double fd = (f_plus - f_minus) / (2.0 * step);
            const double a = analytic[static_cast<std::size_t>(id)].data()[c];
            const double denom = std::max({std::abs(a), std::abs(fd), denom_floor});
            const double err = std::abs(a - fd) / denom;
            ++result.checked;
            if (err > result.max_err) {
                result.max_err = err;
                result.worst = store.name(id) + "[" + std::to_string(c) + "] analytic=" +
                               std::to_string(a) + " fd=" + std::to_string(fd);
            }
        }
    }
    return result;
}

}  // namespace ctdg::testing

#endif  // CTDG_TESTS_SUPPORT_HPP
