#ifndef CTDG_TPPLE_HPP
#define CTDG_TPPLE_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <vector>

#include "ctdg/ad.hpp"

namespace ctdg {

struct TppEvent {
    int type = 0;  // cluster id
    double t = 0.0;
};

enum class Integrator { MonteCarlo, Trapezoid };

struct IntegratorConfig {
    Integrator kind = Integrator::Trapezoid;
    int mc_samples = 5;  // L, per interval
    std::uint64_t seed = 0;
};

// One node's event sequence plus an intensity evaluator over time.
// The evaluator returns the K-vector of type intensities at time t and must
// stay strictly positive; event times are ascending and start at or after t0.
struct IntensityPath {
    std::function<Eigen::VectorXd(double)> evaluator;
    std::vector<TppEvent> events;
    double t0 = 0.0;  // integration lower limit: first observed time
};

// Uniform sample times for the Monte-Carlo estimator, one batch per interval
// of the grid {t0, t_1, ..., t_n}. Deterministic given the seed; shared by
// the numeric and the tape-based estimators so gradients line up.
std::vector<std::vector<double>> mc_sample_times(const std::vector<double>& event_times,
                                                 double t0, int samples, std::uint64_t seed);

// Sum over intervals of width * mean of L uniform samples of lambda(s).
double integral_mc(const IntensityPath& path, int samples, std::uint64_t seed);

// Sum over intervals of width/2 * (lambda(t_i) + lambda(t_{i-1})).
double integral_trapezoid(const IntensityPath& path);

// R = sum_i log lambda_{k_i}(t_i) - integral of lambda over [t0, t_n].
double tpp_log_likelihood(const IntensityPath& path, const IntegratorConfig& integrator);

// f_k(t) = lambda_k(t) * exp(-integral of lambda over [t_n, t]), t >= t_n.
double interevent_density(const IntensityPath& path, int type, double t, double t_n,
                          const IntegratorConfig& integrator);

// Tape-based mirror used by training; identical grids and sample times.
struct VarIntensityPath {
    std::function<std::vector<ad::Var>(double)> evaluator;  // K intensities
    std::vector<TppEvent> events;
    double t0 = 0.0;
};

ad::Var integral_mc_var(ad::Tape& tape, const VarIntensityPath& path, int samples,
                        std::uint64_t seed);
ad::Var integral_trapezoid_var(ad::Tape& tape, const VarIntensityPath& path);
ad::Var tpp_log_likelihood_var(ad::Tape& tape, const VarIntensityPath& path,
                               const IntegratorConfig& integrator);

}  // namespace ctdg

#endif  // CTDG_TPPLE_HPP
