#include "ctdg/tpple.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "ctdg/errors.hpp"

namespace ctdg {

namespace {

std::vector<double> grid_times(const std::vector<TppEvent>& events, double t0) {
    std::vector<double> g;
    g.reserve(events.size() + 1);
    g.push_back(t0);
    double prev = t0;
    for (const TppEvent& e : events) {
        if (e.t < prev) throw ValidationError("event times must be ascending and >= t0");
        g.push_back(e.t);
        prev = e.t;
    }
    return g;
}

double total_at(const IntensityPath& path, double t) {
    const Eigen::VectorXd lam = path.evaluator(t);
    const double v = lam.sum();
    if (!std::isfinite(v)) {
        throw std::runtime_error("non-finite intensity at t=" + std::to_string(t));
    }
    return v;
}

}  // namespace

std::vector<std::vector<double>> mc_sample_times(const std::vector<double>& event_times,
                                                 double t0, int samples, std::uint64_t seed) {
    if (samples < 1) throw ValidationError("Monte-Carlo estimator needs at least one sample");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::vector<std::vector<double>> out;
    out.reserve(event_times.size());
    double prev = t0;
    for (double t : event_times) {
        std::vector<double> pts(static_cast<std::size_t>(samples));
        for (double& p : pts) p = prev + uni(rng) * (t - prev);
        out.push_back(std::move(pts));
        prev = t;
    }
    return out;
}

double integral_mc(const IntensityPath& path, int samples, std::uint64_t seed) {
    std::vector<double> times;
    times.reserve(path.events.size());
    for (const TppEvent& e : path.events) times.push_back(e.t);
    const auto pts = mc_sample_times(times, path.t0, samples, seed);
    double acc = 0.0;
    double prev = path.t0;
    for (std::size_t i = 0; i < times.size(); ++i) {
        const double width = times[i] - prev;
        if (width > 0.0) {
            double mean = 0.0;
            for (double s : pts[i]) mean += total_at(path, s);
            mean /= static_cast<double>(samples);
            acc += width * mean;
        }
        prev = times[i];
    }
    return acc;
}

double integral_trapezoid(const IntensityPath& path) {
    const auto grid = grid_times(path.events, path.t0);
    if (grid.size() < 2) throw ValidationError("trapezoid needs at least one interval");
    double acc = 0.0;
    double prev_t = grid[0];
    double prev_lam = 0.0;
    bool have_prev = false;
    for (std::size_t i = 1; i < grid.size(); ++i) {
        const double width = grid[i] - prev_t;
        if (width > 0.0) {
            if (!have_prev) prev_lam = total_at(path, prev_t);
            const double cur = total_at(path, grid[i]);
            acc += 0.5 * width * (prev_lam + cur);
            prev_lam = cur;
            have_prev = true;
        } else {
            have_prev = false;  // duplicate timestamp: contributes nothing
        }
        prev_t = grid[i];
    }
    return acc;
}

double tpp_log_likelihood(const IntensityPath& path, const IntegratorConfig& integrator) {
    if (path.events.empty()) throw ValidationError("tpp_log_likelihood needs at least one event");
    double r = 0.0;
    for (const TppEvent& e : path.events) {
        const Eigen::VectorXd lam = path.evaluator(e.t);
        const double v = lam(e.type);
        if (!std::isfinite(v) || v <= 0.0) {
            throw std::runtime_error("non-finite or non-positive intensity at t=" +
                                     std::to_string(e.t));
        }
        r += std::log(v);
    }
    const double integral = (integrator.kind == Integrator::MonteCarlo)
                                ? integral_mc(path, integrator.mc_samples, integrator.seed)
                                : integral_trapezoid(path);
    return r - integral;
}

double interevent_density(const IntensityPath& path, int type, double t, double t_n,
                          const IntegratorConfig& integrator) {
    if (t < t_n) throw ValidationError("interevent_density requires t >= t_n");
    IntensityPath seg;
    seg.evaluator = path.evaluator;
    seg.t0 = t_n;
    seg.events = {TppEvent{type, t}};
    double integral = 0.0;
    if (t > t_n) {
        integral = (integrator.kind == Integrator::MonteCarlo)
                       ? integral_mc(seg, integrator.mc_samples, integrator.seed)
                       : integral_trapezoid(seg);
    }
    return path.evaluator(t)(type) * std::exp(-integral);
}

namespace {

ad::Var total_at_var(ad::Tape& tape, const VarIntensityPath& path, double t) {
    const std::vector<ad::Var> lam = path.evaluator(t);
    ad::Var acc = lam[0];
    for (std::size_t k = 1; k < lam.size(); ++k) acc = tape.add(acc, lam[k]);
    return acc;
}

}  // namespace

ad::Var integral_mc_var(ad::Tape& tape, const VarIntensityPath& path, int samples,
                        std::uint64_t seed) {
    std::vector<double> times;
    times.reserve(path.events.size());
    for (const TppEvent& e : path.events) times.push_back(e.t);
    const auto pts = mc_sample_times(times, path.t0, samples, seed);
    ad::Var acc = tape.leaf(Eigen::MatrixXd::Zero(1, 1), false);
    double prev = path.t0;
    for (std::size_t i = 0; i < times.size(); ++i) {
        const double width = times[i] - prev;
        if (width > 0.0) {
            ad::Var mean;
            for (std::size_t j = 0; j < pts[i].size(); ++j) {
                ad::Var v = total_at_var(tape, path, pts[i][j]);
                mean = (j == 0) ? v : tape.add(mean, v);
            }
            mean = tape.scale(mean, 1.0 / static_cast<double>(samples));
            acc = tape.add(acc, tape.scale(mean, width));
        }
        prev = times[i];
    }
    return acc;
}

ad::Var integral_trapezoid_var(ad::Tape& tape, const VarIntensityPath& path) {
    std::vector<TppEvent> events = path.events;
    std::vector<double> grid;
    grid.push_back(path.t0);
    for (const TppEvent& e : events) grid.push_back(e.t);
    ad::Var acc = tape.leaf(Eigen::MatrixXd::Zero(1, 1), false);
    ad::Var prev_lam;
    bool have_prev = false;
    for (std::size_t i = 1; i < grid.size(); ++i) {
        const double width = grid[i] - grid[i - 1];
        if (width > 0.0) {
            if (!have_prev) prev_lam = total_at_var(tape, path, grid[i - 1]);
            ad::Var cur = total_at_var(tape, path, grid[i]);
            acc = tape.add(acc, tape.scale(tape.add(prev_lam, cur), 0.5 * width));
            prev_lam = cur;
            have_prev = true;
        } else {
            have_prev = false;
        }
    }
    return acc;
}

ad::Var tpp_log_likelihood_var(ad::Tape& tape, const VarIntensityPath& path,
                               const IntegratorConfig& integrator) {
    if (path.events.empty()) throw ValidationError("tpp_log_likelihood needs at least one event");
    ad::Var r;
    bool first = true;
    for (const TppEvent& e : path.events) {
        const std::vector<ad::Var> lam = path.evaluator(e.t);
        ad::Var term = tape.log(lam[static_cast<std::size_t>(e.type)]);
        r = first ? term : tape.add(r, term);
        first = false;
    }
    ad::Var integral = (integrator.kind == Integrator::MonteCarlo)
                           ? integral_mc_var(tape, path, integrator.mc_samples, integrator.seed)
                           : integral_trapezoid_var(tape, path);
    return tape.sub(r, integral);
}

}  // namespace ctdg
