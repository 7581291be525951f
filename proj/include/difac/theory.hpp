#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

#include <difac/error.hpp>
#include <difac/rng.hpp>

namespace difac {

// ---------------------------------------------------------------------------
// Two-judge reliability analysis.
//
// A binary hypothesis H is positive with prior probability `pi`.  A decision
// judge votes positive with probability `p_d` when H is positive and `1-p_d`
// when it is negative; an exclusion judge releases the sample with
// probability `p_e` when H is positive and `1-p_e` when it is negative.  The
// two votes are independent given H.  The quantities below answer: how much
// does the exclusion judge's agreement sharpen the posterior belief that H is
// positive, beyond the decision judge alone?
// ---------------------------------------------------------------------------

struct JuryParams {
    double p_d = 0.5;   // decision-judge accuracy
    double p_e = 0.5;   // exclusion-judge accuracy
    double pi = 0.5;    // prior probability of the positive hypothesis

    void validate() const {
        auto interior = [](double v, const char* name) {
            if (!(v > 0.0 && v < 1.0))
                throw ConfigError(std::string("jury parameter ") + name + " must lie in (0,1), got " +
                                  std::to_string(v));
        };
        interior(p_d, "p_d");
        interior(p_e, "p_e");
        interior(pi, "pi");
    }
};

// Posterior that H is positive given both judges voted positive/released.
inline double posterior_joint(const JuryParams& p) {
    const double hit = p.p_d * p.p_e * p.pi;
    const double miss = (1.0 - p.p_d) * (1.0 - p.p_e) * (1.0 - p.pi);
    const double denom = hit + miss;
    if (denom <= 0.0)
        throw NumericError("joint posterior denominator degenerates to " + std::to_string(denom));
    return hit / denom;
}

// Posterior that H is positive given only the decision judge voted positive.
inline double posterior_single(double p_d, double pi) {
    const double hit = p_d * pi;
    const double miss = (1.0 - p_d) * (1.0 - pi);
    const double denom = hit + miss;
    if (denom <= 0.0)
        throw NumericError("single posterior denominator degenerates to " + std::to_string(denom));
    return hit / denom;
}

// Signed sharpening contributed by the exclusion judge.  Positive exactly
// when the exclusion judge is better than a coin flip (p_e > 1/2).
inline double exclusion_gain(const JuryParams& p) {
    return posterior_joint(p) - posterior_single(p.p_d, p.pi);
}

// ---------------------------------------------------------------------------
// Monte-Carlo cross-check of the closed forms above.
// ---------------------------------------------------------------------------

struct JuryEstimate {
    double joint = 0.0;        // empirical P(H positive | both voted positive)
    double joint_band = 0.0;   // 3-sigma half width of `joint`
    double single = 0.0;       // empirical P(H positive | decision judge voted positive)
    double single_band = 0.0;  // 3-sigma half width of `single`
    std::size_t n_joint = 0;   // conditioning events behind `joint`
    std::size_t n_single = 0;  // conditioning events behind `single`
    std::size_t trials = 0;
};

// Simulates the two-judge process `n` times and estimates both posteriors
// empirically, with 3-sigma binomial bands.  Throws SampleError if either
// conditioning event never occurred.
inline JuryEstimate simulate_jury(const JuryParams& p, std::size_t n, std::uint64_t seed) {
    p.validate();
    if (n < 1) throw ContractError("simulate_jury: need at least one trial");
    Rng rng(seed);
    std::size_t d_events = 0, d_hits = 0;    // decision judge voted positive; and H was positive
    std::size_t de_events = 0, de_hits = 0;  // both voted positive; and H was positive
    for (std::size_t t = 0; t < n; ++t) {
        const bool h = rng.bernoulli(p.pi);
        const bool d = rng.bernoulli(h ? p.p_d : 1.0 - p.p_d);
        const bool e = rng.bernoulli(h ? p.p_e : 1.0 - p.p_e);
        if (d) {
            ++d_events;
            if (h) ++d_hits;
            if (e) {
                ++de_events;
                if (h) ++de_hits;
            }
        }
    }
    if (d_events == 0)
        throw SampleError("simulate_jury: the decision judge never voted positive in " +
                          std::to_string(n) + " trials");
    if (de_events == 0)
        throw SampleError("simulate_jury: the judges never agreed positively in " +
                          std::to_string(n) + " trials");
    JuryEstimate est;
    est.trials = n;
    est.n_single = d_events;
    est.n_joint = de_events;
    est.single = static_cast<double>(d_hits) / static_cast<double>(d_events);
    est.joint = static_cast<double>(de_hits) / static_cast<double>(de_events);
    est.single_band = 3.0 * std::sqrt(est.single * (1.0 - est.single) / static_cast<double>(d_events));
    est.joint_band = 3.0 * std::sqrt(est.joint * (1.0 - est.joint) / static_cast<double>(de_events));
    return est;
}

// ---------------------------------------------------------------------------
// Grid emission for the CLI: every (p_d, p_e, pi) triple on a uniform grid,
// with the analytic posteriors and gain, optionally cross-checked by
// simulation.
// ---------------------------------------------------------------------------

struct TheoryGridRow {
    double p_d = 0.0, p_e = 0.0, pi = 0.0;
    double joint = 0.0, single = 0.0, gain = 0.0;
    bool has_mc = false;
    double mc_joint = 0.0, mc_single = 0.0;
};

inline std::vector<TheoryGridRow> theory_grid(double lo = 0.05, double hi = 0.95, double step = 0.05,
                                              std::size_t mc_trials = 0, std::uint64_t seed = 0) {
    if (!(lo > 0.0 && hi < 1.0 && lo <= hi && step > 0.0))
        throw ConfigError("theory grid bounds must satisfy 0 < lo <= hi < 1 with positive step");
    std::vector<double> axis;
    for (std::size_t k = 0;; ++k) {
        const double v = lo + step * static_cast<double>(k);
        if (v > hi + 1e-12) break;
        axis.push_back(v);
    }
    std::vector<TheoryGridRow> rows;
    rows.reserve(axis.size() * axis.size() * axis.size());
    std::uint64_t point = 0;
    for (double p_d : axis)
        for (double p_e : axis)
            for (double pi : axis) {
                TheoryGridRow r;
                r.p_d = p_d;
                r.p_e = p_e;
                r.pi = pi;
                const JuryParams jp{p_d, p_e, pi};
                r.joint = posterior_joint(jp);
                r.single = posterior_single(p_d, pi);
                r.gain = r.joint - r.single;
                if (mc_trials > 0) {
                    const auto est = simulate_jury(jp, mc_trials, seed + point);
                    r.has_mc = true;
                    r.mc_joint = est.joint;
                    r.mc_single = est.single;
                }
                ++point;
                rows.push_back(r);
            }
    return rows;
}

inline void write_theory_csv(std::ostream& os, const std::vector<TheoryGridRow>& rows) {
    os << "p_d,p_e,pi,joint,single,gain,mc_joint,mc_single\n";
    os << std::setprecision(17);
    for (const auto& r : rows) {
        os << r.p_d << ',' << r.p_e << ',' << r.pi << ',' << r.joint << ',' << r.single << ','
           << r.gain << ',';
        if (r.has_mc)
            os << r.mc_joint << ',' << r.mc_single;
        else
            os << ',';
        os << '\n';
    }
}

// ---------------------------------------------------------------------------
// One-step pseudo-label risk demonstration.
//
// A logistic regressor is trained near convergence on samples from a 1-D
// two-class Gaussian mixture, then nudged by a single gradient step on one
// held-out sample labeled either correctly or incorrectly.  Because the
// mixture is analytic the population risk (expected cross-entropy) is
// computable by numerical integration, so the risk change of each nudge is
// measured directly rather than through any second-order approximation.
// ---------------------------------------------------------------------------

struct RiskDemoConfig {
    double mean = 1.0;          // mixture component means at +/- mean
    double stddev = 1.0;        // shared component spread
    // Enough samples that the fitted model sits near the *population* risk
    // minimizer, not merely an empirical one: with small draws the O(1/sqrt(n))
    // parameter gap injects first-order risk noise that swamps the one-step
    // effect being demonstrated.
    std::size_t n_train = 20000;
    double train_lr = 0.5;      // full-batch gradient-descent rate
    double grad_tol = 1e-3;     // "near convergence": gradient norm below this
    std::size_t max_iters = 200000;
    double eta = 0.1;           // learning rate of the single pseudo-label step
    std::size_t grid_points = 4801;  // population-risk integration resolution
    double grid_halfwidth = 12.0;    // integrate x over [-halfwidth, +halfwidth]

    void validate() const {
        if (!(stddev > 0.0)) throw ConfigError("risk demo: stddev must be positive");
        if (n_train < 2) throw ConfigError("risk demo: need at least two training samples");
        if (!(train_lr > 0.0)) throw ConfigError("risk demo: training rate must be positive");
        if (!(grad_tol > 0.0)) throw ConfigError("risk demo: gradient tolerance must be positive");
        if (eta < 0.0) throw ConfigError("risk demo: step size must be nonnegative");
        if (grid_points < 3 || grid_points % 2 == 0)
            throw ConfigError("risk demo: integration grid needs an odd point count >= 3");
    }
};

namespace detail {

inline double sigmoid(double z) {
    return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

// Numerically stable -log p(y|x) for the logistic model at logit z.
inline double logistic_loss(double z, int y) {
    // log(1 + exp(-|z|)) + max(0, -yz form)
    const double m = z > 0.0 ? z : 0.0;
    const double log1pe = m + std::log(std::exp(-m) + std::exp(z - m));  // log(1+e^z)
    return y == 1 ? log1pe - z : log1pe;
}

// Population risk of the logistic model (w, b) on the symmetric two-class
// mixture: classes +/- are equally likely, x | class ~ Normal(+/-mean, stddev).
// Simpson integration on a fixed symmetric grid.
inline double mixture_population_risk(double w, double b, const RiskDemoConfig& cfg) {
    const double h = 2.0 * cfg.grid_halfwidth / static_cast<double>(cfg.grid_points - 1);
    const double inv_norm = 1.0 / (cfg.stddev * std::sqrt(2.0 * 3.14159265358979323846));
    double acc = 0.0;
    for (std::size_t i = 0; i < cfg.grid_points; ++i) {
        const double x = -cfg.grid_halfwidth + h * static_cast<double>(i);
        const double zp = (x - cfg.mean) / cfg.stddev;
        const double zn = (x + cfg.mean) / cfg.stddev;
        const double dens_pos = inv_norm * std::exp(-0.5 * zp * zp);  // class 1 density
        const double dens_neg = inv_norm * std::exp(-0.5 * zn * zn);  // class 0 density
        const double z = w * x + b;
        const double f = 0.5 * dens_pos * logistic_loss(z, 1) + 0.5 * dens_neg * logistic_loss(z, 0);
        const double weight = (i == 0 || i + 1 == cfg.grid_points) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
        acc += weight * f;
    }
    return acc * h / 3.0;
}

} // namespace detail

struct RiskDeltaStats {
    std::vector<double> delta_correct;  // population-risk change per repeat, correct label
    std::vector<double> delta_wrong;    // same sample, flipped label
    double mean_correct = 0.0;
    double mean_wrong = 0.0;
    double mean_abs_correct = 0.0;
    std::size_t repeats = 0;
};

// Runs the demonstration over `repeats` independent seeds and reports the
// averaged risk changes.  The headline facts it exhibits: a wrongly labeled
// step raises the population risk on average, while a correctly labeled step
// moves it by comparatively almost nothing.
inline RiskDeltaStats risk_delta_demo(std::uint64_t seed, std::size_t repeats = 30,
                                      const RiskDemoConfig& cfg = {}) {
    cfg.validate();
    if (repeats < 1) throw ContractError("risk_delta_demo: need at least one repeat");
    RiskDeltaStats out;
    out.repeats = repeats;
    out.delta_correct.reserve(repeats);
    out.delta_wrong.reserve(repeats);
    for (std::size_t r = 0; r < repeats; ++r) {
        Rng rng(seed + r);
        // Draw the training sample: balanced labels, Gaussian features.
        std::vector<double> xs(cfg.n_train);
        std::vector<int> ys(cfg.n_train);
        for (std::size_t i = 0; i < cfg.n_train; ++i) {
            ys[i] = rng.bernoulli(0.5) ? 1 : 0;
            xs[i] = rng.normal(ys[i] == 1 ? cfg.mean : -cfg.mean, cfg.stddev);
        }
        // Full-batch gradient descent to near convergence.
        double w = 0.0, b = 0.0;
        for (std::size_t it = 0; it < cfg.max_iters; ++it) {
            double gw = 0.0, gb = 0.0;
            for (std::size_t i = 0; i < cfg.n_train; ++i) {
                const double err = detail::sigmoid(w * xs[i] + b) - static_cast<double>(ys[i]);
                gw += err * xs[i];
                gb += err;
            }
            gw /= static_cast<double>(cfg.n_train);
            gb /= static_cast<double>(cfg.n_train);
            if (std::sqrt(gw * gw + gb * gb) < cfg.grad_tol) break;
            w -= cfg.train_lr * gw;
            b -= cfg.train_lr * gb;
        }
        // One held-out sample, stepped once with each labeling.
        const int y_true = rng.bernoulli(0.5) ? 1 : 0;
        const double x_new = rng.normal(y_true == 1 ? cfg.mean : -cfg.mean, cfg.stddev);
        const double risk_before = detail::mixture_population_risk(w, b, cfg);
        auto stepped_risk = [&](int label) {
            const double err = detail::sigmoid(w * x_new + b) - static_cast<double>(label);
            return detail::mixture_population_risk(w - cfg.eta * err * x_new, b - cfg.eta * err, cfg);
        };
        out.delta_correct.push_back(stepped_risk(y_true) - risk_before);
        out.delta_wrong.push_back(stepped_risk(1 - y_true) - risk_before);
    }
    for (std::size_t r = 0; r < repeats; ++r) {
        out.mean_correct += out.delta_correct[r];
        out.mean_wrong += out.delta_wrong[r];
        out.mean_abs_correct += std::abs(out.delta_correct[r]);
    }
    out.mean_correct /= static_cast<double>(repeats);
    out.mean_wrong /= static_cast<double>(repeats);
    out.mean_abs_correct /= static_cast<double>(repeats);
    return out;
}

} // namespace difac
