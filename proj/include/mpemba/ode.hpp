#pragma once

// Adaptive Dormand-Prince 5(4) with FSAL, generic over Eigen dense states.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include "core.hpp"

namespace mpemba::ode {

struct Controls {
    double rtol = 1e-8;
    double atol = 1e-10;
    double h_init = 0.0;  // 0 picks a step from the initial derivative
    double h_max = std::numeric_limits<double>::infinity();
    long max_steps = 50'000'000;
};

enum class GuardResult { reject, keep, modified };

template <class State>
class DormandPrince {
public:
    using Rhs = std::function<State(double, const State&)>;
    // Runs on every trial step; may clamp the state in place.
    using Guard = std::function<GuardResult(State&)>;
    // Runs after every accepted step; returning true stops the integration.
    using StepHook = std::function<bool(double, const State&)>;

    DormandPrince(Rhs f, double t0, State y0, Controls c = {}, Guard guard = {})
        : f_(std::move(f)), guard_(std::move(guard)), c_(c), t_(t0), y_(std::move(y0))
    {
        if (!(c_.rtol > 0.0) || !(c_.atol > 0.0)) throw ValidationError("ode tolerances must be positive");
        k1_ = f_(t_, y_);
        ++evals_;
        h_ = c_.h_init > 0.0 ? c_.h_init : initial_step();
    }

    double t() const { return t_; }
    const State& y() const { return y_; }
    long steps() const { return steps_; }
    long rejected() const { return rejected_; }
    long evaluations() const { return evals_; }

    // Integrates up to exactly t_end. Returns false if the hook asked to stop early.
    bool advance_to(double t_end, const StepHook& hook = {})
    {
        if (t_end < t_) throw ValidationError("ode cannot integrate backwards");
        bool last_rejected = false;
        while (t_ < t_end) {
            if (steps_ + rejected_ >= c_.max_steps) throw NumericalError("ode step budget exhausted");
            double h = std::min({h_, c_.h_max, t_end - t_});
            const bool hits_end = h >= t_end - t_;
            if (h < 1e-14 * std::max(1.0, std::abs(t_))) throw NumericalError("ode step size underflow");

            State k2 = f_(t_ + h / 5, y_ + h * (k1_ / 5));
            State k3 = f_(t_ + 3 * h / 10, y_ + h * (3.0 / 40 * k1_ + 9.0 / 40 * k2));
            State k4 = f_(t_ + 4 * h / 5, y_ + h * (44.0 / 45 * k1_ - 56.0 / 15 * k2 + 32.0 / 9 * k3));
            State k5 = f_(t_ + 8 * h / 9, y_ + h * (19372.0 / 6561 * k1_ - 25360.0 / 2187 * k2 +
                                                    64448.0 / 6561 * k3 - 212.0 / 729 * k4));
            State k6 = f_(t_ + h, y_ + h * (9017.0 / 3168 * k1_ - 355.0 / 33 * k2 + 46732.0 / 5247 * k3 +
                                            49.0 / 176 * k4 - 5103.0 / 18656 * k5));
            State y_new = y_ + h * (35.0 / 384 * k1_ + 500.0 / 1113 * k3 + 125.0 / 192 * k4 -
                                    2187.0 / 6784 * k5 + 11.0 / 84 * k6);
            State k7 = f_(t_ + h, y_new);
            evals_ += 6;
            State err = h * (71.0 / 57600 * k1_ - 71.0 / 16695 * k3 + 71.0 / 1920 * k4 -
                             17253.0 / 339200 * k5 + 22.0 / 525 * k6 - 1.0 / 40 * k7);

            const double e = error_norm(err, y_new);
            GuardResult g = GuardResult::keep;
            if (e <= 1.0 && guard_) g = guard_(y_new);
            if (e > 1.0 || g == GuardResult::reject || !std::isfinite(e)) {
                ++rejected_;
                const double shrink = std::isfinite(e) && e > 1.0 ? std::max(0.2, 0.9 * std::pow(e, -0.2)) : 0.5;
                h_ = h * shrink;
                last_rejected = true;
                continue;
            }
            t_ = hits_end ? t_end : t_ + h;
            y_ = std::move(y_new);
            if (g == GuardResult::modified) {
                k1_ = f_(t_, y_);
                ++evals_;
            } else {
                k1_ = std::move(k7);
            }
            ++steps_;
            double grow = e > 0.0 ? 0.9 * std::pow(e, -0.2) : 5.0;
            grow = std::clamp(grow, 0.2, last_rejected ? 1.0 : 5.0);
            // A step clipped to land on t_end says nothing about the natural step size.
            if (!(hits_end && h < h_)) h_ = h * grow;
            last_rejected = false;
            if (hook && hook(t_, y_)) return false;
        }
        return true;
    }

private:
    double error_norm(const State& err, const State& y_new) const
    {
        auto scale = c_.atol + c_.rtol * y_.array().abs().max(y_new.array().abs());
        return (err.array().abs() / scale).maxCoeff();
    }

    double initial_step() const
    {
        auto scale = c_.atol + c_.rtol * y_.array().abs();
        const double d0 = (y_.array().abs() / scale).maxCoeff();
        const double d1 = (k1_.array().abs() / scale).maxCoeff();
        if (d0 < 1e-5 || d1 < 1e-5) return 1e-6;
        return 0.01 * d0 / d1;
    }

    Rhs f_;
    Guard guard_;
    Controls c_;
    double t_;
    State y_;
    State k1_;
    double h_ = 0.0;
    long steps_ = 0;
    long rejected_ = 0;
    long evals_ = 0;
};

}  // namespace mpemba::ode
