#include "diffusion/schedule.hpp"

#include <cmath>

namespace avdit {

NoiseSchedule make_linear_schedule(int steps, double beta1, double betaT) {
    check_config(steps >= 2, "schedule: need at least 2 steps");
    check_config(0.0 < beta1 && beta1 < betaT && betaT < 1.0,
                 "schedule: require 0 < beta1 < betaT < 1");
    NoiseSchedule s;
    s.steps = steps;
    s.beta.resize(steps);
    s.alpha.resize(steps);
    s.alpha_bar.resize(steps);
    s.alpha_bar_prev.resize(steps);
    s.timestep.resize(steps);
    double running = 1.0;
    for (int i = 0; i < steps; ++i) {
        double w = static_cast<double>(i) / static_cast<double>(steps - 1);
        // lerp form keeps both endpoints exact in floating point
        s.beta[i] = beta1 * (1.0 - w) + betaT * w;
        s.alpha[i] = 1.0 - s.beta[i];
        s.alpha_bar_prev[i] = running;
        running *= s.alpha[i];
        s.alpha_bar[i] = running;
        s.timestep[i] = i + 1;
    }
    return s;
}

NoiseSchedule respace(const NoiseSchedule& s, int n) {
    check_config(n >= 1 && n <= s.steps, "respace: need 1 <= n <= " + std::to_string(s.steps));
    NoiseSchedule r;
    r.steps = n;
    r.beta.resize(n);
    r.alpha.resize(n);
    r.alpha_bar.resize(n);
    r.alpha_bar_prev.resize(n);
    r.timestep.resize(n);
    double prev_abar = 1.0;
    for (int k = 1; k <= n; ++k) {
        int t = static_cast<int>(std::llround(static_cast<double>(k) * s.steps /
                                              static_cast<double>(n)));
        if (t < 1) t = 1;
        if (t > s.steps) t = s.steps;
        int i = k - 1;
        r.timestep[i] = s.timestep[t - 1];
        r.alpha_bar[i] = s.alpha_bar[t - 1];
        r.alpha_bar_prev[i] = prev_abar;
        r.alpha[i] = r.alpha_bar[i] / prev_abar;
        r.beta[i] = 1.0 - r.alpha[i];
        prev_abar = r.alpha_bar[i];
    }
    return r;
}

}  // namespace avdit
