#include "diffusion/ddpm.hpp"

#include <cmath>

namespace avdit {

PosteriorCoeffs posterior_coeffs(const NoiseSchedule& s, int t) {
    check_contract(t >= 1 && t <= s.steps, "posterior: t out of range 1.." + std::to_string(s.steps));
    const double abar = s.alpha_bar[t - 1];
    const double abar_prev = s.alpha_bar_prev[t - 1];
    const double alpha_eff = abar / abar_prev;
    const double beta_eff = 1.0 - alpha_eff;
    PosteriorCoeffs c;
    c.beta_eff = beta_eff;
    c.beta_tilde = (1.0 - abar_prev) / (1.0 - abar) * beta_eff;
    c.coef_x0 = std::sqrt(abar_prev) * beta_eff / (1.0 - abar);
    c.coef_xt = std::sqrt(alpha_eff) * (1.0 - abar_prev) / (1.0 - abar);
    c.sqrt_abar = std::sqrt(abar);
    c.sqrt_one_minus_abar = std::sqrt(1.0 - abar);
    return c;
}

}  // namespace avdit
