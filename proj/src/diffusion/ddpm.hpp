#pragma once

#include <functional>

#include "core/rng.hpp"
#include "core/tape.hpp"
#include "diffusion/schedule.hpp"
#include "model/config.hpp"

namespace avdit {

// Paired video/audio latents at a common diffusion step.
template <class T>
struct LatentPair {
    Array<T> video;      // [B, M, H', W', c_v]
    Array<T> audio;      // [B, T', F', c_a]
    std::vector<int> t;  // per-sample timestep, 1-based; empty means t = 0 (clean)
};

// sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps
template <class T>
Array<T> q_sample(const Array<T>& x0, int t, const Array<T>& eps, const NoiseSchedule& s) {
    check_contract(t >= 1 && t <= s.steps, "q_sample: t out of range 1.." + std::to_string(s.steps));
    check_shape(eps.shape == x0.shape, "q_sample: eps shape " + shape_str(eps.shape) +
                                           " does not match x0 " + shape_str(x0.shape));
    const double ab = s.alpha_bar[t - 1];
    const T c0 = static_cast<T>(std::sqrt(ab));
    const T c1 = static_cast<T>(std::sqrt(1.0 - ab));
    Array<T> out(x0.shape);
    for (int64_t i = 0; i < x0.numel(); ++i) out.v[i] = c0 * x0.v[i] + c1 * eps.v[i];
    return out;
}

// Per-sample timesteps over a batch-major tensor.
template <class T>
Array<T> q_sample_batch(const Array<T>& x0, const std::vector<int>& t, const Array<T>& eps,
                        const NoiseSchedule& s) {
    check_shape(eps.shape == x0.shape, "q_sample: eps/x0 shape mismatch");
    check_contract(!x0.shape.empty() && static_cast<int64_t>(t.size()) == x0.shape[0],
                   "q_sample: need one timestep per batch element");
    const int64_t per = x0.numel() / x0.shape[0];
    Array<T> out(x0.shape);
    for (size_t b = 0; b < t.size(); ++b) {
        check_contract(t[b] >= 1 && t[b] <= s.steps, "q_sample: t out of range");
        const double ab = s.alpha_bar[t[b] - 1];
        const T c0 = static_cast<T>(std::sqrt(ab));
        const T c1 = static_cast<T>(std::sqrt(1.0 - ab));
        const int64_t off = static_cast<int64_t>(b) * per;
        for (int64_t i = 0; i < per; ++i) out.v[off + i] = c0 * x0.v[off + i] + c1 * eps.v[off + i];
    }
    return out;
}

// Reverse-step coefficients at 1-based step `t` of the schedule. All derived
// from the (alpha_bar, alpha_bar_prev) pair so that respaced and parent
// schedules sharing those values produce identical trajectories.
struct PosteriorCoeffs {
    double coef_x0 = 0;   // weight of x0_hat in the posterior mean
    double coef_xt = 0;   // weight of x_t in the posterior mean
    double beta_eff = 0;  // effective beta of this step
    double beta_tilde = 0;
    double sqrt_abar = 0;
    double sqrt_one_minus_abar = 0;
};

PosteriorCoeffs posterior_coeffs(const NoiseSchedule& s, int t);

template <class T>
struct PosteriorParams {
    Array<T> mean;
    double variance = 0;
};

// x0_hat = (x_t - sqrt(1-abar) eps_hat) / sqrt(abar);
// mean = coef_x0 * x0_hat + coef_xt * x_t
template <class T>
PosteriorParams<T> posterior_params(const Array<T>& x_t, const Array<T>& eps_hat, int t,
                                    const NoiseSchedule& s) {
    check_shape(x_t.shape == eps_hat.shape, "posterior: shape mismatch");
    PosteriorCoeffs c = posterior_coeffs(s, t);
    PosteriorParams<T> out;
    out.mean = Array<T>(x_t.shape);
    const double inv_sab = 1.0 / c.sqrt_abar;
    for (int64_t i = 0; i < x_t.numel(); ++i) {
        double x0_hat = (static_cast<double>(x_t.v[i]) -
                         c.sqrt_one_minus_abar * static_cast<double>(eps_hat.v[i])) *
                        inv_sab;
        out.mean.v[i] = static_cast<T>(c.coef_x0 * x0_hat + c.coef_xt * static_cast<double>(x_t.v[i]));
    }
    out.variance = c.beta_tilde;
    return out;
}

// Model abstraction used by the sampler: one joint evaluation produces the
// noise prediction for both modalities (plus raw variance channels in
// learned-variance mode). This lets the analytic oracle stand in for the
// network.
template <class T>
struct DenoiseOutput {
    Array<T> eps_v, eps_a;
    Array<T> var_v, var_a;  // optional raw channels; empty when unused
};

template <class T>
using DenoiseFn = std::function<DenoiseOutput<T>(const Array<T>& zv, const Array<T>& za,
                                                 const std::vector<int>& t_model)>;

namespace detail {

// x_{t-1} = mean + sigma * z; learned-range mode interpolates the
// log-variance between beta_eff and beta_tilde via frac = (v+1)/2.
template <class T>
void reverse_update(Array<T>& x, const Array<T>& eps_hat, const Array<T>& var_raw,
                    const PosteriorCoeffs& c, bool add_noise, VarianceMode vmode, Rng& rng) {
    const double inv_sab = 1.0 / c.sqrt_abar;
    const double log_beta_eff = std::log(c.beta_eff);
    const double log_beta_tilde = c.beta_tilde > 0 ? std::log(c.beta_tilde) : log_beta_eff;
    for (int64_t i = 0; i < x.numel(); ++i) {
        double x0_hat =
            (static_cast<double>(x.v[i]) - c.sqrt_one_minus_abar * static_cast<double>(eps_hat.v[i])) *
            inv_sab;
        double mean = c.coef_x0 * x0_hat + c.coef_xt * static_cast<double>(x.v[i]);
        double value = mean;
        if (add_noise) {
            double var;
            if (vmode == VarianceMode::kLearnedRange && var_raw.numel() == x.numel()) {
                double frac = 0.5 * (static_cast<double>(var_raw.v[i]) + 1.0);
                var = std::exp(frac * log_beta_eff + (1.0 - frac) * log_beta_tilde);
            } else {
                var = c.beta_tilde;
            }
            value += std::sqrt(var) * rng.normal();
        }
        x.v[i] = static_cast<T>(value);
    }
}

}  // namespace detail

// One reverse step at 1-based step `t` of schedule `s`. The pair must carry
// x_t; returns the pair at the previous retained step. Noise is consumed
// video-first, then audio, elementwise, so trajectories are reproducible
// from the rng stream alone.
template <class T>
LatentPair<T> ddpm_step(const DenoiseFn<T>& model, const LatentPair<T>& pair, int t,
                        const NoiseSchedule& s, VarianceMode vmode, Rng& rng) {
    check_contract(t >= 1 && t <= s.steps, "ddpm_step: t out of range");
    const int t_model = s.timestep[t - 1];
    std::vector<int> ts(static_cast<size_t>(pair.video.shape[0]), t_model);
    DenoiseOutput<T> out = model(pair.video, pair.audio, ts);
    check_shape(out.eps_v.shape == pair.video.shape && out.eps_a.shape == pair.audio.shape,
                "ddpm_step: model output shapes do not match latents");
    PosteriorCoeffs c = posterior_coeffs(s, t);
    const bool add_noise = t > 1;
    LatentPair<T> next;
    next.video = pair.video;
    next.audio = pair.audio;
    detail::reverse_update(next.video, out.eps_v, out.var_v, c, add_noise, vmode, rng);
    detail::reverse_update(next.audio, out.eps_a, out.var_a, c, add_noise, vmode, rng);
    next.t.assign(ts.size(), t - 1);
    return next;
}

// Full reverse run from pure Gaussian noise over a schedule respaced to
// n_steps. Returns latents at t = 0.
template <class T>
LatentPair<T> sample_joint(const DenoiseFn<T>& model, const Shape& video_shape,
                           const Shape& audio_shape, const NoiseSchedule& s, int n_steps, Rng& rng,
                           VarianceMode vmode = VarianceMode::kFixed,
                           const std::function<void(int, int)>& progress = nullptr) {
    NoiseSchedule r = respace(s, n_steps);
    LatentPair<T> pair;
    pair.video = Array<T>(video_shape);
    pair.audio = Array<T>(audio_shape);
    rng.fill_normal(pair.video.data(), pair.video.numel());
    rng.fill_normal(pair.audio.data(), pair.audio.numel());
    for (int t = r.steps; t >= 1; --t) {
        pair = ddpm_step(model, pair, t, r, vmode, rng);
        if (progress) progress(r.steps - t + 1, r.steps);
    }
    return pair;
}

// ---------------------------------------------------------------------------
// Training objective
// ---------------------------------------------------------------------------

// Tape-level noise/variance predictions in latent layout.
struct EpsPrediction {
    Var eps_v, var_v;
    Var eps_a, var_a;
};

template <class T>
struct LossTerms {
    Var total, video, audio;
};

// L = MSE(eps_v, eps_hat_v) + MSE(eps_a, eps_hat_a); both modality terms
// carry unit weight.
template <class T>
LossTerms<T> joint_training_loss(Tape<T>& tape, const EpsPrediction& pred, const Array<T>& eps_v,
                                 const Array<T>& eps_a) {
    Var lv = tape.mse(pred.eps_v, tape.constant(eps_v));
    Var la = tape.mse(pred.eps_a, tape.constant(eps_a));
    return {tape.add(lv, la), lv, la};
}

namespace detail {

// KL(q(x_{t-1}|x_t,x0) || p(x_{t-1}|x_t)) summed into a masked mean; only the
// variance channels receive gradient, the p-mean uses detached eps_hat.
template <class T>
Var vlb_variance_term(Tape<T>& tape, Var var_raw, const Array<T>& x0, const Array<T>& x_t,
                      const Array<T>& eps_hat_det, const std::vector<int>& ts,
                      const NoiseSchedule& s) {
    const Shape& shape = tape.shape(var_raw);
    const int64_t per = numel(shape) / shape[0];
    Array<T> delta_log(shape);   // log beta_eff - log beta_tilde
    Array<T> base_log(shape);    // log beta_tilde
    Array<T> sq_term(shape);     // beta_tilde + (mu_q - mu_p)^2
    Array<T> mask(shape);
    int64_t live = 0;
    for (size_t b = 0; b < ts.size(); ++b) {
        const int t = ts[b];
        const int64_t off = static_cast<int64_t>(b) * per;
        if (t <= 1) {
            // no noise is added at the final reverse step, the variance
            // channel has no effect there
            for (int64_t i = 0; i < per; ++i) {
                mask.v[off + i] = T(0);
                delta_log.v[off + i] = T(0);
                base_log.v[off + i] = T(0);
                sq_term.v[off + i] = T(0);
            }
            continue;
        }
        live += per;
        PosteriorCoeffs c = posterior_coeffs(s, t);
        const double lbe = std::log(c.beta_eff);
        const double lbt = std::log(c.beta_tilde);
        const double inv_sab = 1.0 / c.sqrt_abar;
        for (int64_t i = 0; i < per; ++i) {
            double xt = static_cast<double>(x_t.v[off + i]);
            double mu_q = c.coef_x0 * static_cast<double>(x0.v[off + i]) + c.coef_xt * xt;
            double x0_hat =
                (xt - c.sqrt_one_minus_abar * static_cast<double>(eps_hat_det.v[off + i])) * inv_sab;
            double mu_p = c.coef_x0 * x0_hat + c.coef_xt * xt;
            double d = mu_q - mu_p;
            mask.v[off + i] = T(1);
            delta_log.v[off + i] = static_cast<T>(lbe - lbt);
            base_log.v[off + i] = static_cast<T>(lbt);
            sq_term.v[off + i] = static_cast<T>(c.beta_tilde + d * d);
        }
    }
    if (live == 0) return tape.constant(Array<T>(Shape{1}));
    // log sigma^2 = base + frac * delta, frac = (v+1)/2
    Var frac = tape.scale(tape.add_scalar(var_raw, T(1)), T(0.5));
    Var log_var = tape.add(tape.constant(base_log), tape.mul(frac, tape.constant(delta_log)));
    // KL = 0.5 (log sigma^2 - log beta_tilde + exp(-log sigma^2) sq_term - 1)
    Var kl = tape.sub(log_var, tape.constant(base_log));
    kl = tape.add(kl, tape.mul(tape.exp(tape.scale(log_var, T(-1))), tape.constant(sq_term)));
    kl = tape.scale(tape.add_scalar(kl, T(-1)), T(0.5));
    kl = tape.mul(kl, tape.constant(mask));
    const double correction = static_cast<double>(numel(shape)) / static_cast<double>(live);
    return tape.scale(tape.mean_all(kl), static_cast<T>(correction));
}

}  // namespace detail

// Eq-style joint loss plus, in learned-range mode, the VLB KL on the variance
// channels with the mean contribution detached.
template <class T>
LossTerms<T> joint_training_loss_full(Tape<T>& tape, const EpsPrediction& pred,
                                      const LatentPair<T>& clean, const LatentPair<T>& noisy,
                                      const Array<T>& eps_v, const Array<T>& eps_a,
                                      const NoiseSchedule& s, VarianceMode vmode) {
    LossTerms<T> terms = joint_training_loss(tape, pred, eps_v, eps_a);
    if (vmode != VarianceMode::kLearnedRange) return terms;
    Array<T> ev_det = tape.array(pred.eps_v);
    Array<T> ea_det = tape.array(pred.eps_a);
    Var vlb_v = detail::vlb_variance_term(tape, pred.var_v, clean.video, noisy.video, ev_det,
                                          noisy.t, s);
    Var vlb_a = detail::vlb_variance_term(tape, pred.var_a, clean.audio, noisy.audio, ea_det,
                                          noisy.t, s);
    terms.total = tape.add(terms.total, tape.add(vlb_v, vlb_a));
    return terms;
}

}  // namespace avdit
