#pragma once

#include <Eigen/Dense>
#include <memory>

#include "core/rng.hpp"
#include "diffusion/ddpm.hpp"
#include "diffusion/schedule.hpp"
#include "model/config.hpp"

namespace avdit {

struct GaussianDataConfig {
    int factor_dim = 8;
    double sigma_video = 0.3;
    double sigma_audio = 0.3;
    // per-element variance contributed by the shared factor and by the
    // per-frame trajectory term (averaged over frames)
    double video_factor_var = 0.6;
    double video_trajectory_var = 0.3;
    double audio_factor_var = 0.91;
    uint64_t map_seed = 0;
};

// Jointly Gaussian paired latents with a closed-form optimal denoiser.
// Construction: s ~ N(0, I_k); frame m of z_v = (V + m W) s + sigma_v eta;
// z_a = A s + sigma_a eta'. The flattened pair is video-first, row-major.
class JointGaussianSpec {
public:
    JointGaussianSpec(const ModelConfig& mc, const GaussianDataConfig& dc);

    int64_t video_dim() const { return video_dim_; }
    int64_t audio_dim() const { return audio_dim_; }
    int64_t total_dim() const { return video_dim_ + audio_dim_; }
    const ModelConfig& model_config() const { return mc_; }
    const GaussianDataConfig& data_config() const { return dc_; }

    // n flattened draws into out[n][total_dim], sample-major rng consumption
    void sample_rows(int64_t n, Rng& rng, Eigen::Ref<Eigen::MatrixXd> out) const;

    template <class T>
    LatentPair<T> sample_pairs(int64_t n, Rng& rng) const {
        check_contract(n > 0, "sample_pairs: n must be positive");
        Eigen::MatrixXd rows(n, total_dim());
        sample_rows(n, rng, rows);
        return rows_to_pair<T>(rows);
    }

    template <class T>
    LatentPair<T> rows_to_pair(const Eigen::MatrixXd& rows) const {
        const int64_t n = rows.rows();
        LatentPair<T> p;
        p.video = Array<T>(Shape{n, mc_.frames, mc_.video_h, mc_.video_w, mc_.video_c});
        p.audio = Array<T>(Shape{n, mc_.audio_t, mc_.audio_f, mc_.audio_c});
        for (int64_t i = 0; i < n; ++i) {
            for (int64_t j = 0; j < video_dim_; ++j)
                p.video.v[i * video_dim_ + j] = static_cast<T>(rows(i, j));
            for (int64_t j = 0; j < audio_dim_; ++j)
                p.audio.v[i * audio_dim_ + j] = static_cast<T>(rows(i, video_dim_ + j));
        }
        return p;
    }

    template <class T>
    Eigen::MatrixXd pair_to_rows(const LatentPair<T>& p) const {
        const int64_t n = p.video.shape[0];
        Eigen::MatrixXd rows(n, total_dim());
        for (int64_t i = 0; i < n; ++i) {
            for (int64_t j = 0; j < video_dim_; ++j)
                rows(i, j) = static_cast<double>(p.video.v[i * video_dim_ + j]);
            for (int64_t j = 0; j < audio_dim_; ++j)
                rows(i, video_dim_ + j) = static_cast<double>(p.audio.v[i * audio_dim_ + j]);
        }
        return rows;
    }

    // Sigma assembled analytically from the maps and noise scales.
    const Eigen::MatrixXd& exact_covariance() const;

    // Bayes-optimal noise predictor for x_t rows formed by q_sample:
    // eps*(x_t, t) = sqrt(1-abar) (abar Sigma + (1-abar) I)^{-1} x_t
    Eigen::MatrixXd analytic_eps(const Eigen::MatrixXd& x_t_rows, int t,
                                 const NoiseSchedule& s) const;

    struct OptimalLoss {
        double total = 0, video = 0, audio = 0;
    };
    // expected per-element MSE of the optimal predictor at step t
    OptimalLoss optimal_expected_loss_at(int t, const NoiseSchedule& s) const;
    // averaged over t uniform in {1..T}
    OptimalLoss optimal_expected_loss(const NoiseSchedule& s) const;

    // DenoiseFn view of the oracle, usable wherever a model is expected
    template <class T>
    DenoiseFn<T> as_denoiser(const NoiseSchedule& s) const {
        return [this, &s](const Array<T>& zv, const Array<T>& za,
                          const std::vector<int>& ts) -> DenoiseOutput<T> {
            LatentPair<T> pair{zv, za, ts};
            Eigen::MatrixXd rows = pair_to_rows(pair);
            check_contract(!ts.empty(), "oracle denoiser: empty batch");
            for (int t : ts) check_contract(t == ts[0], "oracle denoiser: mixed timesteps");
            Eigen::MatrixXd eps = analytic_eps(rows, ts[0], s);
            LatentPair<T> ep = rows_to_pair<T>(eps);
            return {std::move(ep.video), std::move(ep.audio), {}, {}};
        };
    }

private:
    void ensure_eigendecomposition() const;

    ModelConfig mc_;
    GaussianDataConfig dc_;
    int64_t video_dim_ = 0, audio_dim_ = 0, frame_dim_ = 0;
    Eigen::MatrixXd g_;  // [total_dim, k]
    mutable Eigen::MatrixXd sigma_;
    mutable Eigen::MatrixXd evecs_;
    mutable Eigen::VectorXd evals_;
    mutable Eigen::VectorXd mass_video_, mass_audio_;  // per-eigenvector modality masses
    mutable bool eig_ready_ = false;
};

// ||emp_cov(X) - Sigma||_F / ||Sigma||_F
double covariance_frobenius_rel_err(const Eigen::MatrixXd& rows, const Eigen::MatrixXd& sigma);

// Normalized inner product between the empirical and exact video/audio
// cross-covariance blocks; positive means the correlation structure has the
// right sign.
double cross_block_alignment(const Eigen::MatrixXd& rows, const Eigen::MatrixXd& sigma,
                             int64_t video_dim);

}  // namespace avdit
