#include "data/gaussian.hpp"

#include <cmath>

namespace avdit {

JointGaussianSpec::JointGaussianSpec(const ModelConfig& mc, const GaussianDataConfig& dc)
    : mc_(mc), dc_(dc) {
    check_config(dc.factor_dim > 0, "data: factor_dim must be positive");
    check_config(dc.sigma_video > 0 && dc.sigma_audio > 0, "data: noise scales must be positive");
    frame_dim_ = static_cast<int64_t>(mc.video_h) * mc.video_w * mc.video_c;
    video_dim_ = frame_dim_ * mc.frames;
    audio_dim_ = mc.audio_numel();

    const int k = dc.factor_dim;
    double mean_m2 = 0;
    for (int m = 0; m < mc.frames; ++m) mean_m2 += static_cast<double>(m) * m;
    mean_m2 /= mc.frames;

    const double v_std = std::sqrt(dc.video_factor_var / k);
    const double w_std = mean_m2 > 0 ? std::sqrt(dc.video_trajectory_var / (k * mean_m2)) : 0.0;
    const double a_std = std::sqrt(dc.audio_factor_var / k);

    Rng rng(derive_seed(dc.map_seed, "gaussian-maps"));
    Eigen::MatrixXd v(frame_dim_, k), w(frame_dim_, k), a(audio_dim_, k);
    for (int64_t i = 0; i < frame_dim_; ++i)
        for (int j = 0; j < k; ++j) v(i, j) = v_std * rng.normal();
    for (int64_t i = 0; i < frame_dim_; ++i)
        for (int j = 0; j < k; ++j) w(i, j) = w_std * rng.normal();
    for (int64_t i = 0; i < audio_dim_; ++i)
        for (int j = 0; j < k; ++j) a(i, j) = a_std * rng.normal();

    g_.resize(total_dim(), k);
    for (int m = 0; m < mc.frames; ++m)
        g_.block(m * frame_dim_, 0, frame_dim_, k) = v + static_cast<double>(m) * w;
    g_.block(video_dim_, 0, audio_dim_, k) = a;
}

void JointGaussianSpec::sample_rows(int64_t n, Rng& rng, Eigen::Ref<Eigen::MatrixXd> out) const {
    check_contract(n > 0, "sample_rows: n must be positive");
    check_contract(out.rows() == n && out.cols() == total_dim(), "sample_rows: bad output shape");
    const int k = dc_.factor_dim;
    Eigen::MatrixXd s(n, k);
    for (int64_t i = 0; i < n; ++i) {
        for (int j = 0; j < k; ++j) s(i, j) = rng.normal();
        for (int64_t j = 0; j < video_dim_; ++j) out(i, j) = dc_.sigma_video * rng.normal();
        for (int64_t j = 0; j < audio_dim_; ++j)
            out(i, video_dim_ + j) = dc_.sigma_audio * rng.normal();
    }
    out.noalias() += s * g_.transpose();
}

const Eigen::MatrixXd& JointGaussianSpec::exact_covariance() const {
    if (sigma_.size() == 0) {
        sigma_ = g_ * g_.transpose();
        for (int64_t i = 0; i < video_dim_; ++i) sigma_(i, i) += dc_.sigma_video * dc_.sigma_video;
        for (int64_t i = video_dim_; i < total_dim(); ++i)
            sigma_(i, i) += dc_.sigma_audio * dc_.sigma_audio;
    }
    return sigma_;
}

void JointGaussianSpec::ensure_eigendecomposition() const {
    if (eig_ready_) return;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(exact_covariance());
    check_contract(es.info() == Eigen::Success, "gaussian: eigendecomposition failed");
    evals_ = es.eigenvalues();
    evecs_ = es.eigenvectors();
    mass_video_.resize(evals_.size());
    mass_audio_.resize(evals_.size());
    for (int64_t j = 0; j < evals_.size(); ++j) {
        mass_video_(j) = evecs_.col(j).head(video_dim_).squaredNorm();
        mass_audio_(j) = evecs_.col(j).tail(audio_dim_).squaredNorm();
    }
    eig_ready_ = true;
}

Eigen::MatrixXd JointGaussianSpec::analytic_eps(const Eigen::MatrixXd& x_t_rows, int t,
                                                const NoiseSchedule& s) const {
    check_contract(t >= 1 && t <= s.steps, "analytic_eps: t out of range");
    ensure_eigendecomposition();
    const double abar = s.alpha_bar[t - 1];
    Eigen::VectorXd inv_spec(evals_.size());
    for (int64_t j = 0; j < evals_.size(); ++j) {
        double denom = abar * evals_(j) + (1.0 - abar);
        check_contract(denom > 0, "analytic_eps: singular covariance");
        inv_spec(j) = 1.0 / denom;
    }
    Eigen::MatrixXd proj = x_t_rows * evecs_;  // [n, dim] in eigenbasis
    proj = proj * inv_spec.asDiagonal();
    return std::sqrt(1.0 - abar) * (proj * evecs_.transpose());
}

JointGaussianSpec::OptimalLoss JointGaussianSpec::optimal_expected_loss_at(
    int t, const NoiseSchedule& s) const {
    ensure_eigendecomposition();
    const double abar = s.alpha_bar[t - 1];
    double tr_v = 0, tr_a = 0;
    for (int64_t j = 0; j < evals_.size(); ++j) {
        double inv = 1.0 / (abar * evals_(j) + (1.0 - abar));
        tr_v += mass_video_(j) * inv;
        tr_a += mass_audio_(j) * inv;
    }
    OptimalLoss l;
    l.video = (static_cast<double>(video_dim_) - (1.0 - abar) * tr_v) / video_dim_;
    l.audio = (static_cast<double>(audio_dim_) - (1.0 - abar) * tr_a) / audio_dim_;
    l.total = l.video + l.audio;
    return l;
}

JointGaussianSpec::OptimalLoss JointGaussianSpec::optimal_expected_loss(
    const NoiseSchedule& s) const {
    OptimalLoss acc;
    for (int t = 1; t <= s.steps; ++t) {
        OptimalLoss l = optimal_expected_loss_at(t, s);
        acc.total += l.total;
        acc.video += l.video;
        acc.audio += l.audio;
    }
    acc.total /= s.steps;
    acc.video /= s.steps;
    acc.audio /= s.steps;
    return acc;
}

double covariance_frobenius_rel_err(const Eigen::MatrixXd& rows, const Eigen::MatrixXd& sigma) {
    Eigen::RowVectorXd mean = rows.colwise().mean();
    Eigen::MatrixXd centered = rows.rowwise() - mean;
    Eigen::MatrixXd emp = (centered.transpose() * centered) / static_cast<double>(rows.rows());
    return (emp - sigma).norm() / sigma.norm();
}

double cross_block_alignment(const Eigen::MatrixXd& rows, const Eigen::MatrixXd& sigma,
                             int64_t video_dim) {
    const int64_t audio_dim = sigma.cols() - video_dim;
    Eigen::RowVectorXd mean = rows.colwise().mean();
    Eigen::MatrixXd centered = rows.rowwise() - mean;
    Eigen::MatrixXd emp_cross = (centered.leftCols(video_dim).transpose() *
                                 centered.rightCols(audio_dim)) /
                                static_cast<double>(rows.rows());
    Eigen::MatrixXd exact_cross = sigma.topRightCorner(video_dim, audio_dim);
    double denom = emp_cross.norm() * exact_cross.norm();
    if (denom == 0) return 0.0;
    return (emp_cross.array() * exact_cross.array()).sum() / denom;
}

}  // namespace avdit
