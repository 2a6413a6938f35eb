#pragma once

#include <vector>

#include "core/common.hpp"

namespace avdit {

// Forward-process coefficients over the (possibly respaced) step sequence.
// Entry i corresponds to step i+1 of this schedule; `timestep[i]` is the
// 1-based step of the original schedule it came from, which is what the
// model's time conditioning consumes.
//
// Sampling-side quantities (posterior mean/variance) are derived from the
// alpha_bar pair (alpha_bar[i], alpha_bar_prev[i]) only. A respaced schedule
// copies its alpha_bar entries verbatim from the parent, so respacing with
// n == T reproduces the parent sampler trajectory bit for bit.
struct NoiseSchedule {
    int steps = 0;
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;
    std::vector<double> alpha_bar_prev;  // alpha_bar of the previous retained step; [0] = 1
    std::vector<int> timestep;
};

// Linear beta schedule with exact endpoints beta(1)=beta1, beta(T)=betaT.
NoiseSchedule make_linear_schedule(int steps, double beta1, double betaT);

// Uniform-stride subsequence of n steps that always retains step T.
// Effective betas are rebuilt from the retained alpha_bar values.
NoiseSchedule respace(const NoiseSchedule& s, int n);

}  // namespace avdit
