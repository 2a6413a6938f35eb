#pragma once

#include <cmath>
#include <vector>

#include "core/param.hpp"

namespace avdit {

// AdamW with decoupled weight decay. Moment buffers exist only for trainable
// parameters. A parameter without a gradient this step is treated as having a
// zero gradient. The update never writes a non-finite value into a parameter.
template <class T>
class AdamW {
public:
    struct Options {
        double lr = 5e-4;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
        double weight_decay = 0.0;
    };

    AdamW(ParamRegistry<T>& reg, Options opt) : reg_(reg), opt_(opt) {
        reg_.for_each([&](Parameter<T>& p) {
            if (!p.trainable) return;
            slots_.push_back({&p, std::vector<double>(p.value.numel(), 0.0),
                              std::vector<double>(p.value.numel(), 0.0)});
        });
    }

    int64_t step_count() const { return step_; }
    const Options& options() const { return opt_; }

    void step() {
        ++step_;
        const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(step_));
        for (auto& s : slots_) {
            Parameter<T>& p = *s.param;
            const int64_t n = p.value.numel();
            const bool has_grad = p.has_grad();
            for (int64_t i = 0; i < n; ++i) {
                double g = has_grad ? static_cast<double>(p.grad[i]) : 0.0;
                if (!std::isfinite(g))
                    throw NumericError("adamw: non-finite gradient in parameter '" + p.name + "'");
                s.m[i] = opt_.beta1 * s.m[i] + (1.0 - opt_.beta1) * g;
                s.v[i] = opt_.beta2 * s.v[i] + (1.0 - opt_.beta2) * g * g;
                double m_hat = s.m[i] / bc1;
                double v_hat = s.v[i] / bc2;
                double x = static_cast<double>(p.value.v[i]);
                double upd = m_hat / (std::sqrt(v_hat) + opt_.eps) + opt_.weight_decay * x;
                double nx = x - opt_.lr * upd;
                if (!std::isfinite(nx))
                    throw NumericError("adamw: update produced non-finite value in parameter '" +
                                       p.name + "'");
                p.value.v[i] = static_cast<T>(nx);
            }
        }
    }

private:
    struct Slot {
        Parameter<T>* param;
        std::vector<double> m, v;
    };
    ParamRegistry<T>& reg_;
    Options opt_;
    std::vector<Slot> slots_;
    int64_t step_ = 0;
};

}  // namespace avdit
