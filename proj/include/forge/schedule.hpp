// Copyright (c) 2026 The loraforge Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "forge/common.hpp"
#include "forge/tensor.hpp"

namespace forge {

// Reference step count for full-scale runs; desk configs default to 200.
inline constexpr int kFullScaleScheduleSteps = 1000;

// Variance-preserving schedule tables, kept in double precision. alphabar is
// indexed 0..T with alphabar[0] == 1, so t = 0 is the identity boundary.
struct NoiseSchedule {
    int steps = 0;
    std::vector<double> betas;      // beta_1..beta_T, index t-1
    std::vector<double> alphabars;  // alphabar_0..alphabar_T

    double beta(int t) const { return betas.at(static_cast<std::size_t>(t - 1)); }
    double alphabar(int t) const { return alphabars.at(static_cast<std::size_t>(t)); }
    double signal_coeff(int t) const { return std::sqrt(alphabar(t)); }       // sqrt(alphabar_t)
    double noise_coeff(int t) const { return std::sqrt(1.0 - alphabar(t)); }  // sigma_t

    // DDPM posterior variance beta_t * (1 - alphabar_{t-1}) / (1 - alphabar_t)
    double posterior_var(int t) const {
        return beta(t) * (1.0 - alphabar(t - 1)) / (1.0 - alphabar(t));
    }

    void validate() const {
        if (steps < 1) throw ConfigError("schedule needs at least one step");
        if (alphabars.front() != 1.0) throw ContractError("alphabar_0 must be 1");
        for (int t = 1; t <= steps; ++t) {
            if (!(beta(t) > 0.0 && beta(t) < 1.0))
                throw ContractError("beta out of (0,1) at t=" + std::to_string(t));
            if (!(alphabar(t) < alphabar(t - 1)))
                throw ContractError("alphabar must strictly decrease at t=" + std::to_string(t));
            const double a = signal_coeff(t);
            const double s = noise_coeff(t);
            if (std::abs(a * a + s * s - 1.0) > 1e-6)
                throw ContractError("variance-preserving invariant violated at t=" +
                                    std::to_string(t));
        }
    }
};

inline NoiseSchedule make_schedule(int steps, const std::string& kind = "linear",
                                   double beta_min = 1e-4, double beta_max = 0.02) {
    if (steps < 1) throw ConfigError("schedule step count must be >= 1");
    if (kind != "linear") throw ConfigError("unknown schedule kind '" + kind + "'");
    NoiseSchedule sched;
    sched.steps = steps;
    sched.betas.resize(static_cast<std::size_t>(steps));
    sched.alphabars.resize(static_cast<std::size_t>(steps) + 1);
    sched.alphabars[0] = 1.0;
    double alphabar = 1.0;
    for (int t = 1; t <= steps; ++t) {
        const double frac = steps == 1 ? 0.0 : static_cast<double>(t - 1) / (steps - 1);
        const double beta = beta_min + (beta_max - beta_min) * frac;
        sched.betas[static_cast<std::size_t>(t - 1)] = beta;
        alphabar *= 1.0 - beta;
        sched.alphabars[static_cast<std::size_t>(t)] = alphabar;
    }
    sched.validate();
    return sched;
}

// Closed-form forward marginal u_t = sqrt(alphabar_t) u_0 + sqrt(1-alphabar_t) eps.
// Noise is supplied by the caller for testability; t = 0 returns u_0.
template <class S>
Tensor<S> forward_diffuse(const Tensor<S>& u0, int t, const Tensor<S>& eps,
                          const NoiseSchedule& sched) {
    if (t < 0 || t > sched.steps)
        throw ConfigError("diffusion step t=" + std::to_string(t) + " outside [0, " +
                          std::to_string(sched.steps) + "]");
    if (!u0.same_shape(eps)) throw ShapeError("noise shape must match the clean token");
    const S a = static_cast<S>(sched.signal_coeff(t));
    const S s = static_cast<S>(sched.noise_coeff(t));
    Tensor<S> out = Tensor<S>::uninitialized(u0.shape());
    out.vec() = u0.vec() * a + eps.vec() * s;
    return out;
}

}  // namespace forge
