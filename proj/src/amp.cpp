#include "tempo/amp.hpp"

#include <algorithm>
#include <cmath>

namespace tempo {

void PrecisionPolicy::validate() const {
    for (OpKind k : half_ops) {
        require(single_ops.count(k) == 0,
                "precision policy: half_ops and single_ops must be disjoint");
    }
}

double scale_loss(double loss, const LossScaler& scaler) {
    return loss * scaler.scale;
}

std::pair<GradMap, bool> unscale_and_check(GradMap grads, const LossScaler& scaler) {
    for (const auto& [id, g] : grads) {
        if (!g.all_finite()) return {std::move(grads), true};
    }
    for (auto& [id, g] : grads) {
        for (auto& v : g.data) v = float(double(v) / scaler.scale);
    }
    return {std::move(grads), false};
}

LossScaler update_loss_scale(LossScaler scaler, double old_loss, double new_loss,
                             bool overflow) {
    if (overflow) {
        // Halve down to the nearest power of two; the scale may be off the
        // power-of-two lattice after a ratio-formula growth.
        const double pow2 = std::exp2(std::floor(std::log2(scaler.scale)));
        scaler.scale = std::max(pow2 * 0.5, scaler.min_scale);
        scaler.steps_since_overflow = 0;
        return scaler;
    }
    require(old_loss > 0.0 && new_loss > 0.0,
            "update_loss_scale: losses must be positive without overflow");
    scaler.steps_since_overflow += 1;
    if (scaler.growth_interval > 0 &&
        scaler.steps_since_overflow % scaler.growth_interval == 0) {
        double target;
        if (scaler.use_ratio_formula) {
            const double ratio = std::clamp(old_loss / new_loss, 0.5, 2.0);
            target = scaler.base_scale *
                     (scaler.beta == 1.0 ? ratio : std::pow(ratio, scaler.beta));
        } else {
            target = scaler.scale * 2.0;
        }
        scaler.scale = std::clamp(target, scaler.min_scale, scaler.max_scale);
    }
    return scaler;
}

bool growth_due(const LossScaler& scaler) {
    return scaler.growth_interval > 0 &&
           (scaler.steps_since_overflow + 1) % scaler.growth_interval == 0;
}

double compute_speedup(const TimingRecord& single_run, const TimingRecord& mixed_run) {
    require(single_run.wall_time > 0.0 && mixed_run.wall_time > 0.0,
            "compute_speedup: wall times must be positive");
    return single_run.wall_time / mixed_run.wall_time;
}

double compute_throughput(std::int64_t n_ops, double seconds) {
    require(seconds > 0.0, "compute_throughput: execution time must be positive");
    require(n_ops >= 0, "compute_throughput: negative op count");
    return double(n_ops) / seconds;
}

}  // namespace tempo
