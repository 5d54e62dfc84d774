#pragma once

#include <set>
#include <string>
#include <utility>

#include "tempo/tensor.hpp"

namespace tempo {

enum class OpKind {
    Matmul,
    Conv,
    Elementwise,
    Softmax,
    Loss,
    Reduction,
    Normalization,
    ParamUpdate,
};

// Per-operation precision election. Ops in half_ops run on the binary16
// grid when mode is Mixed; single_ops are always kept in single precision.
struct PrecisionPolicy {
    enum class Mode { FullSingle, Mixed };

    Mode mode = Mode::FullSingle;
    std::set<OpKind> half_ops{OpKind::Matmul, OpKind::Conv};
    std::set<OpKind> single_ops{OpKind::Softmax, OpKind::Loss, OpKind::Reduction,
                                OpKind::Normalization, OpKind::ParamUpdate};

    static PrecisionPolicy full_single() { return PrecisionPolicy{}; }
    static PrecisionPolicy mixed() {
        PrecisionPolicy p;
        p.mode = Mode::Mixed;
        return p;
    }

    void validate() const;

    bool use_half(OpKind k) const {
        return mode == Mode::Mixed && half_ops.count(k) != 0 && single_ops.count(k) == 0;
    }

    Precision elect(OpKind k) const {
        return use_half(k) ? Precision::HalfEmulated : Precision::Single;
    }
};

// Loss-scaling state. `scale` is the live multiplier; growth happens every
// growth_interval-th consecutive non-overflow step, either by the ratio
// formula  base_scale * (old_loss / new_loss)^beta  or, with the formula
// disabled, by doubling. Overflow backoff halves down to the nearest power
// of two and never goes below min_scale.
struct LossScaler {
    double scale = 65536.0;
    double base_scale = 65536.0;
    double beta = 1.0;
    int growth_interval = 200;
    int steps_since_overflow = 0;
    double min_scale = 1.0;
    double max_scale = 16777216.0;  // 2^24
    bool use_ratio_formula = true;
};

double scale_loss(double loss, const LossScaler& scaler);

/// If any gradient element is NaN/inf: (grads untouched, overflow=true) and
/// the caller must skip the optimizer step. Otherwise every element is
/// divided by the current scale.
std::pair<GradMap, bool> unscale_and_check(GradMap grads, const LossScaler& scaler);

LossScaler update_loss_scale(LossScaler scaler, double old_loss, double new_loss,
                             bool overflow);

/// True when the next non-overflow update lands on a growth boundary, i.e.
/// the caller should measure the (old, new) loss pair before updating.
bool growth_due(const LossScaler& scaler);

struct TimingRecord {
    std::string label;
    double wall_time = 0.0;  // seconds
    std::int64_t op_count = 0;
};

/// Speedup of `mixed` relative to `single`: t_single / t_mixed.
double compute_speedup(const TimingRecord& single_run, const TimingRecord& mixed_run);

/// Operations per second: n_ops / seconds.
double compute_throughput(std::int64_t n_ops, double seconds);

}  // namespace tempo
