#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "tempo/autograd.hpp"
#include "tempo/tensor.hpp"

namespace tempo {

enum class OptimizerKind { Sgd, Adam, AdamW };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::Sgd;
    double learning_rate = 0.01;
    double weight_decay = 0.0;
    std::optional<double> clip_norm;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps_adam = 1e-8;

    void validate() const;
};

// Gradient accumulation over M micro-batches: buffer += micro gradients,
// finalize divides by M. With mean-reduced micro losses the finalized value
// is the mean gradient over all M*b examples. The running sum is kept in
// double so the result is independent of micro-batch order to within a
// single-precision ulp.
class Accumulator {
public:
    explicit Accumulator(int accum_steps);

    void accumulate(const GradMap& micro_grads);
    /// Returns buffer / M and resets. Throws unless exactly M accumulated.
    GradMap finalize();
    void reset();

    int filled() const { return filled_; }
    int accum_steps() const { return accum_steps_; }

private:
    struct Sum {
        Shape shape;
        std::vector<double> values;
    };
    int accum_steps_ = 1;
    int filled_ = 0;
    std::map<std::string, Sum> buffer_;
};

/// Global L2-norm clipping. Returns the clipped gradients and the pre-clip
/// norm; whenever clipping fires, the post-clip norm never exceeds max_norm,
/// which makes the operation exactly idempotent.
std::pair<GradMap, double> clip_grad_norm(GradMap grads, double max_norm);

// First/second Adam moments, keyed by parameter id.
struct MomentState {
    GradMap m;
    GradMap v;
    bool initialized = false;
};

MomentState init_moment_state(const std::vector<Parameter*>& params);

/// One optimizer step at index t (t >= 1 for the Adam family; used for bias
/// correction). Parameters without a gradient entry are left untouched.
void step(const std::vector<Parameter*>& params, const GradMap& grads,
          const OptimizerConfig& cfg, MomentState& state, std::int64_t t);

}  // namespace tempo
