#include "tempo/optim.hpp"

#include <cmath>

namespace tempo {

void OptimizerConfig::validate() const {
    require(learning_rate > 0.0, "optimizer: learning rate must be positive");
    require(weight_decay >= 0.0, "optimizer: weight decay must be non-negative");
    if (clip_norm) require(*clip_norm > 0.0, "optimizer: clip norm must be positive");
    if (kind != OptimizerKind::Sgd) {
        require(beta1 > 0.0 && beta1 < 1.0, "optimizer: beta1 must be in (0, 1)");
        require(beta2 > 0.0 && beta2 < 1.0, "optimizer: beta2 must be in (0, 1)");
        require(eps_adam > 0.0, "optimizer: eps must be positive");
    }
}

Accumulator::Accumulator(int accum_steps) : accum_steps_(accum_steps) {
    require(accum_steps >= 1, "accumulator: steps must be >= 1");
}

void Accumulator::accumulate(const GradMap& micro_grads) {
    require(filled_ < accum_steps_,
            "accumulator: already holds " + std::to_string(filled_) +
                " of " + std::to_string(accum_steps_) + " micro gradients");
    if (buffer_.empty()) {
        for (const auto& [id, g] : micro_grads) {
            buffer_[id] = Sum{g.shape, std::vector<double>(g.data.size(), 0.0)};
        }
    }
    require(buffer_.size() == micro_grads.size(),
            "accumulator: gradient key set changed between micro-batches");
    for (auto& [id, acc] : buffer_) {
        const auto it = micro_grads.find(id);
        require(it != micro_grads.end(), "accumulator: missing gradient for " + id);
        require(acc.shape == it->second.shape, "accumulator: shape mismatch for " + id);
        for (std::size_t i = 0; i < acc.values.size(); ++i)
            acc.values[i] += double(it->second.data[i]);
    }
    ++filled_;
}

GradMap Accumulator::finalize() {
    require(filled_ == accum_steps_,
            "accumulator: finalize with " + std::to_string(filled_) + " of " +
                std::to_string(accum_steps_) + " micro gradients");
    GradMap out;
    const double inv = 1.0 / double(accum_steps_);
    for (auto& [id, sum] : buffer_) {
        Tensor g = Tensor::zeros(sum.shape);
        for (std::size_t i = 0; i < sum.values.size(); ++i)
            g.data[i] = float(sum.values[i] * inv);
        out[id] = std::move(g);
    }
    buffer_.clear();
    filled_ = 0;
    return out;
}

void Accumulator::reset() {
    buffer_.clear();
    filled_ = 0;
}

namespace {

double global_l2_norm(const GradMap& grads) {
    double sq = 0.0;
    for (const auto& [id, g] : grads) {
        for (float v : g.data) sq += double(v) * double(v);
    }
    return std::sqrt(sq);
}

}  // namespace

std::pair<GradMap, double> clip_grad_norm(GradMap grads, double max_norm) {
    require(max_norm > 0.0, "clip_grad_norm: max_norm must be positive");
    const double total = global_l2_norm(grads);
    if (!(total > max_norm)) return {std::move(grads), total};

    // Rescale; float rounding can leave the norm an ulp above max_norm, so
    // repeat until it is not (converges immediately in practice).
    double n = total;
    for (int pass = 0; pass < 8 && n > max_norm; ++pass) {
        const double s = max_norm / n;
        for (auto& [id, g] : grads) {
            for (auto& v : g.data) v = float(double(v) * s);
        }
        const double n2 = global_l2_norm(grads);
        if (n2 == n) break;
        n = n2;
    }
    return {std::move(grads), total};
}

MomentState init_moment_state(const std::vector<Parameter*>& params) {
    MomentState st;
    for (const Parameter* p : params) {
        st.m[p->id] = Tensor::zeros(p->master.shape);
        st.v[p->id] = Tensor::zeros(p->master.shape);
    }
    st.initialized = true;
    return st;
}

void step(const std::vector<Parameter*>& params, const GradMap& grads,
          const OptimizerConfig& cfg, MomentState& state, std::int64_t t) {
    cfg.validate();
    const bool adam_family = cfg.kind != OptimizerKind::Sgd;
    if (adam_family) {
        require(t >= 1, "step: Adam-family step index must be >= 1");
        require(state.initialized, "step: moment state missing for Adam-family optimizer");
    }

    const double lr = cfg.learning_rate;
    const double wd = cfg.weight_decay;

    for (Parameter* p : params) {
        const auto git = grads.find(p->id);
        if (git == grads.end()) continue;
        const Tensor& g = git->second;
        require(g.same_shape(p->master), "step: gradient shape mismatch for " + p->id);

        if (cfg.kind == OptimizerKind::Sgd) {
            for (std::size_t i = 0; i < p->master.data.size(); ++i) {
                const double theta = double(p->master.data[i]);
                const double gi = double(g.data[i]) + wd * theta;
                p->master.data[i] = float(theta - lr * gi);
            }
            continue;
        }

        auto mit = state.m.find(p->id);
        auto vit = state.v.find(p->id);
        require(mit != state.m.end() && vit != state.v.end(),
                "step: moment state missing for " + p->id);
        Tensor& m = mit->second;
        Tensor& v = vit->second;

        const double bc1 = 1.0 - std::pow(cfg.beta1, double(t));
        const double bc2 = 1.0 - std::pow(cfg.beta2, double(t));

        for (std::size_t i = 0; i < p->master.data.size(); ++i) {
            const double theta = double(p->master.data[i]);
            // Adam couples decay into the gradient; AdamW decays separately.
            const double gi = double(g.data[i]) +
                              (cfg.kind == OptimizerKind::Adam ? wd * theta : 0.0);
            const double mi = cfg.beta1 * double(m.data[i]) + (1.0 - cfg.beta1) * gi;
            const double vi = cfg.beta2 * double(v.data[i]) + (1.0 - cfg.beta2) * gi * gi;
            m.data[i] = float(mi);
            v.data[i] = float(vi);
            const double m_hat = mi / bc1;
            const double v_hat = vi / bc2;
            double update = lr * m_hat / (std::sqrt(v_hat) + cfg.eps_adam);
            if (cfg.kind == OptimizerKind::AdamW) update += lr * wd * theta;
            p->master.data[i] = float(theta - update);
        }
    }
}

}  // namespace tempo
