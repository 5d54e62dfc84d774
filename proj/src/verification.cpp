#include <algorithm>
#include <cmath>
#include <sstream>

#include "tempo/harness.hpp"

namespace tempo {

namespace {

// Trains `steps` SGD steps over pre-built micro-batches with accumulation M,
// returning the flattened final parameters. Used for the GA-equivalence check.
std::vector<float> run_ga(const Dataset& ds, int micro_batch, int accum, int steps,
                          std::uint64_t seed) {
    Rng rng = Rng::derive(seed, 0x1117);
    Graph graph = Graph::tiny_mlp(numel(ds.example_shape), {16, 8}, ds.num_classes, rng);

    OptimizerConfig opt;
    opt.kind = OptimizerKind::Sgd;
    opt.learning_rate = 0.05;
    MomentState moments;
    Accumulator acc(accum);

    const std::vector<Batch> batches =
        make_batches(ds, micro_batch, seed, /*epoch=*/0);
    std::size_t next = 0;
    for (int s = 0; s < steps; ++s) {
        for (int m = 0; m < accum; ++m) {
            const Batch& b = batches.at(next++ % batches.size());
            const ForwardResult fr = graph.forward(b, PrecisionPolicy::full_single());
            acc.accumulate(graph.backward(fr));
        }
        GradMap avg = acc.finalize();
        auto params = graph.mutable_parameters();
        step(params, avg, opt, moments, s + 1);
    }

    std::vector<float> out;
    for (const Parameter* p : graph.parameters())
        out.insert(out.end(), p->master.data.begin(), p->master.data.end());
    return out;
}

// Parameter-vector relative error in the Euclidean norm.
double norm_rel_diff(const std::vector<float>& a, const std::vector<float>& b) {
    double diff = 0.0, ref = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = double(a[i]) - double(b[i]);
        diff += d * d;
        ref += double(b[i]) * double(b[i]);
    }
    return std::sqrt(diff) / std::max(std::sqrt(ref), 1e-12);
}

VerificationResult verify_ga_equivalence() {
    VerificationResult r{"ga-equivalence", false, ""};
    const Dataset ds = make_synthetic(3, 12, 512, 7);
    double worst = 0.0;
    for (int accum : {2, 4}) {
        const auto micro = run_ga(ds, 8, accum, 10, 7);
        const auto full = run_ga(ds, 8 * accum, 1, 10, 7);
        worst = std::max(worst, norm_rel_diff(micro, full));
    }
    std::ostringstream os;
    os << "parameter relative error " << worst << " (limit 1e-5)";
    r.detail = os.str();
    r.passed = worst <= 1e-5;
    return r;
}

VerificationResult verify_finite_differences() {
    VerificationResult r{"finite-differences", false, ""};
    double worst = 0.0;

    {
        Rng rng(41);
        Graph mlp = Graph::tiny_mlp(6, {10, 8}, 3, rng);
        Dataset ds = make_synthetic(3, 6, 64, 41);
        Batch b = make_batches(ds, 8, 41, 0).front();
        worst = std::max(worst, finite_diff_check(mlp, b, 1e-4));
    }
    {
        Rng rng(41);
        Graph cnn = Graph::tiny_cnn(2, 8, {4}, 3, rng);
        Batch b;
        b.inputs = Tensor::zeros({4, 2, 8, 8});
        Rng data_rng(43);
        for (auto& v : b.inputs.data) v = float(data_rng.uniform(-1.0, 1.0));
        b.labels = {0, 1, 2, 1};
        worst = std::max(worst, finite_diff_check(cnn, b, 1e-4));
    }

    std::ostringstream os;
    os << "max relative gradient error " << worst << " (limit 1e-3)";
    r.detail = os.str();
    r.passed = worst < 1e-3;
    return r;
}

VerificationResult verify_loss_scale() {
    VerificationResult r{"loss-scale", false, ""};
    std::ostringstream os;
    bool ok = true;

    LossScaler s;
    s.base_scale = 1024.0;
    s.scale = 1024.0;
    s.growth_interval = 1;
    const LossScaler grown = update_loss_scale(s, 2.0, 1.0, false);
    if (grown.scale != 2048.0) {
        ok = false;
        os << "ratio growth produced " << grown.scale << " instead of 2048; ";
    }

    LossScaler h;
    h.scale = 65536.0;
    const LossScaler halved = update_loss_scale(h, 1.0, 1.0, true);
    if (halved.scale != 32768.0) {
        ok = false;
        os << "overflow backoff produced " << halved.scale << " instead of 32768; ";
    }

    // Bounds fuzz: the scale must stay inside [min_scale, max_scale].
    Rng rng(23);
    LossScaler f;
    f.growth_interval = 3;
    for (int i = 0; i < 3000; ++i) {
        const bool overflow = rng.uniform() < 0.3;
        if (overflow) {
            f = update_loss_scale(f, 1.0, 1.0, true);
        } else {
            f = update_loss_scale(f, rng.uniform(1e-3, 10.0), rng.uniform(1e-3, 10.0),
                                  false);
        }
        if (f.scale < f.min_scale || f.scale > f.max_scale) {
            ok = false;
            os << "scale " << f.scale << " escaped [" << f.min_scale << ", "
               << f.max_scale << "] at iteration " << i << "; ";
            break;
        }
    }

    if (ok) os << "ratio formula, backoff and bounds all hold";
    r.detail = os.str();
    r.passed = ok;
    return r;
}

}  // namespace

std::vector<VerificationResult> run_verification() {
    return {verify_ga_equivalence(), verify_finite_differences(), verify_loss_scale()};
}

}  // namespace tempo
