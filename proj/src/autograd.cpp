#include "tempo/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace tempo {

namespace {

Tensor kaiming_uniform(Shape shape, std::int64_t fan_in, Rng& rng) {
    Tensor t = Tensor::zeros(std::move(shape));
    const double bound = std::sqrt(6.0 / double(fan_in));
    for (auto& v : t.data) v = float(rng.uniform(-bound, bound));
    return t;
}

// Widens a parameter to double, applying at most one element override.
std::vector<double> widen(const Parameter& p, const ParamOverride* ov) {
    std::vector<double> out(p.master.data.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = double(p.master.data[i]);
    if (ov != nullptr && ov->param == &p) out[std::size_t(ov->index)] += ov->delta;
    return out;
}

// Backward reductions accumulate in double before narrowing to the single
// precision gradient storage; this keeps micro-batch and big-batch gradient
// routes equal to within a float ulp.
Tensor matmul_acc64(const Tensor& a, const Tensor& b) {
    require(a.shape.size() == 2 && b.shape.size() == 2 && a.shape[1] == b.shape[0],
            "matmul_acc64: nonconforming shapes");
    const std::int64_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
    Tensor c = Tensor::zeros({m, n});
    for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::int64_t l = 0; l < k; ++l)
                acc += double(a.data[std::size_t(i * k + l)]) *
                       double(b.data[std::size_t(l * n + j)]);
            c.data[std::size_t(i * n + j)] = float(acc);
        }
    }
    return c;
}

}  // namespace

// ---- LinearLayer --------------------------------------------------------

LinearLayer::LinearLayer(std::string id, std::int64_t in, std::int64_t out, Rng& rng)
    : in_(in), out_(out) {
    require(in > 0 && out > 0, "linear: dimensions must be positive");
    weight_ = Parameter{id + ".weight", kaiming_uniform({out, in}, in, rng), {}};
    bias_ = Parameter{id + ".bias", Tensor::zeros({out}), {}};
}

LinearLayer::LinearLayer(std::string id, Tensor weight, Tensor bias) {
    require(weight.shape.size() == 2 && bias.shape.size() == 1 &&
                weight.shape[0] == bias.shape[0],
            "linear: weight must be [out, in] with matching bias");
    out_ = weight.shape[0];
    in_ = weight.shape[1];
    weight_ = Parameter{id + ".weight", std::move(weight), {}};
    bias_ = Parameter{id + ".bias", std::move(bias), {}};
}

Tensor LinearLayer::forward(const Tensor& x, const PrecisionPolicy& policy,
                            LayerCtx& ctx) const {
    const std::int64_t rows = x.shape.empty() ? 0 : x.shape[0];
    require(rows > 0 && x.size() == rows * in_,
            "linear: input " + shape_str(x.shape) + " does not flatten to [*, " +
                std::to_string(in_) + "]");
    Tensor x2d = x;
    x2d.shape = {rows, in_};

    const Precision out_p = policy.elect(OpKind::Matmul);
    if (out_p == Precision::HalfEmulated && x2d.precision != Precision::HalfEmulated) {
        x2d = cast_to_half(x2d);
    }
    // Saved as consumed (snapped in half mode) but under the caller's shape,
    // so backward can hand the input gradient back un-flattened.
    ctx.input = x2d;
    ctx.input.shape = x.shape;

    Tensor y = matmul(x2d, transpose2d(weight_.master), out_p);
    return add_bias(y, bias_.master, out_p);
}

Tensor LinearLayer::backward(const Tensor& grad_out, const LayerCtx& ctx,
                             GradMap& grads) const {
    Tensor x2d = ctx.input;
    const std::int64_t rows = x2d.shape.empty() ? 0 : x2d.shape[0];
    x2d.shape = {rows, in_};
    require(grad_out.shape.size() == 2 && grad_out.shape[0] == rows &&
                grad_out.shape[1] == out_,
            "linear backward: gradient shape mismatch");

    // dW = g^T x, db = column sums of g, dx = g W. Weights used in half mode
    // must be the snapped values the forward actually multiplied by.
    Tensor w_used = weight_.master;
    if (x2d.precision == Precision::HalfEmulated) w_used = cast_to_half(w_used);

    grads[weight_.id] = matmul_acc64(transpose2d(grad_out), x2d);

    Tensor db = Tensor::zeros({out_});
    for (std::int64_t j = 0; j < out_; ++j) {
        double acc = 0.0;
        for (std::int64_t r = 0; r < rows; ++r)
            acc += double(grad_out.data[std::size_t(r * out_ + j)]);
        db.data[std::size_t(j)] = float(acc);
    }
    grads[bias_.id] = std::move(db);

    Tensor dx = matmul_acc64(grad_out, w_used);
    dx.shape = ctx.input.shape;
    return dx;
}

void LinearLayer::collect_params(std::vector<Parameter*>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
}

std::vector<double> LinearLayer::forward_fp64(const std::vector<double>& x,
                                              const Shape& in_shape, Shape& out_shape,
                                              const ParamOverride* ov) const {
    const std::int64_t rows = in_shape[0];
    const std::vector<double> w = widen(weight_, ov);
    const std::vector<double> b = widen(bias_, ov);
    out_shape = {rows, out_};
    std::vector<double> y(std::size_t(rows * out_));
    for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t j = 0; j < out_; ++j) {
            double acc = b[std::size_t(j)];
            for (std::int64_t l = 0; l < in_; ++l)
                acc += x[std::size_t(r * in_ + l)] * w[std::size_t(j * in_ + l)];
            y[std::size_t(r * out_ + j)] = acc;
        }
    }
    return y;
}

// ---- ReluLayer ------------------------------------------------------------

Tensor ReluLayer::forward(const Tensor& x, const PrecisionPolicy&, LayerCtx& ctx) const {
    ctx.input = x;
    return relu(x);
}

Tensor ReluLayer::backward(const Tensor& grad_out, const LayerCtx& ctx,
                           GradMap&) const {
    Tensor dx = grad_out;
    dx.precision = Precision::Single;
    for (std::size_t i = 0; i < dx.data.size(); ++i) {
        if (ctx.input.data[i] <= 0.0f) dx.data[i] = 0.0f;
    }
    return dx;
}

std::vector<double> ReluLayer::forward_fp64(const std::vector<double>& x,
                                            const Shape& in_shape, Shape& out_shape,
                                            const ParamOverride*) const {
    out_shape = in_shape;
    std::vector<double> y = x;
    for (auto& v : y) v = v > 0.0 ? v : 0.0;
    return y;
}

// ---- Conv2dLayer ------------------------------------------------------------

Conv2dLayer::Conv2dLayer(std::string id, int in_channels, int out_channels, int stride,
                         Rng& rng)
    : in_c_(in_channels), out_c_(out_channels), stride_(stride) {
    require(in_channels > 0 && out_channels > 0, "conv: channels must be positive");
    require(stride == 1 || stride == 2, "conv: stride must be 1 or 2");
    const std::int64_t fan_in = std::int64_t(in_channels) * 9;
    weight_ = Parameter{
        id + ".weight", kaiming_uniform({out_channels, in_channels, 3, 3}, fan_in, rng), {}};
    bias_ = Parameter{id + ".bias", Tensor::zeros({out_channels}), {}};
}

std::int64_t Conv2dLayer::flops_per_row() const {
    // Geometry is only known at forward time; assume a 32x32 input halved by
    // stride for the reporting estimate. Exact counts come from forward shapes
    // in the harness via layer output sizes; this estimate is close enough for
    // throughput reporting.
    const std::int64_t hw = 32 / stride_;
    return std::int64_t(out_c_) * hw * hw * in_c_ * 9;
}

Tensor Conv2dLayer::forward(const Tensor& x, const PrecisionPolicy& policy,
                            LayerCtx& ctx) const {
    require(x.shape.size() == 4 && x.shape[1] == in_c_,
            "conv: expected input [B, " + std::to_string(in_c_) + ", H, W], got " +
                shape_str(x.shape));
    const std::int64_t B = x.shape[0], H = x.shape[2], W = x.shape[3];
    const std::int64_t Ho = (H - 1) / stride_ + 1;
    const std::int64_t Wo = (W - 1) / stride_ + 1;

    const Precision out_p = policy.elect(OpKind::Conv);
    const bool half = out_p == Precision::HalfEmulated;

    Tensor xin = x;
    if (half && xin.precision != Precision::HalfEmulated) xin = cast_to_half(xin);
    Tensor w_used = half ? cast_to_half(weight_.master) : weight_.master;
    ctx.input = xin;

    Tensor y = Tensor::zeros({B, out_c_, Ho, Wo}, out_p);
    const float* px = xin.data.data();
    const float* pw = w_used.data.data();
    const float* pb = bias_.master.data.data();

    for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t oc = 0; oc < out_c_; ++oc) {
            for (std::int64_t oh = 0; oh < Ho; ++oh) {
                for (std::int64_t ow = 0; ow < Wo; ++ow) {
                    float acc = pb[oc];
                    for (std::int64_t ic = 0; ic < in_c_; ++ic) {
                        for (std::int64_t kh = 0; kh < 3; ++kh) {
                            const std::int64_t ih = oh * stride_ + kh - 1;
                            if (ih < 0 || ih >= H) continue;
                            for (std::int64_t kw = 0; kw < 3; ++kw) {
                                const std::int64_t iw = ow * stride_ + kw - 1;
                                if (iw < 0 || iw >= W) continue;
                                acc += px[((b * in_c_ + ic) * H + ih) * W + iw] *
                                       pw[((oc * in_c_ + ic) * 3 + kh) * 3 + kw];
                            }
                        }
                    }
                    y.data[std::size_t(((b * out_c_ + oc) * Ho + oh) * Wo + ow)] =
                        half ? half_round(acc) : acc;
                }
            }
        }
    }
    return y;
}

Tensor Conv2dLayer::backward(const Tensor& grad_out, const LayerCtx& ctx,
                             GradMap& grads) const {
    const Tensor& x = ctx.input;
    const std::int64_t B = x.shape[0], H = x.shape[2], W = x.shape[3];
    const std::int64_t Ho = grad_out.shape[2], Wo = grad_out.shape[3];

    Tensor w_used = weight_.master;
    if (x.precision == Precision::HalfEmulated) w_used = cast_to_half(w_used);

    // Double accumulation, narrowed to single at the end.
    std::vector<double> dw(w_used.data.size(), 0.0);
    std::vector<double> db(std::size_t(out_c_), 0.0);
    std::vector<double> dx(x.data.size(), 0.0);

    const float* px = x.data.data();
    const float* pw = w_used.data.data();
    const float* pg = grad_out.data.data();

    for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t oc = 0; oc < out_c_; ++oc) {
            for (std::int64_t oh = 0; oh < Ho; ++oh) {
                for (std::int64_t ow = 0; ow < Wo; ++ow) {
                    const double g = pg[((b * out_c_ + oc) * Ho + oh) * Wo + ow];
                    if (g == 0.0) continue;
                    db[std::size_t(oc)] += g;
                    for (std::int64_t ic = 0; ic < in_c_; ++ic) {
                        for (std::int64_t kh = 0; kh < 3; ++kh) {
                            const std::int64_t ih = oh * stride_ + kh - 1;
                            if (ih < 0 || ih >= H) continue;
                            for (std::int64_t kw = 0; kw < 3; ++kw) {
                                const std::int64_t iw = ow * stride_ + kw - 1;
                                if (iw < 0 || iw >= W) continue;
                                const std::size_t xi =
                                    std::size_t(((b * in_c_ + ic) * H + ih) * W + iw);
                                const std::size_t wi =
                                    std::size_t(((oc * in_c_ + ic) * 3 + kh) * 3 + kw);
                                dw[wi] += g * double(px[xi]);
                                dx[xi] += g * double(pw[wi]);
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor dw_t = Tensor::zeros(weight_.master.shape);
    for (std::size_t i = 0; i < dw.size(); ++i) dw_t.data[i] = float(dw[i]);
    Tensor db_t = Tensor::zeros(bias_.master.shape);
    for (std::size_t i = 0; i < db.size(); ++i) db_t.data[i] = float(db[i]);
    Tensor dx_t = Tensor::zeros(x.shape);
    for (std::size_t i = 0; i < dx.size(); ++i) dx_t.data[i] = float(dx[i]);
    grads[weight_.id] = std::move(dw_t);
    grads[bias_.id] = std::move(db_t);
    return dx_t;
}

void Conv2dLayer::collect_params(std::vector<Parameter*>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
}

std::vector<double> Conv2dLayer::forward_fp64(const std::vector<double>& x,
                                              const Shape& in_shape, Shape& out_shape,
                                              const ParamOverride* ov) const {
    const std::int64_t B = in_shape[0], H = in_shape[2], W = in_shape[3];
    const std::int64_t Ho = (H - 1) / stride_ + 1;
    const std::int64_t Wo = (W - 1) / stride_ + 1;
    const std::vector<double> w = widen(weight_, ov);
    const std::vector<double> bias = widen(bias_, ov);
    out_shape = {B, out_c_, Ho, Wo};
    std::vector<double> y(std::size_t(numel(out_shape)));

    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t oc = 0; oc < out_c_; ++oc)
            for (std::int64_t oh = 0; oh < Ho; ++oh)
                for (std::int64_t ow = 0; ow < Wo; ++ow) {
                    double acc = bias[std::size_t(oc)];
                    for (std::int64_t ic = 0; ic < in_c_; ++ic)
                        for (std::int64_t kh = 0; kh < 3; ++kh) {
                            const std::int64_t ih = oh * stride_ + kh - 1;
                            if (ih < 0 || ih >= H) continue;
                            for (std::int64_t kw = 0; kw < 3; ++kw) {
                                const std::int64_t iw = ow * stride_ + kw - 1;
                                if (iw < 0 || iw >= W) continue;
                                acc += x[std::size_t(((b * in_c_ + ic) * H + ih) * W + iw)] *
                                       w[std::size_t(((oc * in_c_ + ic) * 3 + kh) * 3 + kw)];
                            }
                        }
                    y[std::size_t(((b * out_c_ + oc) * Ho + oh) * Wo + ow)] = acc;
                }
    return y;
}

// ---- SoftmaxCrossEntropyLayer -------------------------------------------------

double SoftmaxCrossEntropyLayer::loss_forward(const Tensor& logits,
                                              const std::vector<int>& labels,
                                              LayerCtx& ctx) const {
    require(logits.shape.size() == 2, "softmax-ce: logits must be [B, K]");
    const std::int64_t B = logits.shape[0], K = logits.shape[1];
    require(std::int64_t(labels.size()) == B, "softmax-ce: labels/batch mismatch");

    Tensor probs = Tensor::zeros({B, K});
    double loss_sum = 0.0;
    for (std::int64_t r = 0; r < B; ++r) {
        const float* z = logits.data.data() + r * K;
        float m = z[0];
        for (std::int64_t k = 1; k < K; ++k) m = std::max(m, z[k]);
        float denom = 0.0f;
        for (std::int64_t k = 0; k < K; ++k) {
            const float e = std::exp(z[k] - m);
            probs.data[std::size_t(r * K + k)] = e;
            denom += e;
        }
        for (std::int64_t k = 0; k < K; ++k)
            probs.data[std::size_t(r * K + k)] /= denom;
        const int y = labels[std::size_t(r)];
        require(y >= 0 && y < int(K), "softmax-ce: label out of range");
        loss_sum += -double(z[y] - m - std::log(denom));
    }
    ctx.extra = std::move(probs);
    return loss_sum / double(B);
}

Tensor SoftmaxCrossEntropyLayer::loss_backward(const LayerCtx& ctx,
                                               const std::vector<int>& labels,
                                               double grad_seed) const {
    const Tensor& probs = ctx.extra;
    const std::int64_t B = probs.shape[0], K = probs.shape[1];
    Tensor g = probs;
    g.precision = Precision::Single;
    const float scale = float(grad_seed / double(B));
    for (std::int64_t r = 0; r < B; ++r) {
        for (std::int64_t k = 0; k < K; ++k) {
            float v = g.data[std::size_t(r * K + k)];
            if (int(k) == labels[std::size_t(r)]) v -= 1.0f;
            g.data[std::size_t(r * K + k)] = v * scale;
        }
    }
    return g;
}

Tensor SoftmaxCrossEntropyLayer::forward(const Tensor&, const PrecisionPolicy&,
                                         LayerCtx&) const {
    throw ContractViolation("softmax-ce: loss layer is driven via loss_forward");
}

Tensor SoftmaxCrossEntropyLayer::backward(const Tensor&, const LayerCtx&,
                                          GradMap&) const {
    throw ContractViolation("softmax-ce: loss layer is driven via loss_backward");
}

std::vector<double> SoftmaxCrossEntropyLayer::forward_fp64(const std::vector<double>& x,
                                                           const Shape& in_shape,
                                                           Shape& out_shape,
                                                           const ParamOverride*) const {
    out_shape = in_shape;
    return x;  // the fp64 loss reduction lives in Graph::loss_fp64
}

// ---- Graph --------------------------------------------------------------------

void Graph::add(std::unique_ptr<Layer> layer) {
    require(!finalized_, "graph: cannot add layers after finalize");
    layers_.push_back(std::move(layer));
}

void Graph::finalize(Shape per_example_input_shape) {
    require(!layers_.empty(), "graph: no layers");
    int loss_layers = 0;
    for (const auto& l : layers_) loss_layers += l->is_loss() ? 1 : 0;
    require(loss_layers == 1, "graph: exactly one loss layer required");
    require(layers_.back()->is_loss(), "graph: loss layer must be last");
    input_shape_ = std::move(per_example_input_shape);
    finalized_ = true;
}

Graph Graph::tiny_mlp(std::int64_t input_dim, const std::vector<int>& hidden,
                      int num_classes, Rng& rng) {
    Graph g;
    std::int64_t prev = input_dim;
    int i = 0;
    for (int h : hidden) {
        g.add(std::make_unique<LinearLayer>("fc" + std::to_string(i++), prev, h, rng));
        g.add(std::make_unique<ReluLayer>());
        prev = h;
    }
    g.add(std::make_unique<LinearLayer>("fc" + std::to_string(i), prev, num_classes, rng));
    g.add(std::make_unique<SoftmaxCrossEntropyLayer>());
    g.finalize({input_dim});
    return g;
}

Graph Graph::tiny_cnn(int in_channels, int image_hw, const std::vector<int>& channels,
                      int num_classes, Rng& rng) {
    require(!channels.empty(), "tiny_cnn: need at least one conv channel count");
    Graph g;
    int prev_c = in_channels;
    int hw = image_hw;
    int i = 0;
    for (int c : channels) {
        require(hw % 2 == 0, "tiny_cnn: image size must halve at every conv");
        g.add(std::make_unique<Conv2dLayer>("conv" + std::to_string(i++), prev_c, c, 2, rng));
        g.add(std::make_unique<ReluLayer>());
        prev_c = c;
        hw /= 2;
    }
    g.add(std::make_unique<LinearLayer>("fc", std::int64_t(prev_c) * hw * hw,
                                        num_classes, rng));
    g.add(std::make_unique<SoftmaxCrossEntropyLayer>());
    g.finalize({in_channels, image_hw, image_hw});
    return g;
}

ForwardResult Graph::forward(const Batch& batch, const PrecisionPolicy& policy) const {
    require(finalized_, "graph: forward before finalize");
    policy.validate();
    const std::int64_t rows = batch.rows();
    require(rows > 0, "graph: empty batch");
    require(std::int64_t(batch.labels.size()) == rows, "graph: labels/batch mismatch");
    Shape expect = input_shape_;
    expect.insert(expect.begin(), rows);
    require(batch.inputs.shape == expect,
            "graph: batch shape " + shape_str(batch.inputs.shape) +
                " does not conform to " + shape_str(expect));

    ForwardResult fr;
    fr.rows = rows;
    fr.labels = batch.labels;
    fr.version = version_;
    fr.ctx.resize(layers_.size());

    Tensor x = batch.inputs;
    for (std::size_t i = 0; i + 1 < layers_.size(); ++i) {
        x = layers_[i]->forward(x, policy, fr.ctx[i]);
    }
    fr.logits = std::move(x);

    auto* loss_layer = static_cast<SoftmaxCrossEntropyLayer*>(layers_.back().get());
    const bool logits_finite = fr.logits.all_finite();
    double loss = std::numeric_limits<double>::quiet_NaN();
    if (logits_finite) {
        loss = loss_layer->loss_forward(fr.logits, fr.labels, fr.ctx.back());
    }
    fr.loss = loss;
    fr.overflow = !logits_finite || !std::isfinite(loss);

    const std::int64_t K = fr.logits.shape.size() == 2 ? fr.logits.shape[1] : 0;
    fr.predictions.resize(std::size_t(rows), 0);
    for (std::int64_t r = 0; r < rows; ++r) {
        int best = 0;
        for (std::int64_t k = 1; k < K; ++k) {
            if (fr.logits.data[std::size_t(r * K + k)] >
                fr.logits.data[std::size_t(r * K + best)])
                best = int(k);
        }
        fr.predictions[std::size_t(r)] = best;
    }
    return fr;
}

GradMap Graph::backward(const ForwardResult& fr, double grad_seed) const {
    require(finalized_, "graph: backward before finalize");
    require(!fr.ctx.empty() && fr.ctx.size() == layers_.size(),
            "graph: cache does not match this graph");
    require(fr.version == version_,
            "graph: stale forward cache (parameters changed since forward)");
    require(!fr.overflow, "graph: cannot backward through an overflowed forward");

    auto* loss_layer = static_cast<SoftmaxCrossEntropyLayer*>(layers_.back().get());
    GradMap grads;
    Tensor g = loss_layer->loss_backward(fr.ctx.back(), fr.labels, grad_seed);
    for (std::size_t i = layers_.size() - 1; i-- > 0;) {
        g = layers_[i]->backward(g, fr.ctx[i], grads);
    }
    return grads;
}

double Graph::loss_fp64(const Batch& batch, const ParamOverride* ov) const {
    require(finalized_, "graph: loss_fp64 before finalize");
    const std::int64_t rows = batch.rows();
    std::vector<double> x(batch.inputs.data.size());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = double(batch.inputs.data[i]);
    Shape shape = batch.inputs.shape;

    for (std::size_t i = 0; i + 1 < layers_.size(); ++i) {
        // Linear flattens trailing dimensions, mirror that here.
        if (layers_[i]->kind() == LayerKind::Linear && shape.size() > 2) {
            shape = {rows, numel(shape) / rows};
        }
        Shape out_shape;
        x = layers_[i]->forward_fp64(x, shape, out_shape, ov);
        shape = std::move(out_shape);
    }

    const std::int64_t K = shape[1];
    double loss_sum = 0.0;
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* z = x.data() + r * K;
        double m = z[0];
        for (std::int64_t k = 1; k < K; ++k) m = std::max(m, z[k]);
        double denom = 0.0;
        for (std::int64_t k = 0; k < K; ++k) denom += std::exp(z[k] - m);
        const int y = batch.labels[std::size_t(r)];
        loss_sum += -(z[y] - m - std::log(denom));
    }
    return loss_sum / double(rows);
}

std::vector<Parameter*> Graph::mutable_parameters() {
    ++version_;
    std::vector<Parameter*> out;
    for (auto& l : layers_) l->collect_params(out);
    return out;
}

std::vector<const Parameter*> Graph::parameters() const {
    std::vector<Parameter*> tmp;
    for (auto& l : const_cast<Graph*>(this)->layers_) l->collect_params(tmp);
    return {tmp.begin(), tmp.end()};
}

std::int64_t Graph::flops_per_row() const {
    std::int64_t total = 0;
    for (const auto& l : layers_) total += l->flops_per_row();
    return total;
}

double finite_diff_check(Graph& graph, const Batch& batch, double eps) {
    require(eps > 0.0 && eps <= 1e-2, "finite_diff_check: eps must be in (0, 1e-2]");

    const ForwardResult fr = graph.forward(batch, PrecisionPolicy::full_single());
    require(!fr.overflow, "finite_diff_check: forward overflowed");
    const GradMap grads = graph.backward(fr);

    double worst = 0.0;
    for (const Parameter* p : graph.parameters()) {
        const auto it = grads.find(p->id);
        require(it != grads.end(), "finite_diff_check: missing gradient for " + p->id);
        for (std::int64_t j = 0; j < p->master.size(); ++j) {
            ParamOverride ov{p, j, eps};
            const double plus = graph.loss_fp64(batch, &ov);
            ov.delta = -eps;
            const double minus = graph.loss_fp64(batch, &ov);
            const double fd = (plus - minus) / (2.0 * eps);
            const double bp = double(it->second.data[std::size_t(j)]);
            const double rel =
                std::fabs(fd - bp) / std::max({std::fabs(fd), std::fabs(bp), 1e-8});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

}  // namespace tempo
