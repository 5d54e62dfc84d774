#pragma once

#include <memory>
#include <string>
#include <vector>

#include "tempo/amp.hpp"
#include "tempo/tensor.hpp"

namespace tempo {

// Master copy is always single precision; grad mirrors its shape when set.
struct Parameter {
    std::string id;
    Tensor master;
    Tensor grad;
};

struct Batch {
    Tensor inputs;            // [B, ...]
    std::vector<int> labels;  // length B, values in [0, num_classes)

    std::int64_t rows() const { return inputs.shape.empty() ? 0 : inputs.shape[0]; }
    std::int64_t bytes() const {
        return std::int64_t(inputs.data.size() * sizeof(float) +
                            labels.size() * sizeof(int));
    }
};

enum class LayerKind { Linear, Relu, Conv2d, SoftmaxCrossEntropy };

// Per-layer state saved by forward for the matching backward.
struct LayerCtx {
    Tensor input;  // input as consumed (already snapped when the op ran in half)
    Tensor extra;  // layer-specific (softmax keeps probabilities here)
};

// One perturbed parameter element for the double-precision reference path.
struct ParamOverride {
    const Parameter* param = nullptr;
    std::int64_t index = 0;
    double delta = 0.0;
};

class Layer {
public:
    virtual ~Layer() = default;

    virtual LayerKind kind() const = 0;
    virtual bool is_loss() const { return false; }

    virtual Tensor forward(const Tensor& x, const PrecisionPolicy& policy,
                           LayerCtx& ctx) const = 0;
    /// Given dL/dy, writes parameter gradients into `grads` and returns dL/dx.
    virtual Tensor backward(const Tensor& grad_out, const LayerCtx& ctx,
                            GradMap& grads) const = 0;

    virtual void collect_params(std::vector<Parameter*>& out) {}

    /// Double-precision reference forward for the finite-difference oracle.
    /// Reads master weights (with at most one element overridden) in double.
    virtual std::vector<double> forward_fp64(const std::vector<double>& x,
                                             const Shape& in_shape, Shape& out_shape,
                                             const ParamOverride* ov) const = 0;

    /// Approximate multiply-accumulate count per example, forward pass.
    virtual std::int64_t flops_per_row() const { return 0; }
};

struct ForwardResult {
    double loss = 0.0;
    bool overflow = false;  // non-finite logits or loss; value of `loss` is then meaningless
    Tensor logits;
    std::vector<int> predictions;  // argmax per row
    std::vector<int> labels;
    std::vector<LayerCtx> ctx;
    std::int64_t rows = 0;
    std::uint64_t version = 0;  // graph parameter version at forward time
};

class Graph {
public:
    Graph() = default;
    Graph(Graph&&) = default;
    Graph& operator=(Graph&&) = default;

    void add(std::unique_ptr<Layer> layer);
    /// Checks the layer stack: non-empty, exactly one loss layer, at the end.
    void finalize(Shape per_example_input_shape);

    static Graph tiny_mlp(std::int64_t input_dim, const std::vector<int>& hidden,
                          int num_classes, Rng& rng);
    /// 3x3 convs with stride 2 and padding 1, ReLU between, linear head.
    /// image_hw must be divisible by 2^(number of conv layers).
    static Graph tiny_cnn(int in_channels, int image_hw,
                          const std::vector<int>& channels, int num_classes,
                          Rng& rng);

    ForwardResult forward(const Batch& batch, const PrecisionPolicy& policy) const;

    /// Gradients of grad_seed * mean-batch loss w.r.t. every parameter, in
    /// single precision. Seeding with the loss scale S yields the gradients
    /// of the scaled loss. Throws on a stale cache.
    GradMap backward(const ForwardResult& fr, double grad_seed = 1.0) const;

    /// Double-precision loss used by the finite-difference oracle; `ov`
    /// perturbs one parameter element without touching float storage.
    double loss_fp64(const Batch& batch, const ParamOverride* ov = nullptr) const;

    std::vector<Parameter*> mutable_parameters();  // bumps the version
    std::vector<const Parameter*> parameters() const;
    void bump_version() { ++version_; }
    std::uint64_t version() const { return version_; }

    std::int64_t flops_per_row() const;
    const Shape& input_shape() const { return input_shape_; }
    std::size_t layer_count() const { return layers_.size(); }

private:
    std::vector<std::unique_ptr<Layer>> layers_;
    Shape input_shape_;  // per example, without the batch dimension
    std::uint64_t version_ = 0;
    bool finalized_ = false;
};

// ---- Layer zoo ----------------------------------------------------------

class LinearLayer final : public Layer {
public:
    /// Kaiming-uniform fan-in weights, zero bias.
    LinearLayer(std::string id, std::int64_t in, std::int64_t out, Rng& rng);
    /// Explicit weights, for tests.
    LinearLayer(std::string id, Tensor weight, Tensor bias);

    LayerKind kind() const override { return LayerKind::Linear; }
    Tensor forward(const Tensor& x, const PrecisionPolicy& policy,
                   LayerCtx& ctx) const override;
    Tensor backward(const Tensor& grad_out, const LayerCtx& ctx,
                    GradMap& grads) const override;
    void collect_params(std::vector<Parameter*>& out) override;
    std::vector<double> forward_fp64(const std::vector<double>& x, const Shape& in_shape,
                                     Shape& out_shape, const ParamOverride* ov) const override;
    std::int64_t flops_per_row() const override { return in_ * out_; }

private:
    Parameter weight_;  // [out, in]
    Parameter bias_;    // [out]
    std::int64_t in_ = 0, out_ = 0;
};

class ReluLayer : public Layer {
public:
    LayerKind kind() const override { return LayerKind::Relu; }
    Tensor forward(const Tensor& x, const PrecisionPolicy& policy,
                   LayerCtx& ctx) const override;
    Tensor backward(const Tensor& grad_out, const LayerCtx& ctx,
                    GradMap& grads) const override;
    std::vector<double> forward_fp64(const std::vector<double>& x, const Shape& in_shape,
                                     Shape& out_shape, const ParamOverride* ov) const override;
};

class Conv2dLayer final : public Layer {
public:
    /// 3x3 kernel, padding 1, stride 1 or 2.
    Conv2dLayer(std::string id, int in_channels, int out_channels, int stride, Rng& rng);

    LayerKind kind() const override { return LayerKind::Conv2d; }
    Tensor forward(const Tensor& x, const PrecisionPolicy& policy,
                   LayerCtx& ctx) const override;
    Tensor backward(const Tensor& grad_out, const LayerCtx& ctx,
                    GradMap& grads) const override;
    void collect_params(std::vector<Parameter*>& out) override;
    std::vector<double> forward_fp64(const std::vector<double>& x, const Shape& in_shape,
                                     Shape& out_shape, const ParamOverride* ov) const override;
    std::int64_t flops_per_row() const override;

private:
    Parameter weight_;  // [outC, inC, 3, 3]
    Parameter bias_;    // [outC]
    int in_c_ = 0, out_c_ = 0, stride_ = 1;
};

// Mean cross-entropy over the batch; softmax and the reduction always run in
// single precision regardless of the election.
class SoftmaxCrossEntropyLayer final : public Layer {
public:
    LayerKind kind() const override { return LayerKind::SoftmaxCrossEntropy; }
    bool is_loss() const override { return true; }

    Tensor forward(const Tensor& x, const PrecisionPolicy& policy,
                   LayerCtx& ctx) const override;
    Tensor backward(const Tensor& grad_out, const LayerCtx& ctx,
                    GradMap& grads) const override;
    std::vector<double> forward_fp64(const std::vector<double>& x, const Shape& in_shape,
                                     Shape& out_shape, const ParamOverride* ov) const override;

    double loss_forward(const Tensor& logits, const std::vector<int>& labels,
                        LayerCtx& ctx) const;
    /// dL/dlogits of grad_seed * mean CE: (softmax - one_hot) * grad_seed / B.
    Tensor loss_backward(const LayerCtx& ctx, const std::vector<int>& labels,
                         double grad_seed) const;
};

/// Central-difference check of backward against the double-precision
/// reference forward. Returns the max over parameter elements of
/// |fd - bp| / max(|fd|, |bp|, 1e-8). eps must lie in (0, 1e-2].
double finite_diff_check(Graph& graph, const Batch& batch, double eps);

}  // namespace tempo
