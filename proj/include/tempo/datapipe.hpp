#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tempo/autograd.hpp"
#include "tempo/pinpolicy.hpp"
#include "tempo/staging.hpp"
#include "tempo/tensor.hpp"

namespace tempo {

// In-memory dataset: row-major examples of a fixed per-example shape.
struct Dataset {
    Shape example_shape;
    std::vector<float> data;  // size() * numel(example_shape) floats
    std::vector<int> labels;
    int num_classes = 0;

    std::int64_t size() const { return std::int64_t(labels.size()); }
    Batch gather(const std::vector<int>& indices) const;
};

// ---- CIFAR binary format ------------------------------------------------
//
// CIFAR-10 records are 3073 bytes: 1 label byte then 3072 pixel bytes,
// channel-major R,G,B, row-major within a channel, scaled to [0, 1].
// CIFAR-100 records are 3074 bytes: coarse byte, fine byte, 3072 pixels.

struct Cifar10Record {
    int label = 0;
    Tensor image;  // [3, 32, 32]
};

struct Cifar100Record {
    int coarse = 0;
    int fine = 0;
    Tensor image;
};

Cifar10Record parse_cifar10_record(std::span<const std::uint8_t> block);
Cifar100Record parse_cifar100_record(std::span<const std::uint8_t> block);

/// Inverse of the parsers; pixel values are clamped to [0, 1] and quantized
/// back to bytes.
void append_cifar10_record(std::vector<std::uint8_t>& out, int label, const Tensor& image);
void append_cifar100_record(std::vector<std::uint8_t>& out, int coarse, int fine,
                            const Tensor& image);

/// Loads up to max_records (0 = all). Labels are range-checked.
Dataset load_cifar10(const std::string& path, int max_records = 0);
Dataset load_cifar100(const std::string& path, int max_records = 0);

/// Optional per-channel normalization applied in place: (x - mean) / std.
/// For flat datasets the whole example counts as one channel.
void normalize_dataset(Dataset& ds, const std::vector<double>& mean,
                       const std::vector<double>& stddev);

/// Linearly separable clusters: class c centered on axis (c mod dims) with
/// Gaussian-shaped noise. Deterministic in the seed.
Dataset make_synthetic(int num_classes, int dims, int size, std::uint64_t seed);

/// Writes a CIFAR-10-format file of class-structured synthetic images, a
/// stand-in for the real dataset that a small CNN can genuinely learn.
void write_cifar10_fixture(const std::string& path, int records, std::uint64_t seed);
void write_cifar100_fixture(const std::string& path, int records, std::uint64_t seed);

/// Deterministic shuffle keyed by (seed, epoch); the trailing partial batch
/// is dropped. Identical arguments produce the identical sequence.
std::vector<Batch> make_batches(const Dataset& ds, int batch_size, std::uint64_t seed,
                                int epoch);

/// Split off the last val_fraction of a deterministic shuffle, fixed across
/// epochs.
std::pair<Dataset, Dataset> split_train_val(const Dataset& ds, double val_fraction,
                                            std::uint64_t seed);

/// Per-feature mean over the batch, subsampled with a fixed stride down to at
/// most max_dim entries; the content fingerprint h_t scored by the pin policy.
std::vector<double> batch_signature(const Batch& batch, int max_dim = 64);

// ---- Staging pipeline ------------------------------------------------------

struct PinPolicyConfig {
    bool enabled = false;
    pin::PolicyParams params;  // alpha may be left empty: filled uniformly
    bool default_pinned = true;
};

struct PipelineTimings {
    double total_seconds = 0.0;
    double producer_busy_seconds = 0.0;
    double consumer_busy_seconds = 0.0;
    std::vector<double> transfer_seconds;  // per batch
    std::vector<double> compute_seconds;   // per batch
    int batches_delivered = 0;
    bool aborted = false;
    std::string abort_message;
    std::exception_ptr abort_exception;
    std::vector<std::vector<std::uint8_t>> pin_histories;
};

// One producer (simulated transfer into k staging slots) and one consumer
// over a FIFO of filled slots, so batches are delivered in input order for
// every k. Buffers and policy state persist across run() calls.
class StagingPipeline {
public:
    StagingPipeline(int k_buffers, TransferModel tm, PinPolicyConfig policy);

    PipelineTimings run(const std::vector<Batch>& batches,
                        const std::function<void(int, const Batch&)>& compute);

    const std::vector<StagingBuffer>& buffers() const { return buffers_; }
    std::vector<std::vector<std::uint8_t>> pin_histories() const;

private:
    int k_ = 1;
    TransferModel tm_;
    PinPolicyConfig policy_;
    std::vector<StagingBuffer> buffers_;
    std::int64_t tick_ = 0;
    std::int64_t round_robin_ = 0;
    bool initialized_ = false;
};

/// One-shot convenience wrapper around StagingPipeline.
PipelineTimings run_pipeline(const std::vector<Batch>& batches, int k_buffers,
                             const TransferModel& tm, const PinPolicyConfig& policy,
                             const std::function<void(int, const Batch&)>& compute);

}  // namespace tempo
