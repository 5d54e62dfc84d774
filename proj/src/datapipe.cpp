#include "tempo/datapipe.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <mutex>
#include <thread>

namespace tempo {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Timer-slack-free delay: coarse sleep, then spin out the remainder. The
// simulated transfer times are what the overlap measurements assert against,
// so they need to be accurate well below the 15-20% test tolerances.
void simulate_delay(double seconds) {
    if (seconds <= 0.0) return;
    const auto deadline =
        Clock::now() + std::chrono::duration_cast<Clock::duration>(
                           std::chrono::duration<double>(seconds));
    const auto coarse = deadline - std::chrono::microseconds(400);
    if (coarse > Clock::now()) std::this_thread::sleep_until(coarse);
    while (Clock::now() < deadline) {
    }
}

constexpr std::size_t kCifarPixels = 3 * 32 * 32;

}  // namespace

Batch Dataset::gather(const std::vector<int>& indices) const {
    const std::int64_t row = numel(example_shape);
    Batch b;
    Shape shape = example_shape;
    shape.insert(shape.begin(), std::int64_t(indices.size()));
    b.inputs = Tensor::zeros(shape);
    b.labels.reserve(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const int idx = indices[i];
        std::copy_n(data.begin() + std::int64_t(idx) * row, row,
                    b.inputs.data.begin() + std::int64_t(i) * row);
        b.labels.push_back(labels[std::size_t(idx)]);
    }
    return b;
}

// ---- CIFAR parsing -----------------------------------------------------------

namespace {

Tensor pixels_to_image(std::span<const std::uint8_t> pixels) {
    Tensor img = Tensor::zeros({3, 32, 32});
    for (std::size_t i = 0; i < kCifarPixels; ++i)
        img.data[i] = float(pixels[i]) / 255.0f;
    return img;
}

void image_to_pixels(const Tensor& image, std::vector<std::uint8_t>& out) {
    require(numel(image.shape) == std::int64_t(kCifarPixels),
            "cifar: image must hold 3*32*32 values");
    for (float v : image.data) {
        const float clamped = std::clamp(v, 0.0f, 1.0f);
        out.push_back(std::uint8_t(std::lround(clamped * 255.0f)));
    }
}

}  // namespace

Cifar10Record parse_cifar10_record(std::span<const std::uint8_t> block) {
    if (block.size() != 3073) {
        throw FormatError("cifar10 record: expected 3073 bytes, got " +
                          std::to_string(block.size()));
    }
    return {int(block[0]), pixels_to_image(block.subspan(1))};
}

Cifar100Record parse_cifar100_record(std::span<const std::uint8_t> block) {
    if (block.size() != 3074) {
        throw FormatError("cifar100 record: expected 3074 bytes, got " +
                          std::to_string(block.size()));
    }
    return {int(block[0]), int(block[1]), pixels_to_image(block.subspan(2))};
}

void append_cifar10_record(std::vector<std::uint8_t>& out, int label, const Tensor& image) {
    require(label >= 0 && label <= 9, "cifar10: label must be in [0, 9]");
    out.push_back(std::uint8_t(label));
    image_to_pixels(image, out);
}

void append_cifar100_record(std::vector<std::uint8_t>& out, int coarse, int fine,
                            const Tensor& image) {
    require(coarse >= 0 && coarse <= 19, "cifar100: coarse label must be in [0, 19]");
    require(fine >= 0 && fine <= 99, "cifar100: fine label must be in [0, 99]");
    out.push_back(std::uint8_t(coarse));
    out.push_back(std::uint8_t(fine));
    image_to_pixels(image, out);
}

namespace {

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    in.seekg(0, std::ios::end);
    const auto size = in.tellg();
    in.seekg(0, std::ios::beg);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size), 0);
    if (size > 0) in.read(reinterpret_cast<char*>(bytes.data()), size);
    if (!in) throw IoError("failed to read " + path);
    return bytes;
}

Dataset load_cifar(const std::string& path, int max_records, bool cifar100) {
    const std::size_t record = cifar100 ? 3074 : 3073;
    const std::vector<std::uint8_t> bytes = read_file(path);
    if (bytes.size() % record != 0) {
        throw FormatError(path + ": size " + std::to_string(bytes.size()) +
                          " is not a whole number of " + std::to_string(record) +
                          "-byte records");
    }
    std::size_t n = bytes.size() / record;
    if (max_records > 0) n = std::min(n, std::size_t(max_records));

    Dataset ds;
    ds.example_shape = {3, 32, 32};
    ds.num_classes = cifar100 ? 100 : 10;
    ds.data.reserve(n * kCifarPixels);
    ds.labels.reserve(n);
    for (std::size_t r = 0; r < n; ++r) {
        std::span<const std::uint8_t> block(bytes.data() + r * record, record);
        int label;
        std::span<const std::uint8_t> pixels;
        if (cifar100) {
            label = int(block[1]);  // fine label drives training
            pixels = block.subspan(2);
        } else {
            label = int(block[0]);
            pixels = block.subspan(1);
        }
        if (label >= ds.num_classes) {
            throw FormatError(path + ": record " + std::to_string(r) +
                              " (offset " + std::to_string(r * record) +
                              ") has out-of-range label " + std::to_string(label));
        }
        ds.labels.push_back(label);
        for (std::size_t i = 0; i < kCifarPixels; ++i)
            ds.data.push_back(float(pixels[i]) / 255.0f);
    }
    return ds;
}

}  // namespace

Dataset load_cifar10(const std::string& path, int max_records) {
    return load_cifar(path, max_records, false);
}

Dataset load_cifar100(const std::string& path, int max_records) {
    return load_cifar(path, max_records, true);
}

void normalize_dataset(Dataset& ds, const std::vector<double>& mean,
                       const std::vector<double>& stddev) {
    if (mean.empty() && stddev.empty()) return;
    require(mean.size() == stddev.size(), "normalize: mean/std length mismatch");
    const std::size_t channels = mean.size();
    const std::int64_t row = numel(ds.example_shape);
    const bool per_channel = ds.example_shape.size() >= 2 &&
                             std::size_t(ds.example_shape[0]) == channels;
    require(per_channel || channels == 1,
            "normalize: channel count does not match example shape " +
                shape_str(ds.example_shape));
    for (double s : stddev) require(s > 0.0, "normalize: std must be positive");

    const std::int64_t per_ch = per_channel ? row / std::int64_t(channels) : row;
    for (std::size_t r = 0; r < ds.labels.size(); ++r) {
        float* base = ds.data.data() + std::int64_t(r) * row;
        for (std::int64_t i = 0; i < row; ++i) {
            const std::size_t c = per_channel ? std::size_t(i / per_ch) : 0;
            base[i] = float((double(base[i]) - mean[c]) / stddev[c]);
        }
    }
}

Dataset make_synthetic(int num_classes, int dims, int size, std::uint64_t seed) {
    require(num_classes >= 2, "synthetic: need at least 2 classes");
    require(dims >= 1 && size >= 1, "synthetic: dims and size must be positive");

    constexpr double kMargin = 2.2;
    constexpr double kNoise = 0.5;

    Dataset ds;
    ds.example_shape = {dims};
    ds.num_classes = num_classes;
    ds.data.reserve(std::size_t(size) * std::size_t(dims));
    ds.labels.reserve(std::size_t(size));

    Rng rng = Rng::derive(seed, 0x5337);
    for (int i = 0; i < size; ++i) {
        const int label = i % num_classes;
        ds.labels.push_back(label);
        const int axis = label % dims;
        for (int d = 0; d < dims; ++d) {
            double v = kNoise * rng.gaussian();
            if (d == axis) v += kMargin;
            ds.data.push_back(float(v));
        }
    }
    return ds;
}

namespace {

// Class-structured 32x32 image: per-class channel brightness plus a quadrant
// pattern keyed by the class bits, with pixel noise. Learnable from bytes.
Tensor synthetic_image(int label, Rng& rng) {
    Tensor img = Tensor::zeros({3, 32, 32});
    for (int c = 0; c < 3; ++c) {
        const double base = 0.35 + 0.025 * double((label * 3 + c) % 10);
        for (int r = 0; r < 32; ++r) {
            for (int col = 0; col < 32; ++col) {
                const int quadrant = (r >= 16 ? 2 : 0) + (col >= 16 ? 1 : 0);
                const double sign = ((label >> quadrant) & 1) ? 1.0 : -1.0;
                const double v = base + 0.09 * sign + 0.18 * rng.gaussian();
                img.data[std::size_t((c * 32 + r) * 32 + col)] =
                    float(std::clamp(v, 0.0, 1.0));
            }
        }
    }
    return img;
}

}  // namespace

void write_cifar10_fixture(const std::string& path, int records, std::uint64_t seed) {
    require(records > 0, "fixture: record count must be positive");
    Rng rng = Rng::derive(seed, 0xC1FA);
    std::vector<std::uint8_t> bytes;
    bytes.reserve(std::size_t(records) * 3073);
    for (int i = 0; i < records; ++i) {
        const int label = int(rng.below(10));
        append_cifar10_record(bytes, label, synthetic_image(label, rng));
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!out) throw IoError("failed to write " + path);
}

void write_cifar100_fixture(const std::string& path, int records, std::uint64_t seed) {
    require(records > 0, "fixture: record count must be positive");
    Rng rng = Rng::derive(seed, 0xC1FB);
    std::vector<std::uint8_t> bytes;
    bytes.reserve(std::size_t(records) * 3074);
    for (int i = 0; i < records; ++i) {
        const int fine = int(rng.below(100));
        append_cifar100_record(bytes, fine / 5, fine, synthetic_image(fine % 10, rng));
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!out) throw IoError("failed to write " + path);
}

std::vector<Batch> make_batches(const Dataset& ds, int batch_size, std::uint64_t seed,
                                int epoch) {
    require(ds.size() > 0, "make_batches: empty dataset");
    require(batch_size >= 1, "make_batches: batch size must be positive");
    require(std::int64_t(batch_size) <= ds.size(),
            "make_batches: batch size exceeds dataset size");

    std::vector<int> order(std::size_t(ds.size()));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = int(i);
    Rng rng = Rng::derive(seed, 0xE90C + std::uint64_t(epoch));
    for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[std::size_t(rng.below(i))]);
    }

    const std::size_t n_batches = order.size() / std::size_t(batch_size);
    std::vector<Batch> batches;
    batches.reserve(n_batches);
    for (std::size_t b = 0; b < n_batches; ++b) {
        std::vector<int> idx(order.begin() + std::int64_t(b) * batch_size,
                             order.begin() + std::int64_t(b + 1) * batch_size);
        batches.push_back(ds.gather(idx));
    }
    return batches;
}

std::pair<Dataset, Dataset> split_train_val(const Dataset& ds, double val_fraction,
                                            std::uint64_t seed) {
    require(val_fraction > 0.0 && val_fraction < 1.0,
            "split: val_fraction must lie in (0, 1)");
    require(ds.size() >= 2, "split: dataset too small");

    std::vector<int> order(std::size_t(ds.size()));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = int(i);
    Rng rng = Rng::derive(seed, 0x59117);
    for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[std::size_t(rng.below(i))]);
    }

    std::size_t n_val = std::size_t(std::llround(double(ds.size()) * val_fraction));
    n_val = std::clamp<std::size_t>(n_val, 1, order.size() - 1);
    const std::size_t n_train = order.size() - n_val;

    auto take = [&](std::size_t begin, std::size_t count) {
        Dataset out;
        out.example_shape = ds.example_shape;
        out.num_classes = ds.num_classes;
        const std::int64_t row = numel(ds.example_shape);
        out.data.reserve(count * std::size_t(row));
        out.labels.reserve(count);
        for (std::size_t i = begin; i < begin + count; ++i) {
            const int idx = order[i];
            out.labels.push_back(ds.labels[std::size_t(idx)]);
            const float* src = ds.data.data() + std::int64_t(idx) * row;
            out.data.insert(out.data.end(), src, src + row);
        }
        return out;
    };
    return {take(0, n_train), take(n_train, n_val)};
}

std::vector<double> batch_signature(const Batch& batch, int max_dim) {
    require(max_dim >= 1, "batch_signature: max_dim must be positive");
    const std::int64_t rows = batch.rows();
    require(rows > 0, "batch_signature: empty batch");
    const std::int64_t feat = batch.inputs.size() / rows;
    const std::int64_t dim = std::min<std::int64_t>(feat, max_dim);
    const std::int64_t stride = (feat + dim - 1) / dim;

    std::vector<double> sig(std::size_t(dim), 0.0);
    for (std::int64_t r = 0; r < rows; ++r) {
        const float* row = batch.inputs.data.data() + r * feat;
        for (std::int64_t j = 0; j < dim; ++j) sig[std::size_t(j)] += double(row[j * stride]);
    }
    for (auto& v : sig) v /= double(rows);
    return sig;
}

// ---- StagingPipeline ----------------------------------------------------------

StagingPipeline::StagingPipeline(int k_buffers, TransferModel tm, PinPolicyConfig policy)
    : k_(k_buffers), tm_(tm), policy_(std::move(policy)) {
    require(k_buffers >= 1, "pipeline: need at least one staging buffer");
    tm_.validate();
    if (policy_.enabled && policy_.params.alpha.empty()) {
        policy_.params.alpha.assign(std::size_t(k_), 1.0 / double(k_));
    }
    if (policy_.enabled) policy_.params.validate(std::size_t(k_));
}

std::vector<std::vector<std::uint8_t>> StagingPipeline::pin_histories() const {
    std::vector<std::vector<std::uint8_t>> out;
    out.reserve(buffers_.size());
    for (const auto& b : buffers_) out.push_back(b.pin_history);
    return out;
}

PipelineTimings StagingPipeline::run(const std::vector<Batch>& batches,
                                     const std::function<void(int, const Batch&)>& compute) {
    PipelineTimings t;
    if (batches.empty()) return t;

    if (!initialized_) {
        const std::int64_t sig_dim =
            std::min<std::int64_t>(batches[0].inputs.size() / batches[0].rows(), 64);
        buffers_.resize(std::size_t(k_));
        for (int i = 0; i < k_; ++i) {
            buffers_[std::size_t(i)].index = i;
            buffers_[std::size_t(i)].capacity_bytes = batches[0].bytes();
            buffers_[std::size_t(i)].pinned = policy_.enabled || policy_.default_pinned;
            buffers_[std::size_t(i)].signature.assign(std::size_t(sig_dim), 0.0);
        }
        initialized_ = true;
    }

    struct Slot {
        Batch batch;
        int batch_index = -1;
    };
    std::vector<Slot> slots;
    slots.resize(std::size_t(k_));

    std::mutex mu;
    std::condition_variable cv;
    std::deque<int> fifo;
    std::vector<char> free_slot(std::size_t(k_), 1);
    std::atomic<bool> abort{false};
    bool producing_done = false;

    t.transfer_seconds.assign(batches.size(), 0.0);
    t.compute_seconds.assign(batches.size(), 0.0);

    const auto wall0 = Clock::now();

    std::thread producer([&] {
        for (std::size_t i = 0; i < batches.size() && !abort.load(); ++i) {
            const Batch& b = batches[i];

            int idx;
            if (policy_.enabled) {
                idx = pin::allocate(batch_signature(b), buffers_, policy_.params);
            } else {
                idx = int(round_robin_ % k_);
            }
            ++round_robin_;

            {
                std::unique_lock<std::mutex> lk(mu);
                cv.wait(lk, [&] { return free_slot[std::size_t(idx)] || abort.load(); });
                if (abort.load()) break;
                free_slot[std::size_t(idx)] = 0;
            }

            const auto t0 = Clock::now();
            simulate_delay(
                tm_.transfer_seconds(b.bytes(), buffers_[std::size_t(idx)].pinned));
            slots[std::size_t(idx)].batch = b;  // the staging copy
            slots[std::size_t(idx)].batch_index = int(i);
            const double dt = seconds_since(t0);
            t.transfer_seconds[i] = dt;
            t.producer_busy_seconds += dt;

            if (policy_.enabled) {
                auto& buf = buffers_[std::size_t(idx)];
                const std::vector<double> h = batch_signature(b);
                std::vector<double> grad(h.size());
                for (std::size_t j = 0; j < h.size(); ++j)
                    grad[j] = buf.signature[j] - h[j];  // d/dm of 0.5*|m - h|^2
                buf.signature =
                    pin::update_memory(buf.signature, h, buf.pinned, grad, policy_.params);
            }

            // One history entry per tick; on repin ticks the appended entry is
            // the fresh decision.
            ++tick_;
            bool did_repin = false;
            if (policy_.enabled && tick_ % policy_.params.window == 0) {
                bool enough = true;
                for (const auto& buf : buffers_) enough = enough && buf.pin_history.size() >= 2;
                if (enough) {
                    pin::repin(buffers_, policy_.params);
                    did_repin = true;
                }
            }
            if (!did_repin) {
                for (auto& buf : buffers_) buf.pin_history.push_back(buf.pinned ? 1 : 0);
            }

            {
                std::lock_guard<std::mutex> lk(mu);
                fifo.push_back(idx);
            }
            cv.notify_all();
        }
        {
            std::lock_guard<std::mutex> lk(mu);
            producing_done = true;
        }
        cv.notify_all();
    });

    // Consumer runs on the calling thread, strictly in FIFO (= input) order.
    for (;;) {
        int idx = -1;
        {
            std::unique_lock<std::mutex> lk(mu);
            cv.wait(lk, [&] { return !fifo.empty() || producing_done || abort.load(); });
            if (!fifo.empty()) {
                idx = fifo.front();
                fifo.pop_front();
            } else {
                break;  // producer finished (or aborted) and nothing is staged
            }
        }
        const Slot& slot = slots[std::size_t(idx)];
        const auto t0 = Clock::now();
        try {
            compute(slot.batch_index, slot.batch);
        } catch (...) {
            t.aborted = true;
            t.abort_exception = std::current_exception();
            try {
                std::rethrow_exception(t.abort_exception);
            } catch (const std::exception& e) {
                t.abort_message = e.what();
            } catch (...) {
                t.abort_message = "unknown consumer failure";
            }
            abort.store(true);
            cv.notify_all();
            break;
        }
        const double dt = seconds_since(t0);
        t.compute_seconds[std::size_t(slot.batch_index)] = dt;
        t.consumer_busy_seconds += dt;
        ++t.batches_delivered;

        {
            std::lock_guard<std::mutex> lk(mu);
            free_slot[std::size_t(idx)] = 1;
        }
        cv.notify_all();
    }

    producer.join();
    t.total_seconds = seconds_since(wall0);
    t.pin_histories = pin_histories();
    return t;
}

PipelineTimings run_pipeline(const std::vector<Batch>& batches, int k_buffers,
                             const TransferModel& tm, const PinPolicyConfig& policy,
                             const std::function<void(int, const Batch&)>& compute) {
    StagingPipeline pipeline(k_buffers, tm, policy);
    return pipeline.run(batches, compute);
}

}  // namespace tempo
