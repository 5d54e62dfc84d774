#include <chrono>
#include <cstdio>
#include <filesystem>
#include <set>

#include <doctest.h>

#include "helpers.hpp"
#include "tempo/datapipe.hpp"

using namespace tempo;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

TransferModel fast_tm() {
    TransferModel tm;
    tm.fixed_latency = 0.0;
    tm.per_byte_pageable = 1e-12;
    tm.per_byte_pinned = 1e-12;
    return tm;
}

}  // namespace

TEST_CASE("cifar10 record parsing places label and pixels") {
    std::vector<std::uint8_t> block(3073, 0);
    const Cifar10Record zero = parse_cifar10_record(block);
    CHECK(zero.label == 0);
    for (float v : zero.image.data) REQUIRE(v == 0.0f);

    block[0] = 9;
    block[1] = 255;
    const Cifar10Record r = parse_cifar10_record(block);
    CHECK(r.label == 9);
    CHECK(r.image.data[0] == 1.0f);  // pixel (channel 0, row 0, col 0)
    CHECK(r.image.data[1] == 0.0f);

    block.pop_back();
    CHECK_THROWS_AS(parse_cifar10_record(block), FormatError);
}

TEST_CASE("cifar100 record parsing handles both label bytes") {
    std::vector<std::uint8_t> block(3074, 0);
    const Cifar100Record zero = parse_cifar100_record(block);
    CHECK(zero.coarse == 0);
    CHECK(zero.fine == 0);

    block[0] = 19;
    block[1] = 99;
    const Cifar100Record r = parse_cifar100_record(block);
    CHECK(r.coarse == 19);
    CHECK(r.fine == 99);

    block.push_back(0);
    CHECK_THROWS_AS(parse_cifar100_record(block), FormatError);
}

TEST_CASE("cifar10 records round-trip through write and parse") {
    Rng rng(5);
    for (int rec = 0; rec < 3; ++rec) {
        Tensor img = Tensor::zeros({3, 32, 32});
        // Quantized values so the byte round trip is exact.
        for (auto& v : img.data) v = float(rng.below(256)) / 255.0f;
        const int label = int(rng.below(10));

        std::vector<std::uint8_t> bytes;
        append_cifar10_record(bytes, label, img);
        REQUIRE(bytes.size() == 3073);
        const Cifar10Record back = parse_cifar10_record(bytes);
        CHECK(back.label == label);
        REQUIRE(bits_equal(back.image, img));
    }
}

TEST_CASE("cifar100 records round-trip through write and parse") {
    Rng rng(7);
    for (int rec = 0; rec < 5; ++rec) {
        Tensor img = Tensor::zeros({3, 32, 32});
        for (auto& v : img.data) v = float(rng.below(256)) / 255.0f;
        const int fine = int(rng.below(100));
        const int coarse = fine / 5;
        std::vector<std::uint8_t> bytes;
        append_cifar100_record(bytes, coarse, fine, img);
        const Cifar100Record back = parse_cifar100_record(bytes);
        CHECK(back.coarse == coarse);
        CHECK(back.fine == fine);
        REQUIRE(bits_equal(back.image, img));
    }
}

TEST_CASE("fixture files load back with matching labels and shapes") {
    const std::string path = temp_path("tempo_fixture_test.bin");
    write_cifar10_fixture(path, 50, 42);
    const Dataset ds = load_cifar10(path, 0);
    CHECK(ds.size() == 50);
    CHECK(ds.num_classes == 10);
    CHECK(ds.example_shape == Shape{3, 32, 32});

    const Dataset limited = load_cifar10(path, 20);
    CHECK(limited.size() == 20);
    for (std::size_t i = 0; i < 20 * 3072; ++i) {
        REQUIRE(limited.data[i] == ds.data[i]);
    }
    std::filesystem::remove(path);
}

TEST_CASE("loader rejects truncated files and corrupt labels") {
    const std::string path = temp_path("tempo_fixture_bad.bin");
    std::vector<std::uint8_t> bytes(3073, 0);
    bytes[0] = 12;  // label out of range for cifar10
    {
        std::FILE* f = std::fopen(path.c_str(), "wb");
        REQUIRE(f != nullptr);
        std::fwrite(bytes.data(), 1, bytes.size(), f);
        std::fclose(f);
    }
    CHECK_THROWS_AS(load_cifar10(path, 0), FormatError);
    {
        std::FILE* f = std::fopen(path.c_str(), "wb");
        REQUIRE(f != nullptr);
        std::fwrite(bytes.data(), 1, 100, f);  // not a whole record
        std::fclose(f);
    }
    CHECK_THROWS_AS(load_cifar10(path, 0), FormatError);
    CHECK_THROWS_AS(load_cifar10(temp_path("missing_tempo_file.bin"), 0), IoError);
    std::filesystem::remove(path);
}

TEST_CASE("make_batches shuffles deterministically and drops the remainder") {
    const Dataset ds = make_synthetic(3, 4, 50, 9);

    SUBCASE("full-batch is a permutation") {
        const auto batches = make_batches(ds, 50, 1, 0);
        REQUIRE(batches.size() == 1);
        std::multiset<int> seen(batches[0].labels.begin(), batches[0].labels.end());
        std::multiset<int> want(ds.labels.begin(), ds.labels.end());
        CHECK(seen == want);
    }
    SUBCASE("same seed and epoch reproduce the same order") {
        const auto a = make_batches(ds, 8, 3, 2);
        const auto b = make_batches(ds, 8, 3, 2);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            REQUIRE(bits_equal(a[i].inputs, b[i].inputs));
            REQUIRE(a[i].labels == b[i].labels);
        }
        const auto c = make_batches(ds, 8, 3, 3);
        bool any_diff = false;
        for (std::size_t i = 0; i < a.size() && !any_diff; ++i)
            any_diff = !bits_equal(a[i].inputs, c[i].inputs);
        CHECK(any_diff);
    }
    SUBCASE("batches cover the dataset minus the dropped remainder") {
        const auto batches = make_batches(ds, 8, 3, 0);
        CHECK(batches.size() == 6);  // 50 / 8, remainder 2 dropped
        // Multiset comparison on a content fingerprint of every example.
        const std::int64_t row = numel(ds.example_shape);
        auto fp = [&](const float* p, int label) {
            double h = label;
            for (std::int64_t i = 0; i < row; ++i) h += double(p[i]) * double(i + 1);
            return (long long)(h * 4096.0);
        };
        std::multiset<long long> seen, want;
        for (const auto& b : batches) {
            for (std::int64_t r = 0; r < b.rows(); ++r)
                seen.insert(fp(b.inputs.data.data() + r * row, b.labels[std::size_t(r)]));
        }
        for (std::int64_t r = 0; r < ds.size(); ++r)
            want.insert(fp(ds.data.data() + r * row, ds.labels[std::size_t(r)]));
        // 48 of 50 delivered; every delivered example exists in the dataset
        CHECK(seen.size() == 48);
        for (long long v : seen) REQUIRE(want.count(v) >= 1);
    }
    SUBCASE("contract violations") {
        Dataset empty;
        empty.example_shape = {4};
        CHECK_THROWS_AS(make_batches(empty, 4, 1, 0), ContractViolation);
        CHECK_THROWS_AS(make_batches(ds, 51, 1, 0), ContractViolation);
    }
}

TEST_CASE("train/val split is deterministic and disjoint in size") {
    const Dataset ds = make_synthetic(4, 6, 100, 11);
    auto [train_a, val_a] = split_train_val(ds, 0.1, 7);
    auto [train_b, val_b] = split_train_val(ds, 0.1, 7);
    CHECK(train_a.size() == 90);
    CHECK(val_a.size() == 10);
    CHECK(train_a.labels == train_b.labels);
    CHECK(val_a.labels == val_b.labels);
}

TEST_CASE("batch signature is the strided per-feature mean") {
    Batch b;
    b.inputs = Tensor::of({2, 4}, {1.0f, 2.0f, 3.0f, 4.0f, 3.0f, 4.0f, 5.0f, 6.0f});
    b.labels = {0, 1};
    const auto sig = batch_signature(b, 64);
    REQUIRE(sig.size() == 4);
    CHECK(sig[0] == doctest::Approx(2.0));
    CHECK(sig[1] == doctest::Approx(3.0));
    CHECK(sig[2] == doctest::Approx(4.0));
    CHECK(sig[3] == doctest::Approx(5.0));

    const auto capped = batch_signature(b, 2);  // stride 2 keeps features 0 and 2
    REQUIRE(capped.size() == 2);
    CHECK(capped[0] == doctest::Approx(2.0));
    CHECK(capped[1] == doctest::Approx(4.0));
}

TEST_CASE("pipeline delivers every batch bit-identically in order for any k") {
    const Dataset ds = make_synthetic(3, 6, 64, 13);
    const auto batches = make_batches(ds, 8, 13, 0);

    std::vector<std::vector<Batch>> delivered;
    for (int k : {1, 2, 3}) {
        for (bool pinned : {false, true}) {
            PinPolicyConfig policy;
            policy.default_pinned = pinned;
            std::vector<Batch> got;
            std::vector<int> order;
            const PipelineTimings t = run_pipeline(
                batches, k, fast_tm(), policy, [&](int idx, const Batch& b) {
                    order.push_back(idx);
                    got.push_back(b);
                });
            REQUIRE_FALSE(t.aborted);
            REQUIRE(t.batches_delivered == int(batches.size()));
            for (std::size_t i = 0; i < order.size(); ++i)
                REQUIRE(order[i] == int(i));  // never reordered
            delivered.push_back(std::move(got));
        }
    }
    for (const auto& run : delivered) {
        REQUIRE(run.size() == batches.size());
        for (std::size_t i = 0; i < run.size(); ++i) {
            REQUIRE(bits_equal(run[i].inputs, batches[i].inputs));
            REQUIRE(run[i].labels == batches[i].labels);
        }
    }
}

TEST_CASE("pipeline wall time tracks the two-stage closed form") {
    const Dataset ds = make_synthetic(2, 4, 64, 17);
    const auto batches = make_batches(ds, 4, 17, 0);  // 16 batches
    const double compute_s = 2e-3;
    const std::int64_t bytes = batches[0].bytes();

    TransferModel tm;
    tm.fixed_latency = 0.0;
    tm.per_byte_pageable = 2e-3 / double(bytes);  // L == C == 2ms
    tm.per_byte_pinned = 1e-3 / double(bytes);

    auto burn = [&](int, const Batch&) {
        const auto t0 = std::chrono::steady_clock::now();
        while (std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() <
               compute_s) {
        }
    };

    PinPolicyConfig pageable;
    pageable.default_pinned = false;

    const PipelineTimings serial = run_pipeline(batches, 1, tm, pageable, burn);
    const PipelineTimings overlapped = run_pipeline(batches, 2, tm, pageable, burn);

    const double mean_l = serial.producer_busy_seconds / double(batches.size());
    const double mean_c = serial.consumer_busy_seconds / double(batches.size());
    const double want_serial =
        oracle::pipeline_total_reference(int(batches.size()), 1, mean_l, mean_c);
    CHECK(serial.total_seconds == doctest::Approx(want_serial).epsilon(0.15));

    const double mean_l2 = overlapped.producer_busy_seconds / double(batches.size());
    const double mean_c2 = overlapped.consumer_busy_seconds / double(batches.size());
    const double want_overlap =
        oracle::pipeline_total_reference(int(batches.size()), 2, mean_l2, mean_c2);
    CHECK(overlapped.total_seconds == doctest::Approx(want_overlap).epsilon(0.15));
    CHECK(overlapped.total_seconds < serial.total_seconds);
}

TEST_CASE("pinned buffers beat pageable ones on a transfer-bound run") {
    const Dataset ds = make_synthetic(2, 4, 80, 19);
    const auto batches = make_batches(ds, 4, 19, 0);  // 20 batches
    const std::int64_t bytes = batches[0].bytes();

    TransferModel tm;
    tm.fixed_latency = 0.0;
    tm.per_byte_pageable = 3e-3 / double(bytes);
    tm.per_byte_pinned = 1.5e-3 / double(bytes);

    auto tiny_compute = [](int, const Batch&) {};

    PinPolicyConfig pageable;
    pageable.default_pinned = false;
    PinPolicyConfig pinned;
    pinned.default_pinned = true;

    const PipelineTimings slow = run_pipeline(batches, 2, tm, pageable, tiny_compute);
    const PipelineTimings fast = run_pipeline(batches, 2, tm, pinned, tiny_compute);
    const double ratio = slow.total_seconds / fast.total_seconds;
    CHECK(ratio == doctest::Approx(2.0).epsilon(0.2));
}

TEST_CASE("a consumer failure drains the pipeline and reports partial timings") {
    const Dataset ds = make_synthetic(2, 4, 40, 23);
    const auto batches = make_batches(ds, 4, 23, 0);  // 10 batches

    PinPolicyConfig policy;
    int seen = 0;
    const PipelineTimings t = run_pipeline(
        batches, 2, fast_tm(), policy, [&](int idx, const Batch&) {
            if (idx == 3) throw std::runtime_error("synthetic consumer failure");
            ++seen;
        });
    CHECK(t.aborted);
    CHECK(t.batches_delivered == 3);
    CHECK(seen == 3);
    CHECK(t.abort_message == "synthetic consumer failure");
    REQUIRE(t.abort_exception != nullptr);
}

TEST_CASE("pin histories grow by one entry per tick") {
    const Dataset ds = make_synthetic(2, 8, 64, 29);
    const auto batches = make_batches(ds, 4, 29, 0);  // 16 batches

    PinPolicyConfig policy;
    policy.enabled = true;
    policy.params = pin::PolicyParams::defaults(3);
    policy.params.window = 4;

    StagingPipeline pipe(3, fast_tm(), policy);
    pipe.run(batches, [](int, const Batch&) {});
    for (const auto& h : pipe.pin_histories()) {
        REQUIRE(h.size() == batches.size());
    }
    pipe.run(batches, [](int, const Batch&) {});
    for (const auto& h : pipe.pin_histories()) {
        REQUIRE(h.size() == 2 * batches.size());
    }
}
