#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <thread>

#include "tempo/harness.hpp"

namespace tempo {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

Dataset load_dataset(const ExperimentConfig& cfg) {
    Dataset ds;
    switch (cfg.source) {
        case DatasetSource::Synthetic:
            ds = make_synthetic(cfg.synthetic_classes, cfg.synthetic_dims,
                                cfg.synthetic_size, cfg.seed);
            break;
        case DatasetSource::Cifar10:
            ds = load_cifar10(cfg.data_path, cfg.max_records);
            break;
        case DatasetSource::Cifar100:
            ds = load_cifar100(cfg.data_path, cfg.max_records);
            break;
    }
    normalize_dataset(ds, cfg.normalize_mean, cfg.normalize_std);
    return ds;
}

Graph build_model(const ExperimentConfig& cfg, const Dataset& ds, Rng& rng) {
    if (cfg.model == ModelKind::TinyMlp) {
        return Graph::tiny_mlp(numel(ds.example_shape), cfg.mlp_hidden, ds.num_classes,
                               rng);
    }
    if (ds.example_shape.size() != 3 || ds.example_shape[1] != ds.example_shape[2]) {
        throw ConfigError("cnn model needs [C, H, H] examples, dataset has " +
                          shape_str(ds.example_shape));
    }
    return Graph::tiny_cnn(int(ds.example_shape[0]), int(ds.example_shape[1]),
                           cfg.cnn_channels, ds.num_classes, rng);
}

struct EvalOutcome {
    double loss = 0.0;
    double accuracy = 0.0;  // percent
    double f1 = 0.0;        // percent
    std::vector<int> predictions;
    std::vector<int> truth;
};

EvalOutcome evaluate(const Graph& graph, const Dataset& ds, int batch_size,
                     const PrecisionPolicy& policy, int num_classes) {
    EvalOutcome out;
    double loss_sum = 0.0;
    std::int64_t rows_total = 0;
    std::vector<int> chunk;
    for (std::int64_t start = 0; start < ds.size(); start += batch_size) {
        const std::int64_t end = std::min<std::int64_t>(start + batch_size, ds.size());
        chunk.clear();
        for (std::int64_t i = start; i < end; ++i) chunk.push_back(int(i));
        const Batch b = ds.gather(chunk);
        const ForwardResult fr = graph.forward(b, policy);
        if (!fr.overflow) loss_sum += fr.loss * double(fr.rows);
        rows_total += fr.rows;
        out.predictions.insert(out.predictions.end(), fr.predictions.begin(),
                               fr.predictions.end());
        out.truth.insert(out.truth.end(), b.labels.begin(), b.labels.end());
    }
    out.loss = rows_total > 0 ? loss_sum / double(rows_total) : 0.0;
    out.accuracy = compute_accuracy(out.predictions, out.truth);
    out.f1 = compute_macro_f1(out.predictions, out.truth, num_classes);
    return out;
}

double params_quantization_error(const std::vector<const Parameter*>& params) {
    double sum = 0.0;
    std::int64_t count = 0;
    for (const Parameter* p : params) {
        for (float v : p->master.data) {
            sum += std::fabs(double(v) - double(half_round(v)));
            ++count;
        }
    }
    return count > 0 ? sum / double(count) : 0.0;
}

}  // namespace

double compute_accuracy(const std::vector<int>& predictions,
                        const std::vector<int>& truth) {
    require(predictions.size() == truth.size(), "accuracy: length mismatch");
    require(!predictions.empty(), "accuracy: empty arrays");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (predictions[i] == truth[i]) ++hits;
    }
    return 100.0 * double(hits) / double(truth.size());
}

double compute_macro_f1(const std::vector<int>& predictions,
                        const std::vector<int>& truth, int num_classes) {
    require(predictions.size() == truth.size(), "macro_f1: length mismatch");
    require(!predictions.empty(), "macro_f1: empty arrays");
    require(num_classes >= 1, "macro_f1: need at least one class");

    std::vector<std::int64_t> tp(std::size_t(num_classes), 0);
    std::vector<std::int64_t> fp(std::size_t(num_classes), 0);
    std::vector<std::int64_t> fn(std::size_t(num_classes), 0);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const int t = truth[i], p = predictions[i];
        require(t >= 0 && t < num_classes && p >= 0 && p < num_classes,
                "macro_f1: label outside [0, num_classes)");
        if (t == p) ++tp[std::size_t(t)];
        else {
            ++fp[std::size_t(p)];
            ++fn[std::size_t(t)];
        }
    }
    double sum = 0.0;
    for (int c = 0; c < num_classes; ++c) {
        const double denom = double(2 * tp[std::size_t(c)] + fp[std::size_t(c)] +
                                    fn[std::size_t(c)]);
        sum += denom > 0.0 ? 2.0 * double(tp[std::size_t(c)]) / denom : 0.0;
    }
    return 100.0 * sum / double(num_classes);
}

TrainResult train_full(const ExperimentConfig& cfg, const TrainHooks* hooks) {
    cfg.validate();

    const Dataset full = load_dataset(cfg);
    auto [train_ds, val_ds] = split_train_val(full, cfg.val_fraction, cfg.seed);
    if (train_ds.size() < cfg.batch_size) {
        throw ConfigError("training split smaller than one batch (" +
                          std::to_string(train_ds.size()) + " examples)");
    }

    Rng init_rng = Rng::derive(cfg.seed, 0x1117);
    Graph graph = build_model(cfg, full, init_rng);

    const PrecisionPolicy train_policy =
        cfg.amp_enabled ? PrecisionPolicy::mixed() : PrecisionPolicy::full_single();
    const PrecisionPolicy eval_policy = train_policy;

    LossScaler scaler = cfg.scaler;
    MomentState moments;
    {
        auto params = graph.mutable_parameters();
        if (cfg.optimizer.kind != OptimizerKind::Sgd) moments = init_moment_state(params);
    }
    Accumulator acc(cfg.ga_steps);

    PinPolicyConfig pin_cfg;
    pin_cfg.enabled = cfg.pin_policy_enabled;
    pin_cfg.params = cfg.pin_params;
    pin_cfg.default_pinned = cfg.pin_default;
    std::optional<StagingPipeline> pipeline;
    if (cfg.prefetch_enabled) pipeline.emplace(cfg.k_buffers, cfg.transfer, pin_cfg);

    MetricsReport report;
    report.run_id = cfg.run_id;
    report.epochs = cfg.epochs;

    const std::int64_t fwd_flops_per_row = graph.flops_per_row();

    std::int64_t t_step = 0;
    int micro_in_window = 0;
    bool window_overflow = false;
    int micro_index = 0;

    // Per-epoch accumulators, reset in the epoch loop.
    double epoch_loss_sum = 0.0;
    std::int64_t epoch_loss_rows = 0;
    std::int64_t epoch_hits = 0;
    std::int64_t epoch_pred_rows = 0;
    int epoch_finite_micro = 0;
    std::int64_t epoch_ops = 0;

    auto micro_step = [&](int, const Batch& batch) {
        const ForwardResult fr = graph.forward(batch, train_policy);
        const double mixed_loss = fr.loss;
        bool overflow = fr.overflow;

        GradMap grads;
        if (!overflow) {
            grads = graph.backward(fr, cfg.amp_enabled ? scaler.scale : 1.0);
            if (hooks != nullptr && hooks->after_backward) {
                hooks->after_backward(micro_index, grads);
            }
            if (cfg.amp_enabled) {
                auto [unscaled, did_overflow] = unscale_and_check(std::move(grads), scaler);
                grads = std::move(unscaled);
                overflow = did_overflow;
            } else {
                bool finite = true;
                for (const auto& [id, g] : grads) finite = finite && g.all_finite();
                overflow = !finite;
            }
        }

        // Forward + backward are roughly one + two times the forward MACs.
        epoch_ops += 3 * fwd_flops_per_row * fr.rows;

        if (overflow) {
            window_overflow = true;
            ++report.overflow_events;
        } else {
            acc.accumulate(grads);
            epoch_loss_sum += mixed_loss * double(fr.rows);
            epoch_loss_rows += fr.rows;
            ++epoch_finite_micro;
            for (std::size_t i = 0; i < fr.predictions.size(); ++i) {
                if (fr.predictions[i] == batch.labels[i]) ++epoch_hits;
            }
            epoch_pred_rows += fr.rows;
        }

        ++micro_in_window;
        ++micro_index;
        if (micro_in_window < cfg.ga_steps) return;

        if (window_overflow) {
            acc.reset();
            ++report.skipped_steps;
            if (cfg.amp_enabled) scaler = update_loss_scale(scaler, 1.0, 1.0, true);
        } else {
            GradMap avg = acc.finalize();
            if (cfg.optimizer.clip_norm) {
                auto [clipped, total_norm] = clip_grad_norm(std::move(avg),
                                                            *cfg.optimizer.clip_norm);
                avg = std::move(clipped);
                (void)total_norm;
            }
            ++t_step;
            auto params = graph.mutable_parameters();
            step(params, avg, cfg.optimizer, moments, t_step);
            ++report.optimizer_steps;

            if (cfg.amp_enabled) {
                if (growth_due(scaler) && scaler.use_ratio_formula &&
                    std::isfinite(mixed_loss)) {
                    // Paired measurement on the current micro-batch: reference
                    // single-precision loss vs the mixed-precision loss.
                    const double ref_loss =
                        graph.forward(batch, PrecisionPolicy::full_single()).loss;
                    scaler = update_loss_scale(scaler, std::max(ref_loss, 1e-12),
                                               std::max(mixed_loss, 1e-12), false);
                } else {
                    scaler = update_loss_scale(scaler, 1.0, 1.0, false);
                }
            }
        }
        micro_in_window = 0;
        window_overflow = false;
    };

    const std::int64_t batch_bytes =
        std::int64_t(cfg.batch_size) * numel(train_ds.example_shape) *
            std::int64_t(sizeof(float)) +
        std::int64_t(cfg.batch_size) * std::int64_t(sizeof(int));

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<Batch> batches = make_batches(train_ds, cfg.batch_size, cfg.seed, epoch);

        epoch_loss_sum = 0.0;
        epoch_loss_rows = 0;
        epoch_hits = 0;
        epoch_pred_rows = 0;
        epoch_finite_micro = 0;
        epoch_ops = 0;

        const auto epoch_t0 = Clock::now();
        if (pipeline) {
            PipelineTimings pt = pipeline->run(batches, micro_step);
            if (pt.aborted && pt.abort_exception) std::rethrow_exception(pt.abort_exception);
        } else {
            // No prefetch: the transfer cost is paid serially, pageable.
            for (std::size_t i = 0; i < batches.size(); ++i) {
                std::this_thread::sleep_for(std::chrono::duration<double>(
                    cfg.transfer.transfer_seconds(batch_bytes, false)));
                micro_step(int(i), batches[i]);
            }
        }
        // A trailing partial accumulation window never crosses epochs.
        if (micro_in_window > 0) {
            acc.reset();
            micro_in_window = 0;
            window_overflow = false;
        }
        const double epoch_time = seconds_since(epoch_t0);

        if (!cfg.amp_enabled && epoch_finite_micro == 0) {
            throw DivergenceError("run '" + cfg.run_id + "': loss was non-finite for all " +
                                  std::to_string(batches.size()) + " batches of epoch " +
                                  std::to_string(epoch) + " in single precision");
        }

        const EvalOutcome val =
            evaluate(graph, val_ds, cfg.batch_size, eval_policy, full.num_classes);

        report.train_loss.push_back(
            epoch_loss_rows > 0 ? epoch_loss_sum / double(epoch_loss_rows)
                                : std::numeric_limits<double>::quiet_NaN());
        report.train_accuracy.push_back(
            epoch_pred_rows > 0 ? 100.0 * double(epoch_hits) / double(epoch_pred_rows) : 0.0);
        report.val_loss.push_back(val.loss);
        report.val_accuracy.push_back(val.accuracy);
        report.val_f1.push_back(val.f1);
        report.epoch_time_s.push_back(epoch_time);
        report.epoch_throughput.push_back(epoch_time > 0.0 ? double(epoch_ops) / epoch_time
                                                           : 0.0);
        if (cfg.amp_enabled) {
            report.quantization_error.push_back(params_quantization_error(graph.parameters()));
        }
        report.op_count += epoch_ops;

        if (epoch == cfg.epochs - 1) {
            report.val_predictions = val.predictions;
            report.val_truth = val.truth;
            report.accuracy = val.accuracy;
            report.macro_f1 = val.f1;
        }
    }

    report.exec_time_s = 0.0;
    for (double t : report.epoch_time_s) report.exec_time_s += t;
    report.throughput = report.exec_time_s > 0.0
                            ? compute_throughput(report.op_count, report.exec_time_s)
                            : 0.0;
    report.final_loss_scale = cfg.amp_enabled ? scaler.scale : 1.0;
    if (pipeline) report.pin_histories = pipeline->pin_histories();

    TrainResult result;
    result.report = std::move(report);
    for (const Parameter* p : graph.parameters()) {
        result.param_ids.push_back(p->id);
        result.final_params.push_back(p->master);
    }
    return result;
}

MetricsReport train(const ExperimentConfig& cfg) { return train_full(cfg).report; }

// ---- Ablation ---------------------------------------------------------------

std::string technique_name(Technique t) {
    switch (t) {
        case Technique::GradAccum: return "ga";
        case Technique::Amp: return "amp";
        case Technique::Prefetch: return "prefetch";
    }
    return "?";
}

std::optional<Technique> technique_from_name(const std::string& name) {
    if (name == "ga") return Technique::GradAccum;
    if (name == "amp") return Technique::Amp;
    if (name == "prefetch") return Technique::Prefetch;
    return std::nullopt;
}

namespace {

ExperimentConfig configure_toggles(const ExperimentConfig& base,
                                   const std::set<Technique>& enabled) {
    ExperimentConfig cfg = base;
    cfg.ga_steps = enabled.count(Technique::GradAccum)
                       ? std::max(base.ga_steps, 2)
                       : 1;
    cfg.amp_enabled = enabled.count(Technique::Amp) != 0;
    cfg.prefetch_enabled = enabled.count(Technique::Prefetch) != 0;
    return cfg;
}

std::string combo_id(const std::set<Technique>& enabled) {
    if (enabled.empty()) return "baseline";
    std::string out;
    for (Technique t : enabled) {
        if (!out.empty()) out += "+";
        out += technique_name(t);
    }
    return out;
}

}  // namespace

ComparisonTable run_ablation(const ExperimentConfig& base_cfg,
                             const std::set<Technique>& grid) {
    require(!grid.empty(), "run_ablation: empty technique grid");

    ComparisonTable table;
    ExperimentConfig baseline_cfg = configure_toggles(base_cfg, {});
    baseline_cfg.run_id = "baseline";
    table.baseline = train(baseline_cfg);

    const std::vector<Technique> toggles(grid.begin(), grid.end());
    const std::size_t combos = std::size_t(1) << toggles.size();
    for (std::size_t mask = 0; mask < combos; ++mask) {
        std::set<Technique> enabled;
        for (std::size_t b = 0; b < toggles.size(); ++b) {
            if (mask & (std::size_t(1) << b)) enabled.insert(toggles[b]);
        }
        AblationRun run;
        run.enabled = enabled;
        run.run_id = combo_id(enabled);
        if (enabled.empty()) {
            // The all-off combination is the baseline itself.
            run.report = table.baseline;
            run.speedup_vs_baseline = 1.0;
        } else {
            ExperimentConfig cfg = configure_toggles(base_cfg, enabled);
            cfg.run_id = run.run_id;
            try {
                run.report = train(cfg);
                run.speedup_vs_baseline = compute_speedup(
                    {"baseline", table.baseline.exec_time_s, table.baseline.op_count},
                    {run.run_id, run.report.exec_time_s, run.report.op_count});
                run.report.speedup_vs_baseline = run.speedup_vs_baseline;
            } catch (const std::exception& e) {
                run.failed = true;
                run.error = e.what();
            }
        }
        table.runs.push_back(std::move(run));
    }
    return table;
}

}  // namespace tempo
