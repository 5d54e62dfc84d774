#pragma once

#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "tempo/amp.hpp"
#include "tempo/autograd.hpp"
#include "tempo/datapipe.hpp"
#include "tempo/optim.hpp"

namespace tempo {

enum class DatasetSource { Synthetic, Cifar10, Cifar100 };
enum class ModelKind { TinyMlp, TinyCnn };

// Full run specification. Every field has a working default, so an empty
// config file trains a small synthetic run.
struct ExperimentConfig {
    std::string run_id = "run";

    DatasetSource source = DatasetSource::Synthetic;
    std::string data_path;
    int max_records = 0;  // 0 = all
    int synthetic_classes = 3;
    int synthetic_dims = 16;
    int synthetic_size = 640;
    std::vector<double> normalize_mean;  // empty = no normalization
    std::vector<double> normalize_std;

    ModelKind model = ModelKind::TinyMlp;
    std::vector<int> mlp_hidden{32, 16};
    std::vector<int> cnn_channels{8, 16};

    int epochs = 5;
    int batch_size = 16;
    std::uint64_t seed = 42;
    double val_fraction = 0.1;

    OptimizerConfig optimizer;
    int ga_steps = 1;

    bool amp_enabled = false;
    LossScaler scaler;

    bool prefetch_enabled = true;
    int k_buffers = 2;
    TransferModel transfer;
    bool pin_default = true;
    bool pin_policy_enabled = false;
    pin::PolicyParams pin_params;

    void validate() const;  // throws ConfigError
};

/// Flat key = value file; '#' starts a comment. Unknown keys are errors.
ExperimentConfig load_config(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text, const std::string& origin);
/// Applies one key = value pair (shared by the file parser and CLI overrides).
void apply_config_entry(ExperimentConfig& cfg, const std::string& key,
                        const std::string& value);

struct MetricsReport {
    std::string run_id = "run";
    int epochs = 0;
    double accuracy = 0.0;  // percent, final validation accuracy
    double macro_f1 = 0.0;  // percent
    double exec_time_s = 0.0;
    double throughput = 0.0;  // MAC-ops per second over the training loop
    std::optional<double> speedup_vs_baseline;

    std::vector<double> train_loss;      // per epoch
    std::vector<double> val_loss;        // per epoch
    std::vector<double> train_accuracy;  // per epoch, percent
    std::vector<double> val_accuracy;    // per epoch, percent
    std::vector<double> val_f1;          // per epoch, percent
    std::vector<double> epoch_time_s;
    std::vector<double> epoch_throughput;
    std::vector<double> quantization_error;  // per epoch; empty unless amp

    std::vector<std::vector<std::uint8_t>> pin_histories;
    std::vector<int> val_predictions;  // final epoch
    std::vector<int> val_truth;

    std::int64_t op_count = 0;
    int optimizer_steps = 0;
    int skipped_steps = 0;
    int overflow_events = 0;
    double final_loss_scale = 0.0;
};

// Test seam: mutate micro-batch gradients right after backward, before the
// overflow check. Lets tests inject inf/NaN faults deterministically.
struct TrainHooks {
    std::function<void(int micro_index, GradMap&)> after_backward;
};

struct TrainResult {
    MetricsReport report;
    std::vector<std::string> param_ids;
    std::vector<Tensor> final_params;
};

TrainResult train_full(const ExperimentConfig& cfg, const TrainHooks* hooks = nullptr);
MetricsReport train(const ExperimentConfig& cfg);

/// Percent of positions where prediction == truth.
double compute_accuracy(const std::vector<int>& predictions,
                        const std::vector<int>& truth);

/// Unweighted mean of per-class F1 scores, as a percent. Classes with an
/// empty confusion row and column contribute 0.
double compute_macro_f1(const std::vector<int>& predictions,
                        const std::vector<int>& truth, int num_classes);

// ---- Ablation grid -----------------------------------------------------------

enum class Technique { GradAccum, Amp, Prefetch };

std::string technique_name(Technique t);
std::optional<Technique> technique_from_name(const std::string& name);

struct AblationRun {
    std::string run_id;
    std::set<Technique> enabled;
    bool failed = false;
    std::string error;
    MetricsReport report;
    std::optional<double> speedup_vs_baseline;
};

struct ComparisonTable {
    MetricsReport baseline;
    std::vector<AblationRun> runs;
};

/// Runs the all-off baseline, then every subset of `grid`. The empty subset
/// reuses the baseline run (speedup exactly 1.0). Individual run failures are
/// recorded and the remaining runs proceed.
ComparisonTable run_ablation(const ExperimentConfig& base_cfg,
                             const std::set<Technique>& grid);

// ---- Reports -------------------------------------------------------------------

std::string report_to_json_text(const MetricsReport& report);
MetricsReport report_from_json_text(const std::string& text);
std::string table_to_json_text(const ComparisonTable& table);
ComparisonTable table_from_json_text(const std::string& text);

/// CSV with one row per (run, epoch); columns: run_id, epoch, train_loss,
/// val_loss, acc, f1, exec_time_s, throughput.
std::string report_to_csv_text(const MetricsReport& report);
std::string table_to_csv_text(const ComparisonTable& table);

enum class ReportFormat { Json, Csv };
void emit_report(const MetricsReport& report, ReportFormat format, const std::string& path);
void emit_report(const ComparisonTable& table, ReportFormat format, const std::string& path);

// ---- Self-verification ------------------------------------------------------------

struct VerificationResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

/// GA-equivalence, finite-difference and loss-scale property suites.
std::vector<VerificationResult> run_verification();

}  // namespace tempo
