#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "tempo/harness.hpp"

namespace tempo {

namespace {

using nlohmann::json;

json report_to_json(const MetricsReport& r) {
    json j;
    j["run_id"] = r.run_id;
    j["epochs"] = r.epochs;
    j["accuracy"] = r.accuracy;
    j["macro_f1"] = r.macro_f1;
    j["exec_time_s"] = r.exec_time_s;
    j["throughput"] = r.throughput;
    if (r.speedup_vs_baseline) j["speedup_vs_baseline"] = *r.speedup_vs_baseline;
    else j["speedup_vs_baseline"] = nullptr;
    j["train_loss"] = r.train_loss;
    j["val_loss"] = r.val_loss;
    j["train_accuracy"] = r.train_accuracy;
    j["val_accuracy"] = r.val_accuracy;
    j["val_f1"] = r.val_f1;
    j["epoch_time_s"] = r.epoch_time_s;
    j["epoch_throughput"] = r.epoch_throughput;
    j["quantization_error"] = r.quantization_error;
    j["pin_histories"] = r.pin_histories;
    j["val_predictions"] = r.val_predictions;
    j["val_truth"] = r.val_truth;
    j["op_count"] = r.op_count;
    j["optimizer_steps"] = r.optimizer_steps;
    j["skipped_steps"] = r.skipped_steps;
    j["overflow_events"] = r.overflow_events;
    j["final_loss_scale"] = r.final_loss_scale;
    return j;
}

MetricsReport report_from_json(const json& j) {
    MetricsReport r;
    r.run_id = j.at("run_id").get<std::string>();
    r.epochs = j.at("epochs").get<int>();
    r.accuracy = j.at("accuracy").get<double>();
    r.macro_f1 = j.at("macro_f1").get<double>();
    r.exec_time_s = j.at("exec_time_s").get<double>();
    r.throughput = j.at("throughput").get<double>();
    if (!j.at("speedup_vs_baseline").is_null())
        r.speedup_vs_baseline = j.at("speedup_vs_baseline").get<double>();
    r.train_loss = j.at("train_loss").get<std::vector<double>>();
    r.val_loss = j.at("val_loss").get<std::vector<double>>();
    r.train_accuracy = j.at("train_accuracy").get<std::vector<double>>();
    r.val_accuracy = j.at("val_accuracy").get<std::vector<double>>();
    r.val_f1 = j.at("val_f1").get<std::vector<double>>();
    r.epoch_time_s = j.at("epoch_time_s").get<std::vector<double>>();
    r.epoch_throughput = j.at("epoch_throughput").get<std::vector<double>>();
    r.quantization_error = j.at("quantization_error").get<std::vector<double>>();
    r.pin_histories = j.at("pin_histories").get<std::vector<std::vector<std::uint8_t>>>();
    r.val_predictions = j.at("val_predictions").get<std::vector<int>>();
    r.val_truth = j.at("val_truth").get<std::vector<int>>();
    r.op_count = j.at("op_count").get<std::int64_t>();
    r.optimizer_steps = j.at("optimizer_steps").get<int>();
    r.skipped_steps = j.at("skipped_steps").get<int>();
    r.overflow_events = j.at("overflow_events").get<int>();
    r.final_loss_scale = j.at("final_loss_scale").get<double>();
    return r;
}

json table_to_json(const ComparisonTable& t) {
    json j;
    j["baseline"] = report_to_json(t.baseline);
    j["runs"] = json::array();
    for (const auto& run : t.runs) {
        json rj;
        rj["run_id"] = run.run_id;
        std::vector<std::string> names;
        for (Technique tech : run.enabled) names.push_back(technique_name(tech));
        rj["enabled"] = names;
        rj["failed"] = run.failed;
        rj["error"] = run.error;
        rj["report"] = run.failed ? json(nullptr) : report_to_json(run.report);
        if (run.speedup_vs_baseline) rj["speedup_vs_baseline"] = *run.speedup_vs_baseline;
        else rj["speedup_vs_baseline"] = nullptr;
        j["runs"].push_back(std::move(rj));
    }
    return j;
}

ComparisonTable table_from_json(const json& j) {
    ComparisonTable t;
    t.baseline = report_from_json(j.at("baseline"));
    for (const auto& rj : j.at("runs")) {
        AblationRun run;
        run.run_id = rj.at("run_id").get<std::string>();
        for (const auto& name : rj.at("enabled")) {
            const auto tech = technique_from_name(name.get<std::string>());
            require(tech.has_value(), "table json: unknown technique name");
            run.enabled.insert(*tech);
        }
        run.failed = rj.at("failed").get<bool>();
        run.error = rj.at("error").get<std::string>();
        if (!run.failed) run.report = report_from_json(rj.at("report"));
        if (!rj.at("speedup_vs_baseline").is_null())
            run.speedup_vs_baseline = rj.at("speedup_vs_baseline").get<double>();
        t.runs.push_back(std::move(run));
    }
    return t;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

void csv_rows(std::ostringstream& os, const MetricsReport& r) {
    for (int e = 0; e < r.epochs; ++e) {
        const auto at = [&](const std::vector<double>& v) {
            return std::size_t(e) < v.size() ? v[std::size_t(e)] : 0.0;
        };
        os << r.run_id << ',' << e << ',' << fmt(at(r.train_loss)) << ','
           << fmt(at(r.val_loss)) << ',' << fmt(at(r.val_accuracy)) << ','
           << fmt(at(r.val_f1)) << ',' << fmt(at(r.epoch_time_s)) << ','
           << fmt(at(r.epoch_throughput)) << '\n';
    }
}

constexpr const char* kCsvHeader =
    "run_id,epoch,train_loss,val_loss,acc,f1,exec_time_s,throughput\n";

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << text;
    if (!out) throw IoError("failed to write " + path);
}

}  // namespace

std::string report_to_json_text(const MetricsReport& report) {
    return report_to_json(report).dump(2) + "\n";
}

MetricsReport report_from_json_text(const std::string& text) {
    try {
        return report_from_json(json::parse(text));
    } catch (const json::exception& e) {
        throw FormatError(std::string("report json: ") + e.what());
    }
}

std::string table_to_json_text(const ComparisonTable& table) {
    return table_to_json(table).dump(2) + "\n";
}

ComparisonTable table_from_json_text(const std::string& text) {
    try {
        return table_from_json(json::parse(text));
    } catch (const json::exception& e) {
        throw FormatError(std::string("table json: ") + e.what());
    }
}

std::string report_to_csv_text(const MetricsReport& report) {
    std::ostringstream os;
    os << kCsvHeader;
    csv_rows(os, report);
    return os.str();
}

std::string table_to_csv_text(const ComparisonTable& table) {
    std::ostringstream os;
    os << kCsvHeader;
    for (const auto& run : table.runs) {
        if (!run.failed) csv_rows(os, run.report);
    }
    return os.str();
}

void emit_report(const MetricsReport& report, ReportFormat format, const std::string& path) {
    write_text(path, format == ReportFormat::Json ? report_to_json_text(report)
                                                  : report_to_csv_text(report));
}

void emit_report(const ComparisonTable& table, ReportFormat format, const std::string& path) {
    write_text(path, format == ReportFormat::Json ? table_to_json_text(table)
                                                  : table_to_csv_text(table));
}

}  // namespace tempo
