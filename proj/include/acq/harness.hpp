#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "acq/dataset.hpp"
#include "acq/lenet.hpp"
#include "acq/transforms.hpp"

namespace acq {

/// Row names of every grid table, in table order. The same names are accepted
/// by the command line.
inline constexpr std::array<std::string_view, 8> kGridRows = {"none",        "translation", "noise",     "blur",
                                                              "crop-resize", "combination", "five-crops", "binarize"};

bool is_grid_row(std::string_view name);

struct GridConfig {
    /// Master seed for the noise and combination rows.
    std::uint64_t seed = 1;
    double noise_stddev = 0.25;
    NoiseScale noise_scale = NoiseScale::Unit;
    /// Recorded in the report header; the grid itself only reads the sets.
    int fgv_multiplier = 1;
    unsigned threads = 1;
};

/// How a grid row is computed: an optional transform, optionally followed by five-crop fusion.
struct RowPlan {
    std::optional<TransformSpec> transform;
    bool fusion = false;
};

RowPlan plan_row(std::string_view row, const GridConfig& config);

/// One-line statement of how the noise standard deviation is read.
std::string noise_scale_interpretation(NoiseScale scale, double stddev);

struct ReportRow {
    std::string transform;
    double accuracy = 0.0;
    std::size_t count = 0;

    friend bool operator==(const ReportRow&, const ReportRow&) = default;
};

struct EvalReport {
    std::string dataset;
    /// "raw" or "finetuned".
    std::string model;
    std::string checkpoint_hash;
    std::uint64_t seed = 0;
    std::vector<ReportRow> rows;
    /// Free-text header lines: knob interpretations and transform configs.
    std::vector<std::string> provenance;

    void validate() const;
    friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

struct NamedDataset {
    std::string id;
    const Dataset* data = nullptr;
};

/// All eight rows for one dataset.
EvalReport evaluate_grid(const LeNet& model, std::string_view model_name, const NamedDataset& dataset,
                         const GridConfig& config);

/// One report per dataset, in the given order. A null or empty dataset is a ConfigError.
std::vector<EvalReport> run_grid(const LeNet& model, std::string_view model_name, std::span<const NamedDataset> datasets,
                                 const GridConfig& config);

struct DeltaRow {
    std::string dataset;
    std::string transform;
    double raw = 0.0;
    double finetuned = 0.0;
    /// finetuned - raw.
    double delta = 0.0;
    bool reduced = false;
};

/// Row-by-row difference; ConsistencyError unless both reports have the same dataset and rows.
std::vector<DeltaRow> compare_models(const EvalReport& raw, const EvalReport& finetuned);

struct RiskQuery {
    int frames = 30;
    int wrong = 15;
    double p = 0.1;

    void validate() const;
};

/// C(n, k) * p^k, without the (1 - p)^(n - k) factor.
double risk_single_term(const RiskQuery& query);
/// P(at least k of n frames wrong) for independent per-frame error p.
double risk_majority_tail(const RiskQuery& query);

enum class ReportFormat { Text, Csv };

ReportFormat parse_report_format(std::string_view text);

inline constexpr std::string_view kMachineHeader = "dataset,transform,model,accuracy,count,seed";

/// Text: one aligned table per dataset with a column per model. Csv: `#` header
/// lines followed by one row per (dataset, transform, model).
std::string render_report(std::span<const EvalReport> reports, ReportFormat format);
std::vector<EvalReport> parse_machine_report(std::string_view text);

std::string render_delta_table(std::span<const DeltaRow> rows);

}  // namespace acq
