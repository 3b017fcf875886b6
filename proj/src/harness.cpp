#include "acq/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "acq/errors.hpp"
#include "acq/evaluate.hpp"

namespace acq {

namespace {

std::string shortest(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::vector<std::string_view> split(std::string_view text, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t at = text.find(sep, start);
        if (at == std::string_view::npos) {
            out.push_back(text.substr(start));
            return out;
        }
        out.push_back(text.substr(start, at - start));
        start = at + 1;
    }
}

template <typename T>
T parse_number(std::string_view text, std::string_view what) {
    T value{};
    const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size())
        throw FormatError("malformed " + std::string(what) + " '" + std::string(text) + "'");
    return value;
}

long double log_choose(int n, int k) {
    return std::lgamma(static_cast<long double>(n) + 1) - std::lgamma(static_cast<long double>(k) + 1) -
           std::lgamma(static_cast<long double>(n - k) + 1);
}

// log(p^j (1-p)^(n-j)) with the 0^0 = 1 convention; nullopt when the term is zero.
std::optional<long double> log_power_term(long double p, int j, int n) {
    long double out = 0;
    if (j > 0) {
        if (p == 0) return std::nullopt;
        out += j * std::log(p);
    }
    if (n - j > 0) {
        if (p == 1) return std::nullopt;
        out += (n - j) * std::log1p(-p);
    }
    return out;
}

}  // namespace

bool is_grid_row(std::string_view name) { return std::find(kGridRows.begin(), kGridRows.end(), name) != kGridRows.end(); }

RowPlan plan_row(std::string_view row, const GridConfig& config) {
    RowPlan plan;
    auto spec = [&](TransformKind kind) {
        TransformSpec s = TransformSpec::of(kind, config.seed);
        s.noise_stddev = config.noise_stddev;
        s.noise_scale = config.noise_scale;
        return s;
    };
    if (row == "none") return plan;
    if (row == "translation") plan.transform = spec(TransformKind::Translate);
    else if (row == "noise") plan.transform = spec(TransformKind::Noise);
    else if (row == "blur") plan.transform = spec(TransformKind::Blur);
    else if (row == "crop-resize") plan.transform = spec(TransformKind::CropResize);
    else if (row == "combination") plan.transform = spec(TransformKind::Combination);
    else if (row == "binarize") plan.transform = spec(TransformKind::Binarize);
    else if (row == "five-crops") plan.fusion = true;
    else {
        std::string names;
        for (auto n : kGridRows) names += (names.empty() ? "" : ", ") + std::string(n);
        throw ContractError("unknown transform '" + std::string(row) + "'; valid names: " + names);
    }
    return plan;
}

std::string noise_scale_interpretation(NoiseScale scale, double stddev) {
    if (scale == NoiseScale::Unit)
        return "noise stddev " + shortest(stddev) + " is read on the unit scale (pixel values in [0,1])";
    return "noise stddev " + shortest(stddev) + " is read in gray levels (pixel values in [0,255])";
}

void EvalReport::validate() const {
    for (const ReportRow& row : rows) {
        if (!is_grid_row(row.transform)) throw ContractError("report row '" + row.transform + "' is not a grid row");
        if (!(row.accuracy >= 0.0 && row.accuracy <= 1.0))
            throw ContractError("report row '" + row.transform + "' has accuracy outside [0,1]");
    }
    for (const std::string& line : provenance)
        if (line.find('\n') != std::string::npos) throw ContractError("provenance lines must not contain newlines");
    for (const std::string* field : {&dataset, &model, &checkpoint_hash})
        if (field->find_first_of(",\n ") != std::string::npos)
            throw ContractError("report identifiers must not contain commas, spaces or newlines");
}

EvalReport evaluate_grid(const LeNet& model, std::string_view model_name, const NamedDataset& dataset,
                         const GridConfig& config) {
    if (!dataset.data || dataset.data->empty()) throw ConfigError("dataset '" + dataset.id + "' is missing or empty");
    EvalReport report;
    report.dataset = dataset.id;
    report.model = std::string(model_name);
    report.checkpoint_hash = checkpoint_hash(model);
    report.seed = config.seed;
    report.provenance = {
        "noise scale: " + noise_scale_interpretation(config.noise_scale, config.noise_stddev),
        "blur: normalized box filter, window anchored at its top-left cell, replicated edges",
        "crop: 27x27 then bicubic (a=-0.5) back to 28x28, clipped; center sampled at offset (0.5,0.5)",
        "five-crops: softmax probabilities of center and four corner crops summed, argmax",
        "binarize: Otsu threshold over rounded byte values, smallest maximizer, output {0,255}",
        "fgv multiplier: " + std::to_string(config.fgv_multiplier),
    };
    for (std::string_view row : kGridRows) {
        const RowPlan plan = plan_row(row, config);
        EvalOptions options;
        options.transform = plan.transform;
        options.fusion = plan.fusion;
        options.threads = config.threads;
        const EvalCount count = evaluate_count(model, *dataset.data, options);
        report.rows.push_back({std::string(row), count.accuracy(), count.total});
        if (plan.transform) report.provenance.push_back("row " + std::string(row) + ": " + plan.transform->to_text());
    }
    return report;
}

std::vector<EvalReport> run_grid(const LeNet& model, std::string_view model_name, std::span<const NamedDataset> datasets,
                                 const GridConfig& config) {
    for (const NamedDataset& d : datasets)
        if (!d.data || d.data->empty()) throw ConfigError("dataset '" + d.id + "' is missing or empty");
    std::vector<EvalReport> reports;
    for (const NamedDataset& d : datasets) reports.push_back(evaluate_grid(model, model_name, d, config));
    return reports;
}

std::vector<DeltaRow> compare_models(const EvalReport& raw, const EvalReport& finetuned) {
    if (raw.dataset != finetuned.dataset)
        throw ConsistencyError("cannot compare reports on different datasets: " + raw.dataset + " vs " +
                               finetuned.dataset);
    if (raw.rows.size() != finetuned.rows.size())
        throw ConsistencyError("reports differ in row count: " + std::to_string(raw.rows.size()) + " vs " +
                               std::to_string(finetuned.rows.size()));
    std::vector<DeltaRow> out;
    for (std::size_t i = 0; i < raw.rows.size(); ++i) {
        const ReportRow& a = raw.rows[i];
        const ReportRow& b = finetuned.rows[i];
        if (a.transform != b.transform)
            throw ConsistencyError("row " + std::to_string(i) + " differs: " + a.transform + " vs " + b.transform);
        DeltaRow row;
        row.dataset = raw.dataset;
        row.transform = a.transform;
        row.raw = a.accuracy;
        row.finetuned = b.accuracy;
        row.delta = b.accuracy - a.accuracy;
        row.reduced = row.delta < 0.0;
        out.push_back(row);
    }
    return out;
}

void RiskQuery::validate() const {
    if (frames < 1) throw ContractError("frame count must be positive");
    if (wrong < 0 || wrong > frames) throw ContractError("wrong-frame threshold must lie in 0..frames");
    if (!(p >= 0.0 && p <= 1.0)) throw ContractError("per-frame error probability must lie in [0,1]");
}

double risk_single_term(const RiskQuery& query) {
    query.validate();
    if (query.wrong == 0) return 1.0;
    if (query.p == 0.0) return 0.0;
    const long double log_value = log_choose(query.frames, query.wrong) + query.wrong * std::log((long double)query.p);
    return static_cast<double>(std::exp(log_value));
}

double risk_majority_tail(const RiskQuery& query) {
    query.validate();
    if (query.wrong == 0) return 1.0;
    long double total = 0;
    for (int j = query.wrong; j <= query.frames; ++j) {
        const auto log_power = log_power_term(query.p, j, query.frames);
        if (!log_power) continue;
        total += std::exp(log_choose(query.frames, j) + *log_power);
    }
    return static_cast<double>(std::min<long double>(total, 1.0L));
}

ReportFormat parse_report_format(std::string_view text) {
    if (text == "text") return ReportFormat::Text;
    if (text == "csv") return ReportFormat::Csv;
    throw ContractError("unknown report format '" + std::string(text) + "' (expected text or csv)");
}

std::string render_report(std::span<const EvalReport> reports, ReportFormat format) {
    for (const EvalReport& r : reports) r.validate();
    std::ostringstream out;
    if (format == ReportFormat::Csv) {
        for (const EvalReport& r : reports) {
            out << "# report " << r.dataset << ' ' << r.model << " checkpoint=" << r.checkpoint_hash
                << " seed=" << r.seed << '\n';
            for (const std::string& line : r.provenance) out << "#   " << line << '\n';
        }
        out << kMachineHeader << '\n';
        for (const EvalReport& r : reports)
            for (const ReportRow& row : r.rows)
                out << r.dataset << ',' << row.transform << ',' << r.model << ',' << shortest(row.accuracy) << ','
                    << row.count << ',' << r.seed << '\n';
        return out.str();
    }

    std::vector<std::string> datasets, models;
    for (const EvalReport& r : reports) {
        if (std::find(datasets.begin(), datasets.end(), r.dataset) == datasets.end()) datasets.push_back(r.dataset);
        if (std::find(models.begin(), models.end(), r.model) == models.end()) models.push_back(r.model);
    }
    std::vector<std::string> seen;
    for (const EvalReport& r : reports) {
        const std::string id = r.model + " checkpoint " + r.checkpoint_hash + ", seed " + std::to_string(r.seed);
        if (std::find(seen.begin(), seen.end(), id) == seen.end()) {
            out << id << '\n';
            seen.push_back(id);
        }
    }
    seen.clear();
    for (const EvalReport& r : reports)
        for (const std::string& line : r.provenance)
            if (std::find(seen.begin(), seen.end(), line) == seen.end()) {
                out << "  " << line << '\n';
                seen.push_back(line);
            }

    for (const std::string& dataset : datasets) {
        out << "\nDataset: " << dataset << '\n';
        char buf[64];
        std::snprintf(buf, sizeof buf, "  %-14s", "transform");
        out << buf;
        for (const std::string& m : models) {
            std::snprintf(buf, sizeof buf, " %12s", m.c_str());
            out << buf;
        }
        out << '\n';
        std::vector<std::string> rows;
        for (const EvalReport& r : reports)
            if (r.dataset == dataset)
                for (const ReportRow& row : r.rows)
                    if (std::find(rows.begin(), rows.end(), row.transform) == rows.end()) rows.push_back(row.transform);
        for (const std::string& row : rows) {
            std::snprintf(buf, sizeof buf, "  %-14s", row.c_str());
            out << buf;
            for (const std::string& m : models) {
                std::string cell = "-";
                for (const EvalReport& r : reports)
                    if (r.dataset == dataset && r.model == m)
                        for (const ReportRow& rr : r.rows)
                            if (rr.transform == row) {
                                std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * rr.accuracy);
                                cell = buf;
                            }
                std::snprintf(buf, sizeof buf, " %12s", cell.c_str());
                out << buf;
            }
            out << '\n';
        }
    }
    return out.str();
}

std::vector<EvalReport> parse_machine_report(std::string_view text) {
    std::vector<EvalReport> reports;
    std::map<std::pair<std::string, std::string>, std::size_t> index;
    bool header_seen = false;
    std::size_t line_no = 0;
    for (std::string_view line : split(text, '\n')) {
        ++line_no;
        if (line.empty()) continue;
        const std::string where = "machine report line " + std::to_string(line_no);
        if (line.starts_with("# report ")) {
            const auto parts = split(line.substr(9), ' ');
            if (parts.size() != 4 || !parts[2].starts_with("checkpoint=") || !parts[3].starts_with("seed="))
                throw FormatError(where + ": malformed report line");
            EvalReport r;
            r.dataset = std::string(parts[0]);
            r.model = std::string(parts[1]);
            r.checkpoint_hash = std::string(parts[2].substr(11));
            r.seed = parse_number<std::uint64_t>(parts[3].substr(5), "seed");
            index[{r.dataset, r.model}] = reports.size();
            reports.push_back(std::move(r));
            continue;
        }
        if (line.starts_with("#   ")) {
            if (reports.empty()) throw FormatError(where + ": provenance before any report line");
            reports.back().provenance.emplace_back(line.substr(4));
            continue;
        }
        if (line.starts_with('#')) continue;
        if (!header_seen) {
            if (line != kMachineHeader) throw FormatError(where + ": expected header '" + std::string(kMachineHeader) + "'");
            header_seen = true;
            continue;
        }
        const auto cells = split(line, ',');
        if (cells.size() != 6) throw FormatError(where + ": expected 6 fields, got " + std::to_string(cells.size()));
        const std::pair<std::string, std::string> key{std::string(cells[0]), std::string(cells[2])};
        const auto seed = parse_number<std::uint64_t>(cells[5], "seed");
        auto it = index.find(key);
        if (it == index.end()) {
            EvalReport r;
            r.dataset = key.first;
            r.model = key.second;
            r.seed = seed;
            it = index.emplace(key, reports.size()).first;
            reports.push_back(std::move(r));
        }
        EvalReport& r = reports[it->second];
        if (r.seed != seed) throw ConsistencyError(where + ": seed disagrees with its report header");
        r.rows.push_back({std::string(cells[1]), parse_number<double>(cells[3], "accuracy"),
                          parse_number<std::size_t>(cells[4], "count")});
    }
    if (!header_seen) throw FormatError("machine report has no header line");
    for (const EvalReport& r : reports) r.validate();
    return reports;
}

std::string render_delta_table(std::span<const DeltaRow> rows) {
    std::ostringstream out;
    std::string dataset;
    char buf[128];
    for (const DeltaRow& row : rows) {
        if (row.dataset != dataset) {
            dataset = row.dataset;
            out << "\nDataset: " << dataset << '\n';
            std::snprintf(buf, sizeof buf, "  %-14s %10s %10s %10s\n", "transform", "raw", "finetuned", "delta");
            out << buf;
        }
        std::snprintf(buf, sizeof buf, "  %-14s %9.2f%% %9.2f%% %+9.2f%s\n", row.transform.c_str(), 100.0 * row.raw,
                      100.0 * row.finetuned, 100.0 * row.delta, row.reduced ? "  reduced" : "");
        out << buf;
    }
    return out.str();
}

}  // namespace acq
