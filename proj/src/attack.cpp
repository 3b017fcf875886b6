#include "acq/attack.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "acq/errors.hpp"
#include "acq/parallel.hpp"
#include "acq/rng.hpp"

namespace acq {

namespace {

constexpr std::size_t kSweepChunk = 16;

int true_label_of(const Image& image) {
    if (!image.label) throw ContractError("attacks need a labelled image");
    return *image.label;
}

}  // namespace

std::string_view to_string(AttackMethod method) { return method == AttackMethod::Fgs ? "fgs" : "fgv"; }

AttackMethod parse_attack_method(std::string_view text) {
    if (text == "fgs" || text == "FGS") return AttackMethod::Fgs;
    if (text == "fgv" || text == "FGV") return AttackMethod::Fgv;
    throw ContractError("unknown attack method '" + std::string(text) + "' (expected fgs or fgv)");
}

void AttackConfig::validate() const {
    if (!(epsilon_start > 0.0)) throw ContractError("epsilon start must be > 0");
    if (!(epsilon_step > 0.0)) throw ContractError("epsilon step must be > 0");
    if (!(epsilon_max >= epsilon_start)) throw ContractError("epsilon max must be >= start");
    if (fgv_multiplier < 1) throw ContractError("FGV multiplier must be >= 1");
}

std::size_t AttackConfig::sweep_length() const {
    const double span = (epsilon_max - epsilon_start) / epsilon_step;
    return static_cast<std::size_t>(std::floor(span + 1e-9)) + 1;
}

PerturbationMetrics perturbation_metrics(const Image& original, const Image& perturbed) {
    if (original.rows != perturbed.rows || original.cols != perturbed.cols ||
        original.pixels.size() != perturbed.pixels.size())
        throw ContractError("perturbation metrics need equal dimensions, got " + std::to_string(original.rows) + "x" +
                            std::to_string(original.cols) + " and " + std::to_string(perturbed.rows) + "x" +
                            std::to_string(perturbed.cols));
    const Image a = original.to_byte();
    const Image b = perturbed.to_byte();
    PerturbationMetrics m;
    double squares = 0.0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
        const double d = b.pixels[i] - a.pixels[i];
        squares += d * d;
        m.linf = std::max(m.linf, std::abs(d));
    }
    m.l2 = std::sqrt(squares);
    return m;
}

Tensor attack_direction(const LeNet& model, const Image& image, AttackMethod method) {
    Tensor grad = input_gradient(model, image, true_label_of(image));
    if (method == AttackMethod::Fgs) {
        for (double& g : grad.data()) g = g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0);
        return grad;
    }
    double peak = 0.0;
    for (double g : grad.data()) peak = std::max(peak, std::abs(g));
    if (peak > 0.0)
        for (double& g : grad.data()) g /= peak;
    return grad;
}

Image apply_perturbation(const Image& image, const Tensor& direction, double epsilon, bool clip) {
    if (direction.size() != image.pixels.size())
        throw ContractError("perturbation direction " + to_string(direction.shape()) + " does not match image");
    Image out = image.to_unit();
    if (epsilon == 0.0) return out;
    for (std::size_t i = 0; i < out.pixels.size(); ++i) {
        double v = out.pixels[i] + epsilon * direction[i];
        if (clip) v = std::clamp(v, 0.0, 1.0);
        out.pixels[i] = v;
    }
    return out;
}

Image fgs_step(const LeNet& model, const Image& image, double epsilon, bool clip) {
    if (epsilon < 0.0) throw ContractError("epsilon must be >= 0");
    if (epsilon == 0.0) return image.to_unit();
    return apply_perturbation(image, attack_direction(model, image, AttackMethod::Fgs), epsilon, clip);
}

Image fgv_step(const LeNet& model, const Image& image, double epsilon, bool clip) {
    if (epsilon < 0.0) throw ContractError("epsilon must be >= 0");
    if (epsilon == 0.0) return image.to_unit();
    return apply_perturbation(image, attack_direction(model, image, AttackMethod::Fgv), epsilon, clip);
}

AttackOutcome find_minimal_adversarial(const LeNet& model, const Image& image, const AttackConfig& config,
                                       std::size_t source_index) {
    config.validate();
    const int truth = true_label_of(image);
    const Image original = image.to_unit();
    if (predict(model, original).label != truth) return {AttackStatus::SkippedMisclassified, std::nullopt};

    const Tensor direction = attack_direction(model, original, config.method);
    if (std::all_of(direction.data().begin(), direction.data().end(), [](double d) { return d == 0.0; }))
        return {AttackStatus::NotFound, std::nullopt};

    const std::size_t steps = config.sweep_length();
    std::optional<std::size_t> first_flip;
    std::vector<Image> candidates;
    for (std::size_t begin = 0; begin < steps && !first_flip; begin += kSweepChunk) {
        const std::size_t end = std::min(steps, begin + kSweepChunk);
        candidates.clear();
        for (std::size_t i = begin; i < end; ++i)
            candidates.push_back(apply_perturbation(original, direction, config.epsilon_at(i), config.clip));
        const auto predictions = predict_batch(model, candidates);
        for (std::size_t i = 0; i < predictions.size(); ++i)
            if (predictions[i].label != truth) {
                first_flip = begin + i;
                break;
            }
    }
    if (!first_flip) return {AttackStatus::NotFound, std::nullopt};

    double epsilon = config.epsilon_at(*first_flip);
    if (config.method == AttackMethod::Fgv) epsilon *= config.fgv_multiplier;
    Image perturbed = apply_perturbation(original, direction, epsilon, config.clip);
    const int adversarial = predict(model, perturbed).label;
    if (adversarial == truth) return {AttackStatus::VerificationFailed, std::nullopt};

    AdversarialRecord record;
    record.source_index = source_index;
    record.original = original;
    record.perturbed = std::move(perturbed);
    record.true_label = truth;
    record.adversarial_label = adversarial;
    record.epsilon = epsilon;
    record.method = config.method;
    const auto metrics = perturbation_metrics(record.original, record.perturbed);
    record.l2 = metrics.l2;
    record.linf = metrics.linf;
    return {AttackStatus::Success, std::move(record)};
}

AttackSet generate_attack_set(const Dataset& source, const LeNet& model, const AttackConfig& config, std::size_t count,
                              std::uint64_t seed, unsigned threads) {
    config.validate();
    std::vector<AttackOutcome> outcomes(source.size());
    parallel_for(source.size(), threads, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) outcomes[i] = find_minimal_adversarial(model, source.images[i], config, i);
    });

    AttackSet set;
    set.attempted = source.size();
    std::vector<std::size_t> successful;
    for (std::size_t i = 0; i < outcomes.size(); ++i) {
        switch (outcomes[i].status) {
            case AttackStatus::Success: successful.push_back(i); break;
            case AttackStatus::SkippedMisclassified: ++set.skipped_misclassified; break;
            default: ++set.not_found; break;
        }
    }
    set.successes = successful.size();
    if (successful.size() > count) {
        Rng rng(seed);
        rng.shuffle(std::span<std::size_t>(successful));
        successful.resize(count);
        std::sort(successful.begin(), successful.end());
    }
    set.shortfall = count > successful.size() ? count - successful.size() : 0;

    set.perturbed.name = std::string(to_string(config.method)) + "_adv";
    set.perturbed.provenance = config.method == AttackMethod::Fgs ? Provenance::FgsAdv : Provenance::FgvAdv;
    set.perturbed.scale = PixelScale::Unit;
    for (std::size_t i : successful) {
        AdversarialRecord& record = *outcomes[i].record;
        Image stored = record.perturbed;
        stored.label = record.true_label;
        set.perturbed.images.push_back(std::move(stored));
        set.records.push_back(std::move(record));
    }
    return set;
}

void write_metrics_sidecar(const std::vector<AdversarialRecord>& records, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << "index,true,adv,epsilon,l2,linf\n";
    char buf[160];
    for (const auto& r : records) {
        std::snprintf(buf, sizeof buf, "%zu,%d,%d,%.17g,%.17g,%.17g\n", r.source_index, r.true_label,
                      r.adversarial_label, r.epsilon, r.l2, r.linf);
        out << buf;
    }
    if (!out) throw IoError("failed writing " + path.string());
}

std::vector<MetricsRow> read_metrics_sidecar(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "index,true,adv,epsilon,l2,linf")
        throw FormatError(path.string() + ": missing metrics header");
    std::vector<MetricsRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        MetricsRow row;
        if (std::sscanf(line.c_str(), "%zu,%d,%d,%lf,%lf,%lf", &row.index, &row.true_label, &row.adversarial_label,
                        &row.epsilon, &row.l2, &row.linf) != 6)
            throw FormatError(path.string() + ": malformed metrics row '" + line + "'");
        rows.push_back(row);
    }
    return rows;
}

}  // namespace acq
