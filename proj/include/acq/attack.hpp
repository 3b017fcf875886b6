#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>
#include <vector>

#include "acq/dataset.hpp"
#include "acq/image.hpp"
#include "acq/lenet.hpp"
#include "acq/tensor.hpp"

namespace acq {

enum class AttackMethod { Fgs, Fgv };

std::string_view to_string(AttackMethod method);
AttackMethod parse_attack_method(std::string_view text);

struct AttackConfig {
    AttackMethod method = AttackMethod::Fgs;
    double epsilon_start = 0.01;
    double epsilon_step = 0.01;
    double epsilon_max = 1.0;
    /// The returned FGV image uses multiplier x the minimal epsilon.
    int fgv_multiplier = 1;
    bool clip = true;

    void validate() const;
    /// Sweep value i (0-based), computed without accumulation.
    double epsilon_at(std::size_t i) const { return epsilon_start + static_cast<double>(i) * epsilon_step; }
    std::size_t sweep_length() const;
};

/// L2 and L-infinity norms of (perturbed - original), measured in gray levels.
struct PerturbationMetrics {
    double l2 = 0.0;
    double linf = 0.0;
};

PerturbationMetrics perturbation_metrics(const Image& original, const Image& perturbed);

struct AdversarialRecord {
    std::size_t source_index = 0;
    Image original;
    Image perturbed;
    int true_label = -1;
    int adversarial_label = -1;
    double epsilon = 0.0;
    double l2 = 0.0;
    double linf = 0.0;
    AttackMethod method = AttackMethod::Fgs;
};

/// Per-pixel step direction in Unit scale, shape [28,28]:
/// sign(grad) for FGS (sign(0) = 0); grad / max|grad| for FGV.
/// The gradient is taken at the image's own label.
Tensor attack_direction(const LeNet& model, const Image& image, AttackMethod method);

/// image + epsilon * direction in Unit scale, optionally clipped to [0, 1].
Image apply_perturbation(const Image& image, const Tensor& direction, double epsilon, bool clip = true);

Image fgs_step(const LeNet& model, const Image& image, double epsilon, bool clip = true);
Image fgv_step(const LeNet& model, const Image& image, double epsilon, bool clip = true);

enum class AttackStatus { Success, NotFound, SkippedMisclassified, VerificationFailed };

struct AttackOutcome {
    AttackStatus status = AttackStatus::NotFound;
    std::optional<AdversarialRecord> record;
};

/// Sweeps epsilon upward until the prediction leaves the true label.
AttackOutcome find_minimal_adversarial(const LeNet& model, const Image& image, const AttackConfig& config,
                                       std::size_t source_index = 0);

struct AttackSet {
    Dataset perturbed;
    std::vector<AdversarialRecord> records;
    std::size_t attempted = 0;
    std::size_t successes = 0;
    std::size_t skipped_misclassified = 0;
    std::size_t not_found = 0;
    /// How many records short of the requested count the set is.
    std::size_t shortfall = 0;
};

/// Attacks every image of `source`, then samples up to `count` successes with
/// `seed`. Records are kept in source order.
AttackSet generate_attack_set(const Dataset& source, const LeNet& model, const AttackConfig& config,
                              std::size_t count = 10000, std::uint64_t seed = 0, unsigned threads = 1);

/// Text sidecar: header `index,true,adv,epsilon,l2,linf`, one row per record.
void write_metrics_sidecar(const std::vector<AdversarialRecord>& records, const std::filesystem::path& path);

struct MetricsRow {
    std::size_t index = 0;
    int true_label = -1;
    int adversarial_label = -1;
    double epsilon = 0.0;
    double l2 = 0.0;
    double linf = 0.0;
};

std::vector<MetricsRow> read_metrics_sidecar(const std::filesystem::path& path);

}  // namespace acq
