#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <span>

#include "acq/attack.hpp"
#include "acq/errors.hpp"
#include "acq/evaluate.hpp"
#include "test_support.hpp"

using namespace acq;
using testing::mnist_test;
using testing::smoke_model;
namespace fs = std::filesystem;

namespace {

Image random_image(std::mt19937_64& rng, int label = 0) {
    std::uniform_real_distribution<double> dist(0.2, 0.8);
    Image image;
    for (double& v : image.pixels) v = dist(rng);
    image.label = label;
    return image;
}

Dataset first_test_images(std::size_t n) {
    Dataset d = mnist_test();
    d.images.resize(n);
    return d;
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

std::vector<double> difference(const Image& after, const Image& before) {
    std::vector<double> d(after.pixels.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = after.pixels[i] - before.pixels[i];
    return d;
}

}  // namespace

TEST_CASE("perturbation metrics in gray levels") {
    Image a;
    a.scale = PixelScale::Byte;
    for (std::size_t i = 0; i < a.size(); ++i) a.pixels[i] = static_cast<double>(i % 200);

    const auto same = perturbation_metrics(a, a);
    CHECK(same.l2 == 0.0);
    CHECK(same.linf == 0.0);

    Image one = a;
    one.pixels[300] += 26.0;
    const auto single = perturbation_metrics(a, one);
    CHECK(single.l2 == doctest::Approx(26.0));
    CHECK(single.linf == doctest::Approx(26.0));

    Image all = a;
    for (double& v : all.pixels) v += 1.0;
    const auto every = perturbation_metrics(a, all);
    CHECK(every.l2 == doctest::Approx(28.0));
    CHECK(every.linf == doctest::Approx(1.0));

    // Unit-scale inputs are measured after conversion to gray levels.
    CHECK(perturbation_metrics(a.to_unit(), one.to_unit()).linf == doctest::Approx(26.0));
    CHECK_THROWS_AS(perturbation_metrics(a, Image::filled(28, 27, 0.0)), ContractError);
}

TEST_CASE("FGS step moves every pixel with a gradient by exactly epsilon") {
    std::mt19937_64 rng(4);
    const LeNet model = LeNet::build(3);
    const Image image = random_image(rng, 2);
    const Tensor grad = input_gradient(model, image, 2);

    CHECK(fgs_step(model, image, 0.0).pixels == image.pixels);

    const double eps = 0.07;
    const Image raw = fgs_step(model, image, eps, false);
    double linf = 0.0;
    for (std::size_t i = 0; i < image.size(); ++i) {
        const double d = raw.pixels[i] - image.pixels[i];
        linf = std::max(linf, std::fabs(d));
        if (grad[i] == 0.0) {
            CHECK(d == 0.0);
        } else {
            CHECK(std::fabs(std::fabs(d) - eps) < 1e-12);
            CHECK((d > 0) == (grad[i] > 0));
        }
    }
    CHECK(std::fabs(linf - eps) < 1e-12);

    // 0.20 of the unit range is 51 gray levels; the pixels here sit in [0.2, 0.8]
    // so none is clipped.
    const auto m = perturbation_metrics(image, fgs_step(model, image, 0.20));
    CHECK(std::fabs(m.linf - 51.0) < 1e-9);
    CHECK(m.linf <= 255.0 * 0.20 + 1e-9);

    CHECK_THROWS_AS(fgs_step(model, image, -0.1), ContractError);
}

TEST_CASE("FGV step is parallel to the gradient and linear in epsilon") {
    std::mt19937_64 rng(5);
    const LeNet model = LeNet::build(3);
    const Image image = random_image(rng, 7);
    const Tensor grad = input_gradient(model, image, 7);

    const auto d1 = difference(fgv_step(model, image, 0.1, false), image);
    const auto d2 = difference(fgv_step(model, image, 0.2, false), image);
    const double cosine = dot(d1, grad.data()) / std::sqrt(dot(d1, d1) * dot(grad.data(), grad.data()));
    CHECK(cosine == doctest::Approx(1.0).epsilon(1e-12));
    for (std::size_t i = 0; i < d1.size(); ++i) CHECK(std::fabs(d2[i] - 2.0 * d1[i]) < 1e-12);

    // The strongest gradient pixel moves by the full epsilon.
    double peak = 0.0;
    for (double v : d1) peak = std::max(peak, std::fabs(v));
    CHECK(peak == doctest::Approx(0.1).epsilon(1e-12));

    CHECK(fgv_step(model, image, 0.0).pixels == image.pixels);
}

TEST_CASE("clipped perturbations stay in the unit range") {
    std::mt19937_64 rng(6);
    const LeNet model = LeNet::build(8);
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        Image image;
        for (double& v : image.pixels) v = dist(rng) < 0.5 ? 0.0 : 1.0;
        image.label = trial % 10;
        for (double eps : {0.05, 0.5, 1.0})
            for (const Image& out : {fgs_step(model, image, eps), fgv_step(model, image, eps)})
                for (double v : out.pixels) {
                    CHECK(v >= 0.0);
                    CHECK(v <= 1.0);
                }
    }
}

TEST_CASE("attack config validation and sweep") {
    AttackConfig config;
    CHECK_NOTHROW(config.validate());
    CHECK(config.sweep_length() == 100);
    CHECK(config.epsilon_at(99) == doctest::Approx(1.0));
    CHECK(parse_attack_method("fgv") == AttackMethod::Fgv);
    CHECK_THROWS_AS(parse_attack_method("pgd"), ContractError);

    AttackConfig bad = config;
    bad.epsilon_start = 0.0;
    CHECK_THROWS_AS(bad.validate(), ContractError);
    bad = config;
    bad.epsilon_step = -1.0;
    CHECK_THROWS_AS(bad.validate(), ContractError);
    bad = config;
    bad.epsilon_max = 0.001;
    CHECK_THROWS_AS(bad.validate(), ContractError);
    bad = config;
    bad.fgv_multiplier = 0;
    CHECK_THROWS_AS(bad.validate(), ContractError);
}

TEST_CASE("minimal adversarial search on MNIST digits") {
    if (!testing::mnist_available()) {
        MESSAGE("MNIST files not found; skipping");
        return;
    }
    const LeNet& model = smoke_model();
    const Dataset data = first_test_images(60);

    for (AttackMethod method : {AttackMethod::Fgs, AttackMethod::Fgv}) {
        AttackConfig config;
        config.method = method;
        std::size_t found = 0, skipped = 0;
        for (std::size_t i = 0; i < data.size(); ++i) {
            const Image& image = data.images[i];
            const AttackOutcome outcome = find_minimal_adversarial(model, image, config, i);
            if (predict(model, image).label != *image.label) {
                CHECK(outcome.status == AttackStatus::SkippedMisclassified);
                ++skipped;
                continue;
            }
            if (outcome.status != AttackStatus::Success) continue;
            ++found;
            const AdversarialRecord& r = *outcome.record;
            CHECK(r.source_index == i);
            CHECK(r.true_label == *image.label);
            CHECK(r.adversarial_label != r.true_label);
            CHECK(predict(model, r.perturbed).label == r.adversarial_label);
            const auto m = perturbation_metrics(r.original, r.perturbed);
            CHECK(std::fabs(m.l2 - r.l2) < 1e-9);
            CHECK(std::fabs(m.linf - r.linf) < 1e-9);

            // One sweep step lower does not flip the label.
            const Tensor direction = attack_direction(model, r.original, method);
            if (r.epsilon > config.epsilon_start + 1e-12) {
                const Image lower = apply_perturbation(r.original, direction, r.epsilon - config.epsilon_step);
                CHECK(predict(model, lower).label == r.true_label);
            }
            CHECK(apply_perturbation(r.original, direction, r.epsilon).pixels == r.perturbed.pixels);

            const AttackOutcome again = find_minimal_adversarial(model, image, config, i);
            REQUIRE(again.record);
            CHECK(again.record->perturbed.pixels == r.perturbed.pixels);
            CHECK(again.record->epsilon == r.epsilon);
        }
        CHECK(found > 40);
        MESSAGE(to_string(method) << ": " << found << " found, " << skipped << " skipped");
    }
}

TEST_CASE("FGV multiplier scales the minimal epsilon") {
    if (!testing::mnist_available()) {
        MESSAGE("MNIST files not found; skipping");
        return;
    }
    const LeNet& model = smoke_model();
    const Dataset data = first_test_images(30);
    AttackConfig once;
    once.method = AttackMethod::Fgv;
    AttackConfig thrice = once;
    thrice.fgv_multiplier = 3;
    std::size_t compared = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const AttackOutcome a = find_minimal_adversarial(model, data.images[i], once, i);
        const AttackOutcome b = find_minimal_adversarial(model, data.images[i], thrice, i);
        if (!a.record || !b.record) continue;
        ++compared;
        CHECK(b.record->epsilon == doctest::Approx(3.0 * a.record->epsilon));
        CHECK(b.record->linf >= a.record->linf);
        CHECK(b.record->adversarial_label != b.record->true_label);
    }
    CHECK(compared > 15);
}

TEST_CASE("FGV perturbations are stronger but sparser than FGS at the same flip") {
    if (!testing::mnist_available()) {
        MESSAGE("MNIST files not found; skipping");
        return;
    }
    const LeNet& model = smoke_model();
    const Dataset data = first_test_images(200);
    AttackConfig fgs_config, fgv_config;
    fgv_config.method = AttackMethod::Fgv;
    std::size_t pairs = 0, stronger = 0, sparser = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const AttackOutcome s = find_minimal_adversarial(model, data.images[i], fgs_config, i);
        const AttackOutcome v = find_minimal_adversarial(model, data.images[i], fgv_config, i);
        if (!s.record || !v.record || s.record->adversarial_label != v.record->adversarial_label) continue;
        ++pairs;
        stronger += v.record->linf > s.record->linf;
        // Support: pixels that change by at least one gray level.
        auto support = [](const AdversarialRecord& r) {
            const Image a = r.original.to_byte(), b = r.perturbed.to_byte();
            std::size_t n = 0;
            for (std::size_t k = 0; k < a.pixels.size(); ++k) n += std::fabs(a.pixels[k] - b.pixels[k]) >= 1.0;
            return n;
        };
        sparser += support(*v.record) < support(*s.record);
    }
    MESSAGE(pairs << " pairs: FGV larger L-inf in " << stronger << ", sparser in " << sparser);
    REQUIRE(pairs >= 50);
    CHECK(static_cast<double>(stronger) / pairs >= 0.9);
    CHECK(static_cast<double>(sparser) / pairs >= 0.9);
}

TEST_CASE("attack sets: zero accuracy, seeded sampling, sidecar") {
    if (!testing::mnist_available()) {
        MESSAGE("MNIST files not found; skipping");
        return;
    }
    const LeNet& model = smoke_model();
    const Dataset data = first_test_images(120);
    AttackConfig config;

    const AttackSet full = generate_attack_set(data, model, config, 10000, 1, 1);
    CHECK(full.attempted == 120);
    CHECK(full.successes + full.skipped_misclassified + full.not_found == 120);
    CHECK(full.records.size() == full.successes);
    CHECK(full.shortfall == 10000 - full.successes);
    CHECK(full.perturbed.provenance == Provenance::FgsAdv);
    REQUIRE(full.successes > 40);
    CHECK(evaluate(model, full.perturbed) == 0.0);
    for (std::size_t i = 1; i < full.records.size(); ++i)
        CHECK(full.records[i - 1].source_index < full.records[i].source_index);

    const AttackSet threaded = generate_attack_set(data, model, config, 10000, 1, 4);
    CHECK(threaded.perturbed == full.perturbed);

    const AttackSet a = generate_attack_set(data, model, config, 30, 5, 2);
    const AttackSet b = generate_attack_set(data, model, config, 30, 5, 3);
    const AttackSet c = generate_attack_set(data, model, config, 30, 6, 2);
    CHECK(a.records.size() == 30);
    CHECK(a.shortfall == 0);
    CHECK(a.perturbed == b.perturbed);
    CHECK(a.perturbed.images != c.perturbed.images);
    CHECK(evaluate(model, a.perturbed) == 0.0);

    const fs::path sidecar = fs::temp_directory_path() / ("acq_metrics_" + std::to_string(std::random_device{}()));
    write_metrics_sidecar(a.records, sidecar);
    const auto rows = read_metrics_sidecar(sidecar);
    fs::remove(sidecar);
    REQUIRE(rows.size() == a.records.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(rows[i].index == a.records[i].source_index);
        CHECK(rows[i].adversarial_label == a.records[i].adversarial_label);
        CHECK(rows[i].epsilon == a.records[i].epsilon);
        CHECK(rows[i].l2 == a.records[i].l2);
        CHECK(rows[i].linf == a.records[i].linf);
    }
    CHECK_THROWS_AS(read_metrics_sidecar(sidecar), IoError);
}
