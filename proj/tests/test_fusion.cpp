#include "doctest.h"

#include <cmath>
#include <random>
#include <vector>

#include "acq/errors.hpp"
#include "acq/fusion.hpp"
#include "test_support.hpp"

using namespace acq;

namespace {

Image random_image(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    Image image;
    for (double& v : image.pixels) v = dist(rng);
    return image;
}

Tensor random_distribution(std::mt19937_64& rng) {
    Tensor t = testing::random_tensor(Shape{10}, rng, 0.0, 1.0);
    double sum = 0.0;
    for (double v : t.data()) sum += v;
    for (double& v : t.data()) v /= sum;
    return t;
}

}  // namespace

TEST_CASE("five crops of a constant image are constant") {
    const CropSet set = five_crops(Image::filled(28, 28, 0.6));
    for (const Image& crop : set.crops) {
        CHECK(crop.rows == 28);
        CHECK(crop.cols == 28);
        for (double v : crop.pixels) CHECK(std::fabs(v - 0.6) < 1e-9);
    }
    CHECK_THROWS_AS(five_crops(Image::filled(27, 28, 0.0)), ContractError);
}

TEST_CASE("five crops are the shared crop-resize views in fixed order") {
    std::mt19937_64 rng(2);
    const Image image = random_image(rng);
    const CropSet set = five_crops(image);
    CHECK(kFusionRegions.front() == CropRegion::Center);
    for (std::size_t i = 0; i < kFusionRegions.size(); ++i) {
        CHECK(set.crops[i].pixels == crop_resize(image, 27, kFusionRegions[i]).pixels);
        for (double v : set.crops[i].pixels) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
        for (std::size_t j = 0; j < i; ++j) CHECK(set.crops[i].pixels != set.crops[j].pixels);
    }
}

TEST_CASE("fusing probability vectors") {
    std::mt19937_64 rng(3);
    const Tensor p = random_distribution(rng);
    std::vector<Tensor> same(5, p);
    const FusedPrediction fused = fuse(same);
    const auto single = std::max_element(p.data().begin(), p.data().end()) - p.data().begin();
    CHECK(fused.label == single);
    for (std::size_t c = 0; c < 10; ++c) CHECK(fused.summed[c] == doctest::Approx(5.0 * p[c]));

    for (int trial = 0; trial < 200; ++trial) {
        std::vector<Tensor> vectors, scaled;
        std::uniform_real_distribution<double> factor(0.01, 100.0);
        const double k = factor(rng);
        for (int i = 0; i < 5; ++i) {
            vectors.push_back(random_distribution(rng));
            Tensor s = vectors.back();
            for (double& v : s.data()) v *= k;
            scaled.push_back(std::move(s));
        }
        CHECK(fuse(scaled).label == fuse(vectors).label);
    }

    // Ties resolve to the lowest class index.
    Tensor flat(Shape{10});
    for (double& v : flat.data()) v = 0.1;
    std::vector<Tensor> ties(5, flat);
    CHECK(fuse(ties).label == 0);

    CHECK_THROWS_AS(fuse(std::vector<Tensor>{}), ContractError);
    CHECK_THROWS_AS(fuse(std::vector<Tensor>{Tensor(Shape{10}), Tensor(Shape{9})}), ContractError);
}

TEST_CASE("fused prediction sums per-crop probabilities") {
    std::mt19937_64 rng(4);
    const LeNet model = LeNet::build(5);
    std::vector<Image> images;
    for (int i = 0; i < 12; ++i) images.push_back(random_image(rng));
    const auto batch = fused_predict_batch(model, images);
    REQUIRE(batch.size() == images.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
        Tensor expected(Shape{10});
        for (CropRegion region : kFusionRegions) {
            const Prediction p = predict(model, crop_resize(images[i], 27, region));
            for (std::size_t c = 0; c < 10; ++c) expected[c] += p.probabilities[c];
        }
        const FusedPrediction single = fused_predict(model, images[i]);
        for (std::size_t c = 0; c < 10; ++c) {
            CHECK(single.summed[c] == doctest::Approx(expected[c]).epsilon(1e-12));
            CHECK(batch[i].summed[c] == single.summed[c]);
        }
        CHECK(batch[i].label == single.label);
        CHECK(fused_predict(model, images[i]).summed == single.summed);
    }
}
