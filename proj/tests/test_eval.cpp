#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include <ldlab/eval.hpp>

using namespace ldlab;
using Catch::Matchers::WithinAbs;

namespace {

TensorT<double> gaussian_feats(Rng& rng, int n, int d, double mean, double sd) {
    TensorT<double> f({n, d});
    rng.fill_normal(f, mean, sd);
    return f;
}

}  // namespace

TEST_CASE("identical feature sets are at distance zero") {
    Rng rng(41);
    auto f = gaussian_feats(rng, 64, 8, 0.0, 1.0);
    CHECK_THAT(frechet_distance(f, f), WithinAbs(0.0, 1e-6));
}

TEST_CASE("shifted 1-D gaussians recover the closed-form distance") {
    Rng rng(42);
    auto a = gaussian_feats(rng, 10000, 1, 0.0, 1.0);
    auto b = gaussian_feats(rng, 10000, 1, 1.0, 1.0);
    // same covariance, unit mean gap: the distance is the squared mean gap
    CHECK_THAT(frechet_distance(a, b), WithinAbs(1.0, 0.1));
}

TEST_CASE("distribution distance is symmetric") {
    Rng rng(43);
    auto a = gaussian_feats(rng, 200, 6, 0.0, 1.0);
    auto b = gaussian_feats(rng, 150, 6, 0.5, 2.0);
    CHECK_THAT(frechet_distance(a, b) - frechet_distance(b, a), WithinAbs(0.0, 1e-8));
    CHECK(frechet_distance(a, b) >= 0.0);
}

TEST_CASE("feature-set preconditions are enforced") {
    TensorT<double> one({1, 4});
    TensorT<double> ok({4, 4});
    TensorT<double> wide({4, 5});
    CHECK_THROWS_AS(frechet_distance(one, ok), std::invalid_argument);
    CHECK_THROWS_AS(frechet_distance(ok, wide), std::invalid_argument);
    CHECK_THROWS_AS(kernel_distance(one, ok), std::invalid_argument);
    CHECK_THROWS_AS(kernel_distance(ok, wide), std::invalid_argument);
}

TEST_CASE("kernel distance on a shared sample set is near zero") {
    Rng rng(44);
    auto f = gaussian_feats(rng, 256, 8, 0.0, 1.0);
    CHECK_THAT(kernel_distance(f, f), WithinAbs(0.0, 0.5));
}

TEST_CASE("kernel distance grows with cluster separation") {
    Rng rng(45);
    auto base = gaussian_feats(rng, 128, 4, 0.0, 0.3);
    auto near = gaussian_feats(rng, 128, 4, 1.0, 0.3);
    auto far = gaussian_feats(rng, 128, 4, 3.0, 0.3);
    const double dn = kernel_distance(base, near);
    const double df = kernel_distance(base, far);
    CHECK(dn > 0.0);
    CHECK(df > dn);
}

TEST_CASE("kernel distance estimator is unbiased across independent splits") {
    Rng rng(46);
    const int reps = 200;
    std::vector<double> vals(reps);
    double mean = 0;
    for (int r = 0; r < reps; ++r) {
        auto a = gaussian_feats(rng, 50, 4, 0.0, 1.0);
        auto b = gaussian_feats(rng, 50, 4, 0.0, 1.0);
        vals[r] = kernel_distance(a, b);
        mean += vals[r];
    }
    mean /= reps;
    double var = 0;
    for (double v : vals) var += (v - mean) * (v - mean);
    const double sem = std::sqrt(var / (reps - 1) / reps);
    CHECK(std::abs(mean) <= 3.0 * sem);
}

TEST_CASE("mask overlap score: hand-checkable cases") {
    SemanticMask a(2, 2, 2), b(2, 2, 2);
    SECTION("equal masks score 1") {
        a.at(0, 0, 0) = b.at(0, 0, 0) = 1;
        a.at(1, 1, 1) = b.at(1, 1, 1) = 1;
        CHECK(miou(a, b) == 1.0);
    }
    SECTION("disjoint single-class masks score 0") {
        a.at(0, 0, 0) = 1;
        b.at(0, 1, 1) = 1;
        CHECK(miou(a, b) == 0.0);
    }
    SECTION("overlap {p1,p2} vs {p2,p3} scores 1/3") {
        a.at(0, 0, 0) = a.at(0, 0, 1) = 1;  // pixels 1,2
        b.at(0, 0, 1) = b.at(0, 1, 0) = 1;  // pixels 2,3
        CHECK_THAT(miou(a, b), WithinAbs(1.0 / 3.0, 1e-12));
    }
    SECTION("classes empty on both sides are skipped") {
        a.at(0, 0, 0) = b.at(0, 0, 0) = 1;  // class 1 empty in both
        CHECK(miou(a, b) == 1.0);
    }
    SECTION("two empty masks count as a perfect match") { CHECK(miou(a, b) == 1.0); }
    SECTION("score is symmetric") {
        a.at(0, 0, 0) = a.at(1, 1, 0) = 1;
        b.at(0, 0, 1) = b.at(1, 1, 0) = 1;
        CHECK(miou(a, b) == miou(b, a));
    }
    SECTION("geometry mismatch is rejected") {
        SemanticMask c(2, 3, 2);
        CHECK_THROWS_AS(miou(a, c), std::invalid_argument);
        CHECK_THROWS_AS(mask_pixel_accuracy(a, c), std::invalid_argument);
    }
}

TEST_CASE("pixel accuracy counts background and parts alike") {
    SemanticMask a(1, 1, 4), b(1, 1, 4);
    a.at(0, 0, 0) = 1;
    b.at(0, 0, 0) = 1;  // agree: part
    a.at(0, 0, 1) = 1;  // disagree: part vs background
    // pixels 2,3 agree as background
    CHECK_THAT(mask_pixel_accuracy(a, b), WithinAbs(0.75, 1e-12));
}

TEST_CASE("untrained classifier scores chance level on noise images") {
    Rng rng(47);
    ClassifierT<float> clf(8, rng);
    TensorT<float> images({400, 3, 32, 32});
    rng.fill_normal(images, 0, 0.5);
    TensorT<float> attrs({400, 8});
    for (std::size_t i = 0; i < attrs.size(); ++i) attrs[i] = rng.bernoulli(0.5) ? 1.0f : 0.0f;
    CHECK_THAT(attribute_accuracy(clf, images, attrs), WithinAbs(0.5, 0.12));
}

TEST_CASE("attribute accuracy contract errors") {
    Rng rng(48);
    ClassifierT<float> clf(8, rng);
    TensorT<float> images({4, 3, 32, 32});
    TensorT<float> attrs({3, 8});
    CHECK_THROWS_AS(attribute_accuracy(clf, images, attrs), std::invalid_argument);
    auto soft = TensorT<float>::full({4, 8}, 0.25f);
    CHECK_THROWS_AS(attribute_accuracy(clf, images, soft), std::invalid_argument);
}

TEST_CASE("trained classifier recovers renderer attributes above chance") {
    Rng rng(49);
    auto data = generate_dataset(240, 7001, RendererConfig{});
    ClassifierT<float> clf(8, rng);
    std::vector<int> all(data.size());
    std::iota(all.begin(), all.end(), 0);
    auto images = stack_images<float>(data, all);
    auto attrs = stack_attrs<float>(data, all);
    const double before = attribute_accuracy(clf, images, attrs);
    train_classifier(clf, data, 14, 32, 2e-3, rng);
    const double after = attribute_accuracy(clf, images, attrs);
    INFO("before " << before << " after " << after);
    CHECK(after > 0.75);
    CHECK(after > before);
}

TEST_CASE("short segmenter training reduces the pixel objective") {
    Rng rng(50);
    auto data = generate_dataset(80, 7002, RendererConfig{});
    SegmenterT<float> seg(6, rng);
    std::vector<int> all(data.size());
    std::iota(all.begin(), all.end(), 0);
    auto images = stack_images<float>(data, all);
    auto labels = stack_mask_labels(data, all);
    auto objective = [&]() {
        TapeT<float> tp(false);
        return (double)tp.val(tp.ce_pixel_mean(seg.logits(tp, tp.input(images)), labels))[0];
    };
    const double before = objective();
    train_segmenter(seg, data, 4, 16, 3e-3, rng);
    const double after = objective();
    CHECK(after < before);
    const double acc = mask_pixel_accuracy(seg.predict_mask(stack_images<float>(data, {0})),
                                           data[0].mask);
    CHECK(acc > 0.5);
}

TEST_CASE("diversity of identical rows is zero, and grows with spread") {
    auto same = TensorT<double>::from({3, 2}, {1, 2, 1, 2, 1, 2});
    CHECK(feature_diversity(same) == 0.0);
    auto spread = TensorT<double>::from({2, 2}, {1, 0, 0, 1});
    CHECK(feature_diversity(spread) > 0.5);
    TensorT<double> single({1, 4});
    CHECK_THROWS_AS(feature_diversity(single), std::invalid_argument);
}

TEST_CASE("diversity is invariant to per-row feature scale") {
    Rng rng(51);
    auto f = gaussian_feats(rng, 6, 5, 0.0, 1.0);
    auto scaled = f.clone();
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 5; ++j) scaled[(std::size_t)i * 5 + j] *= (i + 1) * 3.0;
    CHECK_THAT(feature_diversity(f), WithinAbs(feature_diversity(scaled), 1e-9));
}

TEST_CASE("sample-set diversity: contract and degenerate cases") {
    Rng rng(52);
    ClassifierT<float> clf(8, rng);
    TensorT<float> fixed({3, 32, 32});
    rng.fill_normal(fixed, 0, 0.5);
    auto deterministic_draw = [&]() { return fixed.clone(); };
    CHECK_THROWS_AS(diversity_lpips<float>(deterministic_draw, 4, 0.0, clf),
                    std::invalid_argument);
    CHECK_THROWS_AS(diversity_lpips<float>(deterministic_draw, 1, 1.0, clf),
                    std::invalid_argument);
    CHECK_THAT(diversity_lpips<float>(deterministic_draw, 4, 1.0, clf), WithinAbs(0.0, 1e-7));
    auto noisy_draw = [&]() {
        TensorT<float> img({3, 32, 32});
        rng.fill_normal(img, 0, 0.5);
        return img;
    };
    CHECK(diversity_lpips<float>(noisy_draw, 4, 1.0, clf) > 0.0);
}

TEST_CASE("eval report validation and CSV layout") {
    EvalReport r;
    r.fid = 1.5;
    r.kid = -0.001;
    r.attr_acc = 0.9;
    r.mask_acc = 0.8;
    r.miou = 0.7;
    r.lpips_mean = 0.2;
    r.n = 100;
    CHECK_NOTHROW(r.validate());
    CHECK(EvalReport::csv_header() == "n,fid,kid,attr_acc,mask_acc,miou,lpips_mean");
    CHECK(r.csv_row().rfind("100,1.5,", 0) == 0);

    EvalReport bad = r;
    bad.attr_acc = 1.5;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = r;
    bad.fid = -0.1;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = r;
    bad.n = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}
