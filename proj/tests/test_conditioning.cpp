#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include <ldlab/conditioning.hpp>

#include "grad_check.hpp"

using namespace ldlab;

namespace {

TensorT<float> random_bits(Rng& rng, int n, int a) {
    TensorT<float> t({n, a});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.bernoulli(0.5) ? 1.0f : 0.0f;
    return t;
}

TensorT<float> random_onehot_mask(Rng& rng, int n, int parts, int h, int w) {
    TensorT<float> m({n, parts, h, w});
    for (int i = 0; i < n; ++i)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                int c = rng.randint(0, parts);  // == parts means background
                if (c < parts) m[(((std::size_t)i * parts + c) * h + y) * w + x] = 1.0f;
            }
    return m;
}

}  // namespace

TEST_CASE("attribute encoder emits a single token per sample") {
    Rng rng(11);
    AttrEncoderT<float> enc(8, 64, rng);
    auto bits = random_bits(rng, 5, 8);
    TapeT<float> tp(false);
    auto out = tp.val(enc.fwd(tp, tp.input(bits)));
    CHECK(out.shape == std::vector<int>{5, 1, 64});
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(std::isfinite(out[i]));
}

TEST_CASE("attribute encoder rejects non-binary input and wrong width") {
    Rng rng(12);
    AttrEncoderT<float> enc(8, 64, rng);
    TapeT<float> tp(false);
    auto half = TensorT<float>::full({1, 8}, 0.5f);
    CHECK_THROWS_AS(enc.fwd(tp, tp.input(half)), std::invalid_argument);
    TensorT<float> narrow({1, 7});
    CHECK_THROWS_AS(enc.fwd(tp, tp.input(narrow)), std::invalid_argument);
}

TEST_CASE("flipping one attribute bit changes the token") {
    Rng rng(13);
    AttrEncoderT<float> enc(8, 64, rng);
    TensorT<float> a({1, 8});
    auto b = a.clone();
    b[3] = 1.0f;
    TapeT<float> tp(false);
    auto ta = tp.val(enc.fwd(tp, tp.input(a)));
    auto tb = tp.val(enc.fwd(tp, tp.input(b)));
    double diff = 0;
    for (std::size_t i = 0; i < ta.size(); ++i) diff += std::abs((double)ta[i] - tb[i]);
    CHECK(diff > 1e-4);
}

TEST_CASE("attribute encoding is deterministic given the weights") {
    Rng rng(14);
    AttrEncoderT<float> enc(8, 64, rng);
    auto bits = random_bits(rng, 3, 8);
    TapeT<float> tp(false);
    auto t1 = tp.val(enc.fwd(tp, tp.input(bits)));
    auto t2 = tp.val(enc.fwd(tp, tp.input(bits.clone())));
    for (std::size_t i = 0; i < t1.size(); ++i) CHECK(t1[i] == t2[i]);
}

TEST_CASE("mask encoder: token counts for pooled and unpooled variants") {
    Rng rng(15);
    MaskEncoderT<float> enc(6, 64, rng);
    auto m = random_onehot_mask(rng, 2, 6, 32, 32);
    check_mask_batch(m, false);
    TapeT<float> tp(false);
    auto full = tp.val(enc.fwd(tp, tp.input(m), false));
    CHECK(full.shape == std::vector<int>{2, 16, 64});
    auto pooled = tp.val(enc.fwd(tp, tp.input(m), true));
    CHECK(pooled.shape == std::vector<int>{2, 1, 64});
}

TEST_CASE("pooled mask token equals the mean of unpooled tokens") {
    // the head is affine, so head(mean(f)) == mean(head(f))
    Rng rng(16);
    MaskEncoderT<float> enc(6, 64, rng);
    auto m = random_onehot_mask(rng, 1, 6, 32, 32);
    TapeT<float> tp(false);
    auto full = tp.val(enc.fwd(tp, tp.input(m), false));
    auto pooled = tp.val(enc.fwd(tp, tp.input(m), true));
    for (int k = 0; k < 64; ++k) {
        double mean = 0;
        for (int j = 0; j < 16; ++j) mean += full[(std::size_t)j * 64 + k];
        mean /= 16;
        CHECK_THAT((double)pooled[k], Catch::Matchers::WithinAbs(mean, 1e-4));
    }
}

TEST_CASE("mask encoder rejects wrong channel count") {
    Rng rng(17);
    MaskEncoderT<float> enc(6, 64, rng);
    TapeT<float> tp(false);
    TensorT<float> m({1, 5, 32, 32});
    CHECK_THROWS_AS(enc.fwd(tp, tp.input(m), false), std::invalid_argument);
}

TEST_CASE("distinct masks produce distinct unpooled tokens") {
    Rng rng(18);
    MaskEncoderT<float> enc(6, 64, rng);
    auto a = random_onehot_mask(rng, 1, 6, 32, 32);
    auto b = random_onehot_mask(rng, 1, 6, 32, 32);
    TapeT<float> tp(false);
    auto ta = tp.val(enc.fwd(tp, tp.input(a), false));
    auto tb = tp.val(enc.fwd(tp, tp.input(b), false));
    double diff = 0;
    for (std::size_t i = 0; i < ta.size(); ++i) diff += std::abs((double)ta[i] - tb[i]);
    CHECK(diff > 1e-3);
}

TEST_CASE("null token tiles one learned row across the batch") {
    Rng rng(19);
    NullTokenT<float> nt(64, rng);
    TapeT<float> tp(false);
    auto out = tp.val(nt.fwd(tp, 3));
    CHECK(out.shape == std::vector<int>{3, 1, 64});
    for (int i = 0; i < 3; ++i)
        for (int k = 0; k < 64; ++k) CHECK(out[(std::size_t)i * 64 + k] == nt.token.value[k]);
}

TEST_CASE("mask batch validation: strict rejects overlap, relaxed admits it") {
    TensorT<float> m({1, 2, 1, 2});
    m[0] = 1.0f;  // part 0 at pixel 0
    m[2] = 1.0f;  // part 1 at pixel 0 as well
    CHECK_THROWS_AS(check_mask_batch(m, false), std::invalid_argument);
    CHECK_NOTHROW(check_mask_batch(m, true));
    m[1] = 0.5f;
    CHECK_THROWS_AS(check_mask_batch(m, true), std::invalid_argument);
}

TEST_CASE("concatenated conditions keep operands verbatim, attributes first") {
    Rng rng(20);
    AttrEncoderT<float> aenc(8, 64, rng);
    MaskEncoderT<float> menc(6, 64, rng);
    auto bits = random_bits(rng, 2, 8);
    auto m = random_onehot_mask(rng, 2, 6, 32, 32);
    TapeT<float> tp(false);
    Var at = aenc.fwd(tp, tp.input(bits));
    Var mt = menc.fwd(tp, tp.input(m), false);
    auto va = tp.val(at).clone();
    auto vm = tp.val(mt).clone();
    auto cat = tp.val(concat_conditions(tp, at, mt));
    REQUIRE(cat.shape == std::vector<int>{2, 17, 64});
    for (int i = 0; i < 2; ++i) {
        for (int k = 0; k < 64; ++k)
            CHECK(cat[((std::size_t)i * 17 + 0) * 64 + k] == va[(std::size_t)i * 64 + k]);
        for (int j = 0; j < 16; ++j)
            for (int k = 0; k < 64; ++k)
                CHECK(cat[((std::size_t)i * 17 + 1 + j) * 64 + k] ==
                      vm[((std::size_t)i * 16 + j) * 64 + k]);
    }
}

TEST_CASE("concatenation rejects mismatched widths") {
    TapeT<float> tp(false);
    Var a = tp.input(TensorT<float>({1, 1, 64}));
    Var b = tp.input(TensorT<float>({1, 4, 32}));
    CHECK_THROWS_AS(concat_conditions(tp, a, b), std::invalid_argument);
}

TEST_CASE("value-level concat mirrors the tape-level layout") {
    ConditionTokensT<float> a{TensorT<float>::full({1, 4}, 1.0f), CondSource::attributes};
    ConditionTokensT<float> m{TensorT<float>::full({3, 4}, 2.0f), CondSource::mask_nopool};
    auto c = concat_conditions(a, m);
    CHECK(c.source == CondSource::multi);
    REQUIRE(c.psi() == 4);
    CHECK(c.tokens[0] == 1.0f);
    CHECK(c.tokens[4] == 2.0f);
    CHECK(c.tokens[15] == 2.0f);
    ConditionTokensT<float> bad{TensorT<float>({1, 8}), CondSource::attributes};
    CHECK_THROWS_AS(concat_conditions(bad, m), std::invalid_argument);
}

TEST_CASE("condition source names are stable identifiers") {
    CHECK(std::string(cond_source_name(CondSource::attributes)) == "attributes");
    CHECK(std::string(cond_source_name(CondSource::mask_pooled)) == "mask_pooled");
    CHECK(std::string(cond_source_name(CondSource::mask_nopool)) == "mask_nopool");
    CHECK(std::string(cond_source_name(CondSource::multi)) == "multi");
    CHECK(std::string(cond_source_name(CondSource::null_token)) == "null");
}

TEST_CASE("grad: attribute and mask encoders against central differences") {
    Rng rng(21);
    AttrEncoderT<double> aenc(4, 8, rng);
    MaskEncoderT<double> menc(3, 8, rng);
    TensorT<double> bits({2, 4});
    for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
    TensorT<double> mask({2, 3, 8, 8});
    for (int i = 0; i < 2; ++i)
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x) {
                int c = rng.randint(0, 2);
                mask[(((std::size_t)i * 3 + c) * 8 + y) * 8 + x] = 1.0;
            }
    TensorT<double> target({2, 3, 8});
    rng.fill_normal(target);

    GradCheck gc;
    aenc.collect(gc.params);
    menc.collect(gc.params);
    gc.run = [&](bool grads) {
        TapeT<double> tp(grads);
        Var at = aenc.fwd(tp, tp.input(bits));
        Var mt = menc.fwd(tp, tp.input(mask), true);
        Var mp = menc.fwd(tp, tp.input(mask), false);
        Var cat = concat_conditions(tp, at, concat_conditions(tp, mt, mp));
        Var loss = tp.mse_mean(tp.reshape(cat, {2, 3, 8}), target);
        if (grads) tp.backward(loss);
        return (double)tp.val(loss)[0];
    };
    CHECK(fd_worst_ratio(gc, 1e-5, 1e-3, 1e-7) <= 1.0);
}
