#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include <ldlab/data.hpp>

using namespace ldlab;
namespace fs = std::filesystem;

static fs::path scratch_dir(const std::string& name) {
    auto p = fs::temp_directory_path() / ("ldlab_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

TEST_CASE("generator is deterministic and masks are one-hot") {
    RendererConfig cfg;
    auto a = generate_dataset(24, 7, cfg);
    auto b = generate_dataset(24, 7, cfg);
    REQUIRE(a.size() == 24);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i] == b[i]);
        CHECK(a[i].mask.one_hot());
        CHECK((int)a[i].attrs.size() == cfg.attrs());
    }
    auto c = generate_dataset(4, 8, cfg);
    CHECK_FALSE(c[0] == a[0]);  // different seed, different pixels
}

TEST_CASE("attribute bits agree with rendered part areas") {
    RendererConfig cfg;
    const int gi = cfg.part_index("glasses"), hi = cfg.part_index("hat");
    auto ds = generate_dataset(200, 31, cfg);
    for (const auto& sp : ds) {
        CHECK((sp.attrs[0] == 1) == (sp.mask.area(gi) > 0));
        CHECK((sp.attrs[1] == 1) == (sp.mask.area(hi) > 0));
        // always-present parts
        CHECK(sp.mask.area(cfg.part_index("skin")) > 0);
        CHECK(sp.mask.area(cfg.part_index("eyes")) > 0);
        CHECK(sp.mask.area(cfg.part_index("hair")) > 0);
        CHECK(sp.mask.area(cfg.part_index("mouth")) > 0);
        // left/right flags are mutually exclusive
        CHECK(sp.attrs[5] + sp.attrs[6] <= 1);
    }
}

TEST_CASE("attribute bits are reasonably balanced") {
    RendererConfig cfg;
    auto ds = generate_dataset(600, 5, cfg);
    for (int b : {0, 1, 2, 3, 4, 7}) {  // the coin-flip bits
        int ones = 0;
        for (const auto& sp : ds) ones += sp.attrs[(std::size_t)b];
        CHECK(ones > 200);
        CHECK(ones < 400);
    }
}

TEST_CASE("images stay inside [-1,1]") {
    auto ds = generate_dataset(8, 11, RendererConfig{});
    for (const auto& sp : ds)
        for (std::size_t i = 0; i < sp.image.size(); ++i) {
            REQUIRE(sp.image[i] >= -1.0f);
            REQUIRE(sp.image[i] <= 1.0f);
        }
}

TEST_CASE("split is deterministic and near the 5:1 ratio") {
    RendererConfig cfg;
    int val = 0;
    const int n = 1200;
    for (int i = 0; i < n; ++i) val += is_validation_id(sample_id(i), cfg);
    CHECK(val > n / 6 - 60);
    CHECK(val < n / 6 + 60);
    CHECK(is_validation_id("s000000", cfg) == is_validation_id("s000000", cfg));
}

TEST_CASE("mask swap: empty set, full set, and incoherence") {
    RendererConfig cfg;
    // find a left-offset and a right-offset face so eyes land on skin pixels
    auto ds = generate_dataset(400, 13, cfg);
    const SamplePair* left = nullptr;
    const SamplePair* right = nullptr;
    for (const auto& sp : ds) {
        if (sp.attrs[5] && !left) left = &sp;
        if (sp.attrs[6] && !right) right = &sp;
    }
    REQUIRE(left != nullptr);
    REQUIRE(right != nullptr);

    SECTION("empty part set leaves masks unchanged") {
        auto [ma, mb] = mask_component_swap(*left, *right, {}, cfg);
        CHECK(ma == left->mask);
        CHECK(mb == right->mask);
    }
    SECTION("swapping every part exchanges the masks") {
        std::set<std::string> all(cfg.part_names.begin(), cfg.part_names.end());
        auto [ma, mb] = mask_component_swap(*left, *right, all, cfg);
        CHECK(ma == right->mask);
        CHECK(mb == left->mask);
    }
    SECTION("eye swap across offsets produces incoherent pixels") {
        auto [ma, mb] = mask_component_swap(*left, *right, {"eyes"}, cfg);
        CHECK(ma.incoherent_pixels() + mb.incoherent_pixels() > 0);
    }
    SECTION("unknown part name is rejected") {
        CHECK_THROWS_AS(mask_component_swap(*left, *right, {"beard"}, cfg),
                        std::invalid_argument);
    }
}

TEST_CASE("export then ingest round-trips the dataset") {
    RendererConfig cfg;
    auto ds = generate_dataset(12, 3, cfg);
    auto dir = scratch_dir("roundtrip");
    export_dataset(ds, dir.string(), cfg, 3);
    auto rep = ingest_external(dir.string());
    CHECK(rep.rejected.empty());
    REQUIRE(rep.accepted.size() == ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) CHECK(rep.accepted[i] == ds[i]);
    CHECK(rep.accepted.size() + rep.rejected.size() == ds.size());
    // split recorded in the manifest
    int val = 0;
    for (const auto& sp : rep.accepted)
        val += rep.manifest["split"][sp.id] == "val";
    CHECK(val == (int)rep.split("val").size());
    fs::remove_all(dir);
}

TEST_CASE("ingest of an empty directory yields nothing and no errors") {
    auto dir = scratch_dir("empty");
    auto rep = ingest_external(dir.string());
    CHECK(rep.accepted.empty());
    CHECK(rep.rejected.empty());
    fs::remove_all(dir);
}

TEST_CASE("ingest reports bad rows by id and never drops silently") {
    RendererConfig cfg;
    auto ds = generate_dataset(6, 9, cfg);
    auto dir = scratch_dir("badrows");
    export_dataset(ds, dir.string(), cfg, 9);

    // corrupt one sample's mask with an out-of-range palette index
    {
        PngIndexed mi = read_png_indexed((dir / "masks" / (ds[2].id + ".png")).string());
        mi.idx[5] = (std::uint8_t)(cfg.parts() + 3);
        auto pal = mask_palette(cfg.parts());
        for (int extra = 0; extra < 3; ++extra) pal.insert(pal.end(), {7, 7, 7});
        write_png_indexed((dir / "masks" / (ds[2].id + ".png")).string(), mi.w, mi.h,
                          mi.idx.data(), pal);
    }
    // delete another sample's image
    fs::remove(dir / "images" / (ds[4].id + ".png"));
    // and append a malformed CSV row
    {
        std::ofstream csv(dir / "attributes.csv", std::ios::app);
        csv << "sbroken,1,0\n";
        csv << "snotbits,1,0,1,0,2,0,1,0\n";
    }

    auto rep = ingest_external(dir.string());
    CHECK(rep.accepted.size() == 4);
    REQUIRE(rep.rejected.size() == 4);
    CHECK(rep.accepted.size() + rep.rejected.size() == ds.size() + 2);
    std::set<std::string> bad;
    for (auto& [id, why] : rep.rejected) {
        bad.insert(id);
        CHECK(!why.empty());
    }
    CHECK(bad.count(ds[2].id) == 1);
    CHECK(bad.count(ds[4].id) == 1);
    CHECK(bad.count("sbroken") == 1);
    CHECK(bad.count("snotbits") == 1);
    fs::remove_all(dir);
}

TEST_CASE("one-hot validator rejects a two-hot pixel") {
    SemanticMask m(3, 4, 4);
    m.at(0, 1, 1) = 1;
    m.at(2, 1, 1) = 1;
    CHECK(m.incoherent_pixels() == 1);
    CHECK_FALSE(m.one_hot());
    CHECK_THROWS_WITH(validate_one_hot(m, "x17"),
                      Catch::Matchers::ContainsSubstring("x17"));
}

TEST_CASE("png round trip preserves bytes") {
    auto dir = scratch_dir("png");
    std::vector<std::uint8_t> rgb(16 * 16 * 3);
    Rng r(2);
    for (auto& v : rgb) v = (std::uint8_t)r.randint(0, 255);
    write_png_rgb((dir / "a.png").string(), 16, 16, rgb.data());
    auto im = read_png_rgb((dir / "a.png").string());
    CHECK(im.w == 16);
    CHECK(im.h == 16);
    CHECK(im.rgb == rgb);

    std::vector<std::uint8_t> idx(8 * 8);
    for (auto& v : idx) v = (std::uint8_t)r.randint(0, 5);
    write_png_indexed((dir / "m.png").string(), 8, 8, idx.data(), mask_palette(6));
    auto mi = read_png_indexed((dir / "m.png").string());
    CHECK(mi.idx == idx);
    CHECK(mi.palette_size == 7);
    fs::remove_all(dir);
}

TEST_CASE("renderer config rejects impossible specs") {
    RendererConfig cfg;
    cfg.part_names.clear();
    CHECK_THROWS_AS(generate_dataset(1, 0, cfg), std::invalid_argument);
    RendererConfig tiny;
    tiny.h = 4;
    CHECK_THROWS_AS(generate_dataset(1, 0, tiny), std::invalid_argument);
    CHECK_THROWS_AS(generate_dataset(0, 0, RendererConfig{}), std::invalid_argument);
}
