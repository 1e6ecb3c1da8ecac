#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "core/png.hpp"
#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace ldlab {

// Per-pixel exclusive part assignment stored as binary channels; background
// is the implicit all-zeros pixel. Swapped (mixed) masks may violate
// exclusivity and carry that as a pixel count instead of an error.
struct SemanticMask {
    int parts = 0, h = 0, w = 0;
    std::vector<std::uint8_t> chan;  // parts*h*w entries in {0,1}

    SemanticMask() = default;
    SemanticMask(int parts_, int h_, int w_)
        : parts(parts_), h(h_), w(w_),
          chan((std::size_t)parts_ * h_ * w_, std::uint8_t(0)) {}

    std::uint8_t& at(int c, int y, int x) {
        return chan[((std::size_t)c * h + y) * w + x];
    }
    std::uint8_t at(int c, int y, int x) const {
        return chan[((std::size_t)c * h + y) * w + x];
    }

    int channel_sum(int y, int x) const {
        int s = 0;
        for (int c = 0; c < parts; ++c) s += at(c, y, x);
        return s;
    }

    // pixels claimed by more than one part
    int incoherent_pixels() const {
        int n = 0;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) n += channel_sum(y, x) > 1;
        return n;
    }

    bool one_hot() const { return incoherent_pixels() == 0; }

    int area(int c) const {
        int n = 0;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) n += at(c, y, x);
        return n;
    }

    template <class Real>
    TensorT<Real> to_tensor() const {
        TensorT<Real> t({parts, h, w});
        for (std::size_t i = 0; i < chan.size(); ++i) t[i] = static_cast<Real>(chan[i]);
        return t;
    }

    bool operator==(const SemanticMask& o) const {
        return parts == o.parts && h == o.h && w == o.w && chan == o.chan;
    }
};

inline void validate_one_hot(const SemanticMask& m, const std::string& id) {
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x)
            if (m.channel_sum(y, x) > 1)
                throw std::invalid_argument("mask " + id + ": pixel (" + std::to_string(y) + "," +
                                            std::to_string(x) + ") claimed by multiple parts");
}

struct SamplePair {
    std::string id;
    TensorT<float> image;    // (3,H,W) in [-1,1]
    SemanticMask mask;
    std::vector<int> attrs;  // binary flags

    bool operator==(const SamplePair& o) const {
        if (id != o.id || attrs != o.attrs || !(mask == o.mask)) return false;
        if (!image.same_shape(o.image)) return false;
        for (std::size_t i = 0; i < image.size(); ++i)
            if (image[i] != o.image[i]) return false;
        return true;
    }
};

struct RendererConfig {
    int h = 32, w = 32;
    std::vector<std::string> part_names{"skin", "eyes", "hair", "mouth", "glasses", "hat"};
    std::vector<std::string> attr_names{"has_glasses", "has_hat",   "hair_dark", "smiling",
                                        "big_eyes",    "face_left", "face_right", "pale_skin"};
    int val_modulus = 6;  // 1-in-6 of ids go to validation (5:1 split)

    int parts() const { return (int)part_names.size(); }
    int attrs() const { return (int)attr_names.size(); }

    int part_index(const std::string& name) const {
        for (int i = 0; i < parts(); ++i)
            if (part_names[(std::size_t)i] == name) return i;
        throw std::invalid_argument("renderer: unknown part name: " + name);
    }

    void validate() const {
        if (h < 16 || w < 16) throw std::invalid_argument("renderer: canvas below 16x16");
        if (part_names.empty()) throw std::invalid_argument("renderer: zero parts");
        if (attr_names.empty()) throw std::invalid_argument("renderer: zero attributes");
    }
};

namespace detail {

constexpr int kBgLabel = 255;

struct Palette {
    std::array<std::uint8_t, 3> bg, skin_pale, skin_tan, hair_dark, hair_light, eye, mouth,
        glasses, hat;
};

inline Palette base_palette() {
    return Palette{{190, 205, 215}, {245, 220, 200}, {205, 160, 120},
                   {50, 40, 35},    {220, 190, 90},  {30, 50, 140},
                   {180, 40, 60},   {40, 40, 40},    {160, 30, 30}};
}

inline std::array<std::uint8_t, 3> jitter(std::array<std::uint8_t, 3> c, Rng& rng, int amp) {
    for (auto& v : c) {
        int nv = (int)v + rng.randint(-amp, amp);
        v = (std::uint8_t)std::clamp(nv, 0, 255);
    }
    return c;
}

inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace detail

inline std::string sample_id(int index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "s%06d", index);
    return buf;
}

inline bool is_validation_id(const std::string& id, const RendererConfig& cfg) {
    return detail::fnv1a(id) % (std::uint64_t)cfg.val_modulus == 0;
}

// Paints a stylized face with painter's-algorithm part labels; the label
// buffer makes the mask one-hot by construction. Attribute bits come from the
// same draws that drive the geometry, so bits and pixels cannot disagree.
inline SamplePair generate_sample(std::uint64_t seed, int index, const RendererConfig& cfg) {
    cfg.validate();
    const int H = cfg.h, W = cfg.w;
    Rng rng(Rng::mix(seed, (std::uint64_t)index));

    // all stochastic choices up front, in a fixed order
    const int dx = rng.randint(-3, 3);
    const bool pale = rng.bernoulli(0.5);
    const bool dark_hair = rng.bernoulli(0.5);
    const bool smiling = rng.bernoulli(0.5);
    const bool big_eyes = rng.bernoulli(0.5);
    const bool glasses = rng.bernoulli(0.5);
    const bool hat = rng.bernoulli(0.5);
    auto pal = detail::base_palette();
    const auto c_bg = detail::jitter(pal.bg, rng, 10);
    const auto c_skin = detail::jitter(pale ? pal.skin_pale : pal.skin_tan, rng, 10);
    const auto c_hair = detail::jitter(dark_hair ? pal.hair_dark : pal.hair_light, rng, 10);
    const auto c_eye = detail::jitter(pal.eye, rng, 10);
    const auto c_mouth = detail::jitter(pal.mouth, rng, 10);
    const auto c_glass = detail::jitter(pal.glasses, rng, 8);
    const auto c_hat = detail::jitter(pal.hat, rng, 12);

    std::vector<std::uint8_t> rgb((std::size_t)H * W * 3);
    std::vector<int> label((std::size_t)H * W, detail::kBgLabel);
    auto put = [&](int x, int y, const std::array<std::uint8_t, 3>& c, int part) {
        if (x < 0 || x >= W || y < 0 || y >= H) return;
        std::size_t p = (std::size_t)y * W + x;
        rgb[p * 3] = c[0];
        rgb[p * 3 + 1] = c[1];
        rgb[p * 3 + 2] = c[2];
        label[p] = part;
    };
    auto ellipse = [&](int cx, int cy, double rx, double ry,
                       const std::array<std::uint8_t, 3>& c, int part) {
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double ex = (x - cx) / rx, ey = (y - cy) / ry;
                if (ex * ex + ey * ey <= 1.0) put(x, y, c, part);
            }
    };

    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) put(x, y, c_bg, detail::kBgLabel);

    const int cx = W / 2 + dx, cy = H / 2 + 1;
    const int skin = cfg.part_index("skin"), eyes = cfg.part_index("eyes"),
              hair = cfg.part_index("hair"), mouth = cfg.part_index("mouth"),
              glass_part = cfg.part_index("glasses"), hat_part = cfg.part_index("hat");

    ellipse(cx, cy + 1, 9, 11, c_skin, skin);                       // face
    ellipse(cx, cy - 9, 10, 5, c_hair, hair);                       // hair cap
    const int er = big_eyes ? 2 : 1;
    ellipse(cx - 4, cy - 2, er, er, c_eye, eyes);                   // left eye
    ellipse(cx + 4, cy - 2, er, er, c_eye, eyes);                   // right eye
    for (int mx = -3; mx <= 3; ++mx) {                              // mouth line / smile arc
        int my = cy + 6 - (smiling && std::abs(mx) >= 2 ? 1 : 0);
        put(cx + mx, my, c_mouth, mouth);
        if (smiling && std::abs(mx) <= 1) put(cx + mx, my + 1, c_mouth, mouth);
    }
    if (glasses) {
        for (int side : {-4, 4}) {
            for (int gx = -3; gx <= 3; ++gx) {                      // square frame
                put(cx + side + gx, cy - 5, c_glass, glass_part);
                put(cx + side + gx, cy + 1, c_glass, glass_part);
            }
            for (int gy = -5; gy <= 1; ++gy) {
                put(cx + side - 3, cy + gy, c_glass, glass_part);
                put(cx + side + 3, cy + gy, c_glass, glass_part);
            }
        }
        put(cx, cy - 2, c_glass, glass_part);                       // bridge
    }
    if (hat) {
        for (int y = 1; y <= 4; ++y)
            for (int x = cx - 10; x <= cx + 10; ++x) put(x, y, c_hat, hat_part);
        for (int x = cx - 12; x <= cx + 12; ++x) put(x, 5, c_hat, hat_part);  // brim
    }

    SamplePair sp;
    sp.id = sample_id(index);
    sp.mask = SemanticMask(cfg.parts(), H, W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            int l = label[(std::size_t)y * W + x];
            if (l != detail::kBgLabel) sp.mask.at(l, y, x) = 1;
        }
    sp.image = TensorT<float>({3, H, W});
    for (int ch = 0; ch < 3; ++ch)
        for (int p = 0; p < H * W; ++p)
            sp.image[(std::size_t)ch * H * W + p] =
                (float)rgb[(std::size_t)p * 3 + ch] / 255.0f * 2.0f - 1.0f;
    sp.attrs = {glasses ? 1 : 0, hat ? 1 : 0,        dark_hair ? 1 : 0, smiling ? 1 : 0,
                big_eyes ? 1 : 0, dx <= -2 ? 1 : 0,  dx >= 2 ? 1 : 0,   pale ? 1 : 0};
    return sp;
}

inline std::vector<SamplePair> generate_dataset(int n, std::uint64_t seed,
                                               const RendererConfig& cfg) {
    if (n < 1) throw std::invalid_argument("data: n must be >= 1");
    cfg.validate();
    std::vector<SamplePair> out;
    out.reserve((std::size_t)n);
    for (int i = 0; i < n; ++i) out.push_back(generate_sample(seed, i, cfg));
    return out;
}

// Channel exchange with no re-alignment; outputs may be incoherent and the
// caller reads that off incoherent_pixels().
inline std::pair<SemanticMask, SemanticMask> mask_component_swap(
    const SamplePair& a, const SamplePair& b, const std::set<std::string>& parts,
    const RendererConfig& cfg) {
    if (!(a.mask.parts == b.mask.parts && a.mask.h == b.mask.h && a.mask.w == b.mask.w))
        throw std::invalid_argument("mask swap: geometry mismatch");
    SemanticMask ma = a.mask, mb = b.mask;
    for (const auto& name : parts) {
        const int c = cfg.part_index(name);
        for (int y = 0; y < ma.h; ++y)
            for (int x = 0; x < ma.w; ++x) std::swap(ma.at(c, y, x), mb.at(c, y, x));
    }
    return {ma, mb};
}

/*===== dataset directory layout =====*/

// images/{id}.png  masks/{id}.png (indexed palette)  attributes.csv  manifest.json

inline std::vector<std::uint8_t> mask_palette(int parts) {
    // index 0 = background; parts get distinct saturated colors
    static const std::uint8_t cols[][3] = {{0, 0, 0},     {230, 180, 150}, {40, 60, 200},
                                           {90, 60, 20},  {220, 40, 80},   {40, 40, 40},
                                           {200, 40, 30}, {30, 200, 90},   {200, 200, 40}};
    std::vector<std::uint8_t> pal;
    for (int i = 0; i <= parts && i < 9; ++i)
        pal.insert(pal.end(), {cols[i][0], cols[i][1], cols[i][2]});
    return pal;
}

inline void write_image_png(const std::string& path, const TensorT<float>& img) {
    const int H = img.dim(1), W = img.dim(2);
    std::vector<std::uint8_t> rgb((std::size_t)H * W * 3);
    for (int ch = 0; ch < 3; ++ch)
        for (int p = 0; p < H * W; ++p) {
            float v = (img[(std::size_t)ch * H * W + p] + 1.0f) * 0.5f * 255.0f;
            rgb[(std::size_t)p * 3 + ch] =
                (std::uint8_t)std::clamp((int)std::lround(v), 0, 255);
        }
    write_png_rgb(path, W, H, rgb.data());
}

inline TensorT<float> read_image_png(const std::string& path) {
    PngImage im = read_png_rgb(path);
    TensorT<float> t({3, im.h, im.w});
    for (int ch = 0; ch < 3; ++ch)
        for (int p = 0; p < im.h * im.w; ++p)
            t[(std::size_t)ch * im.h * im.w + p] =
                (float)im.rgb[(std::size_t)p * 3 + ch] / 255.0f * 2.0f - 1.0f;
    return t;
}

inline void export_dataset(const std::vector<SamplePair>& ds, const std::string& dir,
                           const RendererConfig& cfg, std::uint64_t seed) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "images");
    fs::create_directories(fs::path(dir) / "masks");
    const auto pal = mask_palette(cfg.parts());

    std::ofstream csv(fs::path(dir) / "attributes.csv");
    csv << "sample_id";
    for (int i = 0; i < cfg.attrs(); ++i) csv << ",bit_" << i;
    csv << "\n";

    nlohmann::json split;
    for (const auto& sp : ds) {
        write_image_png((fs::path(dir) / "images" / (sp.id + ".png")).string(), sp.image);
        std::vector<std::uint8_t> idx((std::size_t)sp.mask.h * sp.mask.w, 0);
        for (int c = 0; c < sp.mask.parts; ++c)
            for (int p = 0; p < sp.mask.h * sp.mask.w; ++p)
                if (sp.mask.chan[(std::size_t)c * sp.mask.h * sp.mask.w + p])
                    idx[(std::size_t)p] = (std::uint8_t)(c + 1);
        write_png_indexed((fs::path(dir) / "masks" / (sp.id + ".png")).string(), sp.mask.w,
                          sp.mask.h, idx.data(), pal);
        csv << sp.id;
        for (int b : sp.attrs) csv << "," << b;
        csv << "\n";
        split[sp.id] = is_validation_id(sp.id, cfg) ? "val" : "train";
    }

    nlohmann::json manifest;
    manifest["seed"] = seed;
    manifest["n"] = ds.size();
    manifest["height"] = cfg.h;
    manifest["width"] = cfg.w;
    manifest["parts"] = cfg.part_names;
    manifest["attributes"] = cfg.attr_names;
    // palette index -> mask channel; 0 is background (no channel)
    nlohmann::json mapping;
    mapping["0"] = "background";
    for (int c = 0; c < cfg.parts(); ++c)
        mapping[std::to_string(c + 1)] = cfg.part_names[(std::size_t)c];
    manifest["palette"] = mapping;
    manifest["split"] = split;
    std::ofstream mf(fs::path(dir) / "manifest.json");
    mf << manifest.dump(2) << "\n";
}

struct IngestReport {
    std::vector<SamplePair> accepted;
    std::vector<std::pair<std::string, std::string>> rejected;  // (id, reason)
    RendererConfig cfg;
    nlohmann::json manifest;

    std::vector<const SamplePair*> split(const std::string& which) const {
        std::vector<const SamplePair*> out;
        for (const auto& sp : accepted)
            if (manifest.contains("split") &&
                manifest["split"].value(sp.id, "train") == which)
                out.push_back(&sp);
        return out;
    }
};

inline IngestReport ingest_external(const std::string& dir) {
    namespace fs = std::filesystem;
    IngestReport rep;
    const fs::path root(dir);
    if (!fs::exists(root)) throw std::invalid_argument("ingest: no such directory: " + dir);

    RendererConfig cfg;
    if (fs::exists(root / "manifest.json")) {
        std::ifstream mf(root / "manifest.json");
        mf >> rep.manifest;
        if (rep.manifest.contains("height")) cfg.h = rep.manifest["height"];
        if (rep.manifest.contains("width")) cfg.w = rep.manifest["width"];
        if (rep.manifest.contains("parts"))
            cfg.part_names = rep.manifest["parts"].get<std::vector<std::string>>();
        if (rep.manifest.contains("attributes"))
            cfg.attr_names = rep.manifest["attributes"].get<std::vector<std::string>>();
    }
    rep.cfg = cfg;
    if (!fs::exists(root / "attributes.csv")) return rep;  // empty directory: zero rows

    std::ifstream csv(root / "attributes.csv");
    std::string line;
    if (!std::getline(csv, line))
        throw std::invalid_argument("ingest: attributes.csv is empty");
    int lineno = 1;
    while (std::getline(csv, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        const std::string id =
            fields.empty() ? ("line_" + std::to_string(lineno)) : fields[0];
        try {
            if ((int)fields.size() != 1 + cfg.attrs())
                throw std::invalid_argument("expected " + std::to_string(1 + cfg.attrs()) +
                                            " columns, got " + std::to_string(fields.size()));
            SamplePair sp;
            sp.id = id;
            for (int i = 0; i < cfg.attrs(); ++i) {
                const std::string& b = fields[(std::size_t)i + 1];
                if (b != "0" && b != "1")
                    throw std::invalid_argument("attribute bit_" + std::to_string(i) +
                                                " not in {0,1}");
                sp.attrs.push_back(b == "1");
            }
            const auto ipath = root / "images" / (id + ".png");
            const auto mpath = root / "masks" / (id + ".png");
            if (!fs::exists(ipath)) throw std::invalid_argument("missing image file");
            if (!fs::exists(mpath)) throw std::invalid_argument("missing mask file");
            sp.image = read_image_png(ipath.string());
            if (sp.image.dim(1) != cfg.h || sp.image.dim(2) != cfg.w)
                throw std::invalid_argument("image geometry " + sp.image.shape_str());
            PngIndexed mi = read_png_indexed(mpath.string());
            if (mi.h != cfg.h || mi.w != cfg.w)
                throw std::invalid_argument("mask geometry mismatch");
            sp.mask = SemanticMask(cfg.parts(), cfg.h, cfg.w);
            for (int p = 0; p < cfg.h * cfg.w; ++p) {
                const int v = mi.idx[(std::size_t)p];
                if (v > cfg.parts())
                    throw std::invalid_argument("mask palette index " + std::to_string(v) +
                                                " out of range");
                if (v > 0) sp.mask.chan[(std::size_t)(v - 1) * cfg.h * cfg.w + p] = 1;
            }
            validate_one_hot(sp.mask, id);
            rep.accepted.push_back(std::move(sp));
        } catch (const std::exception& e) {
            rep.rejected.emplace_back(id, e.what());
        }
    }
    return rep;
}

// ---------------------------------------------------------------------------
// batching helpers: gather selected samples into model-ready tensors
// ---------------------------------------------------------------------------

template <class Real>
inline TensorT<Real> stack_images(const std::vector<SamplePair>& samples,
                                  const std::vector<int>& which) {
    if (which.empty()) throw std::invalid_argument("stack_images: empty selection");
    const auto& first = samples.at(which[0]).image;
    TensorT<Real> out({(int)which.size(), first.dim(0), first.dim(1), first.dim(2)});
    const std::size_t item = first.size();
    for (std::size_t i = 0; i < which.size(); ++i) {
        const auto& img = samples.at(which[i]).image;
        if (img.size() != item) throw std::invalid_argument("stack_images: ragged geometry");
        for (std::size_t j = 0; j < item; ++j)
            out[i * item + j] = static_cast<Real>(img[j]);
    }
    return out;
}

template <class Real>
inline TensorT<Real> stack_attrs(const std::vector<SamplePair>& samples,
                                 const std::vector<int>& which) {
    if (which.empty()) throw std::invalid_argument("stack_attrs: empty selection");
    const int a = (int)samples.at(which[0]).attrs.size();
    TensorT<Real> out({(int)which.size(), a});
    for (std::size_t i = 0; i < which.size(); ++i)
        for (int j = 0; j < a; ++j)
            out[i * a + j] = static_cast<Real>(samples.at(which[i]).attrs.at(j));
    return out;
}

template <class Real>
inline TensorT<Real> stack_masks(const std::vector<SamplePair>& samples,
                                 const std::vector<int>& which) {
    if (which.empty()) throw std::invalid_argument("stack_masks: empty selection");
    const auto& m0 = samples.at(which[0]).mask;
    TensorT<Real> out({(int)which.size(), m0.parts, m0.h, m0.w});
    const std::size_t item = m0.chan.size();
    for (std::size_t i = 0; i < which.size(); ++i) {
        const auto& m = samples.at(which[i]).mask;
        if (m.chan.size() != item || m.parts != m0.parts)
            throw std::invalid_argument("stack_masks: ragged geometry");
        for (std::size_t j = 0; j < item; ++j)
            out[i * item + j] = static_cast<Real>(m.chan[j]);
    }
    return out;
}

// labels for the segmentation objective, flat (N*H*W)
inline std::vector<int> stack_mask_labels(const std::vector<SamplePair>& samples,
                                          const std::vector<int>& which) {
    if (which.empty()) throw std::invalid_argument("stack_mask_labels: empty selection");
    const auto& m0 = samples.at(which[0]).mask;
    std::vector<int> out;
    out.reserve(which.size() * (std::size_t)m0.h * m0.w);
    for (int wi : which) {
        const auto& m = samples.at(wi).mask;
        for (int y = 0; y < m.h; ++y)
            for (int x = 0; x < m.w; ++x) {
                int l = 0;
                for (int c = 0; c < m.parts; ++c)
                    if (m.at(c, y, x)) l = c + 1;
                out.push_back(l);
            }
    }
    return out;
}

}  // namespace ldlab
