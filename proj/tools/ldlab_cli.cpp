// ldlab: one binary for the whole experimental surface. Every subcommand
// writes its artifacts under --out and echoes the seeds it consumed into a
// JSON manifest next to them, so any figure can be regenerated from disk.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <ldlab/eval.hpp>
#include <ldlab/training.hpp>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ldlab;

namespace {

void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
    os << text;
    if (!os) throw std::runtime_error("write failed for '" + path + "'");
}

void write_json(const std::string& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::string read_text(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void write_loss_csv(const std::string& path, const std::vector<double>& log) {
    std::ostringstream os;
    os.precision(10);
    os << "epoch,loss\n";
    for (std::size_t i = 0; i < log.size(); ++i) os << (i + 1) << ',' << log[i] << '\n';
    write_text(path, os.str());
}

// (N,3,H,W) in [-1,1] -> one (3, rows*H, cols*W) sheet, row-major order
TensorT<float> image_grid(const TensorT<float>& imgs, int cols) {
    const int n = imgs.dim(0), H = imgs.dim(2), W = imgs.dim(3);
    if (cols < 1) cols = std::max(1, (int)std::lround(std::ceil(std::sqrt((double)n))));
    const int rows = (n + cols - 1) / cols;
    TensorT<float> g({3, rows * H, cols * W});
    std::fill(g.data(), g.data() + g.size(), -1.0f);
    for (int i = 0; i < n; ++i) {
        const int r = i / cols, c = i % cols;
        for (int ch = 0; ch < 3; ++ch)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    g[((std::size_t)ch * rows * H + (std::size_t)(r * H + y)) * (cols * W) +
                      (std::size_t)(c * W + x)] =
                        imgs[(((std::size_t)i * 3 + ch) * H + y) * W + x];
    }
    return g;
}

void write_mask_png(const std::string& path, const SemanticMask& m, int palette_parts) {
    std::vector<std::uint8_t> idx((std::size_t)m.h * m.w, 0);
    for (int c = 0; c < m.parts; ++c)
        for (int p = 0; p < m.h * m.w; ++p)
            if (m.chan[(std::size_t)c * m.h * m.w + p]) idx[(std::size_t)p] = (std::uint8_t)(c + 1);
    write_png_indexed(path, m.w, m.h, idx.data(), mask_palette(palette_parts));
}

// ---------------------------------------------------------------------------
// dataset plumbing shared by train/eval commands
// ---------------------------------------------------------------------------

std::vector<SamplePair> pick_split(const IngestReport& rep, const std::string& split) {
    if (split == "all") return rep.accepted;
    std::vector<SamplePair> out;
    for (const auto& sp : rep.accepted) {
        const bool val = rep.manifest.contains("split")
                             ? rep.manifest["split"].value(sp.id, "train") == "val"
                             : is_validation_id(sp.id, rep.cfg);
        if ((split == "val") == val) out.push_back(sp);
    }
    return out;
}

struct DataArgs {
    std::string dir;  // empty: generate with the renderer
    std::string split = "all";
    int n = 256;
    std::uint64_t seed = 1234;
};

// Either ingests a directory (reporting rejects on stderr) or draws fresh
// renderer samples. The renderer geometry comes from the checkpoint so the
// model and the data cannot disagree silently.
std::vector<SamplePair> resolve_dataset(const DataArgs& a, const RendererConfig& expect,
                                        json& echo) {
    echo["data_split"] = a.split;
    if (!a.dir.empty()) {
        auto rep = ingest_external(a.dir);
        for (const auto& [id, why] : rep.rejected)
            std::cerr << "ingest: rejected " << id << ": " << why << "\n";
        if (rep.cfg.h != expect.h || rep.cfg.w != expect.w ||
            rep.cfg.parts() != expect.parts() || rep.cfg.attrs() != expect.attrs())
            throw std::invalid_argument("dataset '" + a.dir +
                                        "' geometry does not match the checkpoint renderer");
        auto out = pick_split(rep, a.split);
        if (out.empty())
            throw std::invalid_argument("dataset '" + a.dir + "' has no samples in split '" +
                                        a.split + "'");
        echo["data_dir"] = a.dir;
        echo["data_n"] = out.size();
        return out;
    }
    auto out = generate_dataset(a.n, a.seed, expect);
    echo["data_seed"] = a.seed;
    echo["data_n"] = out.size();
    return out;
}

void add_data_flags(CLI::App* cmd, DataArgs& a, const std::string& default_split) {
    a.split = default_split;
    cmd->add_option("--data", a.dir,
                    "dataset directory (images/, masks/, attributes.csv); omit to render");
    cmd->add_option("--split", a.split, "train|val|all subset of --data")
        ->check(CLI::IsMember({"train", "val", "all"}));
    cmd->add_option("--n", a.n, "rendered sample count when --data is omitted")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--data-seed", a.seed, "renderer seed when --data is omitted");
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

struct GenDataArgs {
    std::string out;
    int n = 256;
    std::uint64_t seed = 1234;
};

int cmd_gen_data(const GenDataArgs& a) {
    RendererConfig cfg;
    auto ds = generate_dataset(a.n, a.seed, cfg);
    fs::create_directories(a.out);
    export_dataset(ds, a.out, cfg, a.seed);
    int val = 0;
    for (const auto& sp : ds) val += is_validation_id(sp.id, cfg) ? 1 : 0;
    std::cout << "gen-data: wrote " << ds.size() << " samples (" << val << " val) to " << a.out
              << " with seed " << a.seed << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train-codec
// ---------------------------------------------------------------------------

struct TrainCodecArgs {
    std::string out;
    DataArgs data;
    int epochs = 30;
    int batch = 16;
    double lr = 1e-3;
    std::uint64_t seed = 0;
};

int cmd_train_codec(const TrainCodecArgs& a) {
    fs::create_directories(a.out);
    json echo{{"seed", a.seed}, {"epochs", a.epochs}, {"batch", a.batch}, {"lr", a.lr}};
    RendererConfig dc;
    auto data = resolve_dataset(a.data, dc, echo);
    Rng rng(a.seed);
    CodecT<float> codec(CodecConfig{}, rng);
    auto log = train_codec(codec, data, a.epochs, a.batch, a.lr, rng);
    AdamT<float> opt;
    opt.lr = a.lr;
    save_codec_checkpoint(a.out + "/codec.ckpt", codec, dc, a.epochs, rng, opt, log);
    write_loss_csv(a.out + "/loss.csv", log);
    write_json(a.out + "/run.json", echo);
    std::cout << "train-codec: " << a.epochs << " epochs, loss " << log.front() << " -> "
              << log.back() << ", checkpoint " << a.out << "/codec.ckpt\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string config;
    std::string codec;
    std::string out;
    DataArgs data;
    int every = 1;
};

int cmd_train(const TrainArgs& a) {
    auto cfg = parse_train_config(read_text(a.config));
    auto crun = load_codec_checkpoint(a.codec);
    fs::create_directories(a.out);
    json echo{{"config", a.config}, {"codec", a.codec}, {"seed", cfg.seed},
              {"mode", train_mode_name(cfg.mode)}, {"every", a.every}};
    auto data = resolve_dataset(a.data, crun.data_cfg, echo);
    DiffusionTrainerT<float> tr(cfg, crun.data_cfg, crun.codec);
    write_text(a.out + "/config.txt", train_config_text(cfg));
    write_json(a.out + "/run.json", echo);
    std::vector<double> log;
    try {
        log = train_diffusion(tr, data, a.out, a.every);
    } catch (const TrainingDiverged&) {
        std::cerr << "train: diagnostic checkpoint written to " << a.out << "/diverged.ckpt\n";
        throw;
    }
    write_loss_csv(a.out + "/loss.csv", log);
    std::cout << "train: mode " << train_mode_name(cfg.mode) << ", " << cfg.epochs
              << " epochs, loss " << log.front() << " -> " << log.back() << ", checkpoints in "
              << a.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// sample
// ---------------------------------------------------------------------------

struct SampleArgs {
    std::string checkpoint;
    std::string out;
    int count = 16;
    int steps = 500;
    double eta = 0.0;
    std::uint64_t seed = 7;
    int cond_index = 0;
    std::uint64_t cond_seed = 1234;
    int cols = 0;
};

int cmd_sample(const SampleArgs& a) {
    auto tr = load_diffusion_checkpoint(a.checkpoint);
    fs::create_directories(a.out);
    auto sp = generate_sample(a.cond_seed, a.cond_index, tr.data_cfg);
    auto ctx = tr.tokens_for_sample(sp);
    Rng rng(a.seed);
    auto imgs = tr.sample_images(ctx, a.count, a.steps, a.eta, rng);
    write_image_png(a.out + "/grid.png", image_grid(imgs, a.cols));

    json side{{"checkpoint", a.checkpoint}, {"eta", a.eta},   {"steps", a.steps},
              {"seed", a.seed},             {"count", a.count},
              {"condition_source", train_mode_name(tr.cfg.mode)}};
    if (mode_uses_attrs(tr.cfg.mode) || mode_uses_masks(tr.cfg.mode)) {
        side["cond_index"] = a.cond_index;
        side["cond_seed"] = a.cond_seed;
    }
    if (mode_uses_attrs(tr.cfg.mode)) side["cond_attrs"] = sp.attrs;
    if (mode_uses_masks(tr.cfg.mode)) {
        write_mask_png(a.out + "/cond_mask.png", sp.mask, tr.data_cfg.parts());
        side["cond_mask"] = "cond_mask.png";
    }
    write_json(a.out + "/grid.json", side);
    std::cout << "sample: " << a.count << " images, steps " << a.steps << ", eta " << a.eta
              << ", seed " << a.seed << " -> " << a.out << "/grid.png\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string checkpoint;
    std::string out;
    DataArgs data;
    int steps = 50;
    double eta = 1.0;
    std::uint64_t seed = 0;
    int probe_n = 240;
    int probe_epochs = 14;
    int div_n = 8;
};

int cmd_eval(const EvalArgs& a) {
    auto tr = load_diffusion_checkpoint(a.checkpoint);
    const RendererConfig& dc = tr.data_cfg;
    fs::create_directories(a.out);
    json echo{{"checkpoint", a.checkpoint}, {"steps", a.steps},
              {"eta", a.eta},               {"seed", a.seed},
              {"probe_n", a.probe_n},       {"probe_epochs", a.probe_epochs},
              {"condition_source", train_mode_name(tr.cfg.mode)}};
    auto ref = resolve_dataset(a.data, dc, echo);
    const int n = (int)ref.size();
    if (n < 2) throw std::invalid_argument("eval: need at least 2 reference samples");

    // probe networks trained on held-out renderer draws, never on `ref`
    auto probe_data = generate_dataset(a.probe_n, Rng::mix(a.data.seed, 2), dc);
    Rng probe_rng(Rng::mix(a.seed, 1));
    ClassifierT<float> clf(dc.attrs(), probe_rng);
    train_classifier(clf, probe_data, a.probe_epochs, 32, 2e-3, probe_rng);
    SegmenterT<float> seg(dc.parts(), probe_rng);
    train_segmenter(seg, probe_data, std::max(2, a.probe_epochs / 3), 16, 2e-3, probe_rng);

    // one generated image per reference sample, conditioned on that sample
    Rng sample_rng(a.seed);
    TensorT<float> gen({n, 3, dc.h, dc.w});
    double mask_acc = 0, miou_sum = 0;
    std::vector<int> all(n);
    std::iota(all.begin(), all.end(), 0);
    for (int i = 0; i < n; ++i) {
        auto ctx = tr.tokens_for_sample(ref[(std::size_t)i]);
        auto img = tr.sample_images(ctx, 1, a.steps, a.eta, sample_rng);
        std::copy(img.data(), img.data() + img.size(), gen.data() + (std::size_t)i * img.size());
        auto one = img.reshaped({1, 3, dc.h, dc.w});
        auto pred = seg.predict_mask(one);
        mask_acc += mask_pixel_accuracy(pred, ref[(std::size_t)i].mask);
        miou_sum += miou(pred, ref[(std::size_t)i].mask);
    }

    EvalReport rep;
    rep.n = n;
    auto ref_imgs = stack_images<float>(ref, all);
    rep.fid = frechet_distance(clf.features_value(ref_imgs).cast<double>(),
                               clf.features_value(gen).cast<double>());
    rep.kid = kernel_distance(clf.features_value(ref_imgs).cast<double>(),
                              clf.features_value(gen).cast<double>());
    rep.attr_acc = attribute_accuracy(clf, gen, stack_attrs<float>(ref, all));
    rep.mask_acc = mask_acc / n;
    rep.miou = miou_sum / n;

    // diversity: repeated stochastic draws under one fixed condition
    auto div_ctx = tr.tokens_for_sample(ref[0]);
    Rng div_rng(Rng::mix(a.seed, 3));
    rep.lpips_mean = diversity_lpips<float>(
        [&] {
            auto img = tr.sample_images(div_ctx, 1, a.steps, a.eta, div_rng);
            return img.reshaped({3, dc.h, dc.w});
        },
        a.div_n, a.eta, clf);
    rep.validate();

    write_text(a.out + "/eval.csv", EvalReport::csv_header() + "\n" + rep.csv_row() + "\n");
    json doc = echo;
    doc["n"] = rep.n;
    doc["fid"] = rep.fid;
    doc["kid"] = rep.kid;
    doc["attr_acc"] = rep.attr_acc;
    doc["mask_acc"] = rep.mask_acc;
    doc["miou"] = rep.miou;
    doc["lpips_mean"] = rep.lpips_mean;
    doc["div_n"] = a.div_n;
    write_json(a.out + "/eval.json", doc);
    std::cout << "eval: " << EvalReport::csv_header() << "\n";
    std::cout << "eval: " << rep.csv_row() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// plot-weights
// ---------------------------------------------------------------------------

struct PlotArgs {
    std::string out;
    std::string schedule = "linear";
    int T = 1000;
    double beta_start = 1e-4;
    double beta_end = 2e-2;
    double k = 1.0;
    double gamma = 0.5;
    bool plot = false;
};

// per-series min/max normalized log plot; legend = color swatches in column order
void render_weight_plot(const std::string& path, const std::vector<WeightRow>& rows) {
    const int W = 720, H = 440, ml = 20, mt = 24, mb = 16;
    std::vector<std::uint8_t> rgb((std::size_t)W * H * 3, 255);
    auto put = [&](int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
        if (x < 0 || y < 0 || x >= W || y >= H) return;
        auto* p = &rgb[((std::size_t)y * W + x) * 3];
        p[0] = r, p[1] = g, p[2] = b;
    };
    static const std::uint8_t cols[6][3] = {{200, 40, 40},  {40, 160, 40}, {40, 60, 220},
                                            {230, 140, 20}, {140, 40, 180}, {20, 20, 20}};
    const int nt = (int)rows.size();
    auto series = [&](int which, int i) -> double {
        const auto& r = rows[(std::size_t)i];
        const double v[6] = {r.beta, r.alpha_bar, r.snr, r.vlb, r.lambda, r.lambda_p2};
        return std::log10(std::max(v[which], 1e-12));
    };
    for (int s = 0; s < 6; ++s) {
        double lo = series(s, 0), hi = lo;
        for (int i = 1; i < nt; ++i) {
            lo = std::min(lo, series(s, i));
            hi = std::max(hi, series(s, i));
        }
        if (hi - lo < 1e-12) hi = lo + 1;
        int px = -1, py = -1;
        for (int i = 0; i < nt; ++i) {
            const int x = ml + (int)std::lround((double)i / std::max(1, nt - 1) * (W - ml - 8));
            const int y = H - mb -
                          (int)std::lround((series(s, i) - lo) / (hi - lo) * (H - mt - mb));
            if (px >= 0) {
                const int steps = std::max(std::abs(x - px), std::abs(y - py)) + 1;
                for (int q = 0; q <= steps; ++q)
                    put(px + (x - px) * q / steps, py + (y - py) * q / steps, cols[s][0],
                        cols[s][1], cols[s][2]);
            }
            px = x, py = y;
        }
        for (int q = 0; q < 24; ++q)
            for (int r = 0; r < 8; ++r) put(ml + s * 32 + q, 8 + r, cols[s][0], cols[s][1], cols[s][2]);
    }
    write_png_rgb(path, W, H, rgb.data());
}

int cmd_plot_weights(const PlotArgs& a) {
    const auto kind = a.schedule == "cosine" ? ScheduleKind::cosine : ScheduleKind::linear;
    auto s = make_schedule(kind, a.T, a.beta_start, a.beta_end);
    P2Config p2;
    p2.k = a.k;
    p2.gamma = a.gamma;
    auto rows = weight_profile(s, p2);
    fs::create_directories(a.out);
    std::ostringstream os;
    os.precision(12);
    os << "t,beta,alpha_bar,snr,vlb,lambda,lambda_p2\n";
    for (const auto& r : rows)
        os << r.t << ',' << r.beta << ',' << r.alpha_bar << ',' << r.snr << ',' << r.vlb << ','
           << r.lambda << ',' << r.lambda_p2 << '\n';
    write_text(a.out + "/weights.csv", os.str());
    if (a.plot) render_weight_plot(a.out + "/weights.png", rows);
    std::cout << "plot-weights: " << a.T << " rows (" << a.schedule << ", k=" << a.k
              << ", gamma=" << a.gamma << ") -> " << a.out << "/weights.csv"
              << (a.plot ? " + weights.png" : "") << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// mask-swap
// ---------------------------------------------------------------------------

struct SwapArgs {
    std::string checkpoint;
    std::string out;
    std::string parts;
    int a = 0;
    int b = 1;
    std::uint64_t data_seed = 1234;
    int count = 8;
    int steps = 50;
    double eta = 0.0;
    std::uint64_t seed = 7;
};

int cmd_mask_swap(const SwapArgs& a) {
    auto tr = load_diffusion_checkpoint(a.checkpoint);
    if (!mode_uses_masks(tr.cfg.mode))
        throw std::invalid_argument(std::string("mask-swap: checkpoint mode '") +
                                    train_mode_name(tr.cfg.mode) + "' does not consume masks");
    const RendererConfig& dc = tr.data_cfg;
    std::set<std::string> parts;
    std::stringstream ss(a.parts);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) parts.insert(item);
    if (parts.empty()) throw std::invalid_argument("mask-swap: --parts must name at least one part");
    for (const auto& p : parts) dc.part_index(p);  // fail fast on unknown names

    auto sa = generate_sample(a.data_seed, a.a, dc);
    auto sb = generate_sample(a.data_seed, a.b, dc);
    auto [ma, mb] = mask_component_swap(sa, sb, parts, dc);

    fs::create_directories(a.out);
    write_mask_png(a.out + "/a_mask.png", sa.mask, dc.parts());
    write_mask_png(a.out + "/b_mask.png", sb.mask, dc.parts());
    write_mask_png(a.out + "/a_swapped_mask.png", ma, dc.parts());
    write_mask_png(a.out + "/b_swapped_mask.png", mb, dc.parts());

    Rng rng(a.seed);
    SamplePair ca = sa, cb = sb;
    ca.mask = ma;
    cb.mask = mb;
    auto ga = tr.sample_images(tr.tokens_for_sample(ca), a.count, a.steps, a.eta, rng);
    auto gb = tr.sample_images(tr.tokens_for_sample(cb), a.count, a.steps, a.eta, rng);
    write_image_png(a.out + "/a_swapped_grid.png", image_grid(ga, 0));
    write_image_png(a.out + "/b_swapped_grid.png", image_grid(gb, 0));

    json doc{{"checkpoint", a.checkpoint},
             {"parts", std::vector<std::string>(parts.begin(), parts.end())},
             {"a", a.a},
             {"b", a.b},
             {"data_seed", a.data_seed},
             {"seed", a.seed},
             {"steps", a.steps},
             {"eta", a.eta},
             {"count", a.count},
             {"a_incoherent_pixels", ma.incoherent_pixels()},
             {"b_incoherent_pixels", mb.incoherent_pixels()},
             {"condition_source", train_mode_name(tr.cfg.mode)}};
    write_json(a.out + "/swap.json", doc);
    std::cout << "mask-swap: parts [" << a.parts << "], incoherent pixels a=" << ma.incoherent_pixels()
              << " b=" << mb.incoherent_pixels() << " -> " << a.out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale latent diffusion lab: data, training, sampling, evaluation"};
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default();

    GenDataArgs gd;
    auto* c_gd = app.add_subcommand("gen-data", "render a labeled dataset to a directory");
    c_gd->add_option("--out", gd.out, "output dataset directory")->required();
    c_gd->add_option("--n", gd.n, "sample count")->check(CLI::PositiveNumber);
    c_gd->add_option("--seed", gd.seed, "renderer seed");

    TrainCodecArgs tc;
    auto* c_tc = app.add_subcommand("train-codec", "pretrain the image codec");
    c_tc->add_option("--out", tc.out, "run directory for checkpoint and loss curve")->required();
    add_data_flags(c_tc, tc.data, "train");
    c_tc->add_option("--epochs", tc.epochs)->check(CLI::PositiveNumber);
    c_tc->add_option("--batch", tc.batch)->check(CLI::PositiveNumber);
    c_tc->add_option("--lr", tc.lr)->check(CLI::PositiveNumber);
    c_tc->add_option("--seed", tc.seed, "init and shuffle seed");

    TrainArgs tn;
    auto* c_tn = app.add_subcommand("train", "train the denoiser against a frozen codec");
    c_tn->add_option("--config", tn.config, "key=value run config file")->required();
    c_tn->add_option("--codec", tn.codec, "pretrained codec checkpoint")->required();
    c_tn->add_option("--out", tn.out, "run directory, receives epoch_{k}.ckpt")->required();
    add_data_flags(c_tn, tn.data, "train");
    c_tn->add_option("--every", tn.every, "checkpoint cadence in epochs")
        ->check(CLI::PositiveNumber);

    SampleArgs sm;
    auto* c_sm = app.add_subcommand("sample", "draw images from a trained checkpoint");
    c_sm->add_option("--checkpoint", sm.checkpoint)->required();
    c_sm->add_option("--out", sm.out, "output directory")->required();
    c_sm->add_option("--count", sm.count, "images in the grid")->check(CLI::PositiveNumber);
    c_sm->add_option("--steps", sm.steps, "sampling steps")->check(CLI::PositiveNumber);
    c_sm->add_option("--eta", sm.eta, "0 = deterministic, 1 = ancestral");
    c_sm->add_option("--seed", sm.seed, "sampling seed");
    c_sm->add_option("--cond-index", sm.cond_index, "renderer index of the conditioning sample");
    c_sm->add_option("--cond-seed", sm.cond_seed, "renderer seed of the conditioning sample");
    c_sm->add_option("--cols", sm.cols, "grid columns, 0 = square-ish");

    EvalArgs ev;
    ev.data.n = 128;
    auto* c_ev = app.add_subcommand("eval", "score a checkpoint against reference data");
    c_ev->add_option("--checkpoint", ev.checkpoint)->required();
    c_ev->add_option("--out", ev.out, "output directory")->required();
    add_data_flags(c_ev, ev.data, "val");
    c_ev->get_option("--n")->description("reference (= generated) sample count when rendering");
    c_ev->add_option("--steps", ev.steps, "sampling steps")->check(CLI::PositiveNumber);
    c_ev->add_option("--eta", ev.eta, "sampling eta; must stay > 0 for the diversity metric");
    c_ev->add_option("--seed", ev.seed, "sampling and probe-training seed");
    c_ev->add_option("--probe-n", ev.probe_n, "training samples for probe networks")
        ->check(CLI::PositiveNumber);
    c_ev->add_option("--probe-epochs", ev.probe_epochs, "epochs for the attribute probe")
        ->check(CLI::PositiveNumber);
    c_ev->add_option("--div-n", ev.div_n, "stochastic draws for the diversity metric")
        ->check(CLI::PositiveNumber);

    PlotArgs pw;
    auto* c_pw = app.add_subcommand("plot-weights", "tabulate schedule and loss-weight profiles");
    c_pw->add_option("--out", pw.out, "output directory")->required();
    c_pw->add_option("--schedule", pw.schedule)->check(CLI::IsMember({"linear", "cosine"}));
    c_pw->add_option("--T", pw.T, "diffusion steps")->check(CLI::PositiveNumber);
    c_pw->add_option("--beta-start", pw.beta_start)->check(CLI::PositiveNumber);
    c_pw->add_option("--beta-end", pw.beta_end)->check(CLI::PositiveNumber);
    c_pw->add_option("--k", pw.k, "weight offset")->check(CLI::PositiveNumber);
    c_pw->add_option("--gamma", pw.gamma, "weight exponent, 0 = plain noise objective");
    c_pw->add_flag("--plot", pw.plot, "also render weights.png");

    SwapArgs sw;
    auto* c_sw = app.add_subcommand("mask-swap",
                                    "swap mask channels between two samples and resample");
    c_sw->add_option("--checkpoint", sw.checkpoint, "mask-conditioned checkpoint")->required();
    c_sw->add_option("--out", sw.out, "output directory")->required();
    c_sw->add_option("--parts", sw.parts, "comma-separated part names to swap")->required();
    c_sw->add_option("--a", sw.a, "renderer index of sample a");
    c_sw->add_option("--b", sw.b, "renderer index of sample b");
    c_sw->add_option("--data-seed", sw.data_seed, "renderer seed for the pair");
    c_sw->add_option("--count", sw.count, "images per conditioned grid")
        ->check(CLI::PositiveNumber);
    c_sw->add_option("--steps", sw.steps, "sampling steps")->check(CLI::PositiveNumber);
    c_sw->add_option("--eta", sw.eta, "0 = deterministic, 1 = ancestral");
    c_sw->add_option("--seed", sw.seed, "sampling seed");

    try {
        app.parse(argc, argv);
        if (*c_gd) return cmd_gen_data(gd);
        if (*c_tc) return cmd_train_codec(tc);
        if (*c_tn) return cmd_train(tn);
        if (*c_sm) return cmd_sample(sm);
        if (*c_ev) return cmd_eval(ev);
        if (*c_pw) return cmd_plot_weights(pw);
        if (*c_sw) return cmd_mask_swap(sw);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
