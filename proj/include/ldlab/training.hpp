#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "codec.hpp"
#include "conditioning.hpp"
#include "core/rng.hpp"
#include "data.hpp"
#include "denoiser.hpp"
#include "diffusion.hpp"
#include "nn/optim.hpp"
#include "schedule.hpp"

namespace ldlab {

// ---------------------------------------------------------------------------
// run configuration
// ---------------------------------------------------------------------------

enum class TrainMode { uncond, attr, mask_pooled, mask_nopool, multi };

inline const char* train_mode_name(TrainMode m) {
    switch (m) {
        case TrainMode::uncond: return "uncond";
        case TrainMode::attr: return "attr";
        case TrainMode::mask_pooled: return "mask_pooled";
        case TrainMode::mask_nopool: return "mask_nopool";
        case TrainMode::multi: return "multi";
    }
    return "?";
}

inline TrainMode train_mode_from(const std::string& s) {
    for (TrainMode m : {TrainMode::uncond, TrainMode::attr, TrainMode::mask_pooled,
                        TrainMode::mask_nopool, TrainMode::multi})
        if (s == train_mode_name(m)) return m;
    throw std::invalid_argument("config: mode must be one of uncond, attr, mask_pooled, "
                                "mask_nopool, multi (got '" + s + "')");
}

inline bool mode_uses_attrs(TrainMode m) {
    return m == TrainMode::attr || m == TrainMode::multi;
}
inline bool mode_uses_masks(TrainMode m) {
    return m == TrainMode::mask_pooled || m == TrainMode::mask_nopool || m == TrainMode::multi;
}

struct TrainConfig {
    TrainMode mode = TrainMode::uncond;
    int epochs = 10;
    int batch = 16;
    double lr = 1e-4;
    P2Config p2;
    ScheduleKind sched_kind = ScheduleKind::linear;
    int T = 1000;
    double beta_start = 1e-4;
    double beta_end = 2e-2;
    std::uint64_t seed = 0;

    void validate() const {
        if (epochs <= 0) throw std::invalid_argument("config: epochs must be positive");
        if (batch <= 0) throw std::invalid_argument("config: batch must be positive");
        if (!(lr > 0)) throw std::invalid_argument("config: lr must be positive");
        if (T < 1) throw std::invalid_argument("config: T must be at least 1");
        ldlab::validate(p2);
        make_schedule(sched_kind, T, beta_start, beta_end);  // names beta_* on failure
    }
};

// Plain key=value lines; '#' starts a comment, blank lines ignored.
// Recognized keys: mode, epochs, batch, lr, schedule, T, beta_start, beta_end,
// p2_k, p2_gamma, seed. Anything else is an error naming the key.
inline TrainConfig parse_train_config(const std::string& text) {
    TrainConfig cfg;
    std::istringstream in(text);
    std::string line;
    auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t\r");
        const auto b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    auto want_int = [](const std::string& key, const std::string& v) {
        try {
            std::size_t used = 0;
            const long long x = std::stoll(v, &used);
            if (used != v.size()) throw std::invalid_argument("trailing");
            return x;
        } catch (...) {
            throw std::invalid_argument("config: " + key + " must be an integer (got '" + v +
                                        "')");
        }
    };
    auto want_real = [](const std::string& key, const std::string& v) {
        try {
            std::size_t used = 0;
            const double x = std::stod(v, &used);
            if (used != v.size()) throw std::invalid_argument("trailing");
            return x;
        } catch (...) {
            throw std::invalid_argument("config: " + key + " must be a number (got '" + v +
                                        "')");
        }
    };
    while (std::getline(in, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: expected key=value, got '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (key == "mode") {
            cfg.mode = train_mode_from(val);
        } else if (key == "epochs") {
            cfg.epochs = (int)want_int(key, val);
        } else if (key == "batch") {
            cfg.batch = (int)want_int(key, val);
        } else if (key == "lr") {
            cfg.lr = want_real(key, val);
        } else if (key == "schedule") {
            if (val == "linear")
                cfg.sched_kind = ScheduleKind::linear;
            else if (val == "cosine")
                cfg.sched_kind = ScheduleKind::cosine;
            else
                throw std::invalid_argument(
                    "config: schedule must be linear or cosine (got '" + val + "')");
        } else if (key == "T") {
            cfg.T = (int)want_int(key, val);
        } else if (key == "beta_start") {
            cfg.beta_start = want_real(key, val);
        } else if (key == "beta_end") {
            cfg.beta_end = want_real(key, val);
        } else if (key == "p2_k") {
            cfg.p2.k = want_real(key, val);
        } else if (key == "p2_gamma") {
            cfg.p2.gamma = want_real(key, val);
        } else if (key == "seed") {
            cfg.seed = (std::uint64_t)want_int(key, val);
        } else {
            throw std::invalid_argument("config: unknown key '" + key + "'");
        }
    }
    cfg.validate();
    return cfg;
}

inline std::string train_config_text(const TrainConfig& cfg) {
    std::ostringstream os;
    os.precision(17);
    os << "mode = " << train_mode_name(cfg.mode) << '\n'
       << "epochs = " << cfg.epochs << '\n'
       << "batch = " << cfg.batch << '\n'
       << "lr = " << cfg.lr << '\n'
       << "schedule = " << (cfg.sched_kind == ScheduleKind::linear ? "linear" : "cosine")
       << '\n'
       << "T = " << cfg.T << '\n'
       << "beta_start = " << cfg.beta_start << '\n'
       << "beta_end = " << cfg.beta_end << '\n'
       << "p2_k = " << cfg.p2.k << '\n'
       << "p2_gamma = " << cfg.p2.gamma << '\n'
       << "seed = " << cfg.seed << '\n';
    return os.str();
}

// ---------------------------------------------------------------------------
// mode-dependent condition encoder bundle
// ---------------------------------------------------------------------------

template <class Real>
struct ConditionerT {
    TrainMode mode = TrainMode::uncond;
    int token_width = 64;
    std::optional<AttrEncoderT<Real>> attr;
    std::optional<MaskEncoderT<Real>> mask;
    std::optional<NullTokenT<Real>> null_tok;

    ConditionerT() = default;
    ConditionerT(TrainMode m, int attrs, int parts, int width, Rng& rng)
        : mode(m), token_width(width) {
        if (m == TrainMode::uncond) null_tok.emplace(width, rng);
        if (mode_uses_attrs(m)) attr.emplace(attrs, width, rng);
        if (mode_uses_masks(m)) mask.emplace(parts, width, rng);
    }

    // attrs (N,A) and masks (N,M,H,W) may be null when the mode ignores them
    Var context(TapeT<Real>& tp, const TensorT<Real>* attrs, const TensorT<Real>* masks,
                int n) {
        switch (mode) {
            case TrainMode::uncond:
                return null_tok->fwd(tp, n);
            case TrainMode::attr:
                if (!attrs) throw std::invalid_argument("conditioner: attributes required");
                return attr->fwd(tp, tp.input(*attrs));
            case TrainMode::mask_pooled:
            case TrainMode::mask_nopool:
                if (!masks) throw std::invalid_argument("conditioner: masks required");
                return mask->fwd(tp, tp.input(*masks), mode == TrainMode::mask_pooled);
            case TrainMode::multi:
                if (!attrs || !masks)
                    throw std::invalid_argument("conditioner: attributes and masks required");
                return concat_conditions(tp, attr->fwd(tp, tp.input(*attrs)),
                                         mask->fwd(tp, tp.input(*masks), false));
        }
        throw std::logic_error("conditioner: unreachable");
    }

    void collect(std::vector<ParamT<Real>*>& out) {
        if (null_tok) null_tok->collect(out);
        if (attr) attr->collect(out);
        if (mask) mask->collect(out);
    }
};

// ---------------------------------------------------------------------------
// codec pretraining
// ---------------------------------------------------------------------------

template <class Real>
inline std::vector<double> train_codec(CodecT<Real>& codec, const std::vector<SamplePair>& data,
                                       int epochs, int batch, double lr, Rng& rng) {
    if (data.empty()) throw std::invalid_argument("train_codec: empty dataset");
    if (epochs <= 0 || batch <= 0 || !(lr > 0))
        throw std::invalid_argument("train_codec: epochs, batch and lr must be positive");
    std::vector<ParamT<Real>*> ps;
    codec.collect(ps);
    AdamT<Real> opt;
    opt.lr = lr;
    std::vector<int> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> log;
    for (int e = 0; e < epochs; ++e) {
        rng.shuffle(order);
        double sum = 0;
        int steps = 0;
        for (std::size_t at = 0; at < order.size(); at += batch) {
            std::vector<int> which(order.begin() + at,
                                   order.begin() + std::min(order.size(), at + batch));
            auto images = stack_images<Real>(data, which);
            opt.zero_grad(ps);
            TapeT<Real> tp;
            auto parts = codec_loss(tp, codec, tp.input(images));
            tp.backward(parts.total);
            const double lv = tp.val(parts.total)[0];
            if (!std::isfinite(lv))
                throw std::runtime_error("train_codec: loss diverged at epoch " +
                                         std::to_string(e));
            opt.step(ps);
            sum += lv;
            ++steps;
        }
        log.push_back(sum / steps);
    }
    return log;
}

// ---------------------------------------------------------------------------
// diffusion training
// ---------------------------------------------------------------------------

struct TrainingDiverged : std::runtime_error {
    int epoch, step;
    TrainingDiverged(int e, int s)
        : std::runtime_error("training diverged (non-finite loss) at epoch " +
                             std::to_string(e) + ", step " + std::to_string(s)),
          epoch(e), step(s) {}
};

template <class Real>
struct DiffusionTrainerT {
    TrainConfig cfg;
    RendererConfig data_cfg;
    DenoiserConfig den_cfg;
    Schedule sched;
    CodecT<Real> codec;  // frozen: never part of trainables()

  private:
    // declared (therefore initialized) ahead of den/cond, which consume it
    // while `rng` below does not exist yet
    std::optional<Rng> init_rng_;
    Rng& rng_for_init() {
        if (!init_rng_) init_rng_.emplace(Rng::mix(cfg.seed, 0x696e6974u));
        return *init_rng_;
    }

  public:
    DenoiserT<Real> den;
    ConditionerT<Real> cond;
    AdamT<Real> opt;
    Rng rng;
    int epoch = 0;
    std::vector<double> loss_log;  // one mean per completed epoch
    std::vector<int> last_ts;      // timesteps drawn during the last epoch

    DiffusionTrainerT(const TrainConfig& c, const RendererConfig& dc, const CodecT<Real>& cdc,
                      DenoiserConfig den_c = DenoiserConfig{})
        : cfg(c),
          data_cfg(dc),
          den_cfg([&] {
              den_c.latent_channels = cdc.cfg.latent_channels;
              return den_c;
          }()),
          sched(make_schedule(c.sched_kind, c.T, c.beta_start, c.beta_end)),
          codec(cdc),
          den((cfg.validate(), dc.validate(), den_cfg), rng_for_init()),
          cond(c.mode, (int)dc.attr_names.size(), (int)dc.part_names.size(),
               den_cfg.ctx_width, rng_for_init()),
          rng(c.seed) {
        opt.lr = c.lr;
    }

    std::vector<ParamT<Real>*> trainables() {
        std::vector<ParamT<Real>*> ps;
        den.collect(ps);
        cond.collect(ps);
        return ps;
    }

    // one full pass over the dataset; returns and logs the mean loss
    double epoch_pass(const std::vector<SamplePair>& data) {
        if (data.empty()) throw std::invalid_argument("train_diffusion: empty dataset");
        auto ps = trainables();
        std::vector<int> order(data.size());
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(order);
        last_ts.clear();
        double sum = 0;
        int steps = 0;
        for (std::size_t at = 0; at < order.size(); at += cfg.batch) {
            std::vector<int> which(order.begin() + at,
                                   order.begin() + std::min(order.size(),
                                                            at + (std::size_t)cfg.batch));
            const int n = (int)which.size();
            auto images = stack_images<Real>(data, which);
            auto z0 = codec.encode_value(images);

            std::vector<int> t(n);
            for (int& ti : t) {
                ti = rng.randint(1, cfg.T);
                last_ts.push_back(ti);
            }
            TensorT<Real> eps(z0.shape);
            rng.fill_normal(eps);
            auto z_t = forward_diffuse(z0, t, eps, sched);
            auto w = p2_weights_for(t, sched, cfg.p2);

            std::optional<TensorT<Real>> attrs, masks;
            if (mode_uses_attrs(cfg.mode)) attrs = stack_attrs<Real>(data, which);
            if (mode_uses_masks(cfg.mode)) masks = stack_masks<Real>(data, which);

            opt.zero_grad(ps);
            TapeT<Real> tp;
            Var ctx = cond.context(tp, attrs ? &*attrs : nullptr, masks ? &*masks : nullptr, n);
            Var eps_hat = den.predict_noise(tp, tp.input(z_t), t, ctx);
            Var loss = tp.weighted_sumsq_mean(eps_hat, eps, w);
            tp.backward(loss);
            const double lv = tp.val(loss)[0];
            if (!std::isfinite(lv)) throw TrainingDiverged(epoch, steps);
            opt.step(ps);
            sum += lv;
            ++steps;
        }
        const double mean = sum / steps;
        loss_log.push_back(mean);
        ++epoch;
        return mean;
    }

    // DDIM sampling through the trained stack: returns decoded images
    TensorT<Real> sample_images(const TensorT<Real>& ctx_one, int count, int ddim_steps,
                                double eta, Rng& sample_rng) {
        const int side = data_cfg.h / 4;
        DenoiseFn<Real> fn = [&](const TensorT<Real>& z, const std::vector<int>& t) {
            TensorT<Real> ctx({z.dim(0), ctx_one.dim(0), ctx_one.dim(1)});
            for (int i = 0; i < z.dim(0); ++i)
                std::copy(ctx_one.data(), ctx_one.data() + ctx_one.size(),
                          ctx.data() + (std::size_t)i * ctx_one.size());
            return den.predict_noise_value(z, t, ctx);
        };
        auto z = sample(fn, {count, codec.cfg.latent_channels, side, side}, ddim_steps, eta,
                        sched, sample_rng);
        return codec.decode_value(z);
    }

    // condition tokens (psi, width) for one dataset sample under this mode
    TensorT<Real> tokens_for_sample(const SamplePair& sp) {
        TapeT<Real> tp(false);
        std::optional<TensorT<Real>> attrs, masks;
        if (mode_uses_attrs(cfg.mode)) {
            TensorT<Real> a({1, (int)sp.attrs.size()});
            for (std::size_t i = 0; i < sp.attrs.size(); ++i)
                a[i] = static_cast<Real>(sp.attrs[i]);
            attrs = a;
        }
        if (mode_uses_masks(cfg.mode)) {
            auto m = sp.mask.template to_tensor<Real>();
            masks = m.reshaped({1, m.dim(0), m.dim(1), m.dim(2)});
        }
        Var ctx = cond.context(tp, attrs ? &*attrs : nullptr, masks ? &*masks : nullptr, 1);
        const auto v = tp.val(ctx);
        return v.reshaped({v.dim(1), v.dim(2)}).clone();
    }
};

// ---------------------------------------------------------------------------
// checkpoint container (float instantiation; "LDCP" magic, version 1)
// ---------------------------------------------------------------------------

namespace detail {

inline void write_exact(std::ostream& os, const void* p, std::size_t n) {
    os.write(static_cast<const char*>(p), (std::streamsize)n);
}

inline void read_exact(std::istream& is, void* p, std::size_t n) {
    is.read(static_cast<char*>(p), (std::streamsize)n);
    if ((std::size_t)is.gcount() != n)
        throw std::runtime_error("checkpoint: truncated file");
}

inline nlohmann::json renderer_to_json(const RendererConfig& c) {
    return {{"height", c.h},
            {"width", c.w},
            {"parts", c.part_names},
            {"attributes", c.attr_names},
            {"val_modulus", c.val_modulus}};
}

inline RendererConfig renderer_from_json(const nlohmann::json& j) {
    RendererConfig c;
    c.h = j.at("height").get<int>();
    c.w = j.at("width").get<int>();
    c.part_names = j.at("parts").get<std::vector<std::string>>();
    c.attr_names = j.at("attributes").get<std::vector<std::string>>();
    c.val_modulus = j.at("val_modulus").get<int>();
    return c;
}

inline nlohmann::json train_to_json(const TrainConfig& c) {
    return {{"mode", train_mode_name(c.mode)},
            {"epochs", c.epochs},
            {"batch", c.batch},
            {"lr", c.lr},
            {"schedule", c.sched_kind == ScheduleKind::linear ? "linear" : "cosine"},
            {"T", c.T},
            {"beta_start", c.beta_start},
            {"beta_end", c.beta_end},
            {"p2_k", c.p2.k},
            {"p2_gamma", c.p2.gamma},
            {"seed", c.seed}};
}

inline TrainConfig train_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.mode = train_mode_from(j.at("mode").get<std::string>());
    c.epochs = j.at("epochs").get<int>();
    c.batch = j.at("batch").get<int>();
    c.lr = j.at("lr").get<double>();
    c.sched_kind = j.at("schedule").get<std::string>() == "cosine" ? ScheduleKind::cosine
                                                                   : ScheduleKind::linear;
    c.T = j.at("T").get<int>();
    c.beta_start = j.at("beta_start").get<double>();
    c.beta_end = j.at("beta_end").get<double>();
    c.p2.k = j.at("p2_k").get<double>();
    c.p2.gamma = j.at("p2_gamma").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

inline nlohmann::json denoiser_to_json(const DenoiserConfig& c) {
    return {{"latent_channels", c.latent_channels}, {"base_channels", c.base_channels},
            {"heads", c.heads},                     {"head_dim", c.head_dim},
            {"ctx_width", c.ctx_width},             {"temb_dim", c.temb_dim},
            {"sin_dim", c.sin_dim},                 {"groups", c.groups},
            {"depth", c.depth}};
}

inline DenoiserConfig denoiser_from_json(const nlohmann::json& j) {
    DenoiserConfig c;
    c.latent_channels = j.at("latent_channels").get<int>();
    c.base_channels = j.at("base_channels").get<int>();
    c.heads = j.at("heads").get<int>();
    c.head_dim = j.at("head_dim").get<int>();
    c.ctx_width = j.at("ctx_width").get<int>();
    c.temb_dim = j.at("temb_dim").get<int>();
    c.sin_dim = j.at("sin_dim").get<int>();
    c.groups = j.at("groups").get<int>();
    c.depth = j.at("depth").get<int>();
    return c;
}

inline void write_params_payload(std::ostream& os, nlohmann::json& meta,
                                 const std::vector<ParamT<float>*>& ps) {
    nlohmann::json tensors = nlohmann::json::array();
    for (const auto* p : ps) {
        const bool adam = p->adam_m.size() > 0;
        tensors.push_back({{"name", p->name}, {"shape", p->value.shape}, {"adam", adam}});
    }
    meta["tensors"] = tensors;
    std::ostringstream head;
    const std::string js = meta.dump();
    const char magic[4] = {'L', 'D', 'C', 'P'};
    const std::uint32_t version = 1;
    const std::uint64_t len = js.size();
    write_exact(os, magic, 4);
    write_exact(os, &version, 4);
    write_exact(os, &len, 8);
    write_exact(os, js.data(), js.size());
    for (const auto* p : ps) {
        write_exact(os, p->value.data(), p->value.size() * sizeof(float));
        if (p->adam_m.size() > 0) {
            write_exact(os, p->adam_m.data(), p->adam_m.size() * sizeof(float));
            write_exact(os, p->adam_v.data(), p->adam_v.size() * sizeof(float));
        }
    }
}

inline nlohmann::json read_meta(std::istream& is) {
    char magic[4];
    read_exact(is, magic, 4);
    if (std::string(magic, 4) != "LDCP")
        throw std::runtime_error("checkpoint: bad magic (not a checkpoint file)");
    std::uint32_t version = 0;
    read_exact(is, &version, 4);
    if (version != 1)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    std::uint64_t len = 0;
    read_exact(is, &len, 8);
    std::string js(len, '\0');
    read_exact(is, js.data(), len);
    return nlohmann::json::parse(js);
}

inline void read_params_payload(std::istream& is, const nlohmann::json& meta,
                                std::vector<ParamT<float>*>& ps) {
    std::map<std::string, ParamT<float>*> by_name;
    for (auto* p : ps) by_name[p->name] = p;
    const auto& tensors = meta.at("tensors");
    if (tensors.size() != ps.size())
        throw std::runtime_error("checkpoint: tensor count mismatch");
    for (const auto& tj : tensors) {
        const std::string name = tj.at("name").get<std::string>();
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw std::runtime_error("checkpoint: unknown tensor '" + name + "'");
        ParamT<float>* p = it->second;
        const auto shape = tj.at("shape").get<std::vector<int>>();
        if (shape != p->value.shape)
            throw std::runtime_error("checkpoint: shape mismatch for '" + name + "'");
        read_exact(is, p->value.data(), p->value.size() * sizeof(float));
        if (tj.at("adam").get<bool>()) {
            p->adam_m = TensorT<float>(p->value.shape);
            p->adam_v = TensorT<float>(p->value.shape);
            read_exact(is, p->adam_m.data(), p->adam_m.size() * sizeof(float));
            read_exact(is, p->adam_v.data(), p->adam_v.size() * sizeof(float));
        }
    }
}

inline nlohmann::json adam_to_json(const AdamT<float>& a) {
    return {{"lr", a.lr}, {"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps},
            {"steps", a.steps}};
}

inline void adam_from_json(const nlohmann::json& j, AdamT<float>& a) {
    a.lr = j.at("lr").get<double>();
    a.beta1 = j.at("beta1").get<double>();
    a.beta2 = j.at("beta2").get<double>();
    a.eps = j.at("eps").get<double>();
    a.steps = j.at("steps").get<long long>();
}

}  // namespace detail

inline void save_diffusion_checkpoint(const std::string& path,
                                      DiffusionTrainerT<float>& tr) {
    nlohmann::json meta;
    meta["kind"] = "diffusion";
    meta["epoch"] = tr.epoch;
    meta["rng"] = tr.rng.state();
    meta["train"] = detail::train_to_json(tr.cfg);
    meta["data"] = detail::renderer_to_json(tr.data_cfg);
    meta["denoiser"] = detail::denoiser_to_json(tr.den_cfg);
    meta["codec"] = {{"latent_channels", tr.codec.cfg.latent_channels},
                     {"codebook_size", tr.codec.cfg.codebook_size},
                     {"commitment", tr.codec.cfg.commitment}};
    meta["adam"] = detail::adam_to_json(tr.opt);
    meta["loss_log"] = tr.loss_log;

    std::vector<ParamT<float>*> ps;
    tr.codec.collect(ps);
    auto trainable = tr.trainables();
    ps.insert(ps.end(), trainable.begin(), trainable.end());

    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
    detail::write_params_payload(os, meta, ps);
    if (!os) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

inline DiffusionTrainerT<float> load_diffusion_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
    auto meta = detail::read_meta(is);
    if (meta.at("kind").get<std::string>() != "diffusion")
        throw std::runtime_error("checkpoint: expected a diffusion checkpoint");
    TrainConfig cfg = detail::train_from_json(meta.at("train"));
    RendererConfig dc = detail::renderer_from_json(meta.at("data"));
    DenoiserConfig den_cfg = detail::denoiser_from_json(meta.at("denoiser"));
    CodecConfig cc;
    cc.latent_channels = meta.at("codec").at("latent_channels").get<int>();
    cc.codebook_size = meta.at("codec").at("codebook_size").get<int>();
    cc.commitment = meta.at("codec").at("commitment").get<double>();
    Rng scratch(0);
    CodecT<float> codec(cc, scratch);
    DiffusionTrainerT<float> tr(cfg, dc, codec, den_cfg);
    tr.epoch = meta.at("epoch").get<int>();
    tr.rng.set_state(meta.at("rng").get<std::string>());
    detail::adam_from_json(meta.at("adam"), tr.opt);
    tr.loss_log = meta.at("loss_log").get<std::vector<double>>();

    std::vector<ParamT<float>*> ps;
    tr.codec.collect(ps);
    auto trainable = tr.trainables();
    ps.insert(ps.end(), trainable.begin(), trainable.end());
    detail::read_params_payload(is, meta, ps);
    return tr;
}

inline void save_codec_checkpoint(const std::string& path, CodecT<float>& codec,
                                  const RendererConfig& dc, int epoch, const Rng& rng,
                                  const AdamT<float>& opt,
                                  const std::vector<double>& loss_log) {
    nlohmann::json meta;
    meta["kind"] = "codec";
    meta["epoch"] = epoch;
    meta["rng"] = rng.state();
    meta["data"] = detail::renderer_to_json(dc);
    meta["codec"] = {{"latent_channels", codec.cfg.latent_channels},
                     {"codebook_size", codec.cfg.codebook_size},
                     {"commitment", codec.cfg.commitment}};
    meta["adam"] = detail::adam_to_json(opt);
    meta["loss_log"] = loss_log;
    std::vector<ParamT<float>*> ps;
    codec.collect(ps);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
    detail::write_params_payload(os, meta, ps);
    if (!os) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

struct CodecRun {
    CodecT<float> codec;
    RendererConfig data_cfg;
    int epoch = 0;
    Rng rng{0};
    AdamT<float> opt;
    std::vector<double> loss_log;
};

inline CodecRun load_codec_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
    auto meta = detail::read_meta(is);
    if (meta.at("kind").get<std::string>() != "codec")
        throw std::runtime_error("checkpoint: expected a codec checkpoint");
    CodecRun run;
    CodecConfig cc;
    cc.latent_channels = meta.at("codec").at("latent_channels").get<int>();
    cc.codebook_size = meta.at("codec").at("codebook_size").get<int>();
    cc.commitment = meta.at("codec").at("commitment").get<double>();
    Rng scratch(0);
    run.codec = CodecT<float>(cc, scratch);
    run.data_cfg = detail::renderer_from_json(meta.at("data"));
    run.epoch = meta.at("epoch").get<int>();
    run.rng.set_state(meta.at("rng").get<std::string>());
    detail::adam_from_json(meta.at("adam"), run.opt);
    run.loss_log = meta.at("loss_log").get<std::vector<double>>();
    std::vector<ParamT<float>*> ps;
    run.codec.collect(ps);
    detail::read_params_payload(is, meta, ps);
    return run;
}

// Runs cfg.epochs passes, writing epoch_{k}.ckpt under out_dir (empty = no
// files) every `every` epochs plus the final one. A divergence still leaves a
// diagnostic checkpoint behind before the error propagates.
inline std::vector<double> train_diffusion(DiffusionTrainerT<float>& tr,
                                           const std::vector<SamplePair>& data,
                                           const std::string& out_dir, int every = 1) {
    namespace fs = std::filesystem;
    if (!out_dir.empty()) fs::create_directories(out_dir);
    const int target = tr.cfg.epochs;
    try {
        while (tr.epoch < target) {
            tr.epoch_pass(data);
            const bool last = tr.epoch == target;
            if (!out_dir.empty() && (last || (every > 0 && tr.epoch % every == 0)))
                save_diffusion_checkpoint(
                    out_dir + "/epoch_" + std::to_string(tr.epoch) + ".ckpt", tr);
        }
    } catch (const TrainingDiverged&) {
        if (!out_dir.empty())
            save_diffusion_checkpoint(out_dir + "/diverged.ckpt", tr);
        throw;
    }
    return tr.loss_log;
}

// ---------------------------------------------------------------------------
// cross-run comparison
// ---------------------------------------------------------------------------

struct CompareCell {
    std::string run;
    int epoch = 0;
    double value = 0;
};

// One row per checkpoint: run label (file path), stored epoch, metric value.
// All checkpoints must agree on data geometry and latent layout.
inline std::vector<CompareCell> compare_checkpoints(
    const std::vector<std::string>& paths,
    const std::function<double(DiffusionTrainerT<float>&)>& metric) {
    if (paths.empty()) throw std::invalid_argument("compare_checkpoints: no checkpoints");
    std::vector<CompareCell> table;
    int h = -1, w = -1, cz = -1;
    for (const auto& p : paths) {
        auto tr = load_diffusion_checkpoint(p);
        if (h < 0) {
            h = tr.data_cfg.h;
            w = tr.data_cfg.w;
            cz = tr.codec.cfg.latent_channels;
        } else if (h != tr.data_cfg.h || w != tr.data_cfg.w ||
                   cz != tr.codec.cfg.latent_channels) {
            throw std::invalid_argument(
                "compare_checkpoints: incompatible geometries across runs");
        }
        table.push_back({p, tr.epoch, metric(tr)});
    }
    return table;
}

}  // namespace ldlab
