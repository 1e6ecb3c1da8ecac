#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "core/rng.hpp"
#include "core/tape.hpp"
#include "data.hpp"
#include "nn/layers.hpp"
#include "nn/optim.hpp"

namespace ldlab {

// ---------------------------------------------------------------------------
// feature-distribution distances; features are (N, D) matrices
// ---------------------------------------------------------------------------

namespace detail {

inline Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& s) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
    // clip: finite-sample covariances can dip below zero numerically
    Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

inline void check_feature_pair(const TensorT<double>& a, const TensorT<double>& b,
                               const char* who) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(1))
        throw std::invalid_argument(std::string(who) + ": feature sets must be (N,D) with equal D");
    if (a.dim(0) < 2 || b.dim(0) < 2)
        throw std::invalid_argument(std::string(who) + ": need at least 2 rows per set");
}

inline Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
feature_map(const TensorT<double>& f) {
    return {f.data(), f.dim(0), f.dim(1)};
}

}  // namespace detail

// squared mean gap plus covariance mismatch via the symmetric matrix square
// root; covariances get an eps*I floor before the root
inline double frechet_distance(const TensorT<double>& fa, const TensorT<double>& fb) {
    detail::check_feature_pair(fa, fb, "frechet_distance");
    const double eps = 1e-6;
    auto a = detail::feature_map(fa);
    auto b = detail::feature_map(fb);
    const int d = fa.dim(1);

    Eigen::VectorXd mu_a = a.colwise().mean().transpose();
    Eigen::VectorXd mu_b = b.colwise().mean().transpose();
    Eigen::MatrixXd ca = a.rowwise() - mu_a.transpose();
    Eigen::MatrixXd cb = b.rowwise() - mu_b.transpose();
    Eigen::MatrixXd cov_a = ca.transpose() * ca / double(fa.dim(0) - 1) +
                            eps * Eigen::MatrixXd::Identity(d, d);
    Eigen::MatrixXd cov_b = cb.transpose() * cb / double(fb.dim(0) - 1) +
                            eps * Eigen::MatrixXd::Identity(d, d);

    // Tr((cov_a cov_b)^{1/2}) == Tr((S cov_b S)^{1/2}) with S = cov_a^{1/2}
    Eigen::MatrixXd s = detail::sqrt_psd(cov_a);
    Eigen::MatrixXd m = s * cov_b * s;
    m = 0.5 * (m + m.transpose().eval());
    const double tr = cov_a.trace() + cov_b.trace() - 2.0 * detail::sqrt_psd(m).trace();
    return std::max(0.0, (mu_a - mu_b).squaredNorm() + tr);
}

// unbiased squared MMD with the cubic kernel (x.y/D + 1)^3; may be slightly
// negative on same-distribution inputs, which is what unbiased means
inline double kernel_distance(const TensorT<double>& fa, const TensorT<double>& fb) {
    detail::check_feature_pair(fa, fb, "kernel_distance");
    auto a = detail::feature_map(fa);
    auto b = detail::feature_map(fb);
    const double d = fa.dim(1);
    const double m = fa.dim(0), n = fb.dim(0);

    auto kernel = [&](const Eigen::MatrixXd& g) {
        return ((g.array() / d) + 1.0).cube();
    };
    Eigen::ArrayXXd kaa = kernel(a * a.transpose());
    Eigen::ArrayXXd kbb = kernel(b * b.transpose());
    Eigen::ArrayXXd kab = kernel(a * b.transpose());
    const double taa = (kaa.sum() - kaa.matrix().trace()) / (m * (m - 1));
    const double tbb = (kbb.sum() - kbb.matrix().trace()) / (n * (n - 1));
    return taa + tbb - 2.0 * kab.mean();
}

// ---------------------------------------------------------------------------
// mask agreement
// ---------------------------------------------------------------------------

// mean over part classes of |pred ∩ gt| / |pred ∪ gt|; classes absent from
// both masks are skipped, and two all-empty masks count as a perfect match
inline double miou(const SemanticMask& pred, const SemanticMask& gt) {
    if (pred.parts != gt.parts || pred.h != gt.h || pred.w != gt.w)
        throw std::invalid_argument("miou: mask geometry differs");
    double acc = 0;
    int counted = 0;
    for (int c = 0; c < pred.parts; ++c) {
        long inter = 0, uni = 0;
        for (int y = 0; y < pred.h; ++y)
            for (int x = 0; x < pred.w; ++x) {
                const bool p = pred.at(c, y, x) != 0, g = gt.at(c, y, x) != 0;
                inter += p && g;
                uni += p || g;
            }
        if (uni == 0) continue;
        acc += double(inter) / double(uni);
        ++counted;
    }
    return counted == 0 ? 1.0 : acc / counted;
}

// fraction of pixels whose label (background = 0, part c = c+1) agrees
inline double mask_pixel_accuracy(const SemanticMask& pred, const SemanticMask& gt) {
    if (pred.parts != gt.parts || pred.h != gt.h || pred.w != gt.w)
        throw std::invalid_argument("mask_pixel_accuracy: mask geometry differs");
    long hits = 0;
    for (int y = 0; y < pred.h; ++y)
        for (int x = 0; x < pred.w; ++x) {
            int lp = 0, lg = 0;
            for (int c = 0; c < pred.parts; ++c) {
                if (pred.at(c, y, x)) lp = c + 1;
                if (gt.at(c, y, x)) lg = c + 1;
            }
            hits += lp == lg;
        }
    return double(hits) / double(pred.h * pred.w);
}

// ---------------------------------------------------------------------------
// toy networks standing in for the pretrained extractors
// ---------------------------------------------------------------------------

// three stride-2 convs, global mean pool for a 64-d penultimate feature,
// linear head to per-attribute logits
template <class Real>
struct ClassifierT {
    Conv2dT<Real> c1, c2, c3;
    LinearT<Real> head;
    int attr_count = 8;

    ClassifierT() = default;
    ClassifierT(int attrs, Rng& rng)
        : c1("clf.c1", 3, 16, 3, 2, 1, rng),
          c2("clf.c2", 16, 32, 3, 2, 1, rng),
          c3("clf.c3", 32, 64, 3, 2, 1, rng),
          head("clf.head", 64, attrs, rng),
          attr_count(attrs) {}

    Var features(TapeT<Real>& tp, Var images) {
        const auto& s = tp.val(images);
        if (s.ndim() != 4 || s.dim(1) != 3)
            throw std::invalid_argument("classifier: expected (N,3,H,W) images");
        Var h = tp.silu(c1.fwd(tp, images));
        h = tp.silu(c2.fwd(tp, h));
        h = tp.silu(c3.fwd(tp, h));
        return tp.gap(h);  // (N, 64)
    }

    Var logits(TapeT<Real>& tp, Var images) { return head.fwd(tp, features(tp, images)); }

    TensorT<Real> features_value(const TensorT<Real>& images) {
        TapeT<Real> tp(false);
        return tp.val(features(tp, tp.input(images)));
    }

    TensorT<Real> logits_value(const TensorT<Real>& images) {
        TapeT<Real> tp(false);
        return tp.val(logits(tp, tp.input(images)));
    }

    void collect(std::vector<ParamT<Real>*>& out) {
        c1.collect(out);
        c2.collect(out);
        c3.collect(out);
        head.collect(out);
    }
};

// full-resolution conv stack ending in per-pixel logits over background+parts
template <class Real>
struct SegmenterT {
    Conv2dT<Real> s1, s2, s3, out;
    int parts = 6;

    SegmenterT() = default;
    SegmenterT(int parts_, Rng& rng)
        : s1("seg.s1", 3, 32, 3, 1, 1, rng),
          s2("seg.s2", 32, 32, 3, 1, 1, rng),
          s3("seg.s3", 32, 32, 3, 1, 1, rng),
          out("seg.out", 32, parts_ + 1, 1, 1, 0, rng),
          parts(parts_) {}

    Var logits(TapeT<Real>& tp, Var images) {
        const auto& s = tp.val(images);
        if (s.ndim() != 4 || s.dim(1) != 3)
            throw std::invalid_argument("segmenter: expected (N,3,H,W) images");
        Var h = tp.silu(s1.fwd(tp, images));
        h = tp.silu(s2.fwd(tp, h));
        h = tp.silu(s3.fwd(tp, h));
        return out.fwd(tp, h);  // (N, parts+1, H, W)
    }

    // argmax labels, flat (N*H*W), background = 0
    std::vector<int> predict_labels(const TensorT<Real>& images) {
        TapeT<Real> tp(false);
        const auto lg = tp.val(logits(tp, tp.input(images)));
        const int n = lg.dim(0), k = lg.dim(1), hw = lg.dim(2) * lg.dim(3);
        std::vector<int> labels((std::size_t)n * hw);
        for (int i = 0; i < n; ++i)
            for (int p = 0; p < hw; ++p) {
                int best = 0;
                Real bv = lg[((std::size_t)i * k) * hw + p];
                for (int c = 1; c < k; ++c) {
                    const Real v = lg[((std::size_t)i * k + c) * hw + p];
                    if (v > bv) {
                        bv = v;
                        best = c;
                    }
                }
                labels[(std::size_t)i * hw + p] = best;
            }
        return labels;
    }

    SemanticMask predict_mask(const TensorT<Real>& image_1chw) {
        if (image_1chw.ndim() != 4 || image_1chw.dim(0) != 1)
            throw std::invalid_argument("segmenter: predict_mask expects one (1,3,H,W) image");
        const int h = image_1chw.dim(2), w = image_1chw.dim(3);
        auto labels = predict_labels(image_1chw);
        SemanticMask m(parts, h, w);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const int l = labels[(std::size_t)y * w + x];
                if (l > 0) m.at(l - 1, y, x) = 1;
            }
        return m;
    }

    void collect(std::vector<ParamT<Real>*>& out_) {
        s1.collect(out_);
        s2.collect(out_);
        s3.collect(out_);
        out.collect(out_);
    }
};

// ---------------------------------------------------------------------------
// condition fidelity and diversity
// ---------------------------------------------------------------------------

template <class Real>
inline void check_binary_attrs_eval(const TensorT<Real>& a) {
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i] != Real(0) && a[i] != Real(1))
            throw std::invalid_argument("attribute_accuracy: attributes must be 0 or 1");
}

// mean per-bit agreement of thresholded classifier outputs (sigmoid > 0.5,
// i.e. logit > 0) with the conditioning attributes
template <class Real>
inline double attribute_accuracy(ClassifierT<Real>& clf, const TensorT<Real>& images,
                                 const TensorT<Real>& attrs) {
    if (images.ndim() != 4 || attrs.ndim() != 2 || images.dim(0) != attrs.dim(0))
        throw std::invalid_argument("attribute_accuracy: image and attribute counts differ");
    check_binary_attrs_eval(attrs);
    auto lg = clf.logits_value(images);
    if (lg.dim(1) != attrs.dim(1))
        throw std::invalid_argument("attribute_accuracy: classifier width != attribute count");
    long hits = 0;
    for (std::size_t i = 0; i < lg.size(); ++i)
        hits += (lg[i] > Real(0)) == (attrs[i] != Real(0));
    return double(hits) / double(lg.size());
}

// mean pairwise euclidean distance between unit-normalized feature rows;
// zero exactly when all rows coincide
inline double feature_diversity(const TensorT<double>& feats) {
    if (feats.ndim() != 2 || feats.dim(0) < 2)
        throw std::invalid_argument("feature_diversity: need an (N,D) matrix with N >= 2");
    const int n = feats.dim(0), d = feats.dim(1);
    std::vector<double> unit((std::size_t)n * d);
    for (int i = 0; i < n; ++i) {
        double norm = 0;
        for (int j = 0; j < d; ++j) norm += feats[(std::size_t)i * d + j] * feats[(std::size_t)i * d + j];
        norm = std::sqrt(norm);
        const double inv = norm > 0 ? 1.0 / norm : 0.0;
        for (int j = 0; j < d; ++j) unit[(std::size_t)i * d + j] = feats[(std::size_t)i * d + j] * inv;
    }
    double acc = 0;
    int pairs = 0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            double s = 0;
            for (int k = 0; k < d; ++k) {
                const double diff = unit[(std::size_t)i * d + k] - unit[(std::size_t)j * d + k];
                s += diff * diff;
            }
            acc += std::sqrt(s);
            ++pairs;
        }
    return acc / pairs;
}

// Draws n images for one fixed condition and scores their spread in the
// extractor's normalized feature space. Only meaningful for a stochastic
// sampler, so a deterministic eta is rejected.
template <class Real>
inline double diversity_lpips(const std::function<TensorT<Real>()>& draw_image, int n,
                              double eta, ClassifierT<Real>& extractor) {
    if (eta <= 0.0)
        throw std::invalid_argument("diversity_lpips: eta must be positive (stochastic sampler)");
    if (n < 2) throw std::invalid_argument("diversity_lpips: need n >= 2 samples");
    TensorT<Real> batch;
    for (int i = 0; i < n; ++i) {
        TensorT<Real> img = draw_image();
        if (img.ndim() != 3 || img.dim(0) != 3)
            throw std::invalid_argument("diversity_lpips: sampler must yield (3,H,W) images");
        if (i == 0) batch = TensorT<Real>({n, img.dim(0), img.dim(1), img.dim(2)});
        if ((std::size_t)n * img.size() != batch.size())
            throw std::invalid_argument("diversity_lpips: sampler changed image geometry");
        std::copy(img.data(), img.data() + img.size(), batch.data() + (std::size_t)i * img.size());
    }
    return feature_diversity(extractor.features_value(batch).template cast<double>());
}

// ---------------------------------------------------------------------------
// report plumbing
// ---------------------------------------------------------------------------

struct EvalReport {
    double fid = 0, kid = 0;
    double attr_acc = 0, mask_acc = 0, miou = 0;
    double lpips_mean = 0;
    int n = 0;

    void validate() const {
        auto frac = [](double v, const char* who) {
            if (!(v >= 0.0 && v <= 1.0))
                throw std::invalid_argument(std::string("eval report: ") + who +
                                            " must lie in [0,1]");
        };
        if (!(fid >= 0.0)) throw std::invalid_argument("eval report: fid must be >= 0");
        frac(attr_acc, "attr_acc");
        frac(mask_acc, "mask_acc");
        frac(miou, "miou");
        if (n <= 0) throw std::invalid_argument("eval report: n must be positive");
    }

    static std::string csv_header() {
        return "n,fid,kid,attr_acc,mask_acc,miou,lpips_mean";
    }

    std::string csv_row() const {
        std::ostringstream os;
        os.precision(10);
        os << n << ',' << fid << ',' << kid << ',' << attr_acc << ',' << mask_acc << ','
           << miou << ',' << lpips_mean;
        return os.str();
    }
};

// ---------------------------------------------------------------------------
// training loops for the toy extractors
// ---------------------------------------------------------------------------

template <class Real>
inline double train_classifier(ClassifierT<Real>& clf, const std::vector<SamplePair>& data,
                               int epochs, int batch, double lr, Rng& rng) {
    if (data.empty()) throw std::invalid_argument("train_classifier: empty dataset");
    std::vector<ParamT<Real>*> ps;
    clf.collect(ps);
    AdamT<Real> opt;
    opt.lr = lr;
    std::vector<int> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    double epoch_loss = 0;
    for (int e = 0; e < epochs; ++e) {
        rng.shuffle(order);
        epoch_loss = 0;
        int batches = 0;
        for (std::size_t at = 0; at < order.size(); at += batch) {
            std::vector<int> which(order.begin() + at,
                                   order.begin() + std::min(order.size(), at + batch));
            auto images = stack_images<Real>(data, which);
            auto attrs = stack_attrs<Real>(data, which);
            opt.zero_grad(ps);
            TapeT<Real> tp;
            Var loss = tp.bce_logits_mean(clf.logits(tp, tp.input(images)), attrs);
            tp.backward(loss);
            opt.step(ps);
            epoch_loss += tp.val(loss)[0];
            ++batches;
        }
        epoch_loss /= batches;
    }
    return epoch_loss;
}

template <class Real>
inline double train_segmenter(SegmenterT<Real>& seg, const std::vector<SamplePair>& data,
                              int epochs, int batch, double lr, Rng& rng) {
    if (data.empty()) throw std::invalid_argument("train_segmenter: empty dataset");
    std::vector<ParamT<Real>*> ps;
    seg.collect(ps);
    AdamT<Real> opt;
    opt.lr = lr;
    std::vector<int> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    double epoch_loss = 0;
    for (int e = 0; e < epochs; ++e) {
        rng.shuffle(order);
        epoch_loss = 0;
        int batches = 0;
        for (std::size_t at = 0; at < order.size(); at += batch) {
            std::vector<int> which(order.begin() + at,
                                   order.begin() + std::min(order.size(), at + batch));
            auto images = stack_images<Real>(data, which);
            auto labels = stack_mask_labels(data, which);
            opt.zero_grad(ps);
            TapeT<Real> tp;
            Var loss = tp.ce_pixel_mean(seg.logits(tp, tp.input(images)), labels);
            tp.backward(loss);
            opt.step(ps);
            epoch_loss += tp.val(loss)[0];
            ++batches;
        }
        epoch_loss /= batches;
    }
    return epoch_loss;
}

}  // namespace ldlab
