#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "sipa/common.hpp"

namespace sipa {

struct CosineScheduleParams {
    double eta_min = 0.0;
    double eta_max = 0.1;
    double t_max = 1.0;  // total epochs, >= 1
};

/// Cosine-annealed learning rate at epoch t_cur, monotone decay (no restarts).
inline double cosine_lr(double t_cur, const CosineScheduleParams& p) {
    if (p.t_max < 1.0) throw ValidationError("cosine_lr: t_max must be >= 1");
    if (p.eta_min > p.eta_max) throw ValidationError("cosine_lr: eta_min > eta_max");
    if (t_cur < 0.0 || t_cur > p.t_max) throw ValidationError("cosine_lr: t_cur out of [0, t_max]");
    return p.eta_min + 0.5 * (p.eta_max - p.eta_min) * (1.0 + std::cos(t_cur / p.t_max * M_PI));
}

/// Smoothed target: 1-eps on the true class, eps/(K-1) spread over the rest.
inline std::vector<double> label_smooth(int true_class, int num_classes, double eps) {
    if (num_classes < 2) throw ValidationError("label_smooth: need at least 2 classes");
    if (true_class < 0 || true_class >= num_classes) throw ValidationError("label_smooth: class index out of range");
    if (eps < 0.0 || eps >= 1.0) throw ValidationError("label_smooth: eps must be in [0, 1)");
    std::vector<double> dist(static_cast<size_t>(num_classes), eps / (num_classes - 1));
    dist[static_cast<size_t>(true_class)] = 1.0 - eps;
    return dist;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// f(x) = x * sigmoid(beta * x)
inline double swish(double x, double beta = 1.0) { return x * sigmoid(beta * x); }

/// Convex combination of two (input, target) pairs with the given lambda.
/// Sampling lambda from a Beta distribution is the caller's job (see Rng::beta).
inline std::pair<std::vector<double>, std::vector<double>> mixup(std::span<const double> x1,
                                                                 std::span<const double> y1,
                                                                 std::span<const double> x2,
                                                                 std::span<const double> y2,
                                                                 double lambda) {
    if (x1.size() != x2.size() || y1.size() != y2.size())
        throw ValidationError("mixup: shape mismatch between the two samples");
    std::pair<std::vector<double>, std::vector<double>> out;
    out.first.resize(x1.size());
    out.second.resize(y1.size());
    for (size_t j = 0; j < x1.size(); ++j) out.first[j] = lambda * x1[j] + (1.0 - lambda) * x2[j];
    for (size_t j = 0; j < y1.size(); ++j) out.second[j] = lambda * y1[j] + (1.0 - lambda) * y2[j];
    return out;
}

/// Dense H x W x C image, row-major with channels innermost.
struct Image {
    int h = 0, w = 0, c = 1;
    std::vector<double> data;

    double& at(int r, int col, int ch) { return data[(static_cast<size_t>(r) * w + col) * c + ch]; }
    double at(int r, int col, int ch) const { return data[(static_cast<size_t>(r) * w + col) * c + ch]; }
};

/// Nearest-neighbor upscale by an integer factor: out[r][c] = in[r/f][c/f].
inline Image nn_upscale(const Image& in, int factor) {
    if (factor < 1) throw ValidationError("nn_upscale: factor must be >= 1");
    Image out;
    out.h = in.h * factor;
    out.w = in.w * factor;
    out.c = in.c;
    out.data.resize(static_cast<size_t>(out.h) * out.w * out.c);
    for (int r = 0; r < out.h; ++r)
        for (int col = 0; col < out.w; ++col)
            for (int ch = 0; ch < out.c; ++ch) out.at(r, col, ch) = in.at(r / factor, col / factor, ch);
    return out;
}

}  // namespace sipa
