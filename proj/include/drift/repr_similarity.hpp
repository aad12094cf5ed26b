#ifndef DRIFT_REPR_SIMILARITY_HPP
#define DRIFT_REPR_SIMILARITY_HPP

// Layer-wise similarity between base and fine-tuned embedding clouds: linear CKA,
// orthogonal Procrustes and RSA, and the layer-profile features derived from them.

#include "drift/corpus_io.hpp"
#include "drift/detail/numeric.hpp"
#include "drift/detail/parallel.hpp"
#include "drift/detail/stats.hpp"
#include "drift/error.hpp"

#include <Eigen/SVD>

#include <array>
#include <string>
#include <string_view>
#include <vector>

namespace drift {

/// Linear centered kernel alignment, ‖YcᵀXc‖²_F / (‖XcᵀXc‖_F ‖YcᵀYc‖_F).
/// Columns are centered internally; the two matrices may differ in width.
template <typename DX, typename DY>
double linear_cka(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DY>& y) {
    if (x.rows() != y.rows())
        throw ValidationError("linear_cka: row counts differ (" + std::to_string(x.rows()) + " vs " +
                              std::to_string(y.rows()) + ")");
    if (x.rows() < 3) throw DegenerateInput("linear_cka: need at least 3 samples");
    Matrix xc = detail::centered(x);
    Matrix yc = detail::centered(y);
    if (xc.squaredNorm() == 0.0 || yc.squaredNorm() == 0.0)
        throw DegenerateInput("linear_cka: matrix is zero after centering");

    double cross, self_x, self_y;
    if (xc.rows() < std::max(xc.cols(), yc.cols())) {
        // Gram form: cheaper when samples are fewer than features.
        Matrix kx = xc * xc.transpose();
        Matrix ky = yc * yc.transpose();
        cross = kx.cwiseProduct(ky).sum();
        self_x = kx.norm();
        self_y = ky.norm();
    } else {
        cross = (yc.transpose() * xc).squaredNorm();
        self_x = (xc.transpose() * xc).norm();
        self_y = (yc.transpose() * yc).norm();
    }
    return cross / (self_x * self_y);
}

struct ProcrustesResult {
    double similarity = 0.0; // nuclear norm of XᵀY after normalization, in [0,1]
    double distance = 0.0;   // ‖X̂Q − Ŷ‖_F = sqrt(2 − 2·similarity)
    Matrix rotation;         // orthogonal Q minimizing ‖X Q - Y‖_F
};

/// Orthogonal Procrustes after centering and scaling both clouds to unit Frobenius norm.
template <typename DX, typename DY>
ProcrustesResult procrustes_align(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DY>& y) {
    if (x.rows() != y.rows() || x.cols() != y.cols())
        throw ValidationError("procrustes_align: shapes differ (" + std::to_string(x.rows()) + "x" +
                              std::to_string(x.cols()) + " vs " + std::to_string(y.rows()) + "x" +
                              std::to_string(y.cols()) + ")");
    Matrix xc = detail::centered(x);
    Matrix yc = detail::centered(y);
    const double nx = xc.norm();
    const double ny = yc.norm();
    if (nx == 0.0 || ny == 0.0) throw DegenerateInput("procrustes_align: all rows equal");
    xc /= nx;
    yc /= ny;
    Matrix m = xc.transpose() * yc;
    Eigen::BDCSVD<Matrix> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    ProcrustesResult out;
    out.similarity = svd.singularValues().sum();
    out.rotation = svd.matrixU() * svd.matrixV().transpose();
    // Evaluated as a residual norm: sqrt(2 − 2s) loses half the digits when s is near 1.
    out.distance = (xc * out.rotation - yc).norm();
    return out;
}

enum class CorrelationKind { pearson, spearman };

/// Representational similarity: correlation of the strict upper triangles of the two
/// pairwise Euclidean distance matrices.
template <typename DX, typename DY>
double rsa(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DY>& y,
           CorrelationKind kind = CorrelationKind::pearson) {
    if (x.rows() != y.rows()) throw ValidationError("rsa: row counts differ");
    if (x.rows() < 4) throw DegenerateInput("rsa: need at least 4 samples");
    auto upper = [](const Matrix& m) {
        const Eigen::Index n = m.rows();
        std::vector<double> d;
        d.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = i + 1; j < n; ++j) d.push_back((m.row(i) - m.row(j)).norm());
        return d;
    };
    auto dx = upper(detail::centered(x));
    auto dy = upper(detail::centered(y));
    try {
        return kind == CorrelationKind::pearson ? detail::pearson(dx, dy) : detail::spearman(dx, dy);
    } catch (const DegenerateInput&) {
        throw DegenerateInput("rsa: constant distance vector");
    }
}

enum class SimilarityMetric { cka, procrustes, rsa, rsa_spearman };

inline SimilarityMetric parse_similarity_metric(std::string_view name) {
    if (name == "cka") return SimilarityMetric::cka;
    if (name == "procrustes" || name == "procrustes_similarity") return SimilarityMetric::procrustes;
    if (name == "rsa") return SimilarityMetric::rsa;
    if (name == "rsa_spearman") return SimilarityMetric::rsa_spearman;
    throw ValidationError("unknown similarity metric '" + std::string(name) + "'");
}

inline std::string metric_name(SimilarityMetric m) {
    switch (m) {
    case SimilarityMetric::cka: return "cka";
    case SimilarityMetric::procrustes: return "procrustes";
    case SimilarityMetric::rsa: return "rsa";
    case SimilarityMetric::rsa_spearman: return "rsa_spearman";
    }
    return "unknown";
}

template <typename DX, typename DY>
double similarity_score(SimilarityMetric metric, const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DY>& y) {
    switch (metric) {
    case SimilarityMetric::cka: return linear_cka(x, y);
    case SimilarityMetric::procrustes: return procrustes_align(x, y).similarity;
    case SimilarityMetric::rsa: return rsa(x, y, CorrelationKind::pearson);
    case SimilarityMetric::rsa_spearman: return rsa(x, y, CorrelationKind::spearman);
    }
    throw ValidationError("unknown similarity metric");
}

/// Maps a score onto the shared [0,1] "change" scale.
inline double change_from_score(SimilarityMetric metric, double score) {
    if (metric == SimilarityMetric::rsa || metric == SimilarityMetric::rsa_spearman) return (1.0 - score) / 2.0;
    return 1.0 - score;
}

struct LayerSimilarityProfile {
    SimilarityMetric metric = SimilarityMetric::cka;
    std::array<double, kLayerCount> scores{};
    std::array<double, kLayerCount> change{};
};

inline LayerSimilarityProfile layer_profile(const LayerStack& base, const LayerStack& ft, SimilarityMetric metric,
                                            int jobs = 1) {
    check_pair(base, ft);
    LayerSimilarityProfile profile;
    profile.metric = metric;
    detail::parallel_for(kLayerCount, jobs, [&](std::size_t l) {
        const int layer = static_cast<int>(l);
        try {
            Matrix x = base.layer(layer).to_double();
            Matrix y = ft.layer(layer).to_double();
            profile.scores[l] = similarity_score(metric, x, y);
        } catch (const DegenerateInput& e) {
            throw DegenerateInput("layer " + std::to_string(layer) + ": " + e.what());
        } catch (const ValidationError& e) {
            throw ValidationError("layer " + std::to_string(layer) + ": " + e.what());
        }
        profile.change[l] = change_from_score(metric, profile.scores[l]);
    });
    return profile;
}

inline LayerSimilarityProfile layer_profile(const LayerStack& base, const LayerStack& ft, std::string_view metric,
                                            int jobs = 1) {
    return layer_profile(base, ft, parse_similarity_metric(metric), jobs);
}

struct SimilarityFeatures {
    double max_change = 0.0;
    int argmax_layer = 1;
    double mean_change_layers_1_3 = 0.0;
    double final_layer_change = 0.0;
    double mean_change_all = 0.0;
};

/// Summary features of a change profile. Layer 0 is skipped for max/argmax/mean unless
/// include_layer0 is set; ties in max go to the lowest layer.
inline SimilarityFeatures similarity_features(const LayerSimilarityProfile& profile, bool include_layer0 = false) {
    const int first = include_layer0 ? 0 : 1;
    SimilarityFeatures f;
    f.argmax_layer = first;
    f.max_change = profile.change[static_cast<std::size_t>(first)];
    double total = 0.0;
    for (int l = first; l < kLayerCount; ++l) {
        const double c = profile.change[static_cast<std::size_t>(l)];
        if (!std::isfinite(c)) throw ValidationError("profile has non-finite change at layer " + std::to_string(l));
        if (c > f.max_change) {
            f.max_change = c;
            f.argmax_layer = l;
        }
        total += c;
    }
    f.mean_change_all = total / static_cast<double>(kLayerCount - first);
    f.mean_change_layers_1_3 = (profile.change[1] + profile.change[2] + profile.change[3]) / 3.0;
    f.final_layer_change = profile.change[kFinalLayer];
    return f;
}

} // namespace drift

#endif
