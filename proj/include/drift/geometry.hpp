#ifndef DRIFT_GEOMETRY_HPP
#define DRIFT_GEOMETRY_HPP

// Internal geometry of a single embedding cloud: isotropy (effective rank, partition
// function ratio) and clustering quality (k-means, silhouette, ARI, NMI).

#include "drift/corpus_io.hpp"
#include "drift/detail/numeric.hpp"
#include "drift/error.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <vector>

namespace drift {

/// exp of the Shannon entropy of the normalized singular values of the centered cloud.
/// Singular values below 1e-12·σ₁ are treated as zero.
template <typename D>
double effective_rank(const Eigen::MatrixBase<D>& x) {
    Matrix xc = detail::centered(x);
    if (xc.size() == 0 || xc.squaredNorm() == 0.0) throw DegenerateInput("effective_rank: zero matrix");
    Eigen::BDCSVD<Matrix> svd(xc);
    const Vector& s = svd.singularValues();
    const double cutoff = 1e-12 * s(0);
    double total = 0.0;
    for (Eigen::Index i = 0; i < s.size(); ++i)
        if (s(i) > cutoff) total += s(i);
    double entropy = 0.0;
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        if (s(i) <= cutoff) continue;
        const double p = s(i) / total;
        entropy -= p * std::log(p);
    }
    return std::exp(entropy);
}

/// min Z(c) / max Z(c) with Z(c) = Σᵢ exp(cᵀwᵢ), c ranging over the unit eigenvectors of
/// XᵀX and their negations. Rows are used as given (no centering).
template <typename D>
double partition_isotropy(const Eigen::MatrixBase<D>& x) {
    Matrix w = x.template cast<double>();
    if (w.size() == 0 || w.squaredNorm() == 0.0) throw DegenerateInput("partition_isotropy: zero matrix");
    Eigen::SelfAdjointEigenSolver<Matrix> eig(w.transpose() * w);
    if (eig.info() != Eigen::Success) throw DegenerateInput("partition_isotropy: eigendecomposition failed");
    Matrix proj = w * eig.eigenvectors(); // n x d, column j = projections onto eigenvector j

    auto log_sum_exp = [](const auto& v) {
        const double m = v.maxCoeff();
        return m + std::log((v.array() - m).exp().sum());
    };
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < proj.cols(); ++j) {
        for (double sign : {1.0, -1.0}) {
            Vector s = sign * proj.col(j);
            const double lz = log_sum_exp(s);
            lo = std::min(lo, lz);
            hi = std::max(hi, lz);
        }
    }
    return std::exp(lo - hi);
}

struct KMeansOptions {
    int restarts = 10;
    int max_iter = 300;
    double tol = 1e-6; // max centroid movement
};

struct KMeansResult {
    std::vector<int> assignment;
    Matrix centroids;
    double inertia = 0.0;
    int iterations = 0;
};

namespace detail {

inline int nearest_centroid(const Matrix& data, Eigen::Index row, const Matrix& centroids, double& best_d2) {
    int best = 0;
    best_d2 = std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
        const double d2 = (data.row(row) - centroids.row(c)).squaredNorm();
        if (d2 < best_d2) {
            best_d2 = d2;
            best = static_cast<int>(c);
        }
    }
    return best;
}

inline Matrix kmeanspp_init(const Matrix& data, int k, std::mt19937_64& rng) {
    const Eigen::Index n = data.rows();
    Matrix centers(k, data.cols());
    std::vector<char> chosen(static_cast<std::size_t>(n), 0);
    std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
    Eigen::Index first = pick(rng);
    centers.row(0) = data.row(first);
    chosen[static_cast<std::size_t>(first)] = 1;
    Vector d2(n);
    for (Eigen::Index i = 0; i < n; ++i) d2(i) = (data.row(i) - centers.row(0)).squaredNorm();
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int c = 1; c < k; ++c) {
        const double total = d2.sum();
        Eigen::Index next = -1;
        if (total > 0.0) {
            double target = unit(rng) * total;
            for (Eigen::Index i = 0; i < n; ++i) {
                if (d2(i) <= 0.0) continue;
                next = i;
                target -= d2(i);
                if (target < 0.0) break;
            }
        } else {
            // every remaining point coincides with a center; take the first unused index
            for (Eigen::Index i = 0; i < n && next < 0; ++i)
                if (!chosen[static_cast<std::size_t>(i)]) next = i;
        }
        centers.row(c) = data.row(next);
        chosen[static_cast<std::size_t>(next)] = 1;
        for (Eigen::Index i = 0; i < n; ++i) d2(i) = std::min(d2(i), (data.row(i) - centers.row(c)).squaredNorm());
    }
    return centers;
}

inline KMeansResult lloyd(const Matrix& data, Matrix centers, const KMeansOptions& opt) {
    const Eigen::Index n = data.rows();
    const int k = static_cast<int>(centers.rows());
    KMeansResult res;
    res.assignment.assign(static_cast<std::size_t>(n), 0);
    Vector dist2(n);
    for (int it = 1; it <= opt.max_iter; ++it) {
        res.iterations = it;
        std::vector<int> counts(static_cast<std::size_t>(k), 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            double d2;
            res.assignment[static_cast<std::size_t>(i)] = nearest_centroid(data, i, centers, d2);
            dist2(i) = d2;
            ++counts[static_cast<std::size_t>(res.assignment[static_cast<std::size_t>(i)])];
        }
        // Empty clusters take the point farthest from its current centroid.
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<std::size_t>(c)] > 0) continue;
            Eigen::Index far = -1;
            for (Eigen::Index i = 0; i < n; ++i) {
                if (counts[static_cast<std::size_t>(res.assignment[static_cast<std::size_t>(i)])] < 2) continue;
                if (far < 0 || dist2(i) > dist2(far)) far = i;
            }
            if (far < 0) break;
            --counts[static_cast<std::size_t>(res.assignment[static_cast<std::size_t>(far)])];
            res.assignment[static_cast<std::size_t>(far)] = c;
            counts[static_cast<std::size_t>(c)] = 1;
            dist2(far) = 0.0;
        }
        Matrix next = Matrix::Zero(k, data.cols());
        for (Eigen::Index i = 0; i < n; ++i) next.row(res.assignment[static_cast<std::size_t>(i)]) += data.row(i);
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<std::size_t>(c)] > 0) next.row(c) /= counts[static_cast<std::size_t>(c)];
            else next.row(c) = centers.row(c);
        }
        const double moved = (next - centers).rowwise().norm().maxCoeff();
        centers = std::move(next);
        if (moved < opt.tol) break;
    }
    res.inertia = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
        res.inertia += (data.row(i) - centers.row(res.assignment[static_cast<std::size_t>(i)])).squaredNorm();
    res.centroids = std::move(centers);
    return res;
}

} // namespace detail

/// k-means++ seeded Lloyd iterations with restarts; the lowest-inertia restart wins
/// (earliest restart on ties). Restart r draws from its own stream derived from (seed, r).
template <typename D>
KMeansResult kmeans(const Eigen::MatrixBase<D>& x, int k, std::uint64_t seed, const KMeansOptions& opt = {}) {
    const Matrix data = x.template cast<double>();
    if (k < 2 || k > data.rows())
        throw ValidationError("kmeans: k=" + std::to_string(k) + " outside [2, " + std::to_string(data.rows()) + "]");
    std::optional<KMeansResult> best;
    for (int r = 0; r < std::max(1, opt.restarts); ++r) {
        std::mt19937_64 rng(detail::derive_seed(seed, static_cast<std::uint64_t>(r)));
        auto res = detail::lloyd(data, detail::kmeanspp_init(data, k, rng), opt);
        if (!best || res.inertia < best->inertia) best = std::move(res);
    }
    return std::move(*best);
}

struct SilhouetteResult {
    double score = 0.0;
    std::size_t n_used = 0;
    bool subsampled = false;
};

/// Mean silhouette width with Euclidean distances. Above `cap` points a seeded subsample
/// of size `cap` is scored. Singleton clusters contribute 0.
template <typename D>
SilhouetteResult silhouette(const Eigen::MatrixBase<D>& x, std::span<const int> assignment, std::uint64_t seed = 0,
                            std::size_t cap = 2000) {
    const Matrix all = x.template cast<double>();
    if (static_cast<std::size_t>(all.rows()) != assignment.size())
        throw ValidationError("silhouette: assignment length differs from row count");
    std::vector<std::size_t> rows(assignment.size());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    SilhouetteResult out;
    if (rows.size() > cap) {
        std::mt19937_64 rng(detail::derive_seed(seed, 0x5111));
        std::shuffle(rows.begin(), rows.end(), rng);
        rows.resize(cap);
        std::sort(rows.begin(), rows.end());
        out.subsampled = true;
    }
    std::map<int, int> dense;
    for (auto r : rows) dense.emplace(assignment[r], 0);
    if (dense.size() < 2) throw DegenerateInput("silhouette: need at least 2 clusters");
    int next = 0;
    for (auto& [label, idx] : dense) idx = next++;
    const std::size_t m = rows.size();
    const int k = next;
    std::vector<int> lab(m);
    std::vector<int> size(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < m; ++i) {
        lab[i] = dense[assignment[rows[i]]];
        ++size[static_cast<std::size_t>(lab[i])];
    }
    double total = 0.0;
    std::vector<double> sums(static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < m; ++i) {
        std::fill(sums.begin(), sums.end(), 0.0);
        for (std::size_t j = 0; j < m; ++j) {
            if (i == j) continue;
            sums[static_cast<std::size_t>(lab[j])] +=
                (all.row(static_cast<Eigen::Index>(rows[i])) - all.row(static_cast<Eigen::Index>(rows[j]))).norm();
        }
        const int own = lab[i];
        if (size[static_cast<std::size_t>(own)] == 1) continue;
        const double a = sums[static_cast<std::size_t>(own)] / (size[static_cast<std::size_t>(own)] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (int c = 0; c < k; ++c)
            if (c != own) b = std::min(b, sums[static_cast<std::size_t>(c)] / size[static_cast<std::size_t>(c)]);
        const double denom = std::max(a, b);
        if (denom > 0.0) total += (b - a) / denom;
    }
    out.score = total / static_cast<double>(m);
    out.n_used = m;
    return out;
}

/// Index of the first maximum.
inline std::size_t first_argmax(std::span<const double> scores) {
    if (scores.empty()) throw ValidationError("first_argmax: empty range");
    std::size_t best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i)
        if (scores[i] > scores[best]) best = i;
    return best;
}

struct OptimalK {
    int k = 2;
    double silhouette = 0.0;
    int k_min = 2;
    std::vector<double> scores; // scores[i] belongs to k_min + i
    std::size_t silhouette_n_used = 0;
    bool silhouette_subsampled = false;
};

/// Silhouette-optimal k over [k_min, min(k_max, n-1)]; ties go to the smallest k.
template <typename D>
OptimalK optimal_k(const Eigen::MatrixBase<D>& x, std::uint64_t seed, int k_min = 2, int k_max = 12,
                   const KMeansOptions& opt = {}, std::size_t silhouette_cap = 2000) {
    const Matrix data = x.template cast<double>();
    if (data.rows() < 3) throw DegenerateInput("optimal_k: need at least 3 samples");
    k_max = std::min<int>(k_max, static_cast<int>(data.rows()) - 1);
    if (k_min < 2 || k_max < k_min) throw ValidationError("optimal_k: empty k range");
    OptimalK out;
    out.k_min = k_min;
    for (int k = k_min; k <= k_max; ++k) {
        auto km = kmeans(data, k, seed, opt);
        auto s = silhouette(data, km.assignment, seed, silhouette_cap);
        out.scores.push_back(s.score);
        out.silhouette_n_used = s.n_used;
        out.silhouette_subsampled = s.subsampled;
    }
    const auto best = first_argmax(out.scores);
    out.k = k_min + static_cast<int>(best);
    out.silhouette = out.scores[best];
    return out;
}

namespace detail {

struct Contingency {
    std::vector<std::vector<double>> table;
    std::vector<double> rows, cols;
    double n = 0.0;
};

inline Contingency contingency(std::span<const int> a, std::span<const int> b) {
    if (a.size() != b.size()) throw ValidationError("labelings differ in length");
    std::map<int, std::size_t> ia, ib;
    for (int v : a) ia.emplace(v, 0);
    for (int v : b) ib.emplace(v, 0);
    std::size_t i = 0;
    for (auto& [v, idx] : ia) idx = i++;
    i = 0;
    for (auto& [v, idx] : ib) idx = i++;
    Contingency c;
    c.table.assign(ia.size(), std::vector<double>(ib.size(), 0.0));
    c.rows.assign(ia.size(), 0.0);
    c.cols.assign(ib.size(), 0.0);
    for (std::size_t k = 0; k < a.size(); ++k) {
        const auto r = ia[a[k]];
        const auto s = ib[b[k]];
        c.table[r][s] += 1.0;
        c.rows[r] += 1.0;
        c.cols[s] += 1.0;
    }
    c.n = static_cast<double>(a.size());
    return c;
}

inline double choose2(double x) { return x * (x - 1.0) / 2.0; }

} // namespace detail

/// Adjusted Rand index from the contingency table.
inline double ari(std::span<const int> a, std::span<const int> b) {
    if (a.size() != b.size()) throw ValidationError("ari: labelings differ in length");
    if (a.size() < 2) throw DegenerateInput("ari: need at least 2 samples");
    auto c = detail::contingency(a, b);
    double index = 0.0, sum_a = 0.0, sum_b = 0.0;
    for (const auto& row : c.table)
        for (double v : row) index += detail::choose2(v);
    for (double v : c.rows) sum_a += detail::choose2(v);
    for (double v : c.cols) sum_b += detail::choose2(v);
    const double expected = sum_a * sum_b / detail::choose2(c.n);
    const double max_index = 0.5 * (sum_a + sum_b);
    if (max_index == expected) return 1.0; // both all-one-cluster or both all-singletons
    return (index - expected) / (max_index - expected);
}

/// Normalized mutual information I(a;b)/sqrt(H(a)H(b)), natural logs.
inline double nmi(std::span<const int> a, std::span<const int> b) {
    if (a.size() != b.size()) throw ValidationError("nmi: labelings differ in length");
    if (a.empty()) throw DegenerateInput("nmi: empty labelings");
    auto c = detail::contingency(a, b);
    auto entropy = [&](const std::vector<double>& counts) {
        double h = 0.0;
        for (double v : counts)
            if (v > 0) h -= v / c.n * std::log(v / c.n);
        return h;
    };
    const double ha = entropy(c.rows);
    const double hb = entropy(c.cols);
    if (ha == 0.0 && hb == 0.0) return 1.0;
    if (ha == 0.0 || hb == 0.0) return 0.0;
    double mi = 0.0;
    for (std::size_t i = 0; i < c.rows.size(); ++i)
        for (std::size_t j = 0; j < c.cols.size(); ++j) {
            const double v = c.table[i][j];
            if (v > 0) mi += v / c.n * std::log(c.n * v / (c.rows[i] * c.cols[j]));
        }
    return std::clamp(mi / std::sqrt(ha * hb), 0.0, 1.0);
}

struct IsotropyReport {
    double effective_rank = 0.0;
    double partition_isotropy = 0.0;
};

struct ClusteringReport {
    int optimal_k = 2;
    double silhouette_at_optimal = 0.0;
    std::vector<double> silhouette_by_k;
    std::size_t silhouette_n_used = 0;
    bool silhouette_subsampled = false;
    std::optional<double> ari_vs_labels;
    std::optional<double> nmi_vs_labels;
    int k_used_for_label_metrics = 0; // 0 when no labels
};

struct GeometryReport {
    IsotropyReport isotropy;
    ClusteringReport clustering;
};

struct GeometryOptions {
    int k_min = 2;
    int k_max = 12;
    std::size_t silhouette_cap = 2000;
    KMeansOptions kmeans;
};

/// Isotropy and clustering report of one cloud. With labels, k-means at k = number of
/// classes is scored against them.
template <typename D>
GeometryReport geometry_report(const Eigen::MatrixBase<D>& x, const std::vector<int>* labels, int n_classes,
                               std::uint64_t seed, const GeometryOptions& opt = {}) {
    const Matrix data = x.template cast<double>();
    GeometryReport rep;
    rep.isotropy.effective_rank = effective_rank(data);
    rep.isotropy.partition_isotropy = partition_isotropy(data);
    auto best = optimal_k(data, seed, opt.k_min, opt.k_max, opt.kmeans, opt.silhouette_cap);
    rep.clustering.optimal_k = best.k;
    rep.clustering.silhouette_at_optimal = best.silhouette;
    rep.clustering.silhouette_by_k = best.scores;
    rep.clustering.silhouette_n_used = best.silhouette_n_used;
    rep.clustering.silhouette_subsampled = best.silhouette_subsampled;
    if (labels) {
        if (n_classes < 2) throw ValidationError("geometry_report: labels need at least 2 classes");
        auto km = kmeans(data, n_classes, seed, opt.kmeans);
        rep.clustering.ari_vs_labels = ari(km.assignment, *labels);
        rep.clustering.nmi_vs_labels = nmi(km.assignment, *labels);
        rep.clustering.k_used_for_label_metrics = n_classes;
    }
    return rep;
}

/// ft − base differences. Label-conditioned deltas are empty when labels were absent.
struct GeometryFeatures {
    double effective_rank_delta = 0.0;
    double partition_isotropy_delta = 0.0;
    double silhouette_delta = 0.0;
    std::optional<double> ari_delta;
    std::optional<double> nmi_delta;
};

struct GeometryComparison {
    GeometryReport base;
    GeometryReport ft;
    GeometryFeatures deltas;
};

inline GeometryComparison geometry_deltas(const EmbeddingCloud& base, const EmbeddingCloud& ft,
                                          const std::optional<LabelTable>& labels, std::uint64_t seed,
                                          const GeometryOptions& opt = {}) {
    if (base.sample_ids != ft.sample_ids) throw ValidationError("geometry_deltas: base/ft sample ids differ");
    std::vector<int> codes;
    int n_classes = 0;
    if (labels) {
        codes = labels->encode(base.sample_ids);
        n_classes = static_cast<int>(labels->class_set.size());
    }
    const std::vector<int>* lab = labels ? &codes : nullptr;
    GeometryComparison out;
    out.base = geometry_report(base.to_double(), lab, n_classes, seed, opt);
    out.ft = geometry_report(ft.to_double(), lab, n_classes, seed, opt);
    auto& d = out.deltas;
    d.effective_rank_delta = out.ft.isotropy.effective_rank - out.base.isotropy.effective_rank;
    d.partition_isotropy_delta = out.ft.isotropy.partition_isotropy - out.base.isotropy.partition_isotropy;
    d.silhouette_delta = out.ft.clustering.silhouette_at_optimal - out.base.clustering.silhouette_at_optimal;
    if (labels) {
        d.ari_delta = *out.ft.clustering.ari_vs_labels - *out.base.clustering.ari_vs_labels;
        d.nmi_delta = *out.ft.clustering.nmi_vs_labels - *out.base.clustering.nmi_vs_labels;
    }
    return out;
}

} // namespace drift

#endif
