#include "cellpca/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "cellpca/errors.hpp"
#include "cellpca/initializer.hpp"
#include "cellpca/irls.hpp"
#include "cellpca/rng.hpp"
#include "cellpca/stats.hpp"

namespace cellpca {

std::string to_string(CovModel m) { return m == CovModel::A09 ? "a09" : "alyz"; }

std::string to_string(Scheme s) {
    switch (s) {
        case Scheme::None: return "none";
        case Scheme::Cellwise: return "cellwise";
        case Scheme::Rowwise: return "rowwise";
        case Scheme::Mixed: return "mixed";
    }
    return "?";
}

std::string to_string(Estimator e) {
    switch (e) {
        case Estimator::CPCA: return "CPCA";
        case Estimator::OnlyCell: return "Only-cell";
        case Estimator::OnlyRow: return "Only-row";
        case Estimator::CellPCA: return "cellPCA";
    }
    return "?";
}

Matrix a09_covariance(Eigen::Index p) {
    Matrix S(p, p);
    for (Eigen::Index j = 0; j < p; ++j)
        for (Eigen::Index k = 0; k < p; ++k) S(j, k) = std::pow(-0.9, std::abs(j - k));
    return S;
}

Matrix gen_a09(Eigen::Index n, Eigen::Index p, std::uint64_t seed) {
    Matrix L = Eigen::LLT<Matrix>(a09_covariance(p)).matrixL();
    Rng rng(seed);
    Matrix Z(n, p);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < p; ++j) Z(i, j) = rng.normal();
    return Z * L.transpose();
}

Vector alyz_spectrum(Eigen::Index p, bool strict) {
    Vector lam(p);
    if (p == 20) {
        lam(0) = 9.57;
        lam(1) = 6.70;
        lam(2) = 0.11;
        for (Eigen::Index k = 3; k < p; ++k) lam(k) = 0.10;
        return lam;
    }
    if (p == 200) {
        lam(0) = 104.88;
        lam(1) = 73.42;
        lam(2) = 0.11;
        for (Eigen::Index k = 3; k < p; ++k) lam(k) = 0.10;
        return lam;
    }
    if (strict)
        throw UnsupportedP("alyz_spectrum: calibrated spectra exist for p in {20, 200} only");
    // Extension: scale the two spikes with p, keep the flat tail.
    double s = static_cast<double>(p) / 20.0;
    lam(0) = 9.57 * s;
    lam(1) = 6.70 * s;
    lam(2) = 0.11;
    for (Eigen::Index k = 3; k < p; ++k) lam(k) = 0.10;
    return lam;
}

AlyzDraw gen_alyz(Eigen::Index n, Eigen::Index p, std::uint64_t seed, bool strict) {
    Vector lam = alyz_spectrum(p, strict);
    Rng rng(seed);
    Matrix G(p, p);
    for (Eigen::Index i = 0; i < p; ++i)
        for (Eigen::Index j = 0; j < p; ++j) G(i, j) = rng.normal();
    Eigen::HouseholderQR<Matrix> qr(G);
    Matrix O = qr.householderQ() * Matrix::Identity(p, p);
    // Fix the sign convention so the frame is a deterministic function of G.
    Matrix Rm = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Eigen::Index j = 0; j < p; ++j)
        if (Rm(j, j) < 0) O.col(j) = -O.col(j);

    AlyzDraw out;
    out.Sigma = O * lam.asDiagonal() * O.transpose();
    Matrix L = Eigen::LLT<Matrix>(out.Sigma).matrixL();
    Matrix Z(n, p);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < p; ++j) Z(i, j) = rng.normal();
    out.data = Z * L.transpose();
    return out;
}

namespace {

std::vector<Eigen::Index> sample_without_replacement(Rng& rng, Eigen::Index population,
                                                     Eigen::Index count) {
    // Partial Fisher-Yates over an index vector.
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(population));
    for (Eigen::Index i = 0; i < population; ++i) idx[static_cast<std::size_t>(i)] = i;
    for (Eigen::Index k = 0; k < count; ++k) {
        Eigen::Index pick = k + static_cast<Eigen::Index>(
                                    rng.below(static_cast<std::uint64_t>(population - k)));
        std::swap(idx[static_cast<std::size_t>(k)], idx[static_cast<std::size_t>(pick)]);
    }
    idx.resize(static_cast<std::size_t>(count));
    return idx;
}

Matrix top_eigvecs(const Matrix& Sigma, Eigen::Index k) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(Sigma);
    const Eigen::Index p = Sigma.rows();
    Matrix E(p, k);
    for (Eigen::Index c = 0; c < k; ++c) E.col(c) = eig.eigenvectors().col(p - 1 - c);
    return E;
}

}  // namespace

Contaminated contaminate(const Matrix& clean, const Matrix& Sigma, CovModel model, Scheme scheme,
                         Eigen::Index q, double gamma_c, double gamma_r, double cell_fraction,
                         double row_fraction, std::uint64_t seed) {
    const Eigen::Index n = clean.rows();
    const Eigen::Index p = clean.cols();
    if (row_fraction >= 0.5)
        throw FractionTooLarge("contaminate: rowwise fraction must stay below 50%");

    Contaminated out;
    out.data = clean;
    out.cell_outliers = MaskArray::Constant(n, p, false);
    out.row_outliers.assign(static_cast<std::size_t>(n), false);
    if (scheme == Scheme::None) return out;

    Rng rng(seed);

    if (scheme == Scheme::Rowwise || scheme == Scheme::Mixed) {
        Eigen::Index n_rows = static_cast<Eigen::Index>(row_fraction * static_cast<double>(n));
        Eigen::Index dir2 = (model == CovModel::A09) ? 2 : q;  // e3, or e_{q+1}
        Matrix E = top_eigvecs(Sigma, dir2 + 1);
        Vector mean = gamma_r * (E.col(0) + E.col(dir2));
        Matrix L = Eigen::LLT<Matrix>((Sigma / 1.5).eval()).matrixL();
        auto rows = sample_without_replacement(rng, n, n_rows);
        for (Eigen::Index i : rows) {
            Vector z(p);
            for (Eigen::Index j = 0; j < p; ++j) z(j) = rng.normal();
            out.data.row(i) = (mean + L * z).transpose();
            out.row_outliers[static_cast<std::size_t>(i)] = true;
        }
    }

    if (scheme == Scheme::Cellwise || scheme == Scheme::Mixed) {
        Eigen::Index n_cells =
            static_cast<Eigen::Index>(cell_fraction * static_cast<double>(n * p));
        auto cells = sample_without_replacement(rng, n * p, n_cells);
        for (Eigen::Index c : cells) {
            Eigen::Index i = c / p;
            Eigen::Index j = c % p;
            double shift = (model == CovModel::A09) ? gamma_c : gamma_c * std::sqrt(Sigma(j, j));
            out.data(i, j) += shift;
            out.cell_outliers(i, j) = true;
        }
    }
    return out;
}

MaskedMatrix inject_na(const Matrix& data, double fraction, std::uint64_t seed,
                       Eigen::Index min_col_obs, int max_retries) {
    const Eigen::Index n = data.rows();
    const Eigen::Index p = data.cols();
    if (fraction >= 0.5) throw FractionTooLarge("inject_na: fraction must stay below 50%");
    Eigen::Index count = static_cast<Eigen::Index>(fraction * static_cast<double>(n * p));

    Rng rng(seed);
    for (int attempt = 0; attempt < max_retries; ++attempt) {
        MaskArray mask = MaskArray::Constant(n, p, true);
        auto cells = sample_without_replacement(rng, n * p, count);
        for (Eigen::Index c : cells) mask(c / p, c % p) = false;

        bool ok = true;
        for (Eigen::Index i = 0; i < n && ok; ++i)
            if (!mask.row(i).any()) ok = false;
        for (Eigen::Index j = 0; j < p && ok; ++j)
            if (mask.col(j).count() < min_col_obs) ok = false;
        if (ok) return MaskedMatrix(data, mask);
    }
    throw RetriesExhausted("inject_na: could not place missing cells within row/column minimums");
}

double subspace_angle(const Matrix& V1, const Matrix& V2) {
    if (V1.cols() != V2.cols() || V1.rows() != V2.rows())
        throw RankMismatch("subspace_angle: shapes differ");
    auto check_rank = [](const Matrix& V) {
        Eigen::JacobiSVD<Matrix> svd(V);
        const auto& s = svd.singularValues();
        if (s(s.size() - 1) < 1e-10 * s(0))
            throw RankMismatch("subspace_angle: rank-deficient input");
    };
    check_rank(V1);
    check_rank(V2);
    Matrix Q1 = orth_basis(V1);
    Matrix Q2 = orth_basis(V2);
    Eigen::JacobiSVD<Matrix> svd(Q1.transpose() * Q2);
    double smin = svd.singularValues().minCoeff();
    return std::acos(std::min(std::max(smin, 0.0), 1.0));
}

double mse_clean(const Matrix& clean, const Matrix& predictions, const MaskArray& cell_outliers,
                 const std::vector<bool>& row_outliers, const MaskArray& observed) {
    const Eigen::Index n = clean.rows();
    const Eigen::Index p = clean.cols();
    CompensatedSum sum;
    Eigen::Index count = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (row_outliers[static_cast<std::size_t>(i)]) continue;
        for (Eigen::Index j = 0; j < p; ++j) {
            if (!observed(i, j) || cell_outliers(i, j)) continue;
            double d = clean(i, j) - predictions(i, j);
            sum.add(d * d);
            ++count;
        }
    }
    if (count == 0) throw EmptyCleanSet("mse_clean: no clean observed cells remain");
    return sum.value() / static_cast<double>(count);
}

EstimatorFit run_estimator(Estimator which, const MaskedMatrix& X, Eigen::Index q) {
    EstimatorFit out;
    if (which == Estimator::CPCA) {
        InitialFit f = iterative_classical_pca(X, q);
        out.V = f.V0;
        out.Xhat = f.U0 * f.V0.transpose();
        out.Xhat.rowwise() += f.mu0.transpose();
        return out;
    }
    IrlsOptions opts;
    if (which == Estimator::OnlyCell) opts = IrlsOptions::only_cell();
    if (which == Estimator::OnlyRow) opts = IrlsOptions::only_row();
    SubspaceFit f = fit(X, q, opts);
    out.V = orth_basis(f.V);
    out.Xhat = f.fitted();
    return out;
}

namespace {

double coupled_gamma_r(const SimConfig& cfg, double gamma_c) {
    return (cfg.p <= 100 ? 1.5 : 4.0) * gamma_c;
}

void resolve_fractions(const SimConfig& cfg, double& cell_f, double& row_f) {
    switch (cfg.scheme) {
        case Scheme::None: cell_f = 0; row_f = 0; break;
        case Scheme::Cellwise: cell_f = 0.2; row_f = 0; break;
        case Scheme::Rowwise: cell_f = 0; row_f = 0.2; break;
        case Scheme::Mixed: cell_f = 0.1; row_f = 0.1; break;
    }
    if (cfg.cell_fraction >= 0) cell_f = cfg.cell_fraction;
    if (cfg.row_fraction >= 0) row_f = cfg.row_fraction;
}

}  // namespace

SimResult run_study(const SimConfig& cfg) {
    SimResult result;
    result.cfg = cfg;

    std::vector<std::pair<double, double>> gammas;  // (gamma_c, gamma_r) per grid point
    switch (cfg.scheme) {
        case Scheme::None:
            gammas.emplace_back(0.0, 0.0);
            break;
        case Scheme::Cellwise:
            for (double g : cfg.gamma_c) gammas.emplace_back(g, 0.0);
            break;
        case Scheme::Rowwise:
            for (double g : cfg.gamma_r) gammas.emplace_back(0.0, g);
            break;
        case Scheme::Mixed:
            for (std::size_t k = 0; k < cfg.gamma_c.size(); ++k) {
                double gc = cfg.gamma_c[k];
                double gr = k < cfg.gamma_r.size() ? cfg.gamma_r[k] : coupled_gamma_r(cfg, gc);
                gammas.emplace_back(gc, gr);
            }
            break;
    }
    if (gammas.empty()) gammas.emplace_back(0.0, 0.0);

    double cell_f = 0, row_f = 0;
    resolve_fractions(cfg, cell_f, row_f);

    Matrix Sigma_a09;
    if (cfg.model == CovModel::A09) Sigma_a09 = a09_covariance(cfg.p);

    for (std::size_t g = 0; g < gammas.size(); ++g) {
        const auto [gamma_c, gamma_r] = gammas[g];
        double gamma_primary = (cfg.scheme == Scheme::Rowwise) ? gamma_r : gamma_c;
        for (int rep = 0; rep < cfg.replicates; ++rep) {
            std::uint64_t idx = static_cast<std::uint64_t>(g) *
                                    static_cast<std::uint64_t>(cfg.replicates) +
                                static_cast<std::uint64_t>(rep);
            Rng seeder = Rng::substream(cfg.seed, idx);
            std::uint64_t gen_seed = seeder.next_u64();
            std::uint64_t contam_seed = seeder.next_u64();
            std::uint64_t na_seed = seeder.next_u64();

            Matrix clean, Sigma;
            if (cfg.model == CovModel::A09) {
                clean = gen_a09(cfg.n, cfg.p, gen_seed);
                Sigma = Sigma_a09;
            } else {
                AlyzDraw draw = gen_alyz(cfg.n, cfg.p, gen_seed, cfg.strict_alyz);
                clean = draw.data;
                Sigma = draw.Sigma;
            }
            Matrix truth = top_eigvecs(Sigma, cfg.q);

            Contaminated cont = contaminate(clean, Sigma, cfg.model, cfg.scheme, cfg.q, gamma_c,
                                            gamma_r, cell_f, row_f, contam_seed);
            MaskedMatrix X =
                cfg.na_fraction > 0
                    ? inject_na(cont.data, cfg.na_fraction, na_seed, cfg.q + 1)
                    : MaskedMatrix(cont.data);

            for (Estimator est : cfg.estimators) {
                SimRecord rec{est, gamma_primary, rep, 0.0, 0.0, false};
                try {
                    EstimatorFit efit = run_estimator(est, X, cfg.q);
                    rec.angle = subspace_angle(efit.V, truth);
                    rec.mse = mse_clean(clean, efit.Xhat, cont.cell_outliers, cont.row_outliers,
                                        X.mask);
                } catch (const std::exception&) {
                    rec.failed = true;
                }
                result.records.push_back(rec);
            }
        }
    }

    // Median aggregation over successful replicates.
    std::map<std::pair<int, double>, std::pair<std::vector<double>, std::vector<double>>> groups;
    for (const auto& rec : result.records) {
        if (rec.failed) continue;
        auto& grp = groups[{static_cast<int>(rec.estimator), rec.gamma}];
        grp.first.push_back(rec.angle);
        grp.second.push_back(rec.mse);
    }
    for (auto& [key, vals] : groups) {
        MedianRow row;
        row.estimator = static_cast<Estimator>(key.first);
        row.gamma = key.second;
        row.angle_median = median(vals.first);
        row.mse_median = median(vals.second);
        row.n_ok = static_cast<int>(vals.first.size());
        result.medians.push_back(row);
    }
    return result;
}

}  // namespace cellpca
