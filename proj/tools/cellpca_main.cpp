#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "cellpca/csv.hpp"
#include "cellpca/diagnostics.hpp"
#include "cellpca/errors.hpp"
#include "cellpca/fit_json.hpp"
#include "cellpca/influence.hpp"
#include "cellpca/irls.hpp"
#include "cellpca/postprocess.hpp"
#include "cellpca/simulation.hpp"
#include "cellpca/svg.hpp"

namespace {

using namespace cellpca;

RhoKernel kernel_from_flag(const std::string& name) {
    if (name == "tanh") return RhoKernel::tanh_default();
    if (name == "quad" || name == "quadratic") return RhoKernel::quadratic();
    throw ValidationError("unknown kernel '" + name + "' (expected tanh or quad)");
}

std::vector<bool> mask_row_of(const MaskedMatrix& X, Eigen::Index i) {
    std::vector<bool> m(static_cast<std::size_t>(X.p()));
    for (Eigen::Index j = 0; j < X.p(); ++j) m[static_cast<std::size_t>(j)] = X.mask(i, j);
    return m;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << text;
    if (!out) throw IoError("failed while writing " + path);
}

// ---- fit ----------------------------------------------------------------

struct FitArgs {
    std::string input, out;
    int rank = 2;
    std::string kernel1 = "tanh", kernel2 = "tanh";
    int max_iter = 100;
    double tol = 1e-9;
    std::uint64_t seed = 1;  // recorded for reproducibility; the fit is deterministic
};

int run_fit(const FitArgs& a) {
    auto [X, report] = read_csv(a.input);
    IrlsOptions opts;
    opts.kernel1 = kernel_from_flag(a.kernel1);
    opts.kernel2 = kernel_from_flag(a.kernel2);
    opts.max_iter = a.max_iter;
    opts.rel_tol = a.tol;
    SubspaceFit f = fit(X, a.rank, opts);

    bool guarded = !f.guard_columns.empty();
    if (guarded) {
        std::cerr << "warning: zero-weight guard stopped the iteration; columns:";
        for (auto j : f.guard_columns) std::cerr << ' ' << j;
        std::cerr << " (consider removing them); returning the previous iterate\n";
    }
    try {
        f = postprocess(f);
    } catch (const NumericalError& e) {
        std::cerr << "warning: post-processing failed (" << e.what()
                  << "); writing the raw fit\n";
        guarded = true;
    }
    write_fit(f, a.out);
    std::cout << "n=" << report.n << " p=" << report.p << " q=" << a.rank
              << " converged=" << (f.converged ? "yes" : "no")
              << " iterations=" << f.iterations
              << " objective=" << format_double(f.objective_trace.back()) << "\n";
    return guarded ? 3 : 0;
}

// ---- rank ---------------------------------------------------------------

struct RankArgs {
    std::string input, out;
    int max_rank = 5;
    double threshold = 0.8;
};

int run_rank(const RankArgs& a) {
    auto [X, report] = read_csv(a.input);
    RankCurve curve = select_rank(X, a.max_rank, a.threshold);
    std::ostringstream csv;
    csv << "rank,nu,explained\n";
    csv << "0," << format_double(curve.nu0) << ",0\n";
    for (std::size_t k = 0; k < curve.ranks.size(); ++k)
        csv << curve.ranks[k] << ',' << format_double(curve.nu[k]) << ','
            << format_double(curve.explained[k]) << '\n';
    write_text(a.out, csv.str());
    if (curve.selected > 0)
        std::cout << "selected rank " << curve.selected << " (threshold "
                  << format_double(a.threshold) << ")\n";
    else
        std::cout << "no rank up to " << a.max_rank << " reaches threshold "
                  << format_double(a.threshold) << "\n";
    return 0;
}

// ---- impute / predict ---------------------------------------------------

struct TransformArgs {
    std::string input, fit, out;
};

std::vector<PredictionResult> predict_rows(const MaskedMatrix& X, const SubspaceFit& f) {
    std::vector<PredictionResult> rows;
    rows.reserve(static_cast<std::size_t>(X.n()));
    for (Eigen::Index i = 0; i < X.n(); ++i)
        rows.push_back(predict(X.values.row(i).transpose(), mask_row_of(X, i), f));
    return rows;
}

int run_impute(const TransformArgs& a) {
    auto [X, report] = read_csv(a.input);
    SubspaceFit f = read_fit(a.fit);
    if (X.p() != f.V.rows()) throw DimensionMismatch("impute: input width differs from the fit");
    auto rows = predict_rows(X, f);
    Matrix imputed(X.n(), X.p());
    MaskArray valid(X.n(), X.p());
    for (Eigen::Index i = 0; i < X.n(); ++i) {
        const auto& pr = rows[static_cast<std::size_t>(i)];
        valid.row(i).setConstant(pr.valid);
        if (pr.valid)
            imputed.row(i) = pr.x_imputed.transpose();
        else
            imputed.row(i).setZero();
    }
    write_masked_csv(MaskedMatrix(std::move(imputed), std::move(valid)), a.out,
                     report.column_names);
    return 0;
}

int run_predict(const TransformArgs& a) {
    auto [X, report] = read_csv(a.input);
    SubspaceFit f = read_fit(a.fit);
    if (X.p() != f.V.rows()) throw DimensionMismatch("predict: input width differs from the fit");
    write_predictions(predict_rows(X, f), a.out);
    return 0;
}

// ---- diagnose -------------------------------------------------------------

struct DiagnoseArgs {
    std::string input, fit, out_dir;
    int cutoff_sims = 100;
};

int run_diagnose(const DiagnoseArgs& a) {
    auto [X, report] = read_csv(a.input);
    SubspaceFit f = read_fit(a.fit);
    if (X.p() != f.V.rows() || X.n() != f.U.rows())
        throw DimensionMismatch("diagnose: input shape differs from the fit");
    std::filesystem::create_directories(a.out_dir);
    auto path = [&](const char* name) { return (std::filesystem::path(a.out_dir) / name).string(); };

    StandardizedResiduals sr = standardized_residuals(X, f);
    CellmapGrid grid = cellmap(sr.rtilde, X.mask, f.weights.wr);

    {
        std::ostringstream csv;
        csv << "row,col,rtilde,category,intensity\n";
        static const char* names[] = {"regular", "missing", "positive", "negative"};
        for (Eigen::Index i = 0; i < X.n(); ++i)
            for (Eigen::Index j = 0; j < X.p(); ++j) {
                csv << i << ',' << j << ','
                    << (X.mask(i, j) ? format_double(grid.rtilde(i, j)) : "NA") << ','
                    << names[grid.category(i, j)] << ',' << format_double(grid.intensity(i, j))
                    << '\n';
            }
        write_text(path("cellmap.csv"), csv.str());
    }
    render_cellmap(grid, path("cellmap.svg"));

    double c_r = residual_cutoff(f, a.cutoff_sims, 1);
    OutlierMap omap = outlier_map(X, f, c_r);
    {
        std::ostringstream csv;
        csv << "case,score_distance,residual_norm,row_weight,point_size,class\n";
        static const char* names[] = {"regular", "good-leverage", "orthogonal-outlier",
                                      "bad-leverage"};
        for (const auto& rec : omap.records)
            csv << rec.index << ',' << format_double(rec.sd) << ',' << format_double(rec.resnorm)
                << ',' << format_double(rec.wr) << ',' << format_double(rec.point_size) << ','
                << names[static_cast<int>(rec.cls)] << '\n';
        write_text(path("outliermap.csv"), csv.str());
    }
    render_outlier_map(omap, path("outliermap.svg"));

    {
        std::ostringstream js;
        js << "{\n  \"cutoff_sd\": " << format_double(omap.cutoff_sd)
           << ",\n  \"cutoff_resnorm\": " << format_double(omap.cutoff_resnorm)
           << ",\n  \"cutoff_sims\": " << a.cutoff_sims << ",\n  \"flag_cutoff\": "
           << format_double(grid.flag_cutoff) << "\n}\n";
        write_text(path("summary.json"), js.str());
    }
    return 0;
}

// ---- simulate -------------------------------------------------------------

Estimator estimator_from_name(std::string s) {
    for (auto& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    if (s == "cpca") return Estimator::CPCA;
    if (s == "only-cell" || s == "onlycell") return Estimator::OnlyCell;
    if (s == "only-row" || s == "onlyrow") return Estimator::OnlyRow;
    if (s == "cellpca") return Estimator::CellPCA;
    throw ValidationError("unknown estimator '" + s + "'");
}

SimConfig parse_sim_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("sim config: ") + e.what());
    }
    SimConfig cfg;
    std::string model = j.value("model", "a09");
    cfg.model = model == "alyz" ? CovModel::ALYZ : CovModel::A09;
    std::string scheme = j.value("scheme", "cellwise");
    if (scheme == "none") cfg.scheme = Scheme::None;
    else if (scheme == "cellwise") cfg.scheme = Scheme::Cellwise;
    else if (scheme == "rowwise") cfg.scheme = Scheme::Rowwise;
    else if (scheme == "mixed") cfg.scheme = Scheme::Mixed;
    else throw ValidationError("sim config: unknown scheme '" + scheme + "'");
    cfg.n = j.value("n", 100);
    cfg.p = j.value("p", 20);
    cfg.q = j.value("q", 2);
    cfg.gamma_c = j.value("gamma_c", std::vector<double>{});
    cfg.gamma_r = j.value("gamma_r", std::vector<double>{});
    cfg.cell_fraction = j.value("cell_fraction", -1.0);
    cfg.row_fraction = j.value("row_fraction", -1.0);
    cfg.na_fraction = j.value("na_fraction", 0.0);
    cfg.replicates = j.value("replicates", 50);
    cfg.seed = j.value("seed", 1);
    cfg.strict_alyz = j.value("strict_alyz", true);
    if (j.contains("estimators")) {
        cfg.estimators.clear();
        for (const auto& name : j["estimators"]) cfg.estimators.push_back(estimator_from_name(name));
    }
    return cfg;
}

int run_simulate(const std::string& config_path, const std::string& out) {
    SimConfig cfg = parse_sim_config(config_path);
    SimResult result = run_study(cfg);
    write_text(out, sim_result_csv(result));
    std::string summary = out;
    if (summary.size() > 4 && summary.substr(summary.size() - 4) == ".csv")
        summary = summary.substr(0, summary.size() - 4);
    summary += ".summary.json";
    write_text(summary, sim_summary_json(result));
    std::cout << "wrote " << result.records.size() << " records to " << out << "\n";
    return 0;
}

// ---- influence ------------------------------------------------------------

struct InfluenceArgs {
    std::string model = "fdcm";
    std::string cov = "a09";
    int p = 2, q = 1;
    std::string grid = "-10:10:41";
    std::string out;
    Eigen::Index mc = 200000;
    std::uint64_t seed = 1;
    double fd_step = 1e-4;
};

struct AxisSpec {
    double lo, hi;
    int count;
};

AxisSpec parse_axis(const std::string& s) {
    AxisSpec a{};
    char colon1, colon2;
    std::istringstream is(s);
    if (!(is >> a.lo >> colon1 >> a.hi >> colon2 >> a.count) || colon1 != ':' || colon2 != ':' ||
        a.count < 1)
        throw ValidationError("grid axis must look like lo:hi:count, got '" + s + "'");
    return a;
}

int run_influence(const InfluenceArgs& a) {
    Matrix Sigma;
    if (a.cov == "a09") {
        Sigma = a09_covariance(a.p);
    } else {
        auto [M, rep] = read_csv(a.cov);
        if (M.n() != M.p() || M.mask.count() != M.n() * M.p())
            throw ValidationError("covariance file must be a complete square matrix");
        Sigma = M.values;
        if (Sigma.rows() != a.p) throw DimensionMismatch("--p does not match the covariance file");
    }
    ModelH0 model = make_gaussian_model(Sigma, a.q);
    InfluenceLab lab(model, a.mc, a.seed, a.fd_step);
    std::cerr << "fd stability: B " << format_double(lab.metadata_B().fd_stability) << ", S "
              << format_double(lab.metadata_S().fd_stability) << "\n";

    // Grid: either one spec for the first two axes or z1=..,z2=.. pairs;
    // unlisted coordinates stay at zero.
    std::vector<AxisSpec> axes(static_cast<std::size_t>(a.p), AxisSpec{0, 0, 1});
    if (a.grid.find('=') == std::string::npos) {
        AxisSpec common = parse_axis(a.grid);
        axes[0] = common;
        if (a.p >= 2) axes[1] = common;
    } else {
        std::istringstream is(a.grid);
        std::string part;
        while (std::getline(is, part, ',')) {
            auto eq = part.find('=');
            if (eq == std::string::npos || part[0] != 'z')
                throw ValidationError("grid part must look like z<k>=lo:hi:count");
            int axis = std::stoi(part.substr(1, eq - 1));
            if (axis < 1 || axis > a.p) throw ValidationError("grid axis out of range");
            axes[static_cast<std::size_t>(axis - 1)] = parse_axis(part.substr(eq + 1));
        }
    }

    std::ostringstream csv;
    for (int k = 1; k <= a.p; ++k) csv << 'z' << k << ',';
    if (a.p <= 3) {
        for (int r = 1; r <= a.p; ++r)
            for (int c = 1; c <= a.p; ++c) csv << "if_" << r << c << ',';
    } else {
        csv << "if_11,";
    }
    csv << "if_norm\n";

    std::vector<int> idx(static_cast<std::size_t>(a.p), 0);
    bool more = true;
    while (more) {
        Vector z(a.p);
        for (int k = 0; k < a.p; ++k) {
            const AxisSpec& ax = axes[static_cast<std::size_t>(k)];
            z(k) = ax.count == 1
                       ? ax.lo
                       : ax.lo + (ax.hi - ax.lo) * idx[static_cast<std::size_t>(k)] /
                                     static_cast<double>(ax.count - 1);
        }
        Matrix IF = a.model == "ficm" ? lab.if_ficm(z) : lab.if_fdcm(z);
        for (int k = 0; k < a.p; ++k) csv << format_double(z(k)) << ',';
        if (a.p <= 3) {
            for (int r = 0; r < a.p; ++r)
                for (int c = 0; c < a.p; ++c) csv << format_double(IF(r, c)) << ',';
        } else {
            csv << format_double(IF(0, 0)) << ',';
        }
        csv << format_double(IF.norm()) << '\n';

        more = false;
        for (int k = 0; k < a.p; ++k) {
            auto& i = idx[static_cast<std::size_t>(k)];
            if (++i < axes[static_cast<std::size_t>(k)].count) {
                more = true;
                break;
            }
            i = 0;
        }
    }
    write_text(a.out, csv.str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"robust principal subspace estimation with cellwise and rowwise weighting"};
    app.require_subcommand(1);

    FitArgs fit_args;
    auto* cmd_fit = app.add_subcommand("fit", "fit a robust principal subspace");
    cmd_fit->add_option("--input", fit_args.input)->required();
    cmd_fit->add_option("--rank", fit_args.rank)->required();
    cmd_fit->add_option("--kernel1", fit_args.kernel1);
    cmd_fit->add_option("--kernel2", fit_args.kernel2);
    cmd_fit->add_option("--max-iter", fit_args.max_iter);
    cmd_fit->add_option("--tol", fit_args.tol);
    cmd_fit->add_option("--seed", fit_args.seed);
    cmd_fit->add_option("--out", fit_args.out)->required();

    RankArgs rank_args;
    auto* cmd_rank = app.add_subcommand("rank", "explained-variability curve over ranks");
    cmd_rank->add_option("--input", rank_args.input)->required();
    cmd_rank->add_option("--max-rank", rank_args.max_rank)->required();
    cmd_rank->add_option("--threshold", rank_args.threshold);
    cmd_rank->add_option("--out", rank_args.out)->required();

    TransformArgs impute_args;
    auto* cmd_impute = app.add_subcommand("impute", "impute outlying and missing cells");
    cmd_impute->add_option("--input", impute_args.input)->required();
    cmd_impute->add_option("--fit", impute_args.fit)->required();
    cmd_impute->add_option("--out", impute_args.out)->required();

    TransformArgs predict_args;
    auto* cmd_predict = app.add_subcommand("predict", "score new observations");
    cmd_predict->add_option("--input", predict_args.input)->required();
    cmd_predict->add_option("--fit", predict_args.fit)->required();
    cmd_predict->add_option("--out", predict_args.out)->required();

    DiagnoseArgs diag_args;
    auto* cmd_diag = app.add_subcommand("diagnose", "residual cellmap and outlier map");
    cmd_diag->add_option("--input", diag_args.input)->required();
    cmd_diag->add_option("--fit", diag_args.fit)->required();
    cmd_diag->add_option("--out-dir", diag_args.out_dir)->required();
    cmd_diag->add_option("--cutoff-sims", diag_args.cutoff_sims);

    std::string sim_config, sim_out;
    auto* cmd_sim = app.add_subcommand("simulate", "Monte Carlo estimator comparison");
    cmd_sim->add_option("--config", sim_config)->required();
    cmd_sim->add_option("--out", sim_out)->required();

    InfluenceArgs inf_args;
    auto* cmd_inf = app.add_subcommand("influence", "influence surfaces of the projection");
    cmd_inf->add_option("--model", inf_args.model)->check(CLI::IsMember({"fdcm", "ficm"}));
    cmd_inf->add_option("--cov", inf_args.cov);
    cmd_inf->add_option("--p", inf_args.p)->required();
    cmd_inf->add_option("--q", inf_args.q)->required();
    cmd_inf->add_option("--grid", inf_args.grid);
    cmd_inf->add_option("--mc", inf_args.mc);
    cmd_inf->add_option("--seed", inf_args.seed);
    cmd_inf->add_option("--fd-step", inf_args.fd_step);
    cmd_inf->add_option("--out", inf_args.out)->required();

    try {
        app.parse(argc, argv);
        if (cmd_fit->parsed()) return run_fit(fit_args);
        if (cmd_rank->parsed()) return run_rank(rank_args);
        if (cmd_impute->parsed()) return run_impute(impute_args);
        if (cmd_predict->parsed()) return run_predict(predict_args);
        if (cmd_diag->parsed()) return run_diagnose(diag_args);
        if (cmd_sim->parsed()) return run_simulate(sim_config, sim_out);
        if (cmd_inf->parsed()) return run_influence(inf_args);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 4;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const ValidationError& e) {
        std::cerr << "invalid input: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
