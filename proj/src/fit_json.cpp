#include "cellpca/fit_json.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "cellpca/csv.hpp"
#include "cellpca/errors.hpp"

namespace cellpca {

namespace {

const char* kind_name(RhoKernel::Kind k) {
    switch (k) {
        case RhoKernel::Kind::Tanh: return "tanh";
        case RhoKernel::Kind::Biweight: return "biweight";
        case RhoKernel::Kind::Quadratic: return "quadratic";
    }
    return "?";
}

RhoKernel kernel_from_name(const std::string& name) {
    if (name == "tanh") return RhoKernel::tanh_default();
    if (name == "biweight") return RhoKernel::biweight();
    if (name == "quadratic") return RhoKernel::quadratic();
    throw ValidationError("unknown kernel kind: " + name);
}

class JsonWriter {
public:
    explicit JsonWriter(const std::string& path) : out_(path, std::ios::binary) {
        if (!out_) throw IoError("cannot write " + path);
    }
    void raw(const char* s) { out_ << s; }
    void raw(const std::string& s) { out_ << s; }
    void number(double v) { out_ << format_double(v); }
    void key(const char* name, bool first = false) {
        if (!first) out_ << ",\n";
        out_ << "  \"" << name << "\": ";
    }
    void vector(const Vector& v) {
        out_ << '[';
        for (Eigen::Index i = 0; i < v.size(); ++i) {
            if (i) out_ << ',';
            out_ << format_double(v(i));
        }
        out_ << ']';
    }
    void vector(const std::vector<double>& v) {
        out_ << '[';
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (i) out_ << ',';
            out_ << format_double(v[i]);
        }
        out_ << ']';
    }
    void indices(const std::vector<Eigen::Index>& v) {
        out_ << '[';
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (i) out_ << ',';
            out_ << v[i];
        }
        out_ << ']';
    }
    void matrix(const Matrix& M) {
        out_ << '[';
        for (Eigen::Index i = 0; i < M.rows(); ++i) {
            out_ << (i ? ",\n    [" : "\n    [");
            for (Eigen::Index j = 0; j < M.cols(); ++j) {
                if (j) out_ << ',';
                out_ << format_double(M(i, j));
            }
            out_ << ']';
        }
        out_ << "\n  ]";
    }
    void finish() {
        out_.flush();
        if (!out_) throw IoError("failed while writing fit");
    }

private:
    std::ofstream out_;
};

}  // namespace

void write_fit(const SubspaceFit& fit, const std::string& path) {
    JsonWriter w(path);
    w.raw("{\n");
    w.key("schema", true);
    w.raw("\"cellpca-fit/1\"");
    w.key("n");
    w.raw(std::to_string(fit.U.rows()));
    w.key("p");
    w.raw(std::to_string(fit.V.rows()));
    w.key("q");
    w.raw(std::to_string(fit.q()));
    w.key("kernel1");
    w.raw(std::string("\"") + kind_name(fit.kernel1.kind) + "\"");
    w.key("kernel2");
    w.raw(std::string("\"") + kind_name(fit.kernel2.kind) + "\"");
    w.key("converged");
    w.raw(fit.converged ? "true" : "false");
    w.key("iterations");
    w.raw(std::to_string(fit.iterations));
    w.key("guard_columns");
    w.indices(fit.guard_columns);
    w.key("mu");
    w.vector(fit.mu);
    w.key("eigenvalues");
    w.vector(fit.eigenvalues);
    w.key("sigma1");
    w.vector(fit.scales.sigma1);
    w.key("sigma2");
    w.number(fit.scales.sigma2);
    {
        std::vector<Eigen::Index> degen;
        for (std::size_t j = 0; j < fit.scales.degenerate_columns.size(); ++j)
            if (fit.scales.degenerate_columns[j]) degen.push_back(static_cast<Eigen::Index>(j));
        w.key("degenerate_columns");
        w.indices(degen);
    }
    w.key("sigma2_degenerate");
    w.raw(fit.scales.sigma2_degenerate ? "true" : "false");
    w.key("objective_trace");
    w.vector(fit.objective_trace);
    w.key("wr");
    w.vector(fit.weights.wr);
    w.key("V");
    w.matrix(fit.V);
    w.key("U");
    w.matrix(fit.U);
    w.key("Wc");
    w.matrix(fit.weights.Wc);
    w.raw("\n}\n");
    w.finish();
}

namespace {

// Event-based consumer: dimensions arrive before the matrices (write order),
// so every array lands in preallocated storage.
class FitSax {
public:
    SubspaceFit fit;
    Eigen::Index n = -1, p = -1, q = -1;

    bool null() { return fail("unexpected null"); }
    bool boolean(bool v) {
        if (key_ == "converged") fit.converged = v;
        else if (key_ == "sigma2_degenerate") fit.scales.sigma2_degenerate = v;
        else return fail("unexpected boolean for " + key_);
        return true;
    }
    bool number_integer(std::int64_t v) { return number_double(static_cast<double>(v)); }
    bool number_unsigned(std::uint64_t v) { return number_double(static_cast<double>(v)); }
    bool number_float(double v, const std::string&) { return number_double(v); }
    bool string(std::string& v) {
        if (key_ == "schema") {
            if (v != "cellpca-fit/1") return fail("unsupported schema " + v);
        } else if (key_ == "kernel1") {
            fit.kernel1 = kernel_from_name(v);
        } else if (key_ == "kernel2") {
            fit.kernel2 = kernel_from_name(v);
        } else {
            return fail("unexpected string for " + key_);
        }
        return true;
    }
    bool binary(nlohmann::json::binary_t&) { return fail("unexpected binary"); }
    bool start_object(std::size_t) { return ++object_depth_ == 1 || fail("nested object"); }
    bool end_object() { return true; }
    bool start_array(std::size_t) {
        ++array_depth_;
        if (array_depth_ == 1) {
            index_ = 0;
            row_ = -1;
            if (!allocate_target()) return false;
        } else if (array_depth_ == 2) {
            ++row_;
            index_ = 0;
        } else {
            return fail("arrays nested deeper than matrices");
        }
        return true;
    }
    bool end_array() {
        if (array_depth_ == 1) finalize_target();
        --array_depth_;
        return true;
    }
    bool key(std::string& v) {
        key_ = v;
        return true;
    }
    bool parse_error(std::size_t pos, const std::string&, const nlohmann::json::exception& ex) {
        throw ValidationError("fit json parse error at byte " + std::to_string(pos) + ": " +
                              ex.what());
    }
    const std::string& error() const { return error_; }

private:
    bool fail(const std::string& msg) {
        error_ = msg;
        return false;
    }

    bool dims_known() const { return n >= 0 && p >= 0 && q >= 0; }

    bool allocate_target() {
        if (key_ == "V" || key_ == "U" || key_ == "Wc") {
            if (!dims_known()) return fail("matrix " + key_ + " precedes dimensions");
            if (key_ == "V") fit.V.setZero(p, q);
            if (key_ == "U") fit.U.setZero(n, q);
            if (key_ == "Wc") fit.weights.Wc.setZero(n, p);
        } else if (key_ == "mu" || key_ == "sigma1" || key_ == "wr" || key_ == "eigenvalues") {
            if (!dims_known()) return fail("vector " + key_ + " precedes dimensions");
            if (key_ == "mu") fit.mu.setZero(p);
            if (key_ == "sigma1") fit.scales.sigma1.setZero(p);
            if (key_ == "wr") fit.weights.wr.setZero(n);
            // eigenvalues may legitimately be empty; sized on close
            if (key_ == "eigenvalues") eig_buffer_.clear();
        } else if (key_ == "degenerate_columns") {
            if (!dims_known()) return fail("degenerate_columns precedes dimensions");
            fit.scales.degenerate_columns.assign(static_cast<std::size_t>(p), false);
        }
        return true;
    }

    void finalize_target() {
        if (key_ == "eigenvalues") {
            fit.eigenvalues.resize(static_cast<Eigen::Index>(eig_buffer_.size()));
            for (std::size_t i = 0; i < eig_buffer_.size(); ++i)
                fit.eigenvalues(static_cast<Eigen::Index>(i)) = eig_buffer_[i];
        }
    }

    bool number_double(double v) {
        if (array_depth_ == 0) {
            if (key_ == "n") n = static_cast<Eigen::Index>(v);
            else if (key_ == "p") p = static_cast<Eigen::Index>(v);
            else if (key_ == "q") q = static_cast<Eigen::Index>(v);
            else if (key_ == "sigma2") fit.scales.sigma2 = v;
            else if (key_ == "iterations") fit.iterations = static_cast<int>(v);
            else return fail("unexpected scalar for " + key_);
            return true;
        }
        if (array_depth_ == 2) {
            if (key_ == "V") fit.V(row_, index_++) = v;
            else if (key_ == "U") fit.U(row_, index_++) = v;
            else if (key_ == "Wc") fit.weights.Wc(row_, index_++) = v;
            else return fail("unexpected nested array for " + key_);
            return true;
        }
        if (key_ == "mu") fit.mu(index_++) = v;
        else if (key_ == "sigma1") fit.scales.sigma1(index_++) = v;
        else if (key_ == "wr") fit.weights.wr(index_++) = v;
        else if (key_ == "eigenvalues") eig_buffer_.push_back(v);
        else if (key_ == "objective_trace") fit.objective_trace.push_back(v);
        else if (key_ == "guard_columns") fit.guard_columns.push_back(static_cast<Eigen::Index>(v));
        else if (key_ == "degenerate_columns")
            fit.scales.degenerate_columns[static_cast<std::size_t>(v)] = true;
        else return fail("unexpected array for " + key_);
        return true;
    }

    std::string key_;
    std::string error_;
    int object_depth_ = 0;
    int array_depth_ = 0;
    Eigen::Index row_ = -1;
    Eigen::Index index_ = 0;
    std::vector<double> eig_buffer_;
};

}  // namespace

SubspaceFit read_fit(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    FitSax sax;
    if (!nlohmann::json::sax_parse(in, &sax))
        throw ValidationError("fit json: " + (sax.error().empty() ? "parse failed" : sax.error()));
    if (sax.n < 0 || sax.p < 0 || sax.q < 0)
        throw ValidationError("fit json: dimensions missing");

    // Rebuild the combined weight matrix.
    SubspaceFit fit = std::move(sax.fit);
    if (fit.weights.Wc.size() > 0 && fit.weights.wr.size() > 0) {
        fit.weights.W = fit.weights.Wc.array().colwise() * fit.weights.wr.array();
    }
    return fit;
}

void write_predictions(const std::vector<PredictionResult>& results, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    auto vec = [&](const Vector& v) {
        out << '[';
        for (Eigen::Index i = 0; i < v.size(); ++i) {
            if (i) out << ',';
            out << format_double(v(i));
        }
        out << ']';
    };
    out << "[\n";
    for (std::size_t r = 0; r < results.size(); ++r) {
        const auto& pr = results[r];
        out << "  {\"valid\": " << (pr.valid ? "true" : "false");
        if (pr.valid) {
            out << ", \"u\": ";
            vec(pr.u);
            out << ", \"x_hat\": ";
            vec(pr.x_hat);
            out << ", \"x_imputed\": ";
            vec(pr.x_imputed);
            out << ", \"w\": ";
            vec(pr.w);
        } else {
            out << ", \"u\": null, \"x_hat\": null, \"x_imputed\": null, \"w\": null";
        }
        out << (r + 1 < results.size() ? "},\n" : "}\n");
    }
    out << "]\n";
    if (!out) throw IoError("failed while writing " + path);
}

}  // namespace cellpca
