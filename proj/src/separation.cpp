#include "ppmlhdfe/separation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <limits>

#include "ppmlhdfe/error.hpp"

namespace ppmlhdfe {

std::string SeparationMethods::to_string() const {
    if (none()) return "none";
    std::string out;
    auto add = [&](bool on, const char* name) {
        if (!on) return;
        if (!out.empty()) out += ' ';
        out += name;
    };
    add(fe, "fe");
    add(simplex, "simplex");
    add(ir, "ir");
    add(mu, "mu");
    return out;
}

SeparationMethods parse_separation(std::string_view text) {
    SeparationMethods m{false, false, false, false};
    bool saw_none = false, saw_any = false;
    std::string token;
    auto flush = [&] {
        if (token.empty()) return;
        if (token == "fe") m.fe = true;
        else if (token == "ir") m.ir = true;
        else if (token == "simplex") m.simplex = true;
        else if (token == "mu") m.mu = true;
        else if (token == "none") saw_none = true;
        else throw DataError("unknown separation method '" + token + "'");
        saw_any = true;
        token.clear();
    };
    for (char c : text) {
        if (c == ',' || std::isspace(static_cast<unsigned char>(c)))
            flush();
        else
            token.push_back(c);
    }
    flush();
    if (!saw_any) throw DataError("empty separation method list");
    if (saw_none && !m.none()) throw DataError("'none' cannot be combined with other separation methods");
    return m;
}

std::vector<bool> check_fe(const EstimationSample& sample) {
    const std::size_t n = sample.rows();
    std::vector<bool> flagged(n, false);
    std::vector<double> sums;
    bool changed = true;
    while (changed) {
        changed = false;
        for (const auto& fe : sample.fixed_effects) {
            if (fe.is_slope()) continue;
            sums.assign(static_cast<std::size_t>(fe.levels), 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                if (flagged[i]) continue;
                const auto g = static_cast<std::size_t>(fe.codes[i]);
                sums[g] += sample.weights[static_cast<Eigen::Index>(i)] * sample.y[static_cast<Eigen::Index>(i)];
            }
            for (std::size_t i = 0; i < n; ++i) {
                if (!flagged[i] && sums[static_cast<std::size_t>(fe.codes[i])] == 0.0) {
                    flagged[i] = true;
                    changed = true;
                }
            }
        }
    }
    return flagged;
}

namespace {

// Regressors that are not collinear (with each other or with the absorbed
// effects) under unit weights.
std::vector<Eigen::Index> structural_columns(const EstimationSample& sample, const ProjectorOptions& popt) {
    if (sample.X.cols() == 0) return {};
    Projector unit(sample.fixed_effects, popt);
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(sample.y.size());
    unit.set_weights(ones);
    Eigen::MatrixXd Xt = sample.X;
    unit.project(Xt, 1e-12);
    Eigen::VectorXd ref = sample.X.colwise().squaredNorm().transpose();
    WlsOptions wopt;
    wopt.reference_norms = &ref;
    return wls_solve(Xt, Eigen::VectorXd::Zero(sample.y.size()), ones, wopt).kept;
}

constexpr int kMaxLeakRefinements = 8;
constexpr double kLeakTolerance = 1e-12;
constexpr double kStopFraction = 1e-2;

void trace(const LogFn& log, const std::string& msg) {
    if (log) log(3, msg);
}

}  // namespace

IrResult check_ir(const EstimationSample& sample, const IrOptions& options) {
    const auto n = sample.y.size();
    IrResult out;
    out.flagged.assign(static_cast<std::size_t>(n), false);
    const Eigen::ArrayXd is_zero = (sample.y.array() == 0).cast<double>();
    if (is_zero.sum() == 0) return out;

    const auto cols = structural_columns(sample, options.projector);
    Eigen::MatrixXd X = sample.X(Eigen::all, cols);
    const double big = options.big_weight_factor * static_cast<double>(n);
    Eigen::VectorXd omega = (is_zero + (1 - is_zero) * big).matrix();

    Projector proj(sample.fixed_effects, options.projector);
    proj.set_weights(omega);
    const double inner_tol = std::min(1e-10, options.tol * 1e-5);
    if (X.cols() > 0) proj.project(X, inner_tol);

    Eigen::VectorXd u = is_zero.matrix();
    Eigen::VectorXd zhat;
    WlsOptions wopt;
    wopt.pivot_tol = 0.0;
    // The large weight only approximately pins zhat to zero on the y > 0
    // rows; the leak is of order 1/big and can pass for a small positive
    // certificate. Shifting the targets there by the leak (a method of
    // multipliers) drives it to rounding level in a few solves.
    auto regress = [&](const Eigen::VectorXd& target) {
        Eigen::VectorXd t = target, fitted;
        double leak_before = std::numeric_limits<double>::infinity();
        for (int refine = 0; refine < kMaxLeakRefinements; ++refine) {
            Eigen::VectorXd tt = t;
            Eigen::Map<Eigen::MatrixXd> tt_col(tt.data(), n, 1);
            proj.project(tt_col, inner_tol);
            auto fit = wls_solve(X, tt, omega, wopt);
            fitted = t - fit.residuals;
            double leak = 0, size = 0;
            for (Eigen::Index i = 0; i < n; ++i) {
                if (is_zero[i] == 0) leak = std::max(leak, std::abs(fitted[i]));
                else size = std::max(size, std::abs(fitted[i]));
            }
            if (leak <= kLeakTolerance * std::max(size, 1e-300) || leak >= 0.5 * leak_before) break;
            leak_before = leak;
            for (Eigen::Index i = 0; i < n; ++i)
                if (is_zero[i] == 0) t[i] -= fitted[i];
        }
        return fitted;
    };
    // Iterate until the negative part is well below the flagging threshold, so
    // rows that are only slowly decaying towards zero are not flagged.
    const double stop_tol = kStopFraction * options.tol;
    for (long it = 1; it <= options.max_iterations; ++it) {
        out.iterations = it;
        zhat = regress(u);

        double min_zero = 0, max_zero = 0;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (is_zero[i] == 0) continue;
            min_zero = std::min(min_zero, zhat[i]);
            max_zero = std::max(max_zero, zhat[i]);
        }
        char buf[160];
        std::snprintf(buf, sizeof buf, "ir iter %ld: min zhat %.3e  max zhat %.3e (y = 0 rows)", it, min_zero,
                      max_zero);
        trace(options.log, buf);

        if (max_zero <= options.tol) return out;  // nothing can be separated
        if (min_zero >= -stop_tol) {
            for (Eigen::Index i = 0; i < n; ++i)
                out.flagged[static_cast<std::size_t>(i)] = is_zero[i] != 0 && zhat[i] > options.tol;
            out.certificate = zhat;
            return out;
        }
        for (Eigen::Index i = 0; i < n; ++i) u[i] = is_zero[i] != 0 ? std::max(zhat[i], 0.0) : 0.0;
        u /= u.maxCoeff();
    }
    out.converged = false;
    std::fill(out.flagged.begin(), out.flagged.end(), false);
    return out;
}

bool verify_certificate(const EstimationSample& sample, const Eigen::VectorXd& zhat, double tol) {
    const auto n = sample.y.size();
    if (zhat.size() != n) return false;
    const double scale = zhat.cwiseAbs().maxCoeff();
    if (!(scale > tol)) return false;
    bool positive = false;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (sample.y[i] > 0) {
            if (std::abs(zhat[i]) > tol * scale) return false;
        } else {
            if (zhat[i] < -tol * scale) return false;
            if (zhat[i] > tol * scale) positive = true;
        }
    }
    if (!positive) return false;

    // Span check: residual of zhat on [X, absorbed effects] under unit weights.
    ProjectorOptions popt;
    Projector unit(sample.fixed_effects, popt);
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
    unit.set_weights(ones);
    Eigen::MatrixXd stack(n, 1 + sample.X.cols());
    stack.col(0) = zhat;
    stack.rightCols(sample.X.cols()) = sample.X;
    unit.project(stack, 1e-12);
    Eigen::VectorXd ref = sample.X.colwise().squaredNorm().transpose();
    WlsOptions wopt;
    wopt.reference_norms = &ref;
    auto fit = wls_solve(stack.rightCols(sample.X.cols()), stack.col(0), ones, wopt);
    return fit.residuals.cwiseAbs().maxCoeff() <= tol * scale;
}

SeparationOutcome run_separation(const EstimationSample& sample, const SeparationMethods& methods,
                                 const IrOptions& options) {
    SeparationOutcome out{sample, {}};
    auto& report = out.report;
    report.methods = methods.to_string();
    if (methods.none()) return out;

    auto drop = [&](const std::vector<bool>& flagged, std::vector<std::size_t>& ledger_rows) {
        std::vector<bool> keep(flagged.size());
        std::size_t kept = 0;
        for (std::size_t i = 0; i < flagged.size(); ++i) {
            keep[i] = !flagged[i];
            if (flagged[i])
                ledger_rows.push_back(out.sample.row_ids[i]);
            else
                ++kept;
        }
        if (kept == flagged.size()) return;
        if (kept == 0) throw DataError("no observations remain after dropping separated observations");
        out.sample = out.sample.subset(keep, DropReason::separated);
    };

    if (methods.fe && out.sample.has_intercept_term()) {
        drop(check_fe(out.sample), report.fe_rows);
        trace(options.log, "fe check: " + std::to_string(report.fe_rows.size()) + " separated observations");
    }
    if (methods.simplex) report.notices.emplace_back("separation method 'simplex' is not implemented; skipped");
    if (methods.mu) report.notices.emplace_back("separation method 'mu' is not implemented; skipped");
    if (methods.ir) {
        // A nonnegative fit need not have the largest possible support. Any
        // certificate stays one after separated rows are removed, so repeating
        // the check until nothing new turns up yields the full set.
        for (;;) {
            auto ir = check_ir(out.sample, options);
            ++report.ir_rounds;
            report.ir_iterations += ir.iterations;
            if (!ir.converged) {
                report.ir_converged = false;
                report.notices.emplace_back("ir separation check did not converge after " +
                                            std::to_string(ir.iterations) + " iterations; no further observations dropped");
            }
            if (ir.certificate.size() > 0 && report.certificate.size() == 0) {
                report.certificate = ir.certificate;
                report.certificate_rows = out.sample.row_ids;
                report.certificate_verified = verify_certificate(out.sample, ir.certificate, options.tol);
            }
            if (std::find(ir.flagged.begin(), ir.flagged.end(), true) == ir.flagged.end()) break;
            drop(ir.flagged, report.ir_rows);
        }
        trace(options.log, "ir check: " + std::to_string(report.ir_rows.size()) + " separated observations in " +
                               std::to_string(report.ir_rounds) + " rounds");
    }
    std::sort(report.ir_rows.begin(), report.ir_rows.end());
    report.separated_rows = report.fe_rows;
    report.separated_rows.insert(report.separated_rows.end(), report.ir_rows.begin(), report.ir_rows.end());
    std::sort(report.separated_rows.begin(), report.separated_rows.end());
    return out;
}

}  // namespace ppmlhdfe
