#include "ppmlhdfe/irls.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>

#include "ppmlhdfe/error.hpp"

namespace ppmlhdfe {

namespace {

std::string format(const char* fmt, auto... args) {
    char buf[256];
    std::snprintf(buf, sizeof buf, fmt, args...);
    return buf;
}

void emit(const LogFn& log, int level, const std::string& msg) {
    if (log) log(level, msg);
}

}  // namespace

Eigen::VectorXd initial_guess_simple(const Eigen::VectorXd& y, const Eigen::VectorXd& weights) {
    const double mean = y.dot(weights) / weights.sum();
    if (!(mean > 0)) throw EstimationError("response identically zero");
    return ((y.array() + mean) / 2).log().matrix();
}

Eigen::VectorXd initial_guess(const EstimationSample& sample, Guess method, const ProjectorOptions& projector) {
    Eigen::VectorXd simple = initial_guess_simple(sample.y, sample.weights);
    if (method == Guess::simple) return simple;

    // ln(1 + y) - offset on the regressors and absorbed effects, partialled
    // out at a loose tolerance.
    const auto n = sample.y.size();
    Eigen::MatrixXd stack(n, 1 + sample.X.cols());
    stack.col(0) = (sample.y.array() + 1).log().matrix() - sample.offset;
    stack.rightCols(sample.X.cols()) = sample.X;
    Eigen::VectorXd target = stack.col(0);
    Projector proj(sample.fixed_effects, projector);
    proj.set_weights(sample.weights);
    proj.project(stack, 1e-4);
    Eigen::VectorXd ref = (sample.X.array().square().colwise() * sample.weights.array()).colwise().sum().transpose();
    WlsOptions wopt;
    wopt.reference_norms = &ref;
    auto fit = wls_solve(stack.rightCols(sample.X.cols()), stack.col(0), sample.weights, wopt);
    return target - fit.residuals + sample.offset;
}

WorkingValues update_working(const Eigen::VectorXd& y, const Eigen::VectorXd& eta, const Eigen::VectorXd& offset,
                             const Eigen::VectorXd& obs_weights) {
    if (!eta.allFinite() || eta.cwiseAbs().maxCoeff() > kEtaLimit)
        throw DivergenceError(
            "diverging linear predictor (|eta| > 700): the estimates do not exist, most likely because of "
            "separated observations; enable separation checks (--separation fe,ir)");
    WorkingValues out;
    out.mu = eta.array().exp();
    out.w = obs_weights.cwiseProduct(out.mu);
    out.z = ((y - out.mu).array() / out.mu.array()).matrix() + eta - offset;
    return out;
}

WlsResult wls_solve(const Eigen::MatrixXd& X_tilde, const Eigen::VectorXd& z_tilde, const Eigen::VectorXd& w,
                    const WlsOptions& options) {
    const auto k = X_tilde.cols();
    WlsResult out;
    Eigen::MatrixXd WX = X_tilde.array().colwise() * w.array();
    Eigen::MatrixXd G = X_tilde.transpose() * WX;
    Eigen::VectorXd b = WX.transpose() * z_tilde;

    Eigen::VectorXd scale(k);
    for (Eigen::Index j = 0; j < k; ++j) {
        const double ref = options.reference_norms ? (*options.reference_norms)[j] : G(j, j);
        scale[j] = ref > 0 ? 1.0 / std::sqrt(ref) : 0.0;
    }
    // Ordered Cholesky on the scaled Gram matrix; rows of L for kept columns.
    Eigen::MatrixXd L = Eigen::MatrixXd::Zero(k, k);
    for (Eigen::Index j = 0; j < k; ++j) {
        const double gjj = G(j, j) * scale[j] * scale[j];
        if (!(gjj > 0)) {
            out.dropped.push_back(j);
            continue;
        }
        double pivot = gjj;
        const auto q_next = static_cast<Eigen::Index>(out.kept.size());
        for (Eigen::Index q = 0; q < q_next; ++q) {
            const Eigen::Index p = out.kept[static_cast<std::size_t>(q)];
            double s = G(j, p) * scale[j] * scale[p];
            for (Eigen::Index r = 0; r < q; ++r) s -= L(j, r) * L(p, r);
            L(j, q) = s / L(p, q);
            pivot -= L(j, q) * L(j, q);
        }
        if (pivot <= options.pivot_tol || !(pivot > 0)) {
            out.dropped.push_back(j);
            L.row(j).setZero();
            continue;
        }
        L(j, q_next) = std::sqrt(pivot);
        out.kept.push_back(j);
    }

    const auto m = static_cast<Eigen::Index>(out.kept.size());
    out.delta = Eigen::VectorXd::Zero(m);
    out.residuals = z_tilde;
    if (m == 0) return out;
    Eigen::MatrixXd Lk(m, m);
    Eigen::VectorXd bk(m);
    for (Eigen::Index a = 0; a < m; ++a) {
        const Eigen::Index ja = out.kept[static_cast<std::size_t>(a)];
        bk[a] = b[ja] * scale[ja];
        for (Eigen::Index c = 0; c < m; ++c) Lk(a, c) = L(ja, c);
    }
    Eigen::VectorXd tmp = Lk.triangularView<Eigen::Lower>().solve(bk);
    Eigen::VectorXd scaled = Lk.transpose().triangularView<Eigen::Upper>().solve(tmp);
    for (Eigen::Index a = 0; a < m; ++a) {
        const Eigen::Index ja = out.kept[static_cast<std::size_t>(a)];
        out.delta[a] = scaled[a] * scale[ja];
        out.residuals -= out.delta[a] * X_tilde.col(ja);
    }
    return out;
}

double deviance(const Eigen::VectorXd& y, const Eigen::VectorXd& mu, const Eigen::VectorXd& obs_weights) {
    double d = 0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        const double term = y[i] > 0 ? y[i] * std::log(y[i] / mu[i]) - (y[i] - mu[i]) : mu[i];
        d += obs_weights[i] * term;
    }
    return 2 * d;
}

double loglik(const Eigen::VectorXd& y, const Eigen::VectorXd& mu, const Eigen::VectorXd& obs_weights) {
    double ll = 0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        const double ylog = y[i] > 0 ? y[i] * std::log(mu[i]) : 0.0;
        ll += obs_weights[i] * (ylog - mu[i] - std::lgamma(y[i] + 1));
    }
    return ll;
}

FitResult irls_fit(const EstimationSample& sample, const IrlsOptions& options) {
    using clock = std::chrono::steady_clock;
    const auto started = clock::now();
    const auto& y = sample.y;
    const auto& obs_w = sample.weights;
    const auto n = y.size();
    const double tol = options.tolerance;

    if (sample.X.cols() == 0 && sample.fixed_effects.empty()) throw EstimationError("nothing to estimate");

    FitResult fit;
    fit.names = sample.x_names;
    Projector proj(sample.fixed_effects, options.projector);

    Eigen::VectorXd eta = initial_guess(sample, options.guess, options.projector);
    double dev_old = deviance(y, eta.array().exp().matrix(), obs_w);
    double rel_change = std::numeric_limits<double>::infinity();
    bool tighten = false;

    Eigen::VectorXd z_last, z_tilde, delta_old;
    Eigen::MatrixXd X_tilde;
    std::vector<Eigen::Index> kept;

    for (long r = 1; r <= options.max_iterations; ++r) {
        auto work = update_working(y, eta, sample.offset, obs_w);
        proj.set_weights(work.w);

        double inner_tol = tol;
        if (options.accelerate && !tighten)
            inner_tol = std::max(tol, std::min(options.start_inner_tol, 0.1 * rel_change));

        long sweeps = 0;
        if (r == 1 || !options.accelerate) {
            z_tilde = work.z;
            X_tilde = r == 1 ? sample.X : sample.X(Eigen::all, kept);
        } else {
            z_tilde += work.z - z_last;
        }
        Eigen::Map<Eigen::MatrixXd> z_col(z_tilde.data(), n, 1);
        sweeps = proj.project(z_col, inner_tol).sweeps;
        // Regressors are screened for collinearity on the first pass, which
        // needs a tight within-transformation.
        const double x_tol = r == 1 ? tol : inner_tol;
        sweeps = std::max(sweeps, proj.project(X_tilde, x_tol).sweeps);
        fit.ic2 += sweeps;

        WlsResult wls;
        if (r == 1) {
            Eigen::VectorXd ref = (sample.X.array().square().colwise() * work.w.array()).colwise().sum().transpose();
            WlsOptions wopt;
            wopt.pivot_tol = options.collinear_tol;
            wopt.reference_norms = &ref;
            wls = wls_solve(X_tilde, z_tilde, work.w, wopt);
            kept = wls.kept;
            fit.dropped = wls.dropped;
            X_tilde = Eigen::MatrixXd(X_tilde(Eigen::all, kept));
            if (kept.empty() && sample.fixed_effects.empty()) throw EstimationError("nothing to estimate");
            for (auto j : fit.dropped)
                emit(options.log, 1, "note: " + sample.x_names[static_cast<std::size_t>(j)] + " omitted because of collinearity");
        } else {
            WlsOptions wopt;
            wopt.pivot_tol = 1e-14;
            wls = wls_solve(X_tilde, z_tilde, work.w, wopt);
            if (!wls.dropped.empty())
                throw DivergenceError(
                    "regressors became collinear under the IRLS weights: the estimates do not exist, most likely "
                    "because of separated observations; enable separation checks (--separation fe,ir)");
        }

        Eigen::VectorXd eta_new = work.z - wls.residuals + sample.offset;
        if (!eta_new.allFinite()) throw DivergenceError("non-finite linear predictor; likely separated observations");
        const double eta_change = (eta_new - eta).cwiseAbs().maxCoeff();
        const double dev = deviance(y, eta_new.array().exp().matrix(), obs_w);
        rel_change = std::abs(dev - dev_old) / (1 + dev);
        const double coef_change =
            delta_old.size() == wls.delta.size() && wls.delta.size() > 0 && r > 1 ? (wls.delta - delta_old).cwiseAbs().maxCoeff() : 0.0;

        eta = eta_new;
        z_last = work.z;
        delta_old = wls.delta;
        dev_old = dev;
        fit.ic = r;
        fit.deviance_change = rel_change;
        fit.eta_change = eta_change;
        emit(options.log, 1,
             format("iter %3ld  deviance %.10e  rel.change %.3e  max|d eta| %.3e  max|d b| %.3e  inner tol %.1e  sweeps %ld",
                    r, dev, rel_change, eta_change, coef_change, inner_tol, sweeps));

        if (rel_change < tol) {
            if (inner_tol > tol) {
                tighten = true;  // finish with a full-precision within-transformation
            } else if (eta_change < kEtaStallLimit) {
                fit.converged = true;
                break;
            }
        }
    }

    if (fit.converged) {
        const double ybar = y.dot(obs_w) / obs_w.sum();
        const Eigen::VectorXd mu = eta.array().exp().matrix();
        long vanishing = 0;
        for (Eigen::Index i = 0; i < n; ++i) vanishing += y[i] == 0 && mu[i] < kMuZeroRatio * ybar;
        if (vanishing > 0)
            throw DivergenceError(std::to_string(vanishing) +
                                  " observations with y = 0 have fitted values of numerically zero: the estimates do "
                                  "not exist because of separated observations; enable separation checks "
                                  "(--separation fe,ir)");
    }

    // Final state: weights, residualized regressors and working residuals at
    // the solution (used for the variance matrix).
    auto final_work = update_working(y, eta, sample.offset, obs_w);
    proj.set_weights(final_work.w);
    if (X_tilde.cols() > 0) fit.ic2 += proj.project(X_tilde, tol).sweeps;

    fit.kept = kept;
    fit.delta = delta_old;
    fit.X_tilde = std::move(X_tilde);
    fit.eta = eta;
    fit.mu = final_work.mu;
    fit.w = final_work.w;
    fit.e = ((y - fit.mu).array() / fit.mu.array()).matrix();
    Eigen::MatrixXd X_kept = sample.X(Eigen::all, kept);
    fit.d = recover_fe_sum(eta, X_kept, fit.delta, sample.offset);
    fit.deviance = deviance(y, fit.mu, obs_w);
    fit.ll = loglik(y, fit.mu, obs_w);

    const double secs = std::chrono::duration<double>(clock::now() - started).count();
    emit(options.log, 4, format("irls: %ld iterations, %ld sweeps, %.3f s", fit.ic, fit.ic2, secs));
    return fit;
}

double fit_fe_only(const EstimationSample& sample, const IrlsOptions& options) {
    EstimationSample reduced = sample;
    const auto n = static_cast<Eigen::Index>(sample.rows());
    if (sample.has_intercept_term()) {
        reduced.X.resize(n, 0);
        reduced.x_names.clear();
        reduced.has_constant = false;
    } else {
        reduced.X = Eigen::MatrixXd::Ones(n, 1);
        reduced.x_names = {kConstantName};
        reduced.has_constant = true;
    }
    IrlsOptions quiet = options;
    quiet.log = nullptr;
    return irls_fit(reduced, quiet).ll;
}

}  // namespace ppmlhdfe
