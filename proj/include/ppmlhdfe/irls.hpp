#pragma once

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ppmlhdfe/dataset.hpp"
#include "ppmlhdfe/projector.hpp"

namespace ppmlhdfe {

enum class Guess { simple, ols };

// Log sink: level 1 iteration log, 2 projector detail, 3 separation trace,
// 4 timing.
using LogFn = std::function<void(int level, const std::string& message)>;

struct IrlsOptions {
    double tolerance = 1e-8;
    long max_iterations = 10000;
    Guess guess = Guess::simple;
    bool accelerate = true;
    double start_inner_tol = 1e-3;
    double collinear_tol = 1e-10;
    ProjectorOptions projector;
    LogFn log;
};

// |eta| beyond this is treated as divergence (exp overflows near 709).
inline constexpr double kEtaLimit = 700.0;

// Deviance convergence is only accepted once the largest change in the linear
// predictor over the last step is below this. Separated observations drift
// by about one unit per iteration while the deviance settles.
inline constexpr double kEtaStallLimit = 0.1;

// A converged fit where some y = 0 row has mu below this fraction of the mean
// response has not converged at all: the row's linear predictor stalled on
// its way to minus infinity once its weight fell below rounding level.
inline constexpr double kMuZeroRatio = 1e-10;

Eigen::VectorXd initial_guess_simple(const Eigen::VectorXd& y, const Eigen::VectorXd& weights);
Eigen::VectorXd initial_guess(const EstimationSample& sample, Guess method, const ProjectorOptions& projector = {});

struct WorkingValues {
    Eigen::VectorXd mu;
    Eigen::VectorXd z;  // (y - mu)/mu + eta - offset
    Eigen::VectorXd w;  // obs_weight * mu
};

WorkingValues update_working(const Eigen::VectorXd& y, const Eigen::VectorXd& eta, const Eigen::VectorXd& offset,
                             const Eigen::VectorXd& obs_weights);

struct WlsOptions {
    double pivot_tol = 1e-10;
    // Squared weighted norms the pivots are measured against, typically those
    // of the columns before within-transformation. Defaults to the columns'
    // own norms.
    const Eigen::VectorXd* reference_norms = nullptr;
};

struct WlsResult {
    Eigen::VectorXd delta;          // coefficients on the kept columns
    Eigen::VectorXd residuals;      // z_tilde - X_tilde[:, kept] delta
    std::vector<Eigen::Index> kept;
    std::vector<Eigen::Index> dropped;
};

// Weighted least squares through the normal equations. Columns are screened in
// their given order; a column whose Cholesky pivot (relative to its reference
// norm) is at most pivot_tol is dropped as collinear with earlier ones.
WlsResult wls_solve(const Eigen::MatrixXd& X_tilde, const Eigen::VectorXd& z_tilde, const Eigen::VectorXd& w,
                    const WlsOptions& options = {});

double deviance(const Eigen::VectorXd& y, const Eigen::VectorXd& mu, const Eigen::VectorXd& obs_weights);
double loglik(const Eigen::VectorXd& y, const Eigen::VectorXd& mu, const Eigen::VectorXd& obs_weights);

struct FitResult {
    std::vector<std::string> names;     // every regressor in the sample
    std::vector<Eigen::Index> kept;     // indices into names
    std::vector<Eigen::Index> dropped;  // collinear regressors
    Eigen::VectorXd delta;              // coefficients on kept regressors
    Eigen::MatrixXd X_tilde;            // kept regressors, within-transformed under w
    Eigen::VectorXd eta;
    Eigen::VectorXd mu;
    Eigen::VectorXd d;  // sum of the absorbed effects
    Eigen::VectorXd w;  // IRLS weights at the solution
    Eigen::VectorXd e;  // working residual (y - mu)/mu at the solution
    double deviance = 0;
    double ll = 0;
    long ic = 0;   // IRLS iterations
    long ic2 = 0;  // projector sweeps, summed over iterations
    bool converged = false;
    double deviance_change = 0;  // last relative deviance change
    double eta_change = 0;       // last max |delta eta|
};

// Accelerated HDFE-IRLS. The sample must already be free of singletons and
// separated observations. Throws DivergenceError when the linear predictor
// escapes; returns converged = false when max_iterations is reached.
FitResult irls_fit(const EstimationSample& sample, const IrlsOptions& options = {});

// Log-likelihood of the model with only the absorbed effects (a constant when
// nothing is absorbed).
double fit_fe_only(const EstimationSample& sample, const IrlsOptions& options = {});

}  // namespace ppmlhdfe
