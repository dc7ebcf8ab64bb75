#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "ppmlhdfe/dataset.hpp"
#include "ppmlhdfe/irls.hpp"
#include "ppmlhdfe/projector.hpp"

namespace ppmlhdfe {

// Requested checks. `simplex` and `mu` are accepted names without an
// implementation; requesting them only produces a notice.
struct SeparationMethods {
    bool fe = true;
    bool simplex = true;
    bool ir = true;
    bool mu = false;

    bool none() const { return !fe && !simplex && !ir && !mu; }
    std::string to_string() const;  // "fe simplex ir", or "none"
};

// Accepts a comma and/or space separated list of fe, ir, simplex, mu, or none.
SeparationMethods parse_separation(std::string_view text);

struct IrOptions {
    double tol = 1e-5;
    long max_iterations = 10000;
    double big_weight_factor = 1e6;  // weight on y > 0 rows is factor * n
    ProjectorOptions projector;
    LogFn log;
};

// Rows in a group of some intercept term whose response sums to zero,
// repeated until no such group is left.
std::vector<bool> check_fe(const EstimationSample& sample);

struct IrResult {
    std::vector<bool> flagged;
    Eigen::VectorXd certificate;  // fitted zhat at the fixed point; empty if none
    long iterations = 0;
    bool converged = true;
};

// Iterative rectifier. Regresses an artificial response u (zero where y > 0)
// on the regressors and absorbed effects, with a very large weight on the
// y > 0 rows, then replaces u by max(fit, 0) on the y = 0 rows until the fit
// is nonnegative. The fit is then a certificate z = X gamma + D alpha with
// z = 0 where y > 0 and z >= 0 elsewhere; its positive entries are separated.
IrResult check_ir(const EstimationSample& sample, const IrOptions& options = {});

// Checks that zhat is (numerically) in the span of the regressors and
// absorbed effects, vanishes where y > 0, is nonnegative where y = 0 and is
// positive somewhere.
bool verify_certificate(const EstimationSample& sample, const Eigen::VectorXd& zhat, double tol = 1e-5);

struct SeparationReport {
    std::string methods;
    std::vector<std::size_t> fe_rows;  // original row ids
    std::vector<std::size_t> ir_rows;
    std::vector<std::size_t> separated_rows;
    Eigen::VectorXd certificate;                 // first round's, over certificate_rows
    std::vector<std::size_t> certificate_rows;   // row ids of the sample the ir check ran on
    bool certificate_verified = false;
    long ir_iterations = 0;  // summed over rounds
    long ir_rounds = 0;
    bool ir_converged = true;
    std::vector<std::string> notices;

    std::size_t num_separated() const { return separated_rows.size(); }
};

struct SeparationOutcome {
    EstimationSample sample;
    SeparationReport report;
};

// Applies fe, then ir. Dropped rows are ledgered as `separated`.
SeparationOutcome run_separation(const EstimationSample& sample, const SeparationMethods& methods,
                                 const IrOptions& options = {});

}  // namespace ppmlhdfe
