#pragma once

// Test-only reference implementations: dense Poisson MLE with explicit dummy
// columns and an LP-based separation check. Slow and exact; n stays small.

#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ppmlhdfe/dataset.hpp"

namespace oracle {

struct DenseProblem {
    Eigen::VectorXd y;
    Eigen::MatrixXd A;  // dummies first, then regressors; dependent columns removed
    std::vector<std::string> names;
    Eigen::VectorXd offset;
    Eigen::VectorXd weights;
};

// Explicit design: one dummy per level of the first intercept term, all
// levels but a reference one for later intercept terms, one v-column per
// group for slope terms, then the regressors. Columns linearly dependent on
// earlier ones are removed.
DenseProblem dense_problem(const ppmlhdfe::EstimationSample& sample, bool reference_last = false);

struct DenseFit {
    Eigen::VectorXd beta;
    Eigen::VectorXd mu;
    double ll = 0;
    double deviance = 0;
    Eigen::MatrixXd V_robust;  // n/(n-p) * H^-1 S H^-1
    int iterations = 0;
    bool converged = false;

    // Coefficient on a named column, NaN when it was removed.
    double coef(const DenseProblem& p, const std::string& name) const;
    double se(const DenseProblem& p, const std::string& name) const;
    double cov(const DenseProblem& p, const std::string& a, const std::string& b) const;
};

// Newton-Raphson with step halving until max |gradient| <= 1e-10 * (1 + sum w y).
// converged is false when the MLE does not exist (a y = 0 row's fitted value
// vanishes).
DenseFit dense_poisson_mle(const DenseProblem& problem, int max_iterations = 500);

// Rows i with y_i = 0 for which max z_i subject to z = A gamma, z = 0 where
// y > 0, 0 <= z <= 1 where y = 0 is positive. One LP per candidate row.
std::set<Eigen::Index> brute_force_separation(const Eigen::VectorXd& y, const Eigen::MatrixXd& A);

// Small dense LP: maximize c'x subject to M x <= b, x >= 0, with b >= 0.
// Bland's rule. Returns the optimal value (the problems here are bounded).
double simplex_max(const Eigen::VectorXd& c, const Eigen::MatrixXd& M, const Eigen::VectorXd& b);

}  // namespace oracle
