#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ppmlhdfe/dataset.hpp"
#include "ppmlhdfe/error.hpp"

namespace ppmlhdfe {

enum class ProjectorMethod {
    aitken,              // symmetric sweeps, Irons-Tuck extrapolation every second sweep
    conjugate_gradient,  // CG on the symmetric sweep operator
};

struct ProjectorOptions {
    ProjectorMethod method = ProjectorMethod::aitken;
    long max_sweeps = 100000;
    int threads = 1;
};

struct ProjectResult {
    long sweeps = 0;  // sweep operator applications, max over columns
};

// Thrown when a column does not converge within max_sweeps. Carries the best
// iterate for every column.
class ProjectionError : public EstimationError {
public:
    ProjectionError(const std::string& what, Eigen::MatrixXd best)
        : EstimationError(what), best_(std::move(best)) {}
    const Eigen::MatrixXd& best() const { return best_; }

private:
    Eigen::MatrixXd best_;
};

// Weighted within-transformation with respect to every absorbed term.
//
// For an intercept term t the projection onto its span replaces each value by
// its weighted group mean; for a slope term by v_i times the group's weighted
// regression coefficient on v. One sweep applies the complementary
// projections forward over the terms and back again (Q1 Q2 .. QT .. Q2 Q1),
// which keeps the sweep operator symmetric in the weighted inner product.
//
// Projecting a vector c + d with d in the absorbed span gives the same result
// as projecting c, so any previous residualization is a valid warm start.
class Projector {
public:
    Projector(const std::vector<FixedEffect>& terms, ProjectorOptions options = {});

    void set_weights(const Eigen::VectorXd& w);
    const Eigen::VectorXd& weights() const { return weights_; }
    std::size_t num_terms() const { return terms_->size(); }
    const ProjectorOptions& options() const { return options_; }

    // Residualizes every column in place. Convergence: the largest absolute
    // change over one sweep, divided by the column's largest absolute value,
    // falls below `tol`.
    ProjectResult project(Eigen::Ref<Eigen::MatrixXd> columns, double tol) const;

    // Splits a vector in the absorbed span into per-term components (row level
    // values). The split is unique only up to the usual normalizations.
    std::vector<Eigen::VectorXd> decompose(const Eigen::VectorXd& d, double tol) const;

private:
    struct TermCache {
        std::vector<double> inv_denominator;  // per group, 0 for empty-span groups
    };

    void apply_term(std::size_t t, Eigen::Ref<Eigen::VectorXd> x, std::vector<double>& scratch) const;
    void sweep(Eigen::Ref<Eigen::VectorXd> x, std::vector<double>& scratch) const;
    long project_column(Eigen::Ref<Eigen::VectorXd> x, double tol, bool& converged) const;
    long project_column_cg(Eigen::Ref<Eigen::VectorXd> x, double tol, bool& converged) const;
    double dot(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const;

    const std::vector<FixedEffect>* terms_;
    ProjectorOptions options_;
    Eigen::VectorXd weights_;
    std::vector<TermCache> cache_;
    std::size_t max_levels_ = 0;
};

// Repeatedly removes rows that are alone in a group of some intercept term,
// until no such row is left. Returns the reduced sample.
struct SingletonResult {
    EstimationSample sample;
    std::size_t num_singletons = 0;
};
SingletonResult drop_singletons(const EstimationSample& sample);

struct DofTerm {
    std::string label;
    std::int64_t categories = 0;
    std::int64_t redundant = 0;
    bool nested = false;  // nested within a cluster variable; absorbs no dof
    bool exact = true;    // false when `redundant` is the conservative value
};

struct DofTable {
    std::vector<DofTerm> terms;
    std::int64_t df_a = 0;
    std::int64_t df_a_initial = 0;
    std::int64_t df_a_redundant = 0;
    std::string method = "firstpair";
};

// Degrees of freedom absorbed by the fixed effects. The first intercept term
// has no redundant categories; the next one loses one category per connected
// component of its bipartite graph with the first; later intercept terms are
// charged one redundant category (an upper bound on df_a). Terms whose groups
// each fall inside a single cluster absorb nothing.
DofTable count_dof(const EstimationSample& sample);

// Number of connected components of the bipartite graph linking the groups of
// two factors through shared rows.
std::int64_t bipartite_components(const std::vector<std::int32_t>& a, std::int32_t levels_a,
                                  const std::vector<std::int32_t>& b, std::int32_t levels_b);

// True when every group of `factor` falls inside one cluster.
bool nested_within(const std::vector<std::int32_t>& factor, std::int32_t levels,
                   const std::vector<std::int32_t>& cluster);

// d = eta - X delta - offset.
Eigen::VectorXd recover_fe_sum(const Eigen::VectorXd& eta, const Eigen::MatrixXd& X,
                               const Eigen::VectorXd& delta, const Eigen::VectorXd& offset);

}  // namespace ppmlhdfe
