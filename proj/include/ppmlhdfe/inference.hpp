#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "ppmlhdfe/dataset.hpp"
#include "ppmlhdfe/irls.hpp"
#include "ppmlhdfe/projector.hpp"

namespace ppmlhdfe {

struct VceSpec {
    enum class Kind { robust, cluster };
    Kind kind = Kind::robust;
    std::vector<std::string> cluster_vars;

    std::string to_string() const;  // "robust" or "cluster a b"
};

// "robust" or "cluster:v1[,v2...]".
VceSpec parse_vce(std::string_view text);

// (X' W X)^-1 over the kept regressors.
Eigen::MatrixXd bread(const Eigen::MatrixXd& X_tilde, const Eigen::VectorXd& w);

// q * B M B with M = sum_i (w_i e_i)^2 x_i x_i' and q = n / (n - k_effective).
Eigen::MatrixXd vce_robust(const Eigen::MatrixXd& X_tilde, const Eigen::VectorXd& e, const Eigen::VectorXd& w,
                           std::int64_t n, std::int64_t k_effective);

// Sum over clusters g of s_g s_g' where s_g = sum_{i in g} w_i e_i x_i.
Eigen::MatrixXd cluster_meat(const Eigen::MatrixXd& X_tilde, const Eigen::VectorXd& e, const Eigen::VectorXd& w,
                             const std::vector<std::int32_t>& codes, std::int32_t groups);

// Dense codes for the intersection of several cluster variables.
EncodedFactor intersect_codes(const std::vector<const ClusterVar*>& vars);

struct ClusterVce {
    Eigen::MatrixXd V;      // after the positive semidefinite repair
    Eigen::MatrixXd V_raw;  // inclusion-exclusion sum
    std::vector<std::int64_t> clusters_per_var;
    bool psd_repaired = false;
};

// Multi-way clustering by inclusion-exclusion over nonempty subsets S of the
// cluster variables, each term scaled by G_S/(G_S-1) * (n-1)/(n-k_effective).
// Negative eigenvalues of the sum are set to zero.
ClusterVce vce_cluster(const Eigen::MatrixXd& X_tilde, const Eigen::VectorXd& e, const Eigen::VectorXd& w,
                       const std::vector<ClusterVar>& clusters, std::int64_t n, std::int64_t k_effective);

struct Coefficient {
    std::string name;
    bool omitted = false;
    double b = 0, se = 0, z = 0, p = 0, lo = 0, hi = 0;  // b, lo, hi exponentiated in eform mode
};

struct SummaryInput {
    const EstimationSample* sample = nullptr;
    const FitResult* fit = nullptr;
    const DofTable* dof = nullptr;
    VceSpec vce;
    Eigen::MatrixXd V;  // over kept regressors
    std::vector<std::int64_t> clusters_per_var;
    double ll_0 = 0;
    std::size_t num_singletons = 0;
    std::size_t num_separated = 0;
    bool drop_singletons = true;
    bool eform = false;
    std::string cmdline;
    std::string separation;
    std::string absvars;
    std::vector<std::string> indepvars;
};

struct ResultsBundle {
    std::map<std::string, double> scalars;
    std::map<std::string, std::string> macros;
    std::vector<std::string> names;  // every regressor; omitted ones carry zeros
    std::vector<bool> omitted;
    Eigen::VectorXd b;
    Eigen::MatrixXd V;
    DofTable dof;
    std::vector<Coefficient> table;
    bool eform = false;
    std::vector<int> sample;  // 1 for rows in the estimation sample, per original row
};

ResultsBundle summarize(const SummaryInput& input);

// Results document, schema "ppmlhdfe-results/1".
nlohmann::json to_json(const ResultsBundle& bundle);

}  // namespace ppmlhdfe
