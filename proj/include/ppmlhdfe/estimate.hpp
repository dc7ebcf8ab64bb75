#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "ppmlhdfe/absorb.hpp"
#include "ppmlhdfe/dataset.hpp"
#include "ppmlhdfe/inference.hpp"
#include "ppmlhdfe/irls.hpp"
#include "ppmlhdfe/projector.hpp"
#include "ppmlhdfe/separation.hpp"

namespace ppmlhdfe {

struct ModelOptions {
    std::string depvar;
    std::vector<std::string> indepvars;
    std::string absorb;
    std::optional<std::string> weight;
    std::optional<std::string> exposure;
    std::optional<std::string> offset;
    VceSpec vce;
    SeparationMethods separation;
    bool keep_singletons = false;
    bool eform = false;
    IrlsOptions irls;
    IrOptions ir;
    std::string cmdline;
};

struct Estimation {
    AbsorbSpec absorb;
    EstimationSample sample;  // final estimation sample
    std::size_t num_singletons = 0;
    SeparationReport separation;
    FitResult fit;
    DofTable dof;
    Eigen::MatrixXd V;  // over kept regressors
    bool psd_repaired = false;
    double ll_0 = 0;
    ResultsBundle bundle;
};

// load -> sample -> singletons -> separation -> IRLS -> variance -> results.
// A fit that hits the iteration limit is returned with fit.converged false.
Estimation estimate(const RawTable& table, const ModelOptions& options);

// Full results document: the saved results plus drop ledgers, the separation
// report and convergence diagnostics. Row numbers are 1-based file rows.
nlohmann::json results_document(const Estimation& est);

}  // namespace ppmlhdfe
