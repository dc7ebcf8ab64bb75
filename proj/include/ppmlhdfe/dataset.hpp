#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ppmlhdfe/absorb.hpp"
#include "ppmlhdfe/table.hpp"

namespace ppmlhdfe {

enum class Role { response, covariate, factor, weight, offset_var, exposure_var, cluster_var, unused };

// A column may carry more than one role (a fixed-effect factor is often also
// the cluster variable).
struct ColumnSchema {
    std::string name;
    ColumnKind kind = ColumnKind::numeric;
    std::vector<Role> roles;
};

enum class DropReason : std::uint8_t { none, missing, singleton, separated };

const char* to_string(DropReason reason);

// An absorb term encoded over the current sample rows.
struct FixedEffect {
    AbsorbTerm term;
    std::vector<std::int32_t> codes;
    std::int32_t levels = 0;
    Eigen::VectorXd slope;  // empty for intercept terms

    bool is_slope() const { return slope.size() > 0; }
};

struct ClusterVar {
    std::string name;
    std::vector<std::int32_t> codes;
    std::int32_t groups = 0;
};

struct SampleRequest {
    std::string depvar;
    std::vector<std::string> indepvars;
    AbsorbSpec absorb;
    std::optional<std::string> weight;
    std::optional<std::string> exposure;
    std::optional<std::string> offset;
    std::vector<std::string> cluster_vars;
};

inline constexpr const char* kConstantName = "_cons";

// The regression sample. Immutable once built; dropping rows produces a new
// sample through subset().
struct EstimationSample {
    std::string depvar;
    std::vector<std::string> x_names;
    Eigen::VectorXd y;
    Eigen::MatrixXd X;
    std::vector<FixedEffect> fixed_effects;
    std::vector<ClusterVar> clusters;
    Eigen::VectorXd weights;
    Eigen::VectorXd offset;
    std::string offset_label;  // "" when no offset, "ln(v)" for exposure(v)
    bool has_constant = false;
    std::vector<std::size_t> row_ids;
    std::vector<DropReason> ledger;  // one entry per original file row

    std::size_t rows() const { return static_cast<std::size_t>(y.size()); }
    std::size_t original_rows() const { return ledger.size(); }
    std::size_t count(DropReason reason) const;
    bool has_intercept_term() const;

    // Keeps rows where keep[i] is true; the others are ledgered with `reason`.
    // Factor and cluster codes are re-densified.
    EstimationSample subset(const std::vector<bool>& keep, DropReason reason) const;
};

std::vector<ColumnSchema> make_schema(const RawTable& table, const SampleRequest& request);

// Listwise deletion over used columns, response/exposure validation, factor
// encoding. A constant column is appended when no intercept term is absorbed.
EstimationSample build_sample(const RawTable& table, const SampleRequest& request);

}  // namespace ppmlhdfe
