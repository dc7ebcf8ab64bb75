#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ppmlhdfe/estimate.hpp"

namespace ppmlhdfe::cli {

struct CliConfig {
    std::string input;
    std::string depvar;
    std::vector<std::string> indepvars;
    std::string absorb;
    std::optional<std::string> exposure;
    std::optional<std::string> offset;
    std::optional<std::string> weight;
    std::optional<std::string> d_name;  // "_ppmlhdfe_" when --d is given bare
    bool save_fe = false;
    std::optional<std::string> save_data;
    std::string vce = "robust";
    double tolerance = 1e-8;
    std::string guess = "simple";
    std::string separation = "fe,simplex,ir";
    long maxiter = 10000;
    bool keep_singletons = false;
    bool eform = false;
    int verbose = 0;
    bool nolog = false;
    std::optional<std::string> output;
    int threads = 1;
    bool accelerate = true;
    std::string projector = "aitken";
    double ir_tol = 1e-5;
    double ir_big_weight = 1e6;
    char delimiter = ',';
    bool header = true;
    std::string cmdline;
};

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Throws UsageError on bad or contradictory flags. --help prints to `out` and
// returns nullopt.
std::optional<CliConfig> parse_args(int argc, const char* const* argv, std::ostream& out);

ModelOptions model_options(const CliConfig& config, std::ostream& log_out);

// Coefficient table followed by the absorbed degrees-of-freedom table.
void print_results(std::ostream& out, const Estimation& est);

// Writes the input rows with the requested fixed-effect columns appended;
// cells outside the estimation sample are left empty.
void write_augmented(const std::string& path, const RawTable& table, const Estimation& est, const CliConfig& config);

// 0 ok, 2 usage error, 3 estimation failure or no convergence.
int run(const CliConfig& config, std::ostream& out, std::ostream& err);
int main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ppmlhdfe::cli
