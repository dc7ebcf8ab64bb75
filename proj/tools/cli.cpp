#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "ppmlhdfe/error.hpp"

namespace ppmlhdfe::cli {

namespace {

std::string join_args(int argc, const char* const* argv) {
    std::string s;
    for (int i = 0; i < argc; ++i) {
        if (i) s += ' ';
        s += argv[i];
    }
    return s;
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string csv_field(const std::string& s, char delimiter) {
    if (s.find_first_of(std::string("\"\n\r") + delimiter) == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

}  // namespace

std::optional<CliConfig> parse_args(int argc, const char* const* argv, std::ostream& out) {
    CliConfig c;
    c.threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    c.cmdline = join_args(argc, argv);

    CLI::App app{"Poisson pseudo-maximum likelihood with high-dimensional fixed effects", "ppmlhdfe"};
    app.add_option("input", c.input, "Delimited data file with a header row")->required();
    app.add_option("depvar", c.depvar, "Response variable (nonnegative)")->required();
    app.add_option("indepvars", c.indepvars, "Regressors");
    app.add_option("--absorb,-a", c.absorb, "Absorbed effects, e.g. \"exp imp exp#c.t new=pair\"");
    auto* exposure = app.add_option("--exposure", c.exposure, "Exposure variable; ln(v) enters with coefficient 1");
    auto* offset = app.add_option("--offset", c.offset, "Offset variable with coefficient 1");
    exposure->excludes(offset);
    app.add_option("--weight", c.weight, "Frequency/importance weight variable");
    std::string d_value;
    auto* d_opt = app.add_option("--d", d_value, "Save the sum of the fixed effects (default name _ppmlhdfe_)")
                      ->expected(0, 1);
    app.add_flag("--save-fe", c.save_fe, "Save each absorbed effect (as name= or _hdfe#_)");
    app.add_option("--save-data", c.save_data, "Write the input with saved columns appended to this file");
    app.add_option("--vce", c.vce, "robust or cluster:v1[,v2...]");
    app.add_option("--tolerance", c.tolerance, "IRLS convergence tolerance")->check(CLI::PositiveNumber);
    app.add_option("--guess", c.guess, "Starting values")->check(CLI::IsMember({"simple", "ols"}));
    app.add_option("--separation", c.separation, "fe, simplex, ir, mu (comma separated) or none");
    app.add_option("--maxiter", c.maxiter, "Maximum IRLS iterations")->check(CLI::PositiveNumber);
    app.add_flag("--keepsingletons", c.keep_singletons, "Keep singleton groups");
    app.add_flag("--eform,--irr", c.eform, "Report exponentiated coefficients");
    app.add_option("--verbose", c.verbose, "-1 silent .. 4 everything")->check(CLI::Range(-1, 4));
    app.add_flag("--nolog", c.nolog, "Hide the iteration log");
    app.add_option("--output,-o", c.output, "Write the JSON results document here");
    app.add_option("--threads", c.threads, "Projector threads")->check(CLI::PositiveNumber);
    bool no_accelerate = false;
    app.add_flag("--no-accelerate", no_accelerate, "Solve every IRLS step to full tolerance from scratch");
    app.add_option("--projector", c.projector, "Within-transformation solver")
        ->check(CLI::IsMember({"aitken", "cg"}));
    app.add_option("--ir-tol", c.ir_tol, "Tolerance of the iterative rectifier")->check(CLI::PositiveNumber);
    app.add_option("--ir-big-weight", c.ir_big_weight, "Rectifier weight on y>0 rows, times n")
        ->check(CLI::PositiveNumber);
    std::string delimiter = ",";
    app.add_option("--delimiter", delimiter, "Field delimiter (single character or \\t)");
    bool no_header = false;
    app.add_flag("--no-header", no_header, "Input has no header row (columns named v1, v2, ...)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return std::nullopt;
    } catch (const CLI::ParseError& e) {
        throw UsageError(e.what());
    }

    if (d_opt->count() > 0) c.d_name = d_value.empty() ? "_ppmlhdfe_" : d_value;
    c.accelerate = !no_accelerate;
    c.header = !no_header;
    if (delimiter == "\\t") delimiter = "\t";
    if (delimiter.size() != 1) throw UsageError("--delimiter must be a single character");
    c.delimiter = delimiter[0];
    try {
        parse_vce(c.vce);
        parse_separation(c.separation);
        parse_absorb(c.absorb);
    } catch (const DataError& e) {
        throw UsageError(e.what());
    }
    if ((c.d_name || c.save_fe) && !c.save_data) throw UsageError("--d and --save-fe need --save-data");
    return c;
}

ModelOptions model_options(const CliConfig& c, std::ostream& log_out) {
    ModelOptions o;
    o.depvar = c.depvar;
    o.indepvars = c.indepvars;
    o.absorb = c.absorb;
    o.weight = c.weight;
    o.exposure = c.exposure;
    o.offset = c.offset;
    o.vce = parse_vce(c.vce);
    o.separation = parse_separation(c.separation);
    o.keep_singletons = c.keep_singletons;
    o.eform = c.eform;
    o.cmdline = c.cmdline;

    o.irls.tolerance = c.tolerance;
    o.irls.max_iterations = c.maxiter;
    o.irls.guess = c.guess == "ols" ? Guess::ols : Guess::simple;
    o.irls.accelerate = c.accelerate;
    o.irls.projector.method = c.projector == "cg" ? ProjectorMethod::conjugate_gradient : ProjectorMethod::aitken;
    o.irls.projector.threads = c.threads;
    o.ir.tol = c.ir_tol;
    o.ir.big_weight_factor = c.ir_big_weight;
    o.ir.projector = o.irls.projector;

    const int verbose = c.verbose;
    const bool nolog = c.nolog;
    LogFn log = [&log_out, verbose, nolog](int level, const std::string& msg) {
        if (level > verbose) return;
        if (level == 1 && nolog) return;
        log_out << msg << '\n';
    };
    if (verbose >= 1) {
        o.irls.log = log;
        o.ir.log = log;
    }
    return o;
}

void print_results(std::ostream& out, const Estimation& est) {
    const auto& b = est.bundle;
    auto scalar = [&](const char* k) {
        auto it = b.scalars.find(k);
        return it == b.scalars.end() ? std::nan("") : it->second;
    };
    const char* fmt_head = "%-44s%-21s= %12s\n";
    char line[256];
    out << '\n';
    std::snprintf(line, sizeof line, fmt_head, "HDFE PPML regression", "No. of obs", fmt("%.0f", scalar("N")).c_str());
    out << line;
    std::string absorbing = "Absorbing " + std::to_string(est.absorb.terms.size()) + " HDFE group" +
                            (est.absorb.terms.size() == 1 ? "" : "s");
    std::snprintf(line, sizeof line, fmt_head, absorbing.c_str(), "Residual df", fmt("%.0f", scalar("df")).c_str());
    out << line;
    std::string vce_label = est.bundle.macros.count("clustvar")
                                ? "Clustered SE (" + est.bundle.macros.at("clustvar") + ")"
                                : "Robust SE";
    std::snprintf(line, sizeof line, fmt_head, vce_label.c_str(),
                  ("Wald chi2(" + fmt("%.0f", scalar("df_m")) + ")").c_str(), fmt("%.2f", scalar("chi2")).c_str());
    out << line;
    std::snprintf(line, sizeof line, fmt_head, "", "Pseudo R2", fmt("%.4f", scalar("r2_p")).c_str());
    out << line;
    std::snprintf(line, sizeof line, fmt_head, ("Deviance = " + fmt("%.10g", scalar("deviance"))).c_str(),
                  "Log pseudolikelihood", fmt("%.4f", scalar("ll")).c_str());
    out << line;

    const std::string rule(78, '-');
    out << rule << '\n';
    std::snprintf(line, sizeof line, "%13s | %11s %11s %8s %7s %11s %11s\n", est.sample.depvar.substr(0, 13).c_str(),
                  b.eform ? "IRR" : "Coef.", "Std. Err.", "z", "P>|z|", "[95% Conf.", "Interval]");
    out << line << rule << '\n';
    for (const auto& c : b.table) {
        if (c.omitted) {
            std::snprintf(line, sizeof line, "%13s | %11s  (omitted)\n", c.name.substr(0, 13).c_str(), "0");
        } else {
            std::snprintf(line, sizeof line, "%13s | %11.6g %11.6g %8.2f %7.3f %11.6g %11.6g\n",
                          c.name.substr(0, 13).c_str(), c.b, c.se, c.z, c.p, c.lo, c.hi);
        }
        out << line;
    }
    out << rule << '\n';

    if (!est.dof.terms.empty()) {
        out << "\nAbsorbed degrees of freedom:\n";
        const std::string rule2(60, '-');
        out << rule2 << '\n';
        std::snprintf(line, sizeof line, "%20s | %10s %12s %12s\n", "Absorbed FE", "Categories", "- Redundant",
                      "= Num. Coefs");
        out << line << rule2 << '\n';
        bool any_nested = false, any_inexact = false;
        for (const auto& t : est.dof.terms) {
            std::string mark = t.nested ? " *" : (!t.exact ? " ?" : "");
            any_nested |= t.nested;
            any_inexact |= !t.exact;
            std::snprintf(line, sizeof line, "%20s | %10lld %12lld %12lld%s\n", t.label.substr(0, 20).c_str(),
                          static_cast<long long>(t.categories), static_cast<long long>(t.redundant),
                          static_cast<long long>(t.categories - t.redundant), mark.c_str());
            out << line;
        }
        out << rule2 << '\n';
        if (any_nested) out << "* = FE nested within cluster; treated as redundant for DoF computation\n";
        if (any_inexact) out << "? = number of redundant parameters may be higher\n";
    }

    for (const auto& n : est.separation.notices) out << "note: " << n << '\n';
    if (est.num_singletons > 0)
        out << "(dropped " << est.num_singletons << " singleton observation"
            << (est.num_singletons == 1 ? "" : "s") << ")\n";
    if (est.separation.num_separated() > 0)
        out << "(dropped " << est.separation.num_separated() << " observation"
            << (est.separation.num_separated() == 1 ? " that is" : "s that are") << " separated)\n";
    if (!est.fit.dropped.empty()) {
        out << "(omitted because of collinearity:";
        for (auto j : est.fit.dropped) out << ' ' << est.fit.names[static_cast<std::size_t>(j)];
        out << ")\n";
    }
}

void write_augmented(const std::string& path, const RawTable& table, const Estimation& est, const CliConfig& config) {
    std::vector<std::string> names;
    std::vector<Eigen::VectorXd> values;  // over sample rows

    const auto n = static_cast<Eigen::Index>(est.sample.rows());
    Eigen::VectorXd d = est.fit.d.size() == n ? est.fit.d : Eigen::VectorXd::Zero(n);
    if (config.d_name) {
        names.push_back(*config.d_name);
        values.push_back(d);
    }
    const auto& terms = est.sample.fixed_effects;
    bool any_named = std::any_of(terms.begin(), terms.end(), [](const FixedEffect& f) { return f.term.save_as; });
    if (!terms.empty() && (config.save_fe || any_named)) {
        Projector projector(terms, {});
        projector.set_weights(est.fit.w.size() == n ? est.fit.w : Eigen::VectorXd::Ones(n));
        auto parts = projector.decompose(d, 1e-12);
        for (std::size_t t = 0; t < terms.size(); ++t) {
            if (terms[t].term.save_as) {
                names.push_back(*terms[t].term.save_as);
            } else if (config.save_fe) {
                names.push_back("_hdfe" + std::to_string(t + 1) + "_");
            } else {
                continue;
            }
            values.push_back(parts[t]);
        }
    }
    for (const auto& nm : names)
        if (table.find(nm)) throw DataError("variable '" + nm + "' already exists");

    std::vector<Eigen::Index> sample_pos(table.rows, -1);
    for (std::size_t i = 0; i < est.sample.row_ids.size(); ++i)
        sample_pos[est.sample.row_ids[i]] = static_cast<Eigen::Index>(i);

    std::ofstream f(path);
    if (!f) throw DataError("cannot write file '" + path + "'");
    const char dl = config.delimiter;
    bool first = true;
    for (const auto& col : table.columns) {
        if (!first) f << dl;
        f << csv_field(col.name, dl);
        first = false;
    }
    for (const auto& nm : names) f << (first ? "" : std::string(1, dl)) << csv_field(nm, dl), first = false;
    f << '\n';
    char buf[64];
    for (std::size_t r = 0; r < table.rows; ++r) {
        first = true;
        for (const auto& col : table.columns) {
            if (!first) f << dl;
            f << csv_field(col.text[r], dl);
            first = false;
        }
        for (const auto& v : values) {
            if (!first) f << dl;
            first = false;
            if (sample_pos[r] >= 0) {
                std::snprintf(buf, sizeof buf, "%.17g", v[sample_pos[r]]);
                f << buf;
            }
        }
        f << '\n';
    }
}

int run(const CliConfig& config, std::ostream& out, std::ostream& err) {
    std::ostream null_stream(nullptr);
    std::ostream& text = config.verbose < 0 ? null_stream : out;
    try {
        LoadOptions lo;
        lo.delimiter = config.delimiter;
        lo.header = config.header;
        RawTable table = load_table(config.input, lo);
        ModelOptions options = model_options(config, text);
        Estimation est = estimate(table, options);

        print_results(text, est);
        if (config.output) {
            std::ofstream f(*config.output);
            if (!f) throw DataError("cannot write file '" + *config.output + "'");
            f << results_document(est).dump(2) << '\n';
        }
        if (config.save_data) write_augmented(*config.save_data, table, est, config);
        if (!est.fit.converged) {
            err << "error: convergence not achieved after " << est.fit.ic << " iterations (last relative deviance change "
                << est.fit.deviance_change << ", max eta change " << est.fit.eta_change << ")\n";
            return 3;
        }
        return 0;
    } catch (const DataError& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    } catch (const DivergenceError& e) {
        err << "error: " << e.what() << '\n';
        return 3;
    } catch (const EstimationError& e) {
        err << "error: " << e.what() << '\n';
        return 3;
    }
}

int main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    try {
        auto config = parse_args(argc, argv, out);
        if (!config) return 0;
        return run(*config, out, err);
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n(run with --help for the option list)\n";
        return 2;
    }
}

}  // namespace ppmlhdfe::cli
