#include "ppmlhdfe/estimate.hpp"

#include <cmath>

#include "ppmlhdfe/error.hpp"

namespace ppmlhdfe {

Estimation estimate(const RawTable& table, const ModelOptions& options) {
    Estimation est;
    est.absorb = parse_absorb(options.absorb, &table);

    SampleRequest request;
    request.depvar = options.depvar;
    request.indepvars = options.indepvars;
    request.absorb = est.absorb;
    request.weight = options.weight;
    request.exposure = options.exposure;
    request.offset = options.offset;
    if (options.vce.kind == VceSpec::Kind::cluster) request.cluster_vars = options.vce.cluster_vars;

    EstimationSample sample = build_sample(table, request);
    if (!options.keep_singletons) {
        auto s = drop_singletons(sample);
        sample = std::move(s.sample);
        est.num_singletons += s.num_singletons;
    }
    auto sep = run_separation(sample, options.separation, options.ir);
    sample = std::move(sep.sample);
    est.separation = std::move(sep.report);
    if (!options.keep_singletons && est.separation.num_separated() > 0) {
        auto s = drop_singletons(sample);
        sample = std::move(s.sample);
        est.num_singletons += s.num_singletons;
    }
    est.sample = std::move(sample);

    est.fit = irls_fit(est.sample, options.irls);
    est.dof = count_dof(est.sample);
    const auto n = static_cast<std::int64_t>(est.sample.rows());
    const auto k_eff = static_cast<std::int64_t>(est.fit.kept.size()) + est.dof.df_a;

    std::vector<std::int64_t> clusters_per_var;
    if (options.vce.kind == VceSpec::Kind::cluster) {
        auto cv = vce_cluster(est.fit.X_tilde, est.fit.e, est.fit.w, est.sample.clusters, n, k_eff);
        est.V = cv.V;
        est.psd_repaired = cv.psd_repaired;
        clusters_per_var = cv.clusters_per_var;
    } else {
        est.V = vce_robust(est.fit.X_tilde, est.fit.e, est.fit.w, n, k_eff);
    }
    est.ll_0 = est.fit.converged ? fit_fe_only(est.sample, options.irls) : std::nan("");

    SummaryInput in;
    in.sample = &est.sample;
    in.fit = &est.fit;
    in.dof = &est.dof;
    in.vce = options.vce;
    in.V = est.V;
    in.clusters_per_var = clusters_per_var;
    in.ll_0 = est.ll_0;
    in.num_singletons = est.num_singletons;
    in.num_separated = est.separation.num_separated();
    in.drop_singletons = !options.keep_singletons;
    in.eform = options.eform;
    in.cmdline = options.cmdline;
    in.separation = est.separation.methods;
    in.absvars = est.absorb.absvars();
    in.indepvars = options.indepvars;
    est.bundle = summarize(in);
    return est;
}

nlohmann::json results_document(const Estimation& est) {
    using nlohmann::json;
    json doc = to_json(est.bundle);

    auto rows_with = [&](DropReason reason) {
        json rows = json::array();
        for (std::size_t i = 0; i < est.sample.ledger.size(); ++i)
            if (est.sample.ledger[i] == reason) rows.push_back(i + 1);
        return rows;
    };
    json collinear = json::array();
    for (auto j : est.fit.dropped) collinear.push_back(est.fit.names[static_cast<std::size_t>(j)]);
    doc["ledgers"] = {{"missing", rows_with(DropReason::missing)},
                      {"singleton", rows_with(DropReason::singleton)},
                      {"separated", rows_with(DropReason::separated)},
                      {"collinear", collinear}};

    const auto& rep = est.separation;
    auto one_based = [](const std::vector<std::size_t>& rows) {
        json out = json::array();
        for (auto r : rows) out.push_back(r + 1);
        return out;
    };
    json sep = {{"methods", rep.methods},
                {"num_separated", rep.num_separated()},
                {"fe", one_based(rep.fe_rows)},
                {"ir", one_based(rep.ir_rows)},
                {"ir_iterations", rep.ir_iterations},
                {"ir_rounds", rep.ir_rounds},
                {"ir_converged", rep.ir_converged},
                {"notices", rep.notices}};
    if (rep.certificate.size() > 0) {
        json cert = json::array();
        for (Eigen::Index i = 0; i < rep.certificate.size(); ++i)
            cert.push_back({{"row", rep.certificate_rows[static_cast<std::size_t>(i)] + 1}, {"z", rep.certificate[i]}});
        sep["certificate"] = {{"verified", rep.certificate_verified}, {"values", cert}};
    }
    doc["separation"] = sep;
    doc["diagnostics"] = {{"converged", est.fit.converged},
                          {"deviance", est.fit.deviance},
                          {"last_relative_deviance_change", est.fit.deviance_change},
                          {"last_max_eta_change", est.fit.eta_change},
                          {"vce_psd_repaired", est.psd_repaired}};
    return doc;
}

}  // namespace ppmlhdfe
