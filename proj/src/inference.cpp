#include "ppmlhdfe/inference.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "ppmlhdfe/error.hpp"

namespace ppmlhdfe {

std::string VceSpec::to_string() const {
    if (kind == Kind::robust) return "robust";
    std::string out = "cluster";
    for (const auto& v : cluster_vars) out += " " + v;
    return out;
}

VceSpec parse_vce(std::string_view text) {
    VceSpec spec;
    if (text == "robust" || text == "r") return spec;
    const std::string_view prefixes[] = {"cluster:", "cl:"};
    for (auto prefix : prefixes) {
        if (!text.starts_with(prefix)) continue;
        spec.kind = VceSpec::Kind::cluster;
        std::string_view rest = text.substr(prefix.size());
        std::string cur;
        for (char c : rest) {
            if (c == ',' || c == ' ') {
                if (!cur.empty()) spec.cluster_vars.push_back(cur);
                cur.clear();
            } else {
                cur.push_back(c);
            }
        }
        if (!cur.empty()) spec.cluster_vars.push_back(cur);
        if (spec.cluster_vars.empty()) throw DataError("vce cluster needs at least one cluster variable");
        return spec;
    }
    throw DataError("unknown vce '" + std::string(text) + "'; expected robust or cluster:v1[,v2...]");
}

Eigen::MatrixXd bread(const Eigen::MatrixXd& X_tilde, const Eigen::VectorXd& w) {
    const auto k = X_tilde.cols();
    if (k == 0) return Eigen::MatrixXd(0, 0);
    Eigen::MatrixXd G = X_tilde.transpose() * (X_tilde.array().colwise() * w.array()).matrix();
    Eigen::LLT<Eigen::MatrixXd> llt(G);
    if (llt.info() != Eigen::Success) throw EstimationError("singular weighted Gram matrix");
    return llt.solve(Eigen::MatrixXd::Identity(k, k));
}

namespace {

Eigen::MatrixXd scores(const Eigen::MatrixXd& X_tilde, const Eigen::VectorXd& e, const Eigen::VectorXd& w) {
    return X_tilde.array().colwise() * (w.array() * e.array());
}

Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& m) { return (m + m.transpose()) / 2; }

}  // namespace

Eigen::MatrixXd vce_robust(const Eigen::MatrixXd& X_tilde, const Eigen::VectorXd& e, const Eigen::VectorXd& w,
                           std::int64_t n, std::int64_t k_effective) {
    if (X_tilde.cols() == 0) return Eigen::MatrixXd(0, 0);
    if (n - k_effective <= 0) throw EstimationError("no residual degrees of freedom");
    const Eigen::MatrixXd B = bread(X_tilde, w);
    const Eigen::MatrixXd S = scores(X_tilde, e, w);
    const Eigen::MatrixXd M = S.transpose() * S;
    const double q = static_cast<double>(n) / static_cast<double>(n - k_effective);
    return symmetrize(q * B * M * B);
}

Eigen::MatrixXd cluster_meat(const Eigen::MatrixXd& X_tilde, const Eigen::VectorXd& e, const Eigen::VectorXd& w,
                             const std::vector<std::int32_t>& codes, std::int32_t groups) {
    const Eigen::MatrixXd S = scores(X_tilde, e, w);
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(groups, X_tilde.cols());
    for (Eigen::Index i = 0; i < S.rows(); ++i) sums.row(codes[static_cast<std::size_t>(i)]) += S.row(i);
    return sums.transpose() * sums;
}

EncodedFactor intersect_codes(const std::vector<const ClusterVar*>& vars) {
    EncodedFactor acc{vars.front()->codes, vars.front()->groups};
    for (std::size_t k = 1; k < vars.size(); ++k) {
        const auto& next = *vars[k];
        std::unordered_map<std::int64_t, std::int32_t> map;
        std::vector<std::int32_t> codes(acc.codes.size());
        std::vector<std::int64_t> keys(acc.codes.size());
        for (std::size_t i = 0; i < codes.size(); ++i)
            keys[i] = static_cast<std::int64_t>(acc.codes[i]) * next.groups + next.codes[i];
        std::vector<std::int64_t> sorted = keys;
        std::sort(sorted.begin(), sorted.end());
        sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
        for (std::size_t g = 0; g < sorted.size(); ++g) map.emplace(sorted[g], static_cast<std::int32_t>(g));
        for (std::size_t i = 0; i < codes.size(); ++i) codes[i] = map.at(keys[i]);
        acc = EncodedFactor{std::move(codes), static_cast<std::int32_t>(sorted.size())};
    }
    return acc;
}

ClusterVce vce_cluster(const Eigen::MatrixXd& X_tilde, const Eigen::VectorXd& e, const Eigen::VectorXd& w,
                       const std::vector<ClusterVar>& clusters, std::int64_t n, std::int64_t k_effective) {
    ClusterVce out;
    if (clusters.empty()) throw DataError("vce cluster needs at least one cluster variable");
    for (const auto& c : clusters) {
        if (c.groups < 2) throw DataError("need >=2 clusters in cluster variable '" + c.name + "'");
        out.clusters_per_var.push_back(c.groups);
    }
    const auto k = X_tilde.cols();
    out.V_raw = Eigen::MatrixXd::Zero(k, k);
    out.V = out.V_raw;
    if (k == 0) return out;
    if (n - k_effective <= 0) throw EstimationError("no residual degrees of freedom");

    const Eigen::MatrixXd B = bread(X_tilde, w);
    const std::size_t m = clusters.size();
    for (std::size_t mask = 1; mask < (std::size_t{1} << m); ++mask) {
        std::vector<const ClusterVar*> subset;
        for (std::size_t j = 0; j < m; ++j)
            if (mask & (std::size_t{1} << j)) subset.push_back(&clusters[j]);
        const auto groups = intersect_codes(subset);
        const Eigen::MatrixXd M = cluster_meat(X_tilde, e, w, groups.codes, groups.levels);
        const double G = groups.levels;
        const double q = G > 1 ? G / (G - 1) * (static_cast<double>(n - 1) / static_cast<double>(n - k_effective))
                               : 0.0;
        const double sign = subset.size() % 2 == 1 ? 1.0 : -1.0;
        out.V_raw += sign * q * B * M * B;
    }
    out.V_raw = symmetrize(out.V_raw);
    out.V = out.V_raw;
    if (m > 1) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(out.V_raw);
        Eigen::VectorXd vals = eig.eigenvalues();
        if (vals.minCoeff() < 0) {
            out.psd_repaired = true;
            vals = vals.cwiseMax(0.0);
            out.V = symmetrize(eig.eigenvectors() * vals.asDiagonal() * eig.eigenvectors().transpose());
        }
    }
    return out;
}

namespace {

double normal_two_sided_p(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

constexpr double kZ975 = 1.959963984540054;

}  // namespace

ResultsBundle summarize(const SummaryInput& in) {
    const auto& sample = *in.sample;
    const auto& fit = *in.fit;
    const auto& dof = *in.dof;
    ResultsBundle out;
    out.eform = in.eform;
    out.dof = dof;
    out.names = fit.names;

    const auto k_all = static_cast<Eigen::Index>(fit.names.size());
    out.b = Eigen::VectorXd::Zero(k_all);
    out.V = Eigen::MatrixXd::Zero(k_all, k_all);
    out.omitted.assign(fit.names.size(), true);
    for (std::size_t a = 0; a < fit.kept.size(); ++a) {
        const auto ja = fit.kept[a];
        out.omitted[static_cast<std::size_t>(ja)] = false;
        out.b[ja] = fit.delta[static_cast<Eigen::Index>(a)];
        for (std::size_t c = 0; c < fit.kept.size(); ++c)
            out.V(ja, fit.kept[c]) = in.V(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(c));
    }

    for (Eigen::Index j = 0; j < k_all; ++j) {
        Coefficient c;
        c.name = fit.names[static_cast<std::size_t>(j)];
        c.omitted = out.omitted[static_cast<std::size_t>(j)];
        if (!c.omitted) {
            c.b = out.b[j];
            c.se = std::sqrt(std::max(out.V(j, j), 0.0));
            c.z = c.se > 0 ? c.b / c.se : std::nan("");
            c.p = c.se > 0 ? normal_two_sided_p(c.z) : std::nan("");
            c.lo = c.b - kZ975 * c.se;
            c.hi = c.b + kZ975 * c.se;
            if (in.eform) {
                c.b = std::exp(c.b);
                c.lo = std::exp(c.lo);
                c.hi = std::exp(c.hi);
            }
        }
        out.table.push_back(c);
    }

    // Wald statistic over kept coefficients other than the constant.
    std::vector<Eigen::Index> tested;
    for (std::size_t a = 0; a < fit.kept.size(); ++a)
        if (!(sample.has_constant && fit.names[static_cast<std::size_t>(fit.kept[a])] == kConstantName))
            tested.push_back(static_cast<Eigen::Index>(a));
    double chi2 = 0;
    if (!tested.empty()) {
        Eigen::VectorXd bt = fit.delta(tested);
        Eigen::MatrixXd Vt = in.V(tested, tested);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Vt);
        const double cut = std::max(eig.eigenvalues().cwiseAbs().maxCoeff(), 1e-300) * 1e-12;
        Eigen::VectorXd proj = eig.eigenvectors().transpose() * bt;
        for (Eigen::Index i = 0; i < proj.size(); ++i)
            if (eig.eigenvalues()[i] > cut) chi2 += proj[i] * proj[i] / eig.eigenvalues()[i];
    }

    const auto N = static_cast<std::int64_t>(sample.rows());
    const auto rank = static_cast<std::int64_t>(fit.kept.size());
    const std::int64_t k_eff = rank + dof.df_a;
    const bool clustered = in.vce.kind == VceSpec::Kind::cluster;
    std::int64_t n_clust = 0;
    if (clustered) n_clust = *std::min_element(in.clusters_per_var.begin(), in.clusters_per_var.end());
    const std::int64_t df = clustered ? n_clust - 1 : N - k_eff;
    const double rss = (sample.weights.array() * (sample.y - fit.mu).array().square()).sum();
    std::int64_t n_intercepts = 0;
    for (const auto& fe : sample.fixed_effects) n_intercepts += fe.is_slope() ? 0 : 1;

    auto& s = out.scalars;
    s["N"] = static_cast<double>(N);
    s["num_singletons"] = static_cast<double>(in.num_singletons);
    s["num_separated"] = static_cast<double>(in.num_separated);
    s["N_full"] = static_cast<double>(sample.original_rows());
    s["drop_singletons"] = in.drop_singletons ? 1 : 0;
    s["rank"] = static_cast<double>(rank);
    s["df"] = static_cast<double>(df);
    s["df_m"] = static_cast<double>(tested.size());
    s["df_a"] = static_cast<double>(dof.df_a);
    s["df_a_initial"] = static_cast<double>(dof.df_a_initial);
    s["df_a_redundant"] = static_cast<double>(dof.df_a_redundant);
    s["N_hdfe"] = static_cast<double>(n_intercepts);
    s["N_hdfe_extended"] = static_cast<double>(sample.fixed_effects.size());
    s["rss"] = rss;
    s["rmse"] = df > 0 ? std::sqrt(rss / static_cast<double>(df)) : std::nan("");
    s["chi2"] = chi2;
    s["r2_p"] = 1 - fit.ll / in.ll_0;
    s["ll"] = fit.ll;
    s["ll_0"] = in.ll_0;
    s["N_clustervars"] = static_cast<double>(clustered ? in.vce.cluster_vars.size() : 0);
    if (clustered) {
        s["N_clust"] = static_cast<double>(n_clust);
        for (std::size_t j = 0; j < in.clusters_per_var.size(); ++j)
            s["N_clust" + std::to_string(j + 1)] = static_cast<double>(in.clusters_per_var[j]);
    }
    s["ic"] = static_cast<double>(fit.ic);
    s["ic2"] = static_cast<double>(fit.ic2);
    s["converged"] = fit.converged ? 1 : 0;
    s["deviance"] = fit.deviance;

    auto& m = out.macros;
    std::string indep;
    for (const auto& v : in.indepvars) indep += (indep.empty() ? "" : " ") + v;
    m["cmd"] = "ppmlhdfe";
    m["cmdline"] = in.cmdline;
    m["separation"] = in.separation;
    m["dofmethod"] = dof.method;
    m["depvar"] = sample.depvar;
    m["indepvars"] = indep;
    m["absvars"] = in.absvars.empty() ? "_cons" : in.absvars;
    m["extended_absvars"] = in.absvars.empty() ? "_cons" : in.absvars;
    m["title"] = "HDFE PPML regression";
    m["vce"] = clustered ? "cluster" : "robust";
    m["chi2type"] = "Wald";
    m["offset"] = sample.offset_label;
    m["properties"] = "b V";
    m["predict"] = "ppmlhdfe_p";
    m["estat_cmd"] = "reghdfe_estat";
    m["marginsok"] = "Mu XB XBD default";
    m["marginsnotok"] = "D";
    m["footnote"] = "reghdfe_footnote";
    if (clustered) {
        std::string all;
        for (std::size_t j = 0; j < in.vce.cluster_vars.size(); ++j) {
            m["clustvar" + std::to_string(j + 1)] = in.vce.cluster_vars[j];
            all += (all.empty() ? "" : " ") + in.vce.cluster_vars[j];
        }
        m["clustvar"] = all;
    }

    out.sample.assign(sample.original_rows(), 0);
    for (auto r : sample.row_ids) out.sample[r] = 1;
    return out;
}

nlohmann::json to_json(const ResultsBundle& bundle) {
    using nlohmann::json;
    json doc;
    doc["schema"] = "ppmlhdfe-results/1";
    doc["scalars"] = json::object();
    for (const auto& [k, v] : bundle.scalars) doc["scalars"][k] = v;
    doc["macros"] = json::object();
    for (const auto& [k, v] : bundle.macros) doc["macros"][k] = v;

    json b = json::object();
    json V = json::array();
    for (std::size_t j = 0; j < bundle.names.size(); ++j) {
        b[bundle.names[j]] = bundle.b[static_cast<Eigen::Index>(j)];
        json row = json::array();
        for (std::size_t c = 0; c < bundle.names.size(); ++c)
            row.push_back(bundle.V(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(c)));
        V.push_back(std::move(row));
    }
    json dof = json::array();
    for (const auto& t : bundle.dof.terms)
        dof.push_back({{"absvar", t.label},
                       {"categories", t.categories},
                       {"redundant", t.redundant},
                       {"num_coefs", t.categories - t.redundant},
                       {"nested", t.nested},
                       {"exact", t.exact}});
    doc["matrices"] = {{"names", bundle.names}, {"b", b}, {"V", V}, {"dof_table", dof}};

    json table = json::array();
    for (const auto& c : bundle.table)
        table.push_back({{"name", c.name},
                         {"omitted", c.omitted},
                         {"b", c.b},
                         {"se", c.se},
                         {"z", c.z},
                         {"p", c.p},
                         {"ci_low", c.lo},
                         {"ci_high", c.hi}});
    doc["coefficients"] = {{"eform", bundle.eform}, {"rows", table}};
    doc["sample"] = bundle.sample;
    return doc;
}

}  // namespace ppmlhdfe
