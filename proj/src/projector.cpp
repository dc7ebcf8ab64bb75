#include "ppmlhdfe/projector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

namespace ppmlhdfe {

namespace {

double max_abs(const Eigen::Ref<const Eigen::VectorXd>& v) {
    return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff();
}

}  // namespace

Projector::Projector(const std::vector<FixedEffect>& terms, ProjectorOptions options)
    : terms_(&terms), options_(options) {
    for (const auto& fe : terms) max_levels_ = std::max(max_levels_, static_cast<std::size_t>(fe.levels));
    if (!terms.empty()) set_weights(Eigen::VectorXd::Ones(static_cast<Eigen::Index>(terms.front().codes.size())));
}

void Projector::set_weights(const Eigen::VectorXd& w) {
    weights_ = w;
    cache_.assign(terms_->size(), {});
    for (std::size_t t = 0; t < terms_->size(); ++t) {
        const auto& fe = (*terms_)[t];
        auto& inv = cache_[t].inv_denominator;
        inv.assign(static_cast<std::size_t>(fe.levels), 0.0);
        const auto n = static_cast<Eigen::Index>(fe.codes.size());
        if (fe.is_slope()) {
            for (Eigen::Index i = 0; i < n; ++i)
                inv[static_cast<std::size_t>(fe.codes[static_cast<std::size_t>(i)])] += w[i] * fe.slope[i] * fe.slope[i];
        } else {
            for (Eigen::Index i = 0; i < n; ++i) inv[static_cast<std::size_t>(fe.codes[static_cast<std::size_t>(i)])] += w[i];
        }
        for (auto& v : inv) v = v > 0 ? 1.0 / v : 0.0;
    }
}

void Projector::apply_term(std::size_t t, Eigen::Ref<Eigen::VectorXd> x, std::vector<double>& scratch) const {
    const auto& fe = (*terms_)[t];
    const auto& inv = cache_[t].inv_denominator;
    const auto* codes = fe.codes.data();
    const auto n = x.size();
    scratch.assign(inv.size(), 0.0);
    if (fe.is_slope()) {
        for (Eigen::Index i = 0; i < n; ++i) scratch[static_cast<std::size_t>(codes[i])] += weights_[i] * fe.slope[i] * x[i];
        for (std::size_t g = 0; g < scratch.size(); ++g) scratch[g] *= inv[g];
        for (Eigen::Index i = 0; i < n; ++i) x[i] -= scratch[static_cast<std::size_t>(codes[i])] * fe.slope[i];
    } else {
        for (Eigen::Index i = 0; i < n; ++i) scratch[static_cast<std::size_t>(codes[i])] += weights_[i] * x[i];
        for (std::size_t g = 0; g < scratch.size(); ++g) scratch[g] *= inv[g];
        for (Eigen::Index i = 0; i < n; ++i) x[i] -= scratch[static_cast<std::size_t>(codes[i])];
    }
}

void Projector::sweep(Eigen::Ref<Eigen::VectorXd> x, std::vector<double>& scratch) const {
    const std::size_t T = terms_->size();
    for (std::size_t t = 0; t < T; ++t) apply_term(t, x, scratch);
    for (std::size_t t = T - 1; t-- > 0;) apply_term(t, x, scratch);
}

double Projector::dot(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const {
    return (weights_.array() * a.array() * b.array()).sum();
}

long Projector::project_column(Eigen::Ref<Eigen::VectorXd> x, double tol, bool& converged) const {
    converged = true;
    const double scale = max_abs(x);
    if (scale == 0.0) return 0;
    std::vector<double> scratch;
    scratch.reserve(max_levels_);
    if (terms_->size() == 1) {
        apply_term(0, x, scratch);
        return 1;
    }
    const double limit = tol * scale;
    Eigen::VectorXd x0, x1;
    long sweeps = 0;
    while (sweeps < options_.max_sweeps) {
        x0 = x;
        sweep(x, scratch);
        ++sweeps;
        if (max_abs(x - x0) <= limit) return sweeps;
        if (sweeps >= options_.max_sweeps) break;
        x1 = x;
        sweep(x, scratch);
        ++sweeps;
        if (max_abs(x - x1) <= limit) return sweeps;
        // Irons-Tuck extrapolation from (x0, T x0, T^2 x0). The weights of the
        // combination sum to one, so x stays in x0 + span(absorbed effects).
        Eigen::VectorXd d1 = x - x1;
        Eigen::VectorXd d2 = d1 - (x1 - x0);
        const double denom = dot(d2, d2);
        if (denom > 0) x -= (dot(d1, d2) / denom) * d1;
    }
    converged = false;
    return sweeps;
}

long Projector::project_column_cg(Eigen::Ref<Eigen::VectorXd> x, double tol, bool& converged) const {
    converged = true;
    const double scale = max_abs(x);
    if (scale == 0.0) return 0;
    std::vector<double> scratch;
    scratch.reserve(max_levels_);
    if (terms_->size() == 1) {
        apply_term(0, x, scratch);
        return 1;
    }
    // Solve (I - T) d = (I - T) x for d in the absorbed span; x - d is the
    // residual. I - T is symmetric positive semidefinite under the weights.
    const double limit = tol * scale;
    Eigen::VectorXd r = x;
    sweep(r, scratch);
    long sweeps = 1;
    r = x - r;
    if (max_abs(r) <= limit) {
        x -= r;
        return sweeps;
    }
    Eigen::VectorXd u = r, v;
    double rr = dot(r, r);
    while (sweeps < options_.max_sweeps) {
        v = u;
        sweep(v, scratch);
        ++sweeps;
        v = u - v;
        const double uv = dot(u, v);
        if (!(uv > 0)) break;
        const double alpha = rr / uv;
        x -= alpha * u;
        r -= alpha * v;
        if (max_abs(r) <= limit) return sweeps;
        const double rr_next = dot(r, r);
        u = r + (rr_next / rr) * u;
        rr = rr_next;
    }
    if (max_abs(r) <= limit) return sweeps;
    converged = false;
    return sweeps;
}

ProjectResult Projector::project(Eigen::Ref<Eigen::MatrixXd> columns, double tol) const {
    ProjectResult result;
    if (terms_->empty() || columns.cols() == 0) return result;
    const auto k = columns.cols();
    std::vector<long> sweeps(static_cast<std::size_t>(k), 0);
    std::vector<char> ok(static_cast<std::size_t>(k), 1);
    auto work = [&](Eigen::Index j) {
        bool conv = true;
        sweeps[static_cast<std::size_t>(j)] = options_.method == ProjectorMethod::conjugate_gradient
                                                  ? project_column_cg(columns.col(j), tol, conv)
                                                  : project_column(columns.col(j), tol, conv);
        ok[static_cast<std::size_t>(j)] = conv;
    };
    const int workers = static_cast<int>(std::min<Eigen::Index>(std::max(options_.threads, 1), k));
    if (workers <= 1) {
        for (Eigen::Index j = 0; j < k; ++j) work(j);
    } else {
        std::vector<std::jthread> pool;
        for (int w = 0; w < workers; ++w)
            pool.emplace_back([&, w] {
                for (Eigen::Index j = w; j < k; j += workers) work(j);
            });
    }
    result.sweeps = *std::max_element(sweeps.begin(), sweeps.end());
    if (std::find(ok.begin(), ok.end(), 0) != ok.end())
        throw ProjectionError("within-transformation did not converge after " + std::to_string(result.sweeps) +
                                  " sweeps",
                              Eigen::MatrixXd(columns));
    return result;
}

std::vector<Eigen::VectorXd> Projector::decompose(const Eigen::VectorXd& d, double tol) const {
    const std::size_t T = terms_->size();
    std::vector<Eigen::VectorXd> parts(T, Eigen::VectorXd::Zero(d.size()));
    if (T == 0) return parts;
    Eigen::VectorXd r = d, tmp;
    std::vector<double> scratch;
    const double scale = std::max(max_abs(d), 1e-300);
    for (long s = 0; s < options_.max_sweeps; ++s) {
        double change = 0;
        for (std::size_t t = 0; t < T; ++t) {
            tmp = r;
            apply_term(t, tmp, scratch);
            Eigen::VectorXd piece = r - tmp;
            parts[t] += piece;
            r = tmp;
            change = std::max(change, max_abs(piece));
        }
        if (change <= tol * scale) break;
    }
    return parts;
}

SingletonResult drop_singletons(const EstimationSample& sample) {
    const std::size_t n = sample.rows();
    std::vector<bool> keep(n, true);
    std::size_t dropped = 0;
    bool changed = true;
    std::vector<std::int32_t> counts;
    while (changed) {
        changed = false;
        for (const auto& fe : sample.fixed_effects) {
            if (fe.is_slope()) continue;
            counts.assign(static_cast<std::size_t>(fe.levels), 0);
            for (std::size_t i = 0; i < n; ++i)
                if (keep[i]) ++counts[static_cast<std::size_t>(fe.codes[i])];
            for (std::size_t i = 0; i < n; ++i) {
                if (keep[i] && counts[static_cast<std::size_t>(fe.codes[i])] == 1) {
                    keep[i] = false;
                    ++dropped;
                    changed = true;
                }
            }
        }
    }
    if (dropped == n) throw DataError("no observations remain after dropping singletons");
    if (dropped == 0) return {sample, 0};
    return {sample.subset(keep, DropReason::singleton), dropped};
}

std::int64_t bipartite_components(const std::vector<std::int32_t>& a, std::int32_t levels_a,
                                  const std::vector<std::int32_t>& b, std::int32_t levels_b) {
    std::vector<std::int32_t> parent(static_cast<std::size_t>(levels_a + levels_b));
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](std::int32_t x) {
        while (parent[static_cast<std::size_t>(x)] != x) {
            parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
            x = parent[static_cast<std::size_t>(x)];
        }
        return x;
    };
    std::int64_t components = levels_a + levels_b;
    for (std::size_t i = 0; i < a.size(); ++i) {
        auto ra = find(a[i]);
        auto rb = find(levels_a + b[i]);
        if (ra != rb) {
            parent[static_cast<std::size_t>(ra)] = rb;
            --components;
        }
    }
    return components;
}

bool nested_within(const std::vector<std::int32_t>& factor, std::int32_t levels,
                   const std::vector<std::int32_t>& cluster) {
    std::vector<std::int32_t> owner(static_cast<std::size_t>(levels), -1);
    for (std::size_t i = 0; i < factor.size(); ++i) {
        auto& o = owner[static_cast<std::size_t>(factor[i])];
        if (o < 0)
            o = cluster[i];
        else if (o != cluster[i])
            return false;
    }
    return true;
}

DofTable count_dof(const EstimationSample& sample) {
    DofTable table;
    const FixedEffect* first = nullptr;
    int intercepts_seen = 0;
    for (const auto& fe : sample.fixed_effects) {
        DofTerm term;
        term.label = fe.term.label;
        term.categories = fe.levels;
        for (const auto& cl : sample.clusters)
            if (nested_within(fe.codes, fe.levels, cl.codes)) term.nested = true;
        if (!fe.is_slope()) {
            ++intercepts_seen;
            if (!first) {
                first = &fe;
            } else if (intercepts_seen == 2) {
                term.redundant = bipartite_components(first->codes, first->levels, fe.codes, fe.levels);
            } else {
                term.redundant = 1;
                term.exact = false;
            }
        }
        if (term.nested) term.redundant = term.categories;
        table.df_a_initial += term.categories;
        table.df_a_redundant += term.redundant;
        table.terms.push_back(term);
    }
    table.df_a = table.df_a_initial - table.df_a_redundant;
    return table;
}

Eigen::VectorXd recover_fe_sum(const Eigen::VectorXd& eta, const Eigen::MatrixXd& X, const Eigen::VectorXd& delta,
                               const Eigen::VectorXd& offset) {
    Eigen::VectorXd d = eta - offset;
    if (X.cols() > 0) d -= X * delta;
    return d;
}

}  // namespace ppmlhdfe
