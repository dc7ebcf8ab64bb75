#include "ppmlhdfe/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <sstream>

#include "ppmlhdfe/error.hpp"

namespace ppmlhdfe {

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

bool is_missing_cell(std::string_view cell) { return cell.empty() || cell == "NA"; }

bool parse_number(std::string_view cell, double& out) {
    if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
    const char* end = cell.data() + cell.size();
    auto [ptr, ec] = std::from_chars(cell.data(), end, out);
    return ec == std::errc() && ptr == end && std::isfinite(out);
}

}  // namespace

std::vector<std::string> split_record(std::string_view line, char delimiter) {
    std::vector<std::string> fields;
    std::string field;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == delimiter) {
            fields.emplace_back(trim(field));
            field.clear();
        } else {
            field.push_back(c);
        }
    }
    fields.emplace_back(trim(field));
    return fields;
}

const Column* RawTable::find(std::string_view name) const {
    for (const auto& c : columns)
        if (c.name == name) return &c;
    return nullptr;
}

const Column& RawTable::at(std::string_view name) const {
    if (const Column* c = find(name)) return *c;
    throw DataError("unknown column '" + std::string(name) + "'");
}

RawTable parse_table(std::istream& in, const LoadOptions& options) {
    std::vector<std::vector<std::string>> records;
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        records.push_back(split_record(line, options.delimiter));
    }
    if (records.empty()) throw DataError("empty table");

    RawTable table;
    const std::size_t width = records.front().size();
    std::size_t first_data = 0;
    if (options.header) {
        for (auto& name : records.front()) {
            if (name.empty()) throw DataError("empty column name in header");
            table.columns.push_back(Column{name, ColumnKind::numeric, {}, {}, {}});
        }
        first_data = 1;
    } else {
        for (std::size_t j = 0; j < width; ++j)
            table.columns.push_back(Column{"v" + std::to_string(j + 1), ColumnKind::numeric, {}, {}, {}});
    }
    for (std::size_t a = 0; a < table.columns.size(); ++a)
        for (std::size_t b = a + 1; b < table.columns.size(); ++b)
            if (table.columns[a].name == table.columns[b].name)
                throw DataError("duplicate column name '" + table.columns[a].name + "'");
    if (records.size() == first_data) throw DataError("no data rows");

    table.rows = records.size() - first_data;
    for (auto& col : table.columns) {
        col.text.reserve(table.rows);
        col.values.reserve(table.rows);
        col.missing.reserve(table.rows);
    }
    for (std::size_t r = first_data; r < records.size(); ++r) {
        auto& rec = records[r];
        if (rec.size() != width)
            throw DataError("ragged row " + std::to_string(r + 1) + ": expected " + std::to_string(width) +
                            " fields, found " + std::to_string(rec.size()));
        for (std::size_t j = 0; j < width; ++j) {
            auto& col = table.columns[j];
            col.missing.push_back(is_missing_cell(rec[j]));
            col.text.push_back(std::move(rec[j]));
        }
    }
    for (auto& col : table.columns) {
        bool numeric = true;
        for (std::size_t i = 0; i < table.rows; ++i) {
            double v = std::numeric_limits<double>::quiet_NaN();
            if (!col.missing[i] && !parse_number(col.text[i], v)) numeric = false;
            col.values.push_back(v);
        }
        col.kind = numeric ? ColumnKind::numeric : ColumnKind::categorical;
        if (!numeric) std::fill(col.values.begin(), col.values.end(), std::numeric_limits<double>::quiet_NaN());
    }
    return table;
}

RawTable load_table(const std::filesystem::path& path, const LoadOptions& options) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read file '" + path.string() + "'");
    return parse_table(in, options);
}

const char* to_string(DropReason reason) {
    switch (reason) {
        case DropReason::none: return "none";
        case DropReason::missing: return "missing";
        case DropReason::singleton: return "singleton";
        case DropReason::separated: return "separated";
    }
    return "none";
}

std::size_t EstimationSample::count(DropReason reason) const {
    return static_cast<std::size_t>(std::count(ledger.begin(), ledger.end(), reason));
}

bool EstimationSample::has_intercept_term() const {
    return std::any_of(fixed_effects.begin(), fixed_effects.end(),
                       [](const FixedEffect& fe) { return !fe.is_slope(); });
}

EstimationSample EstimationSample::subset(const std::vector<bool>& keep, DropReason reason) const {
    const std::size_t n = rows();
    std::vector<Eigen::Index> idx;
    idx.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
        if (keep[i]) idx.push_back(static_cast<Eigen::Index>(i));

    EstimationSample out;
    out.depvar = depvar;
    out.x_names = x_names;
    out.offset_label = offset_label;
    out.has_constant = has_constant;
    out.ledger = ledger;
    out.y = y(idx);
    out.X = X(idx, Eigen::all);
    out.weights = weights(idx);
    out.offset = offset(idx);
    out.row_ids.reserve(idx.size());
    for (auto i : idx) out.row_ids.push_back(row_ids[static_cast<std::size_t>(i)]);
    for (std::size_t i = 0; i < n; ++i)
        if (!keep[i]) out.ledger[row_ids[i]] = reason;

    auto pick = [&](const std::vector<std::int32_t>& codes) {
        std::vector<std::int32_t> kept;
        kept.reserve(idx.size());
        for (auto i : idx) kept.push_back(codes[static_cast<std::size_t>(i)]);
        return recode(kept);
    };
    for (const auto& fe : fixed_effects) {
        FixedEffect f;
        f.term = fe.term;
        auto enc = pick(fe.codes);
        f.codes = std::move(enc.codes);
        f.levels = enc.levels;
        if (fe.is_slope()) f.slope = fe.slope(idx);
        out.fixed_effects.push_back(std::move(f));
    }
    for (const auto& cl : clusters) {
        auto enc = pick(cl.codes);
        out.clusters.push_back(ClusterVar{cl.name, std::move(enc.codes), enc.levels});
    }
    return out;
}

std::vector<ColumnSchema> make_schema(const RawTable& table, const SampleRequest& request) {
    std::vector<ColumnSchema> schema;
    for (const auto& c : table.columns) schema.push_back(ColumnSchema{c.name, c.kind, {}});
    auto assign = [&](const std::string& name, Role role) {
        for (auto& s : schema) {
            if (s.name != name) continue;
            if (std::find(s.roles.begin(), s.roles.end(), role) == s.roles.end()) s.roles.push_back(role);
            return;
        }
        throw DataError("unknown column '" + name + "'");
    };
    auto require_numeric = [&](const std::string& name, const char* what) {
        if (table.at(name).kind != ColumnKind::numeric)
            throw DataError(std::string(what) + " '" + name + "' is not numeric");
    };

    if (request.depvar.empty()) throw DataError("no dependent variable");
    assign(request.depvar, Role::response);
    require_numeric(request.depvar, "response");
    for (const auto& x : request.indepvars) {
        if (x == request.depvar) throw DataError("'" + x + "' is both the response and a regressor");
        assign(x, Role::covariate);
        require_numeric(x, "regressor");
    }
    for (const auto& term : request.absorb.terms) {
        for (const auto& f : term.factors) assign(f, Role::factor);
        if (term.slope_var) {
            assign(*term.slope_var, Role::factor);
            require_numeric(*term.slope_var, "slope variable");
        }
    }
    if (request.weight) {
        assign(*request.weight, Role::weight);
        require_numeric(*request.weight, "weight");
    }
    if (request.exposure && request.offset) throw DataError("exposure and offset are mutually exclusive");
    if (request.exposure) {
        assign(*request.exposure, Role::exposure_var);
        require_numeric(*request.exposure, "exposure");
    }
    if (request.offset) {
        assign(*request.offset, Role::offset_var);
        require_numeric(*request.offset, "offset");
    }
    for (const auto& c : request.cluster_vars) assign(c, Role::cluster_var);
    for (auto& s : schema)
        if (s.roles.empty()) s.roles.push_back(Role::unused);
    return schema;
}

EstimationSample build_sample(const RawTable& table, const SampleRequest& request) {
    const auto schema = make_schema(table, request);

    std::vector<const Column*> used;
    for (const auto& s : schema)
        if (s.roles.front() != Role::unused) used.push_back(&table.at(s.name));

    EstimationSample sample;
    sample.depvar = request.depvar;
    sample.ledger.assign(table.rows, DropReason::none);
    for (std::size_t i = 0; i < table.rows; ++i) {
        bool miss = std::any_of(used.begin(), used.end(), [i](const Column* c) { return c->missing[i]; });
        if (miss)
            sample.ledger[i] = DropReason::missing;
        else
            sample.row_ids.push_back(i);
    }
    const auto& rows = sample.row_ids;
    const auto n = static_cast<Eigen::Index>(rows.size());
    if (n == 0) throw DataError("no observations remain after removing missing values");

    auto gather = [&](const std::string& name) {
        const Column& c = table.at(name);
        Eigen::VectorXd v(n);
        for (Eigen::Index i = 0; i < n; ++i) v[i] = c.values[rows[static_cast<std::size_t>(i)]];
        return v;
    };

    sample.y = gather(request.depvar);
    for (Eigen::Index i = 0; i < n; ++i)
        if (sample.y[i] < 0)
            throw DataError("negative response: " + request.depvar + " < 0 in row " +
                            std::to_string(rows[static_cast<std::size_t>(i)] + 1));

    sample.weights = request.weight ? gather(*request.weight) : Eigen::VectorXd::Ones(n);
    if ((sample.weights.array() <= 0).any()) throw DataError("nonpositive weight");

    if (request.exposure) {
        Eigen::VectorXd e = gather(*request.exposure);
        if ((e.array() <= 0).any()) throw DataError("nonpositive exposure");
        sample.offset = e.unaryExpr([](double v) { return std::log(v); });  // std::log, not the vectorized one: matches a precomputed ln(v)
        sample.offset_label = "ln(" + *request.exposure + ")";
    } else if (request.offset) {
        sample.offset = gather(*request.offset);
        sample.offset_label = *request.offset;
    } else {
        sample.offset = Eigen::VectorXd::Zero(n);
    }

    for (const auto& term : request.absorb.terms) {
        FixedEffect fe;
        fe.term = term;
        auto enc = encode_term(term, table, rows);
        fe.codes = std::move(enc.codes);
        fe.levels = enc.levels;
        if (term.slope_var) fe.slope = gather(*term.slope_var);
        sample.fixed_effects.push_back(std::move(fe));
    }
    for (const auto& name : request.cluster_vars) {
        const std::string one[] = {name};
        auto enc = encode_factors(table, one, rows);
        sample.clusters.push_back(ClusterVar{name, std::move(enc.codes), enc.levels});
    }

    sample.x_names = request.indepvars;
    sample.has_constant = !request.absorb.has_intercept_term();
    if (sample.has_constant) sample.x_names.emplace_back(kConstantName);
    sample.X.resize(n, static_cast<Eigen::Index>(sample.x_names.size()));
    for (std::size_t j = 0; j < request.indepvars.size(); ++j)
        sample.X.col(static_cast<Eigen::Index>(j)) = gather(request.indepvars[j]);
    if (sample.has_constant) sample.X.col(sample.X.cols() - 1).setOnes();
    return sample;
}

}  // namespace ppmlhdfe
