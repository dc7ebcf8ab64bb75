#include "ppmlhdfe/absorb.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <numeric>

#include "ppmlhdfe/error.hpp"

namespace ppmlhdfe {

namespace {

bool valid_identifier(std::string_view s) {
    if (s.empty()) return false;
    if (!(std::isalpha(static_cast<unsigned char>(s.front())) || s.front() == '_')) return false;
    return std::all_of(s.begin(), s.end(),
                       [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; });
}

std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> parts;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= s.size(); ++i) {
        if (i == s.size() || s[i] == sep) {
            parts.push_back(s.substr(start, i - start));
            start = i + 1;
        }
    }
    return parts;
}

AbsorbTerm parse_term(std::string_view token) {
    auto malformed = [&](const std::string& why) {
        return DataError("malformed absorb term '" + std::string(token) + "': " + why);
    };
    AbsorbTerm term;
    std::string_view body = token;
    if (auto eq = token.find('='); eq != std::string_view::npos) {
        std::string_view name = token.substr(0, eq);
        if (!valid_identifier(name)) throw malformed("invalid name before '='");
        term.save_as = std::string(name);
        body = token.substr(eq + 1);
    }
    if (body.find("##") != std::string_view::npos)
        throw malformed("'##' is not supported; write 'A A#c.v' instead of 'A##c.v'");
    for (std::string_view part : split(body, '#')) {
        if (part.starts_with("c.")) {
            std::string_view var = part.substr(2);
            if (!valid_identifier(var)) throw malformed("invalid continuous variable");
            if (term.slope_var) throw malformed("more than one c. variable");
            term.slope_var = std::string(var);
        } else {
            if (!valid_identifier(part)) throw malformed("invalid factor '" + std::string(part) + "'");
            term.factors.emplace_back(part);
        }
    }
    if (term.factors.empty()) throw malformed("a term needs at least one categorical factor");
    term.label = std::string(body);
    return term;
}

}  // namespace

bool AbsorbSpec::has_intercept_term() const {
    return std::any_of(terms.begin(), terms.end(), [](const AbsorbTerm& t) { return !t.is_slope(); });
}

std::string AbsorbSpec::absvars() const {
    std::string out;
    for (const auto& t : terms) {
        if (!out.empty()) out += ' ';
        out += t.label;
    }
    return out;
}

AbsorbSpec parse_absorb(std::string_view text, const RawTable* table) {
    AbsorbSpec spec;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        std::size_t start = i;
        while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        if (i > start) spec.terms.push_back(parse_term(text.substr(start, i - start)));
    }
    if (table) {
        for (const auto& term : spec.terms) {
            for (const auto& f : term.factors) table->at(f);
            if (term.slope_var && table->at(*term.slope_var).kind != ColumnKind::numeric)
                throw DataError("slope variable '" + *term.slope_var + "' is not numeric");
        }
    }
    return spec;
}

EncodedFactor recode(std::span<const std::int32_t> codes) {
    std::int32_t max_code = -1;
    for (auto c : codes) max_code = std::max(max_code, c);
    std::vector<std::int32_t> map(static_cast<std::size_t>(max_code + 1), -1);
    for (auto c : codes) map[static_cast<std::size_t>(c)] = 0;
    EncodedFactor out;
    for (auto& m : map)
        if (m == 0) m = out.levels++;
    out.codes.reserve(codes.size());
    for (auto c : codes) out.codes.push_back(map[static_cast<std::size_t>(c)]);
    return out;
}

namespace {

EncodedFactor encode_column(const Column& col, std::span<const std::size_t> rows) {
    EncodedFactor out;
    out.codes.resize(rows.size());
    if (col.kind == ColumnKind::numeric) {
        std::map<double, std::int32_t> levels;
        for (auto r : rows) levels.emplace(col.values[r], 0);
        for (auto& [v, code] : levels) code = out.levels++;
        for (std::size_t i = 0; i < rows.size(); ++i) out.codes[i] = levels.at(col.values[rows[i]]);
    } else {
        std::map<std::string_view, std::int32_t> levels;
        for (auto r : rows) levels.emplace(col.text[r], 0);
        for (auto& [v, code] : levels) code = out.levels++;
        for (std::size_t i = 0; i < rows.size(); ++i) out.codes[i] = levels.at(col.text[rows[i]]);
    }
    return out;
}

}  // namespace

EncodedFactor encode_factors(const RawTable& table, std::span<const std::string> columns,
                             std::span<const std::size_t> rows) {
    if (columns.empty()) throw DataError("no factor columns to encode");
    EncodedFactor acc = encode_column(table.at(columns.front()), rows);
    for (std::size_t k = 1; k < columns.size(); ++k) {
        EncodedFactor next = encode_column(table.at(columns[k]), rows);
        std::map<std::pair<std::int32_t, std::int32_t>, std::int32_t> combos;
        for (std::size_t i = 0; i < rows.size(); ++i) combos.emplace(std::pair{acc.codes[i], next.codes[i]}, 0);
        std::int32_t g = 0;
        for (auto& [key, code] : combos) code = g++;
        for (std::size_t i = 0; i < rows.size(); ++i) acc.codes[i] = combos.at({acc.codes[i], next.codes[i]});
        acc.levels = g;
    }
    return acc;
}

EncodedFactor encode_term(const AbsorbTerm& term, const RawTable& table, std::span<const std::size_t> rows) {
    return encode_factors(table, term.factors, rows);
}

}  // namespace ppmlhdfe
