#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ppmlhdfe/table.hpp"

namespace ppmlhdfe {

// One set of absorbed effects: `A`, `A#B`, `A#c.v` or `new=A`.
// A term with a slope variable is a heterogeneous-slope term (one coefficient
// on v per group) and absorbs no intercept.
struct AbsorbTerm {
    std::string label;
    std::vector<std::string> factors;
    std::optional<std::string> slope_var;
    std::optional<std::string> save_as;

    bool is_slope() const { return slope_var.has_value(); }
};

struct AbsorbSpec {
    std::vector<AbsorbTerm> terms;

    bool empty() const { return terms.empty(); }
    bool has_intercept_term() const;
    // Space separated term labels, as typed.
    std::string absvars() const;
};

// Parses a whitespace-separated list of terms. When `table` is given, column
// references are checked (existence; slope variables must be numeric).
AbsorbSpec parse_absorb(std::string_view text, const RawTable* table = nullptr);

struct EncodedFactor {
    std::vector<std::int32_t> codes;
    std::int32_t levels = 0;
};

// Dense codes 0..G-1 for the observed combinations of `columns` over `rows`.
// Levels are ordered by value (numerically for numeric columns, bytewise for
// text) and combinations lexicographically by their component codes.
EncodedFactor encode_factors(const RawTable& table, std::span<const std::string> columns,
                             std::span<const std::size_t> rows);

EncodedFactor encode_term(const AbsorbTerm& term, const RawTable& table,
                          std::span<const std::size_t> rows);

// Re-densifies codes after rows were removed; keeps the relative level order.
EncodedFactor recode(std::span<const std::int32_t> codes);

}  // namespace ppmlhdfe
