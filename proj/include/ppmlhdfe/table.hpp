#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace ppmlhdfe {

enum class ColumnKind { numeric, categorical };

// One column of a delimited file. `text` keeps the raw cells so the file can
// be echoed back; `values` is the numeric view (NaN where missing).
struct Column {
    std::string name;
    ColumnKind kind = ColumnKind::numeric;
    std::vector<std::string> text;
    std::vector<double> values;
    std::vector<bool> missing;
};

struct RawTable {
    std::vector<Column> columns;
    std::size_t rows = 0;

    const Column* find(std::string_view name) const;
    // Throws DataError when the column does not exist.
    const Column& at(std::string_view name) const;
};

struct LoadOptions {
    char delimiter = ',';
    bool header = true;
};

// Reads a delimited text file. Empty fields and `NA` are missing. A column is
// numeric when every non-missing cell parses as a finite number.
RawTable load_table(const std::filesystem::path& path, const LoadOptions& options = {});
RawTable parse_table(std::istream& in, const LoadOptions& options = {});

// Splits one record, honouring double quotes ("" escapes a quote).
std::vector<std::string> split_record(std::string_view line, char delimiter);

}  // namespace ppmlhdfe
