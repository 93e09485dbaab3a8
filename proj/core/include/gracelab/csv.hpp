#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace gracelab::csv {

/// RFC 4180 subset: comma separator, double-quote quoting, LF line ends.
struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    /// Index of a header column; throws InvalidArgument when absent.
    [[nodiscard]] std::size_t column(std::string_view name) const;
};

std::string to_string(const Table& table);
Table parse(std::string_view text);

/// Shortest decimal text that parses back to exactly `v`.
std::string format_double(double v);
double parse_double(std::string_view text);

}  // namespace gracelab::csv
