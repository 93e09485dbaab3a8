#include "gracelab/csv.hpp"

#include <charconv>

#include <fmt/format.h>

#include "gracelab/error.hpp"

namespace gracelab::csv {

namespace {

bool needs_quotes(std::string_view field) {
    return field.find_first_of(",\"\n\r") != std::string_view::npos;
}

void append_field(std::string& out, std::string_view field) {
    if (!needs_quotes(field)) {
        out += field;
        return;
    }
    out += '"';
    for (char c : field) {
        if (c == '"') {
            out += '"';
        }
        out += c;
    }
    out += '"';
}

void append_row(std::string& out, const std::vector<std::string>& row) {
    for (std::size_t i = 0; i < row.size(); ++i) {
        if (i > 0) {
            out += ',';
        }
        append_field(out, row[i]);
    }
    out += '\n';
}

}  // namespace

std::size_t Table::column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == name) {
            return i;
        }
    }
    throw InvalidArgument(fmt::format("csv: no column '{}'", name));
}

std::string to_string(const Table& table) {
    std::string out;
    append_row(out, table.header);
    for (const auto& r : table.rows) {
        if (r.size() != table.header.size()) {
            throw InvalidArgument("csv: row width differs from header");
        }
        append_row(out, r);
    }
    return out;
}

Table parse(std::string_view text) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> record;
    std::string field;
    bool in_quotes = false;
    bool field_started = false;

    const auto end_field = [&] {
        record.push_back(std::move(field));
        field.clear();
        field_started = false;
    };
    const auto end_record = [&] {
        end_field();
        records.push_back(std::move(record));
        record.clear();
    };

    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                field += c;
            }
            continue;
        }
        if (c == '"' && !field_started) {
            in_quotes = true;
            field_started = true;
        } else if (c == ',') {
            end_field();
        } else if (c == '\n') {
            end_record();
        } else if (c == '\r') {
            // tolerate CRLF
        } else {
            field += c;
            field_started = true;
        }
    }
    if (in_quotes) {
        throw InvalidArgument("csv: unterminated quoted field");
    }
    if (field_started || !record.empty()) {
        end_record();
    }
    if (records.empty()) {
        throw InvalidArgument("csv: missing header row");
    }
    Table t;
    t.header = std::move(records.front());
    for (std::size_t i = 1; i < records.size(); ++i) {
        if (records[i].size() != t.header.size()) {
            throw InvalidArgument(fmt::format("csv: row {} has {} fields, header has {}", i, records[i].size(),
                                              t.header.size()));
        }
        t.rows.push_back(std::move(records[i]));
    }
    return t;
}

std::string format_double(double v) {
    return fmt::format("{}", v);
}

double parse_double(std::string_view text) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size()) {
        throw InvalidArgument(fmt::format("csv: '{}' is not a number", text));
    }
    return v;
}

}  // namespace gracelab::csv
