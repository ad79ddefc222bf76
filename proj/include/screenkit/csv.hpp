#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace screenkit::csv {

using Row = std::vector<std::string>;

// RFC-4180 reader: quoted fields, doubled quotes, CRLF or LF line ends, newlines
// inside quotes. A leading UTF-8 byte-order mark is skipped. Blank lines are dropped.
std::vector<Row> parse(std::string_view text);

std::string escape(std::string_view field);
std::string format_row(const Row& row);

}  // namespace screenkit::csv
