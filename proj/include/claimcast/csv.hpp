#pragma once

#include <istream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace claimcast::csv {

// Splits one comma-separated line. Double quotes delimit fields that contain
// commas; a doubled quote inside a quoted field is a literal quote.
// Returns std::nullopt on an unterminated quote.
std::optional<std::vector<std::string>> split_line(std::string_view line);

// Quotes a field only when it contains a comma, quote, or newline.
std::string escape(std::string_view field);

std::string join(const std::vector<std::string>& fields);

// Reads one physical line, stripping a trailing '\r'.
bool read_line(std::istream& in, std::string& line);

}  // namespace claimcast::csv
