#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace trialbridge::csv {

using Row = std::vector<std::string>;

/// RFC 4180-style reader: comma delimiter, double-quote quoting, CRLF or LF
/// line endings. Blank trailing lines are ignored.
std::vector<Row> parse(std::string_view text);

/// Quotes a field only when it contains a comma, quote or newline.
std::string escape(std::string_view field);

}  // namespace trialbridge::csv
