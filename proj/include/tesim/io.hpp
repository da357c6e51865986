#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "tesim/errors.hpp"

namespace tesim::io {

inline constexpr std::string_view kToolVersion = "1.0.0";

// Next line that carries data: blank lines and '#' comments are skipped,
// trailing carriage returns stripped. Returns false at end of stream.
bool next_data_line(std::istream& in, std::string& line);

// Comma-split with surrounding whitespace trimmed from each field.
std::vector<std::string> split_csv_line(const std::string& line);

// Strict full-field conversions; DataError names the offending field.
double parse_number(const std::string& field);
long parse_integer(const std::string& field);

// Shortest decimal form that parses back to exactly the same double.
std::string format_double(double v);

std::uint64_t fnv1a64(std::string_view bytes);

// Stable fingerprint of a configuration: FNV-1a over the canonical dump
// (nlohmann keeps object keys sorted, so equal configs hash equally).
std::uint64_t config_hash(const nlohmann::json& config);

// Stamp carried by every output file so a result can be traced back to the
// exact invocation that produced it. No timestamps: reruns must be identical.
struct Provenance {
    std::string command;
    std::uint64_t config_hash = 0;
    std::uint64_t seed = 0;
};

// '#'-prefixed header block for CSV-style outputs.
void write_provenance_comments(std::ostream& out, const Provenance& p);

// Equivalent object for embedding into JSON outputs.
nlohmann::json provenance_json(const Provenance& p);

} // namespace tesim::io
