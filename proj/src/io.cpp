#include "tesim/io.hpp"

#include <cstdio>
#include <cstdlib>
#include <istream>
#include <ostream>

namespace tesim::io {

bool next_data_line(std::istream& in, std::string& line) {
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        auto first = line.find_first_not_of(" \t");
        if (first == std::string::npos || line[first] == '#')
            continue;
        return true;
    }
    return false;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cols;
    std::size_t start = 0;
    while (true) {
        std::size_t comma = line.find(',', start);
        std::string field = line.substr(start, comma == std::string::npos ? comma : comma - start);
        auto b = field.find_first_not_of(" \t");
        auto e = field.find_last_not_of(" \t");
        cols.push_back(b == std::string::npos ? "" : field.substr(b, e - b + 1));
        if (comma == std::string::npos)
            break;
        start = comma + 1;
    }
    return cols;
}

double parse_number(const std::string& field) {
    std::size_t pos = 0;
    double v;
    try {
        v = std::stod(field, &pos);
    } catch (const std::exception&) {
        throw DataError("not a number: '" + field + "'");
    }
    if (pos != field.size())
        throw DataError("not a number: '" + field + "'");
    return v;
}

long parse_integer(const std::string& field) {
    std::size_t pos = 0;
    long v;
    try {
        v = std::stol(field, &pos);
    } catch (const std::exception&) {
        throw DataError("not an integer: '" + field + "'");
    }
    if (pos != field.size())
        throw DataError("not an integer: '" + field + "'");
    return v;
}

std::string format_double(double v) {
    char buf[40];
    for (int prec = 15; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v)
            break;
    }
    return buf;
}

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::uint64_t config_hash(const nlohmann::json& config) {
    return fnv1a64(config.dump());
}

namespace {

std::string hex64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

} // namespace

void write_provenance_comments(std::ostream& out, const Provenance& p) {
    out << "# tool_version: " << kToolVersion << "\n";
    out << "# command: " << p.command << "\n";
    out << "# config_hash: " << hex64(p.config_hash) << "\n";
    out << "# seed: " << p.seed << "\n";
}

nlohmann::json provenance_json(const Provenance& p) {
    nlohmann::json j;
    j["tool_version"] = std::string(kToolVersion);
    j["command"] = p.command;
    j["config_hash"] = hex64(p.config_hash);
    j["seed"] = p.seed;
    return j;
}

} // namespace tesim::io
