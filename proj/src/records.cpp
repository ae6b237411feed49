#include "imnav/records.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>

#include "imnav/errors.hpp"

namespace imnav::records {

void write_header(std::ostream& os, const Header& h) {
    os << "# cmd: " << h.command << "\n# seed: " << h.seed << "\n";
}

std::string format_float(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string join_floats(const std::vector<float>& v, char sep) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += sep;
        out += format_float(v[i]);
    }
    return out;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        out.push_back(s.substr(start, pos - start));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return out;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<Line> read_lines(std::istream& is) {
    std::vector<Line> out;
    std::string line;
    int n = 0;
    while (std::getline(is, line)) {
        ++n;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        out.push_back({n, split(line, '\t')});
    }
    return out;
}

std::vector<Line> read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    return read_lines(in);
}

namespace {

[[noreturn]] void bad(const std::string& what, const std::string& s, int line) {
    throw ParseError("line " + std::to_string(line) + ": bad " + what + " '" + s + "'");
}

}  // namespace

int to_int(const std::string& s, int line) {
    int v = 0;
    auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size()) bad("integer", s, line);
    return v;
}

std::uint64_t to_u64(const std::string& s, int line) {
    std::uint64_t v = 0;
    auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size()) bad("integer", s, line);
    return v;
}

double to_double(const std::string& s, int line) {
    if (s.empty()) bad("number", s, line);
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size()) bad("number", s, line);
    return v;
}

std::vector<float> to_floats(const std::string& s, int line, char sep) {
    std::vector<float> out;
    if (s.empty()) return out;
    for (const auto& part : split(s, sep)) {
        char* end = nullptr;
        const float v = std::strtof(part.c_str(), &end);
        if (part.empty() || end != part.c_str() + part.size()) bad("number", part, line);
        out.push_back(v);
    }
    return out;
}

std::vector<int> to_ints(const std::string& s, int line, char sep) {
    std::vector<int> out;
    if (s.empty() || s == "-") return out;
    for (const auto& part : split(s, sep)) out.push_back(to_int(part, line));
    return out;
}

void require_fields(const Line& l, std::size_t n) {
    if (l.fields.size() < n)
        throw FormatError("line " + std::to_string(l.number) + ": expected " + std::to_string(n) + " fields, got " +
                          std::to_string(l.fields.size()));
}

}  // namespace imnav::records
