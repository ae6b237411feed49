#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

// Tab-separated line records shared by every text artifact. Lines starting
// with '#' are comments; the first comments carry the producing command and seed.
namespace imnav::records {

struct Header {
    std::string command;
    std::uint64_t seed = 0;
};

void write_header(std::ostream& os, const Header& h);

std::string format_float(double v);   // %.9g, exact for float
std::string format_double(double v);  // %.17g, exact for double
std::string join_floats(const std::vector<float>& v, char sep = ' ');

// Reads a file's non-comment lines, keeping 1-based line numbers for errors.
struct Line {
    int number;
    std::vector<std::string> fields;
};
std::vector<Line> read_lines(std::istream& is);
std::vector<Line> read_file(const std::string& path);

std::vector<std::string> split(const std::string& s, char sep);
std::string trim(const std::string& s);

int to_int(const std::string& s, int line);
std::uint64_t to_u64(const std::string& s, int line);
double to_double(const std::string& s, int line);
std::vector<float> to_floats(const std::string& s, int line, char sep = ' ');
std::vector<int> to_ints(const std::string& s, int line, char sep = ',');

// Throws FormatError unless the line has at least n fields.
void require_fields(const Line& l, std::size_t n);

}  // namespace imnav::records
