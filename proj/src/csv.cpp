#include "gexpect/csv.hpp"

#include <charconv>
#include <cmath>

namespace gexpect {

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

CsvWriter::CsvWriter(std::ostream& os, std::initializer_list<std::string_view> header)
    : os_(os), n_cols_(header.size()) {
    std::size_t col = 0;
    for (auto h : header) put(h, col++);
    os_ << '\n';
}

CsvWriter::CsvWriter(std::ostream& os, const std::vector<std::string>& header) : os_(os), n_cols_(header.size()) {
    std::size_t col = 0;
    for (const auto& h : header) put(std::string_view(h), col++);
    os_ << '\n';
}

void CsvWriter::put(std::string_view v, std::size_t col) {
    sep(col);
    if (v.find_first_of(",\"\n") == std::string_view::npos) {
        os_ << v;
        return;
    }
    os_ << '"';
    for (char ch : v) {
        if (ch == '"') os_ << '"';
        os_ << ch;
    }
    os_ << '"';
}

}  // namespace gexpect
