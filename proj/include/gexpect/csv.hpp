#pragma once

// Minimal CSV emitter: UTF-8, '\n' line endings, '.' decimal separator and
// shortest round-trip formatting for doubles, so identical runs produce
// byte-identical files.

#include <cstdint>
#include <initializer_list>
#include <ostream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

namespace gexpect {

std::string format_double(double v);

class CsvWriter {
public:
    CsvWriter(std::ostream& os, std::initializer_list<std::string_view> header);
    CsvWriter(std::ostream& os, const std::vector<std::string>& header);

    template <class... Cells>
    void row(const Cells&... cells) {
        std::size_t col = 0;
        ((put(cells, col++)), ...);
        os_ << '\n';
    }

    std::size_t columns() const noexcept { return n_cols_; }

private:
    void sep(std::size_t col) {
        if (col > 0) os_ << ',';
    }
    void put(double v, std::size_t col) {
        sep(col);
        os_ << format_double(v);
    }
    void put(bool v, std::size_t col) {
        sep(col);
        os_ << (v ? "true" : "false");
    }
    template <class I>
        requires std::is_integral_v<I>
    void put(I v, std::size_t col) {
        sep(col);
        os_ << v;
    }
    void put(std::string_view v, std::size_t col);
    void put(const std::string& v, std::size_t col) { put(std::string_view(v), col); }
    void put(const char* v, std::size_t col) { put(std::string_view(v), col); }

    std::ostream& os_;
    std::size_t n_cols_;
};

}  // namespace gexpect
