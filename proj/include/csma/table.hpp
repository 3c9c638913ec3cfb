#pragma once

#include <string>
#include <vector>

namespace csma {

// All user-facing numeric output uses 12 significant digits.
std::string fmt12(double v);
// Parse-of-fmt12: the double the emitted text denotes.
double round12(double v);

// Minimal long-form table with CSV serialization. Fields are written verbatim
// (no quoting); numeric cells should be produced with fmt12 so that
// serialize(parse(text)) == text.
struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::string to_csv() const;
    static Table from_csv(const std::string& text);

    bool operator==(const Table&) const = default;
};

}  // namespace csma
