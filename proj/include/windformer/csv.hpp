#pragma once

#include <string>
#include <vector>

namespace windformer {

// Minimal CSV table: header row plus string cells. Quoted fields with embedded
// commas/quotes are handled; no embedded newlines.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    // -1 if absent
    int column(const std::string& name) const;
};

CsvTable read_csv(const std::string& path);
void write_csv(const std::string& path, const CsvTable& table);

std::vector<std::string> split_csv_line(const std::string& line);
std::string join_csv_line(const std::vector<std::string>& fields);

}  // namespace windformer
