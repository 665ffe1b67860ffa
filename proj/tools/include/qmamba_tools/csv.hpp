#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

namespace qmamba::cli {

/// Shortest decimal that reads back to the same double.
std::string format_double(double v);

/// Quotes a field when it holds a comma, a quote or a line break.
std::string csv_field(std::string_view raw);

class CsvWriter {
public:
    CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header,
              bool append = false);

    void row(const std::vector<std::string>& fields);

private:
    std::ofstream os_;
    std::filesystem::path path_;
};

/// Header plus rows of a CSV file written by CsvWriter.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int column(std::string_view name) const;
};

CsvTable read_csv(const std::filesystem::path& path);

}  // namespace qmamba::cli
