#include "qmamba_tools/csv.hpp"

#include <charconv>
#include <sstream>
#include <stdexcept>

namespace qmamba::cli {

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string csv_field(std::string_view raw) {
    if (raw.find_first_of(",\"\r\n") == std::string_view::npos) {
        return std::string(raw);
    }
    std::string out = "\"";
    for (char c : raw) {
        if (c == '"') {
            out += '"';
        }
        out += c;
    }
    out += '"';
    return out;
}

CsvWriter::CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header,
                     bool append)
    : path_(path) {
    const bool fresh = !append || !std::filesystem::exists(path) ||
                       std::filesystem::file_size(path) == 0;
    os_.open(path, std::ios::binary | (fresh ? std::ios::trunc : std::ios::app));
    if (!os_) {
        throw std::runtime_error("cannot write " + path.string());
    }
    if (fresh) {
        row(header);
    }
}

void CsvWriter::row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i > 0) {
            os_ << ',';
        }
        os_ << csv_field(fields[i]);
    }
    os_ << '\n';
    os_.flush();
    if (!os_) {
        throw std::runtime_error("failed writing " + path_.string());
    }
}

int CsvTable::column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == name) {
            return static_cast<int>(i);
        }
    }
    throw std::out_of_range("no CSV column named " + std::string(name));
}

namespace {

std::vector<std::string> split_record(std::istream& is, bool& ok) {
    std::vector<std::string> fields;
    std::string field;
    bool quoted = false;
    bool any = false;
    char c;
    while (is.get(c)) {
        any = true;
        if (quoted) {
            if (c == '"') {
                if (is.peek() == '"') {
                    is.get(c);
                    field += '"';
                } else {
                    quoted = false;
                }
            } else {
                field += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(field));
            field.clear();
        } else if (c == '\n') {
            break;
        } else if (c != '\r') {
            field += c;
        }
    }
    ok = any;
    if (any) {
        fields.push_back(std::move(field));
    }
    return fields;
}

}  // namespace

CsvTable read_csv(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw std::runtime_error("cannot open " + path.string());
    }
    CsvTable table;
    bool ok = false;
    table.header = split_record(is, ok);
    while (true) {
        auto rec = split_record(is, ok);
        if (!ok) {
            break;
        }
        table.rows.push_back(std::move(rec));
    }
    return table;
}

}  // namespace qmamba::cli
