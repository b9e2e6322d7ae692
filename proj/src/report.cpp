#include "adagan/report.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <tuple>

#include "adagan/errors.hpp"

namespace adagan {

namespace {

std::string format_value(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void check_field(const std::string& field, size_t line) {
    if (field.find(',') != std::string::npos || field.find('\n') != std::string::npos) {
        throw FormatError("metrics field with separator character at line " +
                          std::to_string(line));
    }
}

}  // namespace

std::string metrics_csv(std::vector<EpochMetric> rows) {
    std::stable_sort(rows.begin(), rows.end(), [](const EpochMetric& a, const EpochMetric& b) {
        return std::tie(a.stage, a.epoch, a.split, a.metric) <
               std::tie(b.stage, b.epoch, b.split, b.metric);
    });
    std::string out = "stage,epoch,split,metric,value\n";
    for (size_t i = 0; i < rows.size(); ++i) {
        check_field(rows[i].stage, i + 2);
        check_field(rows[i].split, i + 2);
        check_field(rows[i].metric, i + 2);
        out += rows[i].stage;
        out += ',';
        out += std::to_string(rows[i].epoch);
        out += ',';
        out += rows[i].split;
        out += ',';
        out += rows[i].metric;
        out += ',';
        out += format_value(rows[i].value);
        out += '\n';
    }
    return out;
}

std::vector<EpochMetric> parse_metrics_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "stage,epoch,split,metric,value") {
        throw FormatError("metrics csv missing canonical header");
    }
    std::vector<EpochMetric> rows;
    size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::array<std::string, 5> fields;
        size_t start = 0;
        for (int f = 0; f < 4; ++f) {
            size_t comma = line.find(',', start);
            if (comma == std::string::npos) {
                throw FormatError("metrics csv row with too few fields at line " +
                                  std::to_string(line_no));
            }
            fields[static_cast<size_t>(f)] = line.substr(start, comma - start);
            start = comma + 1;
        }
        fields[4] = line.substr(start);
        if (fields[4].find(',') != std::string::npos) {
            throw FormatError("metrics csv row with too many fields at line " +
                              std::to_string(line_no));
        }
        EpochMetric row;
        row.stage = fields[0];
        row.split = fields[2];
        row.metric = fields[3];
        try {
            row.epoch = std::stoi(fields[1]);
            row.value = std::stod(fields[4]);
        } catch (const std::exception&) {
            throw FormatError("metrics csv row with non-numeric field at line " +
                              std::to_string(line_no));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string report_text(const nlohmann::json& j) {
    return j.dump(2) + "\n";
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write file: " + path);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("short write: " + path);
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

}  // namespace adagan
