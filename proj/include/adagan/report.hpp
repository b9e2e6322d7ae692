#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace adagan {

struct EpochMetric {
    std::string stage;
    int epoch = 0;
    std::string split;
    std::string metric;
    double value = 0.0;
};

/// "stage,epoch,split,metric,value" rows sorted by (stage, epoch, split,
/// metric); doubles printed with round-trip precision so emission is
/// byte-deterministic.
std::string metrics_csv(std::vector<EpochMetric> rows);

/// Inverse of metrics_csv; format violations are format errors.
std::vector<EpochMetric> parse_metrics_csv(const std::string& text);

/// Canonical serialization used for every emitted report: sorted keys,
/// two-space indent, trailing newline.
std::string report_text(const nlohmann::json& j);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace adagan
