#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "rearec/evaluation.hpp"

namespace rearec::report_io {

// CSV / JSON emitters for the evaluation reports. One CSV row per cell:
// split, step, group, metric, value, count. The oracle row prints as step
// "oracle"; overall rows print group "all".

std::string metrics_to_csv(const evaluation::MetricsReport& report);
void write_metrics_csv(const evaluation::MetricsReport& report,
                       const std::filesystem::path& path);

std::string metrics_to_json(const evaluation::MetricsReport& report);

std::string latency_to_csv(const evaluation::LatencyReport& cached,
                           const evaluation::LatencyReport* uncached = nullptr);
void write_latency_csv(const evaluation::LatencyReport& cached,
                       const evaluation::LatencyReport* uncached,
                       const std::filesystem::path& path);

// rows: user, step, rank
std::string trajectories_to_csv(const std::vector<std::string>& users,
                                const std::vector<std::vector<long>>& trajectories);

// rows: user, i, j, cosine
std::string similarities_to_csv(const std::vector<std::string>& users,
                                const std::vector<numeric::Tensor<double>>& matrices);

void write_text(const std::string& text, const std::filesystem::path& path);

}  // namespace rearec::report_io
