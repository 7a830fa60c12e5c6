#include "rearec/report_io.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace rearec::report_io {

namespace {

std::string step_label(int step) {
  return step == evaluation::kOracleStep ? "oracle" : std::to_string(step);
}

std::string group_label(int group) {
  return group == evaluation::kOverallGroup ? "all" : std::to_string(group);
}

std::string format_value(double v) {
  std::ostringstream out;
  if (std::isnan(v)) {
    out << "nan";
  } else {
    out.precision(10);
    out << v;
  }
  return out.str();
}

}  // namespace

std::string metrics_to_csv(const evaluation::MetricsReport& report) {
  std::ostringstream out;
  out << "split,step,group,metric,value,count\n";
  for (const auto& c : report.cells)
    out << c.split << ',' << step_label(c.step) << ',' << group_label(c.group) << ','
        << c.metric << ',' << format_value(c.value) << ',' << c.count << '\n';
  return out.str();
}

std::string metrics_to_json(const evaluation::MetricsReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& c : report.cells)
    rows.push_back({{"split", c.split},
                    {"step", step_label(c.step)},
                    {"group", group_label(c.group)},
                    {"metric", c.metric},
                    {"value", c.value},
                    {"count", c.count}});
  return rows.dump();
}

std::string latency_to_csv(const evaluation::LatencyReport& cached,
                           const evaluation::LatencyReport* uncached) {
  std::ostringstream out;
  out << "mode,steps,seconds,cost_increase_pct\n";
  auto emit = [&](const evaluation::LatencyReport& r) {
    for (const auto& row : r.rows)
      out << (r.cached ? "cached" : "uncached") << ',' << row.steps << ','
          << format_value(row.seconds) << ',' << format_value(row.cost_increase_pct) << '\n';
  };
  emit(cached);
  if (uncached) emit(*uncached);
  return out.str();
}

std::string trajectories_to_csv(const std::vector<std::string>& users,
                                const std::vector<std::vector<long>>& trajectories) {
  std::ostringstream out;
  out << "user,step,rank\n";
  for (size_t u = 0; u < users.size(); ++u)
    for (size_t k = 0; k < trajectories[u].size(); ++k)
      out << users[u] << ',' << k << ',' << trajectories[u][k] << '\n';
  return out.str();
}

std::string similarities_to_csv(const std::vector<std::string>& users,
                                const std::vector<numeric::Tensor<double>>& matrices) {
  std::ostringstream out;
  out << "user,i,j,cosine\n";
  for (size_t u = 0; u < users.size(); ++u) {
    const auto& m = matrices[u];
    for (int i = 0; i < m.rows(); ++i)
      for (int j = 0; j < m.cols(); ++j)
        out << users[u] << ',' << i << ',' << j << ',' << format_value(m.at(i, j)) << '\n';
  }
  return out.str();
}

void write_text(const std::string& text, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

void write_metrics_csv(const evaluation::MetricsReport& report,
                       const std::filesystem::path& path) {
  write_text(metrics_to_csv(report), path);
}

void write_latency_csv(const evaluation::LatencyReport& cached,
                       const evaluation::LatencyReport* uncached,
                       const std::filesystem::path& path) {
  write_text(latency_to_csv(cached, uncached), path);
}

}  // namespace rearec::report_io
