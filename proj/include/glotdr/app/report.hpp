#ifndef GLOTDR_APP_REPORT_HPP
#define GLOTDR_APP_REPORT_HPP

#include "glotdr/train.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace glotdr::app {

struct RunOutput {
    std::string run_id;
    std::uint64_t seed = 0;
    train::Scenario scenario = train::Scenario::da;
    train::Preset preset = train::Preset::glot;
    train::MetricsTrace trace;
};

inline constexpr const char* kMetricsHeader = "run_id,seed,scenario,preset,epoch,metric,value";

/// Six significant digits.
std::string format_value(double v);

/// One row per logged metric, runs in the given order.
std::string metrics_csv(const std::vector<RunOutput>& runs);
/// Last logged value of each metric per run.
std::string summary_csv(const std::vector<RunOutput>& runs);

struct CsvRecord {
    std::string run_id;
    std::uint64_t seed = 0;
    std::string scenario;
    std::string preset;
    int epoch = 0;
    std::string metric;
    double value = 0.0;
};

/// Reads a metrics CSV back; throws std::invalid_argument on a bad header
/// or malformed row.
std::vector<CsvRecord> parse_metrics_csv(const std::string& text);

/// Polyline chart of the named series against epoch. Missing series are
/// skipped.
std::string curves_svg(const train::MetricsTrace& trace, const std::vector<std::string>& metrics,
                       const std::string& title);

void write_text(const std::string& path, const std::string& text);

} // namespace glotdr::app

#endif // GLOTDR_APP_REPORT_HPP
