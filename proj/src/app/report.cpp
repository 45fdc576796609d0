#include "glotdr/app/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace glotdr::app {

namespace {

std::string fixed(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string row_prefix(const RunOutput& r)
{
    return r.run_id + "," + std::to_string(r.seed) + "," + train::to_string(r.scenario) + "," +
           train::to_string(r.preset) + ",";
}

std::vector<std::string> split_csv(const std::string& line)
{
    std::vector<std::string> out;
    std::stringstream in(line);
    for (std::string cell; std::getline(in, cell, ',');)
        out.push_back(cell);
    if (!line.empty() && line.back() == ',')
        out.emplace_back();
    return out;
}

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

} // namespace

std::string format_value(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

std::string metrics_csv(const std::vector<RunOutput>& runs)
{
    std::string out = std::string(kMetricsHeader) + "\n";
    for (const auto& r : runs) {
        const auto prefix = row_prefix(r);
        for (const auto& rec : r.trace.records)
            out += prefix + std::to_string(rec.epoch) + "," + rec.metric + "," + format_value(rec.value) + "\n";
    }
    return out;
}

std::string summary_csv(const std::vector<RunOutput>& runs)
{
    std::string out = std::string(kMetricsHeader) + "\n";
    for (const auto& r : runs) {
        const auto prefix = row_prefix(r);
        std::vector<std::string> seen;
        for (const auto& rec : r.trace.records)
            if (std::find(seen.begin(), seen.end(), rec.metric) == seen.end())
                seen.push_back(rec.metric);
        for (const auto& m : seen) {
            int epoch = 0;
            double value = 0.0;
            for (const auto& rec : r.trace.records)
                if (rec.metric == m) {
                    epoch = rec.epoch;
                    value = rec.value;
                }
            out += prefix + std::to_string(epoch) + "," + m + "," + format_value(value) + "\n";
        }
    }
    return out;
}

std::vector<CsvRecord> parse_metrics_csv(const std::string& text)
{
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kMetricsHeader)
        throw std::invalid_argument("metrics CSV: unexpected header");
    std::vector<CsvRecord> out;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        const auto cells = split_csv(line);
        if (cells.size() != 7)
            throw std::invalid_argument("metrics CSV line " + std::to_string(line_no) + ": expected 7 fields");
        try {
            std::size_t used = 0;
            CsvRecord r{cells[0], std::stoull(cells[1]), cells[2], cells[3], std::stoi(cells[4]), cells[5],
                        std::stod(cells[6], &used)};
            if (used != cells[6].size())
                throw std::invalid_argument("trailing characters");
            out.push_back(std::move(r));
        } catch (const std::exception&) {
            throw std::invalid_argument("metrics CSV line " + std::to_string(line_no) + ": malformed number");
        }
    }
    return out;
}

std::string curves_svg(const train::MetricsTrace& trace, const std::vector<std::string>& metrics,
                       const std::string& title)
{
    const double w = 640, h = 400, left = 60, right = 150, top = 40, bottom = 50;
    const double pw = w - left - right, ph = h - top - bottom;

    std::vector<std::pair<std::string, std::vector<double>>> series;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    std::size_t epochs = 1;
    for (const auto& m : metrics) {
        auto s = trace.series(m);
        if (s.empty())
            continue;
        for (double v : s) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        epochs = std::max(epochs, s.size());
        series.emplace_back(m, std::move(s));
    }
    if (series.empty()) {
        lo = 0.0;
        hi = 1.0;
    }
    if (hi - lo < 1e-12) {
        lo -= 0.5;
        hi += 0.5;
    }
    const auto px = [&](std::size_t i) {
        return left + (epochs == 1 ? 0.5 : static_cast<double>(i) / static_cast<double>(epochs - 1)) * pw;
    };
    const auto py = [&](double v) { return top + (hi - v) / (hi - lo) * ph; };

    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
      << " " << h << "\">\n";
    s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s << "<text x=\"" << w / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">"
      << title << "</text>\n";
    s << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"#444\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double v = lo + (hi - lo) * t / 4.0;
        s << "<text x=\"" << left - 6 << "\" y=\"" << fixed(py(v) + 4)
          << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << format_value(v) << "</text>\n";
    }
    s << "<text x=\"" << left << "\" y=\"" << h - bottom + 18 << "\" font-family=\"sans-serif\" font-size=\"11\">1</text>\n";
    s << "<text x=\"" << left + pw << "\" y=\"" << h - bottom + 18
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << epochs << "</text>\n";
    s << "<text x=\"" << left + pw / 2 << "\" y=\"" << h - 12
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">epoch</text>\n";
    for (std::size_t k = 0; k < series.size(); ++k) {
        const char* color = kPalette[k % std::size(kPalette)];
        s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        const auto& v = series[k].second;
        for (std::size_t i = 0; i < v.size(); ++i)
            s << (i ? " " : "") << fixed(px(i)) << "," << fixed(py(v[i]));
        s << "\"/>\n";
        const double ly = top + 16 + 18 * static_cast<double>(k);
        s << "<line x1=\"" << left + pw + 12 << "\" y1=\"" << ly - 4 << "\" x2=\"" << left + pw + 32 << "\" y2=\""
          << ly - 4 << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        s << "<text x=\"" << left + pw + 38 << "\" y=\"" << ly << "\" font-family=\"sans-serif\" font-size=\"12\">"
          << series[k].first << "</text>\n";
    }
    s << "</svg>\n";
    return s.str();
}

void write_text(const std::string& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw std::runtime_error("cannot write '" + path + "'");
    out << text;
    if (!out)
        throw std::runtime_error("write failed for '" + path + "'");
}

} // namespace glotdr::app
