#pragma once

#include <filesystem>
#include <istream>
#include <string>
#include <vector>

namespace sparsemv {

struct PlotStyle {
    std::string title;
    std::string x_column = "snr_db";
    std::string x_label = "SNR [dB]";
    std::string y_label = "variance";
    bool log_y = true;
    int width = 860;
    int height = 560;
};

// Numeric CSV with a header row.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;

    [[nodiscard]] std::size_t column(const std::string& name) const;  // throws if missing
};

[[nodiscard]] CsvTable read_table(std::istream& in);

// One polyline per var:/bound: column against the x column; se: columns are drawn
// as error bars on the matching var: curve. Bound curves are dashed.
[[nodiscard]] std::string render_svg(const CsvTable& table, const PlotStyle& style);
void emit_plot(const std::filesystem::path& csv, const std::filesystem::path& svg, const PlotStyle& style);

}  // namespace sparsemv
