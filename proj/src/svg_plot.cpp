#include "sparsemv/svg_plot.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace sparsemv {

namespace {

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string tick_label(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
                          "#8c564b", "#e377c2", "#17becf", "#7f7f7f", "#bcbd22"};

double nice_step(double span, int target) {
    const double raw = span / std::max(target, 1);
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    for (double m : {1.0, 2.0, 5.0, 10.0})
        if (m * mag >= raw) return m * mag;
    return 10.0 * mag;
}

}  // namespace

std::size_t CsvTable::column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw std::runtime_error("csv: missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
}

CsvTable read_table(std::istream& in) {
    CsvTable t;
    std::string line;
    if (!std::getline(in, line) || line.empty()) throw std::runtime_error("csv: missing header");
    t.header = split(line);
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        const auto f = split(line);
        if (f.size() != t.header.size())
            throw std::runtime_error("csv line " + std::to_string(lineno) + ": expected " +
                                     std::to_string(t.header.size()) + " fields, got " + std::to_string(f.size()));
        std::vector<double> row;
        for (const auto& s : f) {
            double v = 0.0;
            const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
            if (ec != std::errc() || ptr != s.data() + s.size())
                throw std::runtime_error("csv line " + std::to_string(lineno) + ": not a number: '" + s + "'");
            row.push_back(v);
        }
        t.rows.push_back(std::move(row));
    }
    return t;
}

std::string render_svg(const CsvTable& table, const PlotStyle& style) {
    const std::size_t xc = table.column(style.x_column);
    struct Curve {
        std::string name;
        std::size_t col;
        std::ptrdiff_t se_col = -1;
        bool dashed;
    };
    std::vector<Curve> curves;
    for (std::size_t c = 0; c < table.header.size(); ++c) {
        const std::string& h = table.header[c];
        if (h.rfind("var:", 0) == 0) {
            Curve cv{h.substr(4), c, -1, false};
            const auto se = std::find(table.header.begin(), table.header.end(), "se:" + cv.name);
            if (se != table.header.end()) cv.se_col = se - table.header.begin();
            curves.push_back(cv);
        } else if (h.rfind("bound:", 0) == 0) {
            curves.push_back({h.substr(6), c, -1, true});
        }
    }

    const auto ok_y = [&](double v) { return std::isfinite(v) && (!style.log_y || v > 0.0); };
    double x_lo = std::numeric_limits<double>::infinity(), x_hi = -x_lo;
    double y_lo = x_lo, y_hi = -x_lo;
    for (const auto& r : table.rows) {
        if (!std::isfinite(r[xc])) continue;
        x_lo = std::min(x_lo, r[xc]);
        x_hi = std::max(x_hi, r[xc]);
        for (const auto& cv : curves)
            if (ok_y(r[cv.col])) {
                y_lo = std::min(y_lo, r[cv.col]);
                y_hi = std::max(y_hi, r[cv.col]);
            }
    }
    if (!(x_lo <= x_hi)) x_lo = 0.0, x_hi = 1.0;
    if (x_lo == x_hi) x_lo -= 1.0, x_hi += 1.0;
    if (!(y_lo <= y_hi)) y_lo = style.log_y ? 0.1 : 0.0, y_hi = style.log_y ? 10.0 : 1.0;
    const auto ty = [&](double v) { return style.log_y ? std::log10(v) : v; };
    double ty_lo = ty(y_lo), ty_hi = ty(y_hi);
    if (style.log_y) {
        ty_lo = std::floor(ty_lo);
        ty_hi = std::ceil(ty_hi);
    }
    if (ty_lo == ty_hi) ty_lo -= 1.0, ty_hi += 1.0;

    const double left = 80, top = 50, right_pad = 210, bottom = 60;
    const double pw = style.width - left - right_pad, ph = style.height - top - bottom;
    const auto px = [&](double x) { return left + (x - x_lo) / (x_hi - x_lo) * pw; };
    const auto py = [&](double v) { return top + (ty_hi - ty(v)) / (ty_hi - ty_lo) * ph; };

    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << style.width << "\" height=\"" << style.height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    if (!style.title.empty())
        s << "<text x=\"" << num(left + pw / 2) << "\" y=\"28\" text-anchor=\"middle\" font-size=\"16\">"
          << escape(style.title) << "</text>\n";
    s << "<rect x=\"" << num(left) << "\" y=\"" << num(top) << "\" width=\"" << num(pw) << "\" height=\"" << num(ph)
      << "\" fill=\"none\" stroke=\"black\"/>\n";

    // x grid
    const double xs = nice_step(x_hi - x_lo, 8);
    for (double x = std::ceil(x_lo / xs) * xs; x <= x_hi + 1e-9 * xs; x += xs) {
        s << "<line x1=\"" << num(px(x)) << "\" y1=\"" << num(top) << "\" x2=\"" << num(px(x)) << "\" y2=\""
          << num(top + ph) << "\" stroke=\"#dddddd\"/>\n";
        s << "<text x=\"" << num(px(x)) << "\" y=\"" << num(top + ph + 18) << "\" text-anchor=\"middle\">"
          << tick_label(std::abs(x) < 1e-12 * xs ? 0.0 : x) << "</text>\n";
    }
    // y grid
    if (style.log_y) {
        for (double d = ty_lo; d <= ty_hi + 1e-9; d += 1.0) {
            const double yy = top + (ty_hi - d) / (ty_hi - ty_lo) * ph;
            s << "<line x1=\"" << num(left) << "\" y1=\"" << num(yy) << "\" x2=\"" << num(left + pw) << "\" y2=\""
              << num(yy) << "\" stroke=\"#dddddd\"/>\n";
            s << "<text x=\"" << num(left - 6) << "\" y=\"" << num(yy + 4) << "\" text-anchor=\"end\">1e"
              << static_cast<int>(d) << "</text>\n";
        }
    } else {
        const double ys = nice_step(ty_hi - ty_lo, 6);
        for (double v = std::ceil(ty_lo / ys) * ys; v <= ty_hi + 1e-9 * ys; v += ys) {
            const double yy = top + (ty_hi - v) / (ty_hi - ty_lo) * ph;
            s << "<line x1=\"" << num(left) << "\" y1=\"" << num(yy) << "\" x2=\"" << num(left + pw) << "\" y2=\""
              << num(yy) << "\" stroke=\"#dddddd\"/>\n";
            s << "<text x=\"" << num(left - 6) << "\" y=\"" << num(yy + 4) << "\" text-anchor=\"end\">"
              << tick_label(v) << "</text>\n";
        }
    }
    s << "<text x=\"" << num(left + pw / 2) << "\" y=\"" << num(style.height - 15.0)
      << "\" text-anchor=\"middle\">" << escape(style.x_label) << "</text>\n";
    s << "<text transform=\"translate(20," << num(top + ph / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
      << escape(style.y_label) << "</text>\n";

    for (std::size_t i = 0; i < curves.size(); ++i) {
        const auto& cv = curves[i];
        const char* color = kPalette[i % (sizeof kPalette / sizeof kPalette[0])];
        const std::string dash = cv.dashed ? " stroke-dasharray=\"6,4\"" : "";
        s << "<g class=\"curve\" data-column=\"" << escape(table.header[cv.col]) << "\">\n";
        std::string pts;
        const auto flush = [&] {
            if (!pts.empty())
                s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.6\"" << dash
                  << " points=\"" << pts << "\"/>\n";
            pts.clear();
        };
        for (const auto& r : table.rows) {
            const double x = r[xc], y = r[cv.col];
            if (!std::isfinite(x) || !ok_y(y)) {
                flush();
                continue;
            }
            pts += (pts.empty() ? "" : " ") + num(px(x)) + "," + num(py(y));
            if (cv.se_col >= 0) {
                const double se = r[static_cast<std::size_t>(cv.se_col)];
                if (std::isfinite(se) && se > 0.0 && ok_y(y - se))
                    s << "<line x1=\"" << num(px(x)) << "\" y1=\"" << num(py(y - se)) << "\" x2=\"" << num(px(x))
                      << "\" y2=\"" << num(py(y + se)) << "\" stroke=\"" << color << "\"/>\n";
            }
        }
        flush();
        const double ly = top + 14.0 + 18.0 * static_cast<double>(i);
        s << "<line x1=\"" << num(left + pw + 12) << "\" y1=\"" << num(ly) << "\" x2=\"" << num(left + pw + 40)
          << "\" y2=\"" << num(ly) << "\" stroke=\"" << color << "\" stroke-width=\"1.6\"" << dash << "/>\n";
        s << "<text x=\"" << num(left + pw + 46) << "\" y=\"" << num(ly + 4) << "\">"
          << escape(table.header[cv.col]) << "</text>\n";
        s << "</g>\n";
    }
    s << "</svg>\n";
    return s.str();
}

void emit_plot(const std::filesystem::path& csv, const std::filesystem::path& svg, const PlotStyle& style) {
    std::ifstream in(csv);
    if (!in) throw std::runtime_error("cannot read " + csv.string());
    const std::string doc = render_svg(read_table(in), style);
    std::ofstream out(svg);
    if (!out) throw std::runtime_error("cannot write " + svg.string());
    out << doc;
}

}  // namespace sparsemv
