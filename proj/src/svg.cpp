#include "amr/svg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "amr/common.hpp"

namespace amr::svg {

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

std::string esc(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string num(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

// Round tick step to 1/2/5 x 10^k covering the range with ~5 intervals.
double tick_step(double span) {
    if (span <= 0) return 1.0;
    const double raw = span / 5.0;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    const double r = raw / mag;
    if (r < 1.5) return mag;
    if (r < 3.5) return 2.0 * mag;
    if (r < 7.5) return 5.0 * mag;
    return 10.0 * mag;
}

}  // namespace

std::string line_plot(const std::string& title, const std::string& xlabel,
                      const std::string& ylabel, const std::vector<Series>& series, int width,
                      int height) {
    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
    double ymin = xmin, ymax = -xmin;
    for (const auto& s : series)
        for (auto [x, y] : s.points) {
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    if (!(xmin <= xmax)) {  // no points at all
        xmin = 0;
        xmax = 1;
        ymin = 0;
        ymax = 1;
    }
    if (xmax - xmin < 1e-12) {
        xmin -= 0.5;
        xmax += 0.5;
    }
    if (ymax - ymin < 1e-12) {
        ymin -= 0.5;
        ymax += 0.5;
    }
    const double pad_y = 0.05 * (ymax - ymin);
    ymin -= pad_y;
    ymax += pad_y;

    const int ml = 62, mr = 16, mt = 34, mb = 46;  // margins
    const double pw = width - ml - mr, ph = height - mt - mb;
    auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * pw; };
    auto py = [&](double y) { return mt + ph - (y - ymin) / (ymax - ymin) * ph; };

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
       << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" "
       << "font-family=\"sans-serif\" font-size=\"14\">" << esc(title) << "</text>\n";

    // gridlines + ticks
    const double xs = tick_step(xmax - xmin), ys = tick_step(ymax - ymin);
    os << "<g font-family=\"sans-serif\" font-size=\"10\" fill=\"#333\">\n";
    for (double x = std::ceil(xmin / xs) * xs; x <= xmax + 1e-9; x += xs) {
        const double X = px(x);
        os << "<line x1=\"" << num(X) << "\" y1=\"" << mt << "\" x2=\"" << num(X) << "\" y2=\""
           << mt + ph << "\" stroke=\"#ddd\"/>\n";
        os << "<text x=\"" << num(X) << "\" y=\"" << mt + ph + 14
           << "\" text-anchor=\"middle\">" << num(x) << "</text>\n";
    }
    for (double y = std::ceil(ymin / ys) * ys; y <= ymax + 1e-9; y += ys) {
        const double Y = py(y);
        os << "<line x1=\"" << ml << "\" y1=\"" << num(Y) << "\" x2=\"" << ml + pw << "\" y2=\""
           << num(Y) << "\" stroke=\"#ddd\"/>\n";
        os << "<text x=\"" << ml - 6 << "\" y=\"" << num(Y + 3)
           << "\" text-anchor=\"end\">" << num(y) << "</text>\n";
    }
    os << "</g>\n";

    // axes
    os << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << num(pw) << "\" height=\""
       << num(ph) << "\" fill=\"none\" stroke=\"#333\"/>\n";
    os << "<text x=\"" << ml + pw / 2 << "\" y=\"" << height - 10
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << esc(xlabel)
       << "</text>\n";
    os << "<text x=\"14\" y=\"" << mt + ph / 2
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
       << "transform=\"rotate(-90 14 " << mt + ph / 2 << ")\">" << esc(ylabel) << "</text>\n";

    // series
    for (std::size_t i = 0; i < series.size(); ++i) {
        const char* color = kPalette[i % (sizeof(kPalette) / sizeof(kPalette[0]))];
        const auto& pts = series[i].points;
        if (!pts.empty()) {
            os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.8\" points=\"";
            for (auto [x, y] : pts) os << num(px(x)) << "," << num(py(y)) << " ";
            os << "\"/>\n";
            for (auto [x, y] : pts)
                os << "<circle cx=\"" << num(px(x)) << "\" cy=\"" << num(py(y))
                   << "\" r=\"2.4\" fill=\"" << color << "\"/>\n";
        }
        if (!series[i].label.empty()) {
            const int lx = ml + 10, ly = mt + 14 + static_cast<int>(i) * 16;
            os << "<line x1=\"" << lx << "\" y1=\"" << ly - 4 << "\" x2=\"" << lx + 18 << "\" y2=\""
               << ly - 4 << "\" stroke=\"" << color << "\" stroke-width=\"1.8\"/>\n";
            os << "<text x=\"" << lx + 24 << "\" y=\"" << ly
               << "\" font-family=\"sans-serif\" font-size=\"11\">" << esc(series[i].label)
               << "</text>\n";
        }
    }
    os << "</svg>\n";
    return os.str();
}

void save_svg(const std::string& path, const std::string& svg) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + path);
    f.write(svg.data(), static_cast<std::streamsize>(svg.size()));
    if (!f) throw IoError("short write: " + path);
}

}  // namespace amr::svg
