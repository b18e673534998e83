#include "ermcal/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include "ermcal/errors.hpp"

namespace ermcal {

namespace {

constexpr double kWidth = 720, kHeight = 440;
constexpr double kLeft = 80, kRight = 190, kTop = 40, kBottom = 70;
const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"};

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string label(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '<') out += "&lt;";
        else if (c == '>') out += "&gt;";
        else if (c == '&') out += "&amp;";
        else out += c;
    }
    return out;
}

struct Point {
    double x, mean, sd;
};

bool is_reference(SweepModel m, SweepAxis axis) {
    return axis == SweepAxis::Lambda && (m == SweepModel::Constant || m == SweepModel::Uncalibrated);
}

}  // namespace

SweepAxis infer_axis(const std::vector<AggregateRow>& agg) {
    std::set<long long> ns;
    for (const auto& a : agg) ns.insert(a.n);
    return ns.size() > 1 ? SweepAxis::SampleSize : SweepAxis::Lambda;
}

std::vector<std::pair<std::string, std::string>> render_metric_plots(const std::vector<AggregateRow>& agg,
                                                                     SweepAxis axis, Split split) {
    if (agg.empty()) throw InputError("plot: no aggregate rows");
    const auto& names = aggregate_metric_names();
    std::vector<std::pair<std::string, std::string>> out;

    for (std::size_t k = 0; k < names.size(); ++k) {
        std::map<std::string, std::vector<Point>> series;
        std::map<std::string, double> references;
        std::set<double> grid;
        for (const auto& a : agg) {
            if (a.split != split || k >= a.mean.size() || !a.mean[k]) continue;
            const std::string name = std::string(to_string(a.model)) + "/" + a.kernel;
            if (is_reference(a.model, axis)) {
                references[name] = *a.mean[k];
                continue;
            }
            const double x = axis == SweepAxis::SampleSize ? static_cast<double>(a.n) : a.lambda;
            if (!(x > 0.0)) continue;
            series[name].push_back({x, *a.mean[k], a.stddev[k].value_or(0.0)});
            grid.insert(x);
        }
        if (grid.empty()) continue;

        double ymax = 0.0;
        for (auto& [name, pts] : series) {
            std::sort(pts.begin(), pts.end(), [](const Point& a, const Point& b) { return a.x < b.x; });
            for (const auto& p : pts) ymax = std::max(ymax, p.mean + p.sd);
        }
        for (const auto& [name, v] : references) ymax = std::max(ymax, v);
        ymax = ymax > 0.0 ? ymax * 1.08 : 1.0;

        const double lx0 = std::log10(*grid.begin()), lx1 = std::log10(*grid.rbegin());
        const double span = lx1 > lx0 ? lx1 - lx0 : 1.0;
        const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
        const auto px = [&](double x) { return kLeft + (grid.size() > 1 ? (std::log10(x) - lx0) / span : 0.5) * pw; };
        const auto py = [&](double y) { return kTop + ph - y / ymax * ph; };

        std::string svg = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
        svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kWidth) + "\" height=\"" + num(kHeight) +
               "\" viewBox=\"0 0 " + num(kWidth) + " " + num(kHeight) + "\" font-family=\"sans-serif\" font-size=\"11\">\n";
        svg += "<rect x=\"0\" y=\"0\" width=\"" + num(kWidth) + "\" height=\"" + num(kHeight) + "\" fill=\"white\"/>\n";
        svg += "<text x=\"" + num(kLeft + pw / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" + names[k] +
               " (" + (split == Split::Test ? "test" : "train") + ")</text>\n";

        svg += "<g class=\"axes\" stroke=\"black\">\n";
        svg += "<line x1=\"" + num(kLeft) + "\" y1=\"" + num(kTop + ph) + "\" x2=\"" + num(kLeft + pw) + "\" y2=\"" +
               num(kTop + ph) + "\"/>\n";
        svg += "<line x1=\"" + num(kLeft) + "\" y1=\"" + num(kTop) + "\" x2=\"" + num(kLeft) + "\" y2=\"" +
               num(kTop + ph) + "\"/>\n</g>\n";

        for (double x : grid) {
            svg += "<g class=\"x-tick\"><line x1=\"" + num(px(x)) + "\" y1=\"" + num(kTop + ph) + "\" x2=\"" +
                   num(px(x)) + "\" y2=\"" + num(kTop + ph + 5) + "\" stroke=\"black\"/><text x=\"" + num(px(x)) +
                   "\" y=\"" + num(kTop + ph + 18) + "\" text-anchor=\"middle\">" + label(x) + "</text></g>\n";
        }
        for (int t = 0; t <= 4; ++t) {
            const double y = ymax * t / 4.0;
            svg += "<g class=\"y-tick\"><line x1=\"" + num(kLeft - 5) + "\" y1=\"" + num(py(y)) + "\" x2=\"" +
                   num(kLeft) + "\" y2=\"" + num(py(y)) + "\" stroke=\"black\"/><text x=\"" + num(kLeft - 8) +
                   "\" y=\"" + num(py(y) + 4) + "\" text-anchor=\"end\">" + label(y) + "</text></g>\n";
        }
        svg += "<text x=\"" + num(kLeft + pw / 2) + "\" y=\"" + num(kHeight - 20) + "\" text-anchor=\"middle\">" +
               (axis == SweepAxis::SampleSize ? "n (log scale)" : "lambda (log scale)") + "</text>\n";

        std::size_t color = 0;
        double legend_y = kTop + 10;
        const auto legend = [&](const std::string& name, const char* c, bool dashed) {
            svg += "<g class=\"legend\"><line x1=\"" + num(kLeft + pw + 15) + "\" y1=\"" + num(legend_y) + "\" x2=\"" +
                   num(kLeft + pw + 40) + "\" y2=\"" + num(legend_y) + "\" stroke=\"" + c + "\" stroke-width=\"2\"" +
                   (dashed ? " stroke-dasharray=\"5,3\"" : "") + "/><text x=\"" + num(kLeft + pw + 45) + "\" y=\"" +
                   num(legend_y + 4) + "\">" + escape(name) + "</text></g>\n";
            legend_y += 18;
        };
        for (const auto& [name, pts] : series) {
            const char* c = kPalette[color++ % std::size(kPalette)];
            std::string band, line;
            for (const auto& p : pts) band += num(px(p.x)) + "," + num(py(p.mean + p.sd)) + " ";
            for (auto it = pts.rbegin(); it != pts.rend(); ++it)
                band += num(px(it->x)) + "," + num(py(std::max(0.0, it->mean - it->sd))) + " ";
            for (const auto& p : pts) line += num(px(p.x)) + "," + num(py(p.mean)) + " ";
            band.pop_back();
            line.pop_back();
            svg += "<g class=\"series\" data-series=\"" + escape(name) + "\">\n";
            svg += "<polygon class=\"band\" points=\"" + band + "\" fill=\"" + c + "\" fill-opacity=\"0.2\" stroke=\"none\"/>\n";
            svg += "<polyline class=\"mean\" points=\"" + line + "\" fill=\"none\" stroke=\"" + c + "\" stroke-width=\"2\"/>\n";
            for (const auto& p : pts)
                svg += "<circle cx=\"" + num(px(p.x)) + "\" cy=\"" + num(py(p.mean)) + "\" r=\"2.5\" fill=\"" + c + "\"/>\n";
            svg += "</g>\n";
            legend(name, c, false);
        }
        for (const auto& [name, v] : references) {
            const char* c = kPalette[color++ % std::size(kPalette)];
            svg += "<g class=\"reference\" data-series=\"" + escape(name) + "\"><line x1=\"" + num(kLeft) + "\" y1=\"" +
                   num(py(v)) + "\" x2=\"" + num(kLeft + pw) + "\" y2=\"" + num(py(v)) + "\" stroke=\"" + c +
                   "\" stroke-width=\"1.5\" stroke-dasharray=\"5,3\"/></g>\n";
            legend(name, c, true);
        }
        svg += "</svg>\n";
        out.emplace_back(names[k], std::move(svg));
    }
    return out;
}

}  // namespace ermcal
