#include "befa/report.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "befa/csv.hpp"

namespace befa {

namespace {

constexpr double kWidth = 640, kHeight = 420, kLeft = 70, kRight = 20, kTop = 30, kBottom = 60;
const char* const kPalette[] = {"#1b6ca8", "#d1495b", "#2e933c", "#edae49", "#66468c", "#30638e"};

std::string num(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

std::string escape(const std::string& text) {
  std::string out;
  for (const char c : text) {
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

// Linear map from data coordinates into the plot frame.
struct Frame {
  double x0, x1, y0, y1;
  double px(double x) const { return kLeft + (x - x0) / (x1 - x0) * (kWidth - kLeft - kRight); }
  double py(double y) const { return kHeight - kBottom - (y - y0) / (y1 - y0) * (kHeight - kTop - kBottom); }
};

void pad(double& lo, double& hi) {
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double m = 0.05 * (hi - lo);
  lo -= m;
  hi += m;
}

class Svg {
 public:
  Svg(double w = kWidth, double h = kHeight) {
    out_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
         << "\" viewBox=\"0 0 " << w << ' ' << h << "\">\n"
         << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  }
  void line(double x1, double y1, double x2, double y2, const std::string& stroke,
            double width = 1, const std::string& extra = "") {
    out_ << "<line x1=\"" << num(x1) << "\" y1=\"" << num(y1) << "\" x2=\"" << num(x2) << "\" y2=\""
         << num(y2) << "\" stroke=\"" << stroke << "\" stroke-width=\"" << width << "\"" << extra << "/>\n";
  }
  void circle(double x, double y, double r, const std::string& fill, const std::string& cls = "") {
    out_ << "<circle" << (cls.empty() ? "" : " class=\"" + cls + "\"") << " cx=\"" << num(x)
         << "\" cy=\"" << num(y) << "\" r=\"" << r << "\" fill=\"" << fill << "\"/>\n";
  }
  void rect(double x, double y, double w, double h, const std::string& fill, const std::string& cls = "") {
    out_ << "<rect" << (cls.empty() ? "" : " class=\"" + cls + "\"") << " x=\"" << num(x)
         << "\" y=\"" << num(y) << "\" width=\"" << num(w) << "\" height=\"" << num(h)
         << "\" fill=\"" << fill << "\"/>\n";
  }
  void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& stroke,
                const std::string& cls = "") {
    out_ << "<polyline" << (cls.empty() ? "" : " class=\"" + cls + "\"") << " fill=\"none\" stroke=\""
         << stroke << "\" stroke-width=\"2\" points=\"";
    for (const auto& [x, y] : pts) out_ << num(x) << ',' << num(y) << ' ';
    out_ << "\"/>\n";
  }
  void text(double x, double y, const std::string& s, const std::string& anchor = "middle",
            double size = 12, const std::string& extra = "") {
    out_ << "<text x=\"" << num(x) << "\" y=\"" << num(y) << "\" font-family=\"sans-serif\" font-size=\""
         << size << "\" text-anchor=\"" << anchor << "\"" << extra << ">" << escape(s) << "</text>\n";
  }
  void axes(const Frame& f, const std::string& xl, const std::string& yl) {
    line(kLeft, kHeight - kBottom, kWidth - kRight, kHeight - kBottom, "black");
    line(kLeft, kTop, kLeft, kHeight - kBottom, "black");
    for (int i = 0; i <= 4; ++i) {
      const double yv = f.y0 + (f.y1 - f.y0) * i / 4.0;
      line(kLeft - 4, f.py(yv), kLeft, f.py(yv), "black");
      text(kLeft - 6, f.py(yv) + 4, num(yv), "end", 10);
    }
    text((kLeft + kWidth - kRight) / 2, kHeight - 15, xl);
    text(18, (kTop + kHeight - kBottom) / 2, yl, "middle", 12,
         " transform=\"rotate(-90 18 " + num((kTop + kHeight - kBottom) / 2) + ")\"");
  }
  std::string str() {
    out_ << "</svg>\n";
    return out_.str();
  }

 private:
  std::ostringstream out_;
};

}  // namespace

std::string lpml_svg(const std::vector<LpmlResult>& results) {
  std::vector<LpmlResult> rs = results;
  std::sort(rs.begin(), rs.end(), [](const auto& a, const auto& b) { return a.factors < b.factors; });
  double x0 = 0, x1 = 1, y0 = std::numeric_limits<double>::infinity(), y1 = -y0;
  if (!rs.empty()) {
    x0 = rs.front().factors;
    x1 = rs.back().factors;
  }
  for (const auto& r : rs) {
    for (const double v : r.per_chain) {
      y0 = std::min(y0, v);
      y1 = std::max(y1, v);
    }
  }
  if (rs.empty()) y0 = 0, y1 = 1;
  pad(x0, x1);
  pad(y0, y1);
  const Frame f{x0, x1, y0, y1};
  Svg svg;
  svg.axes(f, "K", "LPML");
  std::vector<std::pair<double, double>> pts;
  for (const auto& r : rs) {
    pts.emplace_back(f.px(r.factors), f.py(r.average));
    svg.text(f.px(r.factors), kHeight - kBottom + 16, std::to_string(r.factors), "middle", 10);
    for (const double v : r.per_chain) svg.circle(f.px(r.factors), f.py(v), 3, "#999999", "chain");
  }
  svg.polyline(pts, kPalette[0], "average");
  for (const auto& [x, y] : pts) svg.circle(x, y, 4, kPalette[0], "average");
  return svg.str();
}

std::string eigen_svg(const ParallelAnalysisResult& r) {
  const int m = static_cast<int>(r.mean.size());
  double y0 = 0.0, y1 = 1.0;
  for (int k = 0; k < m; ++k) {
    y1 = std::max({y1, r.upper[k], r.threshold[k]});
  }
  pad(y0, y1);
  const Frame f{0.5, m + 0.5, y0, y1};
  Svg svg;
  svg.axes(f, "eigenvalue index", "eigenvalue");
  std::vector<std::pair<double, double>> null_pts;
  for (int k = 0; k < m; ++k) {
    const double x = f.px(k + 1);
    svg.line(x, f.py(r.lower[k]), x, f.py(r.upper[k]), kPalette[0], 2, " class=\"interval\"");
    svg.circle(x, f.py(r.mean[k]), 4, kPalette[0], "mean");
    svg.text(x, kHeight - kBottom + 16, std::to_string(k + 1), "middle", 10);
    null_pts.emplace_back(x, f.py(r.threshold[k]));
  }
  svg.polyline(null_pts, kPalette[1], "threshold");
  svg.text(kWidth - kRight, kTop - 10, "selected K = " + std::to_string(r.selected), "end");
  return svg.str();
}

Eigen::MatrixXd variance_share(const Eigen::MatrixXd& loadings, const Eigen::VectorXd& uniqueness) {
  const Eigen::MatrixXd sq = loadings.array().square();
  Eigen::MatrixXd out = sq;
  for (Eigen::Index d = 0; d < sq.rows(); ++d) {
    const double total = sq.row(d).sum() + uniqueness[d];
    out.row(d) = total > 0.0 ? Eigen::RowVectorXd(sq.row(d) / total) : Eigen::RowVectorXd::Zero(sq.cols());
  }
  return out;
}

std::string loading_heatmap_svg(const Eigen::MatrixXd& share, const std::vector<std::string>& dims) {
  const double cell = 36, left = 160, top = 40;
  const double w = left + cell * static_cast<double>(share.cols()) + 20;
  const double h = top + cell * static_cast<double>(share.rows()) + 20;
  Svg svg(w, h);
  for (Eigen::Index k = 0; k < share.cols(); ++k) {
    svg.text(left + cell * (static_cast<double>(k) + 0.5), top - 10, "F" + std::to_string(k + 1));
  }
  for (Eigen::Index d = 0; d < share.rows(); ++d) {
    const double y = top + cell * static_cast<double>(d);
    svg.text(left - 8, y + cell / 2 + 4, d < static_cast<Eigen::Index>(dims.size()) ? dims[d] : "", "end", 11);
    for (Eigen::Index k = 0; k < share.cols(); ++k) {
      const double v = std::clamp(share(d, k), 0.0, 1.0);
      const int shade = static_cast<int>(std::lround(255 * (1.0 - v)));
      std::ostringstream color;
      color << "rgb(" << shade << ',' << shade << ",255)";
      svg.rect(left + cell * static_cast<double>(k), y, cell - 1, cell - 1, color.str(), "cell");
      svg.text(left + cell * (static_cast<double>(k) + 0.5), y + cell / 2 + 4,
               std::to_string(static_cast<int>(std::lround(100 * v))), "middle", 10);
    }
  }
  return svg.str();
}

std::string density_svg(const std::vector<DensityCurve>& curves, const std::string& x_label) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y1 = 0.0;
  for (const auto& c : curves) {
    for (std::size_t i = 0; i < c.grid.x.size(); ++i) {
      x0 = std::min(x0, c.grid.x[i]);
      x1 = std::max(x1, c.grid.x[i]);
      y1 = std::max(y1, c.grid.density[i]);
    }
  }
  if (!(x1 > x0)) x0 = -1, x1 = 1;
  double y0 = 0.0;
  pad(x0, x1);
  pad(y0, y1);
  const Frame f{x0, x1, y0, y1};
  Svg svg;
  svg.axes(f, x_label, "density");
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0;
    svg.text(f.px(xv), kHeight - kBottom + 16, num(xv), "middle", 10);
  }
  for (std::size_t c = 0; c < curves.size(); ++c) {
    const std::string color = kPalette[c % 6];
    std::vector<std::pair<double, double>> pts;
    for (std::size_t i = 0; i < curves[c].grid.x.size(); ++i) {
      pts.emplace_back(f.px(curves[c].grid.x[i]), f.py(curves[c].grid.density[i]));
    }
    svg.polyline(pts, color, "density");
    svg.circle(f.px(curves[c].q025), f.py(0), 4, color, "quantile");
    svg.circle(f.px(curves[c].q975), f.py(0), 4, color, "quantile");
    svg.text(kWidth - kRight, kTop + 14.0 * static_cast<double>(c), curves[c].label, "end", 11,
             " fill=\"" + color + "\"");
  }
  return svg.str();
}

}  // namespace befa
