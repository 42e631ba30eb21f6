#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "lyasafe/common.hpp"
#include "lyasafe/csv.hpp"

namespace lyasafe {

/// Minimal SVG canvas with a data-space viewport. Output is a pure function
/// of the drawing calls, so identical inputs give byte-identical files.
class SvgCanvas {
 public:
  SvgCanvas(double width, double height, double x_min, double x_max, double y_min, double y_max,
            double margin = 46.0)
      : w_(width), h_(height), x0_(x_min), x1_(x_max), y0_(y_min), y1_(y_max), m_(margin) {
    body_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << csv_num(w_) << "\" height=\""
          << csv_num(h_) << "\" viewBox=\"0 0 " << csv_num(w_) << " " << csv_num(h_) << "\">\n";
    body_ << "<rect width=\"" << csv_num(w_) << "\" height=\"" << csv_num(h_)
          << "\" fill=\"white\"/>\n";
  }

  double px(double x) const { return m_ + (x - x0_) / (x1_ - x0_) * (w_ - 2 * m_); }
  double py(double y) const { return h_ - m_ - (y - y0_) / (y1_ - y0_) * (h_ - 2 * m_); }

  void rect_data(double x, double y, double dw, double dh, const std::string& fill,
                 double opacity = 1.0) {
    const double rx = px(x), ry = py(y + dh);
    body_ << "<rect x=\"" << csv_num(rx) << "\" y=\"" << csv_num(ry) << "\" width=\""
          << csv_num(px(x + dw) - rx) << "\" height=\"" << csv_num(py(y) - ry) << "\" fill=\""
          << fill << "\" fill-opacity=\"" << csv_num(opacity) << "\"/>\n";
  }

  void polyline(const std::vector<double>& xs, const std::vector<double>& ys,
                const std::string& stroke, double width = 1.5) {
    body_ << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\""
          << csv_num(width) << "\" points=\"";
    for (size_t i = 0; i < xs.size(); ++i)
      body_ << csv_num(px(xs[i])) << "," << csv_num(py(ys[i])) << " ";
    body_ << "\"/>\n";
  }

  void circle(double x, double y, double r_px, const std::string& fill) {
    body_ << "<circle cx=\"" << csv_num(px(x)) << "\" cy=\"" << csv_num(py(y)) << "\" r=\""
          << csv_num(r_px) << "\" fill=\"" << fill << "\"/>\n";
  }

  void text(double x_px, double y_px, const std::string& s, int size = 12) {
    body_ << "<text x=\"" << csv_num(x_px) << "\" y=\"" << csv_num(y_px)
          << "\" font-family=\"sans-serif\" font-size=\"" << size << "\">" << s << "</text>\n";
  }

  void axes(const std::string& x_label, const std::string& y_label) {
    body_ << "<rect x=\"" << csv_num(m_) << "\" y=\"" << csv_num(m_) << "\" width=\""
          << csv_num(w_ - 2 * m_) << "\" height=\"" << csv_num(h_ - 2 * m_)
          << "\" fill=\"none\" stroke=\"black\" stroke-width=\"1\"/>\n";
    text(w_ / 2 - 20, h_ - 10, x_label);
    text(6, m_ - 10, y_label);
    for (int i = 0; i <= 4; ++i) {
      const double fx = x0_ + (x1_ - x0_) * i / 4.0;
      const double fy = y0_ + (y1_ - y0_) * i / 4.0;
      text(px(fx) - 12, h_ - m_ + 16, csv_num(fx), 10);
      text(4, py(fy) + 4, csv_num(fy), 10);
    }
  }

  std::string finish() {
    body_ << "</svg>\n";
    return body_.str();
  }

  void save(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("svg: cannot open " + path + " for writing");
    out << finish();
  }

 private:
  double w_, h_, x0_, x1_, y0_, y1_, m_;
  std::ostringstream body_;
};

}  // namespace lyasafe
