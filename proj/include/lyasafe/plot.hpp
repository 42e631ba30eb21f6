#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "lyasafe/common.hpp"
#include "lyasafe/csv.hpp"
#include "lyasafe/svg.hpp"

namespace lyasafe {

/// Renders the run artifacts in a directory into self-contained SVG panels:
/// the certified-set geometry, the safe-set growth over iterations, the
/// one-step confidence band (1-D runs), and the rollout trajectories.
/// Returns the written file names.
inline std::vector<std::string> plot_artifacts(const std::string& dir) {
  namespace fs = std::filesystem;
  std::vector<std::string> written;
  auto at = [&](const std::string& name) { return (fs::path(dir) / name).string(); };

  // Latest certificate panel.
  std::vector<std::string> certs;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("certificate_", 0) == 0 && name.size() > 4 &&
        name.substr(name.size() - 4) == ".csv")
      certs.push_back(name);
  }
  std::sort(certs.begin(), certs.end());
  if (certs.empty()) throw std::runtime_error("plot: no certificate CSVs in " + dir);

  const CsvTable final_cert = read_csv(at(certs.back()));
  const int dim = final_cert.header.size() >= 7 && final_cert.header[2] == "x1" ? 2 : 1;
  const int col_x0 = final_cert.column("x0", certs.back());
  const int col_v = final_cert.column("v", certs.back());
  const int col_l = final_cert.column("l_n", certs.back());
  const int col_u = final_cert.column("u_n", certs.back());
  const int col_in = final_cert.column("in_level_set", certs.back());

  if (dim == 2) {
    const int col_x1 = final_cert.column("x1", certs.back());
    const CsvTable first_cert = read_csv(at(certs.front()));
    const int fc_in = first_cert.column("in_level_set", certs.front());
    SvgCanvas canvas(560, 560, -1.0, 1.0, -1.0, 1.0);
    // Cell size from the data grid.
    std::vector<double> xs;
    for (const auto& row : final_cert.rows) xs.push_back(std::stod(row[col_x0]));
    std::sort(xs.begin(), xs.end());
    xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
    const double cell = xs.size() > 1 ? xs[1] - xs[0] : 0.05;
    for (size_t i = 0; i < final_cert.rows.size(); ++i) {
      if (final_cert.rows[i][col_in] == "1") {
        canvas.rect_data(std::stod(final_cert.rows[i][col_x0]) - cell / 2,
                         std::stod(final_cert.rows[i][col_x1]) - cell / 2, cell, cell, "#2e8b57");
      }
    }
    for (size_t i = 0; i < first_cert.rows.size() && i < final_cert.rows.size(); ++i) {
      if (first_cert.rows[i][fc_in] == "1") {
        canvas.rect_data(std::stod(final_cert.rows[i][col_x0]) - cell / 2,
                         std::stod(final_cert.rows[i][col_x1]) - cell / 2, cell, cell, "#ffd447");
      }
    }
    canvas.axes("x0", "x1");
    canvas.text(60, 24, "certified level set: initial (yellow) and final (green)");
    canvas.save(at("safe_set.svg"));
    written.push_back("safe_set.svg");
  } else {
    // 1-D: confidence band of the final certificate.
    std::vector<double> xs, vs, ls, us;
    double band_max = 0.0;
    for (const auto& row : final_cert.rows) {
      xs.push_back(std::stod(row[col_x0]));
      vs.push_back(std::stod(row[col_v]));
      const double l = std::stod(row[col_l]);
      const double u = std::stod(row[col_u]);
      ls.push_back(std::max(-1.0, l));
      us.push_back(std::min(std::stod(row[col_v]) * 2 + 1.0, u));
      band_max = std::max(band_max, vs.back());
    }
    SvgCanvas canvas(640, 420, -1.0, 1.0, -0.2 * band_max, 1.2 * band_max);
    canvas.polyline(xs, vs, "#333333", 2.0);
    canvas.polyline(xs, us, "#c0392b", 1.2);
    canvas.polyline(xs, ls, "#2980b9", 1.2);
    canvas.axes("x", "v");
    canvas.text(60, 24, "v (black) with one-step bounds u_n (red), l_n (blue)");
    canvas.save(at("confidence.svg"));
    written.push_back("confidence.svg");
  }

  // Safe-set growth over iterations from the delta-encoded snapshots.
  if (fs::exists(at("safe_set_growth.csv"))) {
    const CsvTable growth = read_csv(at("safe_set_growth.csv"));
    const int col_it = growth.column("iteration", "safe_set_growth.csv");
    std::map<int, long> added;
    for (const auto& row : growth.rows) added[std::stoi(row[col_it])]++;
    std::vector<double> its, sizes;
    long total = 0;
    for (const auto& [it, count] : added) {
      total += count;
      its.push_back(it);
      sizes.push_back(static_cast<double>(total));
    }
    if (!its.empty()) {
      SvgCanvas canvas(640, 420, 0.0, std::max(1.0, its.back()), 0.0, sizes.back() * 1.1);
      canvas.polyline(its, sizes, "#2e8b57", 2.0);
      canvas.axes("iteration", "|S_n|");
      canvas.text(60, 24, "safe set growth");
      canvas.save(at("safe_set_growth.svg"));
      written.push_back("safe_set_growth.svg");
    }
  }

  // Rollout comparison.
  if (fs::exists(at("rollout_initial.csv")) && fs::exists(at("rollout_final.csv"))) {
    const CsvTable before = read_csv(at("rollout_initial.csv"));
    const CsvTable after = read_csv(at("rollout_final.csv"));
    const int ct = before.column("t", "rollout_initial.csv");
    const int cx = before.column("x0", "rollout_initial.csv");
    auto series = [&](const CsvTable& t) {
      std::pair<std::vector<double>, std::vector<double>> out;
      for (const auto& row : t.rows) {
        out.first.push_back(std::stod(row[ct]));
        out.second.push_back(std::stod(row[cx]));
      }
      return out;
    };
    auto [tb, xb] = series(before);
    auto [ta, xa] = series(after);
    double lo = 0, hi = 0, tmax = 1;
    for (double v : xb) lo = std::min(lo, v), hi = std::max(hi, v);
    for (double v : xa) lo = std::min(lo, v), hi = std::max(hi, v);
    if (!tb.empty()) tmax = std::max(tmax, tb.back());
    SvgCanvas canvas(640, 420, 0.0, tmax, lo * 1.1 - 1e-6, hi * 1.1 + 1e-6);
    canvas.polyline(tb, xb, "#c0392b", 1.5);
    canvas.polyline(ta, xa, "#2e8b57", 1.5);
    canvas.axes("t", "x0");
    canvas.text(60, 24, "trajectory: initial policy (red) vs learned (green)");
    canvas.save(at("trajectory.svg"));
    written.push_back("trajectory.svg");
  }

  return written;
}

}  // namespace lyasafe
