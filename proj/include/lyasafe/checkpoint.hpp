#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "lyasafe/common.hpp"
#include "lyasafe/csv.hpp"
#include "lyasafe/policy.hpp"
#include "lyasafe/value_function.hpp"

namespace lyasafe {

/// Plain-text policy checkpoint: a shape header followed by row-major weight
/// rows and bias lines, loadable from any language.
inline void save_policy(const NeuralPolicy& policy, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  out << "lyasafe-policy 1\n";
  out << "layers " << policy.layer_count() << "\n";
  out << "action_bound";
  for (long i = 0; i < policy.action_bound().size(); ++i)
    out << " " << csv_num_exact(policy.action_bound()(i));
  out << "\n";
  for (int l = 0; l < policy.layer_count(); ++l) {
    const Mat& W = policy.weights()[l];
    const Vec& b = policy.biases()[l];
    out << "layer " << l << " " << W.rows() << " " << W.cols() << "\n";
    for (long r = 0; r < W.rows(); ++r) {
      for (long c = 0; c < W.cols(); ++c) out << (c ? " " : "") << csv_num_exact(W(r, c));
      out << "\n";
    }
    out << "bias";
    for (long r = 0; r < b.size(); ++r) out << " " << csv_num_exact(b(r));
    out << "\n";
  }
}

inline NeuralPolicy load_policy(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != "lyasafe-policy" || version != 1)
    throw std::runtime_error("checkpoint: " + path + " is not a policy checkpoint");
  std::string token;
  int layers = 0;
  in >> token >> layers;
  require(token == "layers" && layers >= 1, "checkpoint: malformed layer count");
  in >> token;
  require(token == "action_bound", "checkpoint: expected action_bound");
  std::vector<double> bound_vals;
  // Bounds run to the end of the line.
  {
    std::string rest;
    std::getline(in, rest);
    std::istringstream bs(rest);
    double v;
    while (bs >> v) bound_vals.push_back(v);
  }
  std::vector<Mat> W(layers);
  std::vector<Vec> b(layers);
  for (int l = 0; l < layers; ++l) {
    int index = 0;
    long rows = 0, cols = 0;
    in >> token >> index >> rows >> cols;
    require(token == "layer" && index == l && rows > 0 && cols > 0,
            "checkpoint: malformed layer header");
    W[l].resize(rows, cols);
    for (long r = 0; r < rows; ++r)
      for (long c = 0; c < cols; ++c) in >> W[l](r, c);
    in >> token;
    require(token == "bias", "checkpoint: expected bias");
    b[l].resize(rows);
    for (long r = 0; r < rows; ++r) in >> b[l](r);
  }
  if (!in) throw std::runtime_error("checkpoint: truncated file " + path);

  std::vector<int> hidden;
  for (int l = 0; l + 1 < layers; ++l) hidden.push_back(static_cast<int>(W[l].rows()));
  Vec bound(bound_vals.size());
  for (size_t i = 0; i < bound_vals.size(); ++i) bound(i) = bound_vals[i];
  NeuralPolicy policy(static_cast<int>(W.front().cols()), hidden,
                      static_cast<int>(W.back().rows()), bound);
  policy.weights() = std::move(W);
  policy.biases() = std::move(b);
  return policy;
}

/// Vertex values as CSV (cell index, state components, value).
inline void save_vertex_values(const PiecewiseLinearValue& pl, const std::string& path) {
  CsvWriter csv(path);
  const int d = pl.grid().dims();
  std::vector<std::string> header = {"cell"};
  for (int i = 0; i < d; ++i) header.push_back("x" + std::to_string(i));
  header.push_back("value");
  csv.row(header);
  for (long c = 0; c < pl.grid().num_points(); ++c) {
    std::vector<std::string> row = {std::to_string(c)};
    const Vec x = pl.grid().point(c);
    for (int i = 0; i < d; ++i) row.push_back(csv_num(x(i)));
    row.push_back(csv_num_exact(pl.values()(c)));
    csv.row(row);
  }
}

inline Vec load_vertex_values(const std::string& path, long expected_count) {
  const CsvTable table = read_csv(path);
  const int cell_col = table.column("cell", path);
  const int value_col = table.column("value", path);
  Vec values = Vec::Zero(expected_count);
  require(static_cast<long>(table.rows.size()) == expected_count,
          "checkpoint: vertex value count does not match the grid");
  for (const auto& row : table.rows) {
    const long cell = std::stol(row[cell_col]);
    values(cell) = std::stod(row[value_col]);
  }
  return values;
}

}  // namespace lyasafe
