#include "pabr/io.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <set>
#include <sstream>

namespace pabr::io {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    std::size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

long parse_long(const std::string& s, const std::string& where) {
  long v = 0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last)
    throw FormatError(where + ": '" + s + "' is not an integer");
  return v;
}

double parse_double(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw FormatError(where + ": '" + s + "' is not a number");
  }
}

std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path + " for reading");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  if (in.bad()) throw IoError("read failed on " + path);
  return lines;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << text;
  out.flush();
  if (!out) throw IoError("write failed on " + path);
}

}  // namespace

DatasetManifest read_manifest(const std::string& path) {
  DatasetManifest manifest;
  std::set<std::string> seen;
  auto lines = read_lines(path);
  for (std::size_t n = 0; n < lines.size(); ++n) {
    const std::string where = path + " line " + std::to_string(n + 1);
    if (lines[n].empty() || lines[n][0] == '#') continue;
    auto fields = split_tabs(lines[n]);
    if (fields.size() != 6)
      throw FormatError(where + ": expected 6 tab-separated fields, got " +
                        std::to_string(fields.size()));
    ManifestEntry entry;
    entry.sample_id = fields[0];
    detail::check_sample_id(entry.sample_id, where);
    entry.identity = static_cast<int>(parse_long(fields[1], where));
    if (entry.identity < -1)
      throw FormatError(where + ": identity must be >= -1");
    entry.camera = static_cast<int>(parse_long(fields[2], where));
    if (entry.camera < 0) throw FormatError(where + ": camera must be >= 0");
    entry.appearance_path = fields[3];
    entry.part_path = fields[4];
    if (entry.appearance_path.empty() || entry.part_path.empty())
      throw FormatError(where + ": empty feature path");
    entry.split = split_from_string(fields[5]);
    if (!seen.insert(entry.sample_id).second)
      throw FormatError(where + ": duplicate sample id '" + entry.sample_id +
                        "'");
    manifest.entries.push_back(std::move(entry));
  }
  return manifest;
}

void write_manifest(const DatasetManifest& manifest, const std::string& path) {
  std::set<std::string> seen;
  std::ostringstream out;
  for (const auto& e : manifest.entries) {
    detail::check_sample_id(e.sample_id, path);
    if (!seen.insert(e.sample_id).second)
      throw FormatError(path + ": duplicate sample id '" + e.sample_id + "'");
    out << e.sample_id << '\t' << e.identity << '\t' << e.camera << '\t'
        << e.appearance_path << '\t' << e.part_path << '\t'
        << to_string(e.split) << '\n';
  }
  write_text(path, out.str());
}

void write_rankings(const std::vector<RankingLine>& rankings,
                    const std::string& path) {
  std::ostringstream out;
  for (const auto& line : rankings) {
    detail::check_sample_id(line.query_id, path);
    out << line.query_id;
    for (const auto& [id, sim] : line.entries) {
      detail::check_sample_id(id, path);
      out << '\t' << id << ':' << fmt_g17(sim);
    }
    out << '\n';
  }
  write_text(path, out.str());
}

std::vector<RankingLine> read_rankings(const std::string& path) {
  std::vector<RankingLine> rankings;
  auto lines = read_lines(path);
  for (std::size_t n = 0; n < lines.size(); ++n) {
    const std::string where = path + " line " + std::to_string(n + 1);
    if (lines[n].empty() || lines[n][0] == '#') continue;
    auto fields = split_tabs(lines[n]);
    RankingLine line;
    line.query_id = fields[0];
    detail::check_sample_id(line.query_id, where);
    for (std::size_t f = 1; f < fields.size(); ++f) {
      std::size_t colon = fields[f].rfind(':');
      if (colon == std::string::npos || colon == 0)
        throw FormatError(where + ": entry '" + fields[f] +
                          "' is not id:similarity");
      std::string id = fields[f].substr(0, colon);
      double sim = parse_double(fields[f].substr(colon + 1), where);
      line.entries.emplace_back(std::move(id), sim);
    }
    rankings.push_back(std::move(line));
  }
  return rankings;
}

std::string format_report(const EvalReport& report) {
  std::ostringstream out;
  for (std::size_t i = 0; i < report.ranks.size(); ++i)
    out << "rank" << report.ranks[i] << '\t' << fmt_g17(report.cmc[i]) << '\n';
  out << "mAP\t" << fmt_g17(report.map) << '\n';
  out << "num_valid_queries\t" << report.num_valid_queries << '\n';
  out << "num_dropped_queries\t" << report.num_dropped_queries << '\n';
  return out.str();
}

void write_report(const EvalReport& report, const std::string& path) {
  write_text(path, format_report(report));
}

void write_history(const std::vector<TrainResult<double>::HistoryRow>& history,
                   const std::string& path) {
  std::ostringstream out;
  out << "iter\tloss\tlr\n";
  for (const auto& row : history)
    out << row.iter << '\t' << fmt_g17(row.loss) << '\t' << fmt_g17(row.lr)
        << '\n';
  write_text(path, out.str());
}

TrainConfig read_train_config(const std::string& path) {
  TrainConfig cfg;
  auto lines = read_lines(path);
  for (std::size_t n = 0; n < lines.size(); ++n) {
    const std::string where = path + " line " + std::to_string(n + 1);
    std::string line = trim(lines[n]);
    if (line.empty() || line[0] == '#') continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(where + ": expected key=value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    try {
      if (key == "margin")
        cfg.loss.margin = parse_double(value, where);
      else if (key == "learning_rate")
        cfg.optimizer.learning_rate = parse_double(value, where);
      else if (key == "weight_decay")
        cfg.optimizer.weight_decay = parse_double(value, where);
      else if (key == "momentum")
        cfg.optimizer.momentum = parse_double(value, where);
      else if (key == "lr_decay_factor")
        cfg.optimizer.lr_decay_factor = parse_double(value, where);
      else if (key == "lr_decay_every")
        cfg.optimizer.lr_decay_every =
            static_cast<int>(parse_long(value, where));
      else if (key == "total_iters")
        cfg.optimizer.total_iters = static_cast<int>(parse_long(value, where));
      else if (key == "c_a")
        cfg.c_a = static_cast<int>(parse_long(value, where));
      else if (key == "c_p")
        cfg.c_p = static_cast<int>(parse_long(value, where));
      else if (key == "num_ids")
        cfg.num_ids = static_cast<int>(parse_long(value, where));
      else if (key == "imgs_per_id")
        cfg.imgs_per_id = static_cast<int>(parse_long(value, where));
      else if (key == "sketch_d")
        cfg.sketch_d = static_cast<int>(parse_long(value, where));
      else if (key == "sketch_seed")
        cfg.sketch_seed = static_cast<std::uint64_t>(parse_long(value, where));
      else
        throw ConfigError(where + ": unknown key '" + key + "'");
    } catch (const FormatError& e) {
      throw ConfigError(e.what());
    }
  }
  return cfg;
}

PcaBasis viz_pca(const std::vector<FeatureMap<double>>& maps) {
  if (maps.empty()) throw EmptyInputError("viz_pca: no maps");
  const int c = maps[0].c;
  Eigen::Index total = 0;
  for (const auto& m : maps) {
    if (m.c != c)
      throw DimensionError("viz_pca: maps disagree on channel count");
    total += m.locations();
  }
  if (total < 3)
    throw ValidationError("viz_pca: need at least 3 descriptors, have " +
                          std::to_string(total));

  MatrixX<double> x(c, total);
  Eigen::Index col = 0;
  for (const auto& m : maps)
    for (Eigen::Index s = 0; s < m.data.cols(); ++s) {
      double norm = m.data.col(s).norm();
      x.col(col++) = norm > 0 ? (m.data.col(s) / norm).eval()
                              : VectorX<double>::Zero(c).eval();
    }

  PcaBasis basis;
  basis.mean = x.rowwise().mean();
  MatrixX<double> centered = x.colwise() - basis.mean;
  MatrixX<double> cov =
      centered * centered.transpose() / static_cast<double>(total);
  Eigen::SelfAdjointEigenSolver<MatrixX<double>> solver(cov);
  if (solver.info() != Eigen::Success)
    throw NumericError("viz_pca: eigendecomposition failed");

  // Eigenvalues come back ascending; keep the top three, largest first.
  const auto& evals = solver.eigenvalues();
  const auto& evecs = solver.eigenvectors();
  const double top = std::max(evals[c - 1], 0.0);
  const double tol = std::max(1e-12, top * 1e-9);

  basis.components = MatrixX<double>::Zero(c, 3);
  basis.eigenvalues = VectorX<double>::Zero(3);
  basis.rank = 0;
  for (int k = 0; k < 3 && k < c; ++k) {
    const Eigen::Index src = c - 1 - k;
    if (evals[src] <= tol) break;
    VectorX<double> v = evecs.col(src);
    // deterministic sign: largest-magnitude coordinate is positive
    Eigen::Index imax = 0;
    v.cwiseAbs().maxCoeff(&imax);
    if (v[imax] < 0) v = -v;
    basis.components.col(k) = v;
    basis.eigenvalues[k] = evals[src];
    ++basis.rank;
  }
  return basis;
}

MatrixX<double> viz_project(const FeatureMap<double>& map,
                            const PcaBasis& basis) {
  if (map.c != basis.mean.size())
    throw DimensionError("viz_project: map channels do not match basis");
  MatrixX<double> out(3, map.locations());
  for (Eigen::Index s = 0; s < map.data.cols(); ++s) {
    double norm = map.data.col(s).norm();
    VectorX<double> d = norm > 0 ? (map.data.col(s) / norm).eval()
                                 : VectorX<double>::Zero(map.c).eval();
    out.col(s) = basis.components.transpose() * (d - basis.mean);
  }
  return out;
}

void viz_export(const std::vector<FeatureMap<double>>& maps,
                const std::vector<std::string>& out_paths) {
  if (maps.size() != out_paths.size())
    throw DimensionError("viz_export: " + std::to_string(maps.size()) +
                         " maps but " + std::to_string(out_paths.size()) +
                         " output paths");
  PcaBasis basis = viz_pca(maps);
  if (basis.rank < 3)
    std::cerr << "viz: descriptor collection spans only " << basis.rank
              << " principal component(s), padding the rest with 128\n";

  std::vector<MatrixX<double>> projections;
  projections.reserve(maps.size());
  for (const auto& m : maps) projections.push_back(viz_project(m, basis));

  // Shared affine rescale so the same color means the same thing everywhere.
  double lo[3], hi[3];
  for (int k = 0; k < 3; ++k) {
    lo[k] = std::numeric_limits<double>::infinity();
    hi[k] = -lo[k];
    for (const auto& p : projections) {
      lo[k] = std::min(lo[k], p.row(k).minCoeff());
      hi[k] = std::max(hi[k], p.row(k).maxCoeff());
    }
  }

  for (std::size_t m = 0; m < maps.size(); ++m) {
    const auto& map = maps[m];
    std::string bytes;
    bytes += "P6\n" + std::to_string(map.w) + " " + std::to_string(map.h) +
             "\n255\n";
    for (int y = 0; y < map.h; ++y)
      for (int x = 0; x < map.w; ++x) {
        const Eigen::Index s = map.location_index(x, y);
        for (int k = 0; k < 3; ++k) {
          unsigned char byte = 128;
          if (k < basis.rank && hi[k] - lo[k] > 1e-15) {
            double v =
                (projections[m](k, s) - lo[k]) / (hi[k] - lo[k]) * 255.0;
            byte = static_cast<unsigned char>(std::lround(v));
          }
          bytes.push_back(static_cast<char>(byte));
        }
      }
    detail::spit(out_paths[m], bytes);
  }
}

}  // namespace pabr::io
