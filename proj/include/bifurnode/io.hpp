#pragma once

// File formats: trajectory, loss-history, diagram and tuning CSVs, the JSON
// checkpoint document and the flat key-value training configuration.
//
// CSV numbers are written with 17 significant digits and parsed with strtod,
// so every double survives a write/read cycle unchanged.

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "bifurnode/bifurcation.hpp"
#include "bifurnode/dynsys.hpp"
#include "bifurnode/model.hpp"
#include "bifurnode/training.hpp"

namespace bifurnode::io {

inline constexpr std::string_view kCheckpointFormat = "bifur-node-ckpt-v1";
inline constexpr std::string_view kTrajectoryHeader = "series_id,alpha,sigma,ic_x,ic_y,t,x,y";
inline constexpr std::string_view kLossHeader = "epoch,data_mae,physics_term,total";
inline constexpr std::string_view kDiagramHeader = "alpha,ic_x,ic_y,x_min,x_max,regime";

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(std::string_view s) {
  const std::string str(s);
  char *end = nullptr;
  errno = 0;
  const double v = std::strtod(str.c_str(), &end);
  if (str.empty() || end != str.c_str() + str.size()) throw FormatError("not a number: '" + str + "'");
  return v;
}

inline long long parse_int(std::string_view s) {
  const std::string str(s);
  char *end = nullptr;
  errno = 0;
  const long long v = std::strtoll(str.c_str(), &end, 10);
  if (str.empty() || end != str.c_str() + str.size() || errno == ERANGE)
    throw FormatError("not an integer: '" + str + "'");
  return v;
}

inline std::vector<std::string_view> split(std::string_view line, char sep = ',') {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline void ensure_parent(const std::filesystem::path &p) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
}

inline std::ofstream open_out(const std::filesystem::path &p) {
  ensure_parent(p);
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + p.string());
  return os;
}

inline std::vector<std::string> read_lines(const std::filesystem::path &p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw IoError("cannot read " + p.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

inline std::string read_text(const std::filesystem::path &p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw IoError("cannot read " + p.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline void expect_header(const std::vector<std::string> &lines, std::string_view header,
                          const std::filesystem::path &p) {
  if (lines.empty() || lines.front() != header)
    throw FormatError(p.string() + ": expected header '" + std::string(header) + "'");
}

// ---------------------------------------------------------------- trajectories

inline void write_trajectories(std::ostream &os, std::span<const Trajectory> data) {
  os << kTrajectoryHeader << '\n';
  for (const auto &tr : data) {
    for (std::size_t i = 0; i < tr.size(); ++i) {
      os << tr.series_id << ',' << fmt_double(tr.alpha) << ',' << fmt_double(tr.noise_sigma) << ','
         << fmt_double(tr.initial_condition.x) << ',' << fmt_double(tr.initial_condition.y) << ','
         << fmt_double(tr.times[i]) << ',' << fmt_double(tr.states[i].x) << ',' << fmt_double(tr.states[i].y)
         << '\n';
    }
  }
}

inline void write_trajectories(const std::filesystem::path &p, std::span<const Trajectory> data) {
  auto os = open_out(p);
  write_trajectories(os, data);
}

// Rows of one series must be contiguous; series keep their file order.
inline std::vector<Trajectory> read_trajectories(const std::filesystem::path &p) {
  const auto lines = read_lines(p);
  expect_header(lines, kTrajectoryHeader, p);
  std::vector<Trajectory> out;
  for (std::size_t n = 1; n < lines.size(); ++n) {
    if (lines[n].empty()) continue;
    const auto f = split(lines[n]);
    if (f.size() != 8) throw FormatError(p.string() + ":" + std::to_string(n + 1) + ": expected 8 fields");
    const int id = static_cast<int>(parse_int(f[0]));
    if (out.empty() || out.back().series_id != id) {
      for (const auto &t : out)
        if (t.series_id == id) throw FormatError(p.string() + ": rows of series " + std::to_string(id) + " are split");
      Trajectory t;
      t.series_id = id;
      t.alpha = parse_double(f[1]);
      t.noise_sigma = parse_double(f[2]);
      t.initial_condition = {parse_double(f[3]), parse_double(f[4])};
      out.push_back(std::move(t));
    }
    out.back().times.push_back(parse_double(f[5]));
    out.back().states.push_back({parse_double(f[6]), parse_double(f[7])});
  }
  for (const auto &t : out) t.validate();
  return out;
}

// ---------------------------------------------------------------- loss history

inline void write_loss_history(const std::filesystem::path &p, std::span<const LossRecord> history) {
  auto os = open_out(p);
  os << kLossHeader << '\n';
  for (const auto &r : history) {
    os << r.epoch << ',' << fmt_double(r.loss.data_mae) << ',' << fmt_double(r.loss.physics_term) << ','
       << fmt_double(r.loss.total) << '\n';
  }
}

inline std::vector<LossRecord> read_loss_history(const std::filesystem::path &p) {
  const auto lines = read_lines(p);
  expect_header(lines, kLossHeader, p);
  std::vector<LossRecord> out;
  for (std::size_t n = 1; n < lines.size(); ++n) {
    if (lines[n].empty()) continue;
    const auto f = split(lines[n]);
    if (f.size() != 4) throw FormatError(p.string() + ": expected 4 fields");
    LossRecord r;
    r.epoch = static_cast<std::size_t>(parse_int(f[0]));
    r.loss.data_mae = parse_double(f[1]);
    r.loss.physics_term = parse_double(f[2]);
    r.loss.total = parse_double(f[3]);
    out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------- diagrams

inline void write_diagram(std::ostream &os, const BifurcationDiagram &d, const RegimeThresholds &th = {}) {
  os << kDiagramHeader << '\n';
  for (std::size_t i = 0; i < d.ics.size(); ++i) {
    for (std::size_t k = 0; k < d.alphas.size(); ++k) {
      const auto &e = d.entries[i][k];
      os << fmt_double(d.alphas[k]) << ',' << fmt_double(d.ics[i].x) << ',' << fmt_double(d.ics[i].y) << ','
         << fmt_double(e.x_min) << ',' << fmt_double(e.x_max) << ',' << to_string(classify(e, th)) << '\n';
    }
  }
}

inline void write_diagram(const std::filesystem::path &p, const BifurcationDiagram &d,
                          const RegimeThresholds &th = {}) {
  auto os = open_out(p);
  write_diagram(os, d, th);
}

inline BifurcationDiagram read_diagram(const std::filesystem::path &p) {
  const auto lines = read_lines(p);
  expect_header(lines, kDiagramHeader, p);
  BifurcationDiagram d;
  d.field_id = p.stem().string();
  for (std::size_t n = 1; n < lines.size(); ++n) {
    if (lines[n].empty()) continue;
    const auto f = split(lines[n]);
    if (f.size() != 6) throw FormatError(p.string() + ": expected 6 fields");
    const double alpha = parse_double(f[0]);
    const StateVector ic{parse_double(f[1]), parse_double(f[2])};
    auto idx = d.ic_index(ic);
    if (!idx) {
      d.ics.push_back(ic);
      d.entries.emplace_back();
      idx = d.ics.size() - 1;
    }
    if (*idx == 0) d.alphas.push_back(alpha);
    Extrema e;
    e.x_min = parse_double(f[3]);
    e.x_max = parse_double(f[4]);
    e.valid = std::isfinite(e.x_min) && std::isfinite(e.x_max);
    d.entries[*idx].push_back(e);
  }
  for (const auto &row : d.entries)
    if (row.size() != d.alphas.size()) throw FormatError(p.string() + ": rows per initial condition differ");
  return d;
}

// ---------------------------------------------------------------- checkpoints

inline nlohmann::json to_json(const ModelCheckpoint &c) {
  nlohmann::json j;
  j["format"] = kCheckpointFormat;
  j["layer_sizes"] = c.params.layer_sizes;
  nlohmann::json weights = nlohmann::json::array(), biases = nlohmann::json::array();
  for (const auto &layer : c.params.layers) {
    weights.push_back(layer.weights);
    biases.push_back(layer.biases);
  }
  j["weights"] = std::move(weights);
  j["biases"] = std::move(biases);
  j["init_seed"] = c.params.init_seed;
  j["training_config_digest"] = c.training_config_digest;
  j["epoch"] = c.epoch;
  j["loss_history_tail"] = c.loss_history_tail;
  return j;
}

inline ModelCheckpoint checkpoint_from_json(const nlohmann::json &j) {
  if (!j.contains("format") || j.at("format").get<std::string>() != kCheckpointFormat)
    throw FormatError("checkpoint: missing or unsupported format tag");
  try {
    ModelCheckpoint c;
    c.params.layer_sizes = j.at("layer_sizes").get<std::vector<std::size_t>>();
    const auto &w = j.at("weights");
    const auto &b = j.at("biases");
    if (w.size() + 1 != c.params.layer_sizes.size() || b.size() != w.size())
      throw FormatError("checkpoint: layer arrays do not match layer_sizes");
    for (std::size_t l = 0; l < w.size(); ++l) {
      DenseLayer layer;
      layer.inputs = c.params.layer_sizes[l];
      layer.outputs = c.params.layer_sizes[l + 1];
      layer.weights = w[l].get<std::vector<double>>();
      layer.biases = b[l].get<std::vector<double>>();
      c.params.layers.push_back(std::move(layer));
    }
    c.params.init_seed = j.at("init_seed").get<std::uint64_t>();
    c.training_config_digest = j.at("training_config_digest").get<std::string>();
    c.epoch = j.at("epoch").get<std::size_t>();
    c.loss_history_tail = j.at("loss_history_tail").get<std::vector<double>>();
    c.params.validate();
    return c;
  } catch (const nlohmann::json::exception &e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  } catch (const std::invalid_argument &e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
}

inline void write_checkpoint(const std::filesystem::path &p, const ModelCheckpoint &c) {
  auto os = open_out(p);
  os << to_json(c).dump(1) << '\n';
}

inline ModelCheckpoint read_checkpoint(const std::filesystem::path &p) {
  try {
    return checkpoint_from_json(nlohmann::json::parse(read_text(p)));
  } catch (const nlohmann::json::parse_error &e) {
    throw FormatError(p.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------- configuration

// Flat `key = value` text; `#` starts a comment. Recognised keys:
//   learning_rate, lambda, epochs, batch_size, batch_length, seed,
//   hidden (comma-separated widths), layers, width,
//   rtol, atol, h_init, h_min, h_max, max_steps, safety, physics_points,
//   epoch_mode (single-batch or full-pass)
// `layers` and `width` together set a uniform hidden layout.
using KeyValues = std::map<std::string, std::string>;

inline KeyValues parse_key_values(std::string_view text, std::string_view source = "config") {
  KeyValues kv;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = std::min(text.find('\n', start), text.size());
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) {
      if (end == text.size()) break;
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw FormatError(std::string(source) + ":" + std::to_string(line_no) + ": expected key = value");
    kv[std::string(trim(line.substr(0, eq)))] = std::string(trim(line.substr(eq + 1)));
    if (end == text.size()) break;
  }
  return kv;
}

inline void apply_key_values(TrainingConfig &cfg, const KeyValues &kv) {
  std::optional<std::size_t> layers, width;
  for (const auto &[key, value] : kv) {
    if (key == "learning_rate") cfg.learning_rate = parse_double(value);
    else if (key == "lambda") cfg.lambda = parse_double(value);
    else if (key == "epochs") cfg.epochs = static_cast<std::size_t>(parse_int(value));
    else if (key == "batch_size") cfg.batch_size = static_cast<std::size_t>(parse_int(value));
    else if (key == "batch_length") cfg.batch_length = static_cast<std::size_t>(parse_int(value));
    else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(parse_int(value));
    else if (key == "hidden") {
      cfg.hidden.clear();
      for (auto part : split(value)) cfg.hidden.push_back(static_cast<std::size_t>(parse_int(trim(part))));
    } else if (key == "layers") layers = static_cast<std::size_t>(parse_int(value));
    else if (key == "width") width = static_cast<std::size_t>(parse_int(value));
    else if (key == "rtol") cfg.solver.rtol = parse_double(value);
    else if (key == "atol") cfg.solver.atol = parse_double(value);
    else if (key == "h_init") cfg.solver.h_init = parse_double(value);
    else if (key == "h_min") cfg.solver.h_min = parse_double(value);
    else if (key == "h_max") cfg.solver.h_max = parse_double(value);
    else if (key == "max_steps") cfg.solver.max_steps = static_cast<std::size_t>(parse_int(value));
    else if (key == "safety") cfg.solver.safety = parse_double(value);
    else if (key == "physics_points") cfg.grid = PhysicsGrid::uniform(static_cast<std::size_t>(parse_int(value)));
    else if (key == "epoch_mode") {
      try {
        cfg.epoch_mode = epoch_mode_from_string(value);
      } catch (const std::invalid_argument &e) {
        throw FormatError(e.what());
      }
    } else throw FormatError("unknown configuration key '" + key + "'");
  }
  if (layers || width) {
    if (!layers || !width) throw FormatError("'layers' and 'width' must be given together");
    cfg.hidden = uniform_layout(*layers, *width);
  }
  cfg.validate();
}

inline TrainingConfig read_training_config(const std::filesystem::path &p, TrainingConfig base = {}) {
  apply_key_values(base, parse_key_values(read_text(p), p.string()));
  return base;
}

inline std::string to_key_values(const TrainingConfig &cfg) {
  std::ostringstream os;
  os << "learning_rate = " << fmt_double(cfg.learning_rate) << '\n'
     << "lambda = " << fmt_double(cfg.lambda) << '\n'
     << "epochs = " << cfg.epochs << '\n'
     << "batch_size = " << cfg.batch_size << '\n'
     << "batch_length = " << cfg.batch_length << '\n'
     << "seed = " << cfg.seed << '\n'
     << "hidden = ";
  for (std::size_t i = 0; i < cfg.hidden.size(); ++i) os << (i ? "," : "") << cfg.hidden[i];
  os << '\n'
     << "rtol = " << fmt_double(cfg.solver.rtol) << '\n'
     << "atol = " << fmt_double(cfg.solver.atol) << '\n'
     << "h_init = " << fmt_double(cfg.solver.h_init) << '\n'
     << "h_min = " << fmt_double(cfg.solver.h_min) << '\n'
     << "h_max = " << fmt_double(cfg.solver.h_max) << '\n'
     << "max_steps = " << cfg.solver.max_steps << '\n'
     << "safety = " << fmt_double(cfg.solver.safety) << '\n'
     << "physics_points = " << cfg.grid.x_points.size() << '\n'
     << "epoch_mode = " << to_string(cfg.epoch_mode) << '\n';
  return os.str();
}

}  // namespace bifurnode::io
