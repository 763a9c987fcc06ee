#include "cli.hpp"

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <json.hpp>
#include <random>
#include <sstream>

#include "nvspin/errors.hpp"
#include "nvspin/experiments.hpp"
#include "nvspin/fitting.hpp"
#include "nvspin/sequence_io.hpp"
#include "nvspin/units.hpp"

namespace nvspin::cli {

namespace {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

// Column-major table; column 0 is the sweep axis.
struct Table {
  std::vector<std::string> names;
  std::vector<std::vector<double>> columns;

  std::size_t rows() const { return columns.empty() ? 0 : columns.front().size(); }
  void add(std::string name, std::vector<double> values) {
    names.push_back(std::move(name));
    columns.push_back(std::move(values));
  }
};

struct Result {
  Table table;
  Metadata metadata;
  std::vector<std::pair<std::string, std::string>> summary;
  Json resolved = Json::object();
  std::vector<std::string> inputs;
  // Rows per block for 2D data (gnuplot pm3d needs blank lines between rows).
  std::size_t block = 0;
  bool noisy_signal = false;
  bool failed = false;
  std::string failure;
};

Table from_trace(const SampledTrace& trace) {
  Table t;
  t.add(trace.axis_name, trace.axis);
  for (const auto& c : trace.columns) t.add(c.name, c.values);
  return t;
}

Table from_map(const Map2D& map) {
  Table t;
  std::vector<double> rows, cols;
  for (double r : map.row_axis) {
    for (double c : map.col_axis) {
      rows.push_back(r);
      cols.push_back(c);
    }
  }
  t.add(map.row_axis_name, std::move(rows));
  t.add(map.col_axis_name, std::move(cols));
  for (const auto& l : map.layers) t.add(l.name, l.values);
  return t;
}

std::string mhz(double hz) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f MHz", hz / 1e6);
  return buf;
}

std::string ns(double s) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f ns", s * 1e9);
  return buf;
}

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

double quantity(const std::string& text, Dimension dim, const std::string& flag) {
  std::string error;
  const auto v = parse_quantity(text, dim, &error);
  if (!v) throw InvalidInput(flag + ": " + error);
  return *v;
}

std::optional<double> optional_quantity(const std::string& text, Dimension dim, const std::string& flag) {
  if (text.empty()) return std::nullopt;
  return quantity(text, dim, flag);
}

std::vector<double> linspace(double from, double to, std::size_t n) {
  if (n < 2) throw InvalidInput("grids need at least 2 points");
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = from + (to - from) * static_cast<double>(i) / static_cast<double>(n - 1);
  return v;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw NumericError("SHA-256 failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Trace input: CSV with a header row, or the JSON envelope written by run().
// ---------------------------------------------------------------------------

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
  }
  return out;
}

SampledTrace table_to_trace(const Table& t) {
  if (t.names.size() < 2) throw InvalidInput("trace needs an axis and at least one data column");
  SampledTrace trace;
  trace.axis_name = t.names[0];
  trace.axis = t.columns[0];
  for (std::size_t i = 1; i < t.names.size(); ++i) trace.columns.push_back({t.names[i], t.columns[i]});
  trace.validate();
  return trace;
}

SampledTrace read_trace(const std::string& path, const std::string& bytes) {
  Table t;
  if (fs::path(path).extension() == ".json") {
    Json doc;
    try {
      doc = Json::parse(bytes);
    } catch (const Json::exception& e) {
      throw InvalidInput(path + ": " + e.what());
    }
    if (!doc.contains("records") || !doc["records"].is_array() || doc["records"].empty()) {
      throw InvalidInput(path + ": expected a non-empty \"records\" array");
    }
    for (const auto& [key, _] : doc["records"].front().items()) {
      t.names.push_back(key);
      t.columns.emplace_back();
    }
    for (const auto& rec : doc["records"]) {
      for (std::size_t i = 0; i < t.names.size(); ++i) {
        if (!rec.contains(t.names[i]) || !rec[t.names[i]].is_number()) {
          throw InvalidInput(path + ": record lacks numeric '" + t.names[i] + "'");
        }
        t.columns[i].push_back(rec[t.names[i]].get<double>());
      }
    }
    return table_to_trace(t);
  }

  std::istringstream in(bytes);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r" || line[0] == '#') continue;
    const auto cells = split_csv(line);
    if (t.names.empty()) {
      t.names = cells;
      t.columns.resize(cells.size());
      continue;
    }
    if (cells.size() != t.names.size()) {
      throw InvalidInput(path + ":" + std::to_string(line_no) + ": expected " + std::to_string(t.names.size()) +
                         " fields");
    }
    for (std::size_t i = 0; i < cells.size(); ++i) {
      double v = 0.0;
      const auto* end = cells[i].data() + cells[i].size();
      const auto [ptr, ec] = std::from_chars(cells[i].data(), end, v);
      if (ec != std::errc() || ptr != end) {
        throw InvalidInput(path + ":" + std::to_string(line_no) + ": '" + cells[i] + "' is not a number");
      }
      t.columns[i].push_back(v);
    }
  }
  if (t.names.empty()) throw InvalidInput(path + ": empty file");
  return table_to_trace(t);
}

// ---------------------------------------------------------------------------
// Output
// ---------------------------------------------------------------------------

std::string to_csv(const Table& t) {
  std::string s;
  for (std::size_t i = 0; i < t.names.size(); ++i) s += (i ? "," : "") + t.names[i];
  s += '\n';
  for (std::size_t r = 0; r < t.rows(); ++r) {
    for (std::size_t c = 0; c < t.columns.size(); ++c) s += (c ? "," : "") + format_number(t.columns[c][r]);
    s += '\n';
  }
  return s;
}

Json records(const Table& t) {
  Json arr = Json::array();
  for (std::size_t r = 0; r < t.rows(); ++r) {
    Json rec = Json::object();
    for (std::size_t c = 0; c < t.columns.size(); ++c) rec[t.names[c]] = t.columns[c][r];
    arr.push_back(std::move(rec));
  }
  return arr;
}

std::string to_dat(const Table& t, std::size_t block) {
  std::string s = "#";
  for (const auto& n : t.names) s += " " + n;
  s += '\n';
  for (std::size_t r = 0; r < t.rows(); ++r) {
    if (block && r && r % block == 0) s += '\n';
    for (std::size_t c = 0; c < t.columns.size(); ++c) s += (c ? " " : "") + format_number(t.columns[c][r]);
    s += '\n';
  }
  return s;
}

std::string to_gnuplot(const Table& t, std::size_t block, const std::string& dat_name) {
  std::string s = "set datafile commentschars '#'\n";
  s += "set xlabel '" + t.names[0] + "'\n";
  if (block) {
    s += "set ylabel '" + t.names[1] + "'\nset view map\nset pm3d map\n";
    s += "splot '" + dat_name + "' using 1:2:3 with pm3d title '" + t.names[2] + "'\n";
  } else {
    s += "plot";
    for (std::size_t c = 1; c < t.names.size(); ++c) {
      s += (c > 1 ? ", \\\n    " : " ") + ("'" + dat_name + "' using 1:" + std::to_string(c + 1) + " with lines title '" +
                                           t.names[c] + "'");
    }
    s += '\n';
  }
  return s;
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InvalidInput("cannot write '" + path.string() + "'");
  f << text;
}

struct Common {
  std::string format = "csv";
  std::string out;
  bool plot = false;
  double noise = 0.0;
  std::uint64_t seed = 1;
  double baseline = 1.0;
  double contrast = 0.3;
};

ReadoutModel readout_of(const Common& c) {
  ReadoutModel r{c.baseline, c.contrast};
  r.validate();
  return r;
}

void add_noise(Table& t, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, sigma);
  for (std::size_t c = 0; c < t.names.size(); ++c) {
    if (t.names[c] != "signal") continue;
    for (double& v : t.columns[c]) v += normal(rng);
  }
}

void emit(const std::string& command, const std::vector<std::string>& args, const Json& config, const Common& common,
          Result& result, std::ostream& out) {
  if (result.noisy_signal && common.noise > 0.0) add_noise(result.table, common.noise, common.seed);

  const char* env_dir = std::getenv("NVSPIN_OUTPUT_DIR");
  const std::string ext = common.format == "json" ? ".json" : ".csv";
  fs::path data = common.out.empty() ? fs::path(env_dir && *env_dir ? env_dir : ".") / (command + ext)
                                     : fs::path(common.out);

  Json manifest = Json::object();
  manifest["tool_version"] = kToolVersion;
  manifest["command"] = command;
  manifest["argv"] = args;
  manifest["config"] = config;
  manifest["resolved"] = result.resolved;
  manifest["seed"] = common.seed;
  Json inputs = Json::array();
  for (const auto& path : result.inputs) inputs.push_back({{"path", path}, {"sha256", sha256_hex(read_file(path))}});
  manifest["inputs"] = inputs;
  std::vector<std::string> outputs{data.string()};
  fs::path dat, gp;
  if (common.plot) {
    dat = fs::path(data).replace_extension(".dat");
    gp = fs::path(data).replace_extension(".gp");
    outputs.push_back(dat.string());
    outputs.push_back(gp.string());
  }
  manifest["outputs"] = outputs;
  Json meta = Json::object();
  for (const auto& [k, v] : result.metadata) meta[k] = v;
  manifest["metadata"] = meta;

  if (common.format == "json") {
    Json doc = Json::object();
    doc["manifest"] = manifest;
    doc["records"] = records(result.table);
    write_file(data, doc.dump(2) + "\n");
  } else {
    write_file(data, to_csv(result.table));
    write_file(fs::path(data.string() + ".manifest.json"), manifest.dump(2) + "\n");
  }
  if (common.plot) {
    write_file(dat, to_dat(result.table, result.block));
    write_file(gp, to_gnuplot(result.table, result.block, dat.filename().string()));
  }

  std::size_t width = 0;
  for (const auto& [k, _] : result.summary) width = std::max(width, k.size());
  for (const auto& [k, v] : result.summary) out << k << std::string(width - k.size() + 2, ' ') << v << '\n';
  out << "wrote " << data.string() << '\n';
}

// ---------------------------------------------------------------------------
// Subcommand bodies
// ---------------------------------------------------------------------------

struct EffOptions {
  std::string d_prime = "2880.75MHz";
  std::string e_prime = "3.95MHz";

  NVParams params() const {
    return {quantity(d_prime, Dimension::Frequency, "--d-prime"), quantity(e_prime, Dimension::Frequency, "--ex-prime"),
            0.0, 0.0};
  }
};

struct SimOptions {
  bool lab_frame = false;
  std::string t2;
  std::string max_step;

  SimulationOptions resolve() const {
    SimulationOptions o;
    o.lab_frame = lab_frame;
    o.dephasing.t2_star = optional_quantity(t2, Dimension::Time, "--t2");
    o.step.max_step = optional_quantity(max_step, Dimension::Time, "--max-step");
    return o;
  }
};

std::vector<double> first_minima(const std::vector<double>& y) {
  std::vector<double> idx;
  for (std::size_t i = 1; i + 1 < y.size(); ++i) {
    if (y[i] < y[i - 1] && y[i] <= y[i + 1]) idx.push_back(static_cast<double>(i));
  }
  return idx;
}

Result do_params(const std::string& d, const std::string& ex, const std::string& ey, const std::string& zeeman,
                 const std::string& field) {
  NVParams p{quantity(d, Dimension::Frequency, "--d"), quantity(ex, Dimension::Frequency, "--ex"),
             quantity(ey, Dimension::Frequency, "--ey"), quantity(zeeman, Dimension::Frequency, "--zeeman")};
  if (!field.empty()) p.zeeman_x = zeeman_frequency(quantity(field, Dimension::Dimensionless, "--field"));
  p.validate();
  const EffectiveParams eff = effective_params(p);
  const TransitionFrequencies f = transition_frequencies(eff);

  const Eigensystem es = eigensystem(build_lab_hamiltonian(p));
  std::size_t ground = 0;
  for (std::size_t k = 1; k < 3; ++k) {
    if (es[k].vector.population(SpinState::zero()) > es[ground].vector.population(SpinState::zero())) ground = k;
  }
  std::size_t bright = ground == 0 ? 1 : 0;
  for (std::size_t k = 0; k < 3; ++k) {
    if (k != ground && es[k].vector.population(SpinState::bright()) > es[bright].vector.population(SpinState::bright())) {
      bright = k;
    }
  }
  const std::size_t dark = 3 - ground - bright;
  const double exact_upper = es[bright].value - es[ground].value;
  const double exact_lower = es[dark].value - es[ground].value;

  Result r;
  r.table.add("zeeman_hz", {p.zeeman_x});
  r.table.add("d_prime_hz", {eff.d_prime});
  r.table.add("e_x_prime_hz", {eff.e_x_prime});
  r.table.add("f_upper_hz", {f.f_upper});
  r.table.add("f_lower_hz", {f.f_lower});
  r.table.add("f_bd_hz", {f.f_bd});
  r.table.add("exact_upper_hz", {exact_upper});
  r.table.add("exact_lower_hz", {exact_lower});
  r.resolved = {{"d_hz", p.d_zfs}, {"e_x_hz", p.e_x}, {"e_y_hz", p.e_y}, {"zeeman_x_hz", p.zeeman_x}};
  r.summary = {{"D'", mhz(eff.d_prime)},
               {"E'x", mhz(eff.e_x_prime)},
               {"f(0<->B)", mhz(f.f_upper) + "  exact " + mhz(exact_upper)},
               {"f(0<->D)", mhz(f.f_lower) + "  exact " + mhz(exact_lower)},
               {"f(B<->D)", mhz(f.f_bd) + "  exact " + mhz(exact_upper - exact_lower)}};
  if (eff.warning) r.summary.emplace_back("warning", *eff.warning);
  return r;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"NV-center spin-1 simulator and fitter", "nvspin"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  app.set_version_flag("--version", std::string(kToolVersion));

  Common common;
  std::vector<std::tuple<CLI::App*, std::string, std::string*>> string_opts;
  std::vector<std::pair<std::string, std::function<Json()>>> value_opts;

  auto add_common = [&](CLI::App* sub, bool simulated) {
    sub->add_option("--format", common.format, "Output format")->check(CLI::IsMember({"csv", "json"}));
    sub->add_option("--out", common.out, "Data file (default: $NVSPIN_OUTPUT_DIR/<command>.<ext>)");
    sub->add_flag("--plot-data", common.plot, "Also write a gnuplot .dat/.gp pair");
    if (simulated) {
      sub->add_option("--noise", common.noise, "Gaussian noise sigma added to the signal column")
          ->check(CLI::NonNegativeNumber);
      sub->add_option("--seed", common.seed, "Noise seed");
      sub->add_option("--baseline", common.baseline, "Readout baseline");
      sub->add_option("--contrast", common.contrast, "Readout contrast");
    }
  };
  auto str_opt = [&](CLI::App* sub, const std::string& name, std::string& var, const std::string& help) {
    sub->add_option(name, var, help);
    string_opts.emplace_back(sub, name, &var);
  };
  auto eff_opts = [&](CLI::App* sub, EffOptions& e) {
    str_opt(sub, "--d-prime", e.d_prime, "Effective zero-field splitting D'");
    str_opt(sub, "--ex-prime", e.e_prime, "Effective strain splitting E'x");
  };
  auto sim_opts = [&](CLI::App* sub, SimOptions& s) {
    sub->add_flag("--lab-frame", s.lab_frame, "Integrate the full lab-frame Hamiltonian");
    str_opt(sub, "--t2", s.t2, "Dephasing time T2*");
    str_opt(sub, "--max-step", s.max_step, "Largest integration step");
  };

  std::function<Result()> body;

  // params
  std::string p_d = "2870MHz", p_ex = "0", p_ey = "0", p_zeeman = "0", p_field;
  auto* params = app.add_subcommand("params", "Effective D', E' and transition frequencies");
  str_opt(params, "--d", p_d, "Zero-field splitting D");
  str_opt(params, "--ex", p_ex, "Strain Ex");
  str_opt(params, "--ey", p_ey, "Strain Ey");
  str_opt(params, "--zeeman", p_zeeman, "Transverse Zeeman frequency");
  str_opt(params, "--field", p_field, "Transverse field in tesla (overrides --zeeman)");
  add_common(params, false);
  params->callback([&] { body = [&] { return do_params(p_d, p_ex, p_ey, p_zeeman, p_field); }; });

  // odmr
  EffOptions o_eff;
  std::string o_from = "2.87GHz", o_to = "2.89GHz", o_lw = "1MHz", o_rf_freq, o_rf_rabi;
  std::size_t o_points = 401;
  double o_depth = 1.0, o_pol_x = 1.0, o_pol_y = 1.0;
  auto* odmr = app.add_subcommand("odmr", "CW-ODMR spectrum, optionally RF dressed");
  eff_opts(odmr, o_eff);
  str_opt(odmr, "--from", o_from, "Sweep start");
  str_opt(odmr, "--to", o_to, "Sweep end");
  odmr->add_option("--points", o_points, "Sweep points");
  str_opt(odmr, "--linewidth", o_lw, "Lorentzian FWHM");
  odmr->add_option("--depth-scale", o_depth, "Dip depth scale");
  str_opt(odmr, "--rf-freq", o_rf_freq, "RF frequency (default 2E')");
  str_opt(odmr, "--rf-rabi", o_rf_rabi, "RF rabi_z; enables the dressing field");
  odmr->add_option("--pol-x", o_pol_x, "MW polarization x");
  odmr->add_option("--pol-y", o_pol_y, "MW polarization y");
  add_common(odmr, true);
  odmr->callback([&] {
    body = [&] {
      const NVParams p = o_eff.params();
      const EffectiveParams eff = effective_params(p);
      OdmrConfig cfg;
      cfg.grid = linspace(quantity(o_from, Dimension::Frequency, "--from"), quantity(o_to, Dimension::Frequency, "--to"),
                          o_points);
      cfg.linewidth = quantity(o_lw, Dimension::Frequency, "--linewidth");
      cfg.depth_scale = o_depth;
      cfg.mw_polarization = Eigen::Vector3d(o_pol_x, o_pol_y, 0.0);
      if (!o_rf_rabi.empty()) {
        const double f_rf = o_rf_freq.empty() ? 2.0 * eff.e_x_prime : quantity(o_rf_freq, Dimension::Frequency, "--rf-freq");
        cfg.rf = DriveField{Eigen::Vector3d(0.0, 0.0, quantity(o_rf_rabi, Dimension::Frequency, "--rf-rabi")), f_rf, 0.0,
                            DriveKind::Rf};
      }
      const SpectrumTrace s = simulate_cw_odmr(p, cfg, readout_of(common));
      Result r;
      r.table = from_trace(s);
      r.metadata = s.metadata;
      r.noisy_signal = true;
      for (const auto& line : odmr_lines(eff, cfg.rf, cfg.mw_polarization)) {
        r.summary.emplace_back(line.via == Level::Bright ? "line (via B)" : "line (via D)",
                               mhz(line.center) + "  weight " + fixed(line.weight));
      }
      const auto& sig = s.column("signal");
      for (double i : first_minima(sig)) r.summary.emplace_back("grid minimum", mhz(s.axis[static_cast<std::size_t>(i)]));
      return r;
    };
  });

  // rabi-mw
  EffOptions m_eff;
  SimOptions m_sim;
  std::string m_target = "bright", m_freq, m_rabi = "2.381MHz", m_tmax = "1us";
  std::size_t m_points = 1001;
  auto* rabi_mw = app.add_subcommand("rabi-mw", "MW Rabi oscillation on 0 <-> B or 0 <-> D");
  eff_opts(rabi_mw, m_eff);
  sim_opts(rabi_mw, m_sim);
  rabi_mw->add_option("--target", m_target, "Target level")->check(CLI::IsMember({"bright", "dark"}));
  string_opts.emplace_back(rabi_mw, "--target", &m_target);
  str_opt(rabi_mw, "--freq", m_freq, "MW frequency (default: resonant with the target)");
  str_opt(rabi_mw, "--rabi", m_rabi, "MW Rabi frequency");
  str_opt(rabi_mw, "--t-max", m_tmax, "Longest pulse");
  rabi_mw->add_option("--points", m_points, "Duration points");
  add_common(rabi_mw, true);
  rabi_mw->callback([&] {
    body = [&] {
      const NVParams p = m_eff.params();
      PiPulse pulse = calibrate_pi_pulse(p, m_target == "dark" ? Level::Dark : Level::Bright,
                                         quantity(m_rabi, Dimension::Frequency, "--rabi"));
      if (!m_freq.empty()) pulse.drive.frequency = quantity(m_freq, Dimension::Frequency, "--freq");
      const auto durations = linspace(0.0, quantity(m_tmax, Dimension::Time, "--t-max"), m_points);
      const TimeTrace t = simulate_mw_rabi(p, pulse.drive, durations, readout_of(common), m_sim.resolve());
      Result r;
      r.table = from_trace(t);
      r.metadata = t.metadata;
      r.noisy_signal = true;
      r.resolved = {{"mw_frequency_hz", pulse.drive.frequency}};
      r.summary.emplace_back("MW frequency", mhz(pulse.drive.frequency));
      r.summary.emplace_back("1/(2 rabi)", ns(pulse.duration));
      const auto mins = first_minima(t.column("signal"));
      r.summary.emplace_back("first minimum",
                             mins.empty() ? "none" : ns(t.axis[static_cast<std::size_t>(mins.front())]));
      return r;
    };
  });

  // rabi-bd
  EffOptions b_eff;
  SimOptions b_sim;
  std::string b_mw_rabi = "2.381MHz", b_rf_freq, b_rf_rabi = "0.2MHz", b_tmax = "10us";
  std::size_t b_points = 201;
  auto* rabi_bd = app.add_subcommand("rabi-bd", "B <-> D Rabi oscillation between two MW pi pulses");
  eff_opts(rabi_bd, b_eff);
  sim_opts(rabi_bd, b_sim);
  str_opt(rabi_bd, "--mw-rabi", b_mw_rabi, "MW Rabi frequency of the pi pulses");
  str_opt(rabi_bd, "--rf-freq", b_rf_freq, "RF frequency (default 2E')");
  str_opt(rabi_bd, "--rf-rabi", b_rf_rabi, "RF rabi_z");
  str_opt(rabi_bd, "--t-max", b_tmax, "Longest RF pulse");
  rabi_bd->add_option("--points", b_points, "Duration points");
  add_common(rabi_bd, true);
  rabi_bd->callback([&] {
    body = [&] {
      const NVParams p = b_eff.params();
      const EffectiveParams eff = effective_params(p);
      const PiPulse pi = calibrate_pi_pulse(p, Level::Bright, quantity(b_mw_rabi, Dimension::Frequency, "--mw-rabi"));
      const double f_rf =
          b_rf_freq.empty() ? 2.0 * eff.e_x_prime : quantity(b_rf_freq, Dimension::Frequency, "--rf-freq");
      const DriveField rf{Eigen::Vector3d(0.0, 0.0, quantity(b_rf_rabi, Dimension::Frequency, "--rf-rabi")), f_rf, 0.0,
                          DriveKind::Rf};
      const auto durations = linspace(0.0, quantity(b_tmax, Dimension::Time, "--t-max"), b_points);
      const TimeTrace t = simulate_bd_rabi(p, pi, rf, durations, readout_of(common), b_sim.resolve());
      double worst = 0.0;
      for (std::size_t i = 0; i < t.axis.size(); ++i) {
        worst = std::max(worst, std::abs(t.column("p_bright")[i] - t.column("p_bright_analytic")[i]));
      }
      Result r;
      r.table = from_trace(t);
      r.metadata = t.metadata;
      r.noisy_signal = true;
      r.resolved = {{"rf_frequency_hz", f_rf}, {"mw_frequency_hz", pi.drive.frequency}};
      r.summary = {{"MW pi pulse", ns(pi.duration) + " at " + mhz(pi.drive.frequency)},
                   {"pi fidelity", t.metadata.at("mw_pi_fidelity")},
                   {"RF frequency", mhz(f_rf)},
                   {"max |P_B - closed form|", fixed(worst, 3)}};
      return r;
    };
  });

  // chevron
  EffOptions c_eff;
  SimOptions c_sim;
  std::string c_axis = "freq", c_from, c_to, c_rf_freq, c_rf_rabi = "0.2MHz", c_mw_rabi = "2.381MHz", c_tmax = "10us";
  std::size_t c_rows = 41, c_points = 101;
  auto* chevron = app.add_subcommand("chevron", "B <-> D Rabi map over RF frequency or RF amplitude");
  eff_opts(chevron, c_eff);
  sim_opts(chevron, c_sim);
  chevron->add_option("--axis", c_axis, "Swept RF parameter")->check(CLI::IsMember({"freq", "rabi"}));
  string_opts.emplace_back(chevron, "--axis", &c_axis);
  str_opt(chevron, "--from", c_from, "Sweep start (default 2E'-1MHz or 50kHz)");
  str_opt(chevron, "--to", c_to, "Sweep end (default 2E'+1MHz or 500kHz)");
  chevron->add_option("--rows", c_rows, "Sweep points");
  str_opt(chevron, "--rf-freq", c_rf_freq, "Fixed RF frequency (default 2E')");
  str_opt(chevron, "--rf-rabi", c_rf_rabi, "Fixed RF rabi_z");
  str_opt(chevron, "--mw-rabi", c_mw_rabi, "MW Rabi frequency of the pi pulses");
  str_opt(chevron, "--t-max", c_tmax, "Longest RF pulse");
  chevron->add_option("--points", c_points, "Duration points");
  add_common(chevron, true);
  chevron->callback([&] {
    body = [&] {
      const NVParams p = c_eff.params();
      const EffectiveParams eff = effective_params(p);
      ChevronConfig cfg;
      cfg.axis = c_axis == "rabi" ? ChevronAxis::RfRabi : ChevronAxis::RfFrequency;
      const double f_rf = c_rf_freq.empty() ? 2.0 * eff.e_x_prime : quantity(c_rf_freq, Dimension::Frequency, "--rf-freq");
      cfg.rf = DriveField{Eigen::Vector3d(0.0, 0.0, quantity(c_rf_rabi, Dimension::Frequency, "--rf-rabi")), f_rf, 0.0,
                          DriveKind::Rf};
      const bool by_freq = cfg.axis == ChevronAxis::RfFrequency;
      const double lo = c_from.empty() ? (by_freq ? f_rf - 1e6 : 50e3) : quantity(c_from, Dimension::Frequency, "--from");
      const double hi = c_to.empty() ? (by_freq ? f_rf + 1e6 : 500e3) : quantity(c_to, Dimension::Frequency, "--to");
      cfg.axis_values = linspace(lo, hi, c_rows);
      cfg.durations = linspace(0.0, quantity(c_tmax, Dimension::Time, "--t-max"), c_points);
      cfg.mw_pi = calibrate_pi_pulse(p, Level::Bright, quantity(c_mw_rabi, Dimension::Frequency, "--mw-rabi"));
      const Map2D map = simulate_bd_chevron(p, cfg, readout_of(common), c_sim.resolve());
      double worst = 0.0;
      const auto& num = map.layer("p_bright");
      const auto& ana = map.layer("p_bright_analytic");
      for (std::size_t i = 0; i < num.size(); ++i) worst = std::max(worst, std::abs(num[i] - ana[i]));
      Result r;
      r.table = from_map(map);
      r.metadata = map.metadata;
      r.block = map.col_axis.size();
      r.noisy_signal = true;
      r.resolved = {{"axis_from", lo}, {"axis_to", hi}, {"rf_frequency_hz", f_rf}};
      r.summary = {{"rows x columns", std::to_string(map.row_axis.size()) + " x " + std::to_string(map.col_axis.size())},
                   {"max |P_B - closed form|", fixed(worst, 3)}};
      return r;
    };
  });

  // simulate
  EffOptions s_eff;
  SimOptions s_sim;
  std::string s_file;
  std::size_t s_samples = 16;
  auto* simulate = app.add_subcommand("simulate", "Run a .seq pulse sequence");
  simulate->add_option("file", s_file, "Sequence file")->required();
  string_opts.emplace_back(simulate, "file", &s_file);
  eff_opts(simulate, s_eff);
  sim_opts(simulate, s_sim);
  simulate->add_option("--samples", s_samples, "Trajectory samples per segment");
  add_common(simulate, true);
  simulate->callback([&] {
    body = [&] {
      const std::string text = read_file(s_file);
      const ParseResult parsed = parse_sequence(text);
      if (!parsed) {
        std::string msg;
        for (const auto& d : parsed.diagnostics()) msg += (msg.empty() ? "" : "\n") + s_file + ":" + d.to_string();
        throw InvalidInput(msg);
      }
      const SequenceRun run =
          run_sequence(s_eff.params(), parsed.sequence(), readout_of(common), s_samples, s_sim.resolve());
      Result r;
      r.table = from_trace(run.trajectory);
      r.metadata = run.trajectory.metadata;
      r.inputs.push_back(s_file);
      const Populations pops = populations(run.final_state);
      r.summary = {{"segments", std::to_string(parsed.sequence().segments.size())},
                   {"total duration", ns(parsed.sequence().total_duration())},
                   {"final P0 / PB / PD", fixed(pops.zero) + " / " + fixed(pops.bright) + " / " + fixed(pops.dark)},
                   {"readout", run.readout_signal ? fixed(*run.readout_signal) : "none"}};
      return r;
    };
  });

  // fit-dips
  std::string fd_file, fd_column = "signal", fd_upper = "bright";
  int fd_n = 2;
  auto* fit_dips_cmd = app.add_subcommand("fit-dips", "Fit Lorentzian dips to a spectrum");
  fit_dips_cmd->add_option("file", fd_file, "Spectrum (.csv or .json)")->required();
  string_opts.emplace_back(fit_dips_cmd, "file", &fd_file);
  fit_dips_cmd->add_option("--n", fd_n, "Number of dips")->check(CLI::Range(1, kMaxDips));
  str_opt(fit_dips_cmd, "--column", fd_column, "Signal column");
  fit_dips_cmd->add_option("--upper", fd_upper, "Level of the upper dip when n = 2")
      ->check(CLI::IsMember({"bright", "dark"}));
  string_opts.emplace_back(fit_dips_cmd, "--upper", &fd_upper);
  add_common(fit_dips_cmd, false);
  fit_dips_cmd->callback([&] {
    body = [&] {
      const SampledTrace raw = read_trace(fd_file, read_file(fd_file));
      SpectrumTrace s;
      static_cast<SampledTrace&>(s) = raw;
      const DipFitResult fit = fit_dips(s, fd_n, fd_column);
      Result r;
      r.inputs.push_back(fd_file);
      std::vector<double> c, w, d;
      for (const auto& dip : fit.dips) {
        c.push_back(dip.center);
        w.push_back(dip.fwhm);
        d.push_back(dip.depth);
        r.summary.emplace_back("dip", mhz(dip.center) + "  fwhm " + mhz(dip.fwhm) + "  depth " + fixed(dip.depth));
      }
      r.table.add("center_hz", c);
      r.table.add("fwhm_hz", w);
      r.table.add("depth", d);
      r.table.add("baseline", std::vector<double>(c.size(), fit.baseline));
      r.summary.emplace_back("baseline", fixed(fit.baseline));
      r.summary.emplace_back("residual rms", fixed(fit.residual_rms, 3));
      r.summary.emplace_back("iterations", std::to_string(fit.iterations));
      if (fd_n == 2) {
        const auto ex = extract_params(fit.dips[0].center, fit.dips[1].center,
                                       fd_upper == "dark" ? UpperDip::Dark : UpperDip::Bright);
        r.summary.emplace_back("D'", mhz(ex.eff.d_prime));
        r.summary.emplace_back("E'x", mhz(ex.eff.e_x_prime));
        r.summary.emplace_back("f(B<->D)", mhz(ex.f_bd));
        r.resolved = {{"d_prime_hz", ex.eff.d_prime}, {"e_x_prime_hz", ex.eff.e_x_prime}, {"f_bd_hz", ex.f_bd}};
      }
      if (!fit.converged) {
        r.failed = true;
        r.failure = "dip fit did not converge: " + fit.message;
      }
      return r;
    };
  });

  // fit-rabi
  std::string fr_file, fr_column = "signal", fr_full;
  bool fr_decay = false;
  auto* fit_rabi_cmd = app.add_subcommand("fit-rabi", "Fit a Rabi oscillation");
  fit_rabi_cmd->add_option("file", fr_file, "Time trace (.csv or .json)")->required();
  string_opts.emplace_back(fit_rabi_cmd, "file", &fr_file);
  str_opt(fit_rabi_cmd, "--column", fr_column, "Signal column");
  str_opt(fit_rabi_cmd, "--full-scale", fr_full, "Signal swing of a complete transfer (enables detuning)");
  fit_rabi_cmd->add_flag("--decay", fr_decay, "Fit an exponential decay envelope");
  add_common(fit_rabi_cmd, false);
  fit_rabi_cmd->callback([&] {
    body = [&] {
      const SampledTrace raw = read_trace(fr_file, read_file(fr_file));
      TimeTrace t;
      static_cast<SampledTrace&>(t) = raw;
      RabiFitOptions opts;
      opts.column = fr_column;
      opts.full_scale = optional_quantity(fr_full, Dimension::Dimensionless, "--full-scale");
      opts.fit_decay = fr_decay;
      const RabiFitResult fit = fit_rabi(t, opts);
      Result r;
      r.inputs.push_back(fr_file);
      r.table.add("rabi_hz", {fit.rabi});
      r.table.add("detuning_hz", {fit.detuning});
      r.table.add("generalized_hz", {fit.generalized});
      r.table.add("amplitude", {fit.amplitude});
      r.table.add("offset", {fit.offset});
      r.table.add("decay_time_s", {fit.decay_time.value_or(INFINITY)});
      r.table.add("residual_rms", {fit.residual_rms});
      r.table.add("pi_time_s", {fit.pi_time()});
      r.summary = {{"rabi", mhz(fit.rabi)},
                   {"detuning", mhz(fit.detuning) + (fit.ill_conditioned ? "  (not resolved)" : "")},
                   {"generalized", mhz(fit.generalized)},
                   {"pi time", ns(fit.pi_time())},
                   {"residual rms", fixed(fit.residual_rms, 3)}};
      if (fit.decay_time) r.summary.emplace_back("decay time", ns(*fit.decay_time));
      if (!fit.converged) {
        r.failed = true;
        r.failure = "Rabi fit did not converge";
      }
      return r;
    };
  });

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsageError;
  }

  CLI::App* sub = app.get_subcommands().front();
  Json config = Json::object();
  for (const auto& [owner, name, ptr] : string_opts) {
    if (owner == sub) config[name] = *ptr;
  }
  for (const CLI::Option* opt : sub->get_options()) {
    const std::string name = opt->get_name();
    if (name == "--help" || config.contains(name)) continue;
    config[name] = opt->count() ? opt->as<std::string>() : opt->get_default_str();
  }

  try {
    Result result = body();
    emit(sub->get_name(), args, config, common, result, out);
    if (result.failed) {
      err << "error: " << result.failure << '\n';
      return kNumericError;
    }
    return kOk;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << '\n';
    return kNumericError;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  }
}

}  // namespace nvspin::cli
