#include "postshock/io.hpp"

#include "postshock/errors.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <vector>

namespace postshock {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// CSV plumbing

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) {
    // trim surrounding whitespace
    const auto b = field.find_first_not_of(" \t\r");
    const auto e = field.find_last_not_of(" \t\r");
    fields.push_back(b == std::string::npos ? "" : field.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') fields.push_back("");
  return fields;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<int> line_numbers;  // 1-based source line per row
};

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path + "'");
  CsvTable table;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line_no == 1 || table.header.empty()) {
      table.header = split_csv_line(line);
    } else {
      table.rows.push_back(split_csv_line(line));
      table.line_numbers.push_back(line_no);
    }
  }
  if (table.header.empty()) throw InputError("'" + path + "' is empty");
  return table;
}

double parse_double(const std::string& s, const std::string& what, int line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw InputError(what + ": cannot parse number '" + s + "' (line " + std::to_string(line) +
                     ")");
  }
}

int parse_int(const std::string& s, const std::string& what, int line) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw InputError(what + ": cannot parse integer '" + s + "' (line " + std::to_string(line) +
                     ")");
  }
}

/// Shortest round-trip decimal representation; empty for NaN.
std::string format_number(double v) {
  if (std::isnan(v)) return "";
  return json(v).dump();
}

// ---------------------------------------------------------------------------
// Panel loading

struct RawSeries {
  struct Row {
    int t;
    std::optional<double> y;
    std::vector<std::optional<double>> x;
    int line;
  };
  std::vector<Row> rows;
  int first_line = 0;
};

DonorPool assemble_pool(const std::string& data_path,
                        std::vector<std::pair<std::string, RawSeries>>& series_list,
                        const std::map<std::string, std::pair<int, std::string>>& meta, int p) {
  std::vector<TimeSeries> donors;
  std::optional<TimeSeries> target;

  for (auto& [id, raw] : series_list) {
    const auto meta_it = meta.find(id);
    if (meta_it == meta.end()) {
      throw InputError("'" + data_path + "': series '" + id + "' (line " +
                       std::to_string(raw.first_line) + ") missing from metadata");
    }
    const int t_star = meta_it->second.first;
    const std::string& role = meta_it->second.second;

    std::sort(raw.rows.begin(), raw.rows.end(),
              [](const auto& a, const auto& b) { return a.t < b.t; });
    if (raw.rows.front().t != 0) {
      throw InputError("series '" + id + "': rows must start at t=0, first is t=" +
                       std::to_string(raw.rows.front().t) + " (line " +
                       std::to_string(raw.rows.front().line) + ")");
    }
    for (std::size_t i = 0; i < raw.rows.size(); ++i) {
      const int expected = static_cast<int>(i);
      if (raw.rows[i].t != expected) {
        throw InputError("series '" + id + "': gap or duplicate in t near t=" +
                         std::to_string(raw.rows[i].t) + " (line " +
                         std::to_string(raw.rows[i].line) + "), expected t=" +
                         std::to_string(expected));
      }
    }

    const int t_last = raw.rows.back().t;
    const auto& last = raw.rows.back();

    // A trailing row with empty y marks the target's forecast row T*+1.
    int T;
    if (!last.y.has_value()) {
      if (role != "target") {
        throw InputError("series '" + id + "': missing y at t=" + std::to_string(t_last) +
                         " (line " + std::to_string(last.line) + ") in a donor series");
      }
      if (t_last != t_star + 1) {
        throw InputError("series '" + id + "': missing y allowed only at t = t_star+1 = " +
                         std::to_string(t_star + 1) + ", found at t=" + std::to_string(t_last) +
                         " (line " + std::to_string(last.line) + ")");
      }
      T = t_last - 1;
    } else {
      T = t_last;
      if (role == "target" && t_star == T) {
        throw InputError("series '" + id + "': target with t_star=T=" + std::to_string(T) +
                         " needs a forecast covariate row at t=" + std::to_string(T + 1) +
                         " (y left empty)");
      }
    }

    for (std::size_t i = 0; i + 1 < raw.rows.size(); ++i) {
      if (!raw.rows[i].y.has_value() && raw.rows[i].t != 0) {
        throw InputError("series '" + id + "': missing y at t=" + std::to_string(raw.rows[i].t) +
                         " (line " + std::to_string(raw.rows[i].line) + ")");
      }
    }

    TimeSeries ts;
    ts.id = id;
    ts.t_star = t_star;
    ts.shocked = t_star < T;
    ts.y.resize(T + 1);
    for (int t = 0; t <= T; ++t) {
      if (!raw.rows[t].y.has_value()) {
        throw InputError("series '" + id + "': missing y at t=" + std::to_string(t) + " (line " +
                         std::to_string(raw.rows[t].line) + ")");
      }
      ts.y(t) = *raw.rows[t].y;
    }
    const int x_rows = static_cast<int>(raw.rows.size()) - 1;  // rows t = 1..t_last
    ts.x.resize(x_rows, p);
    for (int t = 1; t <= t_last; ++t) {
      const auto& row = raw.rows[t];
      for (int j = 0; j < p; ++j) {
        if (!row.x[j].has_value()) {
          throw InputError("series '" + id + "': missing x" + std::to_string(j + 1) + " at t=" +
                           std::to_string(t) + " (line " + std::to_string(row.line) + ")");
        }
        ts.x(t - 1, j) = *row.x[j];
      }
    }
    ts.validate();

    if (role == "target") {
      if (target.has_value()) {
        throw InputError("metadata declares multiple targets ('" + target->id + "' and '" + id +
                         "')");
      }
      target = std::move(ts);
    } else {
      donors.push_back(std::move(ts));
    }
  }

  if (!target.has_value()) throw InputError("metadata declares no target series");
  DonorPool pool;
  pool.donors = std::move(donors);
  pool.target = std::move(*target);
  pool.validate();
  return pool;
}

// ---------------------------------------------------------------------------
// JSON serialization

std::map<std::string, double> by_name(const std::map<Aggregation, double>& m) {
  std::map<std::string, double> out;
  for (const auto& [k, v] : m) out[aggregation_name(k)] = v;
  return out;
}

json weights_json(const WeightVector& wv) {
  return json{{"w", std::vector<double>(wv.w.data(), wv.w.data() + wv.w.size())},
              {"objective", wv.objective},
              {"norm_order", wv.norm_order}};
}

json manifest_json(const RunManifest& m) {
  return json{{"command", m.command},
              {"config_hash", m.config_hash},
              {"seed", m.seed},
              {"artifact_version", m.artifact_version},
              {"schema_version", m.schema_version},
              {"input_digests", m.input_digests},
              {"timestamp", m.timestamp}};
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write '" + path.string() + "'");
  out << text;
}

void write_json_report(const fs::path& path, const json& body) {
  write_text(path, body.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Shared CLI options

struct CommonOptions {
  std::string data, meta, config;
  std::uint64_t seed = 0;
  std::string procedure = "bf";
  int B = 200;
  int k = 0;  // 0 = not set
  double norm_order = 2.0;
  std::string standardize = "on";
  std::string out_dir = ".";
  std::string format = "json";
  bool plot_data = false;
  int threads = 0;
};

Procedure parse_procedure(const std::string& s) {
  if (s == "bu") return Procedure::Bu;
  if (s == "bf") return Procedure::Bf;
  throw InputError("--bootstrap must be 'bu' or 'bf', got '" + s + "'");
}

bool parse_on_off(const std::string& s, const char* flag) {
  if (s == "on") return true;
  if (s == "off") return false;
  throw InputError(std::string(flag) + " must be 'on' or 'off', got '" + s + "'");
}

std::vector<Aggregation> parse_estimators(const json& arr) {
  std::vector<Aggregation> out;
  for (const auto& item : arr) {
    const std::string name = item.get<std::string>();
    if (name == "adj") out.push_back(Aggregation::adj);
    else if (name == "ivw") out.push_back(Aggregation::ivw);
    else if (name == "wadj") out.push_back(Aggregation::wadj);
    else throw InputError("unknown estimator '" + name + "' in config");
  }
  return out;
}

json load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config '" + path + "'");
  json cfg;
  try {
    in >> cfg;
  } catch (const json::exception& e) {
    throw InputError("config '" + path + "': " + e.what());
  }
  if (!cfg.is_object()) throw InputError("config '" + path + "' must be a JSON object");
  return cfg;
}

void reject_unknown_keys(const json& cfg, const std::vector<std::string>& known,
                         const std::string& path) {
  for (const auto& [key, value] : cfg.items()) {
    (void)value;
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw InputError("config '" + path + "': unknown key '" + key + "'");
    }
  }
}

std::vector<double> number_or_array(const json& v, const std::string& what) {
  std::vector<double> out;
  if (v.is_array()) {
    for (const auto& item : v) out.push_back(item.get<double>());
  } else {
    out.push_back(v.get<double>());
  }
  if (out.empty()) throw InputError(what + " must not be an empty array");
  return out;
}

SimConfig parse_sim_config(const json& cfg, const std::string& path) {
  static const std::vector<std::string> known = {
      "model",        "n",           "p",          "mu_alpha",    "sigma",
      "sigma_alpha",  "mu_delta",    "delta_draw_sd", "sigma_delta", "sigma_eta",
      "theta_mean",   "theta_sd",    "phi_min",    "phi_max",     "t_shape",
      "t_rate",       "t_min",       "t_multiplier", "cov_shape",  "cov_scale",
      "y0_init",      "seed",        "mc_reps",    "B",           "k",
      "bootstrap",    "norm_order",  "standardize", "threads"};
  reject_unknown_keys(cfg, known, path);

  SimConfig out;
  if (cfg.contains("model")) {
    const std::string m = cfg["model"].get<std::string>();
    if (m == "M1") out.model = Model::M1;
    else if (m == "M21") out.model = Model::M21;
    else if (m == "M22") out.model = Model::M22;
    else throw InputError("config: model must be M1, M21 or M22, got '" + m + "'");
  }
  if (cfg.contains("n")) {
    out.n_values.clear();
    for (double v : number_or_array(cfg["n"], "n")) out.n_values.push_back(static_cast<int>(v));
  }
  if (cfg.contains("p")) out.p = cfg["p"].get<int>();
  if (cfg.contains("mu_alpha")) out.mu_alpha = cfg["mu_alpha"].get<double>();
  if (cfg.contains("sigma")) out.sigma_values = number_or_array(cfg["sigma"], "sigma");
  if (cfg.contains("sigma_alpha")) {
    out.sigma_alpha_values = number_or_array(cfg["sigma_alpha"], "sigma_alpha");
  }
  if (cfg.contains("mu_delta")) out.mu_delta = number_or_array(cfg["mu_delta"], "mu_delta");
  if (cfg.contains("delta_draw_sd")) out.delta_draw_sd = cfg["delta_draw_sd"].get<double>();
  if (cfg.contains("sigma_delta")) out.sigma_delta = cfg["sigma_delta"].get<double>();
  if (cfg.contains("sigma_eta")) out.sigma_eta = cfg["sigma_eta"].get<double>();
  if (cfg.contains("theta_mean")) out.theta_mean = cfg["theta_mean"].get<double>();
  if (cfg.contains("theta_sd")) out.theta_sd = cfg["theta_sd"].get<double>();
  if (cfg.contains("phi_min")) out.phi_min = cfg["phi_min"].get<double>();
  if (cfg.contains("phi_max")) out.phi_max = cfg["phi_max"].get<double>();
  if (cfg.contains("t_shape")) out.t_shape = cfg["t_shape"].get<double>();
  if (cfg.contains("t_rate")) out.t_rate = cfg["t_rate"].get<double>();
  if (cfg.contains("t_min")) out.t_min = cfg["t_min"].get<int>();
  if (cfg.contains("t_multiplier")) out.t_multiplier = cfg["t_multiplier"].get<double>();
  if (cfg.contains("cov_shape")) out.cov_shape = cfg["cov_shape"].get<double>();
  if (cfg.contains("cov_scale")) out.cov_scale = cfg["cov_scale"].get<double>();
  if (cfg.contains("y0_init")) {
    const std::string v = cfg["y0_init"].get<std::string>();
    if (v == "zero") out.y0_init = Y0Init::zero;
    else if (v == "stationary_mean") out.y0_init = Y0Init::stationary_mean;
    else throw InputError("config: y0_init must be 'zero' or 'stationary_mean'");
  }
  if (cfg.contains("seed")) out.seed = cfg["seed"].get<std::uint64_t>();
  if (cfg.contains("mc_reps")) out.mc_reps = cfg["mc_reps"].get<int>();
  if (cfg.contains("B")) out.bootstrap_B = cfg["B"].get<int>();
  if (cfg.contains("k")) out.loocv_k = cfg["k"].get<int>();
  if (cfg.contains("bootstrap")) out.procedure = parse_procedure(cfg["bootstrap"].get<std::string>());
  if (cfg.contains("norm_order")) out.weights.norm_order = cfg["norm_order"].get<double>();
  if (cfg.contains("standardize")) out.weights.standardize = cfg["standardize"].get<bool>();
  if (cfg.contains("threads")) out.threads = cfg["threads"].get<int>();
  return out;
}

json sim_config_json(const SimConfig& c) {
  const char* model = c.model == Model::M1 ? "M1" : (c.model == Model::M21 ? "M21" : "M22");
  return json{{"model", model},
              {"n", c.n_values},
              {"p", c.p},
              {"mu_alpha", c.mu_alpha},
              {"sigma", c.sigma_values},
              {"sigma_alpha", c.sigma_alpha_values},
              {"mu_delta", c.mu_delta},
              {"delta_draw_sd", c.delta_draw_sd},
              {"sigma_delta", c.sigma_delta},
              {"sigma_eta", c.sigma_eta},
              {"theta_mean", c.theta_mean},
              {"theta_sd", c.theta_sd},
              {"phi_min", c.phi_min},
              {"phi_max", c.phi_max},
              {"t_shape", c.t_shape},
              {"t_rate", c.t_rate},
              {"t_min", c.t_min},
              {"t_multiplier", c.t_multiplier},
              {"cov_shape", c.cov_shape},
              {"cov_scale", c.cov_scale},
              {"y0_init", c.y0_init == Y0Init::zero ? "zero" : "stationary_mean"},
              {"seed", c.seed},
              {"mc_reps", c.mc_reps},
              {"B", c.bootstrap_B},
              {"k", c.loocv_k},
              {"bootstrap", procedure_name(c.procedure)},
              {"norm_order", c.weights.norm_order},
              {"standardize", c.weights.standardize}};
}

RunManifest make_manifest(const std::string& command, const json& settings, std::uint64_t seed,
                          const std::map<std::string, std::string>& inputs) {
  RunManifest m;
  m.command = command;
  m.config_hash = fnv1a64_bytes(settings.dump());
  m.seed = seed;
  m.input_digests = inputs;
  m.timestamp = utc_timestamp();
  return m;
}

// ---------------------------------------------------------------------------
// Subcommands

struct ForecastSettings {
  BootstrapConfig boot;
  json settings_json;
};

ForecastSettings resolve_assessment_settings(const CommonOptions& opt, bool seed_set, bool b_set,
                                             bool proc_set, bool norm_set, bool std_set) {
  BootstrapConfig boot;
  if (!opt.config.empty()) {
    const json cfg = load_config_file(opt.config);
    reject_unknown_keys(cfg, {"B", "bootstrap", "norm_order", "standardize", "estimators", "seed"},
                        opt.config);
    if (cfg.contains("B")) boot.replicates = cfg["B"].get<int>();
    if (cfg.contains("bootstrap")) boot.procedure = parse_procedure(cfg["bootstrap"].get<std::string>());
    if (cfg.contains("norm_order")) boot.weights.norm_order = cfg["norm_order"].get<double>();
    if (cfg.contains("standardize")) boot.weights.standardize = cfg["standardize"].get<bool>();
    if (cfg.contains("estimators")) boot.estimators = parse_estimators(cfg["estimators"]);
    if (cfg.contains("seed")) boot.seed = cfg["seed"].get<std::uint64_t>();
  }
  if (seed_set) boot.seed = opt.seed;
  if (b_set) boot.replicates = opt.B;
  if (proc_set) boot.procedure = parse_procedure(opt.procedure);
  if (norm_set) boot.weights.norm_order = opt.norm_order;
  if (std_set) boot.weights.standardize = parse_on_off(opt.standardize, "--standardize");

  json est = json::array();
  for (Aggregation a : boot.estimators) est.push_back(aggregation_name(a));
  json settings{{"B", boot.replicates},
                {"bootstrap", procedure_name(boot.procedure)},
                {"norm_order", boot.weights.norm_order},
                {"standardize", boot.weights.standardize},
                {"estimators", est},
                {"seed", boot.seed}};
  return {boot, settings};
}

std::map<std::string, std::string> input_digests(const CommonOptions& opt) {
  std::map<std::string, std::string> out;
  out["data"] = fnv1a64_file(opt.data);
  out["meta"] = fnv1a64_file(opt.meta);
  return out;
}

void write_plot_csv(const fs::path& path, const DonorPool& pool, const AssessmentReport& rep) {
  const TimeSeries& tgt = pool.target;
  std::ostringstream os;
  os << "t,y,fitted,forecast1";
  for (const auto& [a, f2] : rep.forecast2) {
    (void)f2;
    os << ",forecast2_" << aggregation_name(a);
  }
  os << "\n";
  // In-sample one-step fits over the regression window t = 1..T*.
  const Design d = build_design(tgt, false, tgt.t_star);
  const Eigen::VectorXd fitted = d.u * rep.target_fit.coef;
  for (int t = 0; t <= tgt.t_star + 1; ++t) {
    os << t << ",";
    if (t <= tgt.length()) os << format_number(tgt.y(t));
    os << ",";
    if (t >= 1 && t <= tgt.t_star) os << format_number(fitted(t - 1));
    os << ",";
    if (t == tgt.t_star + 1) os << format_number(rep.forecast1);
    for (const auto& [a, f2] : rep.forecast2) {
      (void)a;
      os << ",";
      if (t == tgt.t_star + 1) os << format_number(f2);
    }
    os << "\n";
  }
  write_text(path, os.str());
}

void write_flat_csv(const fs::path& path, const json& body) {
  // section,key,value rows; nested objects flatten with '.".
  std::ostringstream os;
  os << "key,value\n";
  const json flat = body.flatten();
  for (const auto& [pointer, value] : flat.items()) {
    std::string key = pointer;
    std::replace(key.begin(), key.end(), '/', '.');
    if (!key.empty() && key.front() == '.') key.erase(key.begin());
    os << key << "," << (value.is_string() ? value.get<std::string>() : value.dump()) << "\n";
  }
  write_text(path, os.str());
}

int cmd_forecast(const CommonOptions& opt, const ForecastSettings& fs_settings) {
  const DonorPool pool = load_panel(opt.data, opt.meta);
  const AssessmentReport rep = assess_all(pool, fs_settings.boot);

  json estimates, delta, decisions, boot_var, boot_mean, forecast2;
  for (const auto& [a, est] : rep.estimates) estimates[aggregation_name(a)] = est.value;
  for (const auto& [a, risk] : rep.risk) {
    delta[aggregation_name(a)] = risk.delta_hat;
    decisions[aggregation_name(a)] = risk.decision;
  }
  for (const auto& [a, v] : rep.distribution.sample_var) boot_var[aggregation_name(a)] = v;
  for (const auto& [a, v] : rep.distribution.sample_mean) boot_mean[aggregation_name(a)] = v;
  for (const auto& [a, v] : rep.forecast2) forecast2[aggregation_name(a)] = v;

  json donor_shocks = json::array();
  for (const auto& s : rep.donor_shocks) {
    donor_shocks.push_back(
        {{"donor_id", s.donor_id}, {"alpha_hat", s.alpha_hat}, {"var_hat", s.var_hat}});
  }

  const RunManifest manifest = make_manifest("forecast", fs_settings.settings_json,
                                             fs_settings.boot.seed, input_digests(opt));
  json body{{"schema_version", kSchemaVersion},
            {"estimates", estimates},
            {"weights", weights_json(rep.weights)},
            {"donor_shocks", donor_shocks},
            {"bootstrap_var", boot_var},
            {"bootstrap_mean", boot_mean},
            {"delta_hat", delta},
            {"decisions", decisions},
            {"forecast1", rep.forecast1},
            {"forecast2", forecast2},
            {"settings", fs_settings.settings_json},
            {"manifest", manifest_json(manifest)}};

  const fs::path dir(opt.out_dir);
  fs::create_directories(dir);
  write_json_report(dir / "forecast.json", body);
  if (opt.format == "csv") write_flat_csv(dir / "forecast.csv", body);
  if (opt.plot_data) write_plot_csv(dir / "plot.csv", pool, rep);
  return 0;
}

int cmd_loocv(const CommonOptions& opt, const ForecastSettings& fs_settings, bool k_set) {
  const DonorPool pool = load_panel(opt.data, opt.meta);

  LoocvConfig lc;
  lc.bootstrap = fs_settings.boot;
  lc.seed = fs_settings.boot.seed;
  if (k_set) {
    lc.mode = LoocvMode::k_draws;
    lc.k = opt.k;
  } else {
    lc.mode = LoocvMode::full;
  }
  const LoocvReport rep = loocv(pool, lc);

  json settings = fs_settings.settings_json;
  settings["mode"] = lc.mode == LoocvMode::full ? "full" : "k_draws";
  if (lc.mode == LoocvMode::k_draws) settings["k"] = lc.k;

  json iterations = json::array();
  for (const auto& iter : rep.iterations) {
    json cells;
    for (const auto& [a, cell] : iter.cells) {
      cells[aggregation_name(a)] = {{"decision", cell.decision},
                                    {"delta_hat", cell.delta_hat},
                                    {"e2", cell.e2},
                                    {"correct", cell.correct}};
    }
    iterations.push_back({{"held_out_index", iter.held_out_index},
                          {"held_out_id", iter.held_out_id},
                          {"e1", iter.e1},
                          {"estimators", cells}});
  }

  const RunManifest manifest = make_manifest("loocv", settings, lc.seed, input_digests(opt));
  json body{{"schema_version", kSchemaVersion},
            {"c_bar", by_name(rep.c_bar)},
            {"iterations", iterations},
            {"settings", settings},
            {"manifest", manifest_json(manifest)}};

  const fs::path dir(opt.out_dir);
  fs::create_directories(dir);
  write_json_report(dir / "loocv.json", body);
  if (opt.format == "csv") {
    std::ostringstream os;
    os << "held_out_index,held_out_id,e1";
    for (const auto& [a, v] : rep.c_bar) {
      (void)v;
      const char* name = aggregation_name(a);
      os << ",decision_" << name << ",delta_hat_" << name << ",e2_" << name << ",correct_"
         << name;
    }
    os << "\n";
    for (const auto& iter : rep.iterations) {
      os << iter.held_out_index << "," << iter.held_out_id << "," << format_number(iter.e1);
      for (const auto& [a, cell] : iter.cells) {
        (void)a;
        os << "," << cell.decision << "," << format_number(cell.delta_hat) << ","
           << format_number(cell.e2) << "," << cell.correct;
      }
      os << "\n";
    }
    write_text(dir / "loocv.csv", os.str());
  }
  return 0;
}

json sim_row_json(const SimRow& row) {
  auto stat = [](double mean, double se) {
    json j{{"mean", mean}};
    j["se"] = std::isnan(se) ? json() : json(se);
    return j;
  };
  json guess, cbar, dist;
  dist["original"] = stat(row.dist_original_mean, row.dist_original_se);
  for (const auto& [a, m] : row.guess_mean) {
    guess[aggregation_name(a)] = stat(m, row.guess_se.at(a));
  }
  for (const auto& [a, m] : row.cbar_mean) {
    cbar[aggregation_name(a)] = stat(m, row.cbar_se.at(a));
  }
  for (const auto& [a, m] : row.dist_mean) {
    dist[aggregation_name(a)] = stat(m, row.dist_se.at(a));
  }
  return json{{"n", row.n},
              {"sigma", row.sigma},
              {"sigma_alpha", row.sigma_alpha},
              {"reps", row.reps},
              {"regenerated", row.regenerated},
              {"guess", guess},
              {"cbar", cbar},
              {"distance", dist}};
}

void write_sim_csv(const fs::path& path, const std::vector<SimRow>& rows) {
  std::ostringstream os;
  os << "n,sigma,sigma_alpha,reps,regenerated";
  const char* names[] = {"adj", "ivw", "wadj"};
  for (const char* n : names) os << ",guess_" << n << "_mean,guess_" << n << "_se";
  for (const char* n : names) os << ",cbar_" << n << "_mean,cbar_" << n << "_se";
  os << ",dist_original_mean,dist_original_se";
  for (const char* n : names) os << ",dist_" << n << "_mean,dist_" << n << "_se";
  os << "\n";
  const Aggregation aggs[] = {Aggregation::adj, Aggregation::ivw, Aggregation::wadj};
  for (const SimRow& r : rows) {
    os << r.n << "," << format_number(r.sigma) << "," << format_number(r.sigma_alpha) << ","
       << r.reps << "," << r.regenerated;
    for (Aggregation a : aggs) {
      os << "," << format_number(r.guess_mean.at(a)) << "," << format_number(r.guess_se.at(a));
    }
    for (Aggregation a : aggs) {
      os << "," << format_number(r.cbar_mean.at(a)) << "," << format_number(r.cbar_se.at(a));
    }
    os << "," << format_number(r.dist_original_mean) << "," << format_number(r.dist_original_se);
    for (Aggregation a : aggs) {
      os << "," << format_number(r.dist_mean.at(a)) << "," << format_number(r.dist_se.at(a));
    }
    os << "\n";
  }
  write_text(path, os.str());
}

int cmd_simulate(const CommonOptions& opt, bool seed_set, bool b_set, bool k_set, bool proc_set,
                 bool norm_set, bool std_set) {
  if (opt.config.empty()) throw InputError("simulate requires --config");
  SimConfig cfg = parse_sim_config(load_config_file(opt.config), opt.config);
  if (seed_set) cfg.seed = opt.seed;
  if (b_set) cfg.bootstrap_B = opt.B;
  if (k_set) cfg.loocv_k = opt.k;
  if (proc_set) cfg.procedure = parse_procedure(opt.procedure);
  if (norm_set) cfg.weights.norm_order = opt.norm_order;
  if (std_set) cfg.weights.standardize = parse_on_off(opt.standardize, "--standardize");
  if (opt.threads > 0) cfg.threads = opt.threads;

  const std::vector<SimRow> rows = run_monte_carlo(cfg);

  const json settings = sim_config_json(cfg);  // thread count excluded: it cannot change results
  const RunManifest manifest =
      make_manifest("simulate", settings, cfg.seed, {{"config", fnv1a64_file(opt.config)}});
  json rows_json = json::array();
  for (const SimRow& r : rows) rows_json.push_back(sim_row_json(r));
  json body{{"schema_version", kSchemaVersion},
            {"rows", rows_json},
            {"settings", settings},
            {"manifest", manifest_json(manifest)}};

  const fs::path dir(opt.out_dir);
  fs::create_directories(dir);
  write_json_report(dir / "simulate.json", body);
  if (opt.format == "csv") write_sim_csv(dir / "simulate.csv", rows);
  return 0;
}

}  // namespace

// ---------------------------------------------------------------------------

std::string fnv1a64_bytes(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string fnv1a64_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path + "' for digest");
  std::ostringstream ss;
  ss << in.rdbuf();
  return fnv1a64_bytes(ss.str());
}

DonorPool load_panel(const std::string& data_path, const std::string& meta_path) {
  const CsvTable data = read_csv(data_path);
  if (data.header.size() < 4 || data.header[0] != "series_id" || data.header[1] != "t" ||
      data.header[2] != "y") {
    throw InputError("'" + data_path + "': header must be series_id,t,y,x1..xp");
  }
  const int p = static_cast<int>(data.header.size()) - 3;

  std::vector<std::pair<std::string, RawSeries>> series_list;
  auto series_of = [&](const std::string& id, int line) -> RawSeries& {
    for (auto& [known, raw] : series_list) {
      if (known == id) return raw;
    }
    series_list.emplace_back(id, RawSeries{});
    series_list.back().second.first_line = line;
    return series_list.back().second;
  };

  for (std::size_t r = 0; r < data.rows.size(); ++r) {
    const auto& row = data.rows[r];
    const int line = data.line_numbers[r];
    if (static_cast<int>(row.size()) != p + 3) {
      throw InputError("'" + data_path + "': line " + std::to_string(line) + " has " +
                       std::to_string(row.size()) + " fields, expected " + std::to_string(p + 3));
    }
    RawSeries::Row parsed;
    parsed.line = line;
    parsed.t = parse_int(row[1], "'" + data_path + "' column t", line);
    parsed.y = row[2].empty() ? std::nullopt
                              : std::optional<double>(parse_double(row[2], "column y", line));
    parsed.x.resize(p);
    for (int j = 0; j < p; ++j) {
      const std::string& cell = row[3 + j];
      parsed.x[j] = cell.empty()
                        ? std::nullopt
                        : std::optional<double>(parse_double(cell, "column x" + std::to_string(j + 1), line));
    }
    series_of(row[0], line).rows.push_back(std::move(parsed));
  }

  const CsvTable meta = read_csv(meta_path);
  if (meta.header.size() != 3 || meta.header[0] != "series_id" || meta.header[1] != "t_star" ||
      meta.header[2] != "role") {
    throw InputError("'" + meta_path + "': header must be series_id,t_star,role");
  }
  std::map<std::string, std::pair<int, std::string>> meta_map;
  for (std::size_t r = 0; r < meta.rows.size(); ++r) {
    const auto& row = meta.rows[r];
    const int line = meta.line_numbers[r];
    if (row.size() != 3) {
      throw InputError("'" + meta_path + "': line " + std::to_string(line) + " needs 3 fields");
    }
    const std::string& role = row[2];
    if (role != "target" && role != "donor") {
      throw InputError("'" + meta_path + "': line " + std::to_string(line) +
                       ": role must be 'target' or 'donor', got '" + role + "'");
    }
    if (!meta_map.emplace(row[0], std::make_pair(parse_int(row[1], "t_star", line), role)).second) {
      throw InputError("'" + meta_path + "': duplicate series '" + row[0] + "' (line " +
                       std::to_string(line) + ")");
    }
  }
  for (const auto& [id, entry] : meta_map) {
    (void)entry;
    const bool found = std::any_of(series_list.begin(), series_list.end(),
                                   [&](const auto& kv) { return kv.first == id; });
    if (!found) {
      throw InputError("'" + meta_path + "': series '" + id + "' has no rows in '" + data_path +
                       "'");
    }
  }

  return assemble_pool(data_path, series_list, meta_map, p);
}

void write_panel(const DonorPool& pool, const std::string& data_path,
                 const std::string& meta_path) {
  const int p = pool.target.n_covariates();
  std::ostringstream data;
  data << "series_id,t,y";
  for (int j = 1; j <= p; ++j) data << ",x" << j;
  data << "\n";

  auto emit = [&](const TimeSeries& s) {
    const int t_last = static_cast<int>(s.x.rows());  // T, or T*+1 for an unshocked target
    for (int t = 0; t <= t_last; ++t) {
      data << s.id << "," << t << ",";
      if (t <= s.length()) data << format_number(s.y(t));
      for (int j = 0; j < p; ++j) {
        data << ",";
        if (t >= 1) data << format_number(s.x(t - 1, j));
      }
      data << "\n";
    }
  };
  emit(pool.target);
  for (const auto& d : pool.donors) emit(d);
  write_text(data_path, data.str());

  std::ostringstream meta;
  meta << "series_id,t_star,role\n";
  meta << pool.target.id << "," << pool.target.t_star << ",target\n";
  for (const auto& d : pool.donors) meta << d.id << "," << d.t_star << ",donor\n";
  write_text(meta_path, meta.str());
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Post-shock forecasting: donor-pool shock aggregation, bootstrap risk "
               "assessment, and LOOCV validation"};
  app.require_subcommand(1);

  CommonOptions opt;

  auto add_common = [&](CLI::App* cmd, bool with_panel) {
    if (with_panel) {
      cmd->add_option("--data", opt.data, "long-format panel CSV")->required();
      cmd->add_option("--meta", opt.meta, "metadata CSV (series_id,t_star,role)")->required();
      cmd->add_option("--config", opt.config, "optional JSON with run settings");
    }
    cmd->add_option("--seed", opt.seed, "RNG seed");
    cmd->add_option("--bootstrap", opt.procedure, "bootstrap procedure (bu|bf)");
    cmd->add_option("--B", opt.B, "bootstrap replicates");
    cmd->add_option("--norm", opt.norm_order, "weight-solve norm order");
    cmd->add_option("--standardize", opt.standardize, "standardize covariates for weights (on|off)");
    cmd->add_option("--out-dir", opt.out_dir, "output directory");
    cmd->add_option("--format", opt.format, "report format (json|csv)")
        ->check(CLI::IsMember({"json", "csv"}));
  };

  CLI::App* forecast = app.add_subcommand("forecast", "assess one pool and forecast the target");
  add_common(forecast, true);
  forecast->add_flag("--plot-data", opt.plot_data, "also write plot.csv (actual/fitted/forecasts)");

  CLI::App* loocv_cmd = app.add_subcommand("loocv", "leave-one-out validation of the decision rule");
  add_common(loocv_cmd, true);
  loocv_cmd->add_option("--k", opt.k, "random LOOCV draws (omit for full LOOCV)");

  CLI::App* simulate = app.add_subcommand("simulate", "Monte Carlo study of the workflow");
  simulate->add_option("--config", opt.config, "simulation config JSON")->required();
  add_common(simulate, false);
  simulate->add_option("--k", opt.k, "LOOCV draws per replicate");
  simulate->add_option("--threads", opt.threads, "worker threads (0 = hardware)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand(forecast) || app.got_subcommand(loocv_cmd)) {
      CLI::App* active = app.got_subcommand(forecast) ? forecast : loocv_cmd;
      const ForecastSettings settings = resolve_assessment_settings(
          opt, active->count("--seed") > 0, active->count("--B") > 0,
          active->count("--bootstrap") > 0, active->count("--norm") > 0,
          active->count("--standardize") > 0);
      if (active == forecast) return cmd_forecast(opt, settings);
      return cmd_loocv(opt, settings, loocv_cmd->count("--k") > 0);
    }
    return cmd_simulate(opt, simulate->count("--seed") > 0, simulate->count("--B") > 0,
                        simulate->count("--k") > 0, simulate->count("--bootstrap") > 0,
                        simulate->count("--norm") > 0, simulate->count("--standardize") > 0);
  } catch (const InputError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "failure: %s\n", e.what());
    return 3;
  }
}

}  // namespace postshock
