#include "ccmcf/cli_config.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cstring>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#ifndef CCMCF_VERSION
#define CCMCF_VERSION "0.0.0"
#endif

namespace ccmcf {

namespace fs = std::filesystem;

std::string code_version() { return CCMCF_VERSION; }

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace {

Json optional_number(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

ScenarioKind parse_kind(const std::string& s) {
  if (s == "mdl_matrix") return ScenarioKind::MdlMatrix;
  if (s == "link") return ScenarioKind::Link;
  throw ConfigError("expected 'mdl_matrix' or 'link'");
}

Engine parse_engine(const std::string& s) {
  if (s == "ssfm") return Engine::Ssfm;
  if (s == "oracle") return Engine::Oracle;
  throw ConfigError("expected 'ssfm' or 'oracle'");
}

SweepVariable parse_sweep_variable(const std::string& s) {
  for (auto v : {SweepVariable::None, SweepVariable::SmdCoeff, SweepVariable::MdlPeakToPeak, SweepVariable::NumChannels})
    if (to_string(v) == s) return v;
  throw ConfigError("expected one of none, smd_ps_per_sqrt_km, mdl_element_pp_db, num_channels");
}

}  // namespace

Json scenario_to_json(const Scenario& s) {
  Json tags = Json::array();
  for (auto t : s.tags) tags.push_back(to_string(t));
  const LinkConfig& l = s.link;
  Json j;
  j["name"] = s.name;
  j["kind"] = to_string(s.kind);
  j["engine"] = to_string(s.engine);
  j["tags"] = tags;
  j["num_realizations"] = s.num_realizations;
  j["master_seed"] = s.master_seed;
  j["histogram_bin_width_db"] = optional_number(s.binning.fixed_width);
  j["matrix"] = {{"num_modes", s.matrix.num_modes},
                 {"num_sections", s.matrix.num_sections},
                 {"sigma_g_neper", s.matrix.sigma_g}};
  j["link"] = {
      {"num_cores", l.num_cores},
      {"num_spans", l.num_spans},
      {"cut_core", l.cut_core},
      {"cut_channel", l.cut_channel ? Json(*l.cut_channel) : Json(nullptr)},
      {"record_all_cores", l.record_all_cores},
      {"fiber",
       {{"span_length_km", l.fiber.span_length_km},
        {"attenuation_db_per_km", l.fiber.attenuation_db_per_km},
        {"dispersion_ps_per_nm_km", l.fiber.dispersion_ps_per_nm_km},
        {"gamma_per_w_km", l.fiber.gamma_per_w_km},
        {"smd_ps_per_sqrt_km", l.fiber.smd_ps_per_sqrt_km},
        {"waveplate_length_km", l.fiber.waveplate_length_km}}},
      {"amplifier",
       {{"gain_db", l.amplifier.gain_db},
        {"noise_figure_db", l.amplifier.noise_figure_db},
        {"ase_enabled", l.amplifier.ase_enabled}}},
      {"mdl_element",
       {{"peak_to_peak_db", optional_number(l.element.peak_to_peak_db)},
        {"sigma_g_neper", optional_number(l.element.sigma_g)}}},
      {"step",
       {{"initial_step_km", l.step.initial_step_km},
        {"local_error_target", l.step.local_error_target},
        {"min_step_km", l.step.min_step_km}}},
      {"wdm",
       {{"num_channels", l.wdm.num_channels},
        {"symbol_rate_baud", l.wdm.symbol_rate_baud},
        {"spacing_hz", l.wdm.spacing_hz},
        {"symbols_per_block", l.wdm.symbols_per_block},
        {"power_per_channel_dbm", l.wdm.power_per_channel_dbm},
        {"rolloff", l.wdm.rolloff},
        {"samples_per_symbol", l.wdm.samples_per_symbol}}},
  };
  j["sweep"] = {{"variable", to_string(s.sweep.variable)},
                {"values", s.sweep.values},
                {"power_per_channel_dbm", s.sweep.power_dbm}};
  return j;
}

namespace {

/// Walks a document, collecting every schema violation with its dotted path.
class SchemaReader {
 public:
  std::vector<std::string> errors;

  const Json* object(const Json& parent, const std::string& path, const std::string& key,
                     std::initializer_list<const char*> allowed) {
    const auto it = parent.find(key);
    if (it == parent.end()) return nullptr;
    const std::string p = join(path, key);
    if (!it->is_object()) {
      errors.push_back(p + ": expected an object");
      return nullptr;
    }
    keys(*it, p, allowed);
    return &*it;
  }

  void keys(const Json& obj, const std::string& path, std::initializer_list<const char*> allowed) {
    for (const auto& [k, v] : obj.items()) {
      bool ok = false;
      for (const char* a : allowed) ok = ok || k == a;
      if (!ok) errors.push_back(join(path, k) + ": unknown key");
    }
  }

  template <class T>
  void read(const Json* obj, const std::string& path, const std::string& key, T& out) {
    if (!obj) return;
    const auto it = obj->find(key);
    if (it == obj->end()) return;
    const std::string p = join(path, key);
    try {
      assign(*it, out);
    } catch (const std::exception& e) {
      errors.push_back(p + ": " + e.what());
    }
  }

 private:
  static std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

  static void assign(const Json& v, double& out) {
    if (!v.is_number()) throw ConfigError("expected a number");
    out = v.get<double>();
  }
  static void assign(const Json& v, int& out) {
    if (!v.is_number_integer()) throw ConfigError("expected an integer");
    const auto x = v.get<std::int64_t>();
    if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) throw ConfigError("integer out of range");
    out = static_cast<int>(x);
  }
  static void assign(const Json& v, std::int64_t& out) {
    if (!v.is_number_integer()) throw ConfigError("expected an integer");
    out = v.get<std::int64_t>();
  }
  static void assign(const Json& v, std::uint64_t& out) {
    if (!v.is_number_unsigned()) throw ConfigError("expected a non-negative integer");
    out = v.get<std::uint64_t>();
  }
  static void assign(const Json& v, bool& out) {
    if (!v.is_boolean()) throw ConfigError("expected true or false");
    out = v.get<bool>();
  }
  static void assign(const Json& v, std::string& out) {
    if (!v.is_string()) throw ConfigError("expected a string");
    out = v.get<std::string>();
  }
  static void assign(const Json& v, std::optional<double>& out) {
    if (v.is_null()) {
      out.reset();
      return;
    }
    double x = 0.0;
    assign(v, x);
    out = x;
  }
  static void assign(const Json& v, std::optional<int>& out) {
    if (v.is_null()) {
      out.reset();
      return;
    }
    int x = 0;
    assign(v, x);
    out = x;
  }
  static void assign(const Json& v, std::vector<double>& out) {
    if (!v.is_array()) throw ConfigError("expected an array of numbers");
    std::vector<double> r;
    for (const auto& e : v) {
      if (!e.is_number()) throw ConfigError("expected an array of numbers");
      r.push_back(e.get<double>());
    }
    out = std::move(r);
  }
  static void assign(const Json& v, ScenarioKind& out) {
    std::string s;
    assign(v, s);
    out = parse_kind(s);
  }
  static void assign(const Json& v, Engine& out) {
    std::string s;
    assign(v, s);
    out = parse_engine(s);
  }
  static void assign(const Json& v, SweepVariable& out) {
    std::string s;
    assign(v, s);
    out = parse_sweep_variable(s);
  }
  static void assign(const Json& v, std::vector<ScenarioTag>& out) {
    if (!v.is_array()) throw ConfigError("expected an array of tags");
    std::vector<ScenarioTag> r;
    for (const auto& e : v) {
      if (!e.is_string()) throw ConfigError("expected an array of tags");
      r.push_back(parse_scenario_tag(e.get<std::string>()));
    }
    out = std::move(r);
  }
};

std::string with_errors(const std::string& head, const std::vector<std::string>& errors) {
  std::ostringstream os;
  os << head;
  for (const auto& e : errors) os << "\n  " << e;
  return os.str();
}

}  // namespace

Scenario scenario_from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("scenario must be a JSON object");
  Scenario s;
  SchemaReader r;
  r.keys(j, "", {"name", "kind", "engine", "tags", "num_realizations", "master_seed", "histogram_bin_width_db", "matrix",
                 "link", "sweep"});
  r.read(&j, "", "name", s.name);
  r.read(&j, "", "kind", s.kind);
  r.read(&j, "", "engine", s.engine);
  r.read(&j, "", "tags", s.tags);
  r.read(&j, "", "num_realizations", s.num_realizations);
  r.read(&j, "", "master_seed", s.master_seed);
  r.read(&j, "", "histogram_bin_width_db", s.binning.fixed_width);

  if (const Json* m = r.object(j, "", "matrix", {"num_modes", "num_sections", "sigma_g_neper"})) {
    r.read(m, "matrix", "num_modes", s.matrix.num_modes);
    r.read(m, "matrix", "num_sections", s.matrix.num_sections);
    r.read(m, "matrix", "sigma_g_neper", s.matrix.sigma_g);
  }
  if (const Json* l = r.object(j, "", "link",
                               {"num_cores", "num_spans", "cut_core", "cut_channel", "record_all_cores", "fiber",
                                "amplifier", "mdl_element", "step", "wdm"})) {
    LinkConfig& L = s.link;
    r.read(l, "link", "num_cores", L.num_cores);
    r.read(l, "link", "num_spans", L.num_spans);
    r.read(l, "link", "cut_core", L.cut_core);
    r.read(l, "link", "cut_channel", L.cut_channel);
    r.read(l, "link", "record_all_cores", L.record_all_cores);
    const std::string fp = "link.fiber";
    if (const Json* f = r.object(*l, "link", "fiber",
                                 {"span_length_km", "attenuation_db_per_km", "dispersion_ps_per_nm_km", "gamma_per_w_km",
                                  "smd_ps_per_sqrt_km", "waveplate_length_km"})) {
      r.read(f, fp, "span_length_km", L.fiber.span_length_km);
      r.read(f, fp, "attenuation_db_per_km", L.fiber.attenuation_db_per_km);
      r.read(f, fp, "dispersion_ps_per_nm_km", L.fiber.dispersion_ps_per_nm_km);
      r.read(f, fp, "gamma_per_w_km", L.fiber.gamma_per_w_km);
      r.read(f, fp, "smd_ps_per_sqrt_km", L.fiber.smd_ps_per_sqrt_km);
      r.read(f, fp, "waveplate_length_km", L.fiber.waveplate_length_km);
    }
    const std::string ap = "link.amplifier";
    if (const Json* a = r.object(*l, "link", "amplifier", {"gain_db", "noise_figure_db", "ase_enabled"})) {
      r.read(a, ap, "gain_db", L.amplifier.gain_db);
      r.read(a, ap, "noise_figure_db", L.amplifier.noise_figure_db);
      r.read(a, ap, "ase_enabled", L.amplifier.ase_enabled);
    }
    const std::string ep = "link.mdl_element";
    if (const Json* e = r.object(*l, "link", "mdl_element", {"peak_to_peak_db", "sigma_g_neper"})) {
      r.read(e, ep, "peak_to_peak_db", L.element.peak_to_peak_db);
      r.read(e, ep, "sigma_g_neper", L.element.sigma_g);
    }
    const std::string sp = "link.step";
    if (const Json* st = r.object(*l, "link", "step", {"initial_step_km", "local_error_target", "min_step_km"})) {
      r.read(st, sp, "initial_step_km", L.step.initial_step_km);
      r.read(st, sp, "local_error_target", L.step.local_error_target);
      r.read(st, sp, "min_step_km", L.step.min_step_km);
    }
    const std::string wp = "link.wdm";
    if (const Json* w = r.object(*l, "link", "wdm",
                                 {"num_channels", "symbol_rate_baud", "spacing_hz", "symbols_per_block",
                                  "power_per_channel_dbm", "rolloff", "samples_per_symbol"})) {
      std::int64_t symbols = L.wdm.symbols_per_block;
      r.read(w, wp, "num_channels", L.wdm.num_channels);
      r.read(w, wp, "symbol_rate_baud", L.wdm.symbol_rate_baud);
      r.read(w, wp, "spacing_hz", L.wdm.spacing_hz);
      r.read(w, wp, "symbols_per_block", symbols);
      r.read(w, wp, "power_per_channel_dbm", L.wdm.power_per_channel_dbm);
      r.read(w, wp, "rolloff", L.wdm.rolloff);
      r.read(w, wp, "samples_per_symbol", L.wdm.samples_per_symbol);
      L.wdm.symbols_per_block = static_cast<Eigen::Index>(symbols);
    }
  }
  if (const Json* sw = r.object(j, "", "sweep", {"variable", "values", "power_per_channel_dbm"})) {
    r.read(sw, "sweep", "variable", s.sweep.variable);
    r.read(sw, "sweep", "values", s.sweep.values);
    r.read(sw, "sweep", "power_per_channel_dbm", s.sweep.power_dbm);
  }
  if (!r.errors.empty()) throw ConfigError(with_errors("scenario schema violations:", r.errors));
  s.validate();
  return s;
}

std::string serialize_scenario(const Scenario& s) { return scenario_to_json(s).dump(2) + "\n"; }

namespace {

Json parse_json_text(const std::string& text, const std::string& source) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    std::string msg = e.what();
    if (const auto pos = msg.find("syntax error"); pos != std::string::npos) msg = msg.substr(pos);
    throw ConfigError(source + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + msg);
  }
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

Scenario parse_scenario(const std::string& text, const std::string& source) {
  const Json j = parse_json_text(text, source);
  try {
    return scenario_from_json(j);
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
}

Scenario load_scenario(const std::string& path_or_preset) {
  const fs::path p(path_or_preset);
  if (!fs::exists(p)) {
    const auto names = preset_names();
    if (std::find(names.begin(), names.end(), path_or_preset) != names.end()) return preset(path_or_preset);
    throw ConfigError("no scenario file or preset named '" + path_or_preset + "'");
  }
  const std::string text = read_text(p);
  const Json j = parse_json_text(text, p.string());
  if (j.is_object() && j.contains("scenario") && j.contains("code_version")) {
    try {
      return manifest_from_json(j).scenario;
    } catch (const ConfigError& e) {
      throw ConfigError(p.string() + ": " + e.what());
    }
  }
  try {
    return scenario_from_json(j);
  } catch (const ConfigError& e) {
    throw ConfigError(p.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

namespace {

Scenario matrix_preset(const std::string& name, int modes, double sigma_g) {
  Scenario s;
  s.name = name;
  s.kind = ScenarioKind::MdlMatrix;
  s.matrix = {modes, 256, sigma_g};
  s.num_realizations = 10000;
  return s;
}

Scenario link_preset(const std::string& name) {
  Scenario s;
  s.name = name;
  s.kind = ScenarioKind::Link;
  s.link.element.peak_to_peak_db = 1.0;
  s.tags = {ScenarioTag::Ase, ScenarioTag::Nli, ScenarioTag::Both};
  s.num_realizations = 500;
  return s;
}

Scenario channel_count_preset(const std::string& name, double smd) {
  Scenario s = link_preset(name);
  s.tags = {ScenarioTag::Nli};
  s.link.fiber.smd_ps_per_sqrt_km = smd;
  s.link.wdm.samples_per_symbol = 32;
  s.sweep = {SweepVariable::NumChannels, {1, 5, 21}, {5.5, 5.0, 4.6}};
  return s;
}

Scenario full_preset(const std::string& name) {
  if (name == "fig1_smf") return matrix_preset(name, 2, 0.0076);
  if (name == "fig1_mcf") return matrix_preset(name, 8, 0.014);
  Scenario s = link_preset(name);
  if (name == "fig3a_link") return s;
  if (name == "fig3b_smf") {
    s.link.num_cores = 1;
    s.link.element.peak_to_peak_db = 0.5;
    s.link.wdm.power_per_channel_dbm = 3.0;
    return s;
  }
  if (name == "fig6") {
    s.tags = {ScenarioTag::Ase, ScenarioTag::Nli};
    s.link.record_all_cores = true;
    return s;
  }
  if (name == "fig7") {
    s.sweep = {SweepVariable::SmdCoeff, {0, 2, 4, 6, 8, 10, 12}, {}};
    return s;
  }
  if (name == "fig8") {
    s.sweep = {SweepVariable::SmdCoeff, {0, 2, 8}, {}};
    return s;
  }
  if (name == "fig9_smd0") return channel_count_preset(name, 0.0);
  if (name == "fig9_smd8") return channel_count_preset(name, 8.0);
  if (name == "fig10") {
    s.link.fiber.smd_ps_per_sqrt_km = 2.0;
    s.sweep = {SweepVariable::MdlPeakToPeak, {0, 1, 2, 3}, {}};
    return s;
  }
  throw ConfigError("unknown preset '" + name + "'");
}

const std::vector<std::string> kFullPresets{"fig1_smf", "fig1_mcf", "fig3a_link", "fig3b_smf", "fig6",
                                            "fig7",     "fig8",     "fig9_smd0",  "fig9_smd8", "fig10"};

}  // namespace

std::vector<std::string> preset_names() {
  std::vector<std::string> names = kFullPresets;
  for (const auto& n : kFullPresets) names.push_back(n + "_desk");
  return names;
}

Scenario preset(const std::string& name) {
  const std::string suffix = "_desk";
  const bool desk = name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
  if (!desk) return full_preset(name);
  Scenario s = full_preset(name.substr(0, name.size() - suffix.size()));
  s.name = name;
  s.num_realizations = 100;
  if (s.kind == ScenarioKind::Link) {
    s.link.num_spans = 2;
    s.link.wdm.num_channels = 3;
    s.link.wdm.symbols_per_block = 8192;
    s.link.wdm.samples_per_symbol = 8;
    if (s.sweep.variable == SweepVariable::NumChannels) s.sweep.values = {1, 3, 5};
  }
  return s;
}

// ---------------------------------------------------------------------------
// Archive
// ---------------------------------------------------------------------------

namespace {

constexpr char kArchiveMagic[8] = {'C', 'C', 'M', 'C', 'F', 'A', 'R', '1'};

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw NumericalError("truncated archive");
  return v;
}

}  // namespace

void write_archive(const fs::path& path, const MatrixArchive& a) {
  static_assert(std::endian::native == std::endian::little, "archive format is little-endian");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw NumericalError("cannot write " + path.string());
  os.write(kArchiveMagic, sizeof kArchiveMagic);
  put<std::uint64_t>(os, a.real.size() + a.complex.size());
  auto header = [&](const std::string& name, std::uint8_t kind, Eigen::Index rows, Eigen::Index cols) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint8_t>(os, kind);
    put<std::uint64_t>(os, static_cast<std::uint64_t>(rows));
    put<std::uint64_t>(os, static_cast<std::uint64_t>(cols));
  };
  for (const auto& [name, m] : a.real) {
    header(name, 0, m.rows(), m.cols());
    os.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  }
  for (const auto& [name, m] : a.complex) {
    header(name, 1, m.rows(), m.cols());
    os.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(Complex)));
  }
  if (!os) throw NumericalError("write failed: " + path.string());
}

MatrixArchive read_archive(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw NumericalError("cannot open " + path.string());
  char magic[8];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kArchiveMagic, sizeof magic) != 0)
    throw NumericalError(path.string() + " is not a matrix archive");
  MatrixArchive a;
  const auto n = get<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto len = get<std::uint32_t>(is);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw NumericalError("truncated archive");
    const auto kind = get<std::uint8_t>(is);
    const auto rows = static_cast<Eigen::Index>(get<std::uint64_t>(is));
    const auto cols = static_cast<Eigen::Index>(get<std::uint64_t>(is));
    if (kind == 0) {
      Eigen::MatrixXd m(rows, cols);
      if (!is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double))))
        throw NumericalError("truncated archive");
      a.real.emplace(name, std::move(m));
    } else if (kind == 1) {
      CMatrix m(rows, cols);
      if (!is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(Complex))))
        throw NumericalError("truncated archive");
      a.complex.emplace(name, std::move(m));
    } else {
      throw NumericalError("unknown matrix kind in archive");
    }
  }
  return a;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

Json manifest_to_json(const RunManifest& m) {
  Json failures = Json::array();
  for (const auto& f : m.failures)
    failures.push_back({{"realization_id", f.realization_id}, {"sweep_value", f.sweep_value}, {"message", f.message}});
  Json j;
  j["code_version"] = m.code_version;
  j["status"] = m.status;
  j["master_seed"] = m.scenario.master_seed;
  j["workers"] = m.workers;
  j["started_utc"] = m.started_utc;
  j["finished_utc"] = m.finished_utc;
  j["wall_seconds"] = m.wall_seconds;
  j["jobs"] = m.jobs;
  j["binning"] = m.scenario.binning.fixed_width ? "fixed width" : "freedman-diaconis";
  j["files"] = m.files;
  j["histogram_files"] = m.histogram_files;
  j["failures"] = failures;
  j["scenario"] = scenario_to_json(m.scenario);
  return j;
}

RunManifest manifest_from_json(const Json& j) {
  if (!j.is_object() || j.empty()) throw ConfigError("empty manifest");
  if (!j.contains("scenario")) throw ConfigError("manifest has no scenario");
  RunManifest m;
  m.scenario = scenario_from_json(j.at("scenario"));
  try {
    m.code_version = j.value("code_version", "");
    m.status = j.value("status", "");
    m.workers = j.value("workers", 1u);
    m.started_utc = j.value("started_utc", "");
    m.finished_utc = j.value("finished_utc", "");
    m.wall_seconds = j.value("wall_seconds", 0.0);
    m.jobs = j.value("jobs", std::uint64_t{0});
    if (j.contains("files")) m.files = j.at("files").get<std::map<std::string, std::string>>();
    if (j.contains("histogram_files")) m.histogram_files = j.at("histogram_files").get<std::vector<std::string>>();
    if (j.contains("failures"))
      for (const auto& f : j.at("failures"))
        m.failures.push_back({f.at("realization_id").get<std::uint64_t>(), f.at("sweep_value").get<double>(),
                              f.at("message").get<std::string>()});
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

// ---------------------------------------------------------------------------
// Tables
// ---------------------------------------------------------------------------

std::string sweep_column(SweepVariable v) {
  switch (v) {
    case SweepVariable::None: return "sweep_value_none";
    case SweepVariable::SmdCoeff: return "smd_ps_per_sqrt_km";
    case SweepVariable::MdlPeakToPeak: return "mdl_element_pp_dB";
    case SweepVariable::NumChannels: return "num_channels_count";
  }
  return "sweep_value_none";
}

namespace {

constexpr const char* kRecordColumns[] = {"realization_id_index", "tag", "", "core_index", "P_x_W", "P_y_W",
                                          "N_x_W",                "N_y_W", "snr_dB", "snr_x_dB", "snr_y_dB"};

std::string num(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

double parse_num(const std::string& s) {
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  std::size_t pos = 0;
  const double v = std::stod(s, &pos);
  if (pos != s.size()) throw std::invalid_argument(s);
  return v;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p);
  if (!os) throw NumericalError("cannot write " + p.string());
  return os;
}

std::string sweep_label(double v) {
  std::ostringstream os;
  os << v;
  std::string s = os.str();
  for (auto& c : s)
    if (c == '.') c = 'p';
  return s;
}

void write_histogram_csv(const fs::path& p, const Histogram& h) {
  std::ofstream os = open_out(p);
  if (!h.warning.empty()) os << "# " << h.warning << "\n";
  os << "bin_center_dB,bin_lo_dB,bin_hi_dB,density_per_dB,count\n";
  for (std::size_t i = 0; i < h.bins(); ++i)
    os << num(h.center(i)) << ',' << num(h.edges[i]) << ',' << num(h.edges[i + 1]) << ',' << num(h.density[i]) << ','
       << h.counts[i] << "\n";
}

void write_summary_csv(const fs::path& p, const EnsembleSummary& sum, const Scenario& s) {
  std::ofstream os = open_out(p);
  if (sum.mdl_db) {
    os << "realizations_count,mean_mdl_pp_dB,std_mdl_pp_dB,skewness_1\n";
    os << sum.mdl_db->count << ',' << num(sum.mdl_db->mean) << ',' << num(sum.mdl_db->std) << ','
       << num(sum.mdl_db->skewness) << "\n";
    return;
  }
  os << "tag," << sweep_column(s.sweep.variable)
     << ",records_count,mean_snr_dB,std_snr_dB,mean_ci_lo_dB,mean_ci_hi_dB,std_ci_lo_dB,std_ci_hi_dB,"
        "skewness_1,std_delta_snr_dB,corr_xy_1,pooled_best_mean_dB,pooled_worst_mean_dB\n";
  for (const auto& g : sum.groups) {
    os << to_string(g.tag) << ',' << num(g.sweep_value) << ',' << g.snr.count << ',' << num(g.snr.mean) << ','
       << num(g.snr.std) << ',' << num(g.mean_ci.lo) << ',' << num(g.mean_ci.hi) << ',' << num(g.std_ci.lo) << ','
       << num(g.std_ci.hi) << ',' << num(g.snr.skewness) << ',' << num(g.delta.std) << ',' << num(g.corr_xy) << ','
       << (g.pooled_best_mean ? num(*g.pooled_best_mean) : "") << ','
       << (g.pooled_worst_mean ? num(*g.pooled_worst_mean) : "") << "\n";
  }
}

/// Rows: tags. Columns: (mean, std, CI) per sweep point.
void write_sweep_wide_csv(const fs::path& p, const std::vector<SweepRow>& rows, const Scenario& s) {
  std::vector<double> points = s.sweep.points();
  std::sort(points.begin(), points.end());
  std::ofstream os = open_out(p);
  os << "tag";
  const std::string unit = sweep_column(s.sweep.variable);
  for (double v : points) {
    const std::string at = "@" + num(v) + "_" + unit;
    os << ",mean_snr_dB" << at << ",std_snr_dB" << at << ",mean_ci_lo_dB" << at << ",mean_ci_hi_dB" << at
       << ",std_ci_lo_dB" << at << ",std_ci_hi_dB" << at;
  }
  os << "\n";
  std::vector<ScenarioTag> tags;
  for (const auto& r : rows)
    if (std::find(tags.begin(), tags.end(), r.tag) == tags.end()) tags.push_back(r.tag);
  for (auto t : tags) {
    os << to_string(t);
    for (double v : points) {
      const auto it = std::find_if(rows.begin(), rows.end(), [&](const SweepRow& r) { return r.tag == t && r.sweep_value == v; });
      if (it == rows.end()) {
        os << ",,,,,,";
        continue;
      }
      os << ',' << num(it->mean_db) << ',' << num(it->std_db) << ',' << num(it->mean_ci.lo) << ',' << num(it->mean_ci.hi)
         << ',' << num(it->std_ci.lo) << ',' << num(it->std_ci.hi);
    }
    os << "\n";
  }
}

void write_sweep_long_csv(const fs::path& p, const std::vector<SweepRow>& rows, const Scenario& s) {
  std::ofstream os = open_out(p);
  os << "tag," << sweep_column(s.sweep.variable)
     << ",records_count,mean_snr_dB,std_snr_dB,mean_ci_lo_dB,mean_ci_hi_dB,std_ci_lo_dB,std_ci_hi_dB,skewness_1\n";
  for (const auto& r : rows)
    os << to_string(r.tag) << ',' << num(r.sweep_value) << ',' << r.count << ',' << num(r.mean_db) << ','
       << num(r.std_db) << ',' << num(r.mean_ci.lo) << ',' << num(r.mean_ci.hi) << ',' << num(r.std_ci.lo) << ','
       << num(r.std_ci.hi) << ',' << num(r.skewness) << "\n";
}

/// Histogram and sweep tables for a summarized ensemble; returns file names relative to `dir`.
std::vector<std::string> write_tables(const fs::path& dir, const EnsembleSummary& sum, const Scenario& s) {
  std::vector<std::string> files;
  if (sum.order_stats) {
    write_histogram_csv(dir / "mixture.csv", sum.order_stats->mixture);
    files.emplace_back("mixture.csv");
    for (std::size_t i = 0; i < sum.order_stats->marginals.size(); ++i) {
      const std::string f = "marginal_" + std::to_string(i + 1) + ".csv";
      write_histogram_csv(dir / f, sum.order_stats->marginals[i]);
      files.push_back(f);
    }
  }
  for (const auto& g : sum.groups) {
    if (!g.delta_pdf) continue;
    std::string f = "pdf_delta_snr_" + to_string(g.tag);
    if (s.sweep.variable != SweepVariable::None) f += "_" + sweep_label(g.sweep_value);
    f += ".csv";
    write_histogram_csv(dir / f, *g.delta_pdf);
    files.push_back(f);
  }
  if (s.kind == ScenarioKind::Link && s.sweep.variable != SweepVariable::None && !sum.records.empty()) {
    const auto rows = sweep_summary(sum.records, s.master_seed, s.link.cut_core);
    write_sweep_long_csv(dir / "sweep.csv", rows, s);
    write_sweep_wide_csv(dir / "sweep_wide.csv", rows, s);
    files.emplace_back("sweep.csv");
    files.emplace_back("sweep_wide.csv");
  }
  return files;
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_manifest(const fs::path& dir, const RunManifest& m) {
  std::ofstream os = open_out(dir / kManifestFile);
  os << manifest_to_json(m).dump(2) << "\n";
}

}  // namespace

void write_records_csv(const fs::path& path, const std::vector<SnrRecord>& records, SweepVariable v) {
  std::ofstream os = open_out(path);
  for (std::size_t i = 0; i < std::size(kRecordColumns); ++i)
    os << (i ? "," : "") << (i == 2 ? sweep_column(v) : kRecordColumns[i]);
  os << "\n";
  for (const auto& r : records)
    os << r.realization_id << ',' << to_string(r.tag) << ',' << num(r.sweep_value) << ',' << r.core << ',' << num(r.P_x)
       << ',' << num(r.P_y) << ',' << num(r.N_x) << ',' << num(r.N_y) << ',' << num(r.snr_db) << ','
       << num(r.snr_x_db) << ',' << num(r.snr_y_db) << "\n";
}

std::vector<SnrRecord> read_records_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(path.string() + ": empty records file");
  if (split_csv(line).size() != std::size(kRecordColumns)) throw ConfigError(path.string() + ": unexpected header");
  std::vector<SnrRecord> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_csv(line);
    try {
      if (f.size() != std::size(kRecordColumns)) throw std::invalid_argument("column count");
      SnrRecord r;
      r.realization_id = std::stoull(f[0]);
      r.tag = parse_scenario_tag(f[1]);
      r.sweep_value = parse_num(f[2]);
      r.core = std::stoi(f[3]);
      r.P_x = parse_num(f[4]);
      r.P_y = parse_num(f[5]);
      r.N_x = parse_num(f[6]);
      r.N_y = parse_num(f[7]);
      r.snr_db = parse_num(f[8]);
      r.snr_x_db = parse_num(f[9]);
      r.snr_y_db = parse_num(f[10]);
      out.push_back(r);
    } catch (const std::exception& e) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": malformed record (" + e.what() + ")");
    }
  }
  return out;
}

RunManifest run(const Scenario& scenario, const fs::path& out_dir, unsigned workers, const ProgressCallback& progress) {
  scenario.validate();
  fs::create_directories(out_dir);
  RunManifest m;
  m.scenario = scenario;
  m.code_version = code_version();
  m.status = "running";
  m.workers = workers;
  m.started_utc = utc_now();
  m.jobs = scenario.sweep.points().size() * scenario.num_realizations;
  write_manifest(out_dir, m);

  const auto t0 = std::chrono::steady_clock::now();
  EnsembleSummary sum;
  try {
    sum = run_ensemble(scenario, workers, progress);
  } catch (const EnsembleError& e) {
    m.status = "failed";
    m.failures = e.failures;
    write_manifest(out_dir, m);
    throw;
  }
  m.failures = sum.failures;

  if (!sum.records.empty()) {
    write_records_csv(out_dir / "records.csv", sum.records, scenario.sweep.variable);
    m.files["records"] = "records.csv";
  }
  if (!sum.spectra.empty()) {
    Eigen::MatrixXd g(static_cast<Eigen::Index>(sum.spectra.size()), sum.spectra.front().g_sorted.size());
    for (std::size_t i = 0; i < sum.spectra.size(); ++i) g.row(static_cast<Eigen::Index>(i)) = sum.spectra[i].g_sorted.transpose();
    MatrixArchive a;
    a.real.emplace("g_sorted_neper", std::move(g));
    write_archive(out_dir / "spectra.bin", a);
    m.files["spectra"] = "spectra.bin";
  }
  write_summary_csv(out_dir / "summary.csv", sum, scenario);
  m.files["summary"] = "summary.csv";
  m.histogram_files = write_tables(out_dir, sum, scenario);

  m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  m.finished_utc = utc_now();
  m.status = "complete";
  write_manifest(out_dir, m);
  return m;
}

ReportResult report(const fs::path& manifest_path, std::ostream& out) {
  const fs::path mp = fs::is_directory(manifest_path) ? manifest_path / kManifestFile : manifest_path;
  const std::string text = read_text(mp);
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) throw ConfigError(mp.string() + ": empty manifest");
  const RunManifest m = manifest_from_json(parse_json_text(text, mp.string()));
  const fs::path dir = mp.parent_path();
  const Scenario& s = m.scenario;

  ReportResult res;
  res.partial = !m.complete();
  EnsembleSummary sum;
  sum.scenario_name = s.name;
  sum.requested_realizations = s.num_realizations;
  sum.failures = m.failures;
  if (m.files.count("records") && fs::exists(dir / m.files.at("records")))
    sum.records = read_records_csv(dir / m.files.at("records"));
  if (m.files.count("spectra") && fs::exists(dir / m.files.at("spectra"))) {
    const MatrixArchive a = read_archive(dir / m.files.at("spectra"));
    const auto it = a.real.find("g_sorted_neper");
    if (it == a.real.end()) throw ConfigError("spectra archive lacks g_sorted_neper");
    for (Eigen::Index i = 0; i < it->second.rows(); ++i) sum.spectra.push_back({it->second.row(i).transpose()});
  }

  out << "scenario: " << s.name << " (" << to_string(s.kind);
  if (s.kind == ScenarioKind::Link) out << ", engine " << to_string(s.engine);
  out << ")\n";
  out << "code version: " << m.code_version << ", master seed " << s.master_seed << ", workers " << m.workers << "\n";
  if (res.partial) out << "PARTIAL REPORT: run status is '" << m.status << "', results below cover completed work only\n";
  if (!m.failures.empty()) out << "failed realizations: " << m.failures.size() << "\n";
  if (sum.records.empty() && sum.spectra.empty()) {
    if (!res.partial) throw ConfigError(mp.string() + ": manifest references no results");
    out << "no results yet\n";
    return res;
  }

  summarize(sum, s);
  const fs::path rdir = dir / "report";
  fs::create_directories(rdir);
  write_summary_csv(rdir / "summary.csv", sum, s);
  res.tables.push_back(rdir / "summary.csv");
  for (const auto& f : write_tables(rdir, sum, s)) res.tables.push_back(rdir / f);

  out << std::fixed << std::setprecision(3);
  if (sum.mdl_db) {
    out << "realizations: " << sum.spectra.size() << "\n";
    out << "peak-to-peak MDL: mean " << sum.mdl_db->mean << " dB, std " << sum.mdl_db->std << " dB\n";
    if (sum.order_stats) out << "order statistics: 1 mixture table, " << sum.order_stats->marginals.size() << " marginal tables\n";
  }
  if (!sum.groups.empty()) {
    out << "records: " << sum.records.size() << " (core " << s.link.cut_core << " statistics)\n";
    out << "tag   " << std::setw(22) << sweep_column(s.sweep.variable)
        << "     n   mean_dB    std_dB   mean 95% CI          skew   corr_xy\n";
    for (const auto& g : sum.groups) {
      out << std::left << std::setw(6) << to_string(g.tag) << std::right << std::setw(22) << g.sweep_value
          << std::setw(6) << g.snr.count << std::setw(10) << g.snr.mean << std::setw(10) << g.snr.std << "   ["
          << g.mean_ci.lo << ", " << g.mean_ci.hi << "]" << std::setw(8) << g.snr.skewness << std::setw(10) << g.corr_xy
          << "\n";
    }
  }
  out << "tables written to " << rdir.string() << " (" << res.tables.size() << " files)\n";
  return res;
}

// ---------------------------------------------------------------------------
// Step calibration
// ---------------------------------------------------------------------------

CalibrationResult calibrate_step(const Scenario& scenario, double start_target, int seeds, double tolerance_db,
                                 int max_halvings, unsigned workers, std::ostream* log) {
  if (scenario.kind != ScenarioKind::Link) throw ConfigError("step calibration needs a link scenario");
  if (!(start_target > 0.0) || seeds < 1 || !(tolerance_db > 0.0)) throw ConfigError("invalid calibration settings");
  Scenario s = scenario;
  s.engine = Engine::Ssfm;
  s.link.num_spans = 1;
  s.tags = {ScenarioTag::Nli};
  s.sweep = SweepSpec{};
  s.num_realizations = static_cast<std::uint64_t>(seeds);
  s.link.record_all_cores = false;

  CalibrationResult res;
  double target = start_target;
  for (int k = 0; k <= max_halvings; ++k, target *= 0.5) {
    s.link.step.local_error_target = target;
    const EnsembleSummary sum = run_ensemble(s, workers);
    CalibrationRow row;
    row.local_error_target = target;
    for (const auto& r : sum.records) row.snr_db.push_back(r.snr_db);
    row.max_change_db = std::numeric_limits<double>::infinity();
    if (!res.rows.empty()) {
      row.max_change_db = 0.0;
      const auto& prev = res.rows.back().snr_db;
      for (std::size_t i = 0; i < row.snr_db.size() && i < prev.size(); ++i)
        row.max_change_db = std::max(row.max_change_db, std::abs(row.snr_db[i] - prev[i]));
    }
    if (log) {
      *log << "local_error_target " << std::scientific << std::setprecision(3) << target << std::fixed
           << "  mean SNR_NLI " << sample_mean(row.snr_db) << " dB  max change " << row.max_change_db << " dB\n";
    }
    res.rows.push_back(row);
    if (row.max_change_db < tolerance_db) {
      res.converged = true;
      res.chosen_target = res.rows[res.rows.size() - 2].local_error_target;
      return res;
    }
  }
  res.chosen_target = target * 2.0;
  return res;
}

}  // namespace ccmcf
