// sivsim command-line driver: seeded simulation and inference pipelines
// emitting reproducible CSV/JSON/PGM artifacts.
#include <sivsim/inference.hpp>
#include <sivsim/patterning.hpp>
#include <sivsim/photonics.hpp>
#include <sivsim/rng.hpp>
#include <sivsim/transport.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr const char* kVersion = "0.1.0";

struct RunConfig {
  std::uint64_t seed = 1;
  // beam
  double energy_kev = 30.0;
  double current_pa = 0.4;
  double incidence_deg = 0.0;
  // transport
  std::uint64_t n_ions = 10000;
  sivsim::transport::TargetMaterial target =
      sivsim::transport::TargetMaterial::sic_4h();
  // pattern
  int rows = 10, cols = 10;
  double pitch_um = 3.0;
  // doses / yields
  std::vector<double> doses = {100, 80, 60, 40, 20};
  std::vector<double> etas = {0.0695};  // scalar or aligned with doses
  // optics
  double psf_fwhm_um = 0.5;
  double background_kcps = 2.0;
  double power_mw = 0.5;
  double pixel_pitch_um = 0.1;
  double dwell_ms = 5.0;
  // emitter
  sivsim::photonics::EmitterModel emitter;
  // hbt
  double hbt_duration_s = 100.0;
  int hbt_n_emitters = 1;
  double hbt_s_kcps = 6.0;
  double hbt_b_kcps = 2.0;
  double hbt_bin_ns = 10.0;
  double hbt_max_lag_ns = 3000.0;

  std::string out_dir = "out";
  std::uint64_t config_hash = 0;

  double eta_for(std::size_t dose_index) const {
    if (etas.size() == 1) return etas[0];
    return etas.at(dose_index);
  }
};

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  json j;
  in >> j;
  if (j.value("schema_version", 1) != 1)
    throw std::runtime_error("unsupported config schema_version");

  RunConfig c;
  c.seed = j.value("seed", c.seed);
  if (j.contains("beam")) {
    const auto& b = j["beam"];
    c.energy_kev = b.value("energy_kev", c.energy_kev);
    c.current_pa = b.value("current_pa", c.current_pa);
    c.incidence_deg = b.value("incidence_deg", c.incidence_deg);
  }
  if (j.contains("transport"))
    c.n_ions = j["transport"].value("n_ions", c.n_ions);
  if (j.contains("target") && j["target"].is_object()) {
    const auto& t = j["target"];
    sivsim::transport::TargetMaterial m;
    m.mass_density_g_cm3 = t.at("mass_density_g_cm3").get<double>();
    for (const auto& comp : t.at("components")) {
      m.components.push_back({comp.at("z").get<int>(),
                              comp.at("mass_amu").get<double>(),
                              comp.at("fraction").get<double>(),
                              comp.at("displacement_ev").get<double>(),
                              comp.value("surface_binding_ev", 0.0)});
    }
    c.target = m;
  }
  if (j.contains("pattern")) {
    const auto& p = j["pattern"];
    c.rows = p.value("rows", c.rows);
    c.cols = p.value("cols", c.cols);
    c.pitch_um = p.value("pitch_um", c.pitch_um);
  }
  if (j.contains("doses")) c.doses = j["doses"].get<std::vector<double>>();
  if (j.contains("eta")) {
    if (j["eta"].is_array())
      c.etas = j["eta"].get<std::vector<double>>();
    else
      c.etas = {j["eta"].get<double>()};
  }
  if (j.contains("optics")) {
    const auto& o = j["optics"];
    c.psf_fwhm_um = o.value("psf_fwhm_um", c.psf_fwhm_um);
    c.background_kcps = o.value("background_kcps", c.background_kcps);
    c.power_mw = o.value("power_mw", c.power_mw);
    c.pixel_pitch_um = o.value("pixel_pitch_um", c.pixel_pitch_um);
    c.dwell_ms = o.value("dwell_ms", c.dwell_ms);
  }
  if (j.contains("emitter")) {
    const auto& e = j["emitter"];
    c.emitter.i_s_kcps = e.value("i_s_kcps", c.emitter.i_s_kcps);
    c.emitter.p_s_mw = e.value("p_s_mw", c.emitter.p_s_mw);
    c.emitter.a = e.value("a", c.emitter.a);
    c.emitter.b = e.value("b", c.emitter.b);
    c.emitter.tau1_ns = e.value("tau1_ns", c.emitter.tau1_ns);
    c.emitter.tau2_ns = e.value("tau2_ns", c.emitter.tau2_ns);
  }
  if (j.contains("hbt")) {
    const auto& h = j["hbt"];
    c.hbt_duration_s = h.value("duration_s", c.hbt_duration_s);
    c.hbt_n_emitters = h.value("n_emitters", c.hbt_n_emitters);
    c.hbt_s_kcps = h.value("s_kcps", c.hbt_s_kcps);
    c.hbt_b_kcps = h.value("b_kcps", c.hbt_b_kcps);
    c.hbt_bin_ns = h.value("bin_ns", c.hbt_bin_ns);
    c.hbt_max_lag_ns = h.value("max_lag_ns", c.hbt_max_lag_ns);
  }
  c.out_dir = j.value("out_dir", c.out_dir);
  c.config_hash = sivsim::rng::hash_path(j.dump());
  return c;
}

ordered_json provenance(const RunConfig& c) {
  char hash[32];
  std::snprintf(hash, sizeof hash, "0x%016llx",
                static_cast<unsigned long long>(c.config_hash));
  return {{"config_hash", hash}, {"seed", c.seed}, {"version", kVersion}};
}

void write_file(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string dose_tag(double dose) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", dose);
  return buf;
}

// ---- subcommand bodies ----------------------------------------------------

int cmd_simulate_transport(const RunConfig& c) {
  sivsim::transport::IonBeamSpec beam{2, 4.0026, c.energy_kev, c.incidence_deg};
  const auto profile = sivsim::transport::simulate_profile(
      beam, c.target, c.n_ions, c.seed);
  write_file(fs::path(c.out_dir) / "profile.csv", profile.to_csv());
  auto j = ordered_json::parse(profile.summary_json());
  j["provenance"] = provenance(c);
  write_file(fs::path(c.out_dir) / "transport_summary.json", j.dump(2) + "\n");
  std::cout << "transport: mean depth " << profile.mean_depth_nm
            << " nm, straggle " << profile.long_straggle_nm << " nm ("
            << c.n_ions << " ions)\n";
  return 0;
}

int cmd_simulate_array(const RunConfig& c) {
  if (c.doses.empty()) throw CLI::ValidationError("dose list is empty");
  if (c.etas.size() != 1 && c.etas.size() != c.doses.size())
    throw std::runtime_error("eta must be scalar or aligned with doses");

  sivsim::transport::IonBeamSpec beam{2, 4.0026, c.energy_kev, c.incidence_deg};
  const auto profile = sivsim::transport::simulate_profile(
      beam, c.target, c.n_ions, c.seed);
  const auto pattern =
      sivsim::patterning::build_pattern(c.rows, c.cols, c.pitch_um);

  const double margin_um = 2.0;
  sivsim::photonics::PixelSpec px;
  px.pitch_um = c.pixel_pitch_um;
  px.dwell_s = c.dwell_ms * 1e-3;
  px.origin_x_um = -margin_um;
  px.origin_y_um = -margin_um;
  px.width = static_cast<int>((pattern.width_um() + 2 * margin_um) /
                              c.pixel_pitch_um) + 1;
  px.height = static_cast<int>((pattern.height_um() + 2 * margin_um) /
                               c.pixel_pitch_um) + 1;

  sivsim::photonics::OpticsSpec optics{c.psf_fwhm_um, c.background_kcps};

  for (std::size_t i = 0; i < c.doses.size(); ++i) {
    const double dose = c.doses[i];
    const auto tag = dose_tag(dose);
    const auto array_seed =
        sivsim::rng::derive_seed(c.seed, "array/dose/" + tag);
    const auto array = sivsim::patterning::sample_defect_array(
        pattern, dose, c.eta_for(i), profile, array_seed);
    write_file(fs::path(c.out_dir) / ("array_dose" + tag + ".json"),
               array.to_json() + "\n");

    const auto img_seed = sivsim::rng::derive_seed(c.seed, "scan/dose/" + tag);
    const auto img = sivsim::photonics::render_scan(
        array, optics, c.power_mw, c.emitter, px, img_seed);
    write_file(fs::path(c.out_dir) / ("scan_dose" + tag + ".pgm"),
               img.to_pgm());
    auto sj = ordered_json::parse(img.sidecar_json());
    sj["dose"] = dose;
    sj["provenance"] = provenance(c);
    write_file(fs::path(c.out_dir) / ("scan_dose" + tag + ".json"),
               sj.dump(2) + "\n");
    std::cout << "array dose " << dose << ": " << array.spots.size()
              << " spots rendered\n";
  }
  return 0;
}

int cmd_simulate_hbt(const RunConfig& c) {
  const auto trace = sivsim::photonics::simulate_photon_trace(
      c.hbt_n_emitters, c.hbt_s_kcps, c.hbt_b_kcps, c.emitter,
      c.hbt_duration_s, sivsim::rng::derive_seed(c.seed, "photon/run"));
  write_file(fs::path(c.out_dir) / "trace.csv", trace.to_csv());
  const auto hist =
      sivsim::photonics::correlate(trace, c.hbt_bin_ns, c.hbt_max_lag_ns);
  write_file(fs::path(c.out_dir) / "g2_hist.csv", hist.to_csv());
  auto j = ordered_json{{"n_emitters", c.hbt_n_emitters},
                        {"signal_kcps", trace.signal_kcps},
                        {"background_kcps", trace.background_kcps},
                        {"duration_s", trace.duration_s},
                        {"n_photons", trace.det1_ns.size() + trace.det2_ns.size()},
                        {"provenance", provenance(c)}};
  write_file(fs::path(c.out_dir) / "hbt_summary.json", j.dump(2) + "\n");
  std::cout << "hbt: " << trace.det1_ns.size() + trace.det2_ns.size()
            << " photons over " << c.hbt_duration_s << " s\n";
  return 0;
}

int cmd_analyze(const RunConfig& c, const std::string& in_dir) {
  if (c.doses.empty()) throw CLI::ValidationError("dose list is empty");
  const auto pattern =
      sivsim::patterning::build_pattern(c.rows, c.cols, c.pitch_um);

  ordered_json per_dose = ordered_json::array();
  std::string table = sivsim::inference::YieldReport::text_header() + "\n";
  for (double dose : c.doses) {
    const auto tag = dose_tag(dose);
    const fs::path pgm = fs::path(in_dir) / ("scan_dose" + tag + ".pgm");
    const fs::path sidecar = fs::path(in_dir) / ("scan_dose" + tag + ".json");
    const auto img = sivsim::photonics::ScanImage::from_pgm(
        read_file(pgm), read_file(sidecar));

    const auto readouts = sivsim::inference::detect_spots(
        img, pattern, img.power_mw, c.psf_fwhm_um);
    std::vector<std::uint64_t> counts;
    counts.reserve(readouts.size());
    for (const auto& r : readouts)
      counts.push_back(static_cast<std::uint64_t>(
          sivsim::inference::classify_spot(std::max(r.intensity_kcps, 0.0))));
    const auto report = sivsim::inference::yield_report(counts, dose);
    per_dose.push_back(ordered_json::parse(report.to_json()));
    table += report.to_text_row() + "\n";
  }

  ordered_json out;
  out["per_dose"] = per_dose;
  out["provenance"] = provenance(c);
  write_file(fs::path(c.out_dir) / "report.json", out.dump(2) + "\n");
  write_file(fs::path(c.out_dir) / "report.txt", table);
  std::cout << table;
  return 0;
}

int cmd_report(const std::vector<std::string>& inputs,
               const std::string& out_dir) {
  if (inputs.empty()) throw CLI::ValidationError("no report inputs");
  ordered_json merged = ordered_json::array();
  for (const auto& path : inputs) {
    const auto j = ordered_json::parse(read_file(path));
    for (const auto& entry : j.at("per_dose")) merged.push_back(entry);
  }
  std::sort(merged.begin(), merged.end(), [](const auto& a, const auto& b) {
    return a.at("dose").template get<double>() >
           b.at("dose").template get<double>();
  });
  std::string table = sivsim::inference::YieldReport::text_header() + "\n";
  for (const auto& e : merged) {
    sivsim::inference::YieldReport r;
    r.dose = e.at("dose").get<double>();
    r.lambda = e.at("lambda").get<double>();
    r.lambda_sigma = e.at("lambda_sigma").get<double>();
    r.eta = e.at("eta").get<double>();
    r.single_rate = e.at("single_rate").get<double>();
    table += r.to_text_row() + "\n";
  }
  ordered_json out{{"per_dose", merged}};
  write_file(fs::path(out_dir) / "combined_report.json", out.dump(2) + "\n");
  write_file(fs::path(out_dir) / "combined_report.txt", table);
  std::cout << table;
  return 0;
}

std::vector<std::pair<double, double>> read_xy_csv(const std::string& path) {
  std::istringstream in(read_file(path));
  std::vector<std::pair<double, double>> out;
  std::string line;
  std::getline(in, line); // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw std::runtime_error("expected two CSV columns: " + line);
    out.emplace_back(std::stod(line.substr(0, comma)),
                     std::stod(line.substr(comma + 1)));
  }
  if (out.empty()) throw std::runtime_error("no data rows in " + path);
  return out;
}

int cmd_fit(const std::string& model, const std::string& data_file,
            double s_kcps, double b_kcps, bool correct) {
  sivsim::inference::FitResult result;
  if (model == "odmr") {
    sivsim::inference::OdmrSpectrum spec;
    for (const auto& [x, y] : read_xy_csv(data_file)) {
      spec.freq_mhz.push_back(x);
      spec.contrast.push_back(y);
    }
    result = sivsim::inference::fit_odmr(spec);
  } else if (model == "saturation") {
    std::vector<double> p, i;
    for (const auto& [x, y] : read_xy_csv(data_file)) {
      p.push_back(x);
      i.push_back(y);
    }
    result = sivsim::inference::fit_saturation(p, i);
  } else if (model == "g2") {
    const auto hist =
        sivsim::photonics::CorrelationHistogram::from_csv(read_file(data_file));
    result = sivsim::inference::fit_g2(hist, s_kcps, b_kcps, correct);
  } else if (model == "poisson") {
    std::istringstream in(read_file(data_file));
    std::vector<std::uint64_t> counts;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || !std::isdigit(static_cast<unsigned char>(line[0])))
        continue;
      counts.push_back(std::stoull(line));
    }
    result = sivsim::inference::fit_poisson(counts);
  } else {
    throw CLI::ValidationError("unknown fit model: " + model);
  }
  std::cout << result.to_json() << "\n";
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Focused-ion-beam vacancy array simulator and analysis toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed_override;
  std::optional<std::string> out_override;
  std::optional<std::uint64_t> ions_override;
  std::vector<double> dose_override;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON run configuration");
    sub->add_option("--seed", seed_override, "master seed override");
    sub->add_option("--out", out_override, "output directory override");
  };

  auto* sim = app.add_subcommand("simulate", "forward simulation");
  sim->require_subcommand(1);
  auto* sim_transport = sim->add_subcommand("transport", "ion transport profile");
  add_common(sim_transport);
  sim_transport->add_option("--ions", ions_override, "number of ion histories");
  auto* sim_array = sim->add_subcommand("array", "defect arrays + scan images");
  add_common(sim_array);
  sim_array->add_option("--dose", dose_override, "dose list override (ions/spot)");
  auto* sim_hbt = sim->add_subcommand("hbt", "photon trace + g2 histogram");
  add_common(sim_hbt);

  std::string fit_model, fit_file;
  double fit_s = 6.0, fit_b = 2.0;
  bool fit_correct = false;
  auto* fit = app.add_subcommand("fit", "model fits (odmr|g2|saturation|poisson)");
  fit->add_option("model", fit_model, "odmr|g2|saturation|poisson")->required();
  fit->add_option("data", fit_file, "input CSV")->required();
  fit->add_option("--signal", fit_s, "signal rate, kcps (g2)");
  fit->add_option("--background", fit_b, "background rate, kcps (g2)");
  fit->add_flag("--correct", fit_correct, "background-correct before fitting (g2)");

  std::string analyze_in;
  auto* analyze = app.add_subcommand("analyze", "classify spots and report yields");
  add_common(analyze);
  analyze->add_option("--in", analyze_in, "directory with scan images");
  analyze->add_option("--dose", dose_override, "dose list override (ions/spot)");

  std::vector<std::string> report_inputs;
  std::string report_out = "out";
  auto* report = app.add_subcommand("report", "merge analyze outputs");
  report->add_option("--in", report_inputs, "report.json inputs")->required();
  report->add_option("--out", report_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) cfg = load_config(config_path);
    if (seed_override) cfg.seed = *seed_override;
    if (out_override) cfg.out_dir = *out_override;
    if (ions_override) cfg.n_ions = *ions_override;
    if (!dose_override.empty()) cfg.doses = dose_override;

    if (sim_transport->parsed()) return cmd_simulate_transport(cfg);
    if (sim_array->parsed()) return cmd_simulate_array(cfg);
    if (sim_hbt->parsed()) return cmd_simulate_hbt(cfg);
    if (fit->parsed())
      return cmd_fit(fit_model, fit_file, fit_s, fit_b, fit_correct);
    if (analyze->parsed())
      return cmd_analyze(cfg, analyze_in.empty() ? cfg.out_dir : analyze_in);
    if (report->parsed()) return cmd_report(report_inputs, report_out);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
