#include <sivsim/photonics.hpp>
#include <sivsim/rng.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace sivsim::photonics {

namespace {

constexpr double kFwhmToSigma = 2.3548200450309493; // 2 sqrt(2 ln 2)

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

} // namespace

void EmitterModel::validate() const {
  if (!(i_s_kcps > 0.0) || !(p_s_mw > 0.0))
    throw std::invalid_argument("saturation parameters must be positive");
  if (!(tau1_ns > 0.0) || !(tau2_ns > 0.0))
    throw std::invalid_argument("time constants must be positive");
  if (a < 0.0 || b < 0.0)
    throw std::invalid_argument("g2 amplitudes must be >= 0");
}

double saturation_intensity(double p_mw, double i_s_kcps, double p_s_mw) {
  if (p_mw < 0.0) throw std::domain_error("power must be >= 0");
  if (p_mw == 0.0) return 0.0;
  return i_s_kcps / (1.0 + p_s_mw / p_mw);
}

double g2_model(double tau_ns, double a, double b, double tau1_ns,
                double tau2_ns) {
  if (!(tau1_ns > 0.0) || !(tau2_ns > 0.0))
    throw std::domain_error("time constants must be positive");
  const double t = std::abs(tau_ns);
  return 1.0 - (1.0 + a) * std::exp(-t / tau1_ns) +
         b * std::exp(-t / tau2_ns);
}

ThreeLevelRates solve_three_level_rates(double c, double tau1_ns,
                                        double tau2_ns) {
  if (!(tau1_ns > 0.0) || !(tau2_ns > 0.0) || c < 0.0)
    throw std::domain_error("bad three-level parameters");
  if (tau2_ns <= tau1_ns)
    throw std::domain_error("tau2 must exceed tau1");
  const double g1 = 1.0 / tau1_ns;
  const double g2 = 1.0 / tau2_ns;
  ThreeLevelRates r;
  r.deshelve = g1 * g2 / (g1 + c * (g1 - g2));
  const double k = g1 + g2 - r.deshelve;
  const double q = (g1 - r.deshelve) * (g2 - r.deshelve);
  r.pump = std::sqrt(q);
  r.shelve = std::sqrt(q);
  r.emit = k - 2.0 * std::sqrt(q);
  r.excited_ss = r.pump * r.deshelve / (g1 * g2);
  return r;
}

ScanImage render_scan(const patterning::DefectArray& array,
                      const OpticsSpec& optics, double power_mw,
                      const EmitterModel& emitter, const PixelSpec& pixels,
                      std::uint64_t seed) {
  emitter.validate();
  if (pixels.width <= 0 || pixels.height <= 0)
    throw std::invalid_argument("image dimensions must be positive");
  if (!(pixels.pitch_um > 0.0) || !(pixels.dwell_s > 0.0))
    throw std::invalid_argument("pixel pitch and dwell must be positive");
  if (optics.background_kcps < 0.0)
    throw std::invalid_argument("background must be >= 0");

  const double sigma_um = optics.psf_fwhm_um / kFwhmToSigma;
  const double peak_kcps =
      saturation_intensity(power_mw, emitter.i_s_kcps, emitter.p_s_mw);

  ScanImage img;
  img.width = pixels.width;
  img.height = pixels.height;
  img.pitch_um = pixels.pitch_um;
  img.dwell_s = pixels.dwell_s;
  img.power_mw = power_mw;
  img.origin_x_um = pixels.origin_x_um;
  img.origin_y_um = pixels.origin_y_um;
  img.seed = seed;

  std::vector<double> rate(static_cast<std::size_t>(pixels.width) *
                               pixels.height,
                           optics.background_kcps);

  // Accumulate each defect into nearby pixels only (5 sigma support).
  const double reach_um = std::max(5.0 * sigma_um, pixels.pitch_um);
  for (const auto& rec : array.spots) {
    for (const auto& d : rec.defects) {
      const double x = rec.spot.x_um + d.dx_nm * 1e-3;
      const double y = rec.spot.y_um + d.dy_nm * 1e-3;
      const double amp = d.brightness * peak_kcps;
      const int ix0 = static_cast<int>(
          std::floor((x - reach_um - pixels.origin_x_um) / pixels.pitch_um));
      const int ix1 = static_cast<int>(
          std::ceil((x + reach_um - pixels.origin_x_um) / pixels.pitch_um));
      const int iy0 = static_cast<int>(
          std::floor((y - reach_um - pixels.origin_y_um) / pixels.pitch_um));
      const int iy1 = static_cast<int>(
          std::ceil((y + reach_um - pixels.origin_y_um) / pixels.pitch_um));
      for (int iy = std::max(iy0, 0); iy <= std::min(iy1, pixels.height - 1);
           ++iy) {
        const double py = pixels.origin_y_um + iy * pixels.pitch_um;
        for (int ix = std::max(ix0, 0); ix <= std::min(ix1, pixels.width - 1);
             ++ix) {
          const double px = pixels.origin_x_um + ix * pixels.pitch_um;
          const double d2 =
              (px - x) * (px - x) + (py - y) * (py - y);
          if (sigma_um > 0.0) {
            rate[static_cast<std::size_t>(iy) * pixels.width + ix] +=
                amp * std::exp(-0.5 * d2 / (sigma_um * sigma_um));
          } else if (d2 == 0.0) {
            rate[static_cast<std::size_t>(iy) * pixels.width + ix] += amp;
          }
        }
      }
      // FWHM -> 0 limit: all signal lands in the nearest pixel
      if (sigma_um == 0.0) {
        const int ix = static_cast<int>(
            std::lround((x - pixels.origin_x_um) / pixels.pitch_um));
        const int iy = static_cast<int>(
            std::lround((y - pixels.origin_y_um) / pixels.pitch_um));
        if (ix >= 0 && ix < pixels.width && iy >= 0 && iy < pixels.height)
          rate[static_cast<std::size_t>(iy) * pixels.width + ix] += amp;
      }
    }
  }

  img.counts.resize(rate.size());
  // per-pixel streams keep the image independent of render order
  for (int iy = 0; iy < pixels.height; ++iy) {
    auto row_stream = rng::derive(seed, "scan/row/" + std::to_string(iy));
    for (int ix = 0; ix < pixels.width; ++ix) {
      const std::size_t i = static_cast<std::size_t>(iy) * pixels.width + ix;
      img.counts[i] = static_cast<std::uint32_t>(
          row_stream.poisson(rate[i] * 1e3 * pixels.dwell_s));
    }
  }
  return img;
}

std::string ScanImage::to_pgm() const {
  std::uint32_t maxval = 1;
  for (auto c : counts) maxval = std::max(maxval, c);
  std::string out = "P2\n" + std::to_string(width) + " " +
                    std::to_string(height) + "\n" + std::to_string(maxval) +
                    "\n";
  for (int iy = 0; iy < height; ++iy) {
    for (int ix = 0; ix < width; ++ix) {
      out += std::to_string(at(ix, iy));
      out += (ix + 1 == width) ? '\n' : ' ';
    }
  }
  return out;
}

std::string ScanImage::sidecar_json() const {
  nlohmann::ordered_json j;
  j["pitch_um"] = pitch_um;
  j["dwell_s"] = dwell_s;
  j["power_mw"] = power_mw;
  j["origin_x_um"] = origin_x_um;
  j["origin_y_um"] = origin_y_um;
  j["seed"] = seed;
  return j.dump(2);
}

ScanImage ScanImage::from_pgm(const std::string& pgm,
                              const std::string& sidecar) {
  std::istringstream in(pgm);
  std::string magic;
  in >> magic;
  if (magic != "P2") throw std::runtime_error("not a plain PGM (P2) image");
  ScanImage img;
  std::uint32_t maxval = 0;
  in >> img.width >> img.height >> maxval;
  if (img.width <= 0 || img.height <= 0)
    throw std::runtime_error("bad PGM dimensions");
  img.counts.resize(static_cast<std::size_t>(img.width) * img.height);
  for (auto& c : img.counts) {
    if (!(in >> c)) throw std::runtime_error("truncated PGM data");
  }
  const auto j = nlohmann::json::parse(sidecar);
  img.pitch_um = j.at("pitch_um").get<double>();
  img.dwell_s = j.at("dwell_s").get<double>();
  img.power_mw = j.at("power_mw").get<double>();
  img.origin_x_um = j.value("origin_x_um", 0.0);
  img.origin_y_um = j.value("origin_y_um", 0.0);
  img.seed = j.value("seed", std::uint64_t{0});
  return img;
}

PhotonTrace simulate_photon_trace(int n_emitters, double s_per_emitter_kcps,
                                  double background_kcps,
                                  const EmitterModel& emitter,
                                  double duration_s, std::uint64_t seed) {
  emitter.validate();
  if (!(duration_s > 0.0)) throw std::invalid_argument("duration must be positive");
  if (n_emitters < 0 || s_per_emitter_kcps < 0.0 || background_kcps < 0.0)
    throw std::invalid_argument("rates must be >= 0");
  if (emitter.b < emitter.a)
    throw std::invalid_argument("g2(0) = b - a must be >= 0");

  const double t_end_ns = duration_s * 1e9;
  const double rho = std::sqrt(1.0 + emitter.a - emitter.b);
  const double c = emitter.b / (1.0 + emitter.a - emitter.b);

  std::vector<double> all;
  all.reserve(static_cast<std::size_t>(
      (n_emitters * s_per_emitter_kcps + background_kcps) * 1e3 * duration_s *
          1.1 +
      64));

  auto add_poisson = [&](double rate_kcps, std::string_view path) {
    if (rate_kcps <= 0.0) return;
    auto s = rng::derive(seed, path);
    const double rate_ns = rate_kcps * 1e-6;
    double t = s.exponential(rate_ns);
    while (t < t_end_ns) {
      all.push_back(t);
      t += s.exponential(rate_ns);
    }
  };

  for (int j = 0; j < n_emitters; ++j) {
    const std::string base = "photon/emitter/" + std::to_string(j);
    const double rate_c = rho * s_per_emitter_kcps * 1e-6; // per ns
    if (rate_c > 0.0) {
      auto s = rng::derive(seed, base);
      const double lmax = rate_c * (1.0 + c);
      double t = 0.0;
      double t_last = -1e18;
      for (;;) {
        t += s.exponential(lmax);
        if (t >= t_end_ns) break;
        const double g = 1.0 - (1.0 + c) * std::exp(-(t - t_last) / emitter.tau1_ns) +
                         c * std::exp(-(t - t_last) / emitter.tau2_ns);
        if (s.uniform() * (1.0 + c) < g) {
          all.push_back(t);
          t_last = t;
        }
      }
    }
    add_poisson((1.0 - rho) * s_per_emitter_kcps, base + "/iso");
  }
  add_poisson(background_kcps, "photon/background");

  std::sort(all.begin(), all.end());

  PhotonTrace trace;
  trace.duration_s = duration_s;
  trace.signal_kcps = n_emitters * s_per_emitter_kcps;
  trace.background_kcps = background_kcps;
  auto router = rng::derive(seed, "photon/router");
  for (double t : all) {
    if (router.next_u64() & 1u)
      trace.det1_ns.push_back(t);
    else
      trace.det2_ns.push_back(t);
  }
  return trace;
}

std::string PhotonTrace::to_csv() const {
  std::string out = "detector,timestamp_ns\n";
  std::size_t i = 0, j = 0;
  while (i < det1_ns.size() || j < det2_ns.size()) {
    const bool take1 = j >= det2_ns.size() ||
                       (i < det1_ns.size() && det1_ns[i] <= det2_ns[j]);
    if (take1) {
      out += "1," + format_double(det1_ns[i++]) + "\n";
    } else {
      out += "2," + format_double(det2_ns[j++]) + "\n";
    }
  }
  return out;
}

PhotonTrace PhotonTrace::from_csv(const std::string& text, double duration_s,
                                  double signal_kcps, double background_kcps) {
  PhotonTrace trace;
  trace.duration_s = duration_s;
  trace.signal_kcps = signal_kcps;
  trace.background_kcps = background_kcps;
  std::istringstream in(text);
  std::string line;
  std::getline(in, line); // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw std::runtime_error("bad trace line: " + line);
    const int det = std::stoi(line.substr(0, comma));
    const double t = std::stod(line.substr(comma + 1));
    if (det == 1)
      trace.det1_ns.push_back(t);
    else if (det == 2)
      trace.det2_ns.push_back(t);
    else
      throw std::runtime_error("detector must be 1 or 2");
  }
  std::sort(trace.det1_ns.begin(), trace.det1_ns.end());
  std::sort(trace.det2_ns.begin(), trace.det2_ns.end());
  return trace;
}

CorrelationHistogram correlate(const PhotonTrace& trace, double bin_ns,
                               double max_lag_ns) {
  if (!(bin_ns > 0.0)) throw std::invalid_argument("bin width must be positive");
  if (max_lag_ns < bin_ns)
    throw std::invalid_argument("max lag must be >= bin width");
  if (trace.det1_ns.empty() || trace.det2_ns.empty())
    throw std::invalid_argument("empty photon trace");

  const auto half_bins = static_cast<std::size_t>(std::ceil(max_lag_ns / bin_ns));
  const std::size_t n_bins = 2 * half_bins;
  const double lag = static_cast<double>(half_bins) * bin_ns;

  CorrelationHistogram h;
  h.edges_ns.resize(n_bins + 1);
  for (std::size_t i = 0; i <= n_bins; ++i)
    h.edges_ns[i] = -lag + static_cast<double>(i) * bin_ns;
  h.counts.assign(n_bins, 0);

  // tau = t2 - t1; sliding window over detector 2 for each detector-1 stamp
  std::size_t lo = 0;
  for (const double t1 : trace.det1_ns) {
    while (lo < trace.det2_ns.size() && trace.det2_ns[lo] < t1 - lag) ++lo;
    for (std::size_t j = lo; j < trace.det2_ns.size(); ++j) {
      const double tau = trace.det2_ns[j] - t1;
      if (tau >= lag) break;
      const auto bin = static_cast<std::size_t>((tau + lag) / bin_ns);
      h.counts[std::min(bin, n_bins - 1)]++;
    }
  }

  const double t_ns = trace.duration_s * 1e9;
  const double r1 = static_cast<double>(trace.det1_ns.size()) / t_ns;
  const double r2 = static_cast<double>(trace.det2_ns.size()) / t_ns;
  const double norm = r1 * r2 * bin_ns * t_ns;
  h.c_n.resize(n_bins);
  for (std::size_t i = 0; i < n_bins; ++i)
    h.c_n[i] = static_cast<double>(h.counts[i]) / norm;
  return h;
}

std::vector<double> CorrelationHistogram::centers_ns() const {
  std::vector<double> c(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i)
    c[i] = 0.5 * (edges_ns[i] + edges_ns[i + 1]);
  return c;
}

std::string CorrelationHistogram::to_csv() const {
  std::string out = "tau_ns,counts,c_n\n";
  const auto centers = centers_ns();
  for (std::size_t i = 0; i < counts.size(); ++i) {
    out += format_double(centers[i]) + "," + std::to_string(counts[i]) + "," +
           format_double(c_n[i]) + "\n";
  }
  return out;
}

CorrelationHistogram CorrelationHistogram::from_csv(const std::string& text) {
  CorrelationHistogram h;
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  std::vector<double> centers;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos)
      throw std::runtime_error("bad histogram line: " + line);
    centers.push_back(std::stod(line.substr(0, c1)));
    h.counts.push_back(std::stoull(line.substr(c1 + 1, c2 - c1 - 1)));
    h.c_n.push_back(std::stod(line.substr(c2 + 1)));
  }
  if (centers.size() >= 2) {
    const double w = centers[1] - centers[0];
    h.edges_ns.resize(centers.size() + 1);
    for (std::size_t i = 0; i < centers.size(); ++i)
      h.edges_ns[i] = centers[i] - 0.5 * w;
    h.edges_ns.back() = centers.back() + 0.5 * w;
  }
  return h;
}

} // namespace sivsim::photonics
