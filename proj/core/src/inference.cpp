#include <sivsim/inference.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <Eigen/Dense>
#include <json.hpp>

namespace sivsim::inference {

namespace {

constexpr double kStepTol = 1e-10;
constexpr double kGradTol = 1e-10;
constexpr int kMaxIterations = 200;

void numeric_jacobian(const CurveModel& model, double x,
                      std::span<const double> theta, std::span<double> out) {
  std::vector<double> p(theta.begin(), theta.end());
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double h = 1e-6 * std::max(1.0, std::abs(p[k]));
    const double saved = p[k];
    p[k] = saved + h;
    const double fp = model.f(x, p);
    p[k] = saved - h;
    const double fm = model.f(x, p);
    p[k] = saved;
    out[k] = (fp - fm) / (2.0 * h);
  }
}

} // namespace

double FitResult::value(std::string_view name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return values[i];
  throw std::out_of_range("no fit parameter named " + std::string(name));
}

double FitResult::sigma(std::string_view name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return sigmas[i];
  throw std::out_of_range("no fit parameter named " + std::string(name));
}

std::string FitResult::to_json() const {
  nlohmann::ordered_json j;
  nlohmann::ordered_json params = nlohmann::ordered_json::object();
  nlohmann::ordered_json sig = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < names.size(); ++i) {
    params[names[i]] = values[i];
    sig[names[i]] = sigmas[i];
  }
  j["params"] = std::move(params);
  j["sigma"] = std::move(sig);
  j["rss"] = rss;
  j["iterations"] = iterations;
  j["converged"] = converged;
  if (!note.empty()) j["note"] = note;
  return j.dump(2);
}

FitResult least_squares_fit(const CurveModel& model,
                            std::span<const double> x,
                            std::span<const double> y,
                            std::span<const double> sigma_y,
                            std::span<const double> initial) {
  const std::size_t n = x.size();
  const std::size_t p = initial.size();
  if (y.size() != n) throw std::invalid_argument("x/y size mismatch");
  if (!sigma_y.empty() && sigma_y.size() != n)
    throw std::invalid_argument("sigma size mismatch");
  if (n < p) throw std::invalid_argument("fewer data points than parameters");
  for (double v : y)
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite data");

  auto weight = [&](std::size_t i) {
    return sigma_y.empty() ? 1.0 : 1.0 / sigma_y[i];
  };

  Eigen::VectorXd theta = Eigen::Map<const Eigen::VectorXd>(initial.data(), p);

  auto residuals = [&](const Eigen::VectorXd& th, Eigen::VectorXd& r) {
    std::span<const double> ts(th.data(), p);
    for (std::size_t i = 0; i < n; ++i)
      r(static_cast<Eigen::Index>(i)) = (y[i] - model.f(x[i], ts)) * weight(i);
  };
  auto fill_jacobian = [&](const Eigen::VectorXd& th, Eigen::MatrixXd& jm) {
    std::span<const double> ts(th.data(), p);
    std::vector<double> row(p);
    for (std::size_t i = 0; i < n; ++i) {
      if (model.jacobian)
        model.jacobian(x[i], ts, row);
      else
        numeric_jacobian(model, x[i], ts, row);
      for (std::size_t k = 0; k < p; ++k)
        jm(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
            -row[k] * weight(i); // d r_i / d theta_k
    }
  };

  Eigen::VectorXd r(n);
  Eigen::MatrixXd jm(n, p);
  residuals(theta, r);
  double chi2 = r.squaredNorm();

  FitResult out;
  out.names = model.param_names;
  if (out.names.size() != p) {
    out.names.resize(p);
    for (std::size_t k = 0; k < p; ++k)
      if (out.names[k].empty()) out.names[k] = "p" + std::to_string(k);
  }

  double lambda = 1e-3;
  bool singular = false;
  bool converged = false;
  int iter = 0;
  for (; iter < kMaxIterations; ++iter) {
    fill_jacobian(theta, jm);
    const Eigen::MatrixXd jtj = jm.transpose() * jm;
    const Eigen::VectorXd g = -jm.transpose() * r; // -grad/2
    if (!g.allFinite() || !jtj.allFinite()) {
      singular = true;
      break;
    }
    if (g.norm() < kGradTol * std::max(1.0, std::sqrt(chi2))) {
      converged = true;
      break;
    }

    bool stepped = false;
    for (int tries = 0; tries < 30; ++tries) {
      Eigen::MatrixXd damped = jtj;
      for (std::size_t k = 0; k < p; ++k) {
        auto kk = static_cast<Eigen::Index>(k);
        damped(kk, kk) += lambda * std::max(jtj(kk, kk), 1e-30);
      }
      const Eigen::LDLT<Eigen::MatrixXd> ldlt(damped);
      if (ldlt.info() != Eigen::Success) {
        singular = true;
        break;
      }
      const Eigen::VectorXd delta = ldlt.solve(g);
      if (!delta.allFinite()) {
        singular = true;
        break;
      }
      const Eigen::VectorXd cand = theta + delta;
      Eigen::VectorXd rc(n);
      double chi2c = std::numeric_limits<double>::infinity();
      try {
        residuals(cand, rc);
        chi2c = rc.squaredNorm();
      } catch (const std::exception&) {
        // model rejects this trial point (e.g. out of domain); damp harder
      }
      if (std::isfinite(chi2c) && chi2c <= chi2) {
        const double rel_step = delta.norm() / std::max(theta.norm(), 1.0);
        theta = cand;
        r = rc;
        chi2 = chi2c;
        lambda = std::max(lambda * 0.3, 1e-14);
        stepped = true;
        if (rel_step < kStepTol) converged = true;
        break;
      }
      lambda *= 10.0;
      if (lambda > 1e14) break;
    }
    if (singular || converged || !stepped) break;
  }

  out.values.assign(theta.data(), theta.data() + p);
  out.rss = chi2;
  out.iterations = iter;
  out.converged = converged && !singular;
  if (singular) out.note = "singular jacobian";

  // covariance = (J^T J)^-1 * rss / (n - p)
  fill_jacobian(theta, jm);
  const Eigen::MatrixXd jtj = jm.transpose() * jm;
  Eigen::MatrixXd cov;
  const double dof = static_cast<double>(n > p ? n - p : 1);
  const double s2 = chi2 / dof;
  const Eigen::FullPivLU<Eigen::MatrixXd> lu(jtj);
  if (lu.isInvertible()) {
    cov = lu.inverse() * s2;
  } else {
    cov = Eigen::MatrixXd::Constant(p, p,
                                    std::numeric_limits<double>::infinity());
    if (out.note.empty()) out.note = "singular jacobian";
    out.converged = false;
  }
  out.sigmas.resize(p);
  out.covariance.assign(p, std::vector<double>(p));
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t k = 0; k < p; ++k)
      out.covariance[i][k] =
          cov(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
    const double v = out.covariance[i][i];
    out.sigmas[i] = v > 0.0 && std::isfinite(v)
                        ? std::sqrt(v)
                        : (std::isfinite(v) ? 0.0
                                            : std::numeric_limits<double>::infinity());
  }
  return out;
}

CurveModel lorentzian_model() {
  CurveModel m;
  m.param_names = {"f0", "fwhm", "contrast", "baseline"};
  m.f = [](double f, std::span<const double> th) {
    const double hw = th[1] / 2.0;
    const double d = f - th[0];
    return th[3] + th[2] * hw * hw / (d * d + hw * hw);
  };
  m.jacobian = [](double f, std::span<const double> th, std::span<double> out) {
    const double hw = th[1] / 2.0;
    const double d = f - th[0];
    const double den = d * d + hw * hw;
    const double l = hw * hw / den;
    out[0] = th[2] * 2.0 * d * hw * hw / (den * den);       // d/df0
    out[1] = th[2] * hw * d * d / (den * den);              // d/dfwhm
    out[2] = l;                                             // d/dcontrast
    out[3] = 1.0;                                           // d/dbaseline
  };
  return m;
}

CurveModel g2_curve_model() {
  CurveModel m;
  m.param_names = {"a", "b", "tau1", "tau2"};
  m.f = [](double tau, std::span<const double> th) {
    return photonics::g2_model(tau, th[0], th[1], th[2], th[3]);
  };
  m.jacobian = [](double tau, std::span<const double> th,
                  std::span<double> out) {
    const double t = std::abs(tau);
    const double e1 = std::exp(-t / th[2]);
    const double e2 = std::exp(-t / th[3]);
    out[0] = -e1;
    out[1] = e2;
    out[2] = -(1.0 + th[0]) * e1 * t / (th[2] * th[2]);
    out[3] = th[1] * e2 * t / (th[3] * th[3]);
  };
  return m;
}

CurveModel saturation_model() {
  CurveModel m;
  m.param_names = {"i_s", "p_s"};
  m.f = [](double pw, std::span<const double> th) {
    if (pw <= 0.0) return 0.0;
    return th[0] / (1.0 + th[1] / pw);
  };
  m.jacobian = [](double pw, std::span<const double> th,
                  std::span<double> out) {
    if (pw <= 0.0) {
      out[0] = out[1] = 0.0;
      return;
    }
    const double den = 1.0 + th[1] / pw;
    out[0] = 1.0 / den;
    out[1] = -th[0] / (den * den * pw);
  };
  return m;
}

FitResult fit_odmr(const OdmrSpectrum& spectrum) {
  const auto& f = spectrum.freq_mhz;
  const auto& y = spectrum.contrast;
  if (f.size() != y.size() || f.size() < 5)
    throw std::invalid_argument("spectrum too short");
  for (std::size_t i = 1; i < f.size(); ++i)
    if (!(f[i] > f[i - 1]))
      throw std::invalid_argument("frequencies must be strictly increasing");

  // initial guesses: baseline from the median, f0 at the extremum,
  // width from half prominence
  std::vector<double> sorted(y);
  std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2,
                   sorted.end());
  const double baseline = sorted[sorted.size() / 2];
  std::size_t ext = 0;
  for (std::size_t i = 0; i < y.size(); ++i)
    if (std::abs(y[i] - baseline) > std::abs(y[ext] - baseline)) ext = i;
  const double contrast = y[ext] - baseline;
  const double half = std::abs(contrast) / 2.0;
  std::size_t lo = ext, hi = ext;
  while (lo > 0 && std::abs(y[lo] - baseline) > half) --lo;
  while (hi + 1 < y.size() && std::abs(y[hi] - baseline) > half) ++hi;
  double fwhm = f[hi] - f[lo];
  if (!(fwhm > 0.0)) fwhm = (f.back() - f.front()) / 4.0;

  const std::vector<double> init = {f[ext], fwhm, contrast, baseline};
  auto out = least_squares_fit(lorentzian_model(), f, y, {}, init);
  if (std::abs(out.value("contrast")) < 2.0 * out.sigma("contrast"))
    out.note = out.note.empty() ? "no significant resonance"
                                : out.note + "; no significant resonance";
  return out;
}

std::vector<double> background_correct_g2(std::span<const double> c_n,
                                          double s_kcps, double b_kcps) {
  if (!(s_kcps > 0.0)) throw std::domain_error("signal rate must be positive");
  if (b_kcps < 0.0) throw std::domain_error("background must be >= 0");
  const double rho = s_kcps / (s_kcps + b_kcps);
  const double rho2 = rho * rho;
  std::vector<double> out(c_n.size());
  for (std::size_t i = 0; i < c_n.size(); ++i)
    out[i] = (c_n[i] - (1.0 - rho2)) / rho2;
  return out;
}

FitResult fit_g2(const photonics::CorrelationHistogram& hist, double s_kcps,
                 double b_kcps, bool correct) {
  const auto tau = hist.centers_ns();
  if (tau.size() < 8) throw std::invalid_argument("histogram too short");

  std::vector<double> y(hist.c_n);
  std::vector<double> sig(y.size());
  const double rho = s_kcps / (s_kcps + b_kcps);
  const double scale = correct ? 1.0 / (rho * rho) : 1.0;
  if (correct) y = background_correct_g2(y, s_kcps, b_kcps);
  for (std::size_t i = 0; i < y.size(); ++i) {
    // shot-noise weight from the raw coincidence counts
    const double rel =
        hist.counts[i] > 0
            ? std::sqrt(static_cast<double>(hist.counts[i])) /
                  static_cast<double>(hist.counts[i])
            : 1.0;
    const double base = hist.c_n[i] > 0.0 ? hist.c_n[i] : 1.0;
    sig[i] = std::max(base * rel, 1e-6) * scale;
  }

  // guesses from curve extremes
  double y_center = 0.0;
  int n_center = 0;
  double y_max = -1e30;
  const double span = tau.back();
  for (std::size_t i = 0; i < tau.size(); ++i) {
    if (std::abs(tau[i]) < 0.02 * span) {
      y_center += y[i];
      ++n_center;
    }
    y_max = std::max(y_max, y[i]);
  }
  if (n_center > 0) y_center /= n_center;
  const double b0 = std::clamp(y_max - 1.0, 0.05, 5.0);
  const double a0 = std::clamp(b0 - std::min(y_center, 1.0), 0.0, 2.0);

  // the (a, b, tau1, tau2) surface has a degenerate ridge at tau1 ~ tau2
  // where the amplitudes blow up in tandem; a small multi-start over the
  // time scales keeps the fit off it on noisy histograms
  FitResult out;
  bool have = false, out_ridge = true;
  for (const double t1 : {span / 100.0, span / 40.0, span / 15.0}) {
    for (const double t2_mult : {8.0, 25.0}) {
      const std::vector<double> init = {a0, b0, t1, t1 * t2_mult};
      auto cand = least_squares_fit(g2_curve_model(), tau, y, sig, init);
      // degenerate outcomes: collapsed or runaway time scales, or amplitudes
      // far outside the physically sensible range
      const bool ridge = cand.value("tau2") < 2.0 * cand.value("tau1") ||
                         cand.value("tau1") <= 0.0 ||
                         cand.value("tau2") > 5.0 * span ||
                         std::abs(cand.value("a")) > 5.0 ||
                         cand.value("a") < -0.5;
      const bool better =
          !have || (ridge == out_ridge ? cand.rss < out.rss : !ridge);
      if (better) {
        out = std::move(cand);
        out_ridge = ridge;
        have = true;
      }
    }
  }

  const double a = out.value("a"), b = out.value("b");
  const double g20 = b - a;
  const auto ia = 0u, ib = 1u;
  const double var = out.covariance[ia][ia] + out.covariance[ib][ib] -
                     2.0 * out.covariance[ia][ib];
  out.names.push_back("g2_at_zero");
  out.values.push_back(g20);
  out.sigmas.push_back(var > 0.0 ? std::sqrt(var) : 0.0);
  if (g20 > 0.5 || std::abs(1.0 + a) * 1.0 < 2.0 * out.sigma("a"))
    out.note = out.note.empty() ? "non-antibunched"
                                : out.note + "; non-antibunched";
  return out;
}

FitResult fit_saturation(std::span<const double> power_mw,
                         std::span<const double> intensity_kcps) {
  if (power_mw.size() != intensity_kcps.size() || power_mw.size() < 3)
    throw std::invalid_argument("need at least 3 saturation points");
  double i_max = 0.0, p_max = 0.0;
  for (std::size_t i = 0; i < power_mw.size(); ++i) {
    i_max = std::max(i_max, intensity_kcps[i]);
    p_max = std::max(p_max, power_mw[i]);
  }
  const std::vector<double> init = {1.5 * i_max, 0.5 * p_max};
  auto out = least_squares_fit(saturation_model(), power_mw, intensity_kcps,
                               {}, init);
  // the knee is unconstrained when its uncertainty swamps it or when it was
  // never reached within the measured power range
  if (out.sigma("p_s") > std::abs(out.value("p_s")) ||
      out.value("p_s") > p_max)
    out.note = out.note.empty() ? "saturation not constrained"
                                : out.note + "; saturation not constrained";
  return out;
}

std::vector<SpotReadout> detect_spots(const photonics::ScanImage& image,
                                      const patterning::SpotPattern& pattern,
                                      double reference_power_mw,
                                      double psf_fwhm_um,
                                      std::size_t* n_skipped) {
  (void)reference_power_mw; // intensities are reported at the image's power
  if (image.counts.empty()) throw std::invalid_argument("empty image");
  const double sigma_um = psf_fwhm_um / 2.3548200450309493;
  const double sigma_px = sigma_um / image.pitch_um;
  const int aperture_px = std::max(2, static_cast<int>(std::ceil(3.0 * sigma_px)));

  // background: median rate of pixels at least 2 FWHM away from all spots
  const double excl_um = 2.0 * psf_fwhm_um;
  std::vector<double> bg_rates;
  for (int iy = 0; iy < image.height; ++iy) {
    const double py = image.origin_y_um + iy * image.pitch_um;
    for (int ix = 0; ix < image.width; ++ix) {
      const double px = image.origin_x_um + ix * image.pitch_um;
      bool clear = true;
      for (const auto& s : pattern.spots) {
        const double dx = px - s.x_um, dy = py - s.y_um;
        if (dx * dx + dy * dy < excl_um * excl_um) {
          clear = false;
          break;
        }
      }
      if (clear) bg_rates.push_back(image.rate_kcps(ix, iy));
    }
  }
  double background = 0.0;
  if (!bg_rates.empty()) {
    std::nth_element(bg_rates.begin(), bg_rates.begin() + bg_rates.size() / 2,
                     bg_rates.end());
    background = bg_rates[bg_rates.size() / 2];
  }

  std::vector<SpotReadout> out;
  std::size_t skipped = 0;
  for (const auto& s : pattern.spots) {
    const int cx = static_cast<int>(
        std::lround((s.x_um - image.origin_x_um) / image.pitch_um));
    const int cy = static_cast<int>(
        std::lround((s.y_um - image.origin_y_um) / image.pitch_um));
    if (cx - aperture_px < 0 || cx + aperture_px >= image.width ||
        cy - aperture_px < 0 || cy + aperture_px >= image.height) {
      ++skipped;
      continue;
    }
    // matched filter: amplitude = sum((rate-bg)*G) / sum(G^2)
    double num = 0.0, den = 0.0;
    for (int dy = -aperture_px; dy <= aperture_px; ++dy) {
      for (int dx = -aperture_px; dx <= aperture_px; ++dx) {
        const double gx = image.origin_x_um + (cx + dx) * image.pitch_um - s.x_um;
        const double gy = image.origin_y_um + (cy + dy) * image.pitch_um - s.y_um;
        const double g =
            std::exp(-0.5 * (gx * gx + gy * gy) / (sigma_um * sigma_um));
        num += (image.rate_kcps(cx + dx, cy + dy) - background) * g;
        den += g * g;
      }
    }
    SpotReadout r;
    r.row = s.row;
    r.col = s.col;
    r.intensity_kcps = den > 0.0 ? num / den : 0.0;
    out.push_back(r);
  }
  if (n_skipped) *n_skipped = skipped;
  return out;
}

int classify_spot(double intensity_kcps, std::optional<double> g2_at_zero,
                  bool* conflict, double unit_kcps) {
  if (intensity_kcps < 0.0)
    throw std::domain_error("intensity must be >= 0");
  if (!(unit_kcps > 0.0)) throw std::domain_error("unit must be positive");
  if (conflict) *conflict = false;

  int n;
  if (intensity_kcps < 0.5 * unit_kcps)
    n = 0;
  else if (intensity_kcps < unit_kcps)
    n = 1;
  else if (intensity_kcps < 2.0 * unit_kcps)
    n = 2;
  else
    n = static_cast<int>(std::lround(intensity_kcps / unit_kcps));

  if (g2_at_zero && conflict) {
    const double g = *g2_at_zero;
    if (n == 1 && !(g >= 0.0 && g <= 0.32)) *conflict = true;
    if (n == 2 && !(g > 0.32 && g <= 0.65)) *conflict = true;
  }
  return n;
}

FitResult fit_poisson(std::span<const std::uint64_t> counts) {
  if (counts.empty()) throw std::invalid_argument("no spot counts");
  const double n = static_cast<double>(counts.size());
  double mean = 0.0;
  for (auto k : counts) mean += static_cast<double>(k);
  mean /= n;
  FitResult out;
  out.names = {"lambda"};
  out.values = {mean};
  out.sigmas = {std::sqrt(mean / n)};
  out.covariance = {{mean / n}};
  out.converged = true;
  return out;
}

FitResult fit_poisson_histogram(std::span<const std::uint64_t> counts) {
  if (counts.empty()) throw std::invalid_argument("no spot counts");
  std::uint64_t k_max = 0;
  for (auto k : counts) k_max = std::max(k_max, k);
  std::vector<double> ks(k_max + 1), freq(k_max + 1, 0.0);
  for (std::size_t k = 0; k <= k_max; ++k) ks[k] = static_cast<double>(k);
  for (auto k : counts) freq[k] += 1.0 / static_cast<double>(counts.size());

  CurveModel m;
  m.param_names = {"lambda"};
  m.f = [](double k, std::span<const double> th) {
    return patterning::poisson_pmf(static_cast<std::uint64_t>(k),
                                   std::max(th[0], 0.0));
  };
  const auto mle = fit_poisson(counts);
  const std::vector<double> init = {std::max(mle.values[0], 1e-6)};
  return least_squares_fit(m, ks, freq, {}, init);
}

YieldReport yield_report(std::span<const std::uint64_t> counts, double dose) {
  if (!(dose > 0.0)) throw std::domain_error("dose must be positive");
  const auto fit = fit_poisson(counts);
  YieldReport r;
  r.dose = dose;
  r.lambda = fit.values[0];
  r.lambda_sigma = fit.sigmas[0];
  r.eta = std::clamp(r.lambda / dose, 0.0, 1.0);
  r.eta_sigma = r.lambda_sigma / dose;
  r.single_rate = r.lambda > 0.0 ? patterning::poisson_pmf(1, r.lambda) : 0.0;
  r.n_spots = counts.size();
  std::uint64_t k_max = 0;
  for (auto k : counts) k_max = std::max(k_max, k);
  r.k_histogram.assign(k_max + 1, 0);
  for (auto k : counts) r.k_histogram[k]++;
  return r;
}

std::string YieldReport::to_json() const {
  nlohmann::ordered_json j;
  j["dose"] = dose;
  j["lambda"] = lambda;
  j["lambda_sigma"] = lambda_sigma;
  j["eta"] = eta;
  j["eta_sigma"] = eta_sigma;
  j["single_rate"] = single_rate;
  j["n_spots"] = n_spots;
  j["k_histogram"] = k_histogram;
  return j.dump(2);
}

std::string YieldReport::text_header() {
  return "dose(ions/spot)  lambda+-sigma      eta(%)   single-rate(%)";
}

std::string YieldReport::to_text_row() const {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-16.4g %.3f +- %.3f   %6.2f   %6.1f",
                dose, lambda, lambda_sigma, eta * 100.0, single_rate * 100.0);
  return buf;
}

} // namespace sivsim::inference
