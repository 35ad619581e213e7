#pragma once
#include <sivsim/photonics.hpp>

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace sivsim::inference {

struct FitResult {
  std::vector<std::string> names;
  std::vector<double> values;
  std::vector<double> sigmas;             ///< 1-sigma from (J^T J)^-1 * s^2
  std::vector<std::vector<double>> covariance;
  double rss = 0.0;                       ///< weighted residual sum of squares
  int iterations = 0;
  bool converged = false;
  std::string note;                       ///< diagnostic flags, empty if clean

  double value(std::string_view name) const;
  double sigma(std::string_view name) const;
  std::string to_json() const;            ///< {params, sigma, rss, converged}
};

/// Parametric curve y = f(x; theta). jacobian fills df/dtheta_k at x; when
/// absent, central finite differences are used.
struct CurveModel {
  std::function<double(double, std::span<const double>)> f;
  std::function<void(double, std::span<const double>, std::span<double>)>
      jacobian;
  std::vector<std::string> param_names;
};

/// Levenberg-Marquardt minimizer of sum(((y - f(x;theta))/sigma)^2).
/// Converged when relative step and gradient norms drop below 1e-10, capped
/// at 200 iterations. A singular normal matrix flags non-convergence and
/// returns the best parameters seen.
FitResult least_squares_fit(const CurveModel& model,
                            std::span<const double> x,
                            std::span<const double> y,
                            std::span<const double> sigma_y,
                            std::span<const double> initial);

/// Built-in models (analytic Jacobians).
CurveModel lorentzian_model();  ///< params f0, fwhm, contrast, baseline
CurveModel g2_curve_model();    ///< params a, b, tau1, tau2
CurveModel saturation_model();  ///< params i_s, p_s

struct OdmrSpectrum {
  std::vector<double> freq_mhz;   ///< strictly increasing
  std::vector<double> contrast;   ///< dPL/PL
};

/// Lorentzian line fit; dip or peak, either sign of contrast.
FitResult fit_odmr(const OdmrSpectrum& spectrum);

/// Pointwise (C_N - (1 - rho^2)) / rho^2 with rho = S/(S+B).
/// Throws std::domain_error when S <= 0.
std::vector<double> background_correct_g2(std::span<const double> c_n,
                                          double s_kcps, double b_kcps);

/// Fits the biexponential g2 shape, optionally after background correction;
/// adds a derived g2_at_zero = b - a with propagated uncertainty.
FitResult fit_g2(const photonics::CorrelationHistogram& hist, double s_kcps,
                 double b_kcps, bool correct);

FitResult fit_saturation(std::span<const double> power_mw,
                         std::span<const double> intensity_kcps);

struct SpotReadout {
  int row = 0;
  int col = 0;
  double intensity_kcps = 0.0;        ///< background-subtracted amplitude
  std::optional<double> g2_at_zero;
  int n_defects = 0;
  bool conflict = false;              ///< g2 band disagrees with intensity band
};

/// Matched-filter spot intensities on a registered grid; background is the
/// median rate of pixels away from every nominal spot. Spots whose aperture
/// leaves the image are omitted (n_skipped reports how many).
std::vector<SpotReadout> detect_spots(const photonics::ScanImage& image,
                                      const patterning::SpotPattern& pattern,
                                      double reference_power_mw,
                                      double psf_fwhm_um = 0.5,
                                      std::size_t* n_skipped = nullptr);

/// Intensity-unit classification: N=0 below unit/2, N=1 in [unit/2, unit),
/// N=2 in [unit, 2 unit), else round(intensity/unit). When g2(0) is given,
/// bands [0, 0.32] (single) and (0.32, 0.65] (double) are cross-checked and
/// a mismatch sets *conflict.
int classify_spot(double intensity_kcps,
                  std::optional<double> g2_at_zero = std::nullopt,
                  bool* conflict = nullptr, double unit_kcps = 8.0);

/// Poisson MLE: lambda = sample mean, sigma = sqrt(lambda/N).
FitResult fit_poisson(std::span<const std::uint64_t> counts);

/// Least-squares fit of the pmf to the normalized per-k histogram
/// (figure-parity variant; the MLE is authoritative).
FitResult fit_poisson_histogram(std::span<const std::uint64_t> counts);

struct YieldReport {
  double dose = 0.0;
  double lambda = 0.0;
  double lambda_sigma = 0.0;
  double eta = 0.0;              ///< lambda / dose
  double eta_sigma = 0.0;
  double single_rate = 0.0;      ///< P(1; lambda)
  std::vector<std::uint64_t> k_histogram;
  std::uint64_t n_spots = 0;

  std::string to_json() const;
  /// dose, lambda +- sigma, eta %, single-rate % columns.
  std::string to_text_row() const;
  static std::string text_header();
};

YieldReport yield_report(std::span<const std::uint64_t> counts, double dose);

} // namespace sivsim::inference
