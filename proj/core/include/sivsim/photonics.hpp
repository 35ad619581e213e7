#pragma once
#include <sivsim/patterning.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace sivsim::photonics {

/// Single-emitter optical response.
struct EmitterModel {
  double i_s_kcps = 14.86;  ///< saturation PL intensity
  double p_s_mw = 0.47;     ///< saturation power
  double a = 0.30;          ///< antibunching amplitude
  double b = 0.33;          ///< bunching amplitude
  double tau1_ns = 30.0;
  double tau2_ns = 300.0;
  void validate() const;
};

/// I(P) = I_S / (1 + P_S / P); 0 at P = 0.
double saturation_intensity(double p_mw, double i_s_kcps, double p_s_mw);

/// g2(tau) = 1 - (1+a) exp(-|tau|/tau1) + b exp(-|tau|/tau2).
double g2_model(double tau_ns, double a, double b, double tau1_ns, double tau2_ns);

/// Ground / excited / shelving rates (per ns) realizing a biexponential
/// g2(tau) = 1 - (1+c) exp(-tau/tau1) + c exp(-tau/tau2).
///
/// With gamma1 = 1/tau1, gamma2 = 1/tau2 the generator eigenvalues fix
///   deshelve = gamma1 gamma2 / (gamma1 + c (gamma1 - gamma2)),
/// and with K = gamma1 + gamma2 - deshelve, Q = (gamma1 - deshelve)(gamma2 - deshelve)
/// the remaining rates are taken symmetric, pump = shelve = sqrt(Q),
/// emit = K - 2 sqrt(Q) (always positive). excited_ss = pump*deshelve/(gamma1*gamma2).
struct ThreeLevelRates {
  double pump = 0.0;      ///< ground -> excited
  double emit = 0.0;      ///< excited -> ground (radiative)
  double shelve = 0.0;    ///< excited -> shelving
  double deshelve = 0.0;  ///< shelving -> ground
  double excited_ss = 0.0;
};
ThreeLevelRates solve_three_level_rates(double c, double tau1_ns, double tau2_ns);

struct OpticsSpec {
  double psf_fwhm_um = 0.5;
  double background_kcps = 2.0;
};

struct PixelSpec {
  int width = 0;
  int height = 0;
  double pitch_um = 0.1;
  double dwell_s = 0.005;
  double origin_x_um = 0.0;  ///< world coordinate of pixel (0,0) center
  double origin_y_um = 0.0;
};

struct ScanImage {
  int width = 0;
  int height = 0;
  double pitch_um = 0.0;
  double dwell_s = 0.0;
  double power_mw = 0.0;
  double origin_x_um = 0.0;
  double origin_y_um = 0.0;
  std::uint64_t seed = 0;
  std::vector<std::uint32_t> counts;  ///< row-major, Poisson sampled

  std::uint32_t at(int ix, int iy) const {
    return counts[static_cast<std::size_t>(iy) * width + ix];
  }
  double rate_kcps(int ix, int iy) const {
    return static_cast<double>(at(ix, iy)) / dwell_s * 1e-3;
  }

  std::string to_pgm() const;          ///< plain P2 graymap
  std::string sidecar_json() const;    ///< geometry + provenance
  static ScanImage from_pgm(const std::string& pgm, const std::string& sidecar);
};

/// Expected rate per pixel = background + sum over defects of
/// brightness * I(power) * Gaussian PSF(pixel - defect); counts drawn
/// Poisson(rate * dwell).
ScanImage render_scan(const patterning::DefectArray& array,
                      const OpticsSpec& optics, double power_mw,
                      const EmitterModel& emitter, const PixelSpec& pixels,
                      std::uint64_t seed);

struct PhotonTrace {
  std::vector<double> det1_ns;  ///< sorted ascending
  std::vector<double> det2_ns;
  double duration_s = 0.0;
  double signal_kcps = 0.0;
  double background_kcps = 0.0;

  std::string to_csv() const;  ///< detector,timestamp_ns
  static PhotonTrace from_csv(const std::string& text, double duration_s,
                              double signal_kcps, double background_kcps);
};

/// Two-detector timestamp stream for n independent emitters over Poisson
/// background, split 50:50. Emitter photons are a renewal stream whose
/// hazard after each detection is S * g2(t - t_last); for kcps detection
/// rates against ns internal dynamics this reproduces the pair correlation
/// of the underlying three-level process (see solve_three_level_rates).
/// The g2(0) = b - a offset is carried by an uncorrelated emitter
/// sub-stream of relative weight 1 - sqrt(1 + a - b).
PhotonTrace simulate_photon_trace(int n_emitters, double s_per_emitter_kcps,
                                  double background_kcps,
                                  const EmitterModel& emitter,
                                  double duration_s, std::uint64_t seed);

struct CorrelationHistogram {
  std::vector<double> edges_ns;        ///< symmetric about tau = 0
  std::vector<std::uint64_t> counts;
  std::vector<double> c_n;             ///< normalized, -> 1 at large lag

  std::vector<double> centers_ns() const;
  std::string to_csv() const;          ///< tau_ns,counts,c_n
  static CorrelationHistogram from_csv(const std::string& text);
};

/// Full start-stop-free cross-correlation of the two detectors, normalized
/// by r1 * r2 * binwidth * duration. Throws on an empty trace.
CorrelationHistogram correlate(const PhotonTrace& trace, double bin_ns,
                               double max_lag_ns);

} // namespace sivsim::photonics
