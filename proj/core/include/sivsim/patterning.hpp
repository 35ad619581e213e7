#pragma once
#include <sivsim/transport.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace sivsim::patterning {

constexpr double kElementaryChargeC = 1.602176634e-19;

/// Expected ions per spot from beam current and dwell time.
/// current [pA] * dwell [us] / e.
double dose_from_dwell(double current_pa, double dwell_us);

/// Dwell time [us] needed for a target dose at a given current.
double dwell_for_dose(double dose_ions, double current_pa);

/// Dose granularity implied by the dwell-time resolution.
double dose_uncertainty(double current_pa, double dwell_resolution_us);

/// Poisson pmf e^-lambda lambda^k / k!. Throws std::domain_error for
/// lambda < 0.
double poisson_pmf(std::uint64_t k, double lambda);

struct DoseSpec {
  double beam_current_pa = 0.4;
  double dwell_time_us = 0.0;
  double dose() const { return dose_from_dwell(beam_current_pa, dwell_time_us); }
};

struct Spot {
  int row = 0;
  int col = 0;
  double x_um = 0.0;
  double y_um = 0.0;
};

struct SpotPattern {
  int rows = 0;
  int cols = 0;
  double pitch_um = 0.0;
  double origin_x_um = 0.0;
  double origin_y_um = 0.0;
  std::vector<Spot> spots;

  double width_um() const { return (cols - 1) * pitch_um; }
  double height_um() const { return (rows - 1) * pitch_um; }
};

/// Rectangular lattice of rows x cols spots with the given pitch.
SpotPattern build_pattern(int rows, int cols, double pitch_um,
                          double origin_x_um = 0.0, double origin_y_um = 0.0);

struct Defect {
  double dx_nm = 0.0;     ///< lateral offset from the nominal spot position
  double dy_nm = 0.0;
  double depth_nm = 0.0;
  double brightness = 1.0;
};

struct SpotRecord {
  Spot spot;
  std::vector<Defect> defects;
  std::uint64_t k() const { return defects.size(); }
};

struct DefectArray {
  std::vector<SpotRecord> spots;
  double dose = 0.0;
  double conversion_yield = 0.0;
  std::uint64_t seed = 0;

  std::string to_json() const;
  static DefectArray from_json(const std::string& text);
};

struct SamplingOptions {
  double brightness_sigma = 0.0; ///< lognormal dispersion, 0 = all unit
};

/// Ground-truth defect array: per spot k ~ Poisson(eta * dose), defects
/// displaced laterally by the per-axis straggle of the implant profile and
/// in depth by its Si-vacancy histogram. Per-spot streams are derived from
/// the master seed ("array/spot/<r>,<c>"), so spot order does not matter.
DefectArray sample_defect_array(const SpotPattern& pattern, double dose,
                                double eta,
                                const transport::ImplantProfile& profile,
                                std::uint64_t seed,
                                const SamplingOptions& opts = {});

} // namespace sivsim::patterning
