#pragma once
#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace sivsim::transport {

/// One atomic species of the (amorphous) target.
struct Component {
  int z = 0;                       ///< atomic number
  double mass_amu = 0.0;
  double fraction = 0.0;           ///< stoichiometric fraction
  double displacement_ev = 0.0;    ///< displacement energy E_d
  double surface_binding_ev = 0.0;
};

struct TargetMaterial {
  std::vector<Component> components;
  double mass_density_g_cm3 = 0.0;

  /// Total atomic density in atoms/nm^3.
  double atomic_density_nm3() const;
  /// Throws std::invalid_argument on violated invariants
  /// (fractions sum to 1, density > 0, E_d > 0).
  void validate() const;

  /// 4H-SiC preset: Z={14,6}, density 3.21 g/cm^3, E_d(Si)=35 eV, E_d(C)=20 eV.
  static TargetMaterial sic_4h();
};

struct IonBeamSpec {
  int z = 2;
  double mass_amu = 4.0026;        ///< He-4
  double energy_kev = 30.0;
  double incidence_deg = 0.0;      ///< from surface normal
  void validate() const;

  static IonBeamSpec helium(double energy_kev = 30.0);
};

struct Collision {
  std::array<double, 3> position_nm{};
  double transfer_ev = 0.0;
  int partner_z = 0;
  double vacancies = 0.0;          ///< expected count (Kinchin-Pease)
};

struct IonHistory {
  std::vector<Collision> collisions;
  std::array<double, 3> stop_nm{};
  bool backscattered = false;
  double initial_energy_ev = 0.0;
  double electronic_loss_ev = 0.0; ///< summed over free flights
  double residual_ev = 0.0;        ///< kinetic energy below cutoff at stop
  double vacancies_si = 0.0;
  double vacancies_c = 0.0;
};

struct ImplantProfile {
  std::vector<double> depth_edges_nm;        ///< nbins+1 edges
  std::vector<std::uint64_t> ion_counts;     ///< stopped ions per depth bin
  std::vector<double> vacancy_counts;        ///< expected vacancies per bin
  std::vector<double> vacancy_counts_si;     ///< Si-sublattice subset
  std::vector<std::uint64_t> lateral_counts; ///< radial displacement histogram
  std::vector<double> lateral_edges_nm;

  double mean_depth_nm = 0.0;
  double long_straggle_nm = 0.0;
  double lat_straggle_radial_nm = 0.0;       ///< sqrt(sx^2+sy^2)
  double lat_straggle_x_nm = 0.0;
  double lat_straggle_y_nm = 0.0;
  double lat_mean_x_nm = 0.0;
  double lat_mean_y_nm = 0.0;
  double vacancies_per_ion = 0.0;
  std::uint64_t n_ions = 0;
  std::uint64_t n_backscattered = 0;
  std::uint64_t seed = 0;

  /// CSV with header depth_nm,ion_count,vacancy_count (bin centers).
  std::string to_csv() const;
  /// Summary JSON (mean_depth_nm, straggles, vacancies_per_ion, n_ions, seed).
  std::string summary_json() const;

  /// Sample a defect depth from the Si-vacancy histogram (uniform within bin).
  /// u1 selects the bin, u2 the position inside it; both in [0,1).
  double sample_vacancy_depth(double u1, double u2) const;
};

/// Head-on kinematic limit 4 m1 m2 / (m1+m2)^2 * E.
/// Throws std::domain_error on non-positive inputs.
double max_energy_transfer_kev(double e_kev, double m1_amu, double m2_amu);

struct ScatterResult {
  double lab_angle_rad = 0.0;
  double cm_angle_rad = 0.0;
  double transfer_ev = 0.0;
};

/// Screened-Coulomb (ZBL universal) binary collision at reduced impact
/// parameter, evaluated with the MAGIC closed form. b = 0 is the exact
/// head-on limit.
ScatterResult scattering_event(double e_kev, double impact_nm,
                               int ion_z, double ion_mass_amu,
                               const Component& partner);

/// Velocity-proportional (Lindhard-Scharff) electronic stopping, eV/nm.
double electronic_stopping(double e_kev, const TargetMaterial& target);

/// Modified Kinchin-Pease expected vacancy count for a recoil of energy T.
double vacancies_from_recoil(double transfer_ev, double displacement_ev);

struct TransportParams {
  double cutoff_ev = 5.0;          ///< ion termination energy
  double depth_bin_nm = 2.0;
  double depth_max_nm = 600.0;
  double lateral_bin_nm = 2.0;
  double lateral_max_nm = 600.0;
  unsigned n_threads = 0;          ///< 0 = hardware concurrency
};

IonHistory simulate_ion(const IonBeamSpec& beam, const TargetMaterial& target,
                        std::uint64_t seed,
                        const TransportParams& params = {});

/// Aggregates n_ions independent histories; per-ion seeds are derived from
/// the master seed ("transport/ion/<i>") so the result is independent of
/// thread count and execution order.
ImplantProfile simulate_profile(const IonBeamSpec& beam,
                                const TargetMaterial& target,
                                std::uint64_t n_ions, std::uint64_t seed,
                                const TransportParams& params = {});

} // namespace sivsim::transport
