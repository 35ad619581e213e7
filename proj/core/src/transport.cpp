#include <sivsim/transport.hpp>
#include <sivsim/rng.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>
#include <thread>
#include <atomic>

#include <json.hpp>

namespace sivsim::transport {

namespace {

constexpr double kAvogadro = 6.02214076e23;
constexpr double kE2 = 1.43996;        // e^2/(4 pi eps0), eV nm
constexpr double kScreeningPre = 0.046850; // ZBL universal screening length, nm

// Calibrated against the 30 keV He -> 4H-SiC range of the reference
// transport tables (mean implantation depth 179 nm).
constexpr double kStoppingCorrection = 1.17;

double screening_length_nm(int z1, int z2) {
  return kScreeningPre / (std::pow(z1, 0.23) + std::pow(z2, 0.23));
}

// ZBL universal screening function and its derivative at reduced radius r.
struct Screening {
  double phi;
  double dphi;
};

Screening zbl_phi(double r) {
  const double e1 = 0.18175 * std::exp(-3.19980 * r);
  const double e2 = 0.50986 * std::exp(-0.94229 * r);
  const double e3 = 0.28022 * std::exp(-0.40290 * r);
  const double e4 = 0.028171 * std::exp(-0.20162 * r);
  return {e1 + e2 + e3 + e4,
          -(3.19980 * e1 + 0.94229 * e2 + 0.40290 * e3 + 0.20162 * e4)};
}

// sin^2(theta_cm/2) for reduced energy eps and reduced impact parameter b,
// MAGIC five-parameter fit to the universal potential scattering integral.
double magic_s2(double eps, double b) {
  if (b <= 0.0) return 1.0; // exact head-on limit

  if (eps > 10.0) {
    // Rutherford regime with the TRIM close-collision correction.
    return 1.0 / (1.0 + (1.0 + b * (1.0 + b)) * (2.0 * eps * b) * (2.0 * eps * b));
  }

  // Newton iteration for the reduced distance of closest approach r0:
  //   1 - phi(r0)/(r0 eps) - (b/r0)^2 = 0
  double r = b;
  {
    const double rr = -2.7 * std::log(eps * b);
    if (rr >= b) {
      r = rr;
      const double rr2 = -2.7 * std::log(eps * rr);
      if (rr2 >= b) r = rr2;
    }
  }
  double v = 0.0, v1 = 0.0;
  for (int it = 0; it < 100; ++it) {
    const auto [phi, dphi] = zbl_phi(r);
    v = phi / r;                   // reduced potential
    v1 = (dphi - v) / r;           // dv/dr
    const double fr = b * b / r + v * r / eps - r;
    const double fr1 = -b * b / (r * r) + (v + v1 * r) / eps - 1.0;
    const double q = fr / fr1;
    r -= q;
    if (std::abs(q / r) < 1e-9) break;
  }

  const double roc = -2.0 * (eps - v) / v1; // radius of curvature at r0
  const double sqe = std::sqrt(eps);
  constexpr double c1 = 0.99229, c2 = 0.011615, c3 = 0.0071222;
  constexpr double c4 = 14.813, c5 = 9.3066;
  const double beta = (c2 + sqe) / (c3 + sqe);
  const double A = 2.0 * eps * (1.0 + c1 / sqe) * std::pow(b, beta);
  const double G = ((c4 + eps) / (c5 + eps)) / (std::sqrt(A * A + 1.0) - A);
  const double delta = A * (r - b) / (1.0 + G);
  const double co = (b + delta + roc) / (r + roc);
  const double s2 = 1.0 - co * co;
  return std::clamp(s2, 0.0, 1.0);
}

void check_positive(double v, const char* what) {
  if (!(v > 0.0)) throw std::domain_error(std::string(what) + " must be positive");
}

struct Vec3 {
  double x, y, z;
};

// Deflect unit vector d by polar angle alpha with azimuth phi.
Vec3 deflect(const Vec3& d, double alpha, double phi) {
  const double sa = std::sin(alpha), ca = std::cos(alpha);
  const double sp = std::sin(phi), cp = std::cos(phi);
  // orthonormal basis around d
  Vec3 u;
  if (std::abs(d.z) < 0.99) {
    u = {-d.y, d.x, 0.0};
  } else {
    u = {0.0, -d.z, d.y};
  }
  const double un = std::sqrt(u.x * u.x + u.y * u.y + u.z * u.z);
  u = {u.x / un, u.y / un, u.z / un};
  const Vec3 w = {d.y * u.z - d.z * u.y, d.z * u.x - d.x * u.z,
                  d.x * u.y - d.y * u.x};
  Vec3 out = {ca * d.x + sa * (cp * u.x + sp * w.x),
              ca * d.y + sa * (cp * u.y + sp * w.y),
              ca * d.z + sa * (cp * u.z + sp * w.z)};
  const double n = std::sqrt(out.x * out.x + out.y * out.y + out.z * out.z);
  return {out.x / n, out.y / n, out.z / n};
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

} // namespace

double TargetMaterial::atomic_density_nm3() const {
  double mean_mass = 0.0;
  for (const auto& c : components) mean_mass += c.fraction * c.mass_amu;
  // g/cm^3 -> atoms/nm^3
  return mass_density_g_cm3 / mean_mass * kAvogadro * 1e-21;
}

void TargetMaterial::validate() const {
  if (components.empty())
    throw std::invalid_argument("target has no components");
  double fsum = 0.0;
  for (const auto& c : components) {
    fsum += c.fraction;
    if (!(c.displacement_ev > 0.0))
      throw std::invalid_argument("displacement energy must be positive");
    if (c.z <= 0 || !(c.mass_amu > 0.0))
      throw std::invalid_argument("bad component species");
  }
  if (std::abs(fsum - 1.0) > 1e-12)
    throw std::invalid_argument("component fractions must sum to 1");
  if (!(mass_density_g_cm3 > 0.0))
    throw std::invalid_argument("density must be positive");
}

TargetMaterial TargetMaterial::sic_4h() {
  TargetMaterial t;
  t.mass_density_g_cm3 = 3.21;
  t.components = {
      {14, 28.0855, 0.5, 35.0, 4.7},
      {6, 12.011, 0.5, 20.0, 7.4},
  };
  return t;
}

void IonBeamSpec::validate() const {
  if (!(energy_kev > 0.0)) throw std::invalid_argument("beam energy must be positive");
  if (!(incidence_deg >= 0.0 && incidence_deg < 90.0))
    throw std::invalid_argument("incidence must be in [0, 90) degrees");
  if (z <= 0 || !(mass_amu > 0.0)) throw std::invalid_argument("bad ion species");
}

IonBeamSpec IonBeamSpec::helium(double energy_kev) {
  return IonBeamSpec{2, 4.0026, energy_kev, 0.0};
}

double max_energy_transfer_kev(double e_kev, double m1_amu, double m2_amu) {
  check_positive(e_kev, "energy");
  check_positive(m1_amu, "m1");
  check_positive(m2_amu, "m2");
  const double s = m1_amu + m2_amu;
  return 4.0 * m1_amu * m2_amu / (s * s) * e_kev;
}

ScatterResult scattering_event(double e_kev, double impact_nm, int ion_z,
                               double ion_mass_amu, const Component& partner) {
  check_positive(e_kev, "energy");
  if (impact_nm < 0.0) throw std::domain_error("impact parameter must be >= 0");

  const double a = screening_length_nm(ion_z, partner.z);
  const double e_cm_ev =
      e_kev * 1e3 * partner.mass_amu / (ion_mass_amu + partner.mass_amu);
  const double eps = a * e_cm_ev / (ion_z * partner.z * kE2);
  const double s2 = magic_s2(eps, impact_nm / a);

  const double tmax_ev =
      max_energy_transfer_kev(e_kev, ion_mass_amu, partner.mass_amu) * 1e3;
  const double theta_cm = 2.0 * std::asin(std::sqrt(s2));
  const double mu = ion_mass_amu / partner.mass_amu;
  const double theta_lab =
      std::atan2(std::sin(theta_cm), std::cos(theta_cm) + mu);
  return {theta_lab, theta_cm, tmax_ev * s2};
}

double electronic_stopping(double e_kev, const TargetMaterial& target) {
  if (e_kev < 0.0) throw std::domain_error("energy must be >= 0");
  if (e_kev == 0.0) return 0.0;
  const int z1 = 2; // He; stopping is tabulated for the beam species in use
  const double m1 = 4.0026;
  const double n_tot = target.atomic_density_nm3(); // atoms/nm^3
  double s = 0.0;
  for (const auto& c : target.components) {
    const double z2 = c.z;
    const double denom =
        std::pow(std::pow(z1, 2.0 / 3.0) + std::pow(z2, 2.0 / 3.0), 1.5);
    // Lindhard-Scharff per-atom cross section, 1e-15 eV cm^2
    const double sigma =
        3.83 * std::pow(z1, 7.0 / 6.0) * z2 / denom * std::sqrt(e_kev / m1);
    // atoms/nm^3 * 1e-15 eV cm^2: 1 cm^2 = 1e14 nm^2
    s += c.fraction * n_tot * sigma * 1e-15 * 1e14;
  }
  return kStoppingCorrection * s;
}

double vacancies_from_recoil(double transfer_ev, double displacement_ev) {
  if (transfer_ev < 0.0) throw std::domain_error("transfer must be >= 0");
  check_positive(displacement_ev, "displacement energy");
  if (transfer_ev < displacement_ev) return 0.0;
  const double kp = 0.8 * transfer_ev / (2.0 * displacement_ev);
  return kp < 1.0 ? 1.0 : kp;
}

IonHistory simulate_ion(const IonBeamSpec& beam, const TargetMaterial& target,
                        std::uint64_t seed, const TransportParams& params) {
  beam.validate();
  target.validate();

  rng::Stream rng(seed);
  IonHistory h;
  h.initial_energy_ev = beam.energy_kev * 1e3;

  const double n_density = target.atomic_density_nm3();
  const double mfp = std::pow(n_density, -1.0 / 3.0);
  const double pmax = 1.0 / std::sqrt(3.14159265358979323846 * n_density * mfp);

  double e_ev = h.initial_energy_ev;
  const double inc = beam.incidence_deg * 3.14159265358979323846 / 180.0;
  Vec3 pos{0.0, 0.0, 0.0};
  Vec3 dir{std::sin(inc), 0.0, std::cos(inc)};

  if (e_ev < params.cutoff_ev) {
    h.residual_ev = e_ev;
    h.stop_nm = {0.0, 0.0, 0.0};
    return h;
  }

  for (;;) {
    // free flight with electronic slowing
    const double de = std::min(
        electronic_stopping(e_ev * 1e-3, target) * mfp, e_ev);
    e_ev -= de;
    h.electronic_loss_ev += de;
    pos = {pos.x + dir.x * mfp, pos.y + dir.y * mfp, pos.z + dir.z * mfp};

    if (pos.z < 0.0) {
      // left through the surface
      h.backscattered = true;
      pos.z = 0.0;
      h.residual_ev = e_ev;
      break;
    }
    if (e_ev < params.cutoff_ev) {
      h.residual_ev = e_ev;
      break;
    }

    // pick collision partner by stoichiometry
    double u = rng.uniform();
    const Component* partner = &target.components.back();
    for (const auto& c : target.components) {
      if (u < c.fraction) {
        partner = &c;
        break;
      }
      u -= c.fraction;
    }

    const double b = pmax * std::sqrt(rng.uniform());
    const ScatterResult sc = scattering_event(e_ev * 1e-3, b, beam.z,
                                              beam.mass_amu, *partner);
    const double vac = vacancies_from_recoil(sc.transfer_ev,
                                             partner->displacement_ev);
    if (vac > 0.0 || sc.transfer_ev > 0.0) {
      h.collisions.push_back(
          {{pos.x, pos.y, pos.z}, sc.transfer_ev, partner->z, vac});
    }
    if (partner->z == 14)
      h.vacancies_si += vac;
    else
      h.vacancies_c += vac;

    e_ev -= sc.transfer_ev;
    const double phi = 6.283185307179586 * rng.uniform();
    dir = deflect(dir, sc.lab_angle_rad, phi);

    if (e_ev < params.cutoff_ev) {
      h.residual_ev = e_ev;
      break;
    }
  }
  h.stop_nm = {pos.x, pos.y, pos.z};
  return h;
}

namespace {

struct BlockResult {
  std::vector<double> depths;
  std::vector<double> lat_x;
  std::vector<double> lat_y;
  std::vector<double> vac_bins;
  std::vector<double> vac_bins_si;
  double vac_total = 0.0;
  std::uint64_t backscattered = 0;
};

} // namespace

ImplantProfile simulate_profile(const IonBeamSpec& beam,
                                const TargetMaterial& target,
                                std::uint64_t n_ions, std::uint64_t seed,
                                const TransportParams& params) {
  if (n_ions < 1) throw std::invalid_argument("n_ions must be >= 1");
  beam.validate();
  target.validate();

  const std::size_t n_depth_bins =
      static_cast<std::size_t>(params.depth_max_nm / params.depth_bin_nm);
  const std::size_t n_lat_bins =
      static_cast<std::size_t>(params.lateral_max_nm / params.lateral_bin_nm);

  constexpr std::uint64_t kBlock = 256;
  const std::uint64_t n_blocks = (n_ions + kBlock - 1) / kBlock;
  std::vector<BlockResult> blocks(n_blocks);

  auto depth_bin = [&](double z) {
    auto i = static_cast<std::size_t>(std::max(z, 0.0) / params.depth_bin_nm);
    return std::min(i, n_depth_bins - 1);
  };

  auto run_block = [&](std::uint64_t bi) {
    BlockResult& r = blocks[bi];
    r.vac_bins.assign(n_depth_bins, 0.0);
    r.vac_bins_si.assign(n_depth_bins, 0.0);
    const std::uint64_t lo = bi * kBlock;
    const std::uint64_t hi = std::min(lo + kBlock, n_ions);
    for (std::uint64_t i = lo; i < hi; ++i) {
      const auto ion_seed =
          rng::derive_seed(seed, "transport/ion/" + std::to_string(i));
      const IonHistory h = simulate_ion(beam, target, ion_seed, params);
      if (h.backscattered) {
        ++r.backscattered;
        r.depths.push_back(0.0);
      } else {
        r.depths.push_back(h.stop_nm[2]);
      }
      r.lat_x.push_back(h.stop_nm[0]);
      r.lat_y.push_back(h.stop_nm[1]);
      for (const auto& c : h.collisions) {
        if (c.vacancies <= 0.0) continue;
        const auto b = depth_bin(c.position_nm[2]);
        r.vac_bins[b] += c.vacancies;
        if (c.partner_z == 14) r.vac_bins_si[b] += c.vacancies;
      }
      r.vac_total += h.vacancies_si + h.vacancies_c;
    }
  };

  unsigned n_threads = params.n_threads;
  if (n_threads == 0) n_threads = std::max(1u, std::thread::hardware_concurrency());
  if (n_threads > 1 && n_blocks > 1) {
    std::vector<std::thread> pool;
    std::atomic<std::uint64_t> next{0};
    for (unsigned t = 0; t < n_threads; ++t) {
      pool.emplace_back([&] {
        for (;;) {
          const std::uint64_t bi = next.fetch_add(1);
          if (bi >= n_blocks) return;
          run_block(bi);
        }
      });
    }
    for (auto& th : pool) th.join();
  } else {
    for (std::uint64_t bi = 0; bi < n_blocks; ++bi) run_block(bi);
  }

  ImplantProfile p;
  p.n_ions = n_ions;
  p.seed = seed;
  p.depth_edges_nm.resize(n_depth_bins + 1);
  for (std::size_t i = 0; i <= n_depth_bins; ++i)
    p.depth_edges_nm[i] = static_cast<double>(i) * params.depth_bin_nm;
  p.lateral_edges_nm.resize(n_lat_bins + 1);
  for (std::size_t i = 0; i <= n_lat_bins; ++i)
    p.lateral_edges_nm[i] = static_cast<double>(i) * params.lateral_bin_nm;
  p.ion_counts.assign(n_depth_bins, 0);
  p.vacancy_counts.assign(n_depth_bins, 0.0);
  p.vacancy_counts_si.assign(n_depth_bins, 0.0);
  p.lateral_counts.assign(n_lat_bins, 0);

  // merge in fixed block order so the result is thread-count independent
  double sum_z = 0.0, sum_x = 0.0, sum_y = 0.0;
  std::uint64_t n_implanted = 0;
  for (auto& r : blocks) {
    p.n_backscattered += r.backscattered;
    for (std::size_t i = 0; i < n_depth_bins; ++i) {
      p.vacancy_counts[i] += r.vac_bins[i];
      p.vacancy_counts_si[i] += r.vac_bins_si[i];
    }
    for (std::size_t k = 0; k < r.depths.size(); ++k) {
      p.ion_counts[depth_bin(r.depths[k])]++;
      if (r.depths[k] > 0.0) {
        sum_z += r.depths[k];
        sum_x += r.lat_x[k];
        sum_y += r.lat_y[k];
        ++n_implanted;
      }
      const double lat = std::hypot(r.lat_x[k], r.lat_y[k]);
      auto li = static_cast<std::size_t>(lat / params.lateral_bin_nm);
      p.lateral_counts[std::min(li, n_lat_bins - 1)]++;
    }
    p.vacancies_per_ion += r.vac_total;
  }
  p.vacancies_per_ion /= static_cast<double>(n_ions);

  if (n_implanted > 0) {
    const double n = static_cast<double>(n_implanted);
    const double mz = sum_z / n, mx = sum_x / n, my = sum_y / n;
    double vz = 0.0, vx = 0.0, vy = 0.0;
    for (auto& r : blocks) {
      for (std::size_t k = 0; k < r.depths.size(); ++k) {
        if (r.depths[k] <= 0.0) continue;
        vz += (r.depths[k] - mz) * (r.depths[k] - mz);
        vx += (r.lat_x[k] - mx) * (r.lat_x[k] - mx);
        vy += (r.lat_y[k] - my) * (r.lat_y[k] - my);
      }
    }
    p.mean_depth_nm = mz;
    p.lat_mean_x_nm = mx;
    p.lat_mean_y_nm = my;
    p.long_straggle_nm = std::sqrt(vz / n);
    p.lat_straggle_x_nm = std::sqrt(vx / n);
    p.lat_straggle_y_nm = std::sqrt(vy / n);
    p.lat_straggle_radial_nm =
        std::sqrt(p.lat_straggle_x_nm * p.lat_straggle_x_nm +
                  p.lat_straggle_y_nm * p.lat_straggle_y_nm);
  }
  return p;
}

std::string ImplantProfile::to_csv() const {
  std::string out = "depth_nm,ion_count,vacancy_count\n";
  for (std::size_t i = 0; i < ion_counts.size(); ++i) {
    const double center = 0.5 * (depth_edges_nm[i] + depth_edges_nm[i + 1]);
    out += format_double(center);
    out += ',';
    out += std::to_string(ion_counts[i]);
    out += ',';
    out += format_double(vacancy_counts[i]);
    out += '\n';
  }
  return out;
}

std::string ImplantProfile::summary_json() const {
  nlohmann::ordered_json j;
  j["mean_depth_nm"] = mean_depth_nm;
  j["long_straggle_nm"] = long_straggle_nm;
  j["lat_straggle_nm"] = lat_straggle_radial_nm;
  j["lat_straggle_x_nm"] = lat_straggle_x_nm;
  j["lat_straggle_y_nm"] = lat_straggle_y_nm;
  j["vacancies_per_ion"] = vacancies_per_ion;
  j["n_ions"] = n_ions;
  j["n_backscattered"] = n_backscattered;
  j["seed"] = seed;
  return j.dump(2);
}

double ImplantProfile::sample_vacancy_depth(double u1, double u2) const {
  double total = std::accumulate(vacancy_counts_si.begin(),
                                 vacancy_counts_si.end(), 0.0);
  if (total <= 0.0) return 0.0;
  double acc = 0.0;
  const double pick = u1 * total;
  for (std::size_t i = 0; i < vacancy_counts_si.size(); ++i) {
    acc += vacancy_counts_si[i];
    if (pick < acc) {
      return depth_edges_nm[i] +
             u2 * (depth_edges_nm[i + 1] - depth_edges_nm[i]);
    }
  }
  return depth_edges_nm.back();
}

} // namespace sivsim::transport
