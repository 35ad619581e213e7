#include <doctest.h>
#include <sivsim/patterning.hpp>

#include <cmath>
#include <stdexcept>

using namespace sivsim;
using doctest::Approx;

TEST_CASE("dose arithmetic") {
  // published dwell/current pairs for the five nominal dose classes
  CHECK(patterning::dose_from_dwell(0.420, 37.6) == Approx(98.5659113));
  CHECK(patterning::dose_from_dwell(0.419, 31.2) == Approx(81.5939998));
  CHECK(patterning::dose_from_dwell(0.423, 23.8) == Approx(62.8357685));
  CHECK(patterning::dose_from_dwell(0.417, 15.6) == Approx(40.6022648));
  CHECK(patterning::dose_from_dwell(0.412, 7.9) == Approx(20.3148637));

  CHECK(patterning::dose_uncertainty(0.4, 0.1) == Approx(0.2496603630));

  for (double dose : {1.0, 20.0, 100.0}) {
    const double dwell = patterning::dwell_for_dose(dose, 0.4);
    CHECK(patterning::dose_from_dwell(0.4, dwell) == Approx(dose));
  }
}

TEST_CASE("poisson pmf") {
  CHECK(patterning::poisson_pmf(1, 1.39) == Approx(0.34621467343802).epsilon(1e-12));
  CHECK(patterning::poisson_pmf(0, 5.442) == Approx(4.330812977381e-3).epsilon(1e-12));
  CHECK(patterning::poisson_pmf(3, 5.442) == Approx(0.11633055268614).epsilon(1e-12));
  CHECK(patterning::poisson_pmf(0, 0.0) == 1.0);
  CHECK(patterning::poisson_pmf(5, 0.0) == 0.0);
  // large k stays finite through the log-space evaluation
  CHECK(patterning::poisson_pmf(150, 5.442) > 0.0);
  CHECK_THROWS_AS(patterning::poisson_pmf(0, -0.1), std::domain_error);

  double total = 0.0;
  for (std::uint64_t k = 0; k <= 200; ++k)
    total += patterning::poisson_pmf(k, 5.442);
  CHECK(total == Approx(1.0).epsilon(1e-12));
}

TEST_CASE("pattern geometry") {
  const auto p = patterning::build_pattern(10, 10, 3.0);
  CHECK(p.spots.size() == 100);
  CHECK(p.width_um() == Approx(27.0));
  CHECK(p.height_um() == Approx(27.0));
  CHECK(p.spots.front().x_um == Approx(0.0));
  CHECK(p.spots.back().x_um == Approx(27.0));
  CHECK(p.spots.back().y_um == Approx(27.0));
  const auto q = patterning::build_pattern(2, 3, 1.5, 10.0, -4.0);
  CHECK(q.spots.size() == 6);
  CHECK(q.spots.front().x_um == Approx(10.0));
  CHECK(q.spots.front().y_um == Approx(-4.0));
}

namespace {

transport::ImplantProfile reference_profile() {
  static const auto p = transport::simulate_profile(
      transport::IonBeamSpec::helium(30.0),
      transport::TargetMaterial::sic_4h(), 3000, 1234);
  return p;
}

} // namespace

TEST_CASE("defect array sampling statistics") {
  const auto profile = reference_profile();
  const auto pattern = patterning::build_pattern(100, 100, 1.0);
  const double dose = 20.0, eta = 0.0695; // lambda = 1.39
  const auto arr =
      patterning::sample_defect_array(pattern, dose, eta, profile, 77);

  REQUIRE(arr.spots.size() == 10000);
  double sum_k = 0.0;
  for (const auto& s : arr.spots) sum_k += static_cast<double>(s.k());
  const double mean_k = sum_k / 10000.0;
  CHECK(mean_k == Approx(1.39).epsilon(0.03)); // ~3.5 sigma band

  double var_k = 0.0;
  for (const auto& s : arr.spots) {
    const double d = static_cast<double>(s.k()) - mean_k;
    var_k += d * d;
  }
  var_k /= 9999.0;
  CHECK(var_k / mean_k == Approx(1.0).epsilon(0.06)); // Poisson dispersion

  // lateral displacements reproduce the per-axis implant straggle
  double ss = 0.0, n = 0.0, depth_sum = 0.0;
  for (const auto& s : arr.spots)
    for (const auto& d : s.defects) {
      ss += d.dx_nm * d.dx_nm;
      depth_sum += d.depth_nm;
      n += 1.0;
    }
  const double sd = std::sqrt(ss / n);
  const double sigma_ref =
      0.5 * (profile.lat_straggle_x_nm + profile.lat_straggle_y_nm);
  CHECK(sd == Approx(sigma_ref).epsilon(0.05));

  // depths follow the Si-vacancy histogram
  double wsum = 0.0, w = 0.0;
  for (std::size_t i = 0; i < profile.vacancy_counts_si.size(); ++i) {
    const double c =
        0.5 * (profile.depth_edges_nm[i] + profile.depth_edges_nm[i + 1]);
    wsum += c * profile.vacancy_counts_si[i];
    w += profile.vacancy_counts_si[i];
  }
  CHECK(depth_sum / n == Approx(wsum / w).epsilon(0.05));
}

TEST_CASE("defect array json round trip and determinism") {
  const auto profile = reference_profile();
  const auto pattern = patterning::build_pattern(4, 5, 2.0);
  const auto a =
      patterning::sample_defect_array(pattern, 40.0, 0.06, profile, 9);
  const auto b =
      patterning::sample_defect_array(pattern, 40.0, 0.06, profile, 9);
  CHECK(a.to_json() == b.to_json());
  const auto c =
      patterning::sample_defect_array(pattern, 40.0, 0.06, profile, 10);
  CHECK(a.to_json() != c.to_json());

  const auto rt = patterning::DefectArray::from_json(a.to_json());
  CHECK(rt.to_json() == a.to_json());
  CHECK(rt.spots.size() == a.spots.size());
  CHECK(rt.dose == a.dose);
  CHECK(rt.seed == a.seed);
}
