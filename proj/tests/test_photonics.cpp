#include <doctest.h>
#include <sivsim/photonics.hpp>
#include <sivsim/rng.hpp>

#include <array>
#include <cmath>
#include <stdexcept>
#include <numeric>

using namespace sivsim;
using doctest::Approx;

TEST_CASE("saturation curve") {
  CHECK(photonics::saturation_intensity(0.0, 14.86, 0.47) == 0.0);
  // half the maximum exactly at P = P_S
  CHECK(photonics::saturation_intensity(0.47, 14.86, 0.47) == Approx(7.43));
  CHECK(photonics::saturation_intensity(0.5, 14.86, 0.47) ==
        Approx(7.65979381443299).epsilon(1e-12));
  CHECK(photonics::saturation_intensity(1e6, 14.86, 0.47) ==
        Approx(14.86).epsilon(1e-5));
  CHECK_THROWS_AS(photonics::saturation_intensity(-0.1, 14.86, 0.47),
                  std::domain_error);
}

TEST_CASE("g2 model shape") {
  // default emitter: a=0.30, b=0.33
  CHECK(photonics::g2_model(0.0, 0.30, 0.33, 30.0, 300.0) ==
        Approx(0.03).epsilon(1e-12));
  CHECK(photonics::g2_model(30.0, 0.30, 0.33, 30.0, 300.0) ==
        Approx(0.82035280).epsilon(1e-6));
  CHECK(photonics::g2_model(1e5, 0.30, 0.33, 30.0, 300.0) ==
        Approx(1.0).epsilon(1e-9));
  CHECK(photonics::g2_model(-17.0, 0.30, 0.33, 30.0, 300.0) ==
        Approx(photonics::g2_model(17.0, 0.30, 0.33, 30.0, 300.0)));
  CHECK_THROWS_AS(photonics::g2_model(1.0, 0.3, 0.33, -30.0, 300.0),
                  std::domain_error);
}

namespace {

// ODE oracle: evolve the three-level master equation with RK4 from the
// post-emission state (all population in the ground level) and compare
// p_e(t)/p_e_ss with the target biexponential.
std::array<double, 3> deriv(const std::array<double, 3>& p,
                            const photonics::ThreeLevelRates& r) {
  return {-r.pump * p[0] + r.emit * p[1] + r.deshelve * p[2],
          r.pump * p[0] - (r.emit + r.shelve) * p[1],
          r.shelve * p[1] - r.deshelve * p[2]};
}

double excited_at(double t_ns, const photonics::ThreeLevelRates& r) {
  std::array<double, 3> p{1.0, 0.0, 0.0};
  const double dt = 0.002;
  const auto n = static_cast<long>(t_ns / dt);
  for (long i = 0; i < n; ++i) {
    const auto k1 = deriv(p, r);
    std::array<double, 3> p2;
    for (int j = 0; j < 3; ++j) p2[j] = p[j] + 0.5 * dt * k1[j];
    const auto k2 = deriv(p2, r);
    for (int j = 0; j < 3; ++j) p2[j] = p[j] + 0.5 * dt * k2[j];
    const auto k3 = deriv(p2, r);
    for (int j = 0; j < 3; ++j) p2[j] = p[j] + dt * k3[j];
    const auto k4 = deriv(p2, r);
    for (int j = 0; j < 3; ++j)
      p[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
  }
  return p[1];
}

} // namespace

TEST_CASE("three-level rates reproduce the biexponential g2") {
  for (double c : {0.1, 0.34, 0.8}) {
    const auto r = photonics::solve_three_level_rates(c, 30.0, 300.0);
    CHECK(r.pump > 0.0);
    CHECK(r.emit > 0.0);
    CHECK(r.shelve > 0.0);
    CHECK(r.deshelve > 0.0);
    // stationary excited population
    const double denom = r.deshelve * (r.pump + r.emit + r.shelve) +
                         r.pump * r.shelve;
    CHECK(r.excited_ss == Approx(r.pump * r.deshelve / denom).epsilon(1e-9));
    for (double t : {5.0, 30.0, 100.0, 400.0, 1200.0}) {
      const double g2 = excited_at(t, r) / r.excited_ss;
      const double want = 1.0 - (1.0 + c) * std::exp(-t / 30.0) +
                          c * std::exp(-t / 300.0);
      INFO("c=", c, " t=", t);
      CHECK(g2 == Approx(want).epsilon(1e-4).scale(1e-4));
    }
  }
  CHECK_THROWS_AS(photonics::solve_three_level_rates(0.5, 300.0, 30.0),
                  std::domain_error);
}

namespace {

photonics::PixelSpec small_scan(int n = 41) {
  photonics::PixelSpec px;
  px.width = n;
  px.height = n;
  px.pitch_um = 0.1;
  px.dwell_s = 0.005;
  px.origin_x_um = -2.0;
  px.origin_y_um = -2.0;
  return px;
}

patterning::DefectArray one_defect_array(double brightness = 1.0) {
  patterning::DefectArray arr;
  patterning::SpotRecord rec;
  rec.spot = {0, 0, 0.0, 0.0};
  rec.defects.push_back({0.0, 0.0, 180.0, brightness});
  arr.spots.push_back(rec);
  arr.dose = 1.0;
  arr.conversion_yield = 1.0;
  return arr;
}

} // namespace

TEST_CASE("scan render invariants") {
  const photonics::EmitterModel em;
  const photonics::OpticsSpec optics{0.5, 2.0};
  const auto px = small_scan();

  SUBCASE("empty array is pure background") {
    const patterning::DefectArray empty;
    const auto img = photonics::render_scan(empty, optics, 0.5, em, px, 3);
    double total = std::accumulate(img.counts.begin(), img.counts.end(), 0.0);
    const double expect = 2000.0 * px.dwell_s * px.width * px.height;
    CHECK(total == Approx(expect).epsilon(4.0 / std::sqrt(expect)));
  }

  SUBCASE("total counts match background plus emitter flux") {
    const auto arr = one_defect_array();
    const auto img = photonics::render_scan(arr, optics, 0.5, em, px, 3);
    double total = std::accumulate(img.counts.begin(), img.counts.end(), 0.0);
    // Gaussian PSF integrates over pixels to ~ I * sum(G) with
    // sum(G) = 2 pi sigma^2 / pitch^2 for a well-sampled kernel
    const double sigma_px = 0.5 / 2.354820045 / px.pitch_um;
    const double psf_sum = 2.0 * 3.14159265358979 * sigma_px * sigma_px;
    const double rate_cps =
        photonics::saturation_intensity(0.5, em.i_s_kcps, em.p_s_mw) * 1e3;
    const double expect =
        (2000.0 * px.width * px.height + rate_cps * psf_sum) * px.dwell_s;
    CHECK(total == Approx(expect).epsilon(0.02));
  }

  SUBCASE("zero-width psf concentrates in one pixel") {
    const auto arr = one_defect_array();
    const photonics::OpticsSpec delta{0.0, 0.0};
    const auto img = photonics::render_scan(arr, delta, 0.5, em, px, 3);
    const int cx = static_cast<int>(std::lround(-px.origin_x_um / px.pitch_um));
    double total = std::accumulate(img.counts.begin(), img.counts.end(), 0.0);
    CHECK(static_cast<double>(img.at(cx, cx)) == total);
    CHECK(total > 0.0);
  }

  SUBCASE("deterministic under seed") {
    const auto arr = one_defect_array();
    const auto a = photonics::render_scan(arr, optics, 0.5, em, px, 11);
    const auto b = photonics::render_scan(arr, optics, 0.5, em, px, 11);
    const auto c = photonics::render_scan(arr, optics, 0.5, em, px, 12);
    CHECK(a.to_pgm() == b.to_pgm());
    CHECK(a.to_pgm() != c.to_pgm());
  }

  SUBCASE("pgm round trip") {
    const auto arr = one_defect_array();
    const auto a = photonics::render_scan(arr, optics, 0.5, em, px, 11);
    const auto rt = photonics::ScanImage::from_pgm(a.to_pgm(), a.sidecar_json());
    CHECK(rt.counts == a.counts);
    CHECK(rt.width == a.width);
    CHECK(rt.pitch_um == Approx(a.pitch_um));
    CHECK(rt.dwell_s == Approx(a.dwell_s));
    CHECK(rt.power_mw == Approx(a.power_mw));
    CHECK(rt.origin_x_um == Approx(a.origin_x_um));
    CHECK(rt.to_pgm() == a.to_pgm());
  }
}

TEST_CASE("photon trace rates and determinism") {
  const photonics::EmitterModel em;
  const double duration = 20.0;
  const auto tr = photonics::simulate_photon_trace(1, 6.0, 2.0, em, duration, 5);
  const double n = static_cast<double>(tr.det1_ns.size() + tr.det2_ns.size());
  const double expect = 8000.0 * duration;
  CHECK(n == Approx(expect).epsilon(4.0 / std::sqrt(expect)));
  // detectors are balanced by the 50:50 splitter
  CHECK(static_cast<double>(tr.det1_ns.size()) ==
        Approx(0.5 * n).epsilon(5.0 / std::sqrt(n)));
  CHECK(std::is_sorted(tr.det1_ns.begin(), tr.det1_ns.end()));
  CHECK(std::is_sorted(tr.det2_ns.begin(), tr.det2_ns.end()));
  CHECK(tr.det1_ns.back() <= duration * 1e9);

  const auto tr2 = photonics::simulate_photon_trace(1, 6.0, 2.0, em, duration, 5);
  CHECK(tr.to_csv() == tr2.to_csv());
  const auto tr3 = photonics::simulate_photon_trace(1, 6.0, 2.0, em, duration, 6);
  CHECK(tr.to_csv() != tr3.to_csv());

  photonics::EmitterModel bad = em;
  bad.b = 0.1; // g2(0) = b - a < 0 is not realizable
  CHECK_THROWS(photonics::simulate_photon_trace(1, 6.0, 2.0, bad, 1.0, 5));
}

TEST_CASE("trace csv round trip") {
  const photonics::EmitterModel em;
  const auto tr = photonics::simulate_photon_trace(1, 6.0, 2.0, em, 2.0, 5);
  const auto rt = photonics::PhotonTrace::from_csv(
      tr.to_csv(), tr.duration_s, tr.signal_kcps, tr.background_kcps);
  CHECK(rt.det1_ns.size() == tr.det1_ns.size());
  CHECK(rt.det2_ns.size() == tr.det2_ns.size());
  CHECK(rt.to_csv() == tr.to_csv());
}

TEST_CASE("correlation of a Poisson trace is flat at unity") {
  photonics::EmitterModel em;
  // signal 0: background only, ideal Poisson statistics
  const auto tr = photonics::simulate_photon_trace(0, 0.0, 10.0, em, 200.0, 8);
  const auto h = photonics::correlate(tr, 20.0, 2000.0);
  REQUIRE(h.counts.size() == 200);
  double mean = std::accumulate(h.c_n.begin(), h.c_n.end(), 0.0) /
                static_cast<double>(h.c_n.size());
  CHECK(mean == Approx(1.0).epsilon(0.02));
  for (double v : h.c_n) CHECK(v == Approx(1.0).epsilon(0.5));
  // edges are symmetric about zero
  for (std::size_t i = 0; i < h.edges_ns.size(); ++i)
    CHECK(h.edges_ns[i] ==
          Approx(-h.edges_ns[h.edges_ns.size() - 1 - i]).scale(1.0));
}

TEST_CASE("correlation detector swap mirrors the histogram") {
  const photonics::EmitterModel em;
  auto tr = photonics::simulate_photon_trace(1, 6.0, 2.0, em, 50.0, 13);
  const auto h = photonics::correlate(tr, 10.0, 500.0);
  std::swap(tr.det1_ns, tr.det2_ns);
  const auto m = photonics::correlate(tr, 10.0, 500.0);
  REQUIRE(h.counts.size() == m.counts.size());
  for (std::size_t i = 0; i < h.counts.size(); ++i)
    CHECK(h.counts[i] == m.counts[m.counts.size() - 1 - i]);
}

TEST_CASE("correlation bin refinement conserves pairs") {
  const photonics::EmitterModel em;
  const auto tr = photonics::simulate_photon_trace(1, 6.0, 2.0, em, 50.0, 13);
  const auto coarse = photonics::correlate(tr, 20.0, 2000.0);
  const auto fine = photonics::correlate(tr, 5.0, 2000.0);
  const auto sum = [](const photonics::CorrelationHistogram& h) {
    return std::accumulate(h.counts.begin(), h.counts.end(), std::uint64_t{0});
  };
  CHECK(sum(coarse) == sum(fine));
}

TEST_CASE("antibunching dip and background mixing") {
  const photonics::EmitterModel em; // g2(0) = 0.03
  const auto tr = photonics::simulate_photon_trace(1, 6.0, 2.0, em, 400.0, 17);
  const auto h = photonics::correlate(tr, 5.0, 1500.0);
  const auto centers = h.centers_ns();
  double center_acc = 0.0, far_acc = 0.0;
  int nc = 0, nf = 0;
  for (std::size_t i = 0; i < centers.size(); ++i) {
    if (std::abs(centers[i]) < 12.0) {
      center_acc += h.c_n[i];
      ++nc;
    } else if (std::abs(centers[i]) > 1200.0) {
      far_acc += h.c_n[i];
      ++nf;
    }
  }
  REQUIRE(nc > 0);
  REQUIRE(nf > 0);
  // C_N(0) = 1 - rho^2 + rho^2 g2(0) with rho = 6/8; bin smearing and shot
  // noise motivate the band
  CHECK(center_acc / nc > 0.25);
  CHECK(center_acc / nc < 0.68);
  CHECK(far_acc / nf == Approx(1.0).epsilon(0.05));

  CHECK_THROWS(photonics::correlate(photonics::PhotonTrace{}, 10.0, 100.0));
}

TEST_CASE("two emitters halve the dip") {
  const photonics::EmitterModel em;
  const auto tr = photonics::simulate_photon_trace(2, 6.0, 0.0, em, 200.0, 19);
  const auto h = photonics::correlate(tr, 5.0, 1500.0);
  const auto centers = h.centers_ns();
  double center_acc = 0.0;
  int nc = 0;
  for (std::size_t i = 0; i < centers.size(); ++i)
    if (std::abs(centers[i]) < 12.0) {
      center_acc += h.c_n[i];
      ++nc;
    }
  // background-free two-emitter g2(0) = 0.5 (1 + g2_single(0)) ~ 0.515
  CHECK(center_acc / nc == Approx(0.515).epsilon(0.35));
}

TEST_CASE("histogram csv round trip") {
  const photonics::EmitterModel em;
  const auto tr = photonics::simulate_photon_trace(1, 6.0, 2.0, em, 20.0, 23);
  const auto h = photonics::correlate(tr, 10.0, 300.0);
  const auto rt = photonics::CorrelationHistogram::from_csv(h.to_csv());
  CHECK(rt.counts == h.counts);
  REQUIRE(rt.c_n.size() == h.c_n.size());
  for (std::size_t i = 0; i < h.c_n.size(); ++i)
    CHECK(rt.c_n[i] == Approx(h.c_n[i]).epsilon(1e-8));
  CHECK(rt.to_csv() == h.to_csv());
}
