#include <sivsim/patterning.hpp>
#include <sivsim/rng.hpp>

#include <cmath>
#include <stdexcept>

#include <json.hpp>

namespace sivsim::patterning {

double dose_from_dwell(double current_pa, double dwell_us) {
  if (!(current_pa > 0.0)) throw std::domain_error("current must be positive");
  if (dwell_us < 0.0) throw std::domain_error("dwell time must be >= 0");
  // pA * us = 1e-18 C
  return current_pa * dwell_us * 1e-18 / kElementaryChargeC;
}

double dwell_for_dose(double dose_ions, double current_pa) {
  if (!(current_pa > 0.0)) throw std::domain_error("current must be positive");
  if (dose_ions < 0.0) throw std::domain_error("dose must be >= 0");
  return dose_ions * kElementaryChargeC / (current_pa * 1e-18);
}

double dose_uncertainty(double current_pa, double dwell_resolution_us) {
  if (!(current_pa > 0.0) || !(dwell_resolution_us > 0.0))
    throw std::domain_error("inputs must be positive");
  return dose_from_dwell(current_pa, dwell_resolution_us);
}

double poisson_pmf(std::uint64_t k, double lambda) {
  if (lambda < 0.0) throw std::domain_error("lambda must be >= 0");
  if (lambda == 0.0) return k == 0 ? 1.0 : 0.0;
  // log-space evaluation; exact enough for the summation invariant at k<=200
  double log_p = -lambda + static_cast<double>(k) * std::log(lambda) -
                 std::lgamma(static_cast<double>(k) + 1.0);
  return std::exp(log_p);
}

SpotPattern build_pattern(int rows, int cols, double pitch_um,
                          double origin_x_um, double origin_y_um) {
  if (rows < 1 || cols < 1) throw std::invalid_argument("rows/cols must be >= 1");
  if (!(pitch_um > 0.0)) throw std::invalid_argument("pitch must be positive");
  SpotPattern p;
  p.rows = rows;
  p.cols = cols;
  p.pitch_um = pitch_um;
  p.origin_x_um = origin_x_um;
  p.origin_y_um = origin_y_um;
  p.spots.reserve(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      p.spots.push_back({r, c, origin_x_um + c * pitch_um,
                         origin_y_um + r * pitch_um});
  return p;
}

DefectArray sample_defect_array(const SpotPattern& pattern, double dose,
                                double eta,
                                const transport::ImplantProfile& profile,
                                std::uint64_t seed,
                                const SamplingOptions& opts) {
  if (dose < 0.0) throw std::domain_error("dose must be >= 0");
  if (!(eta >= 0.0 && eta <= 1.0))
    throw std::domain_error("conversion yield must be in [0,1]");

  const double lambda = eta * dose;
  const double sigma_lat =
      0.5 * (profile.lat_straggle_x_nm + profile.lat_straggle_y_nm);

  DefectArray out;
  out.dose = dose;
  out.conversion_yield = eta;
  out.seed = seed;
  out.spots.reserve(pattern.spots.size());
  for (const auto& s : pattern.spots) {
    auto stream = rng::derive(seed, "array/spot/" + std::to_string(s.row) +
                                        "," + std::to_string(s.col));
    SpotRecord rec;
    rec.spot = s;
    const auto k = stream.poisson(lambda);
    rec.defects.reserve(k);
    for (std::uint64_t i = 0; i < k; ++i) {
      Defect d;
      d.dx_nm = stream.normal(0.0, sigma_lat);
      d.dy_nm = stream.normal(0.0, sigma_lat);
      d.depth_nm = profile.sample_vacancy_depth(stream.uniform(), stream.uniform());
      d.brightness = opts.brightness_sigma > 0.0
                         ? std::exp(stream.normal(0.0, opts.brightness_sigma))
                         : 1.0;
      rec.defects.push_back(d);
    }
    out.spots.push_back(std::move(rec));
  }
  return out;
}

std::string DefectArray::to_json() const {
  nlohmann::ordered_json j;
  j["metadata"] = {{"dose", dose},
                   {"conversion_yield", conversion_yield},
                   {"seed", seed}};
  auto& arr = j["spots"] = nlohmann::ordered_json::array();
  for (const auto& rec : spots) {
    nlohmann::ordered_json js;
    js["row"] = rec.spot.row;
    js["col"] = rec.spot.col;
    js["x_um"] = rec.spot.x_um;
    js["y_um"] = rec.spot.y_um;
    js["k"] = rec.k();
    auto& defs = js["defects"] = nlohmann::ordered_json::array();
    for (const auto& d : rec.defects)
      defs.push_back({{"dx_nm", d.dx_nm},
                      {"dy_nm", d.dy_nm},
                      {"depth_nm", d.depth_nm},
                      {"brightness", d.brightness}});
    arr.push_back(std::move(js));
  }
  return j.dump(2);
}

DefectArray DefectArray::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  DefectArray out;
  if (j.contains("metadata")) {
    const auto& m = j["metadata"];
    out.dose = m.value("dose", 0.0);
    out.conversion_yield = m.value("conversion_yield", 0.0);
    out.seed = m.value("seed", std::uint64_t{0});
  }
  for (const auto& js : j.at("spots")) {
    SpotRecord rec;
    rec.spot = {js.at("row").get<int>(), js.at("col").get<int>(),
                js.at("x_um").get<double>(), js.at("y_um").get<double>()};
    if (js.contains("defects")) {
      for (const auto& jd : js["defects"]) {
        rec.defects.push_back({jd.at("dx_nm").get<double>(),
                               jd.at("dy_nm").get<double>(),
                               jd.at("depth_nm").get<double>(),
                               jd.value("brightness", 1.0)});
      }
    }
    out.spots.push_back(std::move(rec));
  }
  return out;
}

} // namespace sivsim::patterning
