#include <benchmark/benchmark.h>

#include <sivsim/inference.hpp>
#include <sivsim/photonics.hpp>
#include <sivsim/transport.hpp>

using namespace sivsim;

static void BM_IonHistory(benchmark::State& state) {
  const auto sic = transport::TargetMaterial::sic_4h();
  const auto beam = transport::IonBeamSpec::helium(30.0);
  std::uint64_t seed = 1;
  for (auto _ : state) {
    benchmark::DoNotOptimize(transport::simulate_ion(beam, sic, seed++));
  }
}
BENCHMARK(BM_IonHistory);

static void BM_Profile1k(benchmark::State& state) {
  const auto sic = transport::TargetMaterial::sic_4h();
  const auto beam = transport::IonBeamSpec::helium(30.0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(transport::simulate_profile(beam, sic, 1000, 2));
  }
}
BENCHMARK(BM_Profile1k)->Unit(benchmark::kMillisecond);

static void BM_PhotonTrace(benchmark::State& state) {
  const photonics::EmitterModel em;
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        photonics::simulate_photon_trace(1, 6.0, 2.0, em, 10.0, 3));
  }
}
BENCHMARK(BM_PhotonTrace)->Unit(benchmark::kMillisecond);

static void BM_Correlate(benchmark::State& state) {
  const photonics::EmitterModel em;
  const auto tr = photonics::simulate_photon_trace(1, 6.0, 2.0, em, 50.0, 3);
  for (auto _ : state) {
    benchmark::DoNotOptimize(photonics::correlate(tr, 10.0, 3000.0));
  }
}
BENCHMARK(BM_Correlate)->Unit(benchmark::kMillisecond);

static void BM_G2Fit(benchmark::State& state) {
  const photonics::EmitterModel em;
  const auto tr = photonics::simulate_photon_trace(1, 6.0, 2.0, em, 100.0, 3);
  const auto h = photonics::correlate(tr, 10.0, 3000.0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(inference::fit_g2(h, 6.0, 2.0, true));
  }
}
BENCHMARK(BM_G2Fit)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
