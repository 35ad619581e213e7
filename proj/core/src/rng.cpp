#include <sivsim/rng.hpp>

namespace sivsim::rng {

std::uint64_t hash_path(std::string_view path) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : path) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t derive_seed(std::uint64_t master, std::string_view path) {
  // One extra splitmix round decorrelates master^hash collisions across paths.
  Stream s(master ^ hash_path(path));
  return s.next_u64();
}

} // namespace sivsim::rng
