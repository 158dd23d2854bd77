#include "cprobe/rng.hpp"

#include <stdexcept>
#include <unordered_set>

namespace cprobe {

std::vector<int> Rng::sample_without_replacement(int n, int k) {
  if (k < 0 || k > n) {
    throw std::invalid_argument("sample_without_replacement: need 0 <= k <= n, got k=" +
                                std::to_string(k) + " n=" + std::to_string(n));
  }
  std::vector<int> out;
  out.reserve(k);
  std::unordered_set<int> seen;
  while (static_cast<int>(out.size()) < k) {
    const int x = static_cast<int>(below(static_cast<std::uint64_t>(n)));
    if (seen.insert(x).second) out.push_back(x);
  }
  return out;
}

std::uint64_t derive_seed(std::uint64_t root, std::string_view tag,
                          std::uint64_t index) {
  // FNV-1a over the root seed, tag bytes, and index.
  std::uint64_t h = 14695981039346656037ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 1099511628211ULL;
    }
  };
  mix(root);
  for (const char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  mix(index);
  return h;
}

}  // namespace cprobe
