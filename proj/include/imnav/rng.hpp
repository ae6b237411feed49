#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace imnav {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent substreams from a seed.
constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    return mix64(mix64(seed) ^ mix64(stream + 0x632be59bd9b4e019ULL));
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
    return Rng(derive_seed(seed, stream));
}

// Adds isotropic Gaussian noise of scale sigma to every component of out.
inline void add_gaussian_noise(std::vector<float>& out, double sigma, Rng& rng) {
    if (sigma <= 0.0) return;
    std::normal_distribution<double> dist(0.0, sigma);
    for (auto& v : out) v = static_cast<float>(v + dist(rng));
}

inline double uniform01(Rng& rng) {
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

std::string rng_state(const Rng& rng);
void set_rng_state(Rng& rng, const std::string& state);

}  // namespace imnav
