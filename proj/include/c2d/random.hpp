#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace c2d {

using Rng = std::mt19937_64;

/// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

/// Independent stream seed for a named stage: hash(master, stage).
std::uint64_t derive_seed(std::uint64_t master, std::string_view stage);

double uniform01(Rng& rng);
double normal(Rng& rng, double mean = 0.0, double stddev = 1.0);
double beta_sample(Rng& rng, double a, double b);

/// Uniformly random permutation of 0..n-1.
std::vector<std::size_t> permutation(std::size_t n, Rng& rng);

}  // namespace c2d
