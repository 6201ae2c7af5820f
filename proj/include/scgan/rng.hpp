#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace scgan {

using Rng = std::mt19937_64;

// Independent sub-stream seed for a named purpose ("data", "init", ...).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream);

std::string rng_state(const Rng& rng);
void set_rng_state(Rng& rng, const std::string& state);

}  // namespace scgan
