#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

#include "cntp/core.hpp"

namespace cntp {

/// Deterministic 64-bit generator. A stream is identified by a seed plus a
/// list of integers (path index, step index, trial index, ...); identical
/// identifiers and call sequences give identical draws on every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::initializer_list<std::uint64_t> stream = {});

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform();
    std::uint64_t next() { return engine_(); }

    /// Mixes a seed and a stream path into a new seed.
    static std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> stream);

private:
    std::mt19937_64 engine_;
};

/// p^(1/T) renormalized; T == 0 gives one-hot at the argmax, T == 1 is identity.
Distribution apply_temperature(const Distribution& dist, double temperature);

/// Keeps the smallest descending-probability prefix (ties by ascending id)
/// whose mass reaches top_p, then renormalizes. top_p == 1 is identity.
Distribution nucleus_truncate(const Distribution& dist, double top_p);

/// Inverse CDF over vocabulary order for a given u in [0, 1).
TokenId sample_token_at(const Distribution& dist, double u);
TokenId sample_token(const Distribution& dist, Rng& rng);

/// Argmax, lowest id on ties.
TokenId greedy_token(const Distribution& dist);

/// Temperature first, then nucleus truncation.
Distribution prepare_sampling_dist(const Distribution& dist, const DecodeConfig& config);

}  // namespace cntp
