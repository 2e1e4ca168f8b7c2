#include "cntp/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cntp {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

}  // namespace

std::uint64_t Rng::derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> stream) {
    std::uint64_t h = splitmix64(seed);
    for (std::uint64_t s : stream) h = splitmix64(h ^ splitmix64(s + 0x632BE59BD9B4E019ULL));
    return h;
}

Rng::Rng(std::uint64_t seed, std::initializer_list<std::uint64_t> stream) : engine_(derive_seed(seed, stream)) {}

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

TokenId greedy_token(const Distribution& dist) {
    auto p = dist.probs();
    // max_element returns the first maximum
    return token(static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin()));
}

Distribution apply_temperature(const Distribution& dist, double temperature) {
    if (temperature == 0.0) return Distribution::one_hot(dist.size(), greedy_token(dist));
    if (temperature == 1.0) return dist;
    auto p = dist.probs();
    const double log_max = std::log(*std::max_element(p.begin(), p.end()));
    std::vector<double> w(p.size(), 0.0);
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] > 0.0) w[i] = std::exp((std::log(p[i]) - log_max) / temperature);
    }
    return Distribution::from_weights(std::move(w));
}

Distribution nucleus_truncate(const Distribution& dist, double top_p) {
    if (top_p >= 1.0) return dist;
    auto p = dist.probs();
    std::vector<std::size_t> order(p.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });

    std::vector<double> kept(p.size(), 0.0);
    double mass = 0.0;
    for (std::size_t i : order) {
        kept[i] = p[i];
        mass += p[i];
        // slack absorbs summation error such as 0.7 + 0.2 < 0.9
        if (mass >= top_p - 1e-12) break;
    }
    return Distribution::from_weights(std::move(kept));
}

TokenId sample_token_at(const Distribution& dist, double u) {
    auto p = dist.probs();
    double cumulative = 0.0;
    std::size_t last_positive = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] <= 0.0) continue;
        last_positive = i;
        cumulative += p[i];
        if (u < cumulative) return token(i);
    }
    return token(last_positive);
}

TokenId sample_token(const Distribution& dist, Rng& rng) { return sample_token_at(dist, rng.uniform()); }

Distribution prepare_sampling_dist(const Distribution& dist, const DecodeConfig& config) {
    return nucleus_truncate(apply_temperature(dist, config.temperature), config.top_p);
}

}  // namespace cntp
