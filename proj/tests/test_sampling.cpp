#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "cntp/sampling.hpp"

using namespace cntp;

TEST(Temperature, IdentityAtOne) {
    Distribution d({0.6, 0.3, 0.1});
    EXPECT_EQ(apply_temperature(d, 1.0), d);
}

TEST(Temperature, ZeroIsArgmax) {
    Distribution d({0.2, 0.5, 0.3});
    auto t = apply_temperature(d, 0.0);
    EXPECT_EQ(t[token(1)], 1.0);
    EXPECT_EQ(t[token(0)] + t[token(2)], 0.0);
}

TEST(Temperature, SharpensAndFlattens) {
    Distribution d({0.6, 0.4});
    auto sharp = apply_temperature(d, 0.5);
    EXPECT_NEAR(sharp.at(0), 0.36 / 0.52, 1e-12);
    auto flat = apply_temperature(d, 2.0);
    const double a = std::sqrt(0.6), b = std::sqrt(0.4);
    EXPECT_NEAR(flat.at(0), a / (a + b), 1e-12);
    Distribution with_zero({0.5, 0.5, 0.0});
    EXPECT_EQ(apply_temperature(with_zero, 1.7).at(2), 0.0);
}

TEST(Nucleus, WorkedExample) {
    Distribution d({0.5, 0.3, 0.15, 0.05});
    auto n = nucleus_truncate(d, 0.9);
    EXPECT_NEAR(n.at(0), 0.5263, 1e-4);
    EXPECT_NEAR(n.at(1), 0.3158, 1e-4);
    EXPECT_NEAR(n.at(2), 0.1579, 1e-4);
    EXPECT_EQ(n.at(3), 0.0);
}

TEST(Nucleus, FullMassIsIdentity) {
    Distribution d({0.5, 0.3, 0.15, 0.05});
    EXPECT_EQ(nucleus_truncate(d, 1.0), d);
}

TEST(Nucleus, TiesKeepLowerIds) {
    Distribution d({0.25, 0.25, 0.25, 0.25});
    auto n = nucleus_truncate(d, 0.5);
    EXPECT_DOUBLE_EQ(n.at(0), 0.5);
    EXPECT_DOUBLE_EQ(n.at(1), 0.5);
    EXPECT_EQ(n.at(2), 0.0);
}

TEST(Nucleus, AlwaysKeepsTopToken) {
    Distribution d({0.1, 0.9});
    auto n = nucleus_truncate(d, 0.01);
    EXPECT_EQ(n.at(1), 1.0);
}

TEST(Nucleus, TemperatureAppliedFirst) {
    DecodeConfig c;
    c.temperature = 0.5;
    c.top_p = 0.7;
    // (0.6, 0.4) sharpens to (0.692, 0.308); 0.692 < 0.7 so both survive
    auto d = prepare_sampling_dist(Distribution({0.6, 0.4}), c);
    EXPECT_GT(d.at(1), 0.0);
    c.temperature = 0.3;
    d = prepare_sampling_dist(Distribution({0.6, 0.4}), c);
    EXPECT_EQ(d.at(1), 0.0);
}

TEST(InverseCdf, Boundaries) {
    Distribution d({0.25, 0.0, 0.75});
    EXPECT_EQ(sample_token_at(d, 0.0), token(0));
    EXPECT_EQ(sample_token_at(d, 0.2499), token(0));
    EXPECT_EQ(sample_token_at(d, 0.25), token(2));
    EXPECT_EQ(sample_token_at(d, 0.999999), token(2));
    Distribution tail({0.5, 0.5, 0.0});
    EXPECT_EQ(sample_token_at(tail, std::nextafter(1.0, 0.0)), token(1));
}

TEST(Greedy, LowestIdOnTies) {
    EXPECT_EQ(greedy_token(Distribution({0.2, 0.4, 0.4})), token(1));
}

TEST(Rng, DeterministicAndStreamsDiffer) {
    Rng a(7), b(7), c(7, {1});
    for (int i = 0; i < 100; ++i) {
        const double x = a.uniform();
        EXPECT_EQ(x, b.uniform());
        EXPECT_GE(x, 0.0);
        EXPECT_LT(x, 1.0);
    }
    EXPECT_NE(Rng(7).next(), c.next());
    std::set<std::uint64_t> seeds;
    for (std::uint64_t i = 0; i < 1000; ++i) seeds.insert(Rng::derive_seed(3, {i}));
    EXPECT_EQ(seeds.size(), 1000u);
    EXPECT_NE(Rng::derive_seed(0, {1, 2}), Rng::derive_seed(0, {2, 1}));
}

TEST(SampleToken, FrequenciesWithinThreeSigma) {
    Distribution d({0.5, 0.3, 0.15, 0.05});
    Rng rng(12345);
    constexpr int kDraws = 100000;
    std::vector<int> counts(4, 0);
    for (int i = 0; i < kDraws; ++i) ++counts[index_of(sample_token(d, rng))];
    for (std::size_t i = 0; i < 4; ++i) {
        const double p = d.at(i);
        const double sigma = std::sqrt(p * (1 - p) / kDraws);
        EXPECT_NEAR(counts[i] / static_cast<double>(kDraws), p, 3 * sigma) << "token " << i;
    }
}
