#pragma once

#include <vector>

#include "cntp/core.hpp"
#include "cntp/models.hpp"
#include "cntp/sampling.hpp"

namespace cntp {

struct ConfidenceReading {
    double entropy = 0.0;
    double max_prob = 1.0;
    /// top1 - top2
    double margin = 1.0;
};

/// -sum p ln p in nats, with 0 ln 0 = 0.
double entropy(const Distribution& dist);
ConfidenceReading read_confidence(const Distribution& dist);

/// Uncertainty on a "higher means less confident" scale: entropy, 1 - max p,
/// or 1 - (p1 - p2).
double confidence(const Distribution& dist, ConfidenceMeasure measure);

/// Maps an uncertainty value to a trial count in [1, n_max] according to
/// config.trial_scaling.
int trial_count(double uncertainty, const DecodeConfig& config);

/// Samples one branch after `prefix` until a token whose surface contains a
/// punctuation character (kept), eos, branch_cap, or the answer reaching
/// global_cap. `answer_length` is the number of tokens already generated.
/// When `first` is given it is used as the distribution of the first
/// position instead of querying the model.
Trial sample_branch(const ModelSource& model, TokenSpan prefix, std::size_t answer_length, const DecodeConfig& config,
                    Rng& rng, const Distribution* first = nullptr);

/// exp(nll / |trial|) recomputed from the stored probabilities.
double perplexity(const Trial& trial);

/// Index of the minimum-PPL trial, first one on ties.
std::size_t select_best(const std::vector<Trial>& trials);

bool contains_punctuation(std::string_view surface, std::string_view punctuation);

struct EngineOptions {
    /// Sample the N branches of a step on separate threads. Output does not
    /// depend on this flag.
    bool parallel_trials = false;
};

/// Entropy-gated multi-trial decoding with perplexity-based branch choice.
/// Single-trial steps draw from the main stream Rng(seed); the i-th trial of
/// step t draws from Rng(seed, {1, t, i}).
DecodeOutcome cntp_decode(const ModelSource& model, const Sequence& prompt, const DecodeConfig& config,
                          const EngineOptions& options = {});

}  // namespace cntp
