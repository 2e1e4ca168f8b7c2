#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace cntp {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid DecodeConfig (first violated invariant).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed input file: model tables, task files, references, logs.
class ParseError : public Error {
public:
    using Error::Error;
};

/// A probability vector that is negative, non-finite or not normalized.
class DistributionError : public Error {
public:
    using Error::Error;
};

/// Connection or protocol failure of a model backend.
class BackendError : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Tokens and vocabulary
// ---------------------------------------------------------------------------

enum class TokenId : std::uint32_t {};

constexpr TokenId token(std::size_t index) { return static_cast<TokenId>(index); }
constexpr std::size_t index_of(TokenId t) { return static_cast<std::size_t>(t); }

using TokenSpan = std::span<const TokenId>;

class Vocabulary {
public:
    Vocabulary(std::vector<std::string> tokens, TokenId eos);

    std::size_t size() const { return tokens_.size(); }
    TokenId eos() const { return eos_; }
    bool contains(TokenId t) const { return index_of(t) < tokens_.size(); }

    /// Surface string of a token; eos is always the empty string.
    const std::string& surface(TokenId t) const;
    std::optional<TokenId> find(std::string_view surface) const;
    const std::vector<std::string>& tokens() const { return tokens_; }

    std::string detokenize(TokenSpan tokens) const;

    /// Greedy longest-match segmentation of text into vocabulary tokens.
    /// Throws ParseError if some position matches no token.
    std::vector<TokenId> encode(std::string_view text) const;

    bool operator==(const Vocabulary& other) const {
        return tokens_ == other.tokens_ && eos_ == other.eos_;
    }

private:
    std::vector<std::string> tokens_;
    TokenId eos_;
    std::unordered_map<std::string, TokenId> lookup_;
    std::size_t longest_ = 0;
};

std::string detokenize(const Vocabulary& vocab, TokenId t);

// ---------------------------------------------------------------------------
// Distribution
// ---------------------------------------------------------------------------

inline constexpr double kNormTolerance = 1e-9;

/// Full-vocabulary next-token probabilities. Normalization is checked on
/// construction and never repaired.
class Distribution {
public:
    explicit Distribution(std::vector<double> probs);

    /// Builds from non-negative weights by dividing by their sum. Only for
    /// vectors produced inside the engine (temperature, truncation).
    static Distribution from_weights(std::vector<double> weights);
    static Distribution one_hot(std::size_t size, TokenId at);
    static Distribution uniform(std::size_t size);

    std::size_t size() const { return probs_.size(); }
    double operator[](TokenId t) const { return probs_[index_of(t)]; }
    double at(std::size_t i) const { return probs_.at(i); }
    std::span<const double> probs() const { return probs_; }

    bool operator==(const Distribution& other) const { return probs_ == other.probs_; }

private:
    struct Trusted {};
    Distribution(std::vector<double> probs, Trusted) : probs_(std::move(probs)) {}
    std::vector<double> probs_;
};

// ---------------------------------------------------------------------------
// Sequences and trials
// ---------------------------------------------------------------------------

struct Sequence {
    std::vector<TokenId> tokens;
    std::string text;

    Sequence() = default;
    Sequence(const Vocabulary& vocab, std::vector<TokenId> toks);

    std::size_t size() const { return tokens.size(); }
    bool empty() const { return tokens.empty(); }
    void append(const Vocabulary& vocab, TokenId t);
    void append(const Vocabulary& vocab, TokenSpan toks);

    bool operator==(const Sequence&) const = default;
};

enum class StopReason { punctuation, eos, branch_cap, global_cap };

std::string_view to_string(StopReason r);

/// One sampled branch. Probabilities are the untempered model
/// probabilities of each chosen token.
struct Trial {
    std::vector<TokenId> tokens;
    std::vector<double> probs;
    double nll = 0.0;
    double ppl = 1.0;
    StopReason stop_reason = StopReason::eos;

    /// Recomputes nll and ppl from probs.
    void finalize();
    std::size_t size() const { return tokens.size(); }
};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

enum class ConfidenceMeasure { entropy, max_prob, top1_minus_top2 };
enum class TrialScaling { positive, fixed, negative };

std::string_view to_string(ConfidenceMeasure m);
std::string_view to_string(TrialScaling s);
ConfidenceMeasure parse_confidence_measure(std::string_view s);
TrialScaling parse_trial_scaling(std::string_view s);

inline constexpr std::string_view kDefaultPunctuation = ".,?!:;)]}\n";

struct DecodeConfig {
    double h_min = 0.01;
    double h_max = 1.5;
    int n_max = 10;
    double temperature = 1.0;
    double top_p = 0.9;
    std::string punctuation{kDefaultPunctuation};
    int branch_cap = 64;
    int global_cap = 1024;
    std::uint64_t seed = 0;
    ConfidenceMeasure confidence_measure = ConfidenceMeasure::entropy;
    TrialScaling trial_scaling = TrialScaling::positive;
    int fixed_trials = 6;
    bool confidence_on_sampling_dist = false;

    bool operator==(const DecodeConfig&) const = default;
};

/// Returns the config unchanged or throws ConfigError naming the first
/// violated invariant.
const DecodeConfig& validate_config(const DecodeConfig& config);

// ---------------------------------------------------------------------------
// Cost accounting and outcomes
// ---------------------------------------------------------------------------

struct CostLedger {
    /// One per generated token per trial (the entropy probe of a step is the
    /// first token's pass of its trials).
    std::int64_t forward_passes = 0;
    /// Tokens appended to the answer.
    std::int64_t generated_tokens = 0;
    std::int64_t high_entropy_steps = 0;
    std::int64_t total_steps = 0;
    /// Sum of trial counts N over decision steps.
    std::int64_t trial_launches = 0;

    double high_entropy_fraction() const {
        return total_steps > 0 ? static_cast<double>(high_entropy_steps) / static_cast<double>(total_steps)
                               : 0.0;
    }
    CostLedger& operator+=(const CostLedger& other);
    bool operator==(const CostLedger&) const = default;
};

struct StepTrace {
    double confidence = 0.0;
    int trials = 1;
    /// Chosen-branch PPL when trials > 1, else the chosen token's probability.
    double value = 0.0;

    bool operator==(const StepTrace&) const = default;
};

struct DecodeOutcome {
    Sequence sequence;
    CostLedger cost;
    std::vector<StepTrace> trace;

    bool operator==(const DecodeOutcome&) const = default;
};

}  // namespace cntp
