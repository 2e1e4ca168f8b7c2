#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "cntp/cntp.hpp"
#include "cntp/models.hpp"

namespace cntp {

// ---------------------------------------------------------------------------
// Exact enumeration of decoding outcomes
// ---------------------------------------------------------------------------

enum class PolicyKind { single_sample, cntp, uniform_multisample };

/// A decoding policy whose randomness is enumerated exactly. Every policy
/// samples from prepare_sampling_dist(config); cntp chooses N per step from
/// the confidence measure, uniform_multisample uses a fixed N at every step.
struct Policy {
    PolicyKind kind = PolicyKind::single_sample;
    DecodeConfig config;
    int trials = 1;

    static Policy single_sample(DecodeConfig config) { return {PolicyKind::single_sample, std::move(config), 1}; }
    static Policy cntp(DecodeConfig config) { return {PolicyKind::cntp, std::move(config), 0}; }
    static Policy uniform_multisample(DecodeConfig config, int n) {
        return {PolicyKind::uniform_multisample, std::move(config), n};
    }
};

enum class SelectionMode {
    /// Collapses the N i.i.d. branch draws with the first-index argmin
    /// order-statistic formula.
    order_statistics,
    /// Expands every joint N-tuple of branch outcomes (exponential in N).
    joint_tuples,
};

struct EnumerationOptions {
    std::size_t node_budget = 10'000'000;
    SelectionMode selection = SelectionMode::order_statistics;
};

class EnumerationBudgetExceeded : public Error {
public:
    using Error::Error;
};

struct Outcome {
    std::vector<TokenId> tokens;
    double probability = 0.0;
};

struct Enumeration {
    /// Distinct generated sequences, sorted by tokens.
    std::vector<Outcome> outcomes;
    double expected_forward_passes = 0.0;
    double expected_trial_launches = 0.0;
    double expected_steps = 0.0;
    double expected_high_steps = 0.0;
    double expected_length = 0.0;
    /// Longest branch that any multi-trial step can produce.
    std::size_t max_branch_length = 0;
    std::size_t nodes = 0;

    double total_probability() const;
};

Enumeration enumerate(const ModelSource& model, const Sequence& prompt, const Policy& policy,
                      const EnumerationOptions& options = {});

std::vector<Outcome> enumerate_outcomes(const ModelSource& model, const Sequence& prompt, const Policy& policy,
                                        const EnumerationOptions& options = {});

/// Total probability of outcomes satisfying the predicate.
double outcome_probability(const Enumeration& e, const std::function<bool(const std::vector<TokenId>&)>& accept);

struct ReferenceSequence {
    std::vector<TokenId> tokens;
};

/// Probability that the policy generates exactly the reference tokens.
double exact_correctness(const ModelSource& model, const Sequence& prompt, const Policy& policy,
                         const ReferenceSequence& reference, const EnumerationOptions& options = {});

/// Expected forward passes (one per generated token per trial).
double expected_cost(const ModelSource& model, const Sequence& prompt, const Policy& policy,
                     const EnumerationOptions& options = {});

/// Probability that the first-index argmin of n i.i.d. draws from
/// {(prob_i, ppl_i)} is outcome i, for every i.
std::vector<double> selection_probabilities(const std::vector<double>& probs, const std::vector<double>& ppls, int n);

// ---------------------------------------------------------------------------
// Fixtures satisfying the correctness-dominance assumptions
// ---------------------------------------------------------------------------

enum class Regime { low, high };

struct StepSpec {
    double correct_prob = 0.9;
    Regime regime = Regime::low;
    /// Number of equally likely wrong tokens; 0 picks the smallest count that
    /// keeps the lowest-PPL property (and reaches N = n_max when thresholds
    /// are not adapted).
    int distractors = 0;
};

enum class BranchStyle {
    /// Multi-trial steps emit a plain word; the correct word is followed by
    /// "." with probability 1, wrong words by a uniform pick among four
    /// punctuation tokens. Branches are two tokens long.
    forced_continuation,
    /// Multi-trial tokens carry punctuation themselves, so every branch is a
    /// single token and the correct token is the mode of its step.
    single_token,
};

struct FixtureOptions {
    BranchStyle style = BranchStyle::forced_continuation;
    /// Derive h_min/h_max from the designed step entropies so low steps take
    /// one trial and high steps take n_max. When false, base thresholds are
    /// used and each step's regime is checked against them.
    bool adapt_thresholds = true;
    /// Give wrong words the forced continuation instead (breaks the
    /// lowest-PPL assumption on purpose).
    bool violate_lowest_ppl = false;
    /// Sampling settings, caps, seed and (when not adapting) thresholds.
    DecodeConfig base = [] {
        DecodeConfig c;
        c.temperature = 1.0;
        c.top_p = 1.0;
        return c;
    }();
};

struct Theorem1Fixture {
    ScriptedModel model;
    Sequence prompt;
    ReferenceSequence reference;
    DecodeConfig config;
    /// Reference text: concatenated surfaces of the reference tokens.
    std::string answer_text;
};

/// Accumulates several fixtures into one scripted model. Each task is keyed
/// by its own prompt token so the tasks share a vocabulary.
class FixtureBuilder {
public:
    explicit FixtureBuilder(FixtureOptions options = {});

    struct Task {
        std::string prompt;
        std::vector<TokenId> prompt_tokens;
        ReferenceSequence reference;
        std::string answer_text;
        DecodeConfig config;
    };

    /// Throws ConfigError when the specification cannot satisfy both
    /// assumptions (high steps need correct_prob <= 0.5, regimes separable).
    const Task& add_task(const std::string& prompt, const std::vector<StepSpec>& steps);

    ScriptedModel build() const;
    const std::vector<Task>& tasks() const { return tasks_; }

private:
    TokenId intern(const std::string& surface);

    FixtureOptions options_;
    std::vector<std::string> surfaces_;
    std::vector<std::pair<std::vector<TokenId>, std::vector<double>>> rows_;
    std::vector<Task> tasks_;
};

Theorem1Fixture build_theorem1_fixture(const std::vector<StepSpec>& steps, const FixtureOptions& options = {});

/// Whitespace-separated token ids, `#` comments.
ReferenceSequence load_reference(const std::filesystem::path& path);
void save_reference(const std::filesystem::path& path, const ReferenceSequence& reference);

// ---------------------------------------------------------------------------

struct TheoremReport {
    double p_single_correct = 0.0;
    double p_cntp_correct = 0.0;
    /// Expected forward passes of CNTP (per generated token per trial).
    double expected_cost_cntp = 0.0;
    /// Expected sum of N_t.
    double expected_trial_launches = 0.0;
    double expected_cost_single = 0.0;
    /// Expected number of CNTP decision steps (L) and high-entropy fraction p.
    double expected_steps = 0.0;
    double high_entropy_fraction = 0.0;
    int n_max = 1;
    double cost_bound = 0.0;      // L * (1 + p * (n_max - 1))
    double uniform_cost = 0.0;    // L * n_max
    bool single_token_branches = true;
    bool assumption1_holds = true;
    std::string assumption2_note;
    bool strict = false;
    bool dominance_holds = false;
    /// expected_trial_launches <= cost_bound < uniform_cost.
    bool launch_bound_holds = false;
    /// expected_cost_cntp <= cost_bound < uniform_cost; the forward-pass bound
    /// is only claimed for single-token branches.
    bool cost_bound_holds = false;
};

/// Exact correctness and cost of CNTP versus single-sample decoding on a
/// fixture. Violations are reported in the flags, never thrown.
TheoremReport check_theorem1(const ModelSource& model, const Sequence& prompt, const ReferenceSequence& reference,
                             const DecodeConfig& config, const EnumerationOptions& options = {});
TheoremReport check_theorem1(const Theorem1Fixture& fixture, const EnumerationOptions& options = {});

}  // namespace cntp
