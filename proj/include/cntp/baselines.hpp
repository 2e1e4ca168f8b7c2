#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "cntp/cntp.hpp"

namespace cntp {

/// Argmax every step until eos or global_cap.
DecodeOutcome greedy_decode(const ModelSource& model, const Sequence& prompt, const DecodeConfig& config);

/// One token per step from the temperature/nucleus distribution, drawn from
/// Rng(config.seed).
DecodeOutcome stochastic_decode(const ModelSource& model, const Sequence& prompt, const DecodeConfig& config);

/// Length-synchronous beam search over untempered joint log-probability.
/// Finished beams stay in the pool and compete with active ones; the best
/// finished hypothesis wins, ties broken by lexicographic token order.
/// Temperature and top_p are ignored.
DecodeOutcome beam_search_decode(const ModelSource& model, const Sequence& prompt, int beam_width,
                                 const DecodeConfig& config);

/// Sum of ln p over the sequence's tokens under the model (untempered).
double sequence_log_prob(const ModelSource& model, const Sequence& prompt, TokenSpan answer);

// ---------------------------------------------------------------------------

class AnswerExtractor {
public:
    enum class Rule { last_token, text_after_marker, full_text };

    AnswerExtractor() = default;
    static AnswerExtractor last_token() { return AnswerExtractor(Rule::last_token, {}); }
    static AnswerExtractor full_text() { return AnswerExtractor(Rule::full_text, {}); }
    static AnswerExtractor after_marker(std::string marker) {
        return AnswerExtractor(Rule::text_after_marker, std::move(marker));
    }

    /// last_token: surface of the last non-eos token; text_after_marker: text
    /// after the last occurrence of the marker (empty when absent); full_text:
    /// the whole text. Results are whitespace-trimmed.
    std::string extract(const Vocabulary& vocab, const Sequence& seq) const;

    Rule rule() const { return rule_; }
    const std::string& marker() const { return marker_; }
    bool operator==(const AnswerExtractor&) const = default;

private:
    AnswerExtractor(Rule rule, std::string marker) : rule_(rule), marker_(std::move(marker)) {}
    Rule rule_ = Rule::last_token;
    std::string marker_;
};

std::string trim(std::string_view s);

struct VoteTally {
    std::map<std::string, int> counts;
    std::string winner;

    /// Majority vote; ties go to the lexicographically smallest answer.
    static VoteTally count(const std::vector<std::string>& answers);
};

using DecodeFn = std::function<DecodeOutcome(const ModelSource&, const Sequence&, const DecodeConfig&)>;

struct ConsistencyResult {
    std::string answer;
    CostLedger cost;
    VoteTally tally;
    std::vector<DecodeOutcome> paths;
};

/// Seed of path i: Rng::derive_seed(seed, {i}).
std::uint64_t path_seed(std::uint64_t seed, std::size_t path);

/// Runs decode_fn n_paths times with derived seeds and majority-votes the
/// extracted answers. stochastic_decode gives vanilla SC, cntp_decode the
/// CNTP + SC composition. Paths run on `workers` threads; results do not
/// depend on it.
ConsistencyResult self_consistency(const DecodeFn& decode_fn, const ModelSource& model, const Sequence& prompt,
                                   const DecodeConfig& config, int n_paths, const AnswerExtractor& extractor,
                                   int workers = 1);

/// n stochastic_decode runs with derived seeds (run i uses path_seed(seed, i),
/// run 0 reuses the base seed so n == 1 equals stochastic_decode); returns the
/// answer with the lowest whole-sequence perplexity (first run on ties).
/// The returned ledger sums every run.
DecodeOutcome best_of_n_whole_ppl(const ModelSource& model, const Sequence& prompt, const DecodeConfig& config, int n);

}  // namespace cntp
