#include "cntp/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace cntp {

Vocabulary::Vocabulary(std::vector<std::string> tokens, TokenId eos)
    : tokens_(std::move(tokens)), eos_(eos) {
    if (!contains(eos_)) {
        throw ParseError("vocabulary: eos id " + std::to_string(index_of(eos_)) + " out of range (size " +
                         std::to_string(tokens_.size()) + ")");
    }
    // eos carries no text
    tokens_[index_of(eos_)].clear();
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        const std::string& s = tokens_[i];
        if (s.empty() && i != index_of(eos_)) {
            throw ParseError("vocabulary: token " + std::to_string(i) + " has an empty surface");
        }
        if (!lookup_.emplace(s, token(i)).second) {
            throw ParseError("vocabulary: duplicate surface '" + s + "'");
        }
        longest_ = std::max(longest_, s.size());
    }
}

const std::string& Vocabulary::surface(TokenId t) const {
    if (!contains(t)) {
        throw Error("token id " + std::to_string(index_of(t)) + " outside vocabulary");
    }
    return tokens_[index_of(t)];
}

std::optional<TokenId> Vocabulary::find(std::string_view s) const {
    auto it = lookup_.find(std::string(s));
    if (it == lookup_.end()) return std::nullopt;
    return it->second;
}

std::string Vocabulary::detokenize(TokenSpan toks) const {
    std::string out;
    for (TokenId t : toks) out += surface(t);
    return out;
}

std::vector<TokenId> Vocabulary::encode(std::string_view text) const {
    std::vector<TokenId> out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t len = std::min(longest_, text.size() - pos);
        bool matched = false;
        for (; len > 0; --len) {
            auto it = lookup_.find(std::string(text.substr(pos, len)));
            if (it != lookup_.end()) {
                out.push_back(it->second);
                pos += len;
                matched = true;
                break;
            }
        }
        if (!matched) {
            throw ParseError("cannot tokenize text at byte " + std::to_string(pos) + ": '" +
                             std::string(text.substr(pos, 16)) + "'");
        }
    }
    return out;
}

std::string detokenize(const Vocabulary& vocab, TokenId t) { return vocab.surface(t); }

// ---------------------------------------------------------------------------

Distribution::Distribution(std::vector<double> probs) : probs_(std::move(probs)) {
    if (probs_.empty()) throw DistributionError("distribution is empty");
    double sum = 0.0;
    for (std::size_t i = 0; i < probs_.size(); ++i) {
        double p = probs_[i];
        if (!std::isfinite(p) || p < 0.0) {
            throw DistributionError("distribution entry " + std::to_string(i) + " is " + std::to_string(p));
        }
        sum += p;
    }
    if (std::abs(sum - 1.0) > kNormTolerance) {
        std::ostringstream os;
        os.precision(12);
        os << "distribution sums to " << sum << ", not 1";
        throw DistributionError(os.str());
    }
}

Distribution Distribution::from_weights(std::vector<double> weights) {
    double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
    if (!(sum > 0.0) || !std::isfinite(sum)) throw DistributionError("weights have no positive mass");
    for (double& w : weights) w /= sum;
    return Distribution(std::move(weights), Trusted{});
}

Distribution Distribution::one_hot(std::size_t size, TokenId at) {
    std::vector<double> p(size, 0.0);
    p.at(index_of(at)) = 1.0;
    return Distribution(std::move(p), Trusted{});
}

Distribution Distribution::uniform(std::size_t size) {
    return Distribution(std::vector<double>(size, 1.0 / static_cast<double>(size)), Trusted{});
}

// ---------------------------------------------------------------------------

Sequence::Sequence(const Vocabulary& vocab, std::vector<TokenId> toks)
    : tokens(std::move(toks)), text(vocab.detokenize(tokens)) {}

void Sequence::append(const Vocabulary& vocab, TokenId t) {
    tokens.push_back(t);
    text += vocab.surface(t);
}

void Sequence::append(const Vocabulary& vocab, TokenSpan toks) {
    for (TokenId t : toks) append(vocab, t);
}

std::string_view to_string(StopReason r) {
    switch (r) {
        case StopReason::punctuation: return "punctuation";
        case StopReason::eos: return "eos";
        case StopReason::branch_cap: return "branch_cap";
        case StopReason::global_cap: return "global_cap";
    }
    return "?";
}

void Trial::finalize() {
    double sum = 0.0;
    for (double p : probs) sum -= std::log(p);
    nll = sum;
    ppl = probs.empty() ? 1.0 : std::exp(nll / static_cast<double>(probs.size()));
}

// ---------------------------------------------------------------------------

std::string_view to_string(ConfidenceMeasure m) {
    switch (m) {
        case ConfidenceMeasure::entropy: return "entropy";
        case ConfidenceMeasure::max_prob: return "max_prob";
        case ConfidenceMeasure::top1_minus_top2: return "top1_minus_top2";
    }
    return "?";
}

std::string_view to_string(TrialScaling s) {
    switch (s) {
        case TrialScaling::positive: return "positive";
        case TrialScaling::fixed: return "fixed";
        case TrialScaling::negative: return "negative";
    }
    return "?";
}

ConfidenceMeasure parse_confidence_measure(std::string_view s) {
    if (s == "entropy") return ConfidenceMeasure::entropy;
    if (s == "max_prob") return ConfidenceMeasure::max_prob;
    if (s == "top1_minus_top2") return ConfidenceMeasure::top1_minus_top2;
    throw ConfigError("unknown confidence_measure '" + std::string(s) + "'");
}

TrialScaling parse_trial_scaling(std::string_view s) {
    if (s == "positive") return TrialScaling::positive;
    if (s == "fixed") return TrialScaling::fixed;
    if (s == "negative") return TrialScaling::negative;
    throw ConfigError("unknown trial_scaling '" + std::string(s) + "'");
}

const DecodeConfig& validate_config(const DecodeConfig& c) {
    if (!std::isfinite(c.h_min) || c.h_min < 0.0) throw ConfigError("h_min must be >= 0");
    if (!std::isfinite(c.h_max) || !(c.h_min < c.h_max)) throw ConfigError("h_min must be < h_max");
    if (c.n_max < 1) throw ConfigError("n_max must be >= 1");
    if (!std::isfinite(c.temperature) || c.temperature < 0.0) throw ConfigError("temperature must be >= 0");
    if (!(c.top_p > 0.0 && c.top_p <= 1.0)) throw ConfigError("top_p must be in (0, 1]");
    if (c.branch_cap < 1) throw ConfigError("branch_cap must be >= 1");
    if (c.global_cap < 1) throw ConfigError("global_cap must be >= 1");
    if (c.fixed_trials < 1) throw ConfigError("fixed_trials must be >= 1");
    return c;
}

CostLedger& CostLedger::operator+=(const CostLedger& o) {
    forward_passes += o.forward_passes;
    generated_tokens += o.generated_tokens;
    high_entropy_steps += o.high_entropy_steps;
    total_steps += o.total_steps;
    trial_launches += o.trial_launches;
    return *this;
}

}  // namespace cntp
