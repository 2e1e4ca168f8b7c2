#include "cntp/baselines.hpp"

#include <algorithm>
#include <cmath>

#include "cntp/parallel.hpp"

namespace cntp {

namespace {

template <typename Pick>
DecodeOutcome single_path_decode(const ModelSource& model, const Sequence& prompt, const DecodeConfig& config,
                                 Pick pick) {
    validate_config(config);
    const Vocabulary& vocab = model.vocabulary();
    std::vector<TokenId> context = prompt.tokens;
    DecodeOutcome out;
    while (out.sequence.size() < static_cast<std::size_t>(config.global_cap)) {
        Distribution dist = model.next_distribution(context);
        TokenId t = pick(dist);
        ++out.cost.forward_passes;
        ++out.cost.total_steps;
        ++out.cost.trial_launches;
        out.sequence.append(vocab, t);
        context.push_back(t);
        out.trace.push_back({entropy(dist), 1, dist[t]});
        if (t == vocab.eos()) break;
    }
    out.cost.generated_tokens = static_cast<std::int64_t>(out.sequence.size());
    return out;
}

}  // namespace

DecodeOutcome greedy_decode(const ModelSource& model, const Sequence& prompt, const DecodeConfig& config) {
    return single_path_decode(model, prompt, config, [](const Distribution& d) { return greedy_token(d); });
}

DecodeOutcome stochastic_decode(const ModelSource& model, const Sequence& prompt, const DecodeConfig& config) {
    Rng rng(config.seed);
    return single_path_decode(model, prompt, config, [&](const Distribution& d) {
        return sample_token(prepare_sampling_dist(d, config), rng);
    });
}

DecodeOutcome beam_search_decode(const ModelSource& model, const Sequence& prompt, int beam_width,
                                 const DecodeConfig& config) {
    validate_config(config);
    if (beam_width < 1) throw ConfigError("beam width must be >= 1");
    const Vocabulary& vocab = model.vocabulary();
    const auto cap = static_cast<std::size_t>(config.global_cap);

    struct Hypothesis {
        std::vector<TokenId> tokens;
        double log_prob = 0.0;
        bool finished = false;
        std::vector<StepTrace> trace;
    };
    auto better = [](const Hypothesis& a, const Hypothesis& b) {
        if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
        return a.tokens < b.tokens;
    };

    DecodeOutcome out;
    std::vector<Hypothesis> beams(1);
    while (std::any_of(beams.begin(), beams.end(), [](const Hypothesis& h) { return !h.finished; })) {
        std::vector<Hypothesis> pool;
        for (Hypothesis& h : beams) {
            if (h.finished) {
                pool.push_back(std::move(h));
                continue;
            }
            std::vector<TokenId> context = prompt.tokens;
            context.insert(context.end(), h.tokens.begin(), h.tokens.end());
            Distribution dist = model.next_distribution(context);
            ++out.cost.forward_passes;
            const double h_step = entropy(dist);
            for (std::size_t i = 0; i < dist.size(); ++i) {
                const double p = dist.at(i);
                if (p <= 0.0) continue;
                Hypothesis child = h;
                child.tokens.push_back(token(i));
                child.log_prob += std::log(p);
                child.finished = token(i) == vocab.eos() || child.tokens.size() >= cap;
                child.trace.push_back({h_step, beam_width, p});
                pool.push_back(std::move(child));
            }
        }
        ++out.cost.total_steps;
        const auto keep = std::min(pool.size(), static_cast<std::size_t>(beam_width));
        std::partial_sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(keep), pool.end(), better);
        pool.resize(keep);
        beams = std::move(pool);
    }

    const Hypothesis& best = beams.front();
    out.sequence = Sequence(vocab, best.tokens);
    out.trace = best.trace;
    out.cost.trial_launches = out.cost.forward_passes;
    out.cost.generated_tokens = static_cast<std::int64_t>(out.sequence.size());
    return out;
}

double sequence_log_prob(const ModelSource& model, const Sequence& prompt, TokenSpan answer) {
    std::vector<TokenId> context = prompt.tokens;
    double lp = 0.0;
    for (TokenId t : answer) {
        lp += std::log(model.next_distribution(context)[t]);
        context.push_back(t);
    }
    return lp;
}

// ---------------------------------------------------------------------------

std::string trim(std::string_view s) {
    const char* ws = " \t\r\n\f\v";
    auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(ws);
    return std::string(s.substr(b, e - b + 1));
}

std::string AnswerExtractor::extract(const Vocabulary& vocab, const Sequence& seq) const {
    switch (rule_) {
        case Rule::full_text: return trim(seq.text);
        case Rule::last_token:
            for (auto it = seq.tokens.rbegin(); it != seq.tokens.rend(); ++it) {
                if (*it != vocab.eos()) return trim(vocab.surface(*it));
            }
            return {};
        case Rule::text_after_marker: {
            auto pos = seq.text.rfind(marker_);
            if (marker_.empty() || pos == std::string::npos) return {};
            return trim(std::string_view(seq.text).substr(pos + marker_.size()));
        }
    }
    return {};
}

VoteTally VoteTally::count(const std::vector<std::string>& answers) {
    VoteTally tally;
    for (const auto& a : answers) ++tally.counts[a];
    int best = -1;
    // std::map iterates in lexicographic order, so the first maximum wins ties
    for (const auto& [answer, n] : tally.counts) {
        if (n > best) {
            best = n;
            tally.winner = answer;
        }
    }
    return tally;
}

std::uint64_t path_seed(std::uint64_t seed, std::size_t path) { return Rng::derive_seed(seed, {path}); }

ConsistencyResult self_consistency(const DecodeFn& decode_fn, const ModelSource& model, const Sequence& prompt,
                                   const DecodeConfig& config, int n_paths, const AnswerExtractor& extractor,
                                   int workers) {
    if (n_paths < 1) throw ConfigError("self-consistency needs at least one path");
    ConsistencyResult result;
    result.paths.resize(static_cast<std::size_t>(n_paths));
    run_indexed(result.paths.size(), workers, [&](std::size_t i) {
        DecodeConfig path_config = config;
        path_config.seed = path_seed(config.seed, i);
        result.paths[i] = decode_fn(model, prompt, path_config);
    });
    std::vector<std::string> answers;
    for (const auto& p : result.paths) {
        answers.push_back(extractor.extract(model.vocabulary(), p.sequence));
        result.cost += p.cost;
    }
    result.tally = VoteTally::count(answers);
    result.answer = result.tally.winner;
    return result;
}

DecodeOutcome best_of_n_whole_ppl(const ModelSource& model, const Sequence& prompt, const DecodeConfig& config, int n) {
    if (n < 1) throw ConfigError("best-of-n needs n >= 1");
    CostLedger total;
    DecodeOutcome best;
    double best_ppl = 0.0;
    for (int i = 0; i < n; ++i) {
        DecodeConfig run_config = config;
        if (i > 0) run_config.seed = path_seed(config.seed, static_cast<std::size_t>(i));
        DecodeOutcome run = stochastic_decode(model, prompt, run_config);
        total += run.cost;
        // the trace holds each chosen token's untempered probability
        double nll = 0.0;
        for (const StepTrace& s : run.trace) nll -= std::log(s.value);
        const double ppl = run.trace.empty() ? 1.0 : std::exp(nll / static_cast<double>(run.trace.size()));
        if (i == 0 || ppl < best_ppl) {
            best_ppl = ppl;
            best = std::move(run);
        }
    }
    best.cost = total;
    return best;
}

}  // namespace cntp
