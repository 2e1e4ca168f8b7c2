#include "cntp/cntp.hpp"

#include <algorithm>
#include <cmath>
#include <future>

namespace cntp {

double entropy(const Distribution& dist) {
    double h = 0.0;
    for (double p : dist.probs()) {
        if (p > 0.0) h -= p * std::log(p);
    }
    return std::max(h, 0.0);
}

ConfidenceReading read_confidence(const Distribution& dist) {
    double top1 = 0.0;
    double top2 = 0.0;
    for (double p : dist.probs()) {
        if (p > top1) {
            top2 = top1;
            top1 = p;
        } else if (p > top2) {
            top2 = p;
        }
    }
    return {entropy(dist), top1, top1 - top2};
}

double confidence(const Distribution& dist, ConfidenceMeasure measure) {
    switch (measure) {
        case ConfidenceMeasure::entropy: return entropy(dist);
        case ConfidenceMeasure::max_prob: return 1.0 - read_confidence(dist).max_prob;
        case ConfidenceMeasure::top1_minus_top2: return 1.0 - read_confidence(dist).margin;
    }
    return 0.0;
}

namespace {

// Guards the floor against representation error in the uncertainty value.
constexpr double kFloorSlack = 1e-9;

int clamp_trials(double n, int n_max) {
    return static_cast<int>(std::clamp(n, 1.0, static_cast<double>(n_max)));
}

}  // namespace

int trial_count(double uncertainty, const DecodeConfig& config) {
    const double scaled = (uncertainty - config.h_min) / (config.h_max - config.h_min) * config.n_max;
    switch (config.trial_scaling) {
        case TrialScaling::positive:
            return clamp_trials(std::floor(scaled + kFloorSlack), config.n_max);
        case TrialScaling::negative:
            return clamp_trials(config.n_max - std::floor(scaled + kFloorSlack), config.n_max);
        case TrialScaling::fixed:
            return std::clamp(config.fixed_trials, 1, config.n_max);
    }
    return 1;
}

bool contains_punctuation(std::string_view surface, std::string_view punctuation) {
    return surface.find_first_of(punctuation) != std::string_view::npos;
}

Trial sample_branch(const ModelSource& model, TokenSpan prefix, std::size_t answer_length, const DecodeConfig& config,
                    Rng& rng, const Distribution* first) {
    const Vocabulary& vocab = model.vocabulary();
    std::vector<TokenId> context(prefix.begin(), prefix.end());
    Trial trial;
    while (true) {
        Distribution dist = (trial.tokens.empty() && first) ? *first : model.next_distribution(context);
        TokenId t = sample_token(prepare_sampling_dist(dist, config), rng);
        trial.tokens.push_back(t);
        trial.probs.push_back(dist[t]);
        context.push_back(t);
        if (t == vocab.eos()) {
            trial.stop_reason = StopReason::eos;
            break;
        }
        if (contains_punctuation(vocab.surface(t), config.punctuation)) {
            trial.stop_reason = StopReason::punctuation;
            break;
        }
        if (answer_length + trial.size() >= static_cast<std::size_t>(config.global_cap)) {
            trial.stop_reason = StopReason::global_cap;
            break;
        }
        if (trial.size() >= static_cast<std::size_t>(config.branch_cap)) {
            trial.stop_reason = StopReason::branch_cap;
            break;
        }
    }
    trial.finalize();
    return trial;
}

double perplexity(const Trial& trial) {
    double nll = 0.0;
    for (double p : trial.probs) nll -= std::log(p);
    return std::exp(nll / static_cast<double>(trial.probs.size()));
}

std::size_t select_best(const std::vector<Trial>& trials) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < trials.size(); ++i) {
        if (trials[i].ppl < trials[best].ppl) best = i;
    }
    return best;
}

DecodeOutcome cntp_decode(const ModelSource& model, const Sequence& prompt, const DecodeConfig& config,
                          const EngineOptions& options) {
    validate_config(config);
    const Vocabulary& vocab = model.vocabulary();
    const auto cap = static_cast<std::size_t>(config.global_cap);

    std::vector<TokenId> context = prompt.tokens;
    DecodeOutcome out;
    CostLedger& cost = out.cost;
    Rng main(config.seed);

    for (std::uint64_t step = 0; out.sequence.size() < cap; ++step) {
        Distribution dist = model.next_distribution(context);
        Distribution sampling = prepare_sampling_dist(dist, config);
        const double u = confidence(config.confidence_on_sampling_dist ? sampling : dist, config.confidence_measure);
        const int n = trial_count(u, config);
        ++cost.total_steps;
        cost.trial_launches += n;

        if (n == 1) {
            TokenId t = sample_token(sampling, main);
            ++cost.forward_passes;
            out.sequence.append(vocab, t);
            context.push_back(t);
            out.trace.push_back({u, 1, dist[t]});
            if (t == vocab.eos()) break;
            continue;
        }

        ++cost.high_entropy_steps;
        std::vector<Trial> trials(static_cast<std::size_t>(n));
        auto run_trial = [&](std::size_t i) {
            Rng rng(config.seed, {1, step, i});
            return sample_branch(model, context, out.sequence.size(), config, rng, &dist);
        };
        if (options.parallel_trials) {
            std::vector<std::future<Trial>> pending;
            for (std::size_t i = 0; i < trials.size(); ++i) pending.push_back(std::async(std::launch::async, run_trial, i));
            for (std::size_t i = 0; i < trials.size(); ++i) trials[i] = pending[i].get();
        } else {
            for (std::size_t i = 0; i < trials.size(); ++i) trials[i] = run_trial(i);
        }
        for (const Trial& tr : trials) cost.forward_passes += static_cast<std::int64_t>(tr.size());

        const Trial& best = trials[select_best(trials)];
        out.sequence.append(vocab, best.tokens);
        context.insert(context.end(), best.tokens.begin(), best.tokens.end());
        out.trace.push_back({u, n, best.ppl});
        if (best.stop_reason == StopReason::eos) break;
    }
    cost.generated_tokens = static_cast<std::int64_t>(out.sequence.size());
    return out;
}

}  // namespace cntp
