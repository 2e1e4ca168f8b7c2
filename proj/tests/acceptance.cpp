// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>

#include <json.hpp>

#include "cntp/config_io.hpp"
#include "cntp/harness.hpp"
#include "cntp/theory.hpp"
#include "test_util.hpp"

using namespace cntp;

namespace {

struct Verdict {
    bool pass = true;
    std::string detail;
};

struct Fixture {
    std::string name;
    std::string style;
    bool assumptions = true;
    bool has_high = false;
    ScriptedModel model;
    ReferenceSequence ref;
    DecodeConfig config;
};

std::vector<Fixture> load_fixtures() {
    const auto dir = cntp::testing::data_dir() / "fixtures";
    std::ifstream in(dir / "manifest.json");
    const auto manifest = nlohmann::json::parse(in);
    std::vector<Fixture> out;
    for (const auto& f : manifest) {
        const std::string name = f["name"];
        out.push_back({name, f["style"], f["assumptions_hold"], f["has_high_entropy_step"],
                       load_scripted_model(dir / (name + ".model")), load_reference(dir / (name + ".ref")),
                       load_config(dir / (name + ".json"))});
    }
    return out;
}

std::string fmt(double x, int precision = 6) {
    std::ostringstream os;
    os.precision(precision);
    os << x;
    return os.str();
}

double monte_carlo_correct(const ModelSource& model, const DecodeConfig& base, const ReferenceSequence& ref,
                           int runs) {
    int hits = 0;
    DecodeConfig c = base;
    for (int s = 0; s < runs; ++s) {
        c.seed = static_cast<std::uint64_t>(s);
        hits += cntp_decode(model, {}, c).sequence.tokens == ref.tokens;
    }
    return hits / static_cast<double>(runs);
}

// --- 1 ---------------------------------------------------------------------
Verdict theorem_dominance(const std::vector<Fixture>& fixtures) {
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    int checked = 0, strict = 0;
    for (const auto& f : fixtures) {
        if (!f.assumptions) continue;
        ++checked;
        const double ps = exact_correctness(f.model, {}, Policy::single_sample(f.config), f.ref);
        const double pc = exact_correctness(f.model, {}, Policy::cntp(f.config), f.ref);
        bool ok = pc >= ps - 1e-9;
        if (f.has_high) {
            ok = ok && pc > ps + 1e-9;
            ++strict;
        }
        if (!ok) {
            v.pass = false;
            v.detail += " " + f.name + "(single=" + fmt(ps) + ", cntp=" + fmt(pc) + ")";
        }
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (checked < 10 || secs >= 60.0) v.pass = false;
    v.detail = std::to_string(checked) + " fixtures, " + std::to_string(strict) + " strict, " + fmt(secs, 3) + " s" +
               v.detail;
    return v;
}

// --- 2 ---------------------------------------------------------------------
Verdict theorem_cost(const std::vector<Fixture>& fixtures) {
    Verdict v;
    int checked = 0;
    double worst_slack = 1e300;
    for (const auto& f : fixtures) {
        if (f.style != "single_token" || !f.assumptions) continue;
        ++checked;
        const Enumeration e = enumerate(f.model, {}, Policy::cntp(f.config));
        const double L = e.expected_steps;
        const double p = e.expected_high_steps / L;
        const double bound = L * (1 + p * (f.config.n_max - 1));
        const double uniform = L * f.config.n_max;
        worst_slack = std::min(worst_slack, bound - e.expected_forward_passes);
        if (!(e.max_branch_length <= 1 && e.expected_forward_passes <= bound + 1e-9 && bound < uniform)) {
            v.pass = false;
            v.detail += " " + f.name + "(cost=" + fmt(e.expected_forward_passes) + ", bound=" + fmt(bound) +
                        ", uniform=" + fmt(uniform) + ")";
        }
    }
    if (checked == 0) v.pass = false;
    v.detail = std::to_string(checked) + " single-token fixtures, min(bound - cost) = " + fmt(worst_slack) + v.detail;
    return v;
}

// --- 3 ---------------------------------------------------------------------
Verdict per_step_formula(const std::vector<Fixture>& fixtures) {
    const Fixture* f = nullptr;
    for (const auto& x : fixtures) {
        if (x.name == "per_step_p03_nmax5") f = &x;
    }
    if (!f) return {false, "fixture per_step_p03_nmax5 missing"};
    const double expected = 1 - std::pow(0.7, 5);
    const double exact = exact_correctness(f->model, {}, Policy::cntp(f->config), f->ref);
    constexpr int kRuns = 50000;
    const double mc = monte_carlo_correct(f->model, f->config, f->ref, kRuns);
    const double sigma = std::sqrt(expected * (1 - expected) / kRuns);
    Verdict v;
    v.pass = f->config.n_max == 5 && std::abs(exact - 0.83193) <= 1e-12 && std::abs(mc - exact) <= 3 * sigma;
    v.detail = "enumeration " + fmt(exact, 10) + ", Monte Carlo " + fmt(mc) + " (sigma " + fmt(sigma, 3) + ")";
    return v;
}

// --- 4 ---------------------------------------------------------------------
Verdict engine_oracle(const std::vector<Fixture>& fixtures) {
    Verdict v;
    constexpr int kRuns = 50000;
    double worst = 0.0;
    for (const auto& f : fixtures) {
        const double exact = exact_correctness(f.model, {}, Policy::cntp(f.config), f.ref);
        const double mc = monte_carlo_correct(f.model, f.config, f.ref, kRuns);
        const double sigma = std::sqrt(exact * (1 - exact) / kRuns);
        const double z = sigma > 0 ? std::abs(mc - exact) / sigma : (mc == exact ? 0.0 : 1e300);
        worst = std::max(worst, z);
        if (z > 3.0) {
            v.pass = false;
            v.detail += " " + f.name + "(exact=" + fmt(exact) + ", mc=" + fmt(mc) + ")";
        }
    }
    v.detail = std::to_string(fixtures.size()) + " fixtures x " + std::to_string(kRuns) + " runs, max |z| = " +
               fmt(worst, 3) + v.detail;
    return v;
}

// --- 5 ---------------------------------------------------------------------
Verdict trial_counts() {
    DecodeConfig c;
    c.h_min = 0.01;
    c.h_max = 1.5;
    c.n_max = 10;
    bool ok = trial_count(0.0, c) == 1 && trial_count(2.0, c) == 10 && trial_count(0.755, c) == 5;
    int prev = 0;
    for (int i = 0; i < 1000; ++i) {
        const int n = trial_count(2.5 * i / 999.0, c);
        ok = ok && n >= prev && n >= 1 && n <= c.n_max;
        prev = n;
    }
    c.trial_scaling = TrialScaling::negative;
    ok = ok && trial_count(0.2, c) == 9;
    return {ok, "H=0 -> 1, H=2.0 -> 10, H=0.755 -> 5, 1000-point grid monotone, negative H=0.2 -> 9"};
}

// --- 6 ---------------------------------------------------------------------
Verdict degeneracies() {
    std::mt19937_64 gen(606);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    int bad_t0 = 0, bad_beam = 0, bad_n1 = 0;
    for (int i = 0; i < 100; ++i) {
        const int depth = 1 + static_cast<int>(gen() % 5);
        const std::size_t vocab = 3 + gen() % 4;
        ScriptedModel m = cntp::testing::random_tree_model(gen, depth, vocab);
        DecodeConfig c;
        c.seed = gen();
        c.top_p = 0.8 + 0.2 * unif(gen);

        DecodeConfig zero = c;
        zero.temperature = 0.0;
        const auto greedy = greedy_decode(m, {}, c).sequence;
        bad_t0 += !(stochastic_decode(m, {}, zero).sequence == greedy);
        bad_beam += !(beam_search_decode(m, {}, 1, c).sequence == greedy);

        DecodeConfig one = c;
        one.n_max = 1;
        one.temperature = 0.5 + unif(gen);
        bad_n1 += !(cntp_decode(m, {}, one).sequence == stochastic_decode(m, {}, one).sequence);
    }
    return {bad_t0 + bad_beam + bad_n1 == 0, "100 random models; mismatches: T=0 " + std::to_string(bad_t0) +
                                                 ", B=1 " + std::to_string(bad_beam) + ", n_max=1 " +
                                                 std::to_string(bad_n1)};
}

// --- 7 ---------------------------------------------------------------------
void enumerate_leaves(const ModelSource& m, std::vector<TokenId>& prefix, double lp, std::size_t cap,
                      std::vector<std::pair<std::vector<TokenId>, double>>& out) {
    const Distribution d = m.next_distribution(prefix);
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (d.at(i) <= 0.0) continue;
        prefix.push_back(token(i));
        const double child = lp + std::log(d.at(i));
        if (token(i) == m.vocabulary().eos() || prefix.size() >= cap) out.emplace_back(prefix, child);
        else enumerate_leaves(m, prefix, child, cap, out);
        prefix.pop_back();
    }
}

Verdict beam_optimality() {
    std::mt19937_64 gen(707);
    int bad = 0;
    std::size_t max_leaves = 0;
    for (int i = 0; i < 20; ++i) {
        const int depth = 1 + static_cast<int>(gen() % 3);
        ScriptedModel m = cntp::testing::random_tree_model(gen, depth, 3 + gen() % 3);
        DecodeConfig c;
        std::vector<std::pair<std::vector<TokenId>, double>> leaves;
        std::vector<TokenId> prefix;
        enumerate_leaves(m, prefix, 0.0, static_cast<std::size_t>(c.global_cap), leaves);
        std::size_t best = 0;
        for (std::size_t k = 1; k < leaves.size(); ++k) {
            if (leaves[k].second > leaves[best].second) best = k;
        }
        max_leaves = std::max(max_leaves, leaves.size());
        const auto out = beam_search_decode(m, {}, static_cast<int>(leaves.size()), c);
        bad += !(out.sequence.tokens == leaves[best].first);
    }
    return {bad == 0, "20 random depth<=3 models (up to " + std::to_string(max_leaves) + " leaves), " +
                          std::to_string(bad) + " non-optimal"};
}

// --- 8 ---------------------------------------------------------------------
Verdict suite_dominance() {
    const auto dir = cntp::testing::data_dir() / "suite";
    const std::string spec = (dir / "suite.model").string();
    RunContext ctx = open_run_context(spec, 4);
    const auto tasks = load_tasks(dir / "suite.jsonl");
    const Strategy cntp_s = Strategy::parse("cntp");
    const Strategy stoch_s = Strategy::parse("stochastic");
    DecodeConfig cc, sc;
    cc.temperature = cntp_s.preset_temperature();
    sc.temperature = stoch_s.preset_temperature();

    // oracle gap, computed before any decoding run
    const Vocabulary& vocab = ctx.model->vocabulary();
    double gap = 0.0, var = 0.0, exp_c = 0.0, exp_s = 0.0;
    for (const Task& t : tasks) {
        const Sequence prompt(vocab, vocab.encode(t.prompt));
        double pc = 0.0, ps = 0.0;
        auto correct = [&](const std::vector<TokenId>& toks) {
            return trim(Sequence(vocab, toks).text) == t.reference_answer;
        };
        pc = outcome_probability(enumerate(*ctx.model, prompt, Policy::cntp(cc)), correct);
        ps = outcome_probability(enumerate(*ctx.model, prompt, Policy::single_sample(sc)), correct);
        gap += (pc - ps) / static_cast<double>(tasks.size());
        exp_c += pc / static_cast<double>(tasks.size());
        exp_s += ps / static_cast<double>(tasks.size());
        var += pc * (1 - pc) + ps * (1 - ps);
    }
    std::vector<std::uint64_t> seeds;
    for (std::uint64_t s = 0; s < 20; ++s) seeds.push_back(s);
    const double n = static_cast<double>(tasks.size());
    const double analytic_sigma = std::sqrt(var / static_cast<double>(seeds.size())) / n;

    const auto rc = run_suite(ctx, tasks, cntp_s, cc, seeds);
    const auto rs = run_suite(ctx, tasks, stoch_s, sc, seeds);
    const double observed = rc.summary.accuracy - rs.summary.accuracy;
    // tasks share seed streams, so per-seed gaps also bound the spread
    double seed_var = 0.0;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        const double d = rc.summary.per_seed_accuracy[i] - rs.summary.per_seed_accuracy[i] - observed;
        seed_var += d * d / static_cast<double>(seeds.size() - 1);
    }
    const double sigma = std::max(analytic_sigma, std::sqrt(seed_var / static_cast<double>(seeds.size())));
    const bool gap_ok = observed >= gap - 3 * sigma && gap > 0;
    const bool cost_ok = rc.summary.mean_forward_passes < cc.n_max * rs.summary.mean_forward_passes;
    return {gap_ok && cost_ok, "acc cntp " + fmt(rc.summary.accuracy, 4) + " (oracle " + fmt(exp_c, 4) +
                                   ") vs stochastic " + fmt(rs.summary.accuracy, 4) + " (oracle " + fmt(exp_s, 4) +
                                   "), observed gap " + fmt(observed, 4) +
                                   " >= oracle gap " + fmt(gap, 4) + " - 3*" + fmt(sigma, 3) + "; passes " +
                                   fmt(rc.summary.mean_forward_passes, 4) + " < " + std::to_string(cc.n_max) + " x " +
                                   fmt(rs.summary.mean_forward_passes, 4)};
}

// --- 9 ---------------------------------------------------------------------
Verdict determinism() {
    const auto data = cntp::testing::data_dir();
    const auto log_dir = std::filesystem::temp_directory_path() / "cntp_acceptance_replay";
    std::filesystem::remove_all(log_dir);
    std::filesystem::create_directories(log_dir);
    const auto log_path = log_dir / "records.jsonl";
    std::size_t written = 0;
    bool aggregates_equal = true;
    {
        RecordLog log(log_path);
        auto suite_tasks = load_tasks(data / "suite" / "suite.jsonl");
        suite_tasks.resize(10);
        auto kgram_tasks = load_tasks(data / "kgram" / "kgram_tasks.jsonl");
        kgram_tasks.resize(5);
        const std::string kgram_spec = "kgram:" + (data / "kgram" / "corpus.txt").string();
        struct Setup {
            std::string model;
            std::vector<Task>* tasks;
            std::vector<std::string> strategies;
        };
        std::vector<Setup> setups{
            {(data / "suite" / "suite.model").string(), &suite_tasks,
             {"greedy", "stochastic", "cntp", "beam(3)", "sc(3)", "cntp_sc(3)", "best_of_n(3)"}},
            {kgram_spec, &kgram_tasks, {"stochastic", "cntp"}}};
        for (const auto& s : setups) {
            for (const auto& name : s.strategies) {
                const Strategy strategy = Strategy::parse(name);
                DecodeConfig c;
                c.temperature = strategy.preset_temperature();
                c.global_cap = 32;
                auto serial = run_suite(open_run_context(s.model, 1), *s.tasks, strategy, c, {1, 2});
                auto parallel = run_suite(open_run_context(s.model, 4), *s.tasks, strategy, c, {1, 2});
                aggregates_equal = aggregates_equal && serial.summary == parallel.summary;
                for (const auto& r : serial.records) {
                    log.append(r);
                    ++written;
                }
            }
        }
    }
    std::size_t replayed = 0;
    std::string failure;
    try {
        for (const RunRecord& r : load_records(log_path)) {
            const RunRecord again = replay(r);
            if (record_outcome_json(again).dump() != record_outcome_json(r).dump()) {
                failure = "record " + r.task_id + " differs";
                break;
            }
            ++replayed;
        }
    } catch (const std::exception& e) {
        failure = e.what();
    }
    const bool ok = failure.empty() && replayed == written && aggregates_equal;
    return {ok, std::to_string(replayed) + "/" + std::to_string(written) + " records replayed identically; serial " +
                    (aggregates_equal ? "==" : "!=") + " parallel aggregates" + (failure.empty() ? "" : "; " + failure)};
}

// --- 10 --------------------------------------------------------------------
Verdict sampling_statistics() {
    const Distribution d({0.5, 0.3, 0.15, 0.05});
    const Distribution n = nucleus_truncate(d, 0.9);
    const double want[] = {0.5263, 0.3158, 0.1579, 0.0};
    bool ok = true;
    for (std::size_t i = 0; i < 4; ++i) ok = ok && std::abs(n.at(i) - want[i]) <= 1e-4;
    constexpr int kDraws = 100000;
    double worst = 0.0;
    for (const Distribution& dist : {d, n, Distribution({0.1, 0.2, 0.3, 0.4})}) {
        Rng rng(2024);
        std::vector<int> counts(dist.size(), 0);
        for (int i = 0; i < kDraws; ++i) ++counts[index_of(sample_token(dist, rng))];
        for (std::size_t i = 0; i < dist.size(); ++i) {
            const double p = dist.at(i);
            const double f = counts[i] / static_cast<double>(kDraws);
            if (p == 0.0) {
                ok = ok && counts[i] == 0;
                continue;
            }
            const double z = std::abs(f - p) / std::sqrt(p * (1 - p) / kDraws);
            worst = std::max(worst, z);
            ok = ok && z <= 3.0;
        }
    }
    return {ok, "nucleus (" + fmt(n.at(0), 4) + ", " + fmt(n.at(1), 4) + ", " + fmt(n.at(2), 4) + ", " +
                    fmt(n.at(3), 4) + "); 100k-draw max |z| = " + fmt(worst, 3)};
}

}  // namespace

int main() {
    std::vector<Fixture> fixtures;
    try {
        fixtures = load_fixtures();
    } catch (const std::exception& e) {
        std::printf("cannot load fixtures: %s\n", e.what());
        return 2;
    }
    const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
        {"correctness dominance on bundled fixtures", [&] { return theorem_dominance(fixtures); }},
        {"cost bound on single-token fixtures", [&] { return theorem_cost(fixtures); }},
        {"isolated-step selection probability", [&] { return per_step_formula(fixtures); }},
        {"engine and oracle agree", [&] { return engine_oracle(fixtures); }},
        {"trial-count formula", trial_counts},
        {"decoder degeneracies", degeneracies},
        {"beam search optimality", beam_optimality},
        {"synthetic suite dominance", suite_dominance},
        {"determinism and replay", determinism},
        {"sampling statistics", sampling_statistics},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Verdict v;
        const auto start = std::chrono::steady_clock::now();
        try {
            v = criteria[i].second();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        failed += !v.pass;
        std::printf("[%s] criterion %zu: %s -- %s (%.2f s)\n", v.pass ? "PASS" : "FAIL", i + 1,
                    criteria[i].first.c_str(), v.detail.c_str(), secs);
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
