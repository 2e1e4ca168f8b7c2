// Regenerates the bundled fixtures under data/.

#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "cntp/config_io.hpp"
#include "cntp/harness.hpp"
#include "cntp/theory.hpp"

namespace fs = std::filesystem;
using namespace cntp;
using nlohmann::json;

namespace {

struct FixtureDef {
    std::string name;
    std::vector<StepSpec> steps;
    BranchStyle style = BranchStyle::forced_continuation;
    bool violate = false;
    int n_max = 10;
};

StepSpec low(double p) { return {p, Regime::low, 0}; }
StepSpec high(double p) { return {p, Regime::high, 0}; }

std::vector<FixtureDef> fixture_defs() {
    using S = BranchStyle;
    return {
        {"theorem1_case", {low(0.9), high(0.3), low(0.9)}},
        {"single_high_p02", {high(0.2)}},
        {"single_high_p05", {high(0.5)}},
        {"two_high", {high(0.3), high(0.4)}},
        {"long_mixed", {low(0.95), high(0.3), low(0.9), high(0.45), low(0.8)}},
        {"high_then_low", {high(0.25), low(0.7), low(0.85)}},
        {"three_high_nmax4", {high(0.35), high(0.3), high(0.5)}, S::forced_continuation, false, 4},
        {"low_only", {low(0.9), low(0.8)}},
        {"deterministic", {low(1.0), low(1.0), low(1.0)}},
        {"per_step_p03_nmax5", {high(0.3)}, S::single_token, false, 5},
        {"tok_single_high", {high(0.3)}, S::single_token},
        {"tok_mixed", {low(0.9), high(0.3), low(0.9)}, S::single_token},
        {"tok_two_high", {high(0.4), low(0.95), high(0.25)}, S::single_token},
        {"tok_long", {low(0.8), high(0.5), low(0.9), high(0.2), low(0.95), high(0.35)}, S::single_token, false, 6},
        {"violating", {low(0.9), high(0.3), low(0.9)}, S::forced_continuation, true},
    };
}

std::string style_name(BranchStyle s) {
    return s == BranchStyle::single_token ? "single_token" : "forced_continuation";
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write " + path.string());
    out << text;
}

void make_theorem_fixtures(const fs::path& dir) {
    fs::create_directories(dir);
    json manifest = json::array();
    for (const FixtureDef& def : fixture_defs()) {
        FixtureOptions opts;
        opts.style = def.style;
        opts.violate_lowest_ppl = def.violate;
        opts.base.n_max = def.n_max;
        Theorem1Fixture f = build_theorem1_fixture(def.steps, opts);
        save_scripted_model(dir / (def.name + ".model"), f.model);
        save_reference(dir / (def.name + ".ref"), f.reference);
        save_config(dir / (def.name + ".json"), f.config);
        bool has_high = false;
        json steps = json::array();
        for (const StepSpec& s : def.steps) {
            has_high = has_high || s.regime == Regime::high;
            steps.push_back({{"correct_prob", s.correct_prob}, {"regime", s.regime == Regime::high ? "high" : "low"}});
        }
        manifest.push_back({{"name", def.name},
                            {"style", style_name(def.style)},
                            {"assumptions_hold", !def.violate},
                            {"has_high_entropy_step", has_high},
                            {"answer_text", f.answer_text},
                            {"steps", steps}});
    }
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

void make_suite(const fs::path& dir) {
    fs::create_directories(dir);
    FixtureOptions opts;
    opts.adapt_thresholds = false;
    FixtureBuilder builder(opts);
    std::mt19937_64 gen(20240607);
    const double high_probs[] = {0.2, 0.3, 0.4, 0.5};
    const double low_probs[] = {0.95, 0.97, 0.99};
    std::vector<Task> tasks;
    for (int i = 1; i <= 50; ++i) {
        std::ostringstream id;
        id << "fx" << std::setw(2) << std::setfill('0') << i;
        const int n_steps = 2 + static_cast<int>(gen() % 4);
        const int n_high = 1 + static_cast<int>(gen() % 2);
        std::vector<StepSpec> steps;
        for (int s = 0; s < n_steps; ++s) steps.push_back(low(low_probs[gen() % 3]));
        for (int h = 0; h < n_high; ++h) {
            steps[gen() % steps.size()] = high(high_probs[gen() % 4]);
        }
        const auto& task = builder.add_task("Q" + id.str().substr(2) + ":", steps);
        tasks.push_back({id.str(), task.prompt, trim(task.answer_text), AnswerExtractor::full_text()});
    }
    save_scripted_model(dir / "suite.model", builder.build());
    save_tasks(dir / "suite.jsonl", tasks);
}

const char* kCorpus =
    "the cat sat on the mat. the dog sat on the log. the cat saw the dog.\n"
    "a bird sang in the tree. the bird sat in the tree and sang.\n"
    "the dog ran to the park. the cat ran to the mat. the bird flew to the park.\n"
    "we walk to the park in the morning. we sit in the sun and read.\n"
    "the sun is warm. the tree is tall. the park is green and quiet.\n"
    "she reads a book in the park. he reads a map on the mat.\n"
    "the dog saw the cat and ran. the cat saw the bird and sat.\n"
    "in the morning the park is quiet. in the evening the park is loud.\n"
    "the map is on the mat. the book is on the log. the log is in the park.\n"
    "we read the map and walk to the tree. the tree is in the park.\n";

void make_kgram(const fs::path& dir) {
    fs::create_directories(dir);
    write_text(dir / "corpus.txt", kCorpus);
    KGramModel model = train_kgram(kCorpus, 3, 0.1);
    DecodeConfig config;
    config.global_cap = 8;
    config.temperature = 0.0;
    save_config(dir / "kgram_config.json", config);

    const std::vector<std::string> prompts = {
        "the cat s", "the dog ", "a bird s", "we walk ", "the sun ", "she read", "he reads", "in the m",
        "the map ", "the book", "the tree", "the park", "we read ", "the bird", "the log ", "we sit i",
        "the cat r", "the dog s", "in the e", "the mat"};
    std::vector<Task> tasks;
    const Vocabulary& vocab = model.vocabulary();
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        Sequence prompt(vocab, vocab.encode(prompts[i]));
        DecodeOutcome out = greedy_decode(model, prompt, config);
        std::ostringstream id;
        id << "kg" << std::setw(2) << std::setfill('0') << (i + 1);
        tasks.push_back({id.str(), prompts[i], trim(out.sequence.text), AnswerExtractor::full_text()});
    }
    save_tasks(dir / "kgram_tasks.jsonl", tasks);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Regenerate bundled fixtures"};
    std::string out = "data";
    app.add_option("--out", out, "Output data directory");
    CLI11_PARSE(app, argc, argv);
    try {
        make_theorem_fixtures(fs::path(out) / "fixtures");
        make_suite(fs::path(out) / "suite");
        make_kgram(fs::path(out) / "kgram");
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    std::cout << "fixtures written to " << out << "\n";
    return 0;
}
