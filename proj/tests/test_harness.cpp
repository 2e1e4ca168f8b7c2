#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "cntp/config_io.hpp"
#include "cntp/harness.hpp"
#include "test_util.hpp"

using namespace cntp;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("cntp_harness_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

fs::path write(const fs::path& path, const std::string& text) {
    std::ofstream(path) << text;
    return path;
}

std::string suite_model() { return (cntp::testing::data_dir() / "suite" / "suite.model").string(); }

std::vector<Task> suite_tasks(std::size_t n) {
    auto tasks = load_tasks(cntp::testing::data_dir() / "suite" / "suite.jsonl");
    tasks.resize(std::min(n, tasks.size()));
    return tasks;
}

DecodeConfig preset(const Strategy& s) {
    DecodeConfig c;
    c.temperature = s.preset_temperature();
    return c;
}

}  // namespace

TEST(Tasks, LoadsExtractorsAndDefaults) {
    auto dir = temp_dir("tasks");
    auto path = write(dir / "t.jsonl",
                      "{\"id\":\"a\",\"prompt\":\"x\",\"reference_answer\":\"1\"}\n"
                      "\n"
                      "{\"id\":\"b\",\"prompt\":\"y\",\"reference_answer\":\"2\",\"extractor\":\"full_text\"}\n"
                      "{\"id\":\"c\",\"prompt\":\"z\",\"reference_answer\":\"3\","
                      "\"extractor\":{\"rule\":\"text_after_marker\",\"marker\":\"=\"}}\n");
    auto tasks = load_tasks(path);
    ASSERT_EQ(tasks.size(), 3u);
    EXPECT_EQ(tasks[0].extractor, AnswerExtractor::last_token());
    EXPECT_EQ(tasks[1].extractor, AnswerExtractor::full_text());
    EXPECT_EQ(tasks[2].extractor, AnswerExtractor::after_marker("="));
    save_tasks(dir / "again.jsonl", tasks);
    auto again = load_tasks(dir / "again.jsonl");
    EXPECT_EQ(again[2].extractor, tasks[2].extractor);
}

TEST(Tasks, ErrorsNameTheLine) {
    auto dir = temp_dir("task_errors");
    auto dup = write(dir / "dup.jsonl",
                     "{\"id\":\"a\",\"prompt\":\"x\",\"reference_answer\":\"1\"}\n"
                     "{\"id\":\"a\",\"prompt\":\"y\",\"reference_answer\":\"2\"}\n");
    try {
        load_tasks(dup);
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("dup.jsonl:2"), std::string::npos) << e.what();
    }
    EXPECT_THROW(load_tasks(write(dir / "missing.jsonl", "{\"id\":\"a\",\"prompt\":\"x\"}\n")), ParseError);
    EXPECT_THROW(load_tasks(write(dir / "bad.jsonl", "{not json\n")), ParseError);
    EXPECT_THROW(load_tasks(write(dir / "rule.jsonl",
                                  "{\"id\":\"a\",\"prompt\":\"x\",\"reference_answer\":\"1\",\"extractor\":\"nope\"}\n")),
                 ParseError);
    EXPECT_THROW(load_tasks(dir / "absent.jsonl"), ParseError);
}

TEST(Score, ExactMatchAfterTrim) {
    Vocabulary v({"<eos>", "x ", "= ", "42."}, token(0));
    Task t{"t", "", "42.", AnswerExtractor::after_marker("=")};
    Sequence out(v, {token(1), token(2), token(3), token(0)});
    EXPECT_TRUE(score(v, out, t));
    EXPECT_FALSE(score(v, Sequence{}, t));
    EXPECT_FALSE(score_answer("Yes", "yes"));
    EXPECT_TRUE(score_answer("  yes\n", "yes"));
    EXPECT_FALSE(score_answer("", ""));
}

TEST(Strategy, ParseAndName) {
    for (std::string s : {"greedy", "stochastic", "cntp", "beam(4)", "sc(5)", "cntp_sc(3)", "best_of_n(8)"}) {
        EXPECT_EQ(Strategy::parse(s).name(), s);
    }
    EXPECT_EQ(Strategy::parse("beam(4)").param, 4);
    EXPECT_THROW(Strategy::parse("beam"), ConfigError);
    EXPECT_THROW(Strategy::parse("greedy(2)"), ConfigError);
    EXPECT_THROW(Strategy::parse("sc(0)"), ConfigError);
    EXPECT_THROW(Strategy::parse("sc(x)"), ConfigError);
    EXPECT_THROW(Strategy::parse("topk"), ConfigError);
}

TEST(Strategy, PresetTemperatures) {
    EXPECT_EQ(Strategy::parse("greedy").preset_temperature(), 0.0);
    EXPECT_EQ(Strategy::parse("stochastic").preset_temperature(), 0.6);
    EXPECT_EQ(Strategy::parse("cntp").preset_temperature(), 1.2);
    EXPECT_EQ(Strategy::parse("sc(5)").preset_temperature(), 0.6);
    EXPECT_EQ(Strategy::parse("cntp_sc(5)").preset_temperature(), 1.2);
}

TEST(Suite, ZeroEntropyModelScoresPerfectly) {
    auto dir = temp_dir("zero");
    write(dir / "m.model",
          "vocab: \"<eos>\" \"Q:\" \"the \" \"answer.\"\neos: 0\ndefault: 0=1\nrow [1]: 2=1\nrow [1 2]: 3=1\n");
    write(dir / "t.jsonl", "{\"id\":\"q\",\"prompt\":\"Q:\",\"reference_answer\":\"the answer.\",\"extractor\":\"full_text\"}\n");
    RunContext ctx = open_run_context((dir / "m.model").string());
    auto tasks = load_tasks(dir / "t.jsonl");
    for (std::string s : {"greedy", "stochastic", "cntp", "beam(3)", "sc(3)", "cntp_sc(3)", "best_of_n(3)"}) {
        auto strategy = Strategy::parse(s);
        auto res = run_suite(ctx, tasks, strategy, preset(strategy), {0, 1});
        EXPECT_EQ(res.summary.accuracy, 1.0) << s;
        EXPECT_EQ(res.records.size(), 2u);
    }
}

TEST(Suite, AggregatesMatchRecords) {
    RunContext ctx = open_run_context(suite_model());
    auto tasks = suite_tasks(10);
    auto strategy = Strategy::parse("stochastic");
    const std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    auto res = run_suite(ctx, tasks, strategy, preset(strategy), seeds);
    ASSERT_EQ(res.records.size(), 50u);
    double correct = 0, tokens = 0;
    for (const auto& r : res.records) {
        correct += r.correct;
        tokens += static_cast<double>(r.cost.generated_tokens);
    }
    EXPECT_DOUBLE_EQ(res.summary.accuracy, correct / 50);
    EXPECT_DOUBLE_EQ(res.summary.mean_generated_tokens, tokens / 50);
    ASSERT_EQ(res.summary.per_seed_accuracy.size(), 5u);
    double mean = 0;
    for (double a : res.summary.per_seed_accuracy) mean += a / 5;
    double ss = 0;
    for (double a : res.summary.per_seed_accuracy) ss += (a - mean) * (a - mean);
    EXPECT_NEAR(res.summary.accuracy_sd, std::sqrt(ss / 4), 1e-12);
    EXPECT_NEAR(mean, res.summary.accuracy, 1e-12);
}

TEST(Suite, ParallelEqualsSerial) {
    auto tasks = suite_tasks(12);
    for (std::string s : {"cntp", "sc(3)"}) {
        auto strategy = Strategy::parse(s);
        auto serial = run_suite(open_run_context(suite_model(), 1), tasks, strategy, preset(strategy), {3, 4});
        auto parallel = run_suite(open_run_context(suite_model(), 4), tasks, strategy, preset(strategy), {3, 4});
        EXPECT_EQ(serial.summary, parallel.summary);
        ASSERT_EQ(serial.records.size(), parallel.records.size());
        for (std::size_t i = 0; i < serial.records.size(); ++i) {
            EXPECT_EQ(record_outcome_json(serial.records[i]).dump(), record_outcome_json(parallel.records[i]).dump());
        }
    }
}

TEST(Suite, ErrorsCarryTaskContext) {
    RunContext ctx = open_run_context(suite_model());
    std::vector<Task> tasks{{"weird", "not a prompt", "x", AnswerExtractor::full_text()}};
    try {
        run_suite(ctx, tasks, Strategy::parse("greedy"), {}, {0});
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("task weird"), std::string::npos);
    }
}

TEST(Records, JsonRoundTripAndLog) {
    RunContext ctx = open_run_context(suite_model());
    auto tasks = suite_tasks(3);
    auto strategy = Strategy::parse("cntp_sc(2)");
    auto res = run_suite(ctx, tasks, strategy, preset(strategy), {9});
    auto dir = temp_dir("records");
    {
        RecordLog log(dir / "records.jsonl");
        for (const auto& r : res.records) log.append(r);
    }
    auto loaded = load_records(dir / "records.jsonl");
    ASSERT_EQ(loaded.size(), res.records.size());
    for (std::size_t i = 0; i < loaded.size(); ++i) {
        EXPECT_EQ(record_to_json(loaded[i]).dump(), record_to_json(res.records[i]).dump());
        EXPECT_EQ(loaded[i].paths.size(), 2u);
    }
}

TEST(Records, RunDirectoriesAreUnique) {
    auto dir = temp_dir("rundirs");
    auto a = make_run_directory(dir, 5);
    auto b = make_run_directory(dir, 5);
    EXPECT_NE(a, b);
    EXPECT_NE(a.filename().string().find("-seed5"), std::string::npos);
    EXPECT_TRUE(fs::is_directory(b));
}

TEST(Replay, IdenticalAndMismatches) {
    RunContext ctx = open_run_context(suite_model());
    auto tasks = suite_tasks(4);
    auto strategy = Strategy::parse("cntp");
    auto res = run_suite(ctx, tasks, strategy, preset(strategy), {21});
    for (const auto& r : res.records) {
        auto back = record_from_json(nlohmann::json::parse(record_to_json(r).dump()));
        EXPECT_NO_THROW(replay(back));
    }
    // find a record with a multi-trial step so n_max matters
    const RunRecord* multi = nullptr;
    for (const auto& r : res.records) {
        if (r.cost.high_entropy_steps > 0) multi = &r;
    }
    ASSERT_NE(multi, nullptr);
    RunRecord altered = *multi;
    altered.config.n_max = 3;
    try {
        replay(altered);
        FAIL();
    } catch (const ReplayMismatch& e) {
        EXPECT_NE(std::string(e.what()).find("step"), std::string::npos) << e.what();
    }
    int mismatches = 0;
    for (const auto& r : res.records) {
        RunRecord s = r;
        s.seed += 1000;
        try {
            replay(s);
        } catch (const ReplayMismatch&) {
            ++mismatches;
        }
    }
    EXPECT_GT(mismatches, 0);
}

TEST(Ablation, RowCountsPerAxis) {
    RunContext ctx = open_run_context(suite_model());
    auto tasks = suite_tasks(3);
    DecodeConfig base = preset(Strategy::parse("cntp"));
    struct Case {
        AblationAxis axis;
        std::size_t rows;
    };
    for (Case c : {Case{AblationAxis::n_max_sweep, 5}, Case{AblationAxis::trial_scaling, 3},
                   Case{AblationAxis::temperature_top_p_grid, 12}, Case{AblationAxis::confidence_measure, 3},
                   Case{AblationAxis::best_of_n, 4}}) {
        AblationReport report = run_ablation(AblationSpec{c.axis, {}}, ctx, tasks, base, {0});
        EXPECT_EQ(report.rows.size(), c.rows) << to_string(c.axis);
        EXPECT_EQ(report.records.size(), c.rows * tasks.size());
        std::string table = report.table();
        EXPECT_EQ(static_cast<std::size_t>(std::count(table.begin(), table.end(), '\n')), c.rows + 1);
    }
    auto measures = run_ablation(AblationSpec{AblationAxis::confidence_measure, {"max_prob"}}, ctx, tasks, base, {0});
    EXPECT_EQ(measures.rows[0].config.h_max, 0.9);
    auto sweep = run_ablation(ablation_from_json({{"axis", "n_max_sweep"}, {"values", {1, 20}}}), ctx, tasks, base, {0});
    EXPECT_EQ(sweep.rows[1].config.n_max, 20);
    // a single trial per step never pays more than one pass per token
    EXPECT_EQ(sweep.rows[0].summary.mean_forward_passes, sweep.rows[0].summary.mean_generated_tokens);
}

TEST(Ablation, InvalidValuesRejected) {
    RunContext ctx = open_run_context(suite_model());
    auto tasks = suite_tasks(1);
    EXPECT_THROW(run_ablation(AblationSpec{AblationAxis::n_max_sweep, {0}}, ctx, tasks, {}, {0}), ConfigError);
    EXPECT_THROW(run_ablation(AblationSpec{AblationAxis::trial_scaling, {"linear"}}, ctx, tasks, {}, {0}), ConfigError);
    EXPECT_THROW(run_ablation(AblationSpec{AblationAxis::temperature_top_p_grid, {1.0}}, ctx, tasks, {}, {0}),
                 ConfigError);
    EXPECT_THROW(ablation_from_json({{"axis", "depth"}}), ConfigError);
}

TEST(ModelSpec, CanonicalPaths) {
    EXPECT_EQ(canonical_model_spec("remote:127.0.0.1:9"), "remote:127.0.0.1:9");
    EXPECT_TRUE(fs::path(canonical_model_spec("x.model")).is_absolute());
    const std::string kg = canonical_model_spec("kgram:corpus.txt");
    EXPECT_EQ(kg.rfind("kgram:/", 0), 0u);
}
