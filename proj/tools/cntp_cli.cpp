#include <csignal>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "cntp/config_io.hpp"
#include "cntp/harness.hpp"
#include "cntp/theory.hpp"

namespace {

using namespace cntp;
using nlohmann::json;

enum ExitCode { kOk = 0, kUsage = 1, kFileError = 2, kBackendError = 3, kReplayMismatch = 4 };

class UsageError : public Error {
public:
    using Error::Error;
};

struct Overrides {
    std::optional<std::string> config_file;
    std::optional<int> n_max;
    std::optional<double> h_min;
    std::optional<double> h_max;
    std::optional<double> temperature;
    std::optional<double> top_p;
    std::optional<int> beam;
    std::optional<int> paths;
    std::uint64_t seed = 0;
    std::string seeds;
};

void add_config_flags(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--config", o.config_file, "JSON decode config file");
    cmd->add_option("--seed", o.seed, "Random seed");
    cmd->add_option("--n-max", o.n_max, "Maximum trials per step");
    cmd->add_option("--h-min", o.h_min, "Lower confidence threshold");
    cmd->add_option("--h-max", o.h_max, "Upper confidence threshold");
    cmd->add_option("--temperature", o.temperature, "Sampling temperature (defaults to the strategy preset)");
    cmd->add_option("--top-p", o.top_p, "Nucleus mass");
    cmd->add_option("--beam", o.beam, "Beam width for --strategy beam");
    cmd->add_option("--paths", o.paths, "Paths for sc, cntp_sc and best_of_n");
}

Strategy resolve_strategy(std::string text, const Overrides& o) {
    if (text.find('(') == std::string::npos) {
        if (text == "beam" && o.beam) text += "(" + std::to_string(*o.beam) + ")";
        if ((text == "sc" || text == "cntp_sc" || text == "best_of_n") && o.paths) {
            text += "(" + std::to_string(*o.paths) + ")";
        }
    }
    try {
        return Strategy::parse(text);
    } catch (const ConfigError& e) {
        throw UsageError(e.what());
    }
}

DecodeConfig resolve_config(const Strategy& strategy, const Overrides& o) {
    DecodeConfig c;
    c.temperature = strategy.preset_temperature();
    if (o.config_file) c = load_config(*o.config_file, c);
    if (o.n_max) c.n_max = *o.n_max;
    if (o.h_min) c.h_min = *o.h_min;
    if (o.h_max) c.h_max = *o.h_max;
    if (o.temperature) c.temperature = *o.temperature;
    if (o.top_p) c.top_p = *o.top_p;
    c.seed = o.seed;
    try {
        validate_config(c);
    } catch (const ConfigError& e) {
        throw UsageError(e.what());
    }
    return c;
}

std::vector<std::uint64_t> resolve_seeds(const Overrides& o) {
    if (o.seeds.empty()) return {o.seed};
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(o.seeds);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t pos = 0;
            seeds.push_back(std::stoull(item, &pos));
            if (pos != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw UsageError("bad seed '" + item + "' in --seeds");
        }
    }
    if (seeds.empty()) throw UsageError("--seeds is empty");
    return seeds;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write " + path.string());
    out << text;
}

// ---------------------------------------------------------------------------

struct DecodeArgs {
    std::string model, prompt, strategy = "cntp", out = "runs";
    Overrides o;
};

int cmd_decode(const DecodeArgs& a) {
    const Strategy strategy = resolve_strategy(a.strategy, a.o);
    const DecodeConfig config = resolve_config(strategy, a.o);
    RunContext ctx = open_run_context(a.model);
    Task task{"decode", a.prompt, "", AnswerExtractor::last_token()};
    RunRecord r = run_one(ctx, task, strategy, config);
    auto dir = make_run_directory(a.out, config.seed);
    RecordLog(dir / "records.jsonl").append(r);
    json j{{"output_text", r.output_text}, {"answer", r.answer}, {"cost", ledger_to_json(r.cost)},
           {"log", (dir / "records.jsonl").string()}};
    std::cout << j.dump(2) << "\n";
    return kOk;
}

struct SuiteArgs {
    std::string model, tasks, strategy = "cntp", out = "runs";
    int jobs = 1;
    Overrides o;
};

int cmd_suite(const SuiteArgs& a) {
    const Strategy strategy = resolve_strategy(a.strategy, a.o);
    const DecodeConfig config = resolve_config(strategy, a.o);
    const auto seeds = resolve_seeds(a.o);
    const auto tasks = load_tasks(a.tasks);
    RunContext ctx = open_run_context(a.model, a.jobs);
    SuiteResult res = run_suite(ctx, tasks, strategy, config, seeds);
    auto dir = make_run_directory(a.out, seeds.front());
    RecordLog log(dir / "records.jsonl");
    for (const auto& r : res.records) log.append(r);
    json summary = summary_to_json(res.summary);
    summary["strategy"] = strategy.name();
    summary["model"] = ctx.model_spec;
    summary["config"] = config_to_json(config);
    summary["seeds"] = seeds;
    summary["log"] = (dir / "records.jsonl").string();
    write_file(dir / "summary.json", summary.dump(2) + "\n");
    std::cout << summary.dump(2) << "\n";
    return kOk;
}

struct AblateArgs {
    std::string model, tasks, spec, axis, values, strategy = "cntp", out = "runs";
    int jobs = 1;
    Overrides o;
};

int cmd_ablate(const AblateArgs& a) {
    AblationSpec spec;
    if (!a.spec.empty()) {
        std::ifstream in(a.spec);
        if (!in) throw ParseError("cannot open ablation spec " + a.spec);
        try {
            spec = ablation_from_json(json::parse(in));
        } catch (const json::exception& e) {
            throw ParseError(a.spec + ": " + e.what());
        }
    } else if (!a.axis.empty()) {
        try {
            json j{{"axis", a.axis}};
            if (!a.values.empty()) j["values"] = json::parse(a.values);
            spec = ablation_from_json(j);
        } catch (const json::exception& e) {
            throw UsageError(std::string("bad --values: ") + e.what());
        } catch (const ConfigError& e) {
            throw UsageError(e.what());
        }
    } else {
        throw UsageError("ablate needs --spec or --axis");
    }
    const Strategy strategy = resolve_strategy(a.strategy, a.o);
    const DecodeConfig config = resolve_config(strategy, a.o);
    const auto seeds = resolve_seeds(a.o);
    const auto tasks = load_tasks(a.tasks);
    RunContext ctx = open_run_context(a.model, a.jobs);
    AblationReport report = run_ablation(spec, ctx, tasks, config, seeds);
    auto dir = make_run_directory(a.out, seeds.front());
    write_file(dir / "table.tsv", report.table());
    {
        std::ofstream rows(dir / "ablation.jsonl");
        for (const auto& row : report.rows) {
            json j = summary_to_json(row.summary);
            j["axis"] = std::string(to_string(report.axis));
            j["value"] = row.value;
            j["strategy"] = row.strategy;
            j["config"] = config_to_json(row.config);
            rows << j.dump() << "\n";
        }
    }
    RecordLog log(dir / "records.jsonl");
    for (const auto& r : report.records) log.append(r);
    std::cout << report.table();
    return kOk;
}

struct TheoremArgs {
    std::string model, reference, prompt;
    bool joint = false;
    Overrides o;
};

int cmd_theorem(const TheoremArgs& a) {
    DecodeConfig config;
    config.temperature = 1.0;
    config.top_p = 1.0;
    if (a.o.config_file) config = load_config(*a.o.config_file, config);
    if (a.o.n_max) config.n_max = *a.o.n_max;
    if (a.o.h_min) config.h_min = *a.o.h_min;
    if (a.o.h_max) config.h_max = *a.o.h_max;
    if (a.o.temperature) config.temperature = *a.o.temperature;
    if (a.o.top_p) config.top_p = *a.o.top_p;
    validate_config(config);
    ScriptedModel model = load_scripted_model(a.model);
    ReferenceSequence ref = load_reference(a.reference);
    Sequence prompt(model.vocabulary(), model.vocabulary().encode(a.prompt));
    EnumerationOptions opts;
    if (a.joint) opts.selection = SelectionMode::joint_tuples;
    TheoremReport r = check_theorem1(model, prompt, ref, config, opts);
    json j{{"p_single_correct", r.p_single_correct},
           {"p_cntp_correct", r.p_cntp_correct},
           {"expected_forward_passes_cntp", r.expected_cost_cntp},
           {"expected_trial_launches_cntp", r.expected_trial_launches},
           {"expected_forward_passes_single", r.expected_cost_single},
           {"expected_steps", r.expected_steps},
           {"high_entropy_fraction", r.high_entropy_fraction},
           {"n_max", r.n_max},
           {"cost_bound", r.cost_bound},
           {"uniform_cost", r.uniform_cost},
           {"single_token_branches", r.single_token_branches},
           {"assumption1_holds", r.assumption1_holds},
           {"assumption2", r.assumption2_note},
           {"strict", r.strict},
           {"dominance_holds", r.dominance_holds},
           {"launch_bound_holds", r.launch_bound_holds},
           {"cost_bound_holds", r.cost_bound_holds}};
    std::cout << j.dump(2) << "\n";
    return kOk;
}

struct TrainArgs {
    std::string corpus, out;
    int k = 3;
    double alpha = 0.1;
};

int cmd_train(const TrainArgs& a) {
    std::ifstream in(a.corpus);
    if (!in) throw ParseError("cannot open corpus " + a.corpus);
    std::stringstream ss;
    ss << in.rdbuf();
    KGramModel model = train_kgram(ss.str(), a.k, a.alpha);
    save_kgram(a.out, model);
    std::cout << "wrote " << a.out << " (" << model.vocabulary().size() << " symbols, k=" << a.k << ")\n";
    return kOk;
}

volatile std::sig_atomic_t g_stop = 0;

struct ServeArgs {
    std::string model, host = "127.0.0.1";
    int port = 0;
};

int cmd_serve(const ServeArgs& a) {
    auto model = open_model(a.model);
    StubServer server(model, a.port, a.host);
    std::signal(SIGINT, [](int) { g_stop = 1; });
    std::signal(SIGTERM, [](int) { g_stop = 1; });
    std::cout << "listening on " << a.host << ":" << server.port() << std::endl;
    while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(50));
    server.stop();
    return kOk;
}

struct ReplayArgs {
    std::string log;
    int index = -1;
};

int cmd_replay(const ReplayArgs& a) {
    std::vector<RunRecord> records = load_records(a.log);
    if (a.index >= 0) {
        if (static_cast<std::size_t>(a.index) >= records.size()) throw UsageError("--index out of range");
        records = {records[static_cast<std::size_t>(a.index)]};
    }
    std::map<std::string, std::shared_ptr<const ModelSource>> models;
    for (const RunRecord& r : records) {
        auto& m = models[r.model_spec];
        if (!m) m = open_model(r.model_spec);
        replay(r, m);
    }
    std::cout << "replayed " << records.size() << " record(s): identical\n";
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Entropy-adaptive multi-trial decoding toolkit"};
    app.require_subcommand(1);

    DecodeArgs decode;
    auto* c_decode = app.add_subcommand("decode", "Decode a single prompt");
    c_decode->add_option("--model", decode.model, "Model spec: file.model, kgram:path or remote:host:port")->required();
    c_decode->add_option("--prompt", decode.prompt, "Prompt text");
    c_decode->add_option("--strategy", decode.strategy, "Decoding strategy");
    c_decode->add_option("--out", decode.out, "Run log directory");
    add_config_flags(c_decode, decode.o);

    SuiteArgs suite;
    auto* c_suite = app.add_subcommand("suite", "Run a strategy over a task file");
    c_suite->add_option("--model", suite.model, "Model spec")->required();
    c_suite->add_option("--tasks", suite.tasks, "Line-delimited task file")->required();
    c_suite->add_option("--strategy", suite.strategy, "Decoding strategy");
    c_suite->add_option("--out", suite.out, "Run log directory");
    c_suite->add_option("--seeds", suite.o.seeds, "Comma-separated seeds (overrides --seed)");
    c_suite->add_option("--jobs", suite.jobs, "Parallel workers")->check(CLI::PositiveNumber);
    add_config_flags(c_suite, suite.o);

    AblateArgs ablate;
    auto* c_ablate = app.add_subcommand("ablate", "Sweep one configuration axis over a task file");
    c_ablate->add_option("--model", ablate.model, "Model spec")->required();
    c_ablate->add_option("--tasks", ablate.tasks, "Line-delimited task file")->required();
    c_ablate->add_option("--spec", ablate.spec, "Ablation spec JSON file");
    c_ablate->add_option("--axis", ablate.axis, "Axis name (instead of --spec)");
    c_ablate->add_option("--values", ablate.values, "JSON array of axis values");
    c_ablate->add_option("--strategy", ablate.strategy, "Strategy for the base configuration");
    c_ablate->add_option("--out", ablate.out, "Run log directory");
    c_ablate->add_option("--seeds", ablate.o.seeds, "Comma-separated seeds");
    c_ablate->add_option("--jobs", ablate.jobs, "Parallel workers")->check(CLI::PositiveNumber);
    add_config_flags(c_ablate, ablate.o);

    TheoremArgs theorem;
    auto* c_theorem = app.add_subcommand("theorem", "Exact correctness and cost check on a scripted fixture");
    c_theorem->add_option("--model", theorem.model, "Scripted .model file")->required();
    c_theorem->add_option("--reference", theorem.reference, "Reference token ids file")->required();
    c_theorem->add_option("--prompt", theorem.prompt, "Prompt text");
    c_theorem->add_flag("--joint", theorem.joint, "Enumerate joint trial tuples instead of order statistics");
    add_config_flags(c_theorem, theorem.o);

    TrainArgs train;
    auto* c_train = app.add_subcommand("train-kgram", "Train a character k-gram model");
    c_train->add_option("--corpus", train.corpus, "Training text")->required();
    c_train->add_option("--out", train.out, "Output model JSON")->required();
    c_train->add_option("--k", train.k, "Context length")->check(CLI::NonNegativeNumber);
    c_train->add_option("--alpha", train.alpha, "Additive smoothing")->check(CLI::PositiveNumber);

    ServeArgs serve;
    auto* c_serve = app.add_subcommand("serve-stub", "Serve a model over the line-delimited JSON protocol");
    c_serve->add_option("--model", serve.model, "Model spec")->required();
    c_serve->add_option("--host", serve.host, "Bind address");
    c_serve->add_option("--port", serve.port, "Port (0 picks a free one)");

    ReplayArgs rep;
    auto* c_replay = app.add_subcommand("replay", "Re-run logged records and compare outputs");
    c_replay->add_option("--log", rep.log, "records.jsonl")->required();
    c_replay->add_option("--index", rep.index, "Replay only this record");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*c_decode) return cmd_decode(decode);
        if (*c_suite) return cmd_suite(suite);
        if (*c_ablate) return cmd_ablate(ablate);
        if (*c_theorem) return cmd_theorem(theorem);
        if (*c_train) return cmd_train(train);
        if (*c_serve) return cmd_serve(serve);
        if (*c_replay) return cmd_replay(rep);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const ReplayMismatch& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kReplayMismatch;
    } catch (const BackendError& e) {
        std::cerr << "backend error: " << e.what() << "\n";
        return kBackendError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kFileError;
    }
    return kUsage;
}
