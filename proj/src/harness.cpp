#include "cntp/harness.hpp"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <iomanip>
#include <sstream>

#include "cntp/config_io.hpp"
#include "cntp/parallel.hpp"

namespace cntp {

using nlohmann::json;

namespace {

template <typename Fn>
auto with_context(const std::string& context, Fn fn) {
    try {
        return fn();
    } catch (const ReplayMismatch&) {
        throw;
    } catch (const BackendError& e) {
        throw BackendError(context + ": " + e.what());
    } catch (const ConfigError& e) {
        throw ConfigError(context + ": " + e.what());
    } catch (const ParseError& e) {
        throw ParseError(context + ": " + e.what());
    } catch (const DistributionError& e) {
        throw DistributionError(context + ": " + e.what());
    }
}

std::string utc_timestamp(const char* format) {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, format);
    return os.str();
}

int parse_positive(std::string_view text, std::string_view what) {
    int v = 0;
    try {
        std::size_t pos = 0;
        v = std::stoi(std::string(text), &pos);
        if (pos != text.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
        throw ConfigError("bad " + std::string(what) + " '" + std::string(text) + "'");
    }
    if (v < 1) throw ConfigError(std::string(what) + " must be >= 1");
    return v;
}

}  // namespace

// ---------------------------------------------------------------------------
// Tasks and scoring
// ---------------------------------------------------------------------------

json extractor_to_json(const AnswerExtractor& e) {
    switch (e.rule()) {
        case AnswerExtractor::Rule::last_token: return "last_token";
        case AnswerExtractor::Rule::full_text: return "full_text";
        case AnswerExtractor::Rule::text_after_marker: return {{"rule", "text_after_marker"}, {"marker", e.marker()}};
    }
    return "last_token";
}

AnswerExtractor extractor_from_json(const json& j) {
    std::string rule;
    std::string marker;
    if (j.is_string()) {
        rule = j.get<std::string>();
    } else if (j.is_object() && j.contains("rule") && j["rule"].is_string()) {
        rule = j["rule"].get<std::string>();
        if (j.contains("marker")) {
            if (!j["marker"].is_string()) throw ParseError("extractor marker must be a string");
            marker = j["marker"].get<std::string>();
        }
    } else {
        throw ParseError("extractor must be a rule name or an object with a 'rule' field");
    }
    if (rule == "last_token") return AnswerExtractor::last_token();
    if (rule == "full_text") return AnswerExtractor::full_text();
    if (rule == "text_after_marker") {
        if (marker.empty()) throw ParseError("text_after_marker needs a non-empty marker");
        return AnswerExtractor::after_marker(marker);
    }
    throw ParseError("unknown extractor rule '" + rule + "'");
}

std::vector<Task> load_tasks(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open task file " + path.string());
    std::vector<Task> tasks;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const std::string where = path.string() + ":" + std::to_string(line_no);
        Task t;
        try {
            json j = json::parse(line);
            if (!j.is_object()) throw ParseError("task must be an object");
            for (const char* key : {"id", "prompt", "reference_answer"}) {
                if (!j.contains(key) || !j[key].is_string()) {
                    throw ParseError(std::string("missing string field '") + key + "'");
                }
            }
            t.id = j["id"].get<std::string>();
            t.prompt = j["prompt"].get<std::string>();
            t.reference_answer = j["reference_answer"].get<std::string>();
            if (j.contains("extractor")) t.extractor = extractor_from_json(j["extractor"]);
        } catch (const json::exception& e) {
            throw ParseError(where + ": " + e.what());
        } catch (const Error& e) {
            throw ParseError(where + ": " + e.what());
        }
        for (const Task& other : tasks) {
            if (other.id == t.id) throw ParseError(where + ": duplicate task id '" + t.id + "'");
        }
        tasks.push_back(std::move(t));
    }
    return tasks;
}

void save_tasks(const std::filesystem::path& path, const std::vector<Task>& tasks) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write task file " + path.string());
    for (const Task& t : tasks) {
        json j{{"id", t.id}, {"prompt", t.prompt}, {"reference_answer", t.reference_answer},
               {"extractor", extractor_to_json(t.extractor)}};
        out << j.dump() << "\n";
    }
}

bool score_answer(const std::string& answer, const std::string& reference) {
    const std::string a = trim(answer);
    return !a.empty() && a == trim(reference);
}

bool score(const Vocabulary& vocab, const Sequence& output, const Task& task) {
    return score_answer(task.extractor.extract(vocab, output), task.reference_answer);
}

// ---------------------------------------------------------------------------
// Strategies
// ---------------------------------------------------------------------------

Strategy Strategy::parse(std::string_view text) {
    using K = Kind;
    const auto open = text.find('(');
    const std::string_view head = text.substr(0, open);
    std::optional<int> param;
    if (open != std::string_view::npos) {
        if (text.back() != ')') throw ConfigError("bad strategy '" + std::string(text) + "'");
        param = parse_positive(text.substr(open + 1, text.size() - open - 2), "strategy parameter");
    }
    struct Entry {
        std::string_view name;
        K kind;
        bool takes_param;
    };
    constexpr Entry entries[] = {{"greedy", K::greedy, false},     {"stochastic", K::stochastic, false},
                                 {"cntp", K::cntp, false},         {"beam", K::beam, true},
                                 {"sc", K::sc, true},              {"cntp_sc", K::cntp_sc, true},
                                 {"best_of_n", K::best_of_n, true}};
    for (const Entry& e : entries) {
        if (e.name != head) continue;
        if (e.takes_param != param.has_value()) {
            throw ConfigError("strategy '" + std::string(head) + (e.takes_param ? "' needs a parameter, e.g. " +
                                                                                      std::string(head) + "(5)"
                                                                                : "' takes no parameter"));
        }
        return Strategy{e.kind, param.value_or(0)};
    }
    throw ConfigError("unknown strategy '" + std::string(text) +
                      "' (expected greedy, stochastic, cntp, beam(B), sc(n), cntp_sc(n), best_of_n(n))");
}

std::string Strategy::name() const {
    switch (kind) {
        case Kind::greedy: return "greedy";
        case Kind::stochastic: return "stochastic";
        case Kind::cntp: return "cntp";
        case Kind::beam: return "beam(" + std::to_string(param) + ")";
        case Kind::sc: return "sc(" + std::to_string(param) + ")";
        case Kind::cntp_sc: return "cntp_sc(" + std::to_string(param) + ")";
        case Kind::best_of_n: return "best_of_n(" + std::to_string(param) + ")";
    }
    return "?";
}

double Strategy::preset_temperature() const {
    switch (kind) {
        case Kind::greedy: return 0.0;
        case Kind::cntp:
        case Kind::cntp_sc: return 1.2;
        case Kind::beam: return 1.0;
        default: return 0.6;
    }
}

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

namespace {

json path_to_json(const PathRecord& p) {
    json tokens = json::array();
    for (TokenId t : p.tokens) tokens.push_back(index_of(t));
    json trace = json::array();
    for (const StepTrace& s : p.trace) trace.push_back(json::array({s.confidence, s.trials, s.value}));
    return {{"tokens", tokens}, {"trace", trace}, {"cost", ledger_to_json(p.cost)}};
}

PathRecord path_from_json(const json& j) {
    PathRecord p;
    for (const auto& t : j.at("tokens")) p.tokens.push_back(token(t.get<std::size_t>()));
    for (const auto& s : j.at("trace")) p.trace.push_back({s.at(0).get<double>(), s.at(1).get<int>(), s.at(2).get<double>()});
    p.cost = ledger_from_json(j.at("cost"));
    return p;
}

}  // namespace

json record_outcome_json(const RunRecord& r) {
    json paths = json::array();
    for (const auto& p : r.paths) paths.push_back(path_to_json(p));
    return {{"task_id", r.task_id},
            {"strategy", r.strategy},
            {"model", r.model_spec},
            {"config", config_to_json(r.config)},
            {"seed", r.seed},
            {"prompt", r.prompt},
            {"reference_answer", r.reference_answer},
            {"extractor", extractor_to_json(r.extractor)},
            {"paths", paths},
            {"output_text", r.output_text},
            {"answer", r.answer},
            {"correct", r.correct},
            {"cost", ledger_to_json(r.cost)}};
}

json record_to_json(const RunRecord& r) {
    json j = record_outcome_json(r);
    j["wall_seconds"] = r.wall_seconds;
    j["timestamp"] = r.timestamp;
    return j;
}

RunRecord record_from_json(const json& j) {
    try {
        RunRecord r;
        r.task_id = j.at("task_id").get<std::string>();
        r.strategy = j.at("strategy").get<std::string>();
        r.model_spec = j.at("model").get<std::string>();
        r.config = config_from_json(j.at("config"));
        r.seed = j.at("seed").get<std::uint64_t>();
        r.prompt = j.at("prompt").get<std::string>();
        r.reference_answer = j.at("reference_answer").get<std::string>();
        r.extractor = extractor_from_json(j.at("extractor"));
        for (const auto& p : j.at("paths")) r.paths.push_back(path_from_json(p));
        r.output_text = j.at("output_text").get<std::string>();
        r.answer = j.at("answer").get<std::string>();
        r.correct = j.at("correct").get<bool>();
        r.cost = ledger_from_json(j.at("cost"));
        r.wall_seconds = j.value("wall_seconds", 0.0);
        r.timestamp = j.value("timestamp", std::string{});
        return r;
    } catch (const json::exception& e) {
        throw ParseError(std::string("malformed run record: ") + e.what());
    }
}

std::vector<RunRecord> load_records(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open record log " + path.string());
    std::vector<RunRecord> records;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        try {
            records.push_back(record_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        } catch (const ParseError& e) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return records;
}

std::string canonical_model_spec(const std::string& spec) {
    if (spec.rfind("remote:", 0) == 0) return spec;
    if (spec.rfind("kgram:", 0) == 0) return "kgram:" + std::filesystem::absolute(spec.substr(6)).lexically_normal().string();
    return std::filesystem::absolute(spec).lexically_normal().string();
}

RunContext open_run_context(const std::string& model_spec, int jobs) {
    RunContext ctx;
    ctx.model_spec = canonical_model_spec(model_spec);
    ctx.model = open_model(ctx.model_spec);
    ctx.jobs = std::max(1, jobs);
    return ctx;
}

RunRecord run_one(const RunContext& ctx, const Task& task, const Strategy& strategy, const DecodeConfig& config) {
    return with_context("task " + task.id, [&] {
        validate_config(config);
        using K = Strategy::Kind;
        const ModelSource& model = *ctx.model;
        const Vocabulary& vocab = model.vocabulary();
        const auto start = std::chrono::steady_clock::now();
        const Sequence prompt(vocab, vocab.encode(task.prompt));

        RunRecord r;
        r.task_id = task.id;
        r.strategy = strategy.name();
        r.model_spec = ctx.model_spec;
        r.config = config;
        r.seed = config.seed;
        r.prompt = task.prompt;
        r.reference_answer = task.reference_answer;
        r.extractor = task.extractor;

        auto single = [&](const DecodeOutcome& out) {
            r.paths.push_back({out.sequence.tokens, out.trace, out.cost});
            r.output_text = out.sequence.text;
            r.answer = task.extractor.extract(vocab, out.sequence);
            r.cost = out.cost;
        };
        switch (strategy.kind) {
            case K::greedy: single(greedy_decode(model, prompt, config)); break;
            case K::stochastic: single(stochastic_decode(model, prompt, config)); break;
            case K::cntp: single(cntp_decode(model, prompt, config)); break;
            case K::beam: single(beam_search_decode(model, prompt, strategy.param, config)); break;
            case K::best_of_n: single(best_of_n_whole_ppl(model, prompt, config, strategy.param)); break;
            case K::sc:
            case K::cntp_sc: {
                DecodeFn fn = strategy.kind == K::sc ? DecodeFn(stochastic_decode) : DecodeFn([](const ModelSource& m, const Sequence& p, const DecodeConfig& c) {
                    return cntp_decode(m, p, c);
                });
                ConsistencyResult res = self_consistency(fn, model, prompt, config, strategy.param, task.extractor, ctx.jobs);
                for (const auto& p : res.paths) r.paths.push_back({p.sequence.tokens, p.trace, p.cost});
                r.answer = res.answer;
                r.cost = res.cost;
                for (const auto& p : res.paths) {
                    if (task.extractor.extract(vocab, p.sequence) == res.answer) {
                        r.output_text = p.sequence.text;
                        break;
                    }
                }
                break;
            }
        }
        r.correct = score_answer(r.answer, task.reference_answer);
        r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        r.timestamp = utc_timestamp("%Y-%m-%dT%H:%M:%SZ");
        return r;
    });
}

// ---------------------------------------------------------------------------
// Suites
// ---------------------------------------------------------------------------

json summary_to_json(const SuiteSummary& s) {
    return {{"records", s.records},
            {"accuracy", s.accuracy},
            {"accuracy_sd", s.accuracy_sd},
            {"mean_generated_tokens", s.mean_generated_tokens},
            {"mean_forward_passes", s.mean_forward_passes},
            {"mean_trial_launches", s.mean_trial_launches},
            {"high_entropy_fraction", s.high_entropy_fraction},
            {"per_seed_accuracy", s.per_seed_accuracy}};
}

SuiteSummary summarize(const std::vector<RunRecord>& records, const std::vector<std::uint64_t>& seeds) {
    SuiteSummary s;
    s.records = records.size();
    if (records.empty()) return s;
    double correct = 0, tokens = 0, passes = 0, launches = 0, high = 0, steps = 0;
    for (const RunRecord& r : records) {
        correct += r.correct ? 1.0 : 0.0;
        tokens += static_cast<double>(r.cost.generated_tokens);
        passes += static_cast<double>(r.cost.forward_passes);
        launches += static_cast<double>(r.cost.trial_launches);
        high += static_cast<double>(r.cost.high_entropy_steps);
        steps += static_cast<double>(r.cost.total_steps);
    }
    const auto n = static_cast<double>(records.size());
    s.accuracy = correct / n;
    s.mean_generated_tokens = tokens / n;
    s.mean_forward_passes = passes / n;
    s.mean_trial_launches = launches / n;
    s.high_entropy_fraction = steps > 0 ? high / steps : 0.0;

    for (std::uint64_t seed : seeds) {
        double c = 0, m = 0;
        for (const RunRecord& r : records) {
            if (r.seed != seed) continue;
            m += 1;
            c += r.correct ? 1.0 : 0.0;
        }
        s.per_seed_accuracy.push_back(m > 0 ? c / m : 0.0);
    }
    if (s.per_seed_accuracy.size() > 1) {
        double mean = 0;
        for (double a : s.per_seed_accuracy) mean += a;
        mean /= static_cast<double>(s.per_seed_accuracy.size());
        double ss = 0;
        for (double a : s.per_seed_accuracy) ss += (a - mean) * (a - mean);
        s.accuracy_sd = std::sqrt(ss / static_cast<double>(s.per_seed_accuracy.size() - 1));
    }
    return s;
}

SuiteResult run_suite(const RunContext& ctx, const std::vector<Task>& tasks, const Strategy& strategy,
                      const DecodeConfig& config, const std::vector<std::uint64_t>& seeds) {
    if (seeds.empty()) throw ConfigError("need at least one seed");
    SuiteResult result;
    result.records.resize(tasks.size() * seeds.size());
    RunContext inner = ctx;
    if (ctx.jobs > 1) inner.jobs = 1;
    run_indexed(result.records.size(), ctx.jobs, [&](std::size_t i) {
        DecodeConfig c = config;
        c.seed = seeds[i % seeds.size()];
        result.records[i] = run_one(inner, tasks[i / seeds.size()], strategy, c);
    });
    result.summary = summarize(result.records, seeds);
    return result;
}

std::filesystem::path make_run_directory(const std::filesystem::path& out, std::uint64_t seed) {
    const std::string base = utc_timestamp("%Y%m%dT%H%M%S") + "-seed" + std::to_string(seed);
    std::filesystem::create_directories(out);
    std::filesystem::path dir = out / base;
    for (int k = 2; std::filesystem::exists(dir); ++k) dir = out / (base + "-" + std::to_string(k));
    std::filesystem::create_directory(dir);
    return dir;
}

RecordLog::RecordLog(const std::filesystem::path& path) : path_(path), out_(path, std::ios::app) {
    if (!out_) throw ParseError("cannot open record log " + path.string());
}

void RecordLog::append(const RunRecord& record) {
    out_ << record_to_json(record).dump() << "\n";
    out_.flush();
}

// ---------------------------------------------------------------------------
// Ablations
// ---------------------------------------------------------------------------

std::string_view to_string(AblationAxis a) {
    switch (a) {
        case AblationAxis::confidence_measure: return "confidence_measure";
        case AblationAxis::trial_scaling: return "trial_scaling";
        case AblationAxis::n_max_sweep: return "n_max_sweep";
        case AblationAxis::temperature_top_p_grid: return "temperature_top_p_grid";
        case AblationAxis::best_of_n: return "best_of_n";
    }
    return "?";
}

AblationAxis parse_ablation_axis(std::string_view s) {
    for (auto a : {AblationAxis::confidence_measure, AblationAxis::trial_scaling, AblationAxis::n_max_sweep,
                   AblationAxis::temperature_top_p_grid, AblationAxis::best_of_n}) {
        if (to_string(a) == s) return a;
    }
    throw ConfigError("unknown ablation axis '" + std::string(s) + "'");
}

std::vector<json> default_ablation_values(AblationAxis axis) {
    switch (axis) {
        case AblationAxis::confidence_measure: return {"entropy", "max_prob", "top1_minus_top2"};
        case AblationAxis::trial_scaling: return {"positive", "fixed", "negative"};
        case AblationAxis::n_max_sweep: return {1, 2, 5, 10, 20};
        case AblationAxis::best_of_n: return {1, 2, 4, 8};
        case AblationAxis::temperature_top_p_grid: {
            std::vector<json> grid;
            for (double t : {0.6, 0.8, 1.0, 1.2}) {
                for (double p : {0.9, 0.95, 1.0}) grid.push_back(json::array({t, p}));
            }
            return grid;
        }
    }
    return {};
}

AblationSpec ablation_from_json(const json& j) {
    if (!j.is_object() || !j.contains("axis") || !j["axis"].is_string()) {
        throw ConfigError("ablation spec needs a string 'axis'");
    }
    AblationSpec spec;
    spec.axis = parse_ablation_axis(j["axis"].get<std::string>());
    if (j.contains("values")) {
        if (!j["values"].is_array()) throw ConfigError("ablation 'values' must be an array");
        for (const auto& v : j["values"]) spec.values.push_back(v);
    }
    return spec;
}

namespace {

struct AblationCell {
    std::string label;
    Strategy strategy;
    DecodeConfig config;
};

AblationCell apply_axis_value(AblationAxis axis, const json& v, const DecodeConfig& base) {
    AblationCell cell{v.is_string() ? v.get<std::string>() : v.dump(), Strategy{Strategy::Kind::cntp, 0}, base};
    auto need_int = [&]() {
        if (!v.is_number_integer()) throw ConfigError("ablation value " + v.dump() + " must be an integer");
        return v.get<int>();
    };
    switch (axis) {
        case AblationAxis::confidence_measure: {
            if (!v.is_string()) throw ConfigError("confidence measure must be a name");
            cell.config.confidence_measure = parse_confidence_measure(v.get<std::string>());
            if (cell.config.confidence_measure != ConfidenceMeasure::entropy) {
                cell.config.h_min = 0.01;
                cell.config.h_max = 0.9;
            }
            break;
        }
        case AblationAxis::trial_scaling:
            if (!v.is_string()) throw ConfigError("trial scaling must be a name");
            cell.config.trial_scaling = parse_trial_scaling(v.get<std::string>());
            break;
        case AblationAxis::n_max_sweep: cell.config.n_max = need_int(); break;
        case AblationAxis::best_of_n:
            cell.strategy = Strategy{Strategy::Kind::best_of_n, need_int()};
            if (cell.strategy.param < 1) throw ConfigError("best_of_n value must be >= 1");
            break;
        case AblationAxis::temperature_top_p_grid: {
            if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
                throw ConfigError("grid value " + v.dump() + " must be [temperature, top_p]");
            }
            cell.config.temperature = v[0].get<double>();
            cell.config.top_p = v[1].get<double>();
            std::ostringstream os;
            os << "T=" << cell.config.temperature << ",top_p=" << cell.config.top_p;
            cell.label = os.str();
            break;
        }
    }
    validate_config(cell.config);
    return cell;
}

}  // namespace

AblationReport run_ablation(const AblationSpec& spec, const RunContext& ctx, const std::vector<Task>& tasks,
                            const DecodeConfig& base, const std::vector<std::uint64_t>& seeds) {
    AblationReport report{spec.axis, {}, {}};
    const std::vector<json> values = spec.values.empty() ? default_ablation_values(spec.axis) : spec.values;
    std::vector<AblationCell> cells;
    for (const json& v : values) cells.push_back(apply_axis_value(spec.axis, v, base));
    for (const AblationCell& cell : cells) {
        SuiteResult res = run_suite(ctx, tasks, cell.strategy, cell.config, seeds);
        report.rows.push_back({cell.label, cell.strategy.name(), cell.config, res.summary});
        report.records.insert(report.records.end(), std::make_move_iterator(res.records.begin()),
                              std::make_move_iterator(res.records.end()));
    }
    return report;
}

std::string AblationReport::table() const {
    std::ostringstream os;
    os << "axis\tvalue\tstrategy\taccuracy\taccuracy_sd\tmean_generated_tokens\tmean_forward_passes\t"
          "mean_trial_launches\thigh_entropy_fraction\n";
    os << std::fixed << std::setprecision(4);
    for (const AblationRow& r : rows) {
        os << to_string(axis) << '\t' << r.value << '\t' << r.strategy << '\t' << r.summary.accuracy << '\t'
           << r.summary.accuracy_sd << '\t' << r.summary.mean_generated_tokens << '\t' << r.summary.mean_forward_passes
           << '\t' << r.summary.mean_trial_launches << '\t' << r.summary.high_entropy_fraction << '\n';
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// Replay
// ---------------------------------------------------------------------------

namespace {

std::string describe_step(const StepTrace& s) {
    std::ostringstream os;
    os.precision(17);
    os << "trials=" << s.trials << " confidence=" << s.confidence << " value=" << s.value;
    return os.str();
}

std::string first_divergence(const RunRecord& want, const RunRecord& got) {
    const std::size_t n_paths = std::max(want.paths.size(), got.paths.size());
    for (std::size_t p = 0; p < n_paths; ++p) {
        const std::string path = n_paths > 1 ? "path " + std::to_string(p) + ", " : "";
        if (p >= want.paths.size() || p >= got.paths.size()) return "path count differs";
        const PathRecord& a = want.paths[p];
        const PathRecord& b = got.paths[p];
        const std::size_t steps = std::max(a.trace.size(), b.trace.size());
        for (std::size_t s = 0; s < steps; ++s) {
            if (s >= a.trace.size()) return path + "step " + std::to_string(s) + ": replay decodes extra steps";
            if (s >= b.trace.size()) return path + "step " + std::to_string(s) + ": replay stops early";
            if (!(a.trace[s] == b.trace[s])) {
                return path + "step " + std::to_string(s) + ": recorded " + describe_step(a.trace[s]) + ", replayed " +
                       describe_step(b.trace[s]);
            }
        }
        const std::size_t len = std::min(a.tokens.size(), b.tokens.size());
        for (std::size_t i = 0; i < len; ++i) {
            if (a.tokens[i] != b.tokens[i]) {
                return path + "token " + std::to_string(i) + ": recorded id " + std::to_string(index_of(a.tokens[i])) +
                       ", replayed id " + std::to_string(index_of(b.tokens[i]));
            }
        }
        if (a.tokens.size() != b.tokens.size()) return path + "output length differs";
        if (!(a.cost == b.cost)) return path + "cost ledger differs";
    }
    if (want.answer != got.answer) return "extracted answer differs";
    return "record fields differ";
}

}  // namespace

RunRecord replay(const RunRecord& record, std::shared_ptr<const ModelSource> model) {
    RunContext ctx;
    ctx.model_spec = record.model_spec;
    ctx.model = model ? std::move(model) : open_model(record.model_spec);
    Task task{record.task_id, record.prompt, record.reference_answer, record.extractor};
    DecodeConfig config = record.config;
    config.seed = record.seed;
    RunRecord again = run_one(ctx, task, Strategy::parse(record.strategy), config);
    if (record_outcome_json(again).dump() != record_outcome_json(record).dump()) {
        throw ReplayMismatch("replay mismatch for task " + record.task_id + ": " + first_divergence(record, again));
    }
    return again;
}

}  // namespace cntp
