#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cntp/baselines.hpp"
#include "cntp/models.hpp"

namespace cntp {

class ReplayMismatch : public Error {
public:
    using Error::Error;
};

struct Task {
    std::string id;
    std::string prompt;
    std::string reference_answer;
    AnswerExtractor extractor;
};

/// Line-delimited JSON: {"id", "prompt", "reference_answer", "extractor"}.
/// extractor is "last_token", "full_text" or {"rule": "text_after_marker",
/// "marker": "..."}; it defaults to last_token.
std::vector<Task> load_tasks(const std::filesystem::path& path);
void save_tasks(const std::filesystem::path& path, const std::vector<Task>& tasks);

nlohmann::json extractor_to_json(const AnswerExtractor& e);
AnswerExtractor extractor_from_json(const nlohmann::json& j);

/// Case-sensitive exact match after trimming; an empty answer never scores.
bool score_answer(const std::string& answer, const std::string& reference);
bool score(const Vocabulary& vocab, const Sequence& output, const Task& task);

// ---------------------------------------------------------------------------

struct Strategy {
    enum class Kind { greedy, stochastic, cntp, beam, sc, cntp_sc, best_of_n };
    Kind kind = Kind::cntp;
    /// Beam width, number of paths, or n for best_of_n.
    int param = 0;

    /// Accepts "greedy", "stochastic", "cntp", "beam(B)", "sc(n)",
    /// "cntp_sc(n)" and "best_of_n(n)".
    static Strategy parse(std::string_view text);
    std::string name() const;
    /// Default sampling temperature for the strategy.
    double preset_temperature() const;
    bool operator==(const Strategy&) const = default;
};

struct PathRecord {
    std::vector<TokenId> tokens;
    std::vector<StepTrace> trace;
    CostLedger cost;
};

struct RunRecord {
    std::string task_id;
    std::string strategy;
    std::string model_spec;
    DecodeConfig config;
    std::uint64_t seed = 0;
    std::string prompt;
    std::string reference_answer;
    AnswerExtractor extractor;
    /// One entry for single-path strategies, one per path for voting.
    std::vector<PathRecord> paths;
    std::string output_text;
    std::string answer;
    bool correct = false;
    CostLedger cost;
    double wall_seconds = 0.0;
    std::string timestamp;
};

nlohmann::json record_to_json(const RunRecord& r);
RunRecord record_from_json(const nlohmann::json& j);
/// The deterministic part of a record (everything but wall time and timestamp).
nlohmann::json record_outcome_json(const RunRecord& r);

std::vector<RunRecord> load_records(const std::filesystem::path& path);

/// Absolute form of file-backed model specs so a record replays from any
/// working directory.
std::string canonical_model_spec(const std::string& spec);

struct RunContext {
    std::shared_ptr<const ModelSource> model;
    std::string model_spec;
    /// Workers for tasks in run_suite and for paths of voting strategies.
    int jobs = 1;
};

RunContext open_run_context(const std::string& model_spec, int jobs = 1);

/// Runs one prompt; config.seed is the run seed.
RunRecord run_one(const RunContext& ctx, const Task& task, const Strategy& strategy, const DecodeConfig& config);

struct SuiteSummary {
    std::size_t records = 0;
    double accuracy = 0.0;
    /// Sample standard deviation of per-seed accuracy (0 with one seed).
    double accuracy_sd = 0.0;
    double mean_generated_tokens = 0.0;
    double mean_forward_passes = 0.0;
    double mean_trial_launches = 0.0;
    double high_entropy_fraction = 0.0;
    std::vector<double> per_seed_accuracy;

    bool operator==(const SuiteSummary&) const = default;
};

nlohmann::json summary_to_json(const SuiteSummary& s);

struct SuiteResult {
    std::vector<RunRecord> records;  // task-major, seed-minor
    SuiteSummary summary;
};

SuiteSummary summarize(const std::vector<RunRecord>& records, const std::vector<std::uint64_t>& seeds);

/// One record per (task, seed). Tasks may run on ctx.jobs workers; the
/// records and summary do not depend on the worker count.
SuiteResult run_suite(const RunContext& ctx, const std::vector<Task>& tasks, const Strategy& strategy,
                      const DecodeConfig& config, const std::vector<std::uint64_t>& seeds);

// ---------------------------------------------------------------------------

/// Creates `<out>/<YYYYmmddTHHMMSS>-seed<seed>` (suffixed when taken).
std::filesystem::path make_run_directory(const std::filesystem::path& out, std::uint64_t seed);

/// Append-only line-delimited record log.
class RecordLog {
public:
    explicit RecordLog(const std::filesystem::path& path);
    void append(const RunRecord& record);
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
    std::ofstream out_;
};

// ---------------------------------------------------------------------------

enum class AblationAxis { confidence_measure, trial_scaling, n_max_sweep, temperature_top_p_grid, best_of_n };

std::string_view to_string(AblationAxis a);
AblationAxis parse_ablation_axis(std::string_view s);

struct AblationSpec {
    AblationAxis axis = AblationAxis::n_max_sweep;
    /// Axis values: measure or scaling names, integers, or [temperature,
    /// top_p] pairs for the grid. Empty selects the axis defaults.
    std::vector<nlohmann::json> values;
};

/// {"axis": ..., "values": [...]}.
AblationSpec ablation_from_json(const nlohmann::json& j);
std::vector<nlohmann::json> default_ablation_values(AblationAxis axis);

struct AblationRow {
    std::string value;
    std::string strategy;
    DecodeConfig config;
    SuiteSummary summary;
};

struct AblationReport {
    AblationAxis axis;
    std::vector<AblationRow> rows;
    std::vector<RunRecord> records;

    /// Tab-separated table with a header line.
    std::string table() const;
};

/// Every row runs `strategy` (cntp unless the axis is best_of_n) on the
/// task file with the axis value applied to `base`. Confidence measures on
/// the [0, 1] scale use h_min 0.01 and h_max 0.9.
AblationReport run_ablation(const AblationSpec& spec, const RunContext& ctx, const std::vector<Task>& tasks,
                            const DecodeConfig& base, const std::vector<std::uint64_t>& seeds);

// ---------------------------------------------------------------------------

/// Re-executes a record against its model spec. Throws ReplayMismatch naming
/// the first diverging step when the output differs.
RunRecord replay(const RunRecord& record, std::shared_ptr<const ModelSource> model = nullptr);

}  // namespace cntp
