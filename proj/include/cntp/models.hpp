#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "cntp/core.hpp"

namespace cntp {

/// Source of next-token distributions. Implementations are deterministic
/// (equal prefixes give bitwise-equal vectors) and callable from several
/// threads at once.
class ModelSource {
public:
    virtual ~ModelSource() = default;
    virtual const Vocabulary& vocabulary() const = 0;
    /// Untempered, untruncated distribution after the given prefix.
    virtual Distribution next_distribution(TokenSpan prefix) const = 0;
};

inline Distribution next_distribution(const ModelSource& model, TokenSpan prefix) {
    return model.next_distribution(prefix);
}

// ---------------------------------------------------------------------------
// Scripted table model
// ---------------------------------------------------------------------------

/// Explicit prefix -> distribution table with a default row for every
/// prefix that is not listed.
///
/// File format (`.model`), one directive per line, `#` starts a comment:
///
///     vocab: "a" "b" "." "<eos>"
///     eos: 3
///     default: 0 0 0 1
///     row []: 0.7 0.3 0 0
///     row [0]: 2=1
///
/// Surfaces are JSON string literals. A row is either dense (one value per
/// token) or sparse (`id=prob` pairs, missing ids are zero). Prefixes list
/// token ids separated by spaces. The eos surface in `vocab` is ignored.
class ScriptedModel final : public ModelSource {
public:
    using Table = std::map<std::vector<TokenId>, Distribution>;

    ScriptedModel(Vocabulary vocab, Table table, Distribution fallback);

    const Vocabulary& vocabulary() const override { return vocab_; }
    Distribution next_distribution(TokenSpan prefix) const override;

    const Table& table() const { return table_; }
    const Distribution& fallback() const { return fallback_; }

    std::string to_text() const;

private:
    Vocabulary vocab_;
    Table table_;
    Distribution fallback_;
};

ScriptedModel parse_scripted_model(std::string_view text, const std::string& origin = "<memory>");
ScriptedModel load_scripted_model(const std::filesystem::path& path);
void save_scripted_model(const std::filesystem::path& path, const ScriptedModel& model);

// ---------------------------------------------------------------------------
// Character k-gram model
// ---------------------------------------------------------------------------

/// Counts of every length-(k+1) window of a corpus, one token per UTF-8
/// character plus eos, with add-alpha smoothing:
///     p(w | ctx) = (count(ctx, w) + alpha) / (total(ctx) + alpha * |V|)
/// Prefixes shorter than k, or containing eos, use smoothing only.
class KGramModel final : public ModelSource {
public:
    using Counts = std::map<std::vector<TokenId>, std::vector<std::int64_t>>;

    KGramModel(Vocabulary vocab, int k, double alpha, Counts counts);

    const Vocabulary& vocabulary() const override { return vocab_; }
    Distribution next_distribution(TokenSpan prefix) const override;

    int k() const { return k_; }
    double alpha() const { return alpha_; }
    const Counts& counts() const { return counts_; }

private:
    Vocabulary vocab_;
    int k_;
    double alpha_;
    Counts counts_;
};

/// Splits UTF-8 text into characters; malformed bytes count as single characters.
std::vector<std::string> utf8_characters(std::string_view text);

KGramModel train_kgram(std::string_view corpus, int k, double alpha);

/// JSON serialization produced by `train-kgram`.
void save_kgram(const std::filesystem::path& path, const KGramModel& model);
KGramModel load_kgram(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Remote wire protocol
// ---------------------------------------------------------------------------
//
// Newline-delimited JSON over a TCP byte stream. Requests and responses:
//     {"vocabulary":true}        -> {"tokens":[...],"eos":id}
//     {"prefix":[id,...]}        -> {"probs":[p,...]}
// Any failure is answered with {"error":"..."}.

/// Client backend. Requests on one connection are serialized.
class RemoteModel final : public ModelSource {
public:
    RemoteModel(const std::string& host, int port);
    ~RemoteModel() override;
    RemoteModel(const RemoteModel&) = delete;
    RemoteModel& operator=(const RemoteModel&) = delete;

    /// Parses "host:port" (host defaults to 127.0.0.1 when only a port is given).
    static std::unique_ptr<RemoteModel> connect(const std::string& address);

    const Vocabulary& vocabulary() const override { return *vocab_; }
    Distribution next_distribution(TokenSpan prefix) const override;

private:
    std::string round_trip(const std::string& request) const;

    int fd_ = -1;
    mutable std::mutex mutex_;
    mutable std::string buffer_;
    std::unique_ptr<Vocabulary> vocab_;
};

/// Serves a ModelSource over the wire protocol on a background thread,
/// one thread per connection.
class StubServer {
public:
    /// port 0 binds an ephemeral port; see port().
    StubServer(std::shared_ptr<const ModelSource> model, int port = 0, const std::string& bind_host = "127.0.0.1");
    ~StubServer();
    StubServer(const StubServer&) = delete;
    StubServer& operator=(const StubServer&) = delete;

    int port() const { return port_; }
    void stop();
    /// Blocks until stop() is called from another thread.
    void wait();

    /// Answers one protocol line; exposed for tests.
    static std::string handle_request(const ModelSource& model, const std::string& line);

private:
    void accept_loop();

    std::shared_ptr<const ModelSource> model_;
    int listen_fd_ = -1;
    int port_ = 0;
    std::atomic<bool> running_{true};
    std::thread acceptor_;
    std::mutex clients_mutex_;
    std::vector<std::thread> clients_;
    std::vector<int> client_fds_;
};

// ---------------------------------------------------------------------------

/// Resolves `--model` specs: a `.model` path, `kgram:<corpus.txt|model.json>`
/// (corpora are trained with the given k and alpha), or `remote:<host:port>`.
std::shared_ptr<const ModelSource> open_model(const std::string& spec, int kgram_k = 3, double kgram_alpha = 0.1);

}  // namespace cntp
