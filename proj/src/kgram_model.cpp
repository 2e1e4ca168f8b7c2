#include <algorithm>
#include <fstream>
#include <set>

#include <json.hpp>

#include "cntp/models.hpp"

namespace cntp {

std::vector<std::string> utf8_characters(std::string_view text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        auto lead = static_cast<unsigned char>(text[i]);
        std::size_t len = lead < 0x80 ? 1 : (lead >> 5) == 0x6 ? 2 : (lead >> 4) == 0xE ? 3 : (lead >> 3) == 0x1E ? 4 : 1;
        len = std::min(len, text.size() - i);
        for (std::size_t j = 1; j < len; ++j) {
            if ((static_cast<unsigned char>(text[i + j]) & 0xC0) != 0x80) {
                len = 1;
                break;
            }
        }
        out.emplace_back(text.substr(i, len));
        i += len;
    }
    return out;
}

KGramModel::KGramModel(Vocabulary vocab, int k, double alpha, Counts counts)
    : vocab_(std::move(vocab)), k_(k), alpha_(alpha), counts_(std::move(counts)) {
    if (k_ < 1) throw Error("k-gram: k must be >= 1");
    if (!(alpha_ > 0.0)) throw Error("k-gram: alpha must be > 0");
    for (const auto& [ctx, c] : counts_) {
        if (ctx.size() != static_cast<std::size_t>(k_) || c.size() != vocab_.size()) {
            throw Error("k-gram: malformed count table");
        }
    }
}

Distribution KGramModel::next_distribution(TokenSpan prefix) const {
    const std::size_t n = vocab_.size();
    const std::vector<std::int64_t>* row = nullptr;
    if (prefix.size() >= static_cast<std::size_t>(k_)) {
        std::vector<TokenId> ctx(prefix.end() - k_, prefix.end());
        auto it = counts_.find(ctx);
        if (it != counts_.end()) row = &it->second;
    }
    std::vector<double> p(n);
    double total = 0.0;
    if (row) {
        for (auto c : *row) total += static_cast<double>(c);
    }
    const double denom = total + alpha_ * static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        double c = row ? static_cast<double>((*row)[i]) : 0.0;
        p[i] = (c + alpha_) / denom;
    }
    return Distribution(std::move(p));
}

KGramModel train_kgram(std::string_view corpus, int k, double alpha) {
    if (corpus.empty()) throw Error("k-gram: empty corpus");
    if (k < 1) throw Error("k-gram: k must be >= 1");
    if (!(alpha > 0.0)) throw Error("k-gram: alpha must be > 0");
    std::vector<std::string> chars = utf8_characters(corpus);
    std::set<std::string> distinct(chars.begin(), chars.end());
    std::vector<std::string> surfaces(distinct.begin(), distinct.end());
    surfaces.emplace_back();  // eos
    Vocabulary vocab(surfaces, token(surfaces.size() - 1));

    std::vector<TokenId> ids;
    ids.reserve(chars.size());
    for (const auto& c : chars) ids.push_back(*vocab.find(c));

    KGramModel::Counts counts;
    const auto window = static_cast<std::size_t>(k);
    for (std::size_t i = 0; i + window < ids.size(); ++i) {
        std::vector<TokenId> ctx(ids.begin() + i, ids.begin() + i + window);
        auto& row = counts[ctx];
        if (row.empty()) row.assign(vocab.size(), 0);
        ++row[index_of(ids[i + window])];
    }
    return KGramModel(std::move(vocab), k, alpha, std::move(counts));
}

void save_kgram(const std::filesystem::path& path, const KGramModel& model) {
    using nlohmann::json;
    json counts = json::array();
    for (const auto& [ctx, row] : model.counts()) {
        json c = json::array();
        for (TokenId t : ctx) c.push_back(index_of(t));
        json sparse = json::object();
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (row[i] != 0) sparse[std::to_string(i)] = row[i];
        }
        counts.push_back(json{{"context", c}, {"counts", sparse}});
    }
    json j{{"format", "cntp-kgram"},
           {"k", model.k()},
           {"alpha", model.alpha()},
           {"tokens", model.vocabulary().tokens()},
           {"eos", index_of(model.vocabulary().eos())},
           {"table", counts}};
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write k-gram model " + path.string());
    out << j.dump() << "\n";
}

KGramModel load_kgram(const std::filesystem::path& path) {
    using nlohmann::json;
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open k-gram model " + path.string());
    try {
        json j = json::parse(in);
        if (j.value("format", "") != "cntp-kgram") throw ParseError(path.string() + ": not a k-gram model file");
        Vocabulary vocab(j.at("tokens").get<std::vector<std::string>>(), token(j.at("eos").get<std::size_t>()));
        KGramModel::Counts counts;
        for (const auto& entry : j.at("table")) {
            std::vector<TokenId> ctx;
            for (const auto& t : entry.at("context")) ctx.push_back(token(t.get<std::size_t>()));
            std::vector<std::int64_t> row(vocab.size(), 0);
            for (const auto& [id, c] : entry.at("counts").items()) row.at(std::stoul(id)) = c.get<std::int64_t>();
            counts.emplace(std::move(ctx), std::move(row));
        }
        return KGramModel(std::move(vocab), j.at("k").get<int>(), j.at("alpha").get<double>(), std::move(counts));
    } catch (const json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    } catch (const std::out_of_range& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

}  // namespace cntp
