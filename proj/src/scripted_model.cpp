#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "cntp/models.hpp"

namespace cntp {

ScriptedModel::ScriptedModel(Vocabulary vocab, Table table, Distribution fallback)
    : vocab_(std::move(vocab)), table_(std::move(table)), fallback_(std::move(fallback)) {
    if (fallback_.size() != vocab_.size()) throw ParseError("scripted model: default row has wrong length");
    for (const auto& [prefix, dist] : table_) {
        if (dist.size() != vocab_.size()) throw ParseError("scripted model: row has wrong length");
        for (TokenId t : prefix) {
            if (!vocab_.contains(t)) throw ParseError("scripted model: prefix token out of range");
        }
    }
}

Distribution ScriptedModel::next_distribution(TokenSpan prefix) const {
    auto it = table_.find(std::vector<TokenId>(prefix.begin(), prefix.end()));
    return it == table_.end() ? fallback_ : it->second;
}

namespace {

std::string prefix_string(const std::vector<TokenId>& prefix) {
    std::string s = "[";
    for (std::size_t i = 0; i < prefix.size(); ++i) {
        if (i) s += ' ';
        s += std::to_string(index_of(prefix[i]));
    }
    return s + "]";
}

void write_row(std::ostream& os, const Distribution& d) {
    // sparse when at most half the entries are non-zero
    std::size_t nonzero = 0;
    for (double p : d.probs()) nonzero += p != 0.0;
    os << std::setprecision(17);
    bool first = true;
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (nonzero * 2 <= d.size()) {
            if (d.at(i) == 0.0) continue;
            os << (first ? "" : " ") << i << '=' << d.at(i);
        } else {
            os << (first ? "" : " ") << d.at(i);
        }
        first = false;
    }
}

class LineParser {
public:
    LineParser(std::string origin) : origin_(std::move(origin)) {}

    [[noreturn]] void fail(const std::string& msg) const {
        throw ParseError(origin_ + ":" + std::to_string(line_) + ": " + msg);
    }

    ScriptedModel parse(std::string_view text) {
        std::istringstream in{std::string(text)};
        std::string raw;
        std::optional<std::vector<std::string>> surfaces;
        std::optional<std::size_t> eos;
        std::optional<std::vector<double>> fallback_values;
        std::vector<std::pair<std::vector<TokenId>, std::vector<double>>> rows;
        std::vector<int> row_lines;
        int default_line = 0;

        while (std::getline(in, raw)) {
            ++line_;
            std::string_view line = strip(raw);
            if (line.empty() || line.front() == '#') continue;
            if (!starts_with(line, "vocab:")) line = strip(line.substr(0, line.find('#')));
            if (starts_with(line, "vocab:")) {
                surfaces = parse_surfaces(line.substr(6));
            } else if (starts_with(line, "eos:")) {
                std::istringstream is{std::string(line.substr(4))};
                std::size_t id;
                if (!(is >> id)) fail("eos expects a token id");
                eos = id;
            } else if (starts_with(line, "default:")) {
                fallback_values = parse_values(line.substr(8), surfaces);
                default_line = line_;
            } else if (starts_with(line, "row")) {
                auto open = line.find('[');
                auto close = line.find(']');
                auto colon = line.find(':', close == std::string_view::npos ? 0 : close);
                if (open == std::string_view::npos || close == std::string_view::npos || colon == std::string_view::npos ||
                    close < open) {
                    fail("row expects 'row [ids]: values'");
                }
                std::vector<TokenId> prefix;
                std::istringstream is{std::string(line.substr(open + 1, close - open - 1))};
                std::string tok;
                while (is >> tok) {
                    try {
                        std::size_t pos = 0;
                        unsigned long id = std::stoul(tok, &pos);
                        if (pos != tok.size()) throw std::invalid_argument(tok);
                        prefix.push_back(token(id));
                    } catch (const std::exception&) {
                        fail("bad token id '" + tok + "' in row prefix");
                    }
                }
                rows.emplace_back(std::move(prefix), parse_values(line.substr(colon + 1), surfaces));
                row_lines.push_back(line_);
            } else {
                fail("unknown directive '" + std::string(line.substr(0, line.find(' '))) + "'");
            }
        }
        if (!surfaces) fail("missing 'vocab:' line");
        if (!eos) fail("missing 'eos:' line");
        if (!fallback_values) fail("missing 'default:' row");

        Vocabulary vocab(*surfaces, token(*eos));
        line_ = default_line;
        Distribution fallback = make_row(*fallback_values, vocab.size(), "default row");
        ScriptedModel::Table table;
        for (std::size_t r = 0; r < rows.size(); ++r) {
            line_ = row_lines[r];
            auto& [prefix, values] = rows[r];
            for (TokenId t : prefix) {
                if (!vocab.contains(t)) fail("row " + prefix_string(prefix) + ": token id out of range");
            }
            std::string name = "row " + prefix_string(prefix);
            if (!table.emplace(prefix, make_row(values, vocab.size(), name)).second) {
                fail("duplicate " + name);
            }
        }
        return ScriptedModel(std::move(vocab), std::move(table), std::move(fallback));
    }

private:
    static bool starts_with(std::string_view s, std::string_view p) { return s.substr(0, p.size()) == p; }

    static std::string_view strip(std::string_view s) {
        while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
        while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
        return s;
    }

    std::vector<std::string> parse_surfaces(std::string_view s) {
        std::vector<std::string> out;
        std::size_t i = 0;
        while (true) {
            while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
            if (i >= s.size()) break;
            if (s[i] != '"') fail("vocab entries must be quoted strings");
            std::size_t j = i + 1;
            while (j < s.size() && s[j] != '"') j += (s[j] == '\\') ? 2 : 1;
            if (j >= s.size()) fail("unterminated string in vocab");
            try {
                out.push_back(nlohmann::json::parse(s.substr(i, j - i + 1)).get<std::string>());
            } catch (const nlohmann::json::exception&) {
                fail("bad string literal in vocab");
            }
            i = j + 1;
        }
        if (out.empty()) fail("empty vocab");
        return out;
    }

    // dense values or sparse id=prob pairs
    std::vector<double> parse_values(std::string_view s, const std::optional<std::vector<std::string>>& surfaces) {
        if (!surfaces) fail("'vocab:' must come before rows");
        const std::size_t n = surfaces->size();
        std::istringstream is{std::string(s)};
        std::string tok;
        std::vector<double> dense;
        std::vector<double> sparse(n, 0.0);
        bool is_sparse = false;
        while (is >> tok) {
            auto eq = tok.find('=');
            try {
                if (eq != std::string::npos) {
                    is_sparse = true;
                    std::size_t id = std::stoul(tok.substr(0, eq));
                    if (id >= n) fail("sparse entry id " + std::to_string(id) + " out of range");
                    sparse[id] += std::stod(tok.substr(eq + 1));
                } else {
                    dense.push_back(std::stod(tok));
                }
            } catch (const ParseError&) {
                throw;
            } catch (const std::exception&) {
                fail("bad probability '" + tok + "'");
            }
        }
        if (is_sparse && !dense.empty()) fail("row mixes dense and sparse entries");
        if (is_sparse) return sparse;
        if (dense.size() != n) {
            fail("row has " + std::to_string(dense.size()) + " values, vocabulary has " + std::to_string(n));
        }
        return dense;
    }

    Distribution make_row(std::vector<double> values, std::size_t n, const std::string& name) {
        if (values.size() != n) fail(name + ": wrong length");
        try {
            return Distribution(std::move(values));
        } catch (const DistributionError& e) {
            fail(name + ": " + e.what());
        }
    }

    std::string origin_;
    int line_ = 0;
};

}  // namespace

ScriptedModel parse_scripted_model(std::string_view text, const std::string& origin) {
    return LineParser(origin).parse(text);
}

ScriptedModel load_scripted_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open model file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_scripted_model(ss.str(), path.string());
}

std::string ScriptedModel::to_text() const {
    std::ostringstream os;
    os << "vocab:";
    for (std::size_t i = 0; i < vocab_.size(); ++i) {
        std::string s = token(i) == vocab_.eos() ? std::string("<eos>") : vocab_.tokens()[i];
        os << ' ' << nlohmann::json(s).dump();
    }
    os << "\neos: " << index_of(vocab_.eos()) << "\ndefault: ";
    write_row(os, fallback_);
    os << '\n';
    for (const auto& [prefix, dist] : table_) {
        os << "row " << prefix_string(prefix) << ": ";
        write_row(os, dist);
        os << '\n';
    }
    return os.str();
}

void save_scripted_model(const std::filesystem::path& path, const ScriptedModel& model) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write model file " + path.string());
    out << model.to_text();
}

}  // namespace cntp
