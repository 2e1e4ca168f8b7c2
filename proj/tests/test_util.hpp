#pragma once

#include <cmath>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "cntp/models.hpp"

namespace cntp::testing {

inline std::filesystem::path data_dir() { return CNTP_DATA_DIR; }

inline std::vector<TokenId> ids(std::initializer_list<std::size_t> xs) {
    std::vector<TokenId> out;
    for (auto x : xs) out.push_back(token(x));
    return out;
}

/// Tree-shaped scripted model: every prefix shorter than `depth` gets a
/// random row (some entries zero, eos possible), deeper prefixes end.
/// Token surfaces are single letters, so no branch ever stops on punctuation.
inline ScriptedModel random_tree_model(std::mt19937_64& gen, int depth, std::size_t vocab_size) {
    std::vector<std::string> surfaces{""};
    for (std::size_t i = 1; i < vocab_size; ++i) surfaces.push_back(std::string(1, static_cast<char>('a' + i - 1)));
    Vocabulary vocab(surfaces, token(0));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    ScriptedModel::Table table;
    std::vector<std::vector<TokenId>> frontier{{}};
    for (int d = 0; d < depth; ++d) {
        std::vector<std::vector<TokenId>> next;
        for (const auto& prefix : frontier) {
            std::vector<double> w(vocab_size, 0.0);
            for (std::size_t i = 0; i < vocab_size; ++i) {
                if (unif(gen) < 0.25 && i != 1) continue;
                w[i] = -std::log(1.0 - unif(gen));
            }
            if (d == 0) w[0] = 0.0;
            table.emplace(prefix, Distribution::from_weights(w));
            for (std::size_t i = 1; i < vocab_size; ++i) {
                if (w[i] <= 0.0) continue;
                auto child = prefix;
                child.push_back(token(i));
                next.push_back(std::move(child));
            }
        }
        frontier = std::move(next);
    }
    return ScriptedModel(vocab, std::move(table), Distribution::one_hot(vocab_size, token(0)));
}

}  // namespace cntp::testing
