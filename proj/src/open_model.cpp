#include <fstream>
#include <sstream>

#include "cntp/models.hpp"

namespace cntp {

std::shared_ptr<const ModelSource> open_model(const std::string& spec, int kgram_k, double kgram_alpha) {
    if (spec.rfind("remote:", 0) == 0) return RemoteModel::connect(spec.substr(7));
    if (spec.rfind("kgram:", 0) == 0) {
        std::filesystem::path path = spec.substr(6);
        if (path.extension() == ".json") return std::make_shared<KGramModel>(load_kgram(path));
        std::ifstream in(path);
        if (!in) throw ParseError("cannot open corpus " + path.string());
        std::stringstream ss;
        ss << in.rdbuf();
        return std::make_shared<KGramModel>(train_kgram(ss.str(), kgram_k, kgram_alpha));
    }
    return std::make_shared<ScriptedModel>(load_scripted_model(spec));
}

}  // namespace cntp
