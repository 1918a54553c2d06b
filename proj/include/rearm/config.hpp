#pragma once

#include "rearm/model.hpp"

#include <cstdlib>
#include <filesystem>
#include <sstream>

namespace rearm {

struct ConfigKey {
    const char* name;
    const char* default_value;
    const char* help;
    bool affects_graphs;
};

// clang-format off
inline const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys{
        {"interactions",       "",           "interaction TSV (user<TAB>item)", true},
        {"visual_features",    "",           "item visual feature matrix (MMFT or text)", true},
        {"textual_features",   "",           "item textual feature matrix (MMFT or text)", true},
        {"cache_dir",          "cache",      "graph cache directory (REARM_CACHE_DIR overrides)", false},
        {"out",                "out",        "output directory", false},
        {"checkpoint",         "",           "checkpoint to evaluate (default <out>/checkpoint.rearm)", false},
        {"checkpoint_b",       "",           "second checkpoint for diff-matrix", false},
        {"k_core",             "5",          "k-core threshold", true},
        {"split_seed",         "2024",       "seed of the 8:1:1 split", true},
        {"d",                  "64",         "embedding dimension", false},
        {"batch_size",         "2048",       "training batch size", false},
        {"lr",                 "0.001",      "learning rate", false},
        {"gcn_layers",         "4",          "LightGCN layers", false},
        {"hom_layers",         "1",          "homograph propagation layers", false},
        {"top_k_co",           "10",         "co-occurrence neighbours kept", true},
        {"top_k_sem",          "10",         "semantic neighbours kept", true},
        {"alpha_user_visual",  "0.5",        "user modal importance (visual)", true},
        {"alpha_user_textual", "0.5",        "user modal importance (textual)", true},
        {"alpha_item_visual",  "0.5",        "item modal importance (visual)", true},
        {"alpha_item_textual", "0.5",        "item modal importance (textual)", true},
        {"alpha_co_user",      "0.5",        "user co-occurrence factor", true},
        {"alpha_co_item",      "0.5",        "item co-occurrence factor", true},
        {"tau",                "0.2",        "InfoNCE temperature", false},
        {"lambda_cl",          "0.01",       "contrastive loss weight", false},
        {"lambda_ort",         "0.01",       "orthogonal loss weight", false},
        {"lambda_p",           "0.0001",     "L2 weight", false},
        {"rank",               "4",          "meta-network transformation rank k", false},
        {"dropout",            "0.1",        "attention dropout", false},
        {"softmax_axis",       "columns",    "attention softmax axis (columns|rows)", false},
        {"epochs",             "2000",       "maximum epochs", false},
        {"patience",           "20",         "early-stopping patience (epochs)", false},
        {"eval_topk",          "10,20",      "comma-separated K list", false},
        {"seed",               "2024",       "model seed", false},
        {"threads",            "0",          "worker threads (0 = auto)", false},
        {"ablation",           "",           "comma-separated ablation flags", true},
        {"record_time",        "false",      "write wall-clock seconds into history", false},
        {"diff_users",         "0-9",        "user subset for diff-matrix (list or a-b range)", false},
        {"diff_items",         "0-9",        "item subset for diff-matrix (list or a-b range)", false},
    };
    return keys;
}
// clang-format on

/// Flat key = value configuration with '#' comments. Unknown keys are rejected.
class RunConfig {
public:
    RunConfig() {
        for (const auto& k : config_keys()) values_[k.name] = k.default_value;
    }

    static bool known(const std::string& key) {
        for (const auto& k : config_keys())
            if (key == k.name) return true;
        return false;
    }

    void set(const std::string& key, const std::string& value) {
        if (!known(key)) throw ConfigError("unknown config key: " + key);
        values_[key] = value;
    }

    void parse(std::istream& in, const std::string& source = "<config>") {
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
            const auto first = line.find_first_not_of(" \t\r");
            if (first == std::string::npos) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key = value");
            set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        }
    }

    void load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config " + path);
        parse(in, path);
    }

    const std::string& str(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("unknown config key: " + key);
        return it->second;
    }
    double real(const std::string& key) const {
        const auto& s = str(key);
        char* end = nullptr;
        const double v = std::strtod(s.c_str(), &end);
        if (s.empty() || *end != '\0') throw ConfigError(key + ": expected a number, got '" + s + "'");
        return v;
    }
    Index integer(const std::string& key) const {
        const double v = real(key);
        if (v != std::floor(v)) throw ConfigError(key + ": expected an integer");
        return static_cast<Index>(v);
    }
    bool flag(const std::string& key) const {
        const auto& s = str(key);
        if (s == "true" || s == "1" || s == "yes") return true;
        if (s == "false" || s == "0" || s == "no" || s.empty()) return false;
        throw ConfigError(key + ": expected true/false");
    }
    std::vector<std::string> list(const std::string& key) const {
        std::vector<std::string> out;
        std::stringstream ss(str(key));
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            tok = trim(tok);
            if (!tok.empty()) out.push_back(tok);
        }
        return out;
    }
    /// "a-b" inclusive range or comma list.
    std::vector<Index> index_list(const std::string& key) const {
        std::vector<Index> out;
        for (const auto& tok : list(key)) {
            const auto dash = tok.find('-', 1);
            try {
                if (dash == std::string::npos) {
                    out.push_back(std::stoll(tok));
                } else {
                    const Index a = std::stoll(tok.substr(0, dash)), b = std::stoll(tok.substr(dash + 1));
                    for (Index i = a; i <= b; ++i) out.push_back(i);
                }
            } catch (const std::logic_error&) {
                throw ConfigError(key + ": bad index '" + tok + "'");
            }
        }
        return out;
    }

    std::string cache_dir() const {
        if (const char* env = std::getenv("REARM_CACHE_DIR"); env && *env) return env;
        return str("cache_dir");
    }

    Ablation ablation() const { return Ablation::parse(list("ablation")); }

    /// Hyperparameters with the ablation already applied.
    HyperParams hyperparams() const {
        HyperParams hp;
        hp.dim = integer("d");
        hp.batch_size = integer("batch_size");
        hp.learning_rate = real("lr");
        hp.gcn_layers = integer("gcn_layers");
        hp.homograph.layers = integer("hom_layers");
        hp.homograph.top_k_co = integer("top_k_co");
        hp.homograph.top_k_sem = integer("top_k_sem");
        hp.homograph.alpha_modal_user = {real("alpha_user_visual"), real("alpha_user_textual")};
        hp.homograph.alpha_modal_item = {real("alpha_item_visual"), real("alpha_item_textual")};
        hp.homograph.alpha_co_user = real("alpha_co_user");
        hp.homograph.alpha_co_item = real("alpha_co_item");
        hp.tau = real("tau");
        hp.lambda_cl = real("lambda_cl");
        hp.lambda_ort = real("lambda_ort");
        hp.lambda_p = real("lambda_p");
        hp.rank = integer("rank");
        hp.dropout = real("dropout");
        const auto& axis = str("softmax_axis");
        if (axis != "columns" && axis != "rows") throw ConfigError("softmax_axis must be columns or rows");
        hp.softmax_axis = axis == "rows" ? SoftmaxAxis::rows : SoftmaxAxis::columns;
        hp.epochs = integer("epochs");
        hp.patience = integer("patience");
        hp.eval_topk.clear();
        for (const auto& k : list("eval_topk")) {
            try {
                hp.eval_topk.push_back(std::stoll(k));
            } catch (const std::logic_error&) {
                throw ConfigError("eval_topk: bad K '" + k + "'");
            }
        }
        hp.seed = static_cast<std::uint64_t>(integer("seed"));
        hp = hp.with(ablation());
        hp.validate();
        return hp;
    }

    /// Paths required by data-consuming commands must exist before any compute.
    void validate_inputs() const {
        for (const char* key : {"interactions", "visual_features", "textual_features"}) {
            const auto& p = str(key);
            if (p.empty()) throw ConfigError("missing required path: " + std::string(key));
            if (!std::filesystem::is_regular_file(p)) throw DataError(std::string(key) + ": no such file " + p);
        }
    }

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    static std::string trim(const std::string& s) {
        const auto a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return "";
        const auto b = s.find_last_not_of(" \t\r");
        return s.substr(a, b - a + 1);
    }

    std::map<std::string, std::string> values_;
};

}  // namespace rearm
