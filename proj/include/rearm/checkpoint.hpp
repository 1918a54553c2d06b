#pragma once

#include "rearm/model.hpp"

#include <nlohmann/json.hpp>

namespace rearm {

inline nlohmann::json to_json(const HyperParams& hp) {
    const auto& h = hp.homograph;
    return {{"d", hp.dim},
            {"batch_size", hp.batch_size},
            {"lr", hp.learning_rate},
            {"gcn_layers", hp.gcn_layers},
            {"hom_layers", h.layers},
            {"top_k_co", h.top_k_co},
            {"top_k_sem", h.top_k_sem},
            {"alpha_modal_user", h.alpha_modal_user},
            {"alpha_modal_item", h.alpha_modal_item},
            {"alpha_co_user", h.alpha_co_user},
            {"alpha_co_item", h.alpha_co_item},
            {"tau", hp.tau},
            {"lambda_cl", hp.lambda_cl},
            {"lambda_ort", hp.lambda_ort},
            {"lambda_p", hp.lambda_p},
            {"rank", hp.rank},
            {"dropout", hp.dropout},
            {"softmax_axis", hp.softmax_axis == SoftmaxAxis::columns ? "columns" : "rows"},
            {"epochs", hp.epochs},
            {"patience", hp.patience},
            {"eval_topk", hp.eval_topk},
            {"seed", hp.seed}};
}

inline HyperParams hyperparams_from_json(const nlohmann::json& j) {
    HyperParams hp;
    hp.dim = j.at("d");
    hp.batch_size = j.at("batch_size");
    hp.learning_rate = j.at("lr");
    hp.gcn_layers = j.at("gcn_layers");
    hp.homograph.layers = j.at("hom_layers");
    hp.homograph.top_k_co = j.at("top_k_co");
    hp.homograph.top_k_sem = j.at("top_k_sem");
    hp.homograph.alpha_modal_user = j.at("alpha_modal_user").get<std::vector<double>>();
    hp.homograph.alpha_modal_item = j.at("alpha_modal_item").get<std::vector<double>>();
    hp.homograph.alpha_co_user = j.at("alpha_co_user");
    hp.homograph.alpha_co_item = j.at("alpha_co_item");
    hp.tau = j.at("tau");
    hp.lambda_cl = j.at("lambda_cl");
    hp.lambda_ort = j.at("lambda_ort");
    hp.lambda_p = j.at("lambda_p");
    hp.rank = j.at("rank");
    hp.dropout = j.at("dropout");
    hp.softmax_axis = j.at("softmax_axis") == "rows" ? SoftmaxAxis::rows : SoftmaxAxis::columns;
    hp.epochs = j.at("epochs");
    hp.patience = j.at("patience");
    hp.eval_topk = j.at("eval_topk").get<std::vector<Index>>();
    hp.seed = j.at("seed");
    return hp;
}

struct Checkpoint {
    HyperParams hp;
    Ablation ablation;
    std::uint64_t dataset_digest = 0;
    Index best_epoch = 0;
    ModelParams<float> params;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// "REARM", u32 version, u64 header length, JSON header, then every tensor
/// as little-endian f32 in manifest order.
inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    nlohmann::json manifest = nlohmann::json::array();
    ck.params.visit([&](const std::string& name, const MatrixF& m) {
        manifest.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
    });
    const nlohmann::json header{{"hyperparams", to_json(ck.hp)},
                                {"ablation", ck.ablation.flags()},
                                {"dataset_digest", hex_digest(ck.dataset_digest)},
                                {"best_epoch", ck.best_epoch},
                                {"rank", ck.params.rank()},
                                {"tensors", manifest}};
    const std::string text = header.dump();
    auto out = io::open_out(path);
    out.write("REARM", 5);
    io::write_pod(out, kCheckpointVersion);
    io::write_pod(out, static_cast<std::uint64_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    ck.params.visit([&](const std::string&, const MatrixF& m) {
        out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
    });
    if (!out) throw DataError("write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    auto in = io::open_in(path);
    io::expect_magic(in, "REARM", path);
    const auto version = io::read_pod<std::uint32_t>(in, path);
    if (version != kCheckpointVersion) throw DataError(path + ": unsupported checkpoint version");
    const auto len = io::read_pod<std::uint64_t>(in, path);
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) throw DataError(path + ": truncated header");
    const auto header = nlohmann::json::parse(text);

    Checkpoint ck;
    ck.hp = hyperparams_from_json(header.at("hyperparams"));
    ck.ablation = Ablation::parse(header.at("ablation").get<std::vector<std::string>>());
    ck.dataset_digest = std::stoull(header.at("dataset_digest").get<std::string>(), nullptr, 16);
    ck.best_epoch = header.at("best_epoch");
    const auto& manifest = header.at("tensors");
    auto names = ck.params.names();
    auto tensors = ck.params.tensors();
    if (manifest.size() != tensors.size()) throw DataError(path + ": tensor manifest does not match model layout");
    for (std::size_t k = 0; k < tensors.size(); ++k) {
        if (manifest[k].at("name") != names[k]) throw DataError(path + ": unexpected tensor " + manifest[k].at("name").get<std::string>());
        tensors[k]->resize(manifest[k].at("rows").get<Index>(), manifest[k].at("cols").get<Index>());
        in.read(reinterpret_cast<char*>(tensors[k]->data()), static_cast<std::streamsize>(tensors[k]->size() * sizeof(float)));
        if (!in) throw DataError(path + ": truncated tensor " + names[k]);
    }
    ck.params.meta[0].rank = ck.params.meta[1].rank = header.at("rank").get<Index>();
    return ck;
}

}  // namespace rearm
