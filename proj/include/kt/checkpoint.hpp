#ifndef KT_CHECKPOINT_HPP
#define KT_CHECKPOINT_HPP

// Model checkpoints as a single JSON document:
//
//   {
//     "format": "kt-checkpoint/1",
//     "model": "dkvmn" | "deep_irt" | "dkt",
//     "num_kcs": Q,
//     "arch": {"state_dim": d, "memory_size": N, "feature_dim": d_f},
//     "seed": S, "init_std": s,
//     "params": [{"name": "A", "rows": r, "cols": c, "values": [...]}, ...]
//   }
//
// state_dim is d_k = d_v for memory networks and the hidden size for the
// LSTM. Values are written as shortest round-trip decimals, so a save/load
// cycle is bit-exact.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"
#include "kt/error.hpp"
#include "kt/models.hpp"

namespace kt {

inline constexpr const char* kCheckpointFormat = "kt-checkpoint/1";

struct Checkpoint {
    Network network;
    std::uint64_t seed = 0;
    double init_std = 0.05;
};

inline NetworkKind parse_network_kind(const std::string& s) {
    if (s == "dkvmn") return NetworkKind::dkvmn;
    if (s == "deep_irt") return NetworkKind::deep_irt;
    if (s == "dkt") return NetworkKind::dkt;
    throw ValidationError("unknown network kind '" + s + "'");
}

inline nlohmann::json checkpoint_to_json(const Checkpoint& ckpt) {
    const ArchSpec spec = arch_of(ckpt.network);
    nlohmann::json j;
    j["format"] = kCheckpointFormat;
    j["model"] = to_string(spec.kind);
    j["num_kcs"] = spec.num_kcs;
    j["arch"] = {{"state_dim", spec.state_dim}, {"memory_size", spec.memory_size}, {"feature_dim", spec.feature_dim}};
    j["seed"] = ckpt.seed;
    j["init_std"] = ckpt.init_std;
    nlohmann::json params = nlohmann::json::array();
    for (const auto& p : ckpt.network.parameters()) {
        params.push_back({{"name", p.name},
                          {"rows", p.tensor.rows()},
                          {"cols", p.tensor.cols()},
                          {"values", std::vector<double>(p.tensor.values().begin(), p.tensor.values().end())}});
    }
    j["params"] = std::move(params);
    return j;
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format").get<std::string>() != kCheckpointFormat)
            throw ValidationError("unsupported checkpoint format " + j.at("format").dump());
        ArchSpec spec;
        spec.kind = parse_network_kind(j.at("model").get<std::string>());
        spec.num_kcs = j.at("num_kcs").get<std::size_t>();
        const auto& arch = j.at("arch");
        spec.state_dim = arch.at("state_dim").get<std::size_t>();
        spec.memory_size = arch.at("memory_size").get<std::size_t>();
        spec.feature_dim = arch.at("feature_dim").get<std::size_t>();
        Checkpoint ckpt;
        ckpt.seed = j.at("seed").get<std::uint64_t>();
        ckpt.init_std = j.at("init_std").get<double>();
        ckpt.network = init_params(spec, 1.0, 0);
        const ParamSet ps = ckpt.network.parameters();
        const auto& arr = j.at("params");
        if (arr.size() != ps.size())
            throw ValidationError("checkpoint has " + std::to_string(arr.size()) + " parameters, architecture needs " +
                                  std::to_string(ps.size()));
        for (std::size_t i = 0; i < ps.size(); ++i) {
            const auto& entry = arr.at(i);
            Tensor t = ps[i].tensor;
            if (entry.at("name").get<std::string>() != ps[i].name || entry.at("rows").get<std::size_t>() != t.rows() ||
                entry.at("cols").get<std::size_t>() != t.cols())
                throw ValidationError("checkpoint parameter " + std::to_string(i) + " does not match '" + ps[i].name +
                                      "' of shape " + shape_string(t.rows(), t.cols()));
            const auto values = entry.at("values").get<std::vector<double>>();
            if (values.size() != t.size()) throw ValidationError("checkpoint parameter '" + ps[i].name + "' has wrong length");
            std::copy(values.begin(), values.end(), t.mutable_values().begin());
        }
        return ckpt;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed checkpoint: ") + e.what());
    }
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write checkpoint " + path.string());
    out << checkpoint_to_json(ckpt).dump() << '\n';
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open checkpoint " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("checkpoint " + path.string() + " is not valid JSON: " + e.what());
    }
    return checkpoint_from_json(j);
}

}  // namespace kt

#endif  // KT_CHECKPOINT_HPP
