#include "cpga/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace cpga::train {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'C', 'P', 'G', 'A'};

bool same_architecture(const model::CpgaConfig& a, const model::CpgaConfig& b) {
    return a.base_channels == b.base_channels && a.gamma_channels == b.gamma_channels &&
           a.fusion_channels == b.fusion_channels && a.attention_hidden == b.attention_hidden &&
           a.t_min == b.t_min && a.gamma_lo == b.gamma_lo && a.gamma_hi == b.gamma_hi &&
           a.t_input == b.t_input && a.a_net == b.a_net && a.g_net == b.g_net &&
           a.fusion == b.fusion && a.use_t == b.use_t && a.use_gamma == b.use_gamma;
}

} // namespace

json config_to_json(const model::CpgaConfig& cfg) {
    return json{{"base_channels", cfg.base_channels},
                {"gamma_channels", cfg.gamma_channels},
                {"fusion_channels", cfg.fusion_channels},
                {"attention_hidden", cfg.attention_hidden},
                {"use_dgf", cfg.use_dgf},
                {"dgf_downsample", cfg.dgf_downsample},
                {"dgf_radius", cfg.dgf_filter.radius},
                {"dgf_eps", cfg.dgf_filter.eps},
                {"t_min", cfg.t_min},
                {"gamma_lo", cfg.gamma_lo},
                {"gamma_hi", cfg.gamma_hi},
                {"t_input", model::to_string(cfg.t_input)},
                {"a_net", model::to_string(cfg.a_net)},
                {"g_net", model::to_string(cfg.g_net)},
                {"fusion", model::to_string(cfg.fusion)},
                {"use_t", cfg.use_t},
                {"use_gamma", cfg.use_gamma}};
}

model::CpgaConfig config_from_json(const json& j) {
    model::CpgaConfig cfg;
    cfg.base_channels = j.value("base_channels", cfg.base_channels);
    cfg.gamma_channels = j.value("gamma_channels", cfg.gamma_channels);
    cfg.fusion_channels = j.value("fusion_channels", cfg.fusion_channels);
    cfg.attention_hidden = j.value("attention_hidden", cfg.attention_hidden);
    cfg.use_dgf = j.value("use_dgf", cfg.use_dgf);
    cfg.dgf_downsample = j.value("dgf_downsample", cfg.dgf_downsample);
    cfg.dgf_filter.radius = j.value("dgf_radius", cfg.dgf_filter.radius);
    cfg.dgf_filter.eps = j.value("dgf_eps", cfg.dgf_filter.eps);
    cfg.t_min = j.value("t_min", cfg.t_min);
    cfg.gamma_lo = j.value("gamma_lo", cfg.gamma_lo);
    cfg.gamma_hi = j.value("gamma_hi", cfg.gamma_hi);
    if (j.contains("t_input")) cfg.t_input = model::t_input_from_string(j.at("t_input"));
    if (j.contains("a_net")) cfg.a_net = model::a_net_from_string(j.at("a_net"));
    if (j.contains("g_net")) cfg.g_net = model::g_net_from_string(j.at("g_net"));
    if (j.contains("fusion")) cfg.fusion = model::fusion_from_string(j.at("fusion"));
    cfg.use_t = j.value("use_t", cfg.use_t);
    cfg.use_gamma = j.value("use_gamma", cfg.use_gamma);
    return cfg;
}

Checkpoint snapshot(const model::CpgaNet& net, json provenance) {
    Checkpoint ckpt;
    ckpt.config = net.config();
    ckpt.provenance = std::move(provenance);
    if (!ckpt.provenance.is_array()) {
        throw ShapeError("snapshot: provenance must be a JSON array");
    }
    for (const auto& [name, t] : net.named_params()) {
        ckpt.tensors.push_back({name, t.clone()});
    }
    return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    json dir = json::array();
    uint64_t offset = 0;
    for (const auto& [name, t] : ckpt.tensors) {
        const uint64_t bytes = static_cast<uint64_t>(t.size()) * sizeof(float);
        dir.push_back(json{{"name", name}, {"shape", t.shape()}, {"offset", offset},
                           {"bytes", bytes}});
        offset += bytes;
    }
    const json header{{"config", config_to_json(ckpt.config)},
                      {"provenance", ckpt.provenance},
                      {"tensors", dir}};
    const std::string header_str = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("save_checkpoint: cannot open " + path.string());
    }
    out.write(kMagic, 4);
    const uint32_t version = kCheckpointVersion;
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    const uint64_t header_len = header_str.size();
    out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for (const auto& [name, t] : ckpt.tensors) {
        out.write(reinterpret_cast<const char*>(t.data()),
                  static_cast<std::streamsize>(sizeof(float) * static_cast<size_t>(t.size())));
    }
    if (!out) {
        throw IoError("save_checkpoint: write failed for " + path.string());
    }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("load_checkpoint: cannot open " + path.string());
    }
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) {
        throw IoError("load_checkpoint: bad magic in " + path.string());
    }
    uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    if (!in || version != kCheckpointVersion) {
        throw IoError("load_checkpoint: unsupported format version in " + path.string());
    }
    uint64_t header_len = 0;
    in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
    std::string header_str(header_len, '\0');
    in.read(header_str.data(), static_cast<std::streamsize>(header_len));
    if (!in) {
        throw IoError("load_checkpoint: truncated header in " + path.string());
    }
    const json header = json::parse(header_str);

    Checkpoint ckpt;
    ckpt.config = config_from_json(header.at("config"));
    ckpt.provenance = header.at("provenance");
    for (const auto& entry : header.at("tensors")) {
        const std::string name = entry.at("name");
        const Shape shape = entry.at("shape").get<Shape>();
        const uint64_t bytes = entry.at("bytes");
        const int n = shape_size(shape);
        if (bytes != static_cast<uint64_t>(n) * sizeof(float)) {
            throw IoError("load_checkpoint: byte count mismatch for tensor '" + name + "'");
        }
        std::vector<float> values(static_cast<size_t>(n));
        in.read(reinterpret_cast<char*>(values.data()),
                static_cast<std::streamsize>(bytes));
        if (!in) {
            throw IoError("load_checkpoint: truncated payload for tensor '" + name + "'");
        }
        ckpt.tensors.push_back({name, Tensor::from_vector(shape, std::move(values))});
    }
    return ckpt;
}

model::CpgaNet restore(const Checkpoint& ckpt, uint64_t seed) {
    model::CpgaNet net(ckpt.config, seed);
    apply_weights(ckpt, net);
    return net;
}

void apply_weights(const Checkpoint& ckpt, model::CpgaNet& net) {
    if (!same_architecture(ckpt.config, net.config())) {
        throw ShapeError("apply_weights: checkpoint config does not match the target net");
    }
    const auto& params = net.named_params();
    if (params.size() != ckpt.tensors.size()) {
        throw ShapeError("apply_weights: parameter count mismatch (" +
                         std::to_string(ckpt.tensors.size()) + " stored vs " +
                         std::to_string(params.size()) + " expected)");
    }
    for (size_t i = 0; i < params.size(); ++i) {
        const auto& [stored_name, stored] = ckpt.tensors[i];
        const auto& [name, param] = params[i];
        if (stored_name != name || stored.shape() != param.shape()) {
            throw ShapeError("apply_weights: tensor mismatch at '" + stored_name +
                             "' (expected '" + name + "')");
        }
        Tensor dst = param;
        std::copy_n(stored.data(), stored.size(), dst.data());
    }
}

} // namespace cpga::train
