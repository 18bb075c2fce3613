#include "aum/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace aum {

using nlohmann::json;

namespace {

json config_to_json(const ModelConfig& c) {
    return json{{"embed_dim", c.embed_dim},
                {"depth", c.depth},
                {"state_dim", c.state_dim},
                {"expand", c.expand},
                {"conv_kernel", c.conv_kernel},
                {"patch", c.patch},
                {"num_classes", c.num_classes},
                {"n_mels", c.n_mels},
                {"target_frames", c.target_frames},
                {"variant", to_string(c.variant)},
                {"cls_position", to_string(c.cls_position)}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.embed_dim = j.at("embed_dim");
    c.depth = j.at("depth");
    c.state_dim = j.at("state_dim");
    c.expand = j.at("expand");
    c.conv_kernel = j.at("conv_kernel");
    c.patch = j.at("patch");
    c.num_classes = j.at("num_classes");
    c.n_mels = j.at("n_mels");
    c.target_frames = j.at("target_frames");
    c.variant = variant_from_string(j.at("variant"));
    c.cls_position = cls_position_from_string(j.at("cls_position"));
    return c;
}

}  // namespace

void save_checkpoint(ModelWeights<float>& model, const std::string& path) {
    std::vector<ParamRef<float>> params = model_params(model);
    json header;
    header["config"] = config_to_json(model.cfg);
    json tensors = json::array();
    std::size_t offset = 0;
    for (const ParamRef<float>& p : params) {
        tensors.push_back({{"name", p.name}, {"shape", p.array->shape}, {"offset", offset}});
        offset += p.array->numel();
    }
    header["tensors"] = tensors;
    std::string hs = header.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write checkpoint " + path);
    f.write("AUMC", 4);
    std::uint32_t version = 1, hlen = static_cast<std::uint32_t>(hs.size());
    f.write(reinterpret_cast<const char*>(&version), 4);
    f.write(reinterpret_cast<const char*>(&hlen), 4);
    f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const ParamRef<float>& p : params)
        f.write(reinterpret_cast<const char*>(p.array->data.data()),
                static_cast<std::streamsize>(p.array->numel() * 4));
    if (!f) throw IoError("short write to checkpoint " + path);
}

ModelWeights<float> load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint " + path);
    char magic[4];
    std::uint32_t version = 0, hlen = 0;
    f.read(magic, 4);
    f.read(reinterpret_cast<char*>(&version), 4);
    f.read(reinterpret_cast<char*>(&hlen), 4);
    if (!f || std::memcmp(magic, "AUMC", 4) != 0)
        throw FormatError("not a checkpoint file: " + path);
    if (version != 1) throw FormatError("unsupported checkpoint version in " + path);
    std::string hs(hlen, '\0');
    f.read(hs.data(), hlen);
    if (!f) throw FormatError("truncated checkpoint header in " + path);
    json header = json::parse(hs);

    ModelWeights<float> model = init_model<float>(config_from_json(header.at("config")), 0);
    std::vector<ParamRef<float>> params = model_params(model);
    const json& tensors = header.at("tensors");
    if (tensors.size() != params.size())
        throw FormatError("checkpoint tensor count mismatch in " + path);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const json& t = tensors[i];
        if (t.at("name") != params[i].name)
            throw FormatError("checkpoint tensor order mismatch: expected " + params[i].name +
                              ", found " + t.at("name").get<std::string>());
        std::vector<std::size_t> shape = t.at("shape").get<std::vector<std::size_t>>();
        if (shape != params[i].array->shape)
            throw FormatError("checkpoint shape mismatch for " + params[i].name);
        f.read(reinterpret_cast<char*>(params[i].array->data.data()),
               static_cast<std::streamsize>(params[i].array->numel() * 4));
    }
    if (!f) throw FormatError("truncated checkpoint data in " + path);
    return model;
}

}  // namespace aum
