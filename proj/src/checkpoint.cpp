#include "meshseq/checkpoint.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace meshseq {

namespace {

template <class T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& in) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw FormatError("checkpoint: truncated");
    return v;
}

std::string get_string(std::istream& in, std::uint64_t len) {
    if (len > (1u << 26)) throw FormatError("checkpoint: implausible string length");
    std::string s(len, '\0');
    if (!in.read(s.data(), static_cast<std::streamsize>(len))) throw FormatError("checkpoint: truncated");
    return s;
}

}  // namespace

void write_checkpoint(std::ostream& out, const ExperimentConfig& config, const Model& model) {
    nlohmann::json doc = config_to_json(config);
    doc["model"] = config_to_json(ExperimentConfig{config.graph, model.config(), config.loss,
                                                   config.train, config.data, config.seeds})["model"];
    const std::string text = doc.dump();
    out.write(kCheckpointMagic, 8);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    const ParamList params = model.parameters();
    put<std::uint64_t>(out, params.size());
    for (const auto& p : params) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
        out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        put<std::uint32_t>(out, static_cast<std::uint32_t>(p.tensor.rank()));
        for (auto d : p.tensor.shape()) put<std::uint64_t>(out, d);
        auto v = p.tensor.data();
        out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    }
    if (!out) throw FormatError("checkpoint: write failed");
}

LoadedModel read_checkpoint(std::istream& in) {
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw FormatError("checkpoint: bad magic");
    const auto version = get<std::uint32_t>(in);
    if (version != kCheckpointVersion)
        throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    const std::string text = get_string(in, get<std::uint64_t>(in));
    LoadedModel loaded;
    try {
        loaded.config = config_from_json(nlohmann::json::parse(text));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint: config is not valid JSON: ") + e.what());
    }
    loaded.model = std::make_unique<Model>(loaded.config.model, generate_toy_body(loaded.config.graph));
    ParamList params = loaded.model->parameters();
    const auto count = get<std::uint64_t>(in);
    if (count != params.size())
        throw FormatError("checkpoint: holds " + std::to_string(count) + " tensors, model expects " +
                          std::to_string(params.size()));
    for (auto& p : params) {
        const std::string name = get_string(in, get<std::uint32_t>(in));
        if (name != p.name) throw FormatError("checkpoint: expected tensor '" + p.name + "', found '" + name + "'");
        const auto rank = get<std::uint32_t>(in);
        Shape shape;
        for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(get<std::uint64_t>(in));
        if (shape != p.tensor.shape())
            throw FormatError("checkpoint: tensor '" + name + "' has shape " + shape_str(shape) +
                              ", model expects " + shape_str(p.tensor.shape()));
        auto dst = p.tensor.mutable_data();
        if (!in.read(reinterpret_cast<char*>(dst.data()), static_cast<std::streamsize>(dst.size() * sizeof(double))))
            throw FormatError("checkpoint: truncated in tensor '" + name + "'");
        for (double v : dst)
            if (!std::isfinite(v)) throw FormatError("checkpoint: non-finite value in '" + name + "'");
    }
    return loaded;
}

void save_checkpoint(const std::string& path, const ExperimentConfig& config, const Model& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write checkpoint " + path);
    write_checkpoint(out, config, model);
}

LoadedModel load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open checkpoint " + path);
    return read_checkpoint(in);
}

}  // namespace meshseq
