#include "meshseq/sequence_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace meshseq {

static_assert(std::endian::native == std::endian::little,
              "sequence files are written with the host byte order, which must be little-endian");

namespace {

template <class T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& in, const char* what) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v))
        throw FormatError(std::string("sequence file: truncated while reading ") + what);
    return v;
}

void put_block(std::ostream& out, const std::vector<double>& v) {
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> get_block(std::istream& in, std::size_t count, const char* what) {
    std::vector<double> v(count);
    if (!in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(count * sizeof(double))))
        throw FormatError(std::string("sequence file: truncated in ") + what);
    return v;
}

constexpr std::uint64_t kMaxAxis = 1u << 24;

}  // namespace

void write_sequence_binary(std::ostream& out, const MotionSequence& seq) {
    const std::size_t T = seq.frames, n = seq.n_vertices, J = seq.n_joints;
    if (seq.gt_vertices.size() != T * n * 3 || seq.gt_joints.size() != T * J * 3 ||
        seq.observations.size() != T * n * kObsChannels)
        throw ShapeError("write_sequence: array sizes disagree with the header");
    out.write(kSequenceMagic, 4);
    put<std::uint32_t>(out, kSequenceVersion);
    put<std::uint64_t>(out, T);
    put<std::uint64_t>(out, n);
    put<std::uint64_t>(out, J);
    put_block(out, seq.gt_vertices);
    put_block(out, seq.gt_joints);
    put_block(out, seq.observations);
    if (!out) throw FormatError("sequence file: write failed");
}

MotionSequence read_sequence_binary(std::istream& in) {
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kSequenceMagic, 4) != 0)
        throw FormatError("sequence file: bad magic");
    const auto version = get<std::uint32_t>(in, "version");
    if (version != kSequenceVersion)
        throw FormatError("sequence file: unsupported version " + std::to_string(version));
    MotionSequence seq;
    const auto T = get<std::uint64_t>(in, "T"), n = get<std::uint64_t>(in, "n"),
               J = get<std::uint64_t>(in, "n_joints");
    if (T == 0 || n == 0 || J == 0 || T > kMaxAxis || n > kMaxAxis || J > kMaxAxis)
        throw FormatError("sequence file: implausible header dimensions");
    seq.frames = T;
    seq.n_vertices = n;
    seq.n_joints = J;
    seq.gt_vertices = get_block(in, T * n * 3, "gt_vertices");
    seq.gt_joints = get_block(in, T * J * 3, "gt_joints");
    seq.observations = get_block(in, T * n * kObsChannels, "observations");
    return seq;
}

nlohmann::json sequence_sidecar(const MotionSequence& seq, const std::vector<std::string>& part_names) {
    auto log = nlohmann::json::array();
    for (const auto& e : seq.corruption_log) {
        nlohmann::json j{{"frame", e.frame},
                         {"part", e.part},
                         {"kind", to_string(e.kind)},
                         {"severity", e.severity}};
        if (e.part < part_names.size()) j["part_name"] = part_names[e.part];
        log.push_back(std::move(j));
    }
    return {{"format", "meshseq.sequence"},
            {"version", kSequenceVersion},
            {"id", seq.id},
            {"frames", seq.frames},
            {"n_vertices", seq.n_vertices},
            {"n_joints", seq.n_joints},
            {"corruption_log", std::move(log)}};
}

void apply_sidecar(MotionSequence& seq, const nlohmann::json& sidecar) {
    try {
        if (sidecar.at("format") != "meshseq.sequence")
            throw FormatError("sequence sidecar: unexpected format");
        if (sidecar.at("frames").get<std::size_t>() != seq.frames ||
            sidecar.at("n_vertices").get<std::size_t>() != seq.n_vertices ||
            sidecar.at("n_joints").get<std::size_t>() != seq.n_joints)
            throw FormatError("sequence sidecar: dimensions disagree with the binary header");
        seq.id = sidecar.at("id").get<std::string>();
        seq.corruption_log.clear();
        for (const auto& e : sidecar.at("corruption_log")) {
            CorruptionEvent ev{e.at("frame").get<std::size_t>(), e.at("part").get<std::size_t>(),
                               corruption_kind_from_string(e.at("kind").get<std::string>()),
                               e.at("severity").get<double>()};
            if (ev.frame >= seq.frames) throw FormatError("sequence sidecar: event frame out of range");
            seq.corruption_log.push_back(ev);
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("sequence sidecar: ") + e.what());
    }
}

void save_sequence(const std::filesystem::path& dir, const MotionSequence& seq,
                   const std::vector<std::string>& part_names) {
    std::filesystem::create_directories(dir);
    std::ofstream bin(dir / (seq.id + ".bin"), std::ios::binary);
    if (!bin) throw FormatError("cannot write " + (dir / (seq.id + ".bin")).string());
    write_sequence_binary(bin, seq);
    std::ofstream side(dir / (seq.id + ".json"));
    side << sequence_sidecar(seq, part_names).dump(1) << '\n';
    if (!side) throw FormatError("cannot write sidecar for " + seq.id);
}

MotionSequence load_sequence(const std::filesystem::path& dir, const std::string& id) {
    std::ifstream bin(dir / (id + ".bin"), std::ios::binary);
    if (!bin) throw FormatError("cannot open " + (dir / (id + ".bin")).string());
    MotionSequence seq = read_sequence_binary(bin);
    std::ifstream side(dir / (id + ".json"));
    if (!side) throw FormatError("cannot open " + (dir / (id + ".json")).string());
    nlohmann::json j;
    try {
        side >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("sequence sidecar " + id + ": " + e.what());
    }
    apply_sidecar(seq, j);
    return seq;
}

namespace {

const std::vector<std::pair<const char*, std::vector<MotionSequence> Dataset::*>> kSplits{
    {"train", &Dataset::train}, {"test", &Dataset::test}, {"test_clean", &Dataset::test_clean}};

}  // namespace

void save_dataset(const std::filesystem::path& dir, const Dataset& data,
                  const std::vector<std::string>& part_names, const nlohmann::json& meta) {
    nlohmann::json manifest{{"format", "meshseq.dataset"}, {"version", 1}, {"meta", meta}};
    for (const auto& [name, member] : kSplits) {
        auto ids = nlohmann::json::array();
        for (const auto& seq : data.*member) {
            save_sequence(dir / name, seq, part_names);
            ids.push_back(seq.id);
        }
        manifest["splits"][name] = std::move(ids);
    }
    std::ofstream out(dir / "manifest.json");
    out << manifest.dump(2) << '\n';
    if (!out) throw FormatError("cannot write " + (dir / "manifest.json").string());
}

Dataset load_dataset(const std::filesystem::path& dir, nlohmann::json* meta) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw FormatError("cannot open " + (dir / "manifest.json").string());
    nlohmann::json manifest;
    try {
        in >> manifest;
        if (manifest.at("format") != "meshseq.dataset")
            throw FormatError("dataset manifest: unexpected format");
        Dataset data;
        for (const auto& [name, member] : kSplits) {
            if (!manifest.at("splits").contains(name)) continue;
            for (const auto& id : manifest["splits"][name])
                (data.*member).push_back(load_sequence(dir / name, id.get<std::string>()));
        }
        if (meta) *meta = manifest.value("meta", nlohmann::json::object());
        return data;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("dataset manifest: ") + e.what());
    }
}

}  // namespace meshseq
