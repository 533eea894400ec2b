#include "meshseq/synth.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include <Eigen/Geometry>

namespace meshseq {

std::string to_string(CorruptionKind kind) {
    return kind == CorruptionKind::Occlusion ? "occlusion" : "blur";
}

CorruptionKind corruption_kind_from_string(const std::string& name) {
    if (name == "occlusion") return CorruptionKind::Occlusion;
    if (name == "blur") return CorruptionKind::Blur;
    throw FormatError("unknown corruption kind '" + name + "'");
}

std::string to_string(PartSelection s) {
    switch (s) {
        case PartSelection::Uniform: return "uniform";
        case PartSelection::Limbs: return "limbs";
        case PartSelection::Fixed: return "fixed";
    }
    return "?";
}

PartSelection part_selection_from_string(const std::string& name) {
    if (name == "uniform") return PartSelection::Uniform;
    if (name == "limbs") return PartSelection::Limbs;
    if (name == "fixed") return PartSelection::Fixed;
    throw ConfigError("unknown part selection '" + name + "'");
}

void SynthConfig::validate() const {
    if (frames < 2) throw ConfigError("synth: frames must be at least 2");
    if (!(motion_scale >= 0.0) || !std::isfinite(motion_scale))
        throw ConfigError("synth: motion_scale must be finite and nonnegative");
    if (!(velocity_cap_mm > 0.0)) throw ConfigError("synth: velocity_cap_mm must be positive");
    if (!(skin_bulge_mm >= 0.0)) throw ConfigError("synth: skin_bulge_mm must be nonnegative");
}

void CorruptionConfig::validate() const {
    auto prob = [](double p, const char* what) {
        if (!(p >= 0.0 && p <= 1.0))
            throw ConfigError(std::string("corruption: ") + what + " must lie in [0, 1]");
    };
    prob(occlusion_prob, "occlusion_prob");
    prob(blur_prob, "blur_prob");
    prob(min_severity, "min_severity");
    prob(max_severity, "max_severity");
    prob(min_blur, "min_blur");
    prob(max_blur, "max_blur");
    if (min_severity > max_severity || min_blur > max_blur)
        throw ConfigError("corruption: severity range is inverted");
    if (min_span < 1 || min_span > max_span) throw ConfigError("corruption: invalid span range");
    if (blur_width < 1 || blur_width % 2 == 0)
        throw ConfigError("corruption: blur_width must be odd and at least 1");
}

std::uint64_t split_seed(std::uint64_t base, std::uint64_t index) {
    std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::vector<std::pair<std::size_t, std::size_t>> bones(const Skeleton& skeleton) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t j = 0; j < skeleton.size(); ++j)
        if (skeleton.parent[j] >= 0) out.emplace_back(j, static_cast<std::size_t>(skeleton.parent[j]));
    return out;
}

namespace {

using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;

// Angle range (radians) about x, y, z for each joint.
Vec3 joint_range(const std::string& name) {
    static const std::map<std::string, Vec3> table{
        {"pelvis", {0.15, 0.5, 0.1}},  {"spine", {0.3, 0.3, 0.2}},    {"neck", {0.3, 0.4, 0.2}},
        {"l_shoulder", {0.8, 0.5, 0.8}}, {"r_shoulder", {0.8, 0.5, 0.8}},
        {"l_elbow", {1.0, 0.3, 0.3}},  {"r_elbow", {1.0, 0.3, 0.3}},
        {"l_wrist", {0.4, 0.4, 0.4}},  {"r_wrist", {0.4, 0.4, 0.4}},
        {"l_hip", {0.8, 0.3, 0.4}},    {"r_hip", {0.8, 0.3, 0.4}},
        {"l_knee", {1.0, 0.1, 0.1}},   {"r_knee", {1.0, 0.1, 0.1}},
        {"l_ankle", {0.3, 0.2, 0.2}},  {"r_ankle", {0.3, 0.2, 0.2}},
    };
    auto it = table.find(name);
    return it == table.end() ? Vec3::Zero() : it->second;
}

double bezier(const std::array<double, 4>& c, double s) {
    const double u = 1.0 - s;
    return u * u * u * c[0] + 3.0 * u * u * s * c[1] + 3.0 * u * s * s * c[2] + s * s * s * c[3];
}

Mat3 euler(const Vec3& a) {
    return (Eigen::AngleAxisd(a.z(), Vec3::UnitZ()) * Eigen::AngleAxisd(a.y(), Vec3::UnitY()) *
            Eigen::AngleAxisd(a.x(), Vec3::UnitX()))
        .toRotationMatrix();
}

struct Pose {
    std::vector<Mat3> world;  // per joint
    std::vector<Vec3> position;
    std::vector<double> bend;  // rotation angle of each joint's local rotation
};

Pose forward_kinematics(const Skeleton& sk, const std::vector<Vec3>& angles) {
    Pose p;
    const std::size_t J = sk.size();
    p.world.resize(J);
    p.position.resize(J);
    p.bend.resize(J);
    for (std::size_t j = 0; j < J; ++j) {
        const Mat3 local = euler(angles[j]);
        p.bend[j] = Eigen::AngleAxisd(local).angle();
        const Vec3 rest(sk.rest[j][0], sk.rest[j][1], sk.rest[j][2]);
        if (sk.parent[j] < 0) {
            p.world[j] = local;
            p.position[j] = rest;
            continue;
        }
        const auto q = static_cast<std::size_t>(sk.parent[j]);
        const Vec3 prest(sk.rest[q][0], sk.rest[q][1], sk.rest[q][2]);
        p.world[j] = p.world[q] * local;
        p.position[j] = p.position[q] + p.world[q] * (rest - prest);
    }
    return p;
}

}  // namespace

MotionSequence generate_sequence(const BodyGraph& graph, const SynthConfig& config,
                                 std::uint64_t seed) {
    config.validate();
    const Skeleton& sk = graph.skeleton;
    const std::size_t J = sk.size(), T = config.frames, n = graph.n_vertices();
    for (std::size_t j = 0; j < J; ++j)
        if (sk.parent[j] >= static_cast<int>(j))
            throw ConfigError("synth: skeleton joints must follow their parents");

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::vector<std::array<std::array<double, 4>, 3>> control(J);
    for (auto& joint : control)
        for (auto& axis : joint)
            for (double& c : axis) c = unit(rng);

    auto angles_at = [&](std::size_t f, double amplitude) {
        const double s = static_cast<double>(f) / static_cast<double>(T - 1);
        std::vector<Vec3> a(J);
        for (std::size_t j = 0; j < J; ++j) {
            const Vec3 range = joint_range(sk.names[j]) * amplitude;
            for (int k = 0; k < 3; ++k) a[j][k] = range[k] * bezier(control[j][static_cast<std::size_t>(k)], s);
        }
        return a;
    };

    // Shrink the motion until no joint moves faster than the cap.
    double amplitude = config.motion_scale;
    std::vector<Pose> poses(T);
    for (int attempt = 0;; ++attempt) {
        double worst = 0.0;
        for (std::size_t f = 0; f < T; ++f) {
            poses[f] = forward_kinematics(sk, angles_at(f, amplitude));
            if (f > 0)
                for (std::size_t j = 0; j < J; ++j)
                    worst = std::max(worst, (poses[f].position[j] - poses[f - 1].position[j]).norm());
        }
        if (worst <= config.velocity_cap_mm) break;
        if (attempt >= 60) throw NumericError("synth: could not satisfy the velocity cap");
        amplitude *= 0.8;
    }

    MotionSequence seq;
    seq.frames = T;
    seq.n_vertices = n;
    seq.n_joints = J;
    seq.gt_vertices.resize(T * n * 3);
    seq.gt_joints.resize(T * J * 3);
    auto rest = graph.rest_positions.data();
    for (std::size_t f = 0; f < T; ++f) {
        const Pose& p = poses[f];
        for (std::size_t j = 0; j < J; ++j)
            for (int c = 0; c < 3; ++c) seq.gt_joints[(f * J + j) * 3 + static_cast<std::size_t>(c)] = p.position[j][c];
        for (std::size_t v = 0; v < n; ++v) {
            const std::size_t a = graph.vertex_joint[v];
            const Vec3 ra(sk.rest[a][0], sk.rest[a][1], sk.rest[a][2]);
            const Vec3 rv(rest[v * 3], rest[v * 3 + 1], rest[v * 3 + 2]);
            const Vec3 offset = rv - ra;
            const double len = offset.norm();
            const Vec3 radial = len > 0.0 ? Vec3(offset / len) : Vec3::Zero();
            const double bulge = config.skin_bulge_mm * (1.0 - std::cos(p.bend[a]));
            const Vec3 pos = p.position[a] + p.world[a] * (offset + bulge * radial);
            for (int c = 0; c < 3; ++c) seq.gt_vertices[(f * n + v) * 3 + static_cast<std::size_t>(c)] = pos[c];
        }
    }
    seq.observations = clean_observations(seq);
    return seq;
}

std::vector<double> clean_observations(const MotionSequence& seq) {
    const std::size_t rows = seq.frames * seq.n_vertices;
    std::vector<double> obs(rows * kObsChannels, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < 3; ++c) obs[r * kObsChannels + c] = seq.gt_vertices[r * 3 + c];
    return obs;
}

std::vector<double> box_filter(const std::vector<double>& signal, std::size_t frames,
                               std::size_t width) {
    if (frames == 0 || signal.size() % frames != 0)
        throw ShapeError("box_filter: signal size not a multiple of the frame count");
    if (width < 1 || width % 2 == 0) throw ConfigError("box_filter: width must be odd and >= 1");
    if (width > 1 && width >= frames)
        throw ConfigError("box_filter: width " + std::to_string(width) + " must be below " +
                          std::to_string(frames) + " frames");
    const std::size_t m = signal.size() / frames;
    const auto half = static_cast<long>(width / 2);
    const auto last = static_cast<long>(frames) - 1;
    std::vector<double> out(signal.size(), 0.0);
    for (long f = 0; f <= last; ++f)
        for (long d = -half; d <= half; ++d) {
            const auto src = static_cast<std::size_t>(std::clamp(f + d, 0L, last));
            for (std::size_t i = 0; i < m; ++i)
                out[static_cast<std::size_t>(f) * m + i] += signal[src * m + i];
        }
    for (double& v : out) v /= static_cast<double>(width);
    return out;
}

std::size_t occluded_count(const CorruptionEvent& event, std::size_t part_size) {
    const auto k = static_cast<std::size_t>(std::lround(event.severity * static_cast<double>(part_size)));
    return std::clamp<std::size_t>(k, 1, part_size);
}

namespace {

struct Span {
    std::size_t begin, end;  // [begin, end)
    std::size_t part;
    double severity;
};

std::vector<Span> sample_spans(std::size_t frames, double coverage, const CorruptionConfig& cfg,
                               const std::vector<std::size_t>& candidates, double sev_lo,
                               double sev_hi, std::mt19937_64& rng) {
    std::vector<Span> spans;
    if (coverage <= 0.0 || candidates.empty()) return spans;
    const double mean_len = 0.5 * static_cast<double>(cfg.min_span + cfg.max_span);
    const double q = coverage / (mean_len * (1.0 - coverage) + coverage);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> len(cfg.min_span, cfg.max_span);
    std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
    std::size_t f = 0;
    while (f < frames) {
        if (u(rng) < q) {
            const std::size_t L = len(rng);
            const std::size_t part = candidates[pick(rng)];
            const double sev = sev_lo + (sev_hi - sev_lo) * u(rng);
            spans.push_back({f, std::min(frames, f + L), part, sev});
            f += L;
        } else {
            ++f;
        }
    }
    return spans;
}

std::vector<std::size_t> candidate_parts(const BodyGraph& graph, const CorruptionConfig& cfg) {
    std::vector<std::size_t> out;
    switch (cfg.selection) {
        case PartSelection::Uniform:
            for (std::size_t p = 0; p < graph.n_parts(); ++p) out.push_back(p);
            break;
        case PartSelection::Limbs:
            for (std::size_t p = 0; p < graph.n_parts(); ++p)
                if (graph.part_names[p] != "head" && graph.part_names[p] != "torso") out.push_back(p);
            break;
        case PartSelection::Fixed:
            if (cfg.fixed_part >= graph.n_parts())
                throw ConfigError("corruption: fixed_part " + std::to_string(cfg.fixed_part) +
                                  " out of range");
            out.push_back(cfg.fixed_part);
            break;
    }
    return out;
}

}  // namespace

MotionSequence corrupt_sequence(const MotionSequence& seq, const BodyGraph& graph,
                                const CorruptionConfig& config, std::uint64_t seed) {
    config.validate();
    const std::size_t T = seq.frames, n = seq.n_vertices;
    if (n != graph.n_vertices())
        throw ShapeError("corrupt_sequence: sequence has " + std::to_string(n) +
                         " vertices, graph " + std::to_string(graph.n_vertices()));
    if (config.blur_width > 1 && config.blur_width >= T)
        throw ConfigError("corrupt_sequence: blur width " + std::to_string(config.blur_width) +
                          " must be below " + std::to_string(T) + " frames");
    MotionSequence out = seq;
    out.observations = clean_observations(seq);
    out.corruption_log.clear();
    const auto candidates = candidate_parts(graph, config);
    std::mt19937_64 blur_rng(split_seed(seed, 0)), occ_rng(split_seed(seed, 1));

    if (config.blur_width > 1 && config.blur_prob > 0.0) {
        const auto blurred = box_filter(out.observations, T, config.blur_width);
        for (const Span& s : sample_spans(T, config.blur_prob, config, candidates, config.min_blur,
                                          config.max_blur, blur_rng)) {
            const auto [lo, hi] = graph.part_range(graph.fine, s.part);
            for (std::size_t f = s.begin; f < s.end; ++f) {
                out.corruption_log.push_back({f, s.part, CorruptionKind::Blur, s.severity});
                for (std::size_t v = lo; v < hi; ++v)
                    for (std::size_t c = 0; c < 3; ++c) {
                        const std::size_t i = (f * n + v) * kObsChannels + c;
                        out.observations[i] = (1.0 - s.severity) * out.observations[i] + s.severity * blurred[i];
                    }
            }
        }
    }
    for (const Span& s : sample_spans(T, config.occlusion_prob, config, candidates,
                                      config.min_severity, config.max_severity, occ_rng)) {
        const auto [lo, hi] = graph.part_range(graph.fine, s.part);
        CorruptionEvent e{0, s.part, CorruptionKind::Occlusion, s.severity};
        const std::size_t k = occluded_count(e, hi - lo);
        e.severity = static_cast<double>(k) / static_cast<double>(hi - lo);
        for (std::size_t f = s.begin; f < s.end; ++f) {
            e.frame = f;
            out.corruption_log.push_back(e);
            for (std::size_t v = lo; v < lo + k; ++v) {
                double* o = &out.observations[(f * n + v) * kObsChannels];
                o[0] = o[1] = o[2] = 0.0;
                o[3] = 1.0;
            }
        }
    }
    std::stable_sort(out.corruption_log.begin(), out.corruption_log.end(),
                     [](const CorruptionEvent& a, const CorruptionEvent& b) { return a.frame < b.frame; });
    return out;
}

std::vector<MotionSequence> generate_dataset(const BodyGraph& graph, const SynthConfig& synth,
                                             const CorruptionConfig& corruption,
                                             const DatasetSpec& spec) {
    std::vector<MotionSequence> out;
    out.reserve(spec.count);
    for (std::size_t i = 0; i < spec.count; ++i) {
        const std::uint64_t s = split_seed(spec.seed, i);
        MotionSequence seq = corrupt_sequence(generate_sequence(graph, synth, s), graph, corruption,
                                              split_seed(s, 1));
        std::string num = std::to_string(i);
        seq.id = spec.prefix + "_" + std::string(num.size() < 4 ? 4 - num.size() : 0, '0') + num;
        out.push_back(std::move(seq));
    }
    return out;
}

}  // namespace meshseq
