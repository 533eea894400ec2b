#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "meshseq/body_graph.hpp"

namespace meshseq {

// Observation channels per vertex: x, y, z (mm) and the mask sentinel.
constexpr std::size_t kObsChannels = 4;

enum class CorruptionKind { Occlusion, Blur };
std::string to_string(CorruptionKind kind);
CorruptionKind corruption_kind_from_string(const std::string& name);

struct CorruptionEvent {
    std::size_t frame = 0;
    std::size_t part = 0;
    CorruptionKind kind = CorruptionKind::Occlusion;
    // Occlusion: fraction of the part's vertices masked (the first
    // round(severity * size) of its range). Blur: blend weight toward the
    // temporally filtered signal.
    double severity = 0.0;
    bool operator==(const CorruptionEvent&) const = default;
};

struct MotionSequence {
    std::string id;
    std::size_t frames = 0;
    std::size_t n_vertices = 0;
    std::size_t n_joints = 0;
    std::vector<double> gt_vertices;   // T x n x 3, mm
    std::vector<double> gt_joints;     // T x J x 3, mm
    std::vector<double> observations;  // T x n x 4
    std::vector<CorruptionEvent> corruption_log;
};

struct SynthConfig {
    std::size_t frames = 16;
    // Scales the per-joint angle ranges (radians at 1.0).
    double motion_scale = 1.0;
    // Max displacement of any joint between consecutive frames, mm.
    double velocity_cap_mm = 90.0;
    // Peak radial skinning bulge, mm.
    double skin_bulge_mm = 6.0;

    void validate() const;
};

enum class PartSelection { Uniform, Limbs, Fixed };
std::string to_string(PartSelection s);
PartSelection part_selection_from_string(const std::string& name);

struct CorruptionConfig {
    // Expected fraction of frames inside an occlusion event.
    double occlusion_prob = 0.0;
    PartSelection selection = PartSelection::Uniform;
    std::size_t fixed_part = 0;
    std::size_t min_span = 2, max_span = 6;
    double min_severity = 0.5, max_severity = 1.0;
    // Expected fraction of frames inside a blur event.
    double blur_prob = 0.0;
    std::size_t blur_width = 1;
    double min_blur = 0.5, max_blur = 1.0;

    void validate() const;
};

// Counter-based seed for item `index` of a stream rooted at `base`.
std::uint64_t split_seed(std::uint64_t base, std::uint64_t index);

// Articulated motion: per-joint Euler angles follow cubic Bezier curves
// (4 control points each), vertices ride their segment's joint frame plus a
// pose-dependent radial bulge. Observations are the clean encoding.
MotionSequence generate_sequence(const BodyGraph& graph, const SynthConfig& config,
                                 std::uint64_t seed);

// x, y, z copied from the ground truth, mask channel 0.
std::vector<double> clean_observations(const MotionSequence& seq);

// Rebuilds the observations from the clean encoding: blur events first
// (box filter of `blur_width` frames, replicate padding), then occlusion
// events (masked entries get xyz = 0 and sentinel = 1).
MotionSequence corrupt_sequence(const MotionSequence& seq, const BodyGraph& graph,
                                const CorruptionConfig& config, std::uint64_t seed);

// Normalized temporal box filter over a T x m signal.
std::vector<double> box_filter(const std::vector<double>& signal, std::size_t frames,
                               std::size_t width);

// Number of vertices an occlusion event masks in a part of `part_size`.
std::size_t occluded_count(const CorruptionEvent& event, std::size_t part_size);

// Pairs of skeleton joints joined by a bone (child, parent).
std::vector<std::pair<std::size_t, std::size_t>> bones(const Skeleton& skeleton);

struct DatasetSpec {
    std::size_t count = 0;
    std::uint64_t seed = 0;
    std::string prefix = "seq";
};

std::vector<MotionSequence> generate_dataset(const BodyGraph& graph, const SynthConfig& synth,
                                             const CorruptionConfig& corruption,
                                             const DatasetSpec& spec);

}  // namespace meshseq
