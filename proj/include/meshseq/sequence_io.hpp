#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "meshseq/synth.hpp"

namespace meshseq {

constexpr char kSequenceMagic[4] = {'M', 'S', 'Q', '1'};
constexpr std::uint32_t kSequenceVersion = 1;

// Binary container: magic, u32 version, u64 T, u64 n, u64 n_joints, then
// little-endian f64 gt_vertices (T n 3), gt_joints (T J 3), observations (T n 4).
void write_sequence_binary(std::ostream& out, const MotionSequence& seq);
MotionSequence read_sequence_binary(std::istream& in);

// Sidecar: id, frame count and the corruption log.
nlohmann::json sequence_sidecar(const MotionSequence& seq, const std::vector<std::string>& part_names);
void apply_sidecar(MotionSequence& seq, const nlohmann::json& sidecar);

// <dir>/<id>.bin and <dir>/<id>.json
void save_sequence(const std::filesystem::path& dir, const MotionSequence& seq,
                   const std::vector<std::string>& part_names);
MotionSequence load_sequence(const std::filesystem::path& dir, const std::string& id);

struct Dataset {
    std::vector<MotionSequence> train;
    std::vector<MotionSequence> test;
    std::vector<MotionSequence> test_clean;
};

// Writes train/, test/ and test_clean/ plus manifest.json (ids per split and
// the generating document `meta`).
void save_dataset(const std::filesystem::path& dir, const Dataset& data,
                  const std::vector<std::string>& part_names, const nlohmann::json& meta);
Dataset load_dataset(const std::filesystem::path& dir, nlohmann::json* meta = nullptr);

}  // namespace meshseq
