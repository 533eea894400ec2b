#pragma once

#include <iosfwd>
#include <memory>
#include <string>

#include "meshseq/config.hpp"
#include "meshseq/model.hpp"

namespace meshseq {

constexpr char kCheckpointMagic[8] = {'M', 'S', 'Q', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kCheckpointVersion = 1;

// magic, u32 version, u64 config length, config JSON text, u64 tensor count,
// then per tensor: u32 name length, name, u32 rank, u64 dims, f64 values.
void write_checkpoint(std::ostream& out, const ExperimentConfig& config, const Model& model);

struct LoadedModel {
    ExperimentConfig config;
    std::unique_ptr<Model> model;
};

// Rebuilds the model from the stored config and copies every tensor in,
// checking names and shapes.
LoadedModel read_checkpoint(std::istream& in);

void save_checkpoint(const std::string& path, const ExperimentConfig& config, const Model& model);
LoadedModel load_checkpoint(const std::string& path);

}  // namespace meshseq
