#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "altermoma/dataset.hpp"
#include "altermoma/model.hpp"

namespace altermoma {

// Constructed-redundancy fixture: a small fusion model in which one camera
// channel is an exact copy of a lidar channel (both extract the same shared
// latent coordinate) while the fusion head reads only the lidar copy. Targets
// are the clean planted map's own outputs, so the planted weights are the
// optimum and every saliency signal is attributable to the construction.
struct PlantedOptions {
  std::size_t n_train = 1024;
  std::size_t n_val = 256;
  std::size_t d_lidar = 6;
  std::size_t d_camera = 8;
  // Added to every backbone pre-activation. Keeps most relu units live while
  // bounding the mean offset that masking a branch removes from the head.
  double shift = 0.5;
  // Stddev of the noise added to the fusion partition after target
  // generation; backbones stay exactly planted so the duplicate stays exact.
  double perturb_scale = 0.05;

  void validate() const;
};

struct PlantedScenario {
  FusionModel model;
  MultiModalDataset data;
  // Camera channels whose signal also exists on the lidar side.
  std::vector<std::string> duplicate_channels;
  // Camera channels carrying signal no other branch has.
  std::vector<std::string> camera_only_channels;
};

PlantedScenario make_planted_scenario(std::uint64_t seed, const PlantedOptions& opt = {});

// The architecture the scenario builds, for loading its checkpoints back.
ArchConfig planted_arch(std::uint64_t seed, const PlantedOptions& opt);

}  // namespace altermoma
