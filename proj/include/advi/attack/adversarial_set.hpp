#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "advi/attack/attack.hpp"

namespace advi::attack {

struct AdversarialRecord {
  synthdata::Split split = synthdata::Split::Validation;
  ClassId label = 0;          // original class y
  std::size_t sample_id = 0;
  std::size_t source_index = 0;  // position in the split
  core::Tensor image;         // x*, (3, S, S)
  ClassId target = 0;         // y*
  AttackKind kind = AttackKind::Ensemble;
  std::size_t iterations = 0;
  double distance = 0.0;
  std::vector<double> target_probs;
  bool success = false;
  std::string error;  // non-empty when the attack on this record failed
};

struct AdversarialSet {
  AttackConfig config;
  std::size_t n_targets = 3;
  std::size_t per_class = 0;  // validation images used per class (0 = all)
  std::vector<std::string> models;  // "arch:checkpoint-hash" or arch names
  std::string dataset_hash;
  std::vector<AdversarialRecord> records;

  std::size_t successes() const;
  // Indices of records whose attack succeeded, ascending. The analyses use
  // only these; a failed record is still an image of class y.
  std::vector<std::size_t> successful_indices() const;
  std::size_t failures() const;  // records whose attack raised an error
  double success_rate() const;
  // Mean Euclidean perturbation over records without errors.
  double mean_distance() const;
};

// For every selected validation image, one ensemble attack per least-likely
// target. Attack errors are recorded per record and the sweep continues.
AdversarialSet build_adversarial_set(const synthdata::Dataset& ds, std::span<zoo::Model> models,
                                     std::size_t n_targets, const AttackConfig& cfg,
                                     std::size_t per_class = 0, std::size_t workers = 1);

// Manifest JSON (config, stats, per-record index) plus a little-endian float64
// payload of the adversarial images in record order (extension .bin).
void save_adversarial_set(const AdversarialSet& set, const std::filesystem::path& manifest);
AdversarialSet load_adversarial_set(const std::filesystem::path& manifest);

// The validation image each record was derived from.
const synthdata::LabeledImage& source_of(const synthdata::Dataset& ds,
                                         const AdversarialRecord& r);

}  // namespace advi::attack
