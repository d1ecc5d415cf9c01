#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "consformer/synth.hpp"

namespace cf::harness {

// JSON Lines: a header record (synthetic config and lexicon) followed by one
// record per example, train split first. Writing what was read reproduces the
// file byte for byte.
void write_dataset(std::ostream& out, const synth::Dataset& ds);
synth::Dataset read_dataset(std::istream& in);
void save_dataset(const synth::Dataset& ds, const std::filesystem::path& path);
synth::Dataset load_dataset(const std::filesystem::path& path);

struct PredictionRecord {
  std::string id;
  std::string predicted;
  std::vector<std::string> golds;  // first entry is the primary gold
};

void write_predictions(std::ostream& out, const std::vector<PredictionRecord>& records);
std::vector<PredictionRecord> read_predictions(std::istream& in);
void save_predictions(const std::vector<PredictionRecord>& records, const std::filesystem::path& path);
std::vector<PredictionRecord> load_predictions(const std::filesystem::path& path);

}  // namespace cf::harness
