#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "consformer/config.hpp"
#include "consformer/dataset_io.hpp"
#include "consformer/gradcheck.hpp"
#include "consformer/model.hpp"
#include "consformer/synth.hpp"
#include "json.hpp"

namespace cf::harness {

struct EvalMetrics {
  double em = 0.0;
  double f1_token = 0.0;
  double boundary_f1 = 0.0;
  double answer_acc = 0.0;
  std::size_t n = 0;
};

struct EvalResult {
  EvalMetrics metrics;
  std::vector<PredictionRecord> predictions;
};

// Link probabilities above this count as "same word".
inline constexpr double kBoundaryThreshold = 0.5;

EvalResult evaluate(const model::Model& model, std::span<const model::Example> examples, const synth::Lexicon& lexicon);

// Halts after more than `patience` consecutive evaluations without a strict
// improvement of the monitored metric.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}
  // Returns true when `metric` is a new best.
  bool observe(double metric);
  bool should_stop() const { return bad_ > patience_; }
  std::optional<double> best() const { return best_; }
  std::size_t bad_evaluations() const { return bad_; }
  void restore(std::optional<double> best, std::size_t bad) {
    best_ = best;
    bad_ = bad;
  }

 private:
  std::size_t patience_;
  std::optional<double> best_;
  std::size_t bad_ = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double first_step_loss = 0.0;
  std::optional<double> val_acc;
};

struct RunReport {
  std::string arm;
  std::uint64_t seed = 0;
  nlohmann::json config;
  std::string config_hash;
  std::vector<EpochRecord> history;
  std::size_t epochs = 0;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
  double wall_s = 0.0;
  EvalMetrics test;

  nlohmann::json to_json() const;
};

// Fills the dataset-dependent model fields (table size, answer count, d_fr, seed).
model::ModelConfig model_config_for(const RunConfig& cfg, const synth::Dataset& ds);
// Loads cfg.dataset when set, otherwise generates from the synthetic keys.
synth::Dataset obtain_dataset(const RunConfig& cfg);

struct TrainOptions {
  bool resume = false;
  std::function<void(const EpochRecord&)> on_epoch;
};

// Files written to `out`: checkpoint.vcfk (latest parameters), optimizer.vcfk,
// best.vcfk, checkpoint.json (sidecar), report.json, predictions.jsonl.
RunReport run_train(const RunConfig& cfg, const synth::Dataset& ds, const std::filesystem::path& out,
                    const TrainOptions& options = {});

// Evaluates best.vcfk from `checkpoint_dir` on the test split. Throws
// ValidationError when the sidecar's model config does not match `cfg`.
RunReport run_eval(const RunConfig& cfg, const synth::Dataset& ds, const std::filesystem::path& checkpoint_dir,
                   const std::filesystem::path& out);

struct AblationArm {
  std::string name;
  bool use_a;
  bool use_c;
};
const std::vector<AblationArm>& ablation_arms();

struct AblationResult {
  std::vector<RunReport> reports;  // in ablation_arms() order
  std::string table;               // markdown
};

AblationResult run_ablate(const RunConfig& cfg, const synth::Dataset& ds, const std::filesystem::path& out);

struct GradcheckReport {
  std::vector<GroupCheck> groups;  // model parameters, then the long-span group
  bool passed = false;
  nlohmann::json to_json() const;
};

GradcheckReport run_gradcheck(const RunConfig& cfg, Fault fault = Fault::kNone);

struct SelftestCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};
std::vector<SelftestCheck> run_selftest(const RunConfig& cfg);

void write_json(const nlohmann::json& j, const std::filesystem::path& path);
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace cf::harness
