#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "consformer/config.hpp"
#include "consformer/dataset_io.hpp"
#include "consformer/errors.hpp"
#include "consformer/runner.hpp"

namespace {

namespace fs = std::filesystem;
using namespace cf;
using namespace cf::harness;

constexpr int kOk = 0;
constexpr int kValidation = 1;
constexpr int kIo = 2;

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c, bool out_required) {
  cmd->add_option("--config", c.config, "Flat JSON config file");
  auto* out = cmd->add_option("--out", c.out, "Output path");
  if (out_required) out->required();
  cmd->add_option("--seed", c.seed, "Overrides both the training and the data seed");
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? parse_config(nlohmann::json::object()) : load_config(c.config);
  if (c.seed) {
    cfg.train.seed = *c.seed;
    cfg.model.seed = *c.seed;
    cfg.synth.seed = *c.seed;
  }
  return cfg;
}

void print_report(const RunReport& r) {
  std::printf("arm=%s seed=%llu epochs=%zu best_epoch=%zu em=%.4f f1_token=%.4f boundary_f1=%.4f answer_acc=%.4f "
              "wall_s=%.1f\n",
              r.arm.c_str(), static_cast<unsigned long long>(r.seed), r.epochs, r.best_epoch, r.test.em,
              r.test.f1_token, r.test.boundary_f1, r.test.answer_acc, r.wall_s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Constituent-gated attention toolkit: data generation, training, evaluation and checks"};
  app.require_subcommand(1);

  Common gen_opts, train_opts, eval_opts, ablate_opts, grad_opts, self_opts;
  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset (JSON Lines)");
  add_common(gen, gen_opts, true);

  auto* train = app.add_subcommand("train", "Train one model and evaluate it on the test split");
  add_common(train, train_opts, true);
  bool resume = false;
  train->add_flag("--resume", resume, "Continue from the checkpoint in --out");

  auto* eval = app.add_subcommand("eval", "Evaluate a trained checkpoint");
  add_common(eval, eval_opts, true);
  std::string checkpoint_dir;
  eval->add_option("--checkpoint", checkpoint_dir, "Directory written by train")->required();

  auto* ablate = app.add_subcommand("ablate", "Train the A-only, C-only and A-and-C arms");
  add_common(ablate, ablate_opts, true);

  auto* grad = app.add_subcommand("gradcheck", "Compare backward gradients with finite differences");
  add_common(grad, grad_opts, false);
  std::string fault_name = "none";
  const std::map<std::string, Fault> faults = {
      {"none", Fault::kNone}, {"bilinear", Fault::kBilinearWeight}, {"layernorm", Fault::kLayerNormGain}};
  grad->add_option("--fault", fault_name, "Corrupt one backward rule")
      ->check(CLI::IsMember({"none", "bilinear", "layernorm"}));

  auto* self = app.add_subcommand("selftest", "Run quick internal consistency checks");
  add_common(self, self_opts, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kValidation;
  }

  try {
    if (*gen) {
      const RunConfig cfg = resolve(gen_opts);
      const synth::Dataset ds = synth::generate(cfg.synth);
      save_dataset(ds, gen_opts.out);
      std::printf("wrote %zu train and %zu test examples to %s\n", ds.train.size(), ds.test.size(),
                  gen_opts.out.c_str());
    } else if (*train) {
      const RunConfig cfg = resolve(train_opts);
      const synth::Dataset ds = obtain_dataset(cfg);
      TrainOptions options;
      options.resume = resume;
      options.on_epoch = [](const EpochRecord& e) {
        if (e.val_acc) {
          std::printf("epoch %zu loss=%.4f val_acc=%.4f\n", e.epoch, e.train_loss, *e.val_acc);
        } else {
          std::printf("epoch %zu loss=%.4f\n", e.epoch, e.train_loss);
        }
        std::fflush(stdout);
      };
      print_report(run_train(cfg, ds, train_opts.out, options));
    } else if (*eval) {
      const RunConfig cfg = resolve(eval_opts);
      const synth::Dataset ds = obtain_dataset(cfg);
      print_report(run_eval(cfg, ds, checkpoint_dir, eval_opts.out));
    } else if (*ablate) {
      const RunConfig cfg = resolve(ablate_opts);
      const synth::Dataset ds = obtain_dataset(cfg);
      const AblationResult result = run_ablate(cfg, ds, ablate_opts.out);
      for (const auto& r : result.reports) print_report(r);
      std::printf("\n%s", result.table.c_str());
    } else if (*grad) {
      const RunConfig cfg = resolve(grad_opts);
      const GradcheckReport report = run_gradcheck(cfg, faults.at(fault_name));
      for (const auto& g : report.groups) {
        std::printf("%-4s %-24s max_rel_error=%.3e max_abs_grad=%.3e\n", g.passed ? "PASS" : "FAIL", g.name.c_str(),
                    g.max_rel_error, g.max_abs_analytic);
      }
      if (!grad_opts.out.empty()) write_json(report.to_json(), grad_opts.out);
      return report.passed ? kOk : kValidation;
    } else if (*self) {
      const RunConfig cfg = resolve(self_opts);
      const auto checks = run_selftest(cfg);
      bool all = true;
      nlohmann::json out = nlohmann::json::array();
      for (const auto& c : checks) {
        std::printf("%s %s%s%s\n", c.passed ? "PASS" : "FAIL", c.name.c_str(), c.detail.empty() ? "" : ": ",
                    c.detail.c_str());
        all = all && c.passed;
        out.push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
      }
      if (!self_opts.out.empty()) write_json(out, self_opts.out);
      return all ? kOk : kValidation;
    }
  } catch (const IoError& e) {
    std::fprintf(stderr, "I/O error: %s\n", e.what());
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "I/O error: %s\n", e.what());
    return kIo;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kValidation;
  }
  return kOk;
}
