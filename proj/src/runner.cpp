#include "consformer/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "consformer/attention.hpp"
#include "consformer/checkpoint.hpp"
#include "consformer/constituent.hpp"
#include "consformer/errors.hpp"
#include "consformer/metrics.hpp"

namespace cf::harness {
namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

constexpr const char* kLatest = "checkpoint.vcfk";
constexpr const char* kOptimizer = "optimizer.vcfk";
constexpr const char* kBest = "best.vcfk";
constexpr const char* kSidecar = "checkpoint.json";
constexpr const char* kReport = "report.json";
constexpr const char* kPredictions = "predictions.jsonl";

std::mt19937_64 epoch_rng(std::uint64_t seed, std::uint64_t epoch, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

std::string dataset_fingerprint(const synth::Dataset& ds) {
  std::ostringstream s;
  s << synth_to_json(ds.config).dump() << '|' << ds.train.size() << '|' << ds.test.size();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s.str()) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

json history_json(const std::vector<EpochRecord>& history) {
  json out = json::array();
  for (const auto& e : history) {
    json j{{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"first_step_loss", e.first_step_loss}};
    j["val_acc"] = e.val_acc ? json(*e.val_acc) : json(nullptr);
    out.push_back(std::move(j));
  }
  return out;
}

std::vector<EpochRecord> history_from(const json& j) {
  std::vector<EpochRecord> out;
  for (const auto& e : j) {
    EpochRecord r;
    r.epoch = e.at("epoch").get<std::size_t>();
    r.train_loss = e.at("train_loss").get<double>();
    r.first_step_loss = e.at("first_step_loss").get<double>();
    if (!e.at("val_acc").is_null()) r.val_acc = e.at("val_acc").get<double>();
    out.push_back(r);
  }
  return out;
}

double accuracy(const model::Model& m, std::span<const model::Example> examples) {
  std::size_t correct = 0;
  for (const auto& ex : examples) correct += model::predict(m, ex).answer == ex.gold_answer;
  return static_cast<double>(correct) / static_cast<double>(examples.size());
}

void check_compatible(const json& sidecar, const model::ModelConfig& mc, const synth::Dataset& ds) {
  const std::string want = config_hash(mc);
  const std::string have = sidecar.at("config_hash").get<std::string>();
  if (have != want) {
    throw ValidationError("incompatible checkpoint: config hash " + have + " does not match " + want);
  }
  const std::string fp = dataset_fingerprint(ds);
  if (sidecar.at("dataset").get<std::string>() != fp) {
    throw ValidationError("checkpoint was trained on a different dataset");
  }
}

bool bit_identical(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(), a.data().size() * sizeof(double)) == 0;
}

}  // namespace

EvalResult evaluate(const model::Model& model, std::span<const model::Example> examples,
                    const synth::Lexicon& lexicon) {
  if (examples.empty()) throw ValidationError("evaluate: no examples");
  EvalResult result;
  metrics::BoundaryCounts counts;
  std::vector<metrics::AnswerPair> pairs;
  std::size_t correct = 0;
  for (const auto& ex : examples) {
    const model::Prediction p = model::predict(model, ex);
    PredictionRecord rec{ex.id, lexicon.word_text(p.answer), {lexicon.word_text(ex.gold_answer)}};
    pairs.push_back(metrics::AnswerPair::from_strings(rec.predicted, rec.golds.front()));
    result.predictions.push_back(std::move(rec));
    correct += p.answer == ex.gold_answer;
    std::vector<std::uint8_t> linked(p.link_prob.size());
    for (std::size_t k = 0; k < linked.size(); ++k) linked[k] = p.link_prob[k] > kBoundaryThreshold;
    counts.add(linked, ex.gold_boundaries);
  }
  const metrics::CorpusScores scores = metrics::corpus_scores(pairs);
  result.metrics.em = scores.em;
  result.metrics.f1_token = scores.f1;
  result.metrics.boundary_f1 = counts.f1();
  result.metrics.answer_acc = static_cast<double>(correct) / static_cast<double>(examples.size());
  result.metrics.n = examples.size();
  return result;
}

bool EarlyStopping::observe(double metric) {
  if (!best_ || metric > *best_) {
    best_ = metric;
    bad_ = 0;
    return true;
  }
  ++bad_;
  return false;
}

json RunReport::to_json() const {
  json j;
  j["arm"] = arm;
  j["seed"] = seed;
  j["config"] = config;
  j["config_hash"] = config_hash;
  j["history"] = history_json(history);
  j["epochs"] = epochs;
  j["best_epoch"] = best_epoch;
  j["stopped_early"] = stopped_early;
  j["wall_s"] = wall_s;
  j["em"] = test.em;
  j["f1_token"] = test.f1_token;
  j["boundary_f1"] = test.boundary_f1;
  j["answer_acc"] = test.answer_acc;
  j["n_test"] = test.n;
  return j;
}

model::ModelConfig model_config_for(const RunConfig& cfg, const synth::Dataset& ds) {
  model::ModelConfig mc = cfg.model;
  mc.vocab_size = ds.lexicon.table_size();
  mc.n_answers = ds.lexicon.words.size();
  mc.d_fr = ds.config.d_fr;
  mc.seed = cfg.train.seed;
  return mc;
}

synth::Dataset obtain_dataset(const RunConfig& cfg) {
  if (!cfg.dataset.empty()) return load_dataset(cfg.dataset);
  return synth::generate(cfg.synth);
}

void write_json(const json& j, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

RunReport run_train(const RunConfig& cfg, const synth::Dataset& ds, const fs::path& out,
                    const TrainOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  const TrainConfig& tc = cfg.train;
  const model::ModelConfig mc = model_config_for(cfg, ds);
  if (ds.train.empty() || ds.test.empty()) throw ValidationError("train: dataset needs train and test examples");

  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());

  std::size_t n_val = static_cast<std::size_t>(std::llround(tc.val_fraction * static_cast<double>(ds.train.size())));
  if (tc.val_fraction > 0.0) n_val = std::max<std::size_t>(n_val, 1);
  if (n_val >= ds.train.size()) throw ValidationError("train: validation split leaves no training examples");
  const std::size_t n_fit = ds.train.size() - n_val;
  const std::span<const model::Example> fit(ds.train.data(), n_fit);
  const std::span<const model::Example> val(ds.train.data() + n_fit, n_val);

  model::Model model(mc);
  Adam adam({tc.lr, tc.beta1, tc.beta2, tc.adam_eps});
  EarlyStopping stopper(tc.patience);
  RunReport report;
  report.arm = cfg.arm;
  report.seed = tc.seed;
  report.config = to_json(cfg);
  report.config_hash = config_hash(mc);
  std::size_t best_epoch = 0;

  const fs::path sidecar_path = out / kSidecar;
  if (options.resume && fs::exists(sidecar_path)) {
    const json sidecar = read_json(sidecar_path);
    check_compatible(sidecar, mc, ds);
    assign_parameters(model.params(), load_checkpoint(out / kLatest));
    adam.load_state(load_checkpoint(out / kOptimizer), model.params());
    report.history = history_from(sidecar.at("history"));
    const json& es = sidecar.at("early_stopping");
    stopper.restore(es.at("best").is_null() ? std::nullopt : std::optional<double>(es.at("best").get<double>()),
                    es.at("bad").get<std::size_t>());
    best_epoch = sidecar.at("best_epoch").get<std::size_t>();
  }

  std::vector<const model::Example*> order(n_fit);
  while (report.history.size() < tc.max_epochs && !stopper.should_stop()) {
    const std::size_t epoch = report.history.size() + 1;
    for (std::size_t i = 0; i < n_fit; ++i) order[i] = &fit[i];
    std::mt19937_64 shuffle_rng = epoch_rng(tc.seed, epoch, 0);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    std::mt19937_64 dropout_rng = epoch_rng(tc.seed, epoch, 1);

    EpochRecord rec;
    rec.epoch = epoch;
    double weighted = 0.0;
    for (std::size_t b = 0; b < n_fit; b += tc.batch_size) {
      const std::size_t e = std::min(n_fit, b + tc.batch_size);
      const std::span<const model::Example* const> batch(order.data() + b, e - b);
      const double loss = model::train_step(model, adam, batch, tc.lambda, mc.dropout > 0.0 ? &dropout_rng : nullptr);
      if (b == 0) rec.first_step_loss = loss;
      weighted += loss * static_cast<double>(e - b);
    }
    rec.train_loss = weighted / static_cast<double>(n_fit);

    bool improved = true;
    if (!val.empty()) {
      rec.val_acc = accuracy(model, val);
      improved = stopper.observe(*rec.val_acc);
    }
    if (improved) {
      best_epoch = epoch;
      save_checkpoint(model.params(), out / kBest);
    }
    report.history.push_back(rec);

    save_checkpoint(model.params(), out / kLatest);
    save_checkpoint(adam.state(), out / kOptimizer);
    json sidecar;
    sidecar["model"] = model_to_json(mc);
    sidecar["config_hash"] = report.config_hash;
    sidecar["run_config"] = report.config;
    sidecar["dataset"] = dataset_fingerprint(ds);
    sidecar["history"] = history_json(report.history);
    sidecar["best_epoch"] = best_epoch;
    sidecar["early_stopping"] = {{"best", stopper.best() ? json(*stopper.best()) : json(nullptr)},
                                 {"bad", stopper.bad_evaluations()},
                                 {"patience", tc.patience}};
    write_json(sidecar, sidecar_path);
    if (options.on_epoch) options.on_epoch(rec);
  }

  if (best_epoch > 0) assign_parameters(model.params(), load_checkpoint(out / kBest));
  const EvalResult eval = evaluate(model, ds.test, ds.lexicon);
  save_predictions(eval.predictions, out / kPredictions);

  report.epochs = report.history.size();
  report.best_epoch = best_epoch;
  report.stopped_early = stopper.should_stop();
  report.test = eval.metrics;
  report.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_json(report.to_json(), out / kReport);
  return report;
}

RunReport run_eval(const RunConfig& cfg, const synth::Dataset& ds, const fs::path& checkpoint_dir,
                   const fs::path& out) {
  const auto start = std::chrono::steady_clock::now();
  const model::ModelConfig mc = model_config_for(cfg, ds);
  const json sidecar = read_json(checkpoint_dir / kSidecar);
  check_compatible(sidecar, mc, ds);

  model::Model model(mc);
  const fs::path best = checkpoint_dir / kBest;
  assign_parameters(model.params(), load_checkpoint(fs::exists(best) ? best : checkpoint_dir / kLatest));

  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());
  const EvalResult eval = evaluate(model, ds.test, ds.lexicon);
  save_predictions(eval.predictions, out / kPredictions);

  RunReport report;
  report.arm = cfg.arm;
  report.seed = cfg.train.seed;
  report.config = to_json(cfg);
  report.config_hash = config_hash(mc);
  report.history = history_from(sidecar.at("history"));
  report.epochs = report.history.size();
  report.best_epoch = sidecar.at("best_epoch").get<std::size_t>();
  report.test = eval.metrics;
  report.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_json(report.to_json(), out / kReport);
  return report;
}

const std::vector<AblationArm>& ablation_arms() {
  static const std::vector<AblationArm> arms = {
      {"A_only", true, false},
      {"C_only", false, true},
      {"A_and_C", true, true},
  };
  return arms;
}

AblationResult run_ablate(const RunConfig& cfg, const synth::Dataset& ds, const fs::path& out) {
  AblationResult result;
  for (const auto& arm : ablation_arms()) {
    RunConfig arm_cfg = cfg;
    arm_cfg.arm = arm.name;
    arm_cfg.model.use_a = arm.use_a;
    arm_cfg.model.use_c = arm.use_c;
    result.reports.push_back(run_train(arm_cfg, ds, out / arm.name));
  }

  std::ostringstream table;
  table << "| Arm | A | C | EM | F1-token | Answer acc | Boundary F1 | Epochs |\n";
  table << "|---|---|---|---|---|---|---|---|\n";
  char line[256];
  for (std::size_t i = 0; i < result.reports.size(); ++i) {
    const auto& arm = ablation_arms()[i];
    const auto& r = result.reports[i];
    std::snprintf(line, sizeof(line), "| %s | %s | %s | %.2f | %.2f | %.2f | %.2f | %zu |\n", arm.name.c_str(),
                  arm.use_a ? "yes" : "no", arm.use_c ? "yes" : "no", 100.0 * r.test.em, 100.0 * r.test.f1_token,
                  100.0 * r.test.answer_acc, 100.0 * r.test.boundary_f1, r.epochs);
    table << line;
  }
  result.table = table.str();

  json summary = json::array();
  for (const auto& r : result.reports) summary.push_back(r.to_json());
  write_json(summary, out / "ablation.json");
  std::ofstream md(out / "ablation.md", std::ios::binary);
  if (!md) throw IoError("cannot write " + (out / "ablation.md").string());
  md << result.table;
  return result;
}

json GradcheckReport::to_json() const {
  json groups_json = json::array();
  for (const auto& g : groups) {
    groups_json.push_back({{"name", g.name},
                           {"max_rel_error", g.max_rel_error},
                           {"max_abs_analytic", g.max_abs_analytic},
                           {"passed", g.passed}});
  }
  return {{"groups", groups_json}, {"passed", passed}};
}

GradcheckReport run_gradcheck(const RunConfig& cfg, Fault fault) {
  const GradcheckConfig& gc = cfg.gradcheck;
  constexpr std::size_t kVocab = 12;
  constexpr std::size_t kAnswers = 5;
  constexpr std::size_t kFeature = 4;

  model::ModelConfig mc = cfg.model;
  mc.d_model = gc.d_model;
  mc.n_heads = gc.n_heads;
  mc.n_layers = 1;
  mc.d_fr = kFeature;
  mc.vocab_size = kVocab;
  mc.n_answers = kAnswers;
  mc.dropout = 0.0;
  mc.seed = cfg.train.seed;
  try {
    mc.validate();
  } catch (const ContractError& e) {
    throw ValidationError(e.what());
  }
  model::Model m(mc);

  std::mt19937_64 rng(cfg.train.seed + 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto random_box = [&] {
    const double x = 0.8 * unit(rng), y = 0.8 * unit(rng);
    return embeddings::Box{x, y, x + 0.05 + 0.15 * unit(rng), y + 0.05 + 0.15 * unit(rng)};
  };
  auto features = [&] {
    std::vector<double> v(kFeature);
    for (double& x : v) x = normal(rng);
    return v;
  };
  model::Example ex;
  ex.id = "gradcheck";
  for (std::size_t i = 0; i < gc.n_objects; ++i) ex.objects.push_back({features(), random_box(), rng() % kVocab});
  for (std::size_t i = 0; i < gc.n_ocr; ++i) ex.scene_text.push_back({features(), random_box(), rng() % kVocab});
  for (std::size_t i = 0; i < gc.n_question; ++i) ex.question.push_back(rng() % kVocab);
  for (std::size_t i = 0; i + 1 < gc.n_ocr; ++i) ex.gold_boundaries.push_back(rng() % 2);
  ex.gold_answer = rng() % kAnswers;

  const double lambda = cfg.train.lambda;
  GradcheckReport report;
  report.groups = check_gradients(
      [&](Graph& g, ParamStore&) {
        const model::ModelOutput out = m.forward(g, ex);
        return model::loss(out, ex.gold_answer, ex.gold_boundaries, lambda);
      },
      m.params(), gc.h, gc.tolerance, gc.floor, fault);

  // −log C[0][n−1] over a long span depends on W through every link.
  ParamStore span_store;
  Tensor w(Shape{gc.d_model, gc.d_model});
  for (double& x : w.data()) x = 0.3 * normal(rng);
  span_store.add("W", std::move(w));
  Tensor f(Shape{gc.span, gc.d_model});
  for (double& x : f.data()) x = normal(rng);
  const std::size_t last = gc.span - 1;
  auto span_groups = check_gradients(
      [&](Graph& g, ParamStore& store) {
        const auto scores = constituent::constituent_scores(g.constant(f), g.param(store, "W"));
        const Var corner = ops::slice_rows(ops::reshape(scores.log_c, Shape{gc.span * gc.span}), last, last + 1);
        return ops::scale(ops::sum(corner), -1.0);
      },
      span_store, gc.h, gc.tolerance, gc.floor, fault);
  for (auto& group : span_groups) {
    group.name = "span" + std::to_string(gc.span) + "." + group.name;
    group.passed = group.passed && group.max_abs_analytic > 0.0;
    report.groups.push_back(group);
  }
  report.passed = std::all_of(report.groups.begin(), report.groups.end(), [](const GroupCheck& g) { return g.passed; });
  return report;
}

std::vector<SelftestCheck> run_selftest(const RunConfig& cfg) {
  std::vector<SelftestCheck> checks;
  std::mt19937_64 rng(cfg.train.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  char detail[160];

  {
    double worst = 0.0;
    bool invariants = true;
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t n = 2 + rng() % 31;
      Tensor p(Shape{n - 1});
      for (double& x : p.data()) x = constituent::kLinkFloor + (1.0 - constituent::kLinkFloor) * unit(rng);
      Graph g;
      const Tensor log_c = constituent::constituent_matrix(g.constant(p)).log_c.value();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          double direct = 1.0;
          for (std::size_t k = std::min(i, j); k < std::max(i, j); ++k) direct *= p.data()[k];
          const double c = std::exp(log_c.at(i, j));
          worst = std::max(worst, std::abs(c - direct));
          invariants = invariants && c == std::exp(log_c.at(j, i)) && c <= 1.0 && (i != j || c == 1.0);
          if (j > i && j + 1 < n) invariants = invariants && std::exp(log_c.at(i, j + 1)) <= c;
        }
      }
    }
    std::snprintf(detail, sizeof(detail), "max |exp(logC) - product| = %.3g", worst);
    checks.push_back({"log-space product matches direct product", worst < 1e-10, detail});
    checks.push_back({"constituent matrix symmetric, unit diagonal, span-monotone", invariants, ""});
  }

  {
    const std::size_t n = 5, d = 4;
    Tensor a(Shape{2, n, n});
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& x : a.data()) x = normal(rng);
    Tensor v(Shape{2, n, d / 2}), wo(Shape{d, d}), log_c(Shape{n, n}), zero(Shape{n, n});
    for (double& x : v.data()) x = normal(rng);
    for (double& x : wo.data()) x = normal(rng);
    for (double& x : log_c.data()) x = -unit(rng);
    Graph g;
    const Var soft = ops::softmax_rows(g.constant(a));
    attention::AttentionConfig both{d, 2, true, true, attention::ScaleMode::kModel};
    attention::AttentionConfig a_only{d, 2, true, false, attention::ScaleMode::kModel};
    const Var plain = attention::attend({soft}, g.constant(v), g.constant(wo));
    const Var ones = attention::attend(attention::gate(soft, g.constant(zero), both), g.constant(v), g.constant(wo));
    const Var ungated =
        attention::attend(attention::gate(soft, g.constant(log_c), a_only), g.constant(v), g.constant(wo));
    const bool same = bit_identical(plain.value(), ones.value()) && bit_identical(plain.value(), ungated.value());
    checks.push_back({"gating identity (C = 1 and A-only)", same, ""});
  }

  {
    using metrics::AnswerPair;
    const bool ok = metrics::f1_token({{"a", "b"}, {"b", "c"}}) == 0.5 &&
                    std::abs(metrics::f1_token({{"a", "a", "b"}, {"a", "b", "b"}}) - 2.0 / 3.0) < 1e-15 &&
                    metrics::exact_match(AnswerPair::from_strings("Tạp  Hóa", "tạp hóa")) == 1 &&
                    metrics::f1_token({{}, {}}) == 1.0 && metrics::f1_token({{"a"}, {}}) == 0.0;
    checks.push_back({"metric examples", ok, ""});
  }

  {
    model::ModelConfig mc = cfg.model;
    mc.seed = cfg.train.seed;
    model::Model m(mc);
    const auto bytes = encode_checkpoint(m.params());
    const bool ok = encode_checkpoint(decode_checkpoint(bytes)) == bytes;
    checks.push_back({"checkpoint round-trip", ok, std::to_string(bytes.size()) + " bytes"});
  }

  {
    const GradcheckReport gr = run_gradcheck(cfg);
    double worst = 0.0;
    for (const auto& g : gr.groups) worst = std::max(worst, g.max_rel_error);
    std::snprintf(detail, sizeof(detail), "%zu groups, worst relative error %.3g", gr.groups.size(), worst);
    checks.push_back({"gradient check", gr.passed, detail});
  }
  return checks;
}

}  // namespace cf::harness
