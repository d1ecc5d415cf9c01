#include "consformer/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <set>
#include <vector>

#include "consformer/errors.hpp"

namespace cf::harness {
namespace {

using json = nlohmann::json;

template <typename T>
struct Field {
  const char* key;
  std::function<json(const T&)> get;
  std::function<void(T&, const json&)> set;
};

[[noreturn]] void type_error(const char* key, const char* expected, const json& v) {
  throw ValidationError("config key '" + std::string(key) + "' expects " + expected + ", got " + v.dump());
}

template <typename T, typename Access>
Field<T> uint_field(const char* key, Access acc) {
  return {key, [acc](const T& c) { return json(acc(const_cast<T&>(c))); },
          [acc, key](T& c, const json& v) {
            const bool ok = v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
            if (!ok) type_error(key, "a non-negative integer", v);
            using U = std::remove_reference_t<decltype(acc(c))>;
            acc(c) = static_cast<U>(v.get<std::uint64_t>());
          }};
}

template <typename T, typename Access>
Field<T> float_field(const char* key, Access acc) {
  return {key, [acc](const T& c) { return json(acc(const_cast<T&>(c))); },
          [acc, key](T& c, const json& v) {
            if (!v.is_number()) type_error(key, "a number", v);
            acc(c) = v.get<double>();
          }};
}

template <typename T, typename Access>
Field<T> bool_field(const char* key, Access acc) {
  return {key, [acc](const T& c) { return json(acc(const_cast<T&>(c))); },
          [acc, key](T& c, const json& v) {
            if (!v.is_boolean()) type_error(key, "a boolean", v);
            acc(c) = v.get<bool>();
          }};
}

template <typename T, typename Access>
Field<T> string_field(const char* key, Access acc) {
  return {key, [acc](const T& c) { return json(acc(const_cast<T&>(c))); },
          [acc, key](T& c, const json& v) {
            if (!v.is_string()) type_error(key, "a string", v);
            acc(c) = v.get<std::string>();
          }};
}

template <typename T, typename E, typename Access>
Field<T> enum_field(const char* key, Access acc, std::vector<std::pair<E, std::string>> names) {
  return {key,
          [acc, names](const T& c) {
            for (const auto& [e, s] : names)
              if (acc(const_cast<T&>(c)) == e) return json(s);
            return json(nullptr);
          },
          [acc, key, names](T& c, const json& v) {
            if (!v.is_string()) type_error(key, "a string", v);
            for (const auto& [e, s] : names) {
              if (v.get<std::string>() == s) {
                acc(c) = e;
                return;
              }
            }
            type_error(key, "one of the documented names", v);
          }};
}

// Lifts a field of a member struct to the enclosing struct.
template <typename Outer, typename Inner, typename Member>
Field<Outer> lift(const Field<Inner>& f, Member member) {
  return {f.key, [f, member](const Outer& o) { return f.get(o.*member); },
          [f, member](Outer& o, const json& v) { f.set(o.*member, v); }};
}

const std::vector<Field<synth::SynthConfig>>& synth_fields() {
  using S = synth::SynthConfig;
  static const std::vector<Field<S>> fields = {
      uint_field<S>("n_train", [](S& c) -> auto& { return c.n_train; }),
      uint_field<S>("n_test", [](S& c) -> auto& { return c.n_test; }),
      uint_field<S>("vocab_size", [](S& c) -> auto& { return c.vocab_size; }),
      uint_field<S>("n_words", [](S& c) -> auto& { return c.n_words; }),
      float_field<S>("word_len_p1", [](S& c) -> auto& { return c.word_len_probs[0]; }),
      float_field<S>("word_len_p2", [](S& c) -> auto& { return c.word_len_probs[1]; }),
      float_field<S>("word_len_p3", [](S& c) -> auto& { return c.word_len_probs[2]; }),
      uint_field<S>("words_per_line_min", [](S& c) -> auto& { return c.words_per_line_min; }),
      uint_field<S>("words_per_line_max", [](S& c) -> auto& { return c.words_per_line_max; }),
      uint_field<S>("lines_min", [](S& c) -> auto& { return c.lines_min; }),
      uint_field<S>("lines_max", [](S& c) -> auto& { return c.lines_max; }),
      uint_field<S>("n_objects", [](S& c) -> auto& { return c.n_objects; }),
      uint_field<S>("n_object_labels", [](S& c) -> auto& { return c.n_object_labels; }),
      uint_field<S>("d_fr", [](S& c) -> auto& { return c.d_fr; }),
      float_field<S>("rho", [](S& c) -> auto& { return c.rho; }),
      float_field<S>("reorder_fraction", [](S& c) -> auto& { return c.reorder_fraction; }),
      string_field<S>("answer_scheme", [](S& c) -> auto& { return c.answer_scheme; }),
      uint_field<S>("data_seed", [](S& c) -> auto& { return c.seed; }),
  };
  return fields;
}

// Architecture keys shared by run configs and checkpoint sidecars.
std::vector<Field<model::ModelConfig>> architecture_fields() {
  using M = model::ModelConfig;
  using attention::ScaleMode;
  using model::Pooling;
  return {
      uint_field<M>("d_model", [](M& c) -> auto& { return c.d_model; }),
      uint_field<M>("n_heads", [](M& c) -> auto& { return c.n_heads; }),
      uint_field<M>("n_layers", [](M& c) -> auto& { return c.n_layers; }),
      uint_field<M>("ffn_mult", [](M& c) -> auto& { return c.ffn_mult; }),
      float_field<M>("dropout", [](M& c) -> auto& { return c.dropout; }),
      bool_field<M>("use_a", [](M& c) -> auto& { return c.use_a; }),
      bool_field<M>("use_c", [](M& c) -> auto& { return c.use_c; }),
      enum_field<M, ScaleMode>("scale_mode", [](M& c) -> auto& { return c.scale_mode; },
                               {{ScaleMode::kModel, "d_model"}, {ScaleMode::kHead, "d_head"}}),
      bool_field<M>("renormalize", [](M& c) -> auto& { return c.renormalize; }),
      bool_field<M>("ocr_residual", [](M& c) -> auto& { return c.ocr_residual; }),
      bool_field<M>("use_object_labels", [](M& c) -> auto& { return c.use_object_labels; }),
      bool_field<M>("normalize_token_term", [](M& c) -> auto& { return c.normalize_token_term; }),
      enum_field<M, Pooling>("pooling", [](M& c) -> auto& { return c.pooling; },
                             {{Pooling::kQuestion, "question"}, {Pooling::kAll, "all"}}),
      float_field<M>("ln_eps", [](M& c) -> auto& { return c.ln_eps; }),
      float_field<M>("table_std", [](M& c) -> auto& { return c.table_std; }),
  };
}

const std::vector<Field<model::ModelConfig>>& model_fields() {
  using M = model::ModelConfig;
  static const std::vector<Field<M>> fields = [] {
    auto f = architecture_fields();
    f.push_back(uint_field<M>("d_fr", [](M& c) -> auto& { return c.d_fr; }));
    f.push_back(uint_field<M>("vocab_size", [](M& c) -> auto& { return c.vocab_size; }));
    f.push_back(uint_field<M>("n_answers", [](M& c) -> auto& { return c.n_answers; }));
    f.push_back(uint_field<M>("seed", [](M& c) -> auto& { return c.seed; }));
    return f;
  }();
  return fields;
}

const std::vector<Field<RunConfig>>& run_fields() {
  using R = RunConfig;
  static const std::vector<Field<R>> fields = [] {
    std::vector<Field<R>> f;
    for (const auto& s : synth_fields()) f.push_back(lift<R>(s, &R::synth));
    for (const auto& m : architecture_fields()) f.push_back(lift<R>(m, &R::model));
    f.push_back(uint_field<R>("seed", [](R& c) -> auto& { return c.train.seed; }));
    f.push_back(float_field<R>("lr", [](R& c) -> auto& { return c.train.lr; }));
    f.push_back(float_field<R>("beta1", [](R& c) -> auto& { return c.train.beta1; }));
    f.push_back(float_field<R>("beta2", [](R& c) -> auto& { return c.train.beta2; }));
    f.push_back(float_field<R>("adam_eps", [](R& c) -> auto& { return c.train.adam_eps; }));
    f.push_back(uint_field<R>("batch_size", [](R& c) -> auto& { return c.train.batch_size; }));
    f.push_back(uint_field<R>("max_epochs", [](R& c) -> auto& { return c.train.max_epochs; }));
    f.push_back(uint_field<R>("patience", [](R& c) -> auto& { return c.train.patience; }));
    f.push_back(float_field<R>("lambda", [](R& c) -> auto& { return c.train.lambda; }));
    f.push_back(float_field<R>("val_fraction", [](R& c) -> auto& { return c.train.val_fraction; }));
    f.push_back(float_field<R>("gc_h", [](R& c) -> auto& { return c.gradcheck.h; }));
    f.push_back(float_field<R>("gc_tolerance", [](R& c) -> auto& { return c.gradcheck.tolerance; }));
    f.push_back(float_field<R>("gc_floor", [](R& c) -> auto& { return c.gradcheck.floor; }));
    f.push_back(uint_field<R>("gc_d_model", [](R& c) -> auto& { return c.gradcheck.d_model; }));
    f.push_back(uint_field<R>("gc_n_heads", [](R& c) -> auto& { return c.gradcheck.n_heads; }));
    f.push_back(uint_field<R>("gc_n_ocr", [](R& c) -> auto& { return c.gradcheck.n_ocr; }));
    f.push_back(uint_field<R>("gc_n_objects", [](R& c) -> auto& { return c.gradcheck.n_objects; }));
    f.push_back(uint_field<R>("gc_n_question", [](R& c) -> auto& { return c.gradcheck.n_question; }));
    f.push_back(uint_field<R>("gc_span", [](R& c) -> auto& { return c.gradcheck.span; }));
    f.push_back(string_field<R>("dataset", [](R& c) -> auto& { return c.dataset; }));
    f.push_back(string_field<R>("arm", [](R& c) -> auto& { return c.arm; }));
    return f;
  }();
  return fields;
}

template <typename T>
void apply_fields(const std::vector<Field<T>>& fields, T& target, const json& flat, const char* what) {
  if (!flat.is_object()) throw ValidationError(std::string(what) + ": expected a flat JSON object");
  std::set<std::string> known;
  for (const auto& f : fields) known.insert(f.key);
  for (const auto& [key, value] : flat.items()) {
    if (!known.count(key)) throw ValidationError(std::string(what) + ": unknown key '" + key + "'");
    if (value.is_object() || value.is_array()) {
      throw ValidationError(std::string(what) + ": key '" + key + "' must hold a scalar");
    }
  }
  for (const auto& f : fields) {
    if (flat.contains(f.key)) f.set(target, flat.at(f.key));
  }
}

template <typename T>
json dump_fields(const std::vector<Field<T>>& fields, const T& source) {
  json out = json::object();
  for (const auto& f : fields) out[f.key] = f.get(source);
  return out;
}

}  // namespace

RunConfig parse_config(const json& flat) {
  RunConfig cfg;
  apply_fields(run_fields(), cfg, flat, "config");
  cfg.model.seed = cfg.train.seed;
  cfg.model.d_fr = cfg.synth.d_fr;
  if (cfg.train.batch_size == 0) throw ValidationError("config key 'batch_size' must be positive");
  if (cfg.train.lambda < 0.0) throw ValidationError("config key 'lambda' must be non-negative");
  if (!(cfg.train.val_fraction >= 0.0 && cfg.train.val_fraction < 1.0)) {
    throw ValidationError("config key 'val_fraction' must lie in [0,1)");
  }
  if (!(cfg.train.lr > 0.0)) throw ValidationError("config key 'lr' must be positive");
  cfg.synth.validate();
  try {
    model::ModelConfig probe = cfg.model;
    probe.validate();
  } catch (const ContractError& e) {
    throw ValidationError(e.what());
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  json flat;
  try {
    flat = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError("config " + path.string() + ": " + e.what());
  }
  return parse_config(flat);
}

json to_json(const RunConfig& cfg) { return dump_fields(run_fields(), cfg); }

json synth_to_json(const synth::SynthConfig& cfg) { return dump_fields(synth_fields(), cfg); }

synth::SynthConfig synth_from_json(const json& flat) {
  synth::SynthConfig cfg;
  apply_fields(synth_fields(), cfg, flat, "synthetic config");
  cfg.validate();
  return cfg;
}

json model_to_json(const model::ModelConfig& cfg) { return dump_fields(model_fields(), cfg); }

model::ModelConfig model_from_json(const json& j) {
  model::ModelConfig cfg;
  apply_fields(model_fields(), cfg, j, "model config");
  try {
    cfg.validate();
  } catch (const ContractError& e) {
    throw ValidationError(e.what());
  }
  return cfg;
}

std::string config_hash(const model::ModelConfig& cfg) {
  const std::string canonical = model_to_json(cfg).dump();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : canonical) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace cf::harness
