#include "consformer/dataset_io.hpp"

#include <fstream>
#include <istream>
#include <ostream>

#include "consformer/config.hpp"
#include "consformer/errors.hpp"
#include "json.hpp"

namespace cf::harness {
namespace {

using json = nlohmann::json;

constexpr int kFormatVersion = 1;

json box_json(const embeddings::Box& b) { return json::array({b[0], b[1], b[2], b[3]}); }

embeddings::Box box_from(const json& j) {
  if (!j.is_array() || j.size() != 4) throw ValidationError("dataset: box must hold 4 numbers");
  embeddings::Box b{};
  for (std::size_t i = 0; i < 4; ++i) b[i] = j.at(i).get<double>();
  return b;
}

json example_json(const model::Example& ex, const char* split) {
  json objects = json::array();
  for (const auto& o : ex.objects) {
    objects.push_back({{"appearance", o.appearance}, {"box", box_json(o.box)}, {"label", o.label}});
  }
  json texts = json::array();
  for (const auto& t : ex.scene_text) {
    texts.push_back({{"appearance", t.appearance}, {"box", box_json(t.box)}, {"token", t.token}});
  }
  json boundaries = json::array();
  for (std::uint8_t b : ex.gold_boundaries) boundaries.push_back(b != 0);
  json j;
  j["kind"] = "example";
  j["split"] = split;
  j["id"] = ex.id;
  j["objects"] = std::move(objects);
  j["scene_text"] = std::move(texts);
  j["question"] = ex.question;
  j["gold_boundaries"] = std::move(boundaries);
  j["gold_answer"] = ex.gold_answer;
  return j;
}

model::Example example_from(const json& j) {
  model::Example ex;
  ex.id = j.at("id").get<std::string>();
  for (const auto& o : j.at("objects")) {
    embeddings::RawObject obj;
    obj.appearance = o.at("appearance").get<std::vector<double>>();
    obj.box = box_from(o.at("box"));
    obj.label = o.at("label").get<std::size_t>();
    ex.objects.push_back(std::move(obj));
  }
  for (const auto& t : j.at("scene_text")) {
    embeddings::RawSceneText st;
    st.appearance = t.at("appearance").get<std::vector<double>>();
    st.box = box_from(t.at("box"));
    st.token = t.at("token").get<std::size_t>();
    ex.scene_text.push_back(std::move(st));
  }
  ex.question = j.at("question").get<std::vector<std::size_t>>();
  for (const auto& b : j.at("gold_boundaries")) ex.gold_boundaries.push_back(b.get<bool>() ? 1 : 0);
  ex.gold_answer = j.at("gold_answer").get<std::size_t>();
  if (!ex.scene_text.empty() && ex.gold_boundaries.size() != ex.scene_text.size() - 1) {
    throw ValidationError("dataset: example " + ex.id + " has mismatched boundary labels");
  }
  return ex;
}

}  // namespace

void write_dataset(std::ostream& out, const synth::Dataset& ds) {
  json header;
  header["kind"] = "header";
  header["format"] = kFormatVersion;
  header["synth"] = synth_to_json(ds.config);
  header["syllables"] = ds.lexicon.syllables;
  header["words"] = ds.lexicon.words;
  header["n_object_labels"] = ds.lexicon.n_object_labels;
  out << header.dump() << '\n';
  for (const auto& ex : ds.train) out << example_json(ex, "train").dump() << '\n';
  for (const auto& ex : ds.test) out << example_json(ex, "test").dump() << '\n';
}

synth::Dataset read_dataset(std::istream& in) {
  synth::Dataset ds;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  try {
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const json j = json::parse(line);
      const std::string kind = j.at("kind").get<std::string>();
      if (kind == "header") {
        if (have_header) throw ValidationError("second header record");
        if (j.at("format").get<int>() != kFormatVersion) throw ValidationError("unsupported dataset format");
        ds.config = synth_from_json(j.at("synth"));
        ds.lexicon.syllables = j.at("syllables").get<std::vector<std::string>>();
        ds.lexicon.words = j.at("words").get<std::vector<std::vector<std::size_t>>>();
        ds.lexicon.n_object_labels = j.at("n_object_labels").get<std::size_t>();
        have_header = true;
      } else if (kind == "example") {
        if (!have_header) throw ValidationError("example before header");
        const std::string split = j.at("split").get<std::string>();
        if (split == "train") {
          if (!ds.test.empty()) throw ValidationError("train example after test examples");
          ds.train.push_back(example_from(j));
        } else if (split == "test") {
          ds.test.push_back(example_from(j));
        } else {
          throw ValidationError("unknown split '" + split + "'");
        }
      } else {
        throw ValidationError("unknown record kind '" + kind + "'");
      }
    }
  } catch (const json::exception& e) {
    throw ValidationError("dataset line " + std::to_string(line_no) + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError("dataset line " + std::to_string(line_no) + ": " + e.what());
  }
  if (!have_header) throw ValidationError("dataset: missing header record");
  return ds;
}

void save_dataset(const synth::Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write dataset " + path.string());
  write_dataset(out, ds);
  if (!out) throw IoError("failed writing dataset " + path.string());
}

synth::Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read dataset " + path.string());
  return read_dataset(in);
}

void write_predictions(std::ostream& out, const std::vector<PredictionRecord>& records) {
  for (const auto& r : records) {
    json j;
    j["id"] = r.id;
    j["predicted"] = r.predicted;
    j["gold"] = r.golds.empty() ? std::string() : r.golds.front();
    if (r.golds.size() > 1) j["golds"] = r.golds;
    out << j.dump() << '\n';
  }
}

std::vector<PredictionRecord> read_predictions(std::istream& in) {
  std::vector<PredictionRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      PredictionRecord r;
      r.id = j.at("id").get<std::string>();
      r.predicted = j.at("predicted").get<std::string>();
      if (j.contains("golds")) {
        r.golds = j.at("golds").get<std::vector<std::string>>();
      } else {
        r.golds = {j.at("gold").get<std::string>()};
      }
      records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ValidationError("predictions line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

void save_predictions(const std::vector<PredictionRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write predictions " + path.string());
  write_predictions(out, records);
}

std::vector<PredictionRecord> load_predictions(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read predictions " + path.string());
  return read_predictions(in);
}

}  // namespace cf::harness
