#include "icl/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "icl/error.hpp"

namespace icl::corpus {

namespace {

using nlohmann::ordered_json;

constexpr std::string_view kAnswerSlot = "answer";

struct Piece {
  bool placeholder = false;
  std::string text;
};

std::vector<Piece> parse_pattern(const std::string& pattern) {
  std::vector<Piece> pieces;
  std::string literal;
  for (std::size_t i = 0; i < pattern.size(); ++i) {
    const char c = pattern[i];
    if (c == '{' && i + 1 < pattern.size() && pattern[i + 1] == '{') {
      literal += '{';
      ++i;
    } else if (c == '}' && i + 1 < pattern.size() && pattern[i + 1] == '}') {
      literal += '}';
      ++i;
    } else if (c == '{') {
      const auto close = pattern.find('}', i + 1);
      if (close == std::string::npos) {
        throw ConfigError("unterminated placeholder in pattern " + quote_for_error(pattern));
      }
      std::string name = pattern.substr(i + 1, close - i - 1);
      if (name.empty() || name.find('{') != std::string::npos) {
        throw ConfigError("malformed placeholder in pattern " + quote_for_error(pattern));
      }
      if (!literal.empty()) pieces.push_back({false, std::move(literal)});
      literal.clear();
      pieces.push_back({true, std::move(name)});
      i = close;
    } else if (c == '}') {
      throw ConfigError("unmatched '}' in pattern " + quote_for_error(pattern));
    } else {
      literal += c;
    }
  }
  if (!literal.empty()) pieces.push_back({false, std::move(literal)});
  return pieces;
}

bool has_slot(const std::vector<Piece>& pieces, std::string_view name) {
  return std::any_of(pieces.begin(), pieces.end(),
                     [&](const Piece& p) { return p.placeholder && p.text == name; });
}

std::string render(const std::string& pattern, const Example& ex, const std::string* answer) {
  std::string out;
  for (const auto& piece : parse_pattern(pattern)) {
    if (!piece.placeholder) {
      out += piece.text;
    } else if (piece.text == kAnswerSlot) {
      if (answer == nullptr) {
        throw DataError("example '" + ex.id + "' has no label to fill the answer slot");
      }
      out += *answer;
    } else if (const std::string* value = ex.field(piece.text)) {
      out += *value;
    } else {
      throw DataError("example '" + ex.id + "' is missing field '" + piece.text + "'");
    }
  }
  return out;
}

std::string verbalized_answer(const TaskTemplate& tmpl, const Example& ex) {
  if (!ex.label) {
    throw DataError("example '" + ex.id + "' has no label");
  }
  if (!tmpl.is_classification()) return *ex.label;
  for (const auto& [key, text] : *tmpl.verbalizer()) {
    if (key == *ex.label) return render(text, ex, nullptr);
  }
  throw DataError("no verbalizer entry for label '" + *ex.label + "' (example '" + ex.id + "')");
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

ordered_json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return ordered_json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace

std::string_view to_string(TaskKind kind) {
  return kind == TaskKind::classification ? "classification" : "generation";
}

TaskKind parse_task_kind(std::string_view text) {
  if (text == "classification") return TaskKind::classification;
  if (text == "generation") return TaskKind::generation;
  throw ConfigError("unknown task_kind '" + std::string(text) + "'");
}

const std::string* Example::field(std::string_view name) const {
  for (const auto& [key, value] : fields) {
    if (key == name) return &value;
  }
  return nullptr;
}

TaskTemplate::TaskTemplate(std::string demo_pattern, std::string query_pattern,
                           std::optional<Verbalizations> verbalizer, std::string demo_separator)
    : demo_pattern_(std::move(demo_pattern)),
      query_pattern_(std::move(query_pattern)),
      verbalizer_(std::move(verbalizer)),
      demo_separator_(std::move(demo_separator)) {
  if (demo_pattern_.compare(0, query_pattern_.size(), query_pattern_) != 0) {
    throw ConfigError("demo_pattern must start with query_pattern; got demo " + quote_for_error(demo_pattern_) +
                      " and query " + quote_for_error(query_pattern_));
  }
  answer_pattern_ = demo_pattern_.substr(query_pattern_.size());

  const auto query = parse_pattern(query_pattern_);
  const auto answer = parse_pattern(answer_pattern_);
  if (has_slot(query, kAnswerSlot)) {
    throw ConfigError("query_pattern must not contain the {answer} slot");
  }
  if (!has_slot(answer, kAnswerSlot)) {
    throw ConfigError("demo_pattern must end with an answer suffix containing {answer}");
  }

  auto note_fields = [this](const std::vector<Piece>& pieces) {
    for (const auto& p : pieces) {
      if (p.placeholder && p.text != kAnswerSlot &&
          std::find(fields_.begin(), fields_.end(), p.text) == fields_.end()) {
        fields_.push_back(p.text);
      }
    }
  };
  note_fields(query);
  note_fields(answer);

  if (verbalizer_) {
    if (verbalizer_->empty()) throw ConfigError("verbalizer must not be empty");
    std::set<std::string> seen;
    for (const auto& [key, text] : *verbalizer_) {
      if (!seen.insert(key).second) throw ConfigError("duplicate verbalizer key '" + key + "'");
      const auto pieces = parse_pattern(text);
      if (has_slot(pieces, kAnswerSlot)) {
        throw ConfigError("verbalizer entry for '" + key + "' must not contain {answer}");
      }
      note_fields(pieces);
    }
  }
}

TaskTemplate TaskTemplate::from_json(const ordered_json& j) {
  try {
    std::optional<Verbalizations> verbalizer;
    if (j.contains("verbalizer") && !j.at("verbalizer").is_null()) {
      Verbalizations v;
      for (const auto& [key, value] : j.at("verbalizer").items()) {
        v.emplace_back(key, value.get<std::string>());
      }
      verbalizer = std::move(v);
    }
    return TaskTemplate(j.at("demo_pattern").get<std::string>(), j.at("query_pattern").get<std::string>(),
                        std::move(verbalizer), j.value("demo_separator", std::string("\n")));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid template: ") + e.what());
  }
}

TaskTemplate TaskTemplate::load(const std::filesystem::path& path) {
  try {
    return from_json(read_json_file(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

ordered_json TaskTemplate::to_json() const {
  ordered_json j;
  j["demo_pattern"] = demo_pattern_;
  j["query_pattern"] = query_pattern_;
  if (verbalizer_) {
    ordered_json v = ordered_json::object();
    for (const auto& [key, text] : *verbalizer_) v[key] = text;
    j["verbalizer"] = std::move(v);
  } else {
    j["verbalizer"] = nullptr;
  }
  j["demo_separator"] = demo_separator_;
  return j;
}

std::string render_demo(const TaskTemplate& tmpl, const Example& ex) {
  const std::string answer = verbalized_answer(tmpl, ex);
  return render(tmpl.query_pattern(), ex, nullptr) + render(tmpl.answer_pattern(), ex, &answer);
}

QueryText render_query(const TaskTemplate& tmpl, const Example& ex) {
  QueryText q;
  q.context = render(tmpl.query_pattern(), ex, nullptr);
  if (ex.label) {
    const std::string answer = verbalized_answer(tmpl, ex);
    q.answer = render(tmpl.answer_pattern(), ex, &answer);
  }
  return q;
}

Verbalizations verbalizations(const TaskTemplate& tmpl) {
  if (!tmpl.is_classification()) {
    throw ConfigError("verbalizations requested from a generation template");
  }
  return *tmpl.verbalizer();
}

Verbalizations answer_options(const TaskTemplate& tmpl, const Example& ex) {
  Verbalizations out;
  for (const auto& [key, text] : verbalizations(tmpl)) {
    const std::string answer = render(text, ex, nullptr);
    out.emplace_back(key, render(tmpl.answer_pattern(), ex, &answer));
  }
  return out;
}

const Example* Dataset::find_train(std::string_view id) const {
  for (const auto& ex : train) {
    if (ex.id == id) return &ex;
  }
  return nullptr;
}

DatasetDescriptor DatasetDescriptor::load(const std::filesystem::path& path) {
  const ordered_json j = read_json_file(path);
  const auto base = path.parent_path();
  DatasetDescriptor d;
  try {
    d.name = j.at("name").get<std::string>();
    d.task_kind = parse_task_kind(j.at("task_kind").get<std::string>());
    d.template_path = resolve(base, j.at("template").get<std::string>());
    if (j.contains("labels") && !j.at("labels").is_null()) {
      d.labels = j.at("labels").get<std::vector<std::string>>();
    }
    d.train_path = resolve(base, j.at("splits").at("train").get<std::string>());
    d.test_path = resolve(base, j.at("splits").at("test").get<std::string>());
    if (j.contains("n_shot")) d.n_shot = j.at("n_shot").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": invalid descriptor: " + e.what());
  }
  return d;
}

Example example_from_json(const ordered_json& j) {
  Example ex;
  ex.id = j.at("id").get<std::string>();
  for (const auto& [key, value] : j.at("fields").items()) {
    ex.fields.emplace_back(key, value.get<std::string>());
  }
  if (j.contains("label") && !j.at("label").is_null()) {
    ex.label = j.at("label").get<std::string>();
  }
  return ex;
}

ordered_json example_to_json(const Example& ex) {
  ordered_json j;
  j["id"] = ex.id;
  ordered_json fields = ordered_json::object();
  for (const auto& [key, value] : ex.fields) fields[key] = value;
  j["fields"] = std::move(fields);
  j["label"] = ex.label ? ordered_json(*ex.label) : ordered_json(nullptr);
  return j;
}

std::vector<Example> load_split(const std::filesystem::path& path, const TaskTemplate& tmpl,
                                TaskKind kind, const std::vector<std::string>& labels) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());

  const std::set<std::string> label_space(labels.begin(), labels.end());
  std::unordered_set<std::string> ids;
  std::vector<Example> out;
  std::string line;
  for (std::size_t line_no = 1; std::getline(in, line); ++line_no) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no) + ": ";
    Example ex;
    try {
      ex = example_from_json(ordered_json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + "malformed record: " + e.what());
    }
    for (const auto& name : tmpl.referenced_fields()) {
      if (ex.field(name) == nullptr) {
        throw DataError(where + "record '" + ex.id + "' is missing field '" + name +
                        "' required by the template");
      }
    }
    if (kind == TaskKind::classification && ex.label && !label_space.contains(*ex.label)) {
      throw DataError(where + "label '" + *ex.label + "' is outside the declared label space");
    }
    if (!ids.insert(ex.id).second) {
      throw DataError(where + "duplicate id '" + ex.id + "'");
    }
    out.push_back(std::move(ex));
  }
  return out;
}

void write_split(const std::filesystem::path& path, const std::vector<Example>& examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& ex : examples) out << example_to_json(ex).dump() << '\n';
}

Dataset load_dataset(const DatasetDescriptor& d) {
  TaskTemplate tmpl = TaskTemplate::load(d.template_path);
  if (d.task_kind == TaskKind::classification) {
    if (d.labels.empty()) throw ConfigError("classification dataset '" + d.name + "' declares no labels");
    if (!tmpl.is_classification()) {
      throw ConfigError("classification dataset '" + d.name + "' needs a template with a verbalizer");
    }
    std::set<std::string> keys;
    for (const auto& [key, _] : *tmpl.verbalizer()) keys.insert(key);
    if (keys != std::set<std::string>(d.labels.begin(), d.labels.end()) || keys.size() != d.labels.size()) {
      throw ConfigError("verbalizer keys of " + d.template_path.string() +
                        " do not match the label space of '" + d.name + "'");
    }
  } else if (tmpl.is_classification()) {
    throw ConfigError("generation dataset '" + d.name + "' must use a template without a verbalizer");
  }

  Dataset ds{d.name, d.task_kind, d.labels, {}, {}, std::move(tmpl), d.n_shot};
  ds.train = load_split(d.train_path, ds.tmpl, d.task_kind, d.labels);
  ds.test = load_split(d.test_path, ds.tmpl, d.task_kind, d.labels);

  for (const auto& ex : ds.train) {
    if (!ex.label) throw DataError(d.train_path.string() + ": train record '" + ex.id + "' has no label");
  }
  std::unordered_set<std::string> train_ids;
  for (const auto& ex : ds.train) train_ids.insert(ex.id);
  for (const auto& ex : ds.test) {
    if (train_ids.contains(ex.id)) {
      throw DataError("id '" + ex.id + "' appears in both train and test of '" + d.name + "'");
    }
  }
  return ds;
}

Dataset load_dataset(const std::filesystem::path& descriptor_path) {
  return load_dataset(DatasetDescriptor::load(descriptor_path));
}

}  // namespace icl::corpus
