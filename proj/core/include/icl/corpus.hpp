#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace icl::corpus {

enum class TaskKind { classification, generation };

std::string_view to_string(TaskKind kind);
TaskKind parse_task_kind(std::string_view text);

// One corpus record. Field order is the order of the source file.
struct Example {
  std::string id;
  std::vector<std::pair<std::string, std::string>> fields;
  std::optional<std::string> label;

  const std::string* field(std::string_view name) const;

  friend bool operator==(const Example&, const Example&) = default;
};

// (label key, answer continuation) pairs in template declaration order.
using Verbalizations = std::vector<std::pair<std::string, std::string>>;

// Turns an Example into demonstration text, query context and answer text.
//
// Patterns use `{name}` placeholders for example fields and the reserved
// `{answer}` slot; `{{` and `}}` produce literal braces. The demo pattern must
// be the query pattern followed by an answer suffix that contains `{answer}`,
// which is what makes render_query(...).context + answer == render_demo(...)
// hold for every labeled example.
//
// For classification templates `{answer}` expands to the verbalizer entry of
// the label (which may itself reference fields, e.g. a multiple-choice option
// text); for generation templates it expands to the label text verbatim.
class TaskTemplate {
 public:
  TaskTemplate(std::string demo_pattern, std::string query_pattern,
               std::optional<Verbalizations> verbalizer, std::string demo_separator = "\n");

  static TaskTemplate from_json(const nlohmann::ordered_json& j);
  static TaskTemplate load(const std::filesystem::path& path);
  nlohmann::ordered_json to_json() const;

  const std::string& demo_pattern() const { return demo_pattern_; }
  const std::string& query_pattern() const { return query_pattern_; }
  const std::string& answer_pattern() const { return answer_pattern_; }
  const std::string& demo_separator() const { return demo_separator_; }
  const std::optional<Verbalizations>& verbalizer() const { return verbalizer_; }
  bool is_classification() const { return verbalizer_.has_value(); }

  // Field names referenced anywhere (patterns and verbalizer entries), deduplicated, in first-use order.
  const std::vector<std::string>& referenced_fields() const { return fields_; }

 private:
  std::string demo_pattern_;
  std::string query_pattern_;
  std::string answer_pattern_;
  std::optional<Verbalizations> verbalizer_;
  std::string demo_separator_;
  std::vector<std::string> fields_;
};

struct QueryText {
  std::string context;
  std::string answer;  // empty when the example has no label
};

std::string render_demo(const TaskTemplate& tmpl, const Example& ex);
QueryText render_query(const TaskTemplate& tmpl, const Example& ex);

// Raw verbalizer entries; throws ConfigError for generation templates.
Verbalizations verbalizations(const TaskTemplate& tmpl);

// Verbalizer entries rendered against `ex` (identical to verbalizations()
// unless entries reference fields).
Verbalizations answer_options(const TaskTemplate& tmpl, const Example& ex);

struct Dataset {
  std::string name;
  TaskKind task_kind = TaskKind::classification;
  std::vector<std::string> labels;
  std::vector<Example> train;
  std::vector<Example> test;
  TaskTemplate tmpl;
  std::optional<int> default_n_shot;

  const Example* find_train(std::string_view id) const;
};

// Sidecar descriptor. Relative paths are resolved against the descriptor's directory.
struct DatasetDescriptor {
  std::string name;
  TaskKind task_kind = TaskKind::classification;
  std::filesystem::path template_path;
  std::vector<std::string> labels;
  std::filesystem::path train_path;
  std::filesystem::path test_path;
  std::optional<int> n_shot;

  static DatasetDescriptor load(const std::filesystem::path& path);
};

// Reads one JSONL split. Errors carry the file name and 1-based line number.
std::vector<Example> load_split(const std::filesystem::path& path, const TaskTemplate& tmpl,
                                TaskKind kind, const std::vector<std::string>& labels);
void write_split(const std::filesystem::path& path, const std::vector<Example>& examples);

Dataset load_dataset(const DatasetDescriptor& descriptor);
Dataset load_dataset(const std::filesystem::path& descriptor_path);

nlohmann::ordered_json example_to_json(const Example& ex);
Example example_from_json(const nlohmann::ordered_json& j);

}  // namespace icl::corpus
