#include <doctest.h>

#include <random>

#include "icl/corpus.hpp"
#include "icl/error.hpp"
#include "support.hpp"

using namespace icl;
using namespace icl::corpus;
using icl::testing::make_example;

namespace {

TaskTemplate shipped(const std::string& name) {
  return TaskTemplate::load(icl::testing::source_dir() / "templates" / (name + ".json"));
}

}  // namespace

TEST_SUITE("corpus") {

TEST_CASE("sst2 demo and query rendering") {
  const auto t = shipped("sst2");
  const auto ex = make_example("1", {{"sentence", "great film"}}, "positive");
  CHECK(render_demo(t, ex) == "Review: great film Sentiment: positive");
  const auto q = render_query(t, ex);
  CHECK(q.context == "Review: great film Sentiment:");
  CHECK(q.answer == " positive");

  const auto unlabeled = render_query(t, make_example("2", {{"sentence", "bad plot"}}));
  CHECK(unlabeled.context == "Review: bad plot Sentiment:");
  CHECK(unlabeled.answer.empty());
}

TEST_CASE("empty field substitutes nothing") {
  const auto t = shipped("sst2");
  CHECK(render_demo(t, make_example("1", {{"sentence", ""}}, "negative")) == "Review:  Sentiment: negative");
}

TEST_CASE("qnli query splits off the answer") {
  const auto t = shipped("qnli");
  const auto q = render_query(t, make_example("1", {{"sentence", "<C>"}, {"question", "<X>"}}, "entailment"));
  CHECK(q.context == "<C> Can we know <X>?");
  CHECK(q.answer == " Yes.");
}

TEST_CASE("flores demo") {
  const auto t = shipped("flores-de-ru");
  CHECK_FALSE(t.is_classification());
  const auto ex = make_example("1", {{"source", "<source>"}}, "<target>");
  CHECK(render_demo(t, ex) == "Translate from German to Russian:\nGerman: <source> Russian: <target>");
}

TEST_CASE("sst5 verbalizations in declaration order") {
  const auto v = verbalizations(shipped("sst5"));
  REQUIRE(v.size() == 5);
  const std::vector<std::string> expect = {" terrible", " bad", " okay", " good", " great"};
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(v[i].second == expect[i]);
}

TEST_CASE("generation template has no verbalizations") {
  CHECK_THROWS_AS(verbalizations(shipped("squad")), ConfigError);
}

TEST_CASE("commonsense qa options render per example") {
  const auto t = shipped("cqa");
  const auto ex = make_example("q", {{"question", "Where do fish live?"}, {"A", "river"}, {"B", "desk"},
                                     {"C", "sky"}, {"D", "car"}, {"E", "shoe"}},
                               "A");
  const auto opts = answer_options(t, ex);
  REQUIRE(opts.size() == 5);
  CHECK(opts[0] == std::pair<std::string, std::string>{"A", " river."});
  CHECK(opts[4].second == " shoe.");
  CHECK(render_demo(t, ex) == "Answer the following question: Where do fish live? Answer: river.");
}

TEST_CASE("prefix property holds for every shipped template") {
  std::mt19937_64 rng(5);
  const std::string alphabet = "ab {}\n:.?";
  auto random_text = [&] {
    std::string s;
    for (int i = 0, n = static_cast<int>(rng() % 12); i < n; ++i) s += alphabet[rng() % alphabet.size()];
    return s;
  };
  for (const auto* name : {"sst2", "sst5", "snli", "mnli", "qnli", "trec", "agnews", "cqa", "flores-de-ru", "squad",
                           "samsum"}) {
    const auto t = shipped(name);
    for (int trial = 0; trial < 50; ++trial) {
      Example ex{"x", {}, std::nullopt};
      for (const auto& f : t.referenced_fields()) ex.fields.emplace_back(f, random_text());
      ex.label = t.is_classification() ? t.verbalizer()->at(rng() % t.verbalizer()->size()).first : random_text();
      const auto q = render_query(t, ex);
      CHECK_MESSAGE(q.context + q.answer == render_demo(t, ex), name);
    }
  }
}

TEST_CASE("template validation") {
  CHECK_THROWS_AS(TaskTemplate("A {x} B{answer}", "Q {x}", std::nullopt), ConfigError);
  CHECK_THROWS_AS(TaskTemplate("Q {x} done", "Q {x}", std::nullopt), ConfigError);
  CHECK_THROWS_AS(TaskTemplate("Q {x{answer}", "Q {x", std::nullopt), ConfigError);
  CHECK_THROWS_AS(TaskTemplate("Q {x}{answer}", "Q {x}", Verbalizations{{"a", " a"}, {"a", " b"}}), ConfigError);

  const TaskTemplate braces("{{{x}}}:{answer}", "{{{x}}}:", std::nullopt);
  CHECK(render_demo(braces, make_example("1", {{"x", "v"}}, "y")) == "{v}:y");
}

TEST_CASE("template json round trip") {
  const auto t = shipped("trec");
  const auto back = TaskTemplate::from_json(t.to_json());
  CHECK(back.demo_pattern() == t.demo_pattern());
  CHECK(back.verbalizer() == t.verbalizer());
  CHECK(back.demo_separator() == "\n");
}

TEST_CASE("split loading errors name the line and field") {
  icl::testing::TempDir dir;
  const auto t = shipped("sst2");
  const std::vector<std::string> labels = {"positive", "negative"};
  icl::testing::write_file(dir / "a.jsonl",
                           "{\"id\":\"1\",\"fields\":{\"sentence\":\"ok\"},\"label\":\"positive\"}\n"
                           "{\"id\":\"2\",\"fields\":{\"text\":\"oops\"},\"label\":\"negative\"}\n");
  try {
    load_split(dir / "a.jsonl", t, TaskKind::classification, labels);
    FAIL("expected an error");
  } catch (const DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find(":2:") != std::string::npos);
    CHECK(msg.find("sentence") != std::string::npos);
  }

  icl::testing::write_file(dir / "b.jsonl", "{\"id\":\"1\",\"fields\":{\"sentence\":\"ok\"},\"label\":\"meh\"}\n");
  CHECK_THROWS_AS(load_split(dir / "b.jsonl", t, TaskKind::classification, labels), DataError);

  icl::testing::write_file(dir / "c.jsonl", "{\"id\":\"1\",\"fields\":{\"sentence\":\"ok\"},\"label\":null}\n"
                                            "{\"id\":\"1\",\"fields\":{\"sentence\":\"ok\"},\"label\":null}\n");
  CHECK_THROWS_AS(load_split(dir / "c.jsonl", t, TaskKind::classification, labels), DataError);

  icl::testing::write_file(dir / "d.jsonl", "{not json}\n");
  CHECK_THROWS_AS(load_split(dir / "d.jsonl", t, TaskKind::classification, labels), DataError);
  CHECK_THROWS_AS(load_split(dir / "missing.jsonl", t, TaskKind::classification, labels), DataError);
}

TEST_CASE("split write and load round trip") {
  icl::testing::TempDir dir;
  const std::vector<Example> rows = {make_example("a", {{"sentence", "x \"quoted\""}}, "positive"),
                                     make_example("b", {{"sentence", "ünïcödé"}})};
  write_split(dir / "s.jsonl", rows);
  CHECK(load_split(dir / "s.jsonl", shipped("sst2"), TaskKind::classification, {"positive", "negative"}) == rows);
}

TEST_CASE("sample dataset loads from its descriptor") {
  const auto ds = load_dataset(icl::testing::source_dir() / "data" / "sst2-mini" / "dataset.json");
  CHECK(ds.name == "sst2-mini");
  CHECK(ds.task_kind == TaskKind::classification);
  CHECK(ds.labels == std::vector<std::string>{"positive", "negative"});
  CHECK(ds.train.size() == 24);
  CHECK(ds.test.size() == 8);
  CHECK(ds.default_n_shot == 4);
  REQUIRE(ds.find_train("tr0") != nullptr);
  CHECK(ds.find_train("t0") == nullptr);
}

TEST_CASE("descriptor mismatches are rejected") {
  icl::testing::TempDir dir;
  const auto tmpl = (icl::testing::source_dir() / "templates" / "sst2.json").string();
  icl::testing::write_file(dir / "train.jsonl", "{\"id\":\"1\",\"fields\":{\"sentence\":\"ok\"},\"label\":\"positive\"}\n");
  icl::testing::write_file(dir / "test.jsonl", "{\"id\":\"1\",\"fields\":{\"sentence\":\"ok\"},\"label\":null}\n");
  auto descriptor = [&](const std::string& labels) {
    return "{\"name\":\"d\",\"task_kind\":\"classification\",\"template\":\"" + tmpl + "\",\"labels\":" + labels +
           ",\"splits\":{\"train\":\"train.jsonl\",\"test\":\"test.jsonl\"}}";
  };
  icl::testing::write_file(dir / "wrong_labels.json", descriptor("[\"yes\",\"no\"]"));
  CHECK_THROWS_AS(load_dataset(dir / "wrong_labels.json"), ConfigError);
  // Same id in train and test.
  icl::testing::write_file(dir / "overlap.json", descriptor("[\"positive\",\"negative\"]"));
  CHECK_THROWS_AS(load_dataset(dir / "overlap.json"), DataError);
}

}  // TEST_SUITE
