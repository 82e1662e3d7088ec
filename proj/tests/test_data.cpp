#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "bayeswork/csv.hpp"
#include "bayeswork/data.hpp"

using namespace bayeswork;
using Catch::Approx;

namespace {

const char* kHeader = "project,language,commits,insertions,age,devs,bugs\n";

std::vector<RawRecord> parse(const std::string& text) {
  std::istringstream in(text);
  return parse_csv(in);
}

std::string error_of(const std::string& text) {
  try {
    parse(text);
  } catch (const DataError& e) {
    return e.what();
  }
  return {};
}

RawRecord record(std::string project, std::string language, std::int64_t commits = 100,
                 std::int64_t bugs = 10) {
  RawRecord r;
  r.project = std::move(project);
  r.language = std::move(language);
  r.commits = commits;
  r.insertions = 5000;
  r.age = 365;
  r.devs = 4;
  r.bugs = bugs;
  return r;
}

}  // namespace

TEST_CASE("csv reader handles quoting", "[data][csv]") {
  std::istringstream in("a,\"b,c\",\"say \"\"hi\"\"\"\r\n\"multi\nline\",x,\n");
  csv::Reader reader(in);
  auto first = reader.next();
  REQUIRE(first);
  CHECK(first->fields == std::vector<std::string>{"a", "b,c", "say \"hi\""});
  CHECK(first->line == 1);
  auto second = reader.next();
  REQUIRE(second);
  CHECK(second->fields == std::vector<std::string>{"multi\nline", "x", ""});
  CHECK(second->line == 2);
  CHECK_FALSE(reader.next());

  std::istringstream bad("a,\"open\n");
  csv::Reader bad_reader(bad);
  CHECK_THROWS(bad_reader.next());
}

TEST_CASE("csv writer escapes and doubles round-trip", "[data][csv]") {
  CHECK(csv::escape("plain") == "plain");
  CHECK(csv::escape("a,b") == "\"a,b\"");
  CHECK(csv::escape("q\"") == "\"q\"\"\"");
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 170.0}) {
    CHECK(std::strtod(csv::format_double(v).c_str(), nullptr) == v);
  }
  CHECK(csv::format_double(0.1) == "0.1");
}

TEST_CASE("parse a single row", "[data][parse]") {
  const auto rows = parse(std::string(kHeader) + "p1,C,100,5000,365,4,10\n");
  REQUIRE(rows.size() == 1);
  CHECK(rows[0] == record("p1", "C"));
}

TEST_CASE("columns may come in any order and labels may be quoted", "[data][parse]") {
  const auto rows = parse(
      "bugs,devs,age,insertions,commits,language,project\n"
      "10,4,365,5000,100,\"C++\",\"acme, inc/tool\"\n\n");
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].language == "C++");
  CHECK(rows[0].project == "acme, inc/tool");
  CHECK(rows[0].bugs == 10);
}

TEST_CASE("byte order mark is ignored", "[data][parse]") {
  const auto rows = parse(std::string("\xEF\xBB\xBF") + kHeader + "p1,C,100,5000,365,4,10\n");
  CHECK(rows.size() == 1);
}

TEST_CASE("malformed input is reported with its line", "[data][parse][errors]") {
  const std::string h = kHeader;
  CHECK(error_of(h + "p1,C,100,5000,365,4,10\np2,C,5,5000,365,4,10\n") ==
        "bugs exceed commits at line 3");
  CHECK(error_of("project,language,commits,insertions,age,devs\n") ==
        "missing column bugs at line 1");
  CHECK(error_of(h + "p1,C,abc,5000,365,4,10\n").find("line 2") != std::string::npos);
  CHECK(error_of(h + "p1,C,100,-5,365,4,10\n").find("line 2") != std::string::npos);
  CHECK(error_of(h + "p1,C,100,5000,365,4\n").find("expected 7 fields") != std::string::npos);
  CHECK(error_of(h + "p1,C,100,5000,1e400,4,10\n").find("line 2") != std::string::npos);
  CHECK(error_of(h + ",C,100,5000,365,4,10\n").find("empty project") != std::string::npos);
  CHECK(error_of("").find("empty") != std::string::npos);
  CHECK(error_of(h + "extra,project,language,commits,insertions,age,devs,bugs\n") != "");
}

TEST_CASE("log transform", "[data][prepare]") {
  CHECK(log_transform(1.0, ZeroPolicy::Strict, "commits", 1) == 0.0);
  CHECK(log_transform(7.389, ZeroPolicy::Strict, "commits", 1) == Approx(2.0).margin(1e-4));
  CHECK_THROWS_AS(log_transform(0.0, ZeroPolicy::Strict, "devs", 3), DataError);
  CHECK(log_transform(0.0, ZeroPolicy::Offset, "devs", 3) == std::log(0.5));

  std::vector<RawRecord> recs = {record("p", "C")};
  recs[0].devs = 0;
  CHECK_THROWS_AS(prepare(recs), DataError);
  const Dataset ds = prepare(recs, {ZeroPolicy::Offset, false});
  CHECK(ds.rows[0].x[3] == std::log(0.5));
  CHECK(ds.rows[0].x[0] == std::log(100.5));
  CHECK(ds.transform(3, 0.0) == std::log(0.5));
}

TEST_CASE("indices follow first appearance", "[data][prepare]") {
  const Dataset ds = prepare({record("a", "Go"), record("b", "C"), record("a", "C"), record("c", "Go")});
  CHECK(ds.language_names == std::vector<std::string>{"Go", "C"});
  CHECK(ds.project_names == std::vector<std::string>{"a", "b", "c"});
  CHECK(ds.rows[2].project_index == 0);
  CHECK(ds.rows[2].language_index == 1);
  CHECK(ds.language_index("C") == 1);
  CHECK_THROWS_AS(ds.language_index("Rust"), DataError);
  CHECK_THROWS_AS(prepare({record("a", "Go"), record("a", "Go")}), DataError);
  CHECK_THROWS_AS(prepare({}), DataError);
}

TEST_CASE("centering records the shift", "[data][prepare]") {
  auto a = record("a", "C", 10);
  auto b = record("b", "C", 1000);
  b.bugs = 1;
  const Dataset ds = prepare({a, b}, {ZeroPolicy::Strict, true});
  CHECK(ds.shift[0] == Approx(std::log(100.0)).epsilon(1e-14));
  CHECK(ds.rows[0].x[0] == Approx(-std::log(10.0)).epsilon(1e-14));
  CHECK(ds.transform(0, 100.0) == Approx(0.0).margin(1e-14));
  // summaries report the uncentered scale
  const DataSummary s = summarize(ds);
  CHECK(s.predictor_quantiles[0][0] == Approx(std::log(10.0)).epsilon(1e-14));
}

TEST_CASE("summary statistics", "[data][summary]") {
  SECTION("constant outcome") {
    const Dataset ds = prepare({record("a", "C", 100, 2), record("b", "C", 100, 2), record("c", "C", 100, 2)});
    const DataSummary s = summarize(ds);
    CHECK(s.bug_mean == 2.0);
    CHECK(s.bug_variance == 0.0);
    CHECK(s.n_rows == 3);
    CHECK(s.rows_per_language == std::vector<std::size_t>{3});
    CHECK(s.fraction_single_row_projects() == 1.0);
  }
  SECTION("sample variance uses n - 1") {
    const Dataset ds = prepare({record("a", "C", 100, 1), record("b", "C", 100, 2), record("c", "D", 100, 6)});
    const DataSummary s = summarize(ds);
    CHECK(s.bug_mean == 3.0);
    CHECK(s.bug_variance == Approx(7.0).epsilon(1e-14));
    CHECK(s.n_languages == 2);
  }
  SECTION("row counts per project") {
    const Dataset ds = prepare({record("a", "C"), record("a", "D"), record("b", "C"), record("c", "C")});
    const DataSummary s = summarize(ds);
    CHECK(s.projects_by_row_count.at(1) == 2);
    CHECK(s.projects_by_row_count.at(2) == 1);
    CHECK(s.fraction_single_row_projects() == Approx(2.0 / 3.0));
  }
}

TEST_CASE("linear-interpolation quantiles", "[data][summary]") {
  CHECK(quantile(std::vector<double>{1, 2, 3, 4}, 0.75) == Approx(3.25).epsilon(1e-15));
  CHECK(quantile(std::vector<double>{4, 0, 2, 3, 1}, 0.5) == 2.0);
  CHECK(quantile(std::vector<double>{5}, 0.3) == 5.0);
  CHECK_THROWS(quantile(std::vector<double>{}, 0.5));
  CHECK_THROWS(quantile(std::vector<double>{1}, 1.5));
}

TEST_CASE("summary does not depend on row order", "[data][summary][property]") {
  std::vector<RawRecord> recs;
  std::mt19937_64 gen(4);
  for (int i = 0; i < 60; ++i) {
    auto r = record("p" + std::to_string(i % 23), "L" + std::to_string(i % 7),
                    10 + static_cast<std::int64_t>(gen() % 1000), 0);
    r.bugs = static_cast<std::int64_t>(gen() % 10);
    r.insertions = 1 + static_cast<std::int64_t>(gen() % 100000);
    r.age = 1.0 + static_cast<double>(gen() % 3000);
    recs.push_back(r);
  }
  const DataSummary base = summarize(prepare(recs));
  for (int trial = 0; trial < 5; ++trial) {
    std::shuffle(recs.begin(), recs.end(), gen);
    const DataSummary s = summarize(prepare(recs));
    CHECK(s.bug_mean == Approx(base.bug_mean).epsilon(1e-14));
    CHECK(s.bug_variance == Approx(base.bug_variance).epsilon(1e-12));
    CHECK(s.predictor_quantiles == base.predictor_quantiles);
    CHECK(s.projects_by_row_count == base.projects_by_row_count);
  }
}

TEST_CASE("quantile scenarios invert the transform", "[data][scenario]") {
  std::vector<RawRecord> recs;
  for (int i = 1; i <= 9; ++i) {
    auto r = record("p" + std::to_string(i), "C", 10 * i, 1);
    r.devs = i;
    recs.push_back(r);
  }
  for (ZeroPolicy policy : {ZeroPolicy::Strict, ZeroPolicy::Offset}) {
    const Dataset ds = prepare(recs, {policy, true});
    const DataSummary s = summarize(ds);
    const Scenario mid = quantile_scenario(s, 0.5);
    const auto x = mid.log_predictors(ds);
    CHECK(x[0] + ds.shift[0] == Approx(s.predictor_quantiles[0][2]).epsilon(1e-12));
    CHECK(x[3] + ds.shift[3] == Approx(s.predictor_quantiles[3][2]).epsilon(1e-12));
  }
  const DataSummary s = summarize(prepare(recs));
  CHECK(quantile_scenario(s, 0.0).commits == Approx(10.0).epsilon(1e-12));
  CHECK(quantile_scenario(s, 1.0).commits == Approx(90.0).epsilon(1e-12));
  CHECK_THROWS_AS(quantile_scenario(s, 1.2), std::invalid_argument);

  Scenario bad;
  bad.devs = 0.0;
  CHECK_THROWS_AS(bad.validate(), DataError);
}
