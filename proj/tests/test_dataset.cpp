#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <string>

#include "oodtk/dataset.hpp"

using namespace oodtk;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name, const std::string& content)
      : path("oodtk_test_" + name) {
    std::ofstream out(path, std::ios::binary);
    out << content;
  }
  ~TempFile() { std::remove(path.c_str()); }
};

const char* kSchemaJson = R"({"features":[
  {"name":"age","kind":"continuous"},
  {"name":"gender","kind":"categorical","levels":["M","V"]}
]})";

}  // namespace

TEST_CASE("load_dataset reads a small CSV against its schema") {
  TempFile schema("ds_schema.json", kSchemaJson);
  TempFile csv("ds_ok.csv", "age,gender\n61,M\n47.5,V\n88,M\n");
  Dataset d = load_dataset(csv.path, schema.path);
  CHECK(d.n_rows() == 3);
  CHECK(d.schema().size() == 2);
  CHECK(d.continuous_value(1, 0) == doctest::Approx(47.5));
  CHECK(d.categorical_level(1, 1) == "V");
  // no id column: 0-based row index
  CHECK(d.row_ids() == std::vector<std::string>{"0", "1", "2"});
}

TEST_CASE("load_dataset uses the id column when present") {
  TempFile schema("ds_schema2.json", kSchemaJson);
  TempFile csv("ds_id.csv", "id,age,gender\np7,61,M\np9,47,V\n");
  Dataset d = load_dataset(csv.path, schema.path);
  CHECK(d.row_ids() == std::vector<std::string>{"p7", "p9"});
}

TEST_CASE("load_dataset names row and column for a bad categorical level") {
  TempFile schema("ds_schema3.json", kSchemaJson);
  TempFile csv("ds_bad_level.csv", "age,gender\n61,M\n47,X\n");
  CHECK_THROWS_WITH_AS(load_dataset(csv.path, schema.path),
                       "dataset: row 2, column gender: level 'X' not in {M,V}", Error);
}

TEST_CASE("load_dataset rejects an empty cell, naming it") {
  TempFile schema("ds_schema4.json", kSchemaJson);
  TempFile csv("ds_missing.csv", "age,gender\n61,M\n,V\n");
  CHECK_THROWS_WITH_AS(load_dataset(csv.path, schema.path),
                       "dataset: row 2, column age: missing value", Error);
}

TEST_CASE("load_dataset rejects unknown, missing and unparsable input") {
  TempFile schema("ds_schema5.json", kSchemaJson);
  SUBCASE("unknown column") {
    TempFile csv("ds_unknown.csv", "age,gender,extra\n61,M,1\n");
    CHECK_THROWS_WITH_AS(load_dataset(csv.path, schema.path),
                         "dataset: unknown column 'extra'", Error);
  }
  SUBCASE("missing column") {
    TempFile csv("ds_missing_col.csv", "age\n61\n");
    CHECK_THROWS_WITH_AS(load_dataset(csv.path, schema.path),
                         "dataset: missing column 'gender'", Error);
  }
  SUBCASE("unparsable float") {
    TempFile csv("ds_nan.csv", "age,gender\nold,M\n");
    CHECK_THROWS_AS(load_dataset(csv.path, schema.path), Error);
  }
}

TEST_CASE("csv parser honors RFC 4180 quoting") {
  auto rows = csv::parse("a,b\n\"x,y\",\"he said \"\"hi\"\"\"\n\"line\nbreak\",z\n");
  REQUIRE(rows.size() == 3);
  CHECK(rows[1][0] == "x,y");
  CHECK(rows[1][1] == "he said \"hi\"");
  CHECK(rows[2][0] == "line\nbreak");
  CHECK(rows[2][1] == "z");
}

TEST_CASE("save_csv / load_dataset round trip preserves values and quoting") {
  std::vector<Feature> feats;
  feats.push_back({"score", FeatureKind::Continuous, {}});
  feats.push_back({"note", FeatureKind::Categorical, {"a,b", "plain"}});
  FeatureSchema schema(feats);
  DatasetBuilder b(schema);
  b.add_row("r,1", {0.125, std::string("a,b")});
  b.add_row("r2", {-3.5, std::string("plain")});
  Dataset d = b.build();

  TempFile schema_file("rt_schema.json", schema.to_json().dump());
  d.save_csv("oodtk_test_rt.csv");
  Dataset d2 = load_dataset("oodtk_test_rt.csv", schema_file.path);
  std::remove("oodtk_test_rt.csv");
  CHECK(d2.row_ids() == d.row_ids());
  CHECK(d2.continuous_value(0, 0) == 0.125);
  CHECK(d2.categorical_level(0, 1) == "a,b");
  CHECK(d2.content_hash() == d.content_hash());
}

TEST_CASE("CRLF line endings are accepted") {
  TempFile schema("crlf_schema.json", kSchemaJson);
  TempFile csv("ds_crlf.csv", "age,gender\r\n61,M\r\n47,V\r\n");
  Dataset d = load_dataset(csv.path, schema.path);
  CHECK(d.n_rows() == 2);
  CHECK(d.categorical_level(1, 1) == "V");
}

TEST_CASE("duplicate row ids are rejected") {
  TempFile schema("dup_schema.json", kSchemaJson);
  TempFile csv("ds_dup.csv", "id,age,gender\nA,61,M\nA,47,V\n");
  CHECK_THROWS_AS(load_dataset(csv.path, schema.path), Error);
}

TEST_CASE("schema validation") {
  SUBCASE("duplicate names") {
    CHECK_THROWS_AS(FeatureSchema({{"x", FeatureKind::Continuous, {}},
                                   {"x", FeatureKind::Continuous, {}}}),
                    Error);
  }
  SUBCASE("categorical needs two distinct levels") {
    CHECK_THROWS_AS(FeatureSchema({{"c", FeatureKind::Categorical, {"only"}}}), Error);
    CHECK_THROWS_AS(FeatureSchema({{"c", FeatureKind::Categorical, {"a", "a"}}}), Error);
  }
  SUBCASE("json round trip") {
    FeatureSchema s({{"age", FeatureKind::Continuous, {}},
                     {"gender", FeatureKind::Categorical, {"M", "V"}}});
    CHECK(FeatureSchema::from_json(s.to_json()) == s);
  }
}
