#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "longtail/core.hpp"
#include "longtail/datagen.hpp"

using namespace longtail;

namespace {

std::filesystem::path tmp_file(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "longtail_core_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Dataset with_counts(const std::vector<std::size_t>& per_class, std::size_t background) {
  Dataset ds;
  ds.num_classes = static_cast<int>(per_class.size());
  ds.dim = 2;
  std::size_t n = 0;
  auto add = [&](int label) {
    Sample s;
    s.id = "x" + std::to_string(n++);
    s.label = label;
    s.features = {static_cast<double>(label), 1.0};
    ds.samples.push_back(std::move(s));
  };
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    for (std::size_t k = 0; k < per_class[c]; ++k) add(static_cast<int>(c) + 1);
  }
  for (std::size_t k = 0; k < background; ++k) add(0);
  return ds;
}

}  // namespace

TEST_CASE("well-formed LTFV1 file loads with header counts") {
  auto p = tmp_file("good.txt");
  write_text(p,
             "LTFV1 2 3 2\n"
             "a train 1 0.5 -1 2\n"
             "b val 0 1 2 3\n");
  const Dataset ds = load_dataset(p.string());
  REQUIRE(ds.num_classes == 2);
  REQUIRE(ds.dim == 3);
  REQUIRE(ds.size() == 2);
  CHECK(ds[0].id == "a");
  CHECK(ds[0].split == Split::train);
  CHECK(ds[0].label == 1);
  CHECK(ds[0].features == std::vector<double>{0.5, -1.0, 2.0});
  CHECK(ds[1].split == Split::val);
  CHECK(ds[1].label == 0);
}

TEST_CASE("dataset round-trips bit-exactly through save and load") {
  Dataset ds;
  ds.num_classes = 3;
  ds.dim = 4;
  const double awkward[] = {1.0 / 3.0, -2.5e-7, 0.1, 1e17, -0.0, 123456.789012345,
                            5e-324, 1.7976931348623157e308};
  const Split splits[] = {Split::pretrain, Split::train, Split::val, Split::test};
  for (int i = 0; i < 8; ++i) {
    Sample s;
    s.id = "s" + std::to_string(i);
    s.split = splits[i % 4];
    s.label = i % 4;
    for (int j = 0; j < 4; ++j) s.features.push_back(awkward[(i + j) % 8] * (j + 1));
    ds.samples.push_back(std::move(s));
  }
  auto p = tmp_file("roundtrip.txt");
  save_dataset(ds, p.string());
  const Dataset back = load_dataset(p.string());
  REQUIRE(back.size() == ds.size());
  REQUIRE(back.num_classes == ds.num_classes);
  REQUIRE(back.dim == ds.dim);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(back[i].id == ds[i].id);
    CHECK(back[i].split == ds[i].split);
    CHECK(back[i].label == ds[i].label);
    CHECK(back[i].features == ds[i].features);  // bit-exact
  }
  auto p2 = tmp_file("roundtrip2.txt");
  save_dataset(back, p2.string());
  CHECK(read_bytes(p) == read_bytes(p2));
}

TEST_CASE("load_dataset reports malformed rows with their line numbers") {
  SECTION("dimension mismatch") {
    auto p = tmp_file("dim.txt");
    write_text(p,
               "LTFV1 2 3 2\n"
               "a train 1 0.5 -1 2\n"
               "b val 0 1 2\n");
    REQUIRE_THROWS_WITH(load_dataset(p.string()), "dimension mismatch, line 3");
  }
  SECTION("label out of range") {
    auto p = tmp_file("label.txt");
    write_text(p,
               "LTFV1 3 1 2\n"
               "a train 0 1\n"
               "b train 1 1\n"
               "c train 5 1\n");
    REQUIRE_THROWS_WITH(load_dataset(p.string()), "label out of range, line 4");
  }
  SECTION("duplicate id") {
    auto p = tmp_file("dup.txt");
    write_text(p,
               "LTFV1 2 1 1\n"
               "a train 1 1\n"
               "a train 0 2\n");
    REQUIRE_THROWS_WITH(load_dataset(p.string()), "duplicate id, line 3");
  }
  SECTION("malformed header") {
    auto p = tmp_file("header.txt");
    write_text(p, "LTFV9 2 1 1\na train 1 1\n");
    REQUIRE_THROWS_WITH(load_dataset(p.string()), "malformed header, line 1");
    write_text(p, "LTFV1 2 1\n");
    REQUIRE_THROWS_WITH(load_dataset(p.string()), "malformed header, line 1");
  }
  SECTION("bad split tag") {
    auto p = tmp_file("split.txt");
    write_text(p, "LTFV1 1 1 1\na holdout 1 1\n");
    REQUIRE_THROWS_AS(load_dataset(p.string()), Error);
  }
  SECTION("sample count mismatch") {
    auto p = tmp_file("count.txt");
    write_text(p, "LTFV1 3 1 1\na train 1 1\nb train 0 1\n");
    REQUIRE_THROWS_AS(load_dataset(p.string()), Error);
  }
  SECTION("missing file") {
    REQUIRE_THROWS_AS(load_dataset("/nonexistent/nowhere.txt"), Error);
  }
}

TEST_CASE("blank lines in the body are tolerated") {
  auto p = tmp_file("blank.txt");
  write_text(p, "LTFV1 2 1 1\na train 1 1\n\nb train 0 2\n\n");
  CHECK(load_dataset(p.string()).size() == 2);
}

TEST_CASE("profile computes exact counts and head_mass") {
  SECTION("two equal classes") {
    const Dataset ds = with_counts({10, 10}, 5);
    const LongTailProfile p = profile(ds);
    CHECK(p.total_positives == 20);
    CHECK(p.head_mass(1) == 0.5);
    CHECK(p.head_mass(2) == 1.0);
  }
  SECTION("worked head_mass example") {
    const Dataset ds = with_counts({100, 50, 10}, 0);
    const LongTailProfile p = profile(ds);
    CHECK(p.sorted_counts == std::vector<std::size_t>{100, 50, 10});
    CHECK(p.head_mass(2) == 0.9375);  // 150/160
    CHECK(p.per_class_count.at(1) == 100);
    CHECK(p.per_class_count.at(3) == 10);
  }
  SECTION("counts sum to the positive total; k beyond C saturates") {
    const Dataset ds = with_counts({7, 3, 2, 1}, 9);
    const LongTailProfile p = profile(ds);
    std::size_t sum = 0;
    for (const auto& [cls, cnt] : p.per_class_count) sum += cnt;
    CHECK(sum == p.total_positives);
    CHECK(p.head_mass(99) == 1.0);
  }
  SECTION("background-only dataset profiles to zero") {
    const Dataset ds = with_counts({}, 12);
    const LongTailProfile p = profile(ds);
    CHECK(p.total_positives == 0);
    CHECK(p.head_mass(1) == 0.0);
  }
}

TEST_CASE("index selections partition the dataset") {
  GenConfig g;
  g.num_classes = 6;
  g.dim = 4;
  g.n_total = 200;
  g.groups = 2;
  g.seed = 11;
  const Dataset ds = generate_synthetic(g).dataset;

  const IndexList all = all_indices(ds);
  REQUIRE(all.size() == ds.size());

  std::size_t covered = 0;
  for (Split s : {Split::pretrain, Split::train, Split::val, Split::test}) {
    const IndexList idx = split_indices(ds, s);
    covered += idx.size();
    for (auto i : idx) CHECK(ds[i].split == s);
    const IndexList pos = positive_indices(ds, idx);
    const IndexList neg = negative_indices(ds, idx);
    CHECK(pos.size() + neg.size() == idx.size());
    for (auto i : pos) CHECK(ds[i].label > 0);
    for (auto i : neg) CHECK(ds[i].label == 0);
  }
  CHECK(covered == ds.size());

  const auto counts = class_counts(ds, all);
  const LongTailProfile p = profile(ds);
  CHECK(counts == p.per_class_count);
}

TEST_CASE("validate_dataset rejects broken invariants") {
  Dataset ds = with_counts({2, 2}, 1);
  SECTION("ragged feature row") {
    ds.samples[1].features.push_back(3.0);
    REQUIRE_THROWS_WITH(validate_dataset(ds), "dimension mismatch for sample x1");
  }
  SECTION("label above C") {
    ds.samples[0].label = 9;
    REQUIRE_THROWS_WITH(validate_dataset(ds), "label out of range for sample x0");
  }
  SECTION("duplicate id") {
    ds.samples[2].id = ds.samples[0].id;
    REQUIRE_THROWS_AS(validate_dataset(ds), Error);
  }
}
