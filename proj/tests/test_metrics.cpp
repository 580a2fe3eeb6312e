#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>

#include "condseq/errors.hpp"
#include "condseq/metrics.hpp"
#include "condseq/rng.hpp"
#include "helpers.hpp"
#include "metric_oracles.hpp"

using namespace condseq;
namespace fs = std::filesystem;

namespace {

Embedding e1(const std::string& s) { return spectrum_embed(encode_sequence(s), 1).vector; }

}  // namespace

TEST_CASE("spectrum embedding") {
  auto aa = spectrum_embed(encode_sequence("AAAA"), 2);
  CHECK(aa.vector.size() == 400);
  CHECK(aa.vector[0] == 1.0);
  CHECK(std::accumulate(aa.vector.begin(), aa.vector.end(), 0.0) == 1.0);

  const auto ac = e1("AC");
  const auto A = encode_sequence("A")[0], C = encode_sequence("C")[0];
  CHECK(ac[A] == 0.5);
  CHECK(ac[C] == 0.5);

  Rng rng(5);
  for (int rep = 0; rep < 20; ++rep) {
    const auto s = testutil::random_sequence(rng, 300);
    const auto e = spectrum_embed(s, 3);
    CHECK(e.vector.size() == 8000);
    CHECK(std::abs(std::accumulate(e.vector.begin(), e.vector.end(), 0.0) - 1.0) < 1e-9);
    CHECK(e.vector == oracle::spectrum(decode_sequence(s), 3));
  }
  CHECK_THROWS_AS(spectrum_embed(encode_sequence("AC"), 3), SequenceTooShort);
  CHECK_THROWS_AS(spectrum_embed(Sequence::all_mask(5), 2), InvalidSequence);
}

TEST_CASE("linear mmd") {
  CHECK(mmd_linear({e1("AA")}, {e1("AC")}) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-9));
  CHECK(std::abs(mmd_linear({e1("AA")}, {e1("AC")}) - 0.70711) < 1e-5);
  Rng rng(1);
  for (int rep = 0; rep < 20; ++rep) {
    const auto S = oracle::random_set(rng, 1 + rep % 5, 6);
    const auto P = oracle::random_set(rng, 1 + rep % 3, 6);
    CHECK(mmd_linear(S, S) == 0.0);
    CHECK(mmd_linear(S, P) == doctest::Approx(mmd_linear(P, S)).epsilon(1e-12));
    CHECK(std::abs(mmd_linear(S, P) - oracle::mmd_linear(S, P)) <= 1e-9);
  }
  CHECK_THROWS_AS(mmd_linear({}, {e1("AA")}), EmptySet);
}

TEST_CASE("gaussian mmd") {
  Rng rng(2);
  const auto S = oracle::random_set(rng, 50, 8);
  const auto P = oracle::random_set(rng, 50, 8);
  CHECK(std::abs(mmd_gaussian(S, S)) <= 1e-12);
  CHECK(std::abs(mmd_gaussian(S, P) - oracle::mmd_gaussian(S, P)) <= 1e-9);
  CHECK(std::abs(mmd_gaussian(S, P) - mmd_gaussian(P, S)) <= 1e-12);

  // Two well-separated one-dimensional clusters.
  std::vector<Embedding> lo, hi;
  for (int i = 0; i < 20; ++i) {
    lo.push_back({rng.uniform(-0.1, 0.1)});
    hi.push_back({10.0 + rng.uniform(-0.1, 0.1)});
  }
  auto mixed = lo;
  mixed.insert(mixed.end(), hi.begin(), hi.end());
  CHECK(mmd_gaussian(mixed, mixed) <= 1e-12);
  CHECK(mmd_gaussian(lo, hi) > 0.5);

  CHECK(median_bandwidth({{0.0}, {1.0}}, {{3.0}}) == 2.0);
  CHECK(median_bandwidth({{0.0}, {1.0}}, {{3.0}, {7.0}}) == 3.5);
  CHECK_THROWS_AS(mmd_gaussian({{1.0}}, {{1.0}, {1.0}}), DegenerateBandwidth);
  CHECK_THROWS_AS(mmd_gaussian({}, {{1.0}}), EmptySet);
}

TEST_CASE("mean reciprocal rank") {
  std::map<std::string, std::vector<Embedding>> S{{"a", {e1("AAAA")}}, {"b", {e1("CCCC")}}, {"c", {e1("DDDD")}}};
  CHECK(mrr(S, S) == 1.0);
  std::map<std::string, std::vector<Embedding>> swapped{{"a", {e1("CCCC")}}, {"b", {e1("AAAA")}}};
  std::map<std::string, std::vector<Embedding>> two{{"a", {e1("AAAA")}}, {"b", {e1("CCCC")}}};
  CHECK(mrr(two, swapped) == 0.5);

  auto other = S;
  other.erase("c");
  other["d"] = {e1("EEEE")};
  CHECK_THROWS_AS(mrr(S, other), ClassMismatch);

  Rng rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    std::map<std::string, std::vector<Embedding>> G, R;
    for (int c = 0; c < 4; ++c) {
      G[std::to_string(c)] = oracle::random_set(rng, 3, 5);
      R[std::to_string(c)] = oracle::random_set(rng, 3, 5);
    }
    const double m = mrr(G, R);
    CHECK(m >= 0.25);
    CHECK(m <= 1.0);
    CHECK(std::abs(m - oracle::mrr(G, R)) <= 1e-12);
  }
}

TEST_CASE("multilabel metrics") {
  LabeledPredictions perfect;
  perfect.confidences = {{{"x", 0.9}, {"y", 0.1}}, {{"y", 0.8}}, {{"x", 0.7}, {"y", 0.6}}};
  perfect.truth = {{"x"}, {"y"}, {"x", "y"}};
  auto r = multilabel_metrics(perfect, 0.5);
  CHECK(r.micro_f1 == 1.0);
  CHECK(r.macro_f1 == 1.0);
  CHECK(r.macro_aupr == 1.0);
  REQUIRE(r.macro_auc);
  CHECK(*r.macro_auc == 1.0);

  // Each class: TP = 1, FP = 1, FN = 1.
  LabeledPredictions hand;
  hand.confidences = {{{"x", 0.9}}, {{"x", 0.9}}, {}, {{"y", 0.9}}, {{"y", 0.9}}, {}};
  hand.truth = {{"x"}, {}, {"x"}, {"y"}, {}, {"y"}};
  r = multilabel_metrics(hand, 0.5);
  CHECK(r.micro_f1 == doctest::Approx(0.5));
  CHECK(r.macro_f1 == doctest::Approx(0.5));

  // Class z has no positives and is excluded from macro averages.
  hand.confidences[2]["z"] = 0.9;
  r = multilabel_metrics(hand, 0.5);
  CHECK(r.macro_f1 == doctest::Approx(0.5));
  CHECK(r.classes_with_positives == 2);
  CHECK(r.per_class_f1.count("z") == 0);

  LabeledPredictions none;
  none.confidences = {{{"x", 0.4}}};
  none.truth = {{}};
  CHECK_THROWS_AS(multilabel_metrics(none, 0.5), NoPositives);
  none.confidences = {{{"x", 1.4}}};
  none.truth = {{"x"}};
  CHECK_THROWS_AS(multilabel_metrics(none, 0.5), InvalidPredictions);

  Rng rng(4);
  LabeledPredictions null;
  for (int i = 0; i < 1000; ++i) {
    null.confidences.push_back({{"c", rng.uniform()}});
    null.truth.push_back(rng.uniform() < 0.5 ? std::set<std::string>{"c"} : std::set<std::string>{});
  }
  CHECK(std::abs(*multilabel_metrics(null, 0.5).macro_auc - 0.5) <= 0.05);

  for (int rep = 0; rep < 30; ++rep) {
    const auto p = oracle::random_predictions(rng, 12, 4, rep % 2 == 0);
    bool any_pos = false;
    for (const auto& t : p.truth) any_pos |= !t.empty();
    if (!any_pos) continue;
    const auto got = multilabel_metrics(p, 0.3);
    const auto want = oracle::multilabel(p, 0.3);
    CHECK(std::abs(got.micro_f1 - want.micro_f1) <= 1e-9);
    CHECK(std::abs(got.macro_f1 - want.macro_f1) <= 1e-9);
    CHECK(std::abs(got.macro_aupr - want.macro_aupr) <= 1e-9);
    CHECK(got.macro_auc.has_value() == want.macro_auc.has_value());
    if (got.macro_auc && want.macro_auc) CHECK(std::abs(*got.macro_auc - *want.macro_auc) <= 1e-9);
  }
}

TEST_CASE("f max") {
  LabeledPredictions one;
  one.confidences = {{{"g1", 0.9}, {"g2", 0.2}}};
  one.truth = {{"g1"}};
  CHECK(f_max(one) == 1.0);

  LabeledPredictions low;
  low.confidences = {{{"g1", 0.05}}, {{"g2", 0.09}}};
  low.truth = {{"g1"}, {"g2"}};
  CHECK(f_max(low) == 0.0);

  LabeledPredictions empty_row;
  empty_row.confidences = {{}, {{"g1", 0.9}}};
  empty_row.truth = {{}, {"g1"}};
  CHECK(f_max(empty_row) == 1.0);

  Rng rng(6);
  for (int rep = 0; rep < 30; ++rep) {
    const auto p = oracle::random_predictions(rng, 10, 5, rep % 3 == 0);
    CHECK(std::abs(f_max(p) - oracle::f_max(p)) <= 1e-12);
  }
}

TEST_CASE("amino acid recovery") {
  const auto a = encode_sequence("AAAA");
  CHECK(aar(a, a) == 1.0);
  CHECK(aar(a, encode_sequence("AACC")) == 0.5);
  CHECK_THROWS_AS(aar(a, encode_sequence("AAA")), LengthMismatch);
  Rng rng(7);
  for (int rep = 0; rep < 30; ++rep) {
    const auto x = testutil::random_sequence(rng, 25), y = testutil::random_sequence(rng, 25);
    CHECK(aar(x, y) == aar(y, x));
    CHECK(aar(x, y) == oracle::aar(decode_sequence(x), decode_sequence(y)));
  }
}

TEST_CASE("n-gram repeats") {
  CHECK(ngram_repeats(encode_sequence("ACAC"), 2) == 1);
  CHECK(ngram_repeats(encode_sequence("AAAA"), 2) == 1);
  CHECK(ngram_repeats(encode_sequence("ACDEFGHIK"), 2) == 0);
  CHECK(ngram_repeats(encode_sequence("A"), 3) == 0);
  CHECK(ngram_repeats(std::vector<Sequence>{encode_sequence("ACAC"), encode_sequence("AAAA")}, 2) == 2);
  CHECK(ngram_repeats_mean({encode_sequence("ACAC"), encode_sequence("AAAA"), encode_sequence("ACD")}, 2) ==
        doctest::Approx(2.0 / 3));
  CHECK_THROWS_AS(ngram_repeats(encode_sequence("ACAC"), 1), InvalidConfig);
  Rng rng(8);
  for (int rep = 0; rep < 30; ++rep) {
    // Small alphabet so repeats are common.
    std::string s;
    for (int i = 0; i < 30; ++i) s.push_back("ACD"[rng.uniform_int(3)]);
    for (std::size_t n = 2; n <= 4; ++n) CHECK(ngram_repeats(encode_sequence(s), n) == oracle::ngram_repeats(s, n));
  }
}

TEST_CASE("global alignment identity") {
  const auto a = encode_sequence("ACDEFG");
  const auto al = align_global(a, a);
  CHECK(al.score == 6);
  CHECK(al.identity() == 1.0);
  const auto gap = align_global(encode_sequence("ACDE"), encode_sequence("ACE"));
  CHECK(gap.score == 2);
  CHECK(gap.length == 4);
  CHECK(gap.matches == 3);
  CHECK(gap.b == "AC-E");

  Rng rng(9);
  for (int rep = 0; rep < 50; ++rep) {
    std::string x, y;
    const auto lx = 1 + rng.uniform_int(15), ly = 1 + rng.uniform_int(15);
    for (std::size_t i = 0; i < lx; ++i) x.push_back("ACDE"[rng.uniform_int(4)]);
    for (std::size_t i = 0; i < ly; ++i) y.push_back("ACDE"[rng.uniform_int(4)]);
    const auto got = align_global(encode_sequence(x), encode_sequence(y));
    const auto want = oracle::align(x, y);
    CHECK(got.score == want.score);
    CHECK(got.matches == want.matches);
    CHECK(got.length == want.length);
    CHECK(got.a == want.a);
    CHECK(got.b == want.b);
  }
}

TEST_CASE("novelty and diversity") {
  Rng rng(10);
  std::vector<Sequence> train;
  for (int i = 0; i < 5; ++i) train.push_back(testutil::random_sequence(rng, 20));
  const auto g = testutil::random_sequence(rng, 20);
  auto r = novelty_diversity({g, g, g}, train);
  CHECK(r.diversity == 0.0);
  for (double v : r.novelty) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  train.push_back(g);
  r = novelty_diversity({g}, train);
  CHECK(r.novelty[0] == 0.0);
  CHECK(r.diversity == 0.0);
  CHECK_THROWS_AS(novelty_diversity({}, train), EmptySet);
}

TEST_CASE("embedding export") {
  const auto dir = fs::temp_directory_path() / "condseq_metrics_export";
  fs::remove_all(dir);
  fs::create_directories(dir);
  Rng rng(11);
  std::vector<LabeledSequence> seqs;
  for (int i = 0; i < 3; ++i) seqs.push_back({"s" + std::to_string(i), "cls" + std::to_string(i % 2), testutil::random_sequence(rng, 40)});
  export_embeddings(seqs, 2, dir / "e.csv");
  std::ifstream in(dir / "e.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line.rfind("id,label,v_0,v_1,", 0) == 0);
  CHECK(line.substr(line.rfind(',') + 1) == "v_399");
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string id, label, cell;
    std::getline(ss, id, ',');
    std::getline(ss, label, ',');
    CHECK(id == seqs[rows].id);
    CHECK(label == seqs[rows].label);
    const auto want = spectrum_embed(seqs[rows].sequence, 2).vector;
    std::size_t col = 0;
    while (std::getline(ss, cell, ',')) {
      CHECK(std::abs(std::stod(cell) - want[col]) <= 1e-6);
      ++col;
    }
    CHECK(col == 400);
    ++rows;
  }
  CHECK(rows == 3);

  export_embeddings({}, 1, dir / "empty.csv");
  std::ifstream empty(dir / "empty.csv");
  std::size_t lines = 0;
  while (std::getline(empty, line)) ++lines;
  CHECK(lines == 1);
  fs::remove_all(dir);
}

TEST_CASE("metric report") {
  MetricReport r;
  r.set("mmd", 0.123456789);
  r.tables["per_class"] = {{"x", 1.0 / 3.0}};
  CHECK_THROWS_AS(r.set("bad", std::nan("")), InvalidDistribution);
  const auto j = r.to_json();
  CHECK(j["values"]["mmd"].get<double>() == 0.123457);
  CHECK(j["tables"]["per_class"]["x"].get<double>() == 0.333333);
  CHECK(j.dump().find("0.123457") != std::string::npos);
}
