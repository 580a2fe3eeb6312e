#include <doctest.h>

#include <cmath>

#include "condseq/generation.hpp"
#include "helpers.hpp"

using namespace condseq;

namespace {

DenoiserParams<float> untrained(std::uint64_t seed = 1) {
  Rng rng(seed);
  auto c = testutil::tiny_config(16);
  c.max_len = 64;
  auto p = init_params(c, rng);
  // Random heads so the untrained model has non-trivial preferences.
  for (auto& t : p.tensors)
    if (t.name.rfind("head.", 0) == 0)
      for (auto& v : t.data) v = static_cast<float>(rng.uniform(-1, 1));
  return p;
}

SampleConfig small_cfg(std::size_t L = 20, std::size_t steps = 10) {
  SampleConfig c;
  c.length = L;
  c.steps = steps;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("sample config json") {
  auto c = small_cfg();
  c.motif_mode = MotifMode::Dynamic;
  CHECK(SampleConfig::from_json(c.to_json()).to_json() == c.to_json());
  auto j = c.to_json();
  j["beam"] = 4;
  CHECK_THROWS_AS(SampleConfig::from_json(j), InvalidConfig);
  c.steps = 0;
  CHECK_THROWS_AS(c.validate(), InvalidConfig);
  c = small_cfg();
  c.temperature = 0;
  CHECK_THROWS_AS(c.validate(), InvalidConfig);
}

TEST_CASE("unmask targets follow the schedule") {
  const auto s = make_schedule(50);
  CHECK(unmask_target(s, 10, 10, 40) == 40);
  CHECK(unmask_target(s, 10, 5, 40) == 20);
  CHECK(unmask_target(s, 10, 1, 40) == 4);
  std::size_t prev = 0;
  for (std::size_t k = 1; k <= 100; ++k) {
    const auto t = unmask_target(s, 100, k, 37);
    CHECK(t >= prev);
    prev = t;
  }
  // Linear schedule: target after step s is round(L * s / S).
  for (std::size_t k = 1; k <= 7; ++k) CHECK(unmask_target(s, 7, k, 30) == static_cast<std::size_t>(std::llround(30.0 * k / 7)));
}

TEST_CASE("one-step greedy sampling is the per-position argmax") {
  const auto p = untrained();
  const auto sched = make_schedule(50);
  auto cfg = small_cfg(15, 1);
  cfg.gumbel = false;
  const auto out = sample({}, p, sched, cfg);
  const auto logits = forward(Sequence::all_mask(15), {}, p);
  for (std::size_t i = 0; i < 15; ++i) {
    Eigen::Index best;
    logits.row(static_cast<Eigen::Index>(i)).leftCols(kNumResidues).maxCoeff(&best);
    CHECK(out[i] == best);
  }
}

TEST_CASE("sampling contract") {
  const auto p = untrained();
  const auto sched = make_schedule(50);
  const auto cfg = small_cfg(24, 8);

  std::vector<std::size_t> counts;
  Sequence prev = Sequence::all_mask(24);
  const auto out = sample_scored({}, p, sched, cfg, [&](std::size_t s, const Sequence& x) {
    counts.push_back(x.size() - x.mask_count());
    CHECK(x.size() - x.mask_count() == unmask_target(sched, 8, s, 24));
    for (std::size_t i = 0; i < x.size(); ++i)
      if (prev[i] != kMaskId) CHECK(x[i] == prev[i]);
    prev = x;
  });
  CHECK(counts.size() == 8);
  CHECK(out.sequence.size() == 24);
  CHECK_FALSE(out.sequence.has_mask());
  CHECK(out.model_confidence < 0.0);

  CHECK(sample({}, p, sched, cfg) == out.sequence);
  ConditionBundle explicit_none{std::nullopt, std::nullopt, std::nullopt};
  CHECK(sample(explicit_none, p, sched, cfg) == out.sequence);
  auto other = cfg;
  other.seed = 4;
  CHECK_FALSE(sample({}, p, sched, other) == out.sequence);

  auto ranged = cfg;
  ranged.length = 0;
  ranged.min_length = 10;
  ranged.max_length = 30;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    ranged.seed = seed;
    const auto s = sample({}, p, sched, ranged);
    CHECK(s.size() >= 10);
    CHECK(s.size() <= 30);
  }
}

TEST_CASE("more steps than the schedule resolution interpolate") {
  const auto p = untrained();
  const auto sched = make_schedule(5);
  const auto out = sample({}, p, sched, small_cfg(12, 40));
  CHECK_FALSE(out.has_mask());
}

TEST_CASE("exact posterior sampling fully reveals the chain") {
  const auto p = untrained();
  const auto sched = make_schedule(20);
  auto cfg = small_cfg(16, 20);
  cfg.exact_posterior = true;
  std::size_t prev_unmasked = 0;
  const auto out = sample_scored({}, p, sched, cfg, [&](std::size_t, const Sequence& x) {
    CHECK(x.size() - x.mask_count() >= prev_unmasked);
    prev_unmasked = x.size() - x.mask_count();
  });
  CHECK_FALSE(out.sequence.has_mask());
  CHECK(sample({}, p, sched, cfg) == out.sequence);
}

TEST_CASE("fixed motifs are never overwritten; dynamic motifs are not enforced") {
  const auto p = untrained();
  const auto sched = make_schedule(50);
  const auto motif = parse_motif("3-8:WWWWW,12-14:CC");
  auto cfg = small_cfg(20, 10);
  cfg.motif_mode = MotifMode::Fixed;
  ConditionBundle b;
  b.motif = motif;
  sample_scored(b, p, sched, cfg, [&](std::size_t, const Sequence& x) {
    for (const auto& span : motif.spans())
      for (std::size_t i = span.start; i < span.end; ++i) CHECK(x[i] == span.residues[i - span.start]);
  });
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    cfg.seed = seed;
    const auto out = inpaint(motif, {}, p, sched, cfg);
    CHECK(decode_sequence(out).substr(3, 5) == "WWWWW");
    CHECK(decode_sequence(out).substr(12, 2) == "CC");
  }

  cfg.motif_mode = MotifMode::Dynamic;
  std::size_t mismatches = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    cfg.seed = seed;
    const auto out = decode_sequence(inpaint(motif, {}, p, sched, cfg));
    mismatches += out.substr(3, 5) != "WWWWW";
  }
  CHECK(mismatches > 0);

  cfg.length = 10;
  CHECK_THROWS_AS(inpaint(motif, {}, p, sched, cfg), SpanOutOfRange);
}

TEST_CASE("inverse folding") {
  const auto p = untrained();
  const auto sched = make_schedule(50);
  const auto structure = testutil::ideal_chain(18);
  const auto cfg = small_cfg(0, 9);
  const auto out = inverse_fold(structure, {}, p, sched, cfg);
  CHECK(out.size() == 18);
  // Zero cross-attention output at init: structure changes nothing.
  auto plain = cfg;
  plain.length = 18;
  CHECK(out == sample({}, p, sched, plain));
  CHECK_THROWS_AS(inverse_fold(testutil::ideal_chain(2), {}, p, sched, cfg), StructureTooShort);
  auto wrong = cfg;
  wrong.length = 17;
  ConditionBundle b;
  b.structure = structure;
  CHECK_THROWS_AS(sample(b, p, sched, wrong), LengthMismatch);
}

TEST_CASE("reranking") {
  const auto p = untrained();
  const auto sched = make_schedule(50);
  auto cfg = small_cfg(16, 8);

  cfg.n_candidates = 1;
  const auto single = generate_reranked({}, p, sched, cfg, [](const Sequence&, const AnnotationSet&) { return -1e9; });
  CHECK(single.sequence == sample({}, p, sched, cfg));
  CHECK(single.func_score == -1e9);

  cfg.n_candidates = 6;
  std::vector<ScoredCandidate> all;
  const auto best =
      generate_reranked({}, p, sched, cfg, [](const Sequence&, const AnnotationSet&) { return 0.5; }, &all);
  REQUIRE(all.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) CHECK(all[i].seed == cfg.seed + i);
  for (const auto& c : all) CHECK(best.model_confidence >= c.model_confidence);

  // A scorer that dominates confidence picks its own favourite.
  auto count_w = [](const Sequence& s, const AnnotationSet&) {
    double n = 0;
    for (auto id : s.ids()) n += id == encode_sequence("W")[0];
    return 100.0 * n;
  };
  const auto w = generate_reranked({}, p, sched, cfg, count_w, &all);
  for (const auto& c : all) CHECK(w.func_score >= c.func_score);

  // Equal totals resolve to the lower seed when confidences tie.
  cfg.confidence_weight = 0.0;
  const auto tie = generate_reranked({}, p, sched, cfg, [](const Sequence&, const AnnotationSet&) { return 1.0; }, &all);
  double best_conf = -1e300;
  for (const auto& c : all) best_conf = std::max(best_conf, c.model_confidence);
  CHECK(tie.model_confidence == best_conf);

  CHECK_THROWS_AS(generate_reranked({}, p, sched, cfg,
                                    [](const Sequence&, const AnnotationSet&) { return std::nan(""); }),
                  ScorerError);
}

TEST_CASE("fasta formatting") {
  GeneratedRecord r{"gen0", "anno", 7, -1.23456789, 0.5, "GO:1;GO:2", encode_sequence(std::string(70, 'A'))};
  const auto text = format_fasta({r});
  CHECK(text.rfind(">gen0|mode=anno|seed=7|conf=-1.23457|func=0.5|labels=GO:1;GO:2\n", 0) == 0);
  CHECK(text.find(std::string(60, 'A') + "\n" + std::string(10, 'A') + "\n") != std::string::npos);
}
