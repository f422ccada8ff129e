#include <gtest/gtest.h>

#include <filesystem>

#include "nvs/checkpoint.hpp"
#include "nvs/eval.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace nvs;
using nvs::testing::tiny_config;

namespace {

std::vector<Sample> tiny_test_set(int per_class = 2) {
  std::vector<Sample> out;
  std::uint64_t seed = 100;
  for (auto cls : kAllShapeClasses) {
    for (int i = 0; i < per_class; ++i) {
      Sample s;
      s.sample_id = std::string(class_name(cls)) + "_" + std::to_string(i);
      s.cls = std::string(class_name(cls));
      s.split = Split::kTest;
      s.truth = generate_shape(cls, seed++, 4);
      s.views = render_all(s.truth, canonical_sphere(), 8);
      out.push_back(std::move(s));
    }
  }
  return out;
}

Model<float> tiny_model(std::uint64_t seed = 2) {
  Model<float> m(tiny_config());
  m.initialize(seed);
  return m;
}

SelectionContext context(const std::vector<double>& p, int base = 7) {
  static const auto sphere = canonical_sphere();
  return {p, base, &sphere, true, "chair_0000", nullptr};
}

const std::vector<double> kProbs{0.1, 0.7, 0.2, 0, 0, 0, 0, 0, 0, 0, 0};

}  // namespace

TEST(Selection, LearnedBestAndSecond) {
  const auto ctx = context(kProbs);
  EXPECT_EQ(select_view(Strategy::learned_best(), ctx), 1);
  EXPECT_EQ(select_view(Strategy::learned_kth(2), ctx), 2);
  EXPECT_EQ(select_view(Strategy::learned_kth(3), ctx), 0);
  EXPECT_EQ(select_view(Strategy::learned_kth(4), ctx), 3);  // zero ties: lower id first
  EXPECT_EQ(select_view(Strategy::learned_kth(11), ctx), 10);
  EXPECT_THROW(select_view(Strategy::learned_kth(12), ctx), InvalidArgument);
}

TEST(Selection, FirstRankedEqualsBestOnRandomDistributions) {
  Rng rng(3);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> p(11);
    for (auto& x : p) x = uniform01(rng);
    const auto ctx = context(p, t % 11);
    EXPECT_EQ(select_view(Strategy::learned_kth(1), ctx), select_view(Strategy::learned_best(), ctx));
    // The k-th pick has exactly k-1 strictly larger entries.
    for (int k = 1; k <= 11; ++k) {
      const int id = kth_best(p, k);
      int larger = 0;
      for (double x : p) larger += x > p[static_cast<std::size_t>(id)];
      EXPECT_EQ(larger, k - 1);
    }
  }
}

TEST(Selection, MaskedWithEverythingAvailableIsBest) {
  Rng rng(9);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> p(11);
    for (auto& x : p) x = uniform01(rng);
    std::unique_ptr<bool[]> all(new bool[11]);
    std::fill(all.get(), all.get() + 11, true);
    EXPECT_EQ(masked_argmax(p, std::span<const bool>(all.get(), 11)), kth_best(p, 1));
  }
}

TEST(Selection, MaskedPicksTheBestAvailableView) {
  Rng rng(4);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> p(11);
    for (auto& x : p) x = uniform01(rng);
    const std::string id = "lamp_" + std::to_string(t);
    SelectionContext ctx{p, t % 11, nullptr, true, id, nullptr};
    const auto avail = masked_availability(5, id, ctx.base, 11, true);
    const int pick = select_view(Strategy::masked(5), ctx);
    ASSERT_TRUE(avail[static_cast<std::size_t>(pick)]);
    for (std::size_t i = 0; i < 11; ++i) {
      if (avail[i]) {
        EXPECT_LE(p[i], p[static_cast<std::size_t>(pick)]);
      }
    }
  }
}

TEST(Selection, AvailabilityNeverEmptyAndRespectsBase) {
  for (std::uint64_t s = 0; s < 500; ++s) {
    const auto a = random_availability(s, 11, 4, false);
    EXPECT_FALSE(a[4]);
    EXPECT_GT(std::count(a.begin(), a.end(), true), 0);
  }
  // With two views and the base excluded only one view can survive.
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto a = random_availability(s, 2, 0, false);
    EXPECT_EQ(a, (std::vector<bool>{false, true}));
  }
}

TEST(Selection, RandomIsReproducibleAndCoversCandidates) {
  std::set<int> seen;
  for (int t = 0; t < 200; ++t) {
    const std::string id = "bed_" + std::to_string(t);
    SelectionContext ctx{kProbs, 7, nullptr, false, id, nullptr};
    const int a = select_view(Strategy::random(3), ctx);
    EXPECT_EQ(a, select_view(Strategy::random(3), ctx));
    EXPECT_NE(a, 7);
    seen.insert(a);
  }
  EXPECT_EQ(seen.size(), 10u);
}

TEST(Selection, FarthestFromTheFrontView) {
  const auto ctx = context(kProbs, 7);
  const int id = select_view(Strategy::farthest(), ctx);
  const auto sphere = canonical_sphere();
  const double d = chord_distance(sphere[7], sphere[static_cast<std::size_t>(id)]);
  for (std::size_t i = 0; i < sphere.size(); ++i) EXPECT_LE(chord_distance(sphere[7], sphere[i]), d + 1e-12);
}

TEST(Selection, OracleTakesTheBestCandidate) {
  const std::vector<double> ious{0.2, 0.1, 0.9, 0.4, 0.95, 0, 0, 0, 0, 0, 0};
  SelectionContext ctx{kProbs, 4, nullptr, true, "x", &ious};
  EXPECT_EQ(select_view(Strategy::oracle(), ctx), 4);
  ctx.include_base = false;
  EXPECT_EQ(select_view(Strategy::oracle(), ctx), 2);
  ctx.candidate_ious = nullptr;
  EXPECT_THROW(select_view(Strategy::oracle(), ctx), InvalidArgument);
}

TEST(Selection, StrategyNamesRoundTrip) {
  for (const char* s : {"learned_best", "learned_kth:3", "random:12", "farthest", "oracle", "masked:4"}) {
    EXPECT_EQ(parse_strategy(s).name(), s);
  }
  EXPECT_EQ(parse_strategy("random").name(), "random:0");
  for (const char* bad : {"learned_kth", "learned_kth:0", "learned_kth:x", "oracle:1", "best", "random:"}) {
    EXPECT_THROW(parse_strategy(bad), InvalidArgument) << bad;
  }
}

TEST(Evaluate, OracleDominatesEveryStrategy) {
  const auto model = tiny_model();
  EvalConfig cfg;
  cfg.strategies = {"learned_best", "learned_kth:2", "random:1", "random:2", "farthest", "masked:3", "oracle"};
  cfg.sweep_bases = true;
  const auto ev = evaluate(model, tiny_test_set(), cfg, canonical_sphere());
  const std::size_t oracle = cfg.strategies.size() - 1;
  for (const auto& o : ev.samples) {
    ASSERT_EQ(o.bases.size(), 11u);
    for (const auto& b : o.bases)
      for (std::size_t s = 0; s < oracle; ++s) EXPECT_LE(b.ious[s], b.ious[oracle]);
  }
  for (const auto& name : cfg.strategies) {
    EXPECT_LE(ev.report.row("overall", name).mean_iou, ev.report.row("overall", "oracle").mean_iou);
  }
}

TEST(Evaluate, IousMatchAnIndependentReconstruction) {
  const auto model = tiny_model();
  const auto samples = tiny_test_set(1);
  EvalConfig cfg;
  const auto ev = evaluate(model, samples, cfg, canonical_sphere());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& b = ev.samples[i].bases[0];
    EXPECT_EQ(b.base, 7);
    for (int c : {0, 3, 10}) {
      ad::NoGradGuard guard;
      const auto v = model.reconstruct_pair(samples[i].views[7], samples[i].views[static_cast<std::size_t>(c)]);
      const auto d = v.data();
      const VoxelGrid grid(4, std::vector<float>(d.begin(), d.end()));
      EXPECT_DOUBLE_EQ(b.candidate_ious[static_cast<std::size_t>(c)], iou(grid, samples[i].truth, 0.3));
    }
    double total = 0.0;
    for (double p : b.probs) total += p;
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(Evaluate, OverallIsTheSampleWeightedMean) {
  const auto model = tiny_model();
  auto samples = tiny_test_set(1);
  const auto extra = tiny_test_set(3);
  samples.insert(samples.end(), extra.begin(), extra.begin() + 3);  // the first class outnumbers the rest
  EvalConfig cfg;
  const auto ev = evaluate(model, samples, cfg, canonical_sphere());
  for (std::size_t s = 0; s < cfg.strategies.size(); ++s) {
    double total = 0.0;
    for (const auto& o : ev.samples) total += o.iou(s);
    const auto& row = ev.report.row("overall", cfg.strategies[s]);
    EXPECT_EQ(row.n, samples.size());
    EXPECT_NEAR(row.mean_iou, total / static_cast<double>(samples.size()), 1e-12);
  }
  EXPECT_EQ(ev.report.row(extra[0].cls, "oracle").n, 4u);
}

TEST(Evaluate, HistogramsCountEverySelection) {
  const auto model = tiny_model();
  const auto samples = tiny_test_set(2);
  EvalConfig cfg;
  cfg.sweep_bases = true;
  const auto ev = evaluate(model, samples, cfg, canonical_sphere());
  const auto [best, second] = next_view_histograms(ev.report);
  for (const auto& cls : ev.report.classes) {
    std::uint64_t a = 0, b = 0;
    for (auto c : best.at(cls)) a += c;
    for (auto c : second.at(cls)) b += c;
    EXPECT_EQ(a, 2u * 11u) << cls;
    EXPECT_EQ(b, 2u * 11u) << cls;
  }
  EXPECT_THROW(next_view_histogram(ev.report, "nope"), NotFound);
}

TEST(Evaluate, SingleSampleGivesAOneHotHistogram) {
  const auto model = tiny_model();
  const auto samples = tiny_test_set(1);
  const std::vector<Sample> one{samples[0]};
  EvalConfig cfg;
  const auto ev = evaluate(model, one, cfg, canonical_sphere());
  const auto h = next_view_histogram(ev.report).at(one[0].cls);
  EXPECT_EQ(std::count(h.begin(), h.end(), 1u), 1);
  EXPECT_EQ(std::count(h.begin(), h.end(), 0u), 10);
  EXPECT_EQ(h[static_cast<std::size_t>(ev.samples[0].bases[0].choices[0])], 1u);
}

TEST(Evaluate, DoesNotTouchTheModel) {
  const auto model = tiny_model();
  const auto before = encode_checkpoint(model);
  EvalConfig cfg;
  cfg.sweep_bases = true;
  evaluate(model, tiny_test_set(1), cfg, canonical_sphere());
  EXPECT_EQ(encode_checkpoint(model), before);
}

TEST(Evaluate, IsDeterministicAndDigestTracksInputs) {
  const auto model = tiny_model();
  const auto samples = tiny_test_set(1);
  EvalConfig cfg;
  const auto a = evaluate(model, samples, cfg, canonical_sphere());
  const auto b = evaluate(model, samples, cfg, canonical_sphere());
  EXPECT_EQ(a.report, b.report);
  EXPECT_EQ(dump_json(to_json(a.report)), dump_json(to_json(b.report)));
  auto other = cfg;
  other.base_view = 3;
  EXPECT_NE(config_digest(model, cfg), config_digest(model, other));
  EXPECT_NE(config_digest(model, cfg), config_digest(tiny_model(5), cfg));
}

TEST(Evaluate, RejectsBadConfigs) {
  const auto model = tiny_model();
  const auto samples = tiny_test_set(1);
  EvalConfig cfg;
  cfg.strategies = {"learned_kth:12"};
  EXPECT_THROW(evaluate(model, samples, cfg, canonical_sphere()), InvalidArgument);
  cfg = {};
  cfg.strategies.clear();
  EXPECT_THROW(evaluate(model, samples, cfg, canonical_sphere()), InvalidArgument);
  cfg = {};
  cfg.base_view = 11;
  EXPECT_THROW(evaluate(model, samples, cfg, canonical_sphere()), InvalidArgument);
  EXPECT_THROW(evaluate(model, std::vector<Sample>{}, EvalConfig{}, canonical_sphere()), InvalidArgument);
}

TEST(Report, JsonRoundTripAndFiles) {
  const auto model = tiny_model();
  const auto ev = evaluate(model, tiny_test_set(1), EvalConfig{}, canonical_sphere());
  EXPECT_EQ(report_from_json(to_json(ev.report)), ev.report);
  const auto stem = fs::temp_directory_path() / "nvs_test_eval_report";
  write_report(ev.report, stem);
  const auto text = io::read_file(fs::path(stem).concat(".json"));
  EXPECT_EQ(report_from_json(nlohmann::json::parse(text)), ev.report);
  const auto table = io::read_file(fs::path(stem).concat(".txt"));
  EXPECT_NE(table.find("overall"), std::string::npos);
  EXPECT_NE(table.find("learned_best"), std::string::npos);
  EXPECT_THROW(report_from_json(nlohmann::json::parse(R"({"rows": 3})")), ParseError);
}

TEST(Report, EmptyReportWritesNothing) {
  const auto stem = fs::temp_directory_path() / "nvs_test_eval_empty";
  fs::remove(fs::path(stem).concat(".txt"));
  fs::remove(fs::path(stem).concat(".json"));
  EXPECT_THROW(write_report(EvalReport{}, stem), InvalidArgument);
  EXPECT_FALSE(fs::exists(fs::path(stem).concat(".txt")));
  EXPECT_FALSE(fs::exists(fs::path(stem).concat(".json")));
}

TEST(Report, MergeAndRanking) {
  const auto model = tiny_model();
  const auto samples = tiny_test_set(1);
  EvalConfig cfg;
  cfg.strategies.clear();
  for (int k = 1; k <= 11; ++k) cfg.strategies.push_back("learned_kth:" + std::to_string(k));
  const auto ev = evaluate(model, samples, cfg, canonical_sphere());
  const auto csv = ranking_csv(ev.report, 11);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 12);
  EXPECT_EQ(csv.substr(0, 12), "k,mean_iou\n1");

  const auto merged = merge_reports({ev.report, ev.report}, {"a", "b"});
  EXPECT_EQ(merged.strategies.size(), 22u);
  EXPECT_EQ(merged.row("overall", "b/learned_kth:3").mean_iou,
            ev.report.row("overall", "learned_kth:3").mean_iou);
  EXPECT_THROW(merge_reports({ev.report}, {}), InvalidArgument);
}

TEST(Spearman, KnownValues) {
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3, 4}, {10, 20, 30, 40}), 1.0);
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3, 4}, {4, 3, 2, 1}), -1.0);
  // Ties take average ranks: x ranks 1,2,3,4; y ranks 1.5,1.5,3,4.
  const double rho = spearman({1, 2, 3, 4}, {5, 5, 6, 7});
  const double mx = 2.5, my = 2.5;
  const std::vector<double> rx{1, 2, 3, 4}, ry{1.5, 1.5, 3, 4};
  double sxy = 0, sxx = 0, syy = 0;
  for (int i = 0; i < 4; ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  EXPECT_NEAR(rho, sxy / std::sqrt(sxx * syy), 1e-12);
  EXPECT_EQ(average_ranks({3, 1, 3}), (std::vector<double>{2.5, 1, 2.5}));
  EXPECT_THROW(spearman({1}, {1}), InvalidArgument);
}
