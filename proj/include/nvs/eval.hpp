#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nvs/autodiff/ops.hpp"
#include "nvs/binary_io.hpp"
#include "nvs/dataset.hpp"
#include "nvs/error.hpp"
#include "nvs/parallel.hpp"
#include "nvs/model.hpp"
#include "nvs/rng.hpp"
#include "nvs/viewsphere.hpp"
#include "nvs/voxelgrid.hpp"

namespace nvs {

enum class StrategyKind { kLearnedBest, kLearnedKth, kRandom, kFarthest, kOracle, kMasked };

struct Strategy {
  StrategyKind kind = StrategyKind::kLearnedBest;
  int k = 1;                // learned_kth only
  std::uint64_t seed = 0;   // random and masked

  static Strategy learned_best() { return {}; }
  static Strategy learned_kth(int k) { return {StrategyKind::kLearnedKth, k, 0}; }
  static Strategy random(std::uint64_t seed) { return {StrategyKind::kRandom, 1, seed}; }
  static Strategy farthest() { return {StrategyKind::kFarthest, 1, 0}; }
  static Strategy oracle() { return {StrategyKind::kOracle, 1, 0}; }
  static Strategy masked(std::uint64_t seed) { return {StrategyKind::kMasked, 1, seed}; }

  std::string name() const {
    switch (kind) {
      case StrategyKind::kLearnedBest: return "learned_best";
      case StrategyKind::kLearnedKth: return "learned_kth:" + std::to_string(k);
      case StrategyKind::kRandom: return "random:" + std::to_string(seed);
      case StrategyKind::kFarthest: return "farthest";
      case StrategyKind::kOracle: return "oracle";
      case StrategyKind::kMasked: return "masked:" + std::to_string(seed);
    }
    return "?";
  }
};

// Accepts the names produced by Strategy::name().
inline Strategy parse_strategy(std::string_view s) {
  const auto colon = s.find(':');
  const std::string head(s.substr(0, colon));
  std::optional<std::uint64_t> arg;
  if (colon != std::string_view::npos) {
    const std::string tail(s.substr(colon + 1));
    if (tail.empty() || tail.find_first_not_of("0123456789") != std::string::npos) {
      throw InvalidArgument("bad strategy argument in '" + std::string(s) + "'");
    }
    arg = std::stoull(tail);
  }
  auto plain = [&](Strategy st) {
    if (arg) throw InvalidArgument("strategy '" + head + "' takes no argument");
    return st;
  };
  if (head == "learned_best") return plain(Strategy::learned_best());
  if (head == "farthest") return plain(Strategy::farthest());
  if (head == "oracle") return plain(Strategy::oracle());
  if (head == "learned_kth") {
    if (!arg || *arg < 1) throw InvalidArgument("learned_kth needs k >= 1");
    return Strategy::learned_kth(static_cast<int>(*arg));
  }
  if (head == "random") return Strategy::random(arg.value_or(0));
  if (head == "masked") return Strategy::masked(arg.value_or(0));
  throw InvalidArgument("unknown strategy '" + std::string(s) + "'");
}

// Index of the k-th largest probability (k from 1); ties go to the lower id.
inline int kth_best(std::span<const double> probs, int k) {
  if (k < 1 || static_cast<std::size_t>(k) > probs.size()) {
    throw InvalidArgument("k = " + std::to_string(k) + " outside 1.." + std::to_string(probs.size()));
  }
  std::vector<int> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return probs[a] > probs[b]; });
  return order[static_cast<std::size_t>(k - 1)];
}

// Availability mask simulating views that could not be captured. Each view is
// kept with probability 1/2; at least one candidate always survives.
inline std::vector<bool> random_availability(std::uint64_t seed, std::size_t k, std::size_t base,
                                             bool include_base) {
  Rng rng(seed);
  std::vector<bool> avail(k);
  bool any = false;
  for (std::size_t i = 0; i < k; ++i) {
    avail[i] = uniform01(rng) < 0.5 && (include_base || i != base);
    any = any || avail[i];
  }
  if (!any) {
    const std::size_t n = include_base ? k : k - 1;
    auto pick = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(n) - 1));
    if (!include_base && pick >= base) ++pick;
    avail[pick] = true;
  }
  return avail;
}

// Everything a selection rule may look at for one (sample, base) pair.
struct SelectionContext {
  std::span<const double> probs;
  int base = 0;
  const ViewSphere* sphere = nullptr;
  bool include_base = true;
  std::string sample_id;
  const std::vector<double>* candidate_ious = nullptr;  // oracle only
};

inline std::vector<int> candidate_ids(std::size_t k, int base, bool include_base) {
  std::vector<int> ids;
  for (std::size_t i = 0; i < k; ++i) {
    if (include_base || static_cast<int>(i) != base) ids.push_back(static_cast<int>(i));
  }
  return ids;
}

inline std::uint64_t sample_seed(std::uint64_t seed, const std::string& sample_id, int base) {
  return derive_seed(seed, {hash_name(sample_id), static_cast<std::uint64_t>(base)});
}

// Views available to the masked strategy for one (sample, base) pair.
inline std::vector<bool> masked_availability(std::uint64_t seed, const std::string& sample_id, int base,
                                             std::size_t k, bool include_base) {
  return random_availability(sample_seed(seed ^ 0xa5a11ULL, sample_id, base), k,
                             static_cast<std::size_t>(base), include_base);
}

inline int select_view(const Strategy& s, const SelectionContext& ctx) {
  const std::size_t k = ctx.probs.size();
  switch (s.kind) {
    case StrategyKind::kLearnedBest:
      return kth_best(ctx.probs, 1);
    case StrategyKind::kLearnedKth:
      return kth_best(ctx.probs, s.k);
    case StrategyKind::kRandom: {
      const auto ids = candidate_ids(k, ctx.base, ctx.include_base);
      Rng rng(sample_seed(s.seed, ctx.sample_id, ctx.base));
      return ids[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(ids.size()) - 1))];
    }
    case StrategyKind::kFarthest:
      if (ctx.sphere == nullptr) throw InvalidArgument("farthest strategy needs a view sphere");
      return farthest_view((*ctx.sphere)[static_cast<std::size_t>(ctx.base)], *ctx.sphere).id;
    case StrategyKind::kOracle: {
      if (ctx.candidate_ious == nullptr) throw InvalidArgument("oracle strategy needs ground truth");
      const auto& ious = *ctx.candidate_ious;
      if (ious.size() != k) throw DimensionError("oracle: one IoU per view required");
      int best = -1;
      for (int id : candidate_ids(k, ctx.base, ctx.include_base)) {
        if (best < 0 || ious[static_cast<std::size_t>(id)] > ious[static_cast<std::size_t>(best)]) best = id;
      }
      return best;
    }
    case StrategyKind::kMasked: {
      const auto avail = masked_availability(s.seed, ctx.sample_id, ctx.base, k, ctx.include_base);
      std::unique_ptr<bool[]> flags(new bool[k]);
      for (std::size_t i = 0; i < k; ++i) flags[i] = avail[i];
      return masked_argmax(ctx.probs, std::span<const bool>(flags.get(), k));
    }
  }
  throw InvalidArgument("unknown strategy");
}

struct EvalConfig {
  std::vector<std::string> strategies{"learned_best", "learned_kth:2", "random:1", "farthest", "oracle"};
  // Base view for every test sample; the (0, 0) view of the canonical sphere.
  int base_view = 7;
  bool sweep_bases = false;
  double threshold = kDefaultThreshold;

  void validate(std::size_t views) const {
    if (strategies.empty()) throw InvalidArgument("no strategies requested");
    for (const auto& s : strategies) {
      const auto st = parse_strategy(s);
      if (st.kind == StrategyKind::kLearnedKth && static_cast<std::size_t>(st.k) > views) {
        throw InvalidArgument("learned_kth k = " + std::to_string(st.k) + " exceeds " + std::to_string(views));
      }
    }
    if (!sweep_bases && (base_view < 0 || static_cast<std::size_t>(base_view) >= views)) {
      throw InvalidArgument("base view " + std::to_string(base_view) + " out of range");
    }
    check_threshold(threshold);
  }
};

inline nlohmann::json to_json(const EvalConfig& c) {
  return {{"strategies", c.strategies},
          {"base_view", c.base_view},
          {"sweep_bases", c.sweep_bases},
          {"threshold", c.threshold}};
}

inline EvalConfig eval_config_from_json(const nlohmann::json& j, EvalConfig c = {}) {
  if (j.contains("strategies")) c.strategies = j.at("strategies").get<std::vector<std::string>>();
  c.base_view = j.value("base_view", c.base_view);
  c.sweep_bases = j.value("sweep_bases", c.sweep_bases);
  c.threshold = j.value("threshold", c.threshold);
  return c;
}

// Reconstructions of one sample from one base view, paired with every view.
struct BaseOutcome {
  int base = 0;
  std::vector<double> probs;
  std::vector<double> candidate_ious;
  std::vector<int> choices;  // per strategy
  std::vector<double> ious;  // per strategy
};

struct SampleOutcome {
  std::string sample_id;
  std::string cls;
  std::vector<BaseOutcome> bases;

  // Mean over bases of the IoU obtained by strategy `s`.
  double iou(std::size_t s) const {
    double t = 0.0;
    for (const auto& b : bases) t += b.ious[s];
    return t / static_cast<double>(bases.size());
  }
};

struct ReportRow {
  std::string cls;
  std::string strategy;
  double mean_iou = 0.0;
  std::size_t n = 0;
  friend bool operator==(const ReportRow&, const ReportRow&) = default;
};

using Histogram = std::map<std::string, std::vector<std::uint64_t>>;  // class -> K counts

struct EvalReport {
  std::string config_digest;
  std::vector<std::string> strategies;
  std::vector<std::string> classes;
  std::vector<ReportRow> rows;     // class-major, strategies in request order
  std::vector<ReportRow> overall;  // one per strategy, class "overall"
  std::map<std::string, Histogram> selections;  // strategy -> per-class selection counts

  const ReportRow& row(const std::string& cls, const std::string& strategy) const {
    const auto& src = cls == "overall" ? overall : rows;
    for (const auto& r : src)
      if (r.cls == cls && r.strategy == strategy) return r;
    throw NotFound("no report row for " + cls + "/" + strategy);
  }
  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

struct Evaluation {
  EvalReport report;
  std::vector<SampleOutcome> samples;
};

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Fingerprint of the model (config and weights) and the evaluation settings.
template <class T>
std::string config_digest(const Model<T>& model, const EvalConfig& cfg) {
  std::uint64_t h = hash_name(to_json(model.config()).dump() + to_json(cfg).dump());
  for (const auto& [name, p] : model.named_parameters()) {
    const auto d = p.data();
    h = splitmix64(h ^ hash_name(name));
    h = splitmix64(h ^ hash_name(std::string_view(reinterpret_cast<const char*>(d.data()), d.size_bytes())));
  }
  return hex64(h);
}

// All K pair reconstructions for one base, scored against the truth.
template <class T>
BaseOutcome score_base(const Model<T>& model, const ad::Tensor<T>& features, std::size_t base,
                       const BinaryGrid& truth, double threshold) {
  ad::NoGradGuard guard;
  const auto k = static_cast<std::size_t>(model.config().views);
  BaseOutcome out;
  out.base = static_cast<int>(base);
  auto probs = ad::softmax(model.head_logits(ad::gather_rows(features, {base})));
  if (!model.config().include_base_in_candidates) {
    probs = ad::mask_renormalize(ad::reshape(probs, {k}), candidate_mask(k, base, false));
  }
  for (auto v : probs.data()) out.probs.push_back(static_cast<double>(v));
  std::vector<std::size_t> all(k);
  std::iota(all.begin(), all.end(), std::size_t{0});
  const auto volumes = model.reconstruct_pairs(features, base, all);
  const std::size_t n = cube(truth.resolution());
  const auto vd = volumes.data();
  for (std::size_t c = 0; c < k; ++c) {
    BinaryGrid pred(truth.resolution());
    for (std::size_t j = 0; j < n; ++j) pred.set_flat(j, static_cast<double>(vd[c * n + j]) > threshold);
    out.candidate_ious.push_back(iou(pred, truth));
  }
  return out;
}

inline Histogram next_view_histogram(const EvalReport& r, const std::string& strategy = "learned_best") {
  const auto it = r.selections.find(strategy);
  if (it == r.selections.end()) throw NotFound("report has no selections for strategy " + strategy);
  return it->second;
}

// Best and second-best selection counts per class.
inline std::pair<Histogram, Histogram> next_view_histograms(const EvalReport& r) {
  return {next_view_histogram(r, "learned_best"), next_view_histogram(r, "learned_kth:2")};
}

inline void fill_rows(EvalReport& rep, const std::vector<SampleOutcome>& samples) {
  rep.rows.clear();
  rep.overall.clear();
  for (const auto& cls : rep.classes) {
    for (std::size_t s = 0; s < rep.strategies.size(); ++s) {
      ReportRow row{cls, rep.strategies[s], 0.0, 0};
      for (const auto& o : samples) {
        if (o.cls != cls) continue;
        row.mean_iou += o.iou(s);
        ++row.n;
      }
      if (row.n > 0) row.mean_iou /= static_cast<double>(row.n);
      rep.rows.push_back(row);
    }
  }
  for (const auto& name : rep.strategies) {
    ReportRow o{"overall", name, 0.0, 0};
    for (const auto& r : rep.rows) {
      if (r.strategy != name) continue;
      o.mean_iou += r.mean_iou * static_cast<double>(r.n);
      o.n += r.n;
    }
    if (o.n > 0) o.mean_iou /= static_cast<double>(o.n);
    rep.overall.push_back(o);
  }
}

// Scores every requested strategy on every sample. Model parameters are
// only read.
template <class T>
Evaluation evaluate(const Model<T>& model, const std::vector<Sample>& samples, const EvalConfig& cfg,
                    const ViewSphere& sphere) {
  const auto k = static_cast<std::size_t>(model.config().views);
  cfg.validate(k);
  if (sphere.size() != k) throw DimensionError("view sphere size differs from the model's view count");
  if (samples.empty()) throw InvalidArgument("empty evaluation split");
  std::vector<Strategy> strategies;
  for (const auto& s : cfg.strategies) strategies.push_back(parse_strategy(s));
  std::vector<std::size_t> bases;
  if (cfg.sweep_bases) {
    for (std::size_t b = 0; b < k; ++b) bases.push_back(b);
  } else {
    bases.push_back(static_cast<std::size_t>(cfg.base_view));
  }
  const bool include_base = model.config().include_base_in_candidates;

  Evaluation ev;
  ev.samples.resize(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) {
    ad::NoGradGuard guard;
    const auto& s = samples[i];
    auto& o = ev.samples[i];
    o.sample_id = s.sample_id;
    o.cls = s.cls;
    const auto features = model.encode(images_to_tensor<T>(s.views));
    for (auto b : bases) {
      auto bo = score_base(model, features, b, s.truth, cfg.threshold);
      SelectionContext ctx{bo.probs, static_cast<int>(b), &sphere, include_base, s.sample_id,
                           &bo.candidate_ious};
      for (const auto& st : strategies) {
        const int id = select_view(st, ctx);
        bo.choices.push_back(id);
        bo.ious.push_back(bo.candidate_ious[static_cast<std::size_t>(id)]);
      }
      o.bases.push_back(std::move(bo));
    }
  });

  auto& rep = ev.report;
  rep.config_digest = config_digest(model, cfg);
  rep.strategies = cfg.strategies;
  for (auto c : kAllShapeClasses) {
    const std::string name(class_name(c));
    for (const auto& s : samples) {
      if (s.cls == name) {
        rep.classes.push_back(name);
        break;
      }
    }
  }
  fill_rows(rep, ev.samples);
  for (std::size_t s = 0; s < rep.strategies.size(); ++s) {
    auto& h = rep.selections[rep.strategies[s]];
    for (const auto& cls : rep.classes) h[cls].assign(k, 0);
    for (const auto& o : ev.samples)
      for (const auto& b : o.bases) ++h[o.cls][static_cast<std::size_t>(b.choices[s])];
  }
  return ev;
}

inline nlohmann::json to_json(const ReportRow& r) {
  return {{"class", r.cls}, {"strategy", r.strategy}, {"mean_iou", r.mean_iou}, {"n", r.n}};
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json rows = nlohmann::json::array(), overall = nlohmann::json::array();
  for (const auto& x : r.rows) rows.push_back(to_json(x));
  for (const auto& x : r.overall) overall.push_back(to_json(x));
  nlohmann::json j{{"config_digest", r.config_digest},
                   {"strategies", r.strategies},
                   {"classes", r.classes},
                   {"rows", rows},
                   {"overall", overall},
                   {"selections", r.selections}};
  const auto best = r.selections.find("learned_best");
  j["histograms"] = best == r.selections.end() ? nlohmann::json::object() : nlohmann::json(best->second);
  const auto second = r.selections.find("learned_kth:2");
  j["histograms_second"] =
      second == r.selections.end() ? nlohmann::json::object() : nlohmann::json(second->second);
  return j;
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  try {
    EvalReport r;
    r.config_digest = j.at("config_digest").get<std::string>();
    r.strategies = j.at("strategies").get<std::vector<std::string>>();
    r.classes = j.at("classes").get<std::vector<std::string>>();
    auto row = [](const nlohmann::json& x) {
      return ReportRow{x.at("class").get<std::string>(), x.at("strategy").get<std::string>(),
                       x.at("mean_iou").get<double>(), x.at("n").get<std::size_t>()};
    };
    for (const auto& x : j.at("rows")) r.rows.push_back(row(x));
    for (const auto& x : j.at("overall")) r.overall.push_back(row(x));
    r.selections = j.at("selections").get<std::map<std::string, Histogram>>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("eval report: ") + e.what());
  }
}

// Classes down, strategies across, overall row last.
inline std::string render_table(const EvalReport& r) {
  std::size_t cw = 8;
  for (const auto& c : r.classes) cw = std::max(cw, c.size());
  std::vector<std::size_t> widths;
  for (const auto& s : r.strategies) widths.push_back(std::max<std::size_t>(10, s.size()));
  std::string out;
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%-*s", static_cast<int>(cw), "class");
  out += buf;
  for (std::size_t s = 0; s < r.strategies.size(); ++s) {
    std::snprintf(buf, sizeof(buf), "  %*s", static_cast<int>(widths[s]), r.strategies[s].c_str());
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "  %5s\n", "n");
  out += buf;
  auto line = [&](const std::string& cls) {
    std::snprintf(buf, sizeof(buf), "%-*s", static_cast<int>(cw), cls.c_str());
    out += buf;
    std::size_t n = 0;
    for (std::size_t s = 0; s < r.strategies.size(); ++s) {
      const auto& row = r.row(cls, r.strategies[s]);
      std::snprintf(buf, sizeof(buf), "  %*.6f", static_cast<int>(widths[s]), row.mean_iou);
      out += buf;
      n = row.n;
    }
    std::snprintf(buf, sizeof(buf), "  %5zu\n", n);
    out += buf;
  };
  for (const auto& c : r.classes) line(c);
  line("overall");
  return out;
}

// Writes <stem>.txt and <stem>.json. Nothing is written for an empty report.
inline void write_report(const EvalReport& r, const std::filesystem::path& stem) {
  if (r.strategies.empty()) throw InvalidArgument("report has no strategies");
  const auto table = render_table(r);
  const auto json = dump_json(to_json(r));
  io::write_file(std::filesystem::path(stem).concat(".txt"), table);
  io::write_file(std::filesystem::path(stem).concat(".json"), json);
}

// Combines reports with disjoint strategy names (e.g. two fusion modes)
// into one table. Strategy names are prefixed with `labels[i]/`.
inline EvalReport merge_reports(const std::vector<EvalReport>& reports, const std::vector<std::string>& labels) {
  if (reports.empty()) throw InvalidArgument("nothing to merge");
  if (labels.size() != reports.size()) throw InvalidArgument("one label per report required");
  EvalReport out;
  std::uint64_t h = 0;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    h = splitmix64(h ^ hash_name(r.config_digest));
    for (const auto& c : r.classes)
      if (std::find(out.classes.begin(), out.classes.end(), c) == out.classes.end()) out.classes.push_back(c);
    for (const auto& s : r.strategies) out.strategies.push_back(labels[i] + "/" + s);
    for (const auto& [s, hist] : r.selections) out.selections[labels[i] + "/" + s] = hist;
  }
  out.config_digest = hex64(h);
  for (const auto& cls : out.classes) {
    for (std::size_t i = 0; i < reports.size(); ++i) {
      for (const auto& s : reports[i].strategies) {
        ReportRow row{cls, labels[i] + "/" + s, 0.0, 0};
        for (const auto& x : reports[i].rows)
          if (x.cls == cls && x.strategy == s) row = {cls, labels[i] + "/" + s, x.mean_iou, x.n};
        out.rows.push_back(row);
      }
    }
  }
  for (std::size_t i = 0; i < reports.size(); ++i)
    for (const auto& x : reports[i].overall) out.overall.push_back({"overall", labels[i] + "/" + x.strategy, x.mean_iou, x.n});
  return out;
}

// Mean IoU of learned_kth(k) for k = 1..K, as CSV lines "k,mean_iou".
inline std::string ranking_csv(const EvalReport& r, std::size_t views) {
  std::string out = "k,mean_iou\n";
  char buf[64];
  for (std::size_t k = 1; k <= views; ++k) {
    std::string name = "learned_kth:" + std::to_string(k);
    if (k == 1 && std::find(r.strategies.begin(), r.strategies.end(), name) == r.strategies.end()) {
      name = "learned_best";
    }
    const auto& row = r.row("overall", name);
    std::snprintf(buf, sizeof(buf), "%zu,%.9g\n", k, row.mean_iou);
    out += buf;
  }
  return out;
}

inline std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> rank(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) rank[idx[t]] = r;
    i = j + 1;
  }
  return rank;
}

// Spearman correlation with average ranks for ties.
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("spearman needs two equal series of length >= 2");
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / static_cast<double>(rx.size());
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / static_cast<double>(ry.size());
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

// Per-sample oracle choices for the CLI's oracle subcommand.
inline nlohmann::json oracle_json(const Evaluation& ev) {
  const auto& names = ev.report.strategies;
  const auto it = std::find(names.begin(), names.end(), "oracle");
  if (it == names.end()) throw NotFound("evaluation has no oracle strategy");
  const auto s = static_cast<std::size_t>(it - names.begin());
  nlohmann::json out = nlohmann::json::array();
  for (const auto& o : ev.samples) {
    for (const auto& b : o.bases) {
      out.push_back({{"sample_id", o.sample_id},
                     {"class", o.cls},
                     {"base", b.base},
                     {"choice", b.choices[s]},
                     {"iou", b.ious[s]},
                     {"candidate_ious", b.candidate_ious}});
    }
  }
  return out;
}

}  // namespace nvs
