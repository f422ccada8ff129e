// Command-line driver: dataset generation, training, evaluation, oracle
// runs, view dumps and report merging.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nvs/nvs.hpp"

namespace fs = std::filesystem;
using namespace nvs;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
};

// Flags mirroring config keys. Unset flags leave the config untouched.
struct Overrides {
  std::optional<int> samples_per_class, resolution, image_size, epochs, batch_size, base_view;
  std::optional<double> train_fraction, learning_rate, threshold, jitter;
  std::optional<std::string> optimizer, base_policy, fusion, strategies, manifest;
  std::optional<bool> augment, sweep_bases, include_base;

  void apply(RunConfig& c) const {
    if (samples_per_class)
      for (auto& [_, n] : c.dataset.per_class) n = *samples_per_class;
    if (train_fraction) c.dataset.train_fraction = *train_fraction;
    if (resolution) {
      c.dataset.resolution = *resolution;
      c.model.resolution = *resolution;
      c.model.decoder_channels = default_decoder_channels(*resolution);
    }
    if (image_size) c.model.image_size = *image_size;
    if (fusion) c.model.fusion = parse_fusion(*fusion);
    if (include_base) c.model.include_base_in_candidates = *include_base;
    if (epochs) c.train.epochs = *epochs;
    if (batch_size) c.train.batch_size = *batch_size;
    if (learning_rate) c.train.optimizer.learning_rate = *learning_rate;
    if (optimizer) c.train.optimizer.kind = ad::parse_optimizer(*optimizer);
    if (base_policy) c.train.base_policy = BasePolicy::parse(*base_policy);
    if (augment) c.train.augment = *augment;
    if (jitter) c.train.augmentation.jitter = *jitter;
    if (manifest) c.train.manifest = *manifest;
    if (strategies) {
      c.eval.strategies.clear();
      std::stringstream ss(*strategies);
      for (std::string s; std::getline(ss, s, ',');)
        if (!s.empty()) c.eval.strategies.push_back(s);
    }
    if (base_view) c.eval.base_view = *base_view;
    if (sweep_bases) c.eval.sweep_bases = *sweep_bases;
    if (threshold) c.eval.threshold = *threshold;
  }
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "JSON config file");
  sub->add_option("--seed", c.seed, "master seed");
  sub->add_option("--out", c.out, "output directory");
}

RunConfig resolve(const Common& common, const Overrides& o) {
  RunConfig c = common.config.empty() ? RunConfig{} : load_run_config(common.config);
  if (common.seed) c.set_seed(*common.seed);
  o.apply(c);
  c.validate();
  return c;
}

fs::path prepare_out(const Common& c, const RunConfig& cfg) {
  const fs::path out(c.out);
  fs::create_directories(out);
  io::write_file(out / "resolved_config.json", dump_json(to_json(cfg)));
  return out;
}

fs::path manifest_path(const RunConfig& c) {
  if (c.train.manifest.empty()) throw InvalidArgument("no manifest given (use --manifest)");
  return c.train.manifest;
}

std::vector<Sample> load_split(const RunConfig& c, std::optional<Split> split) {
  const auto path = manifest_path(c);
  const auto m = load_manifest(path);
  if (m.resolution != c.model.resolution) {
    throw DimensionError("manifest resolution " + std::to_string(m.resolution) +
                         " differs from model resolution " + std::to_string(c.model.resolution));
  }
  return load_samples(m, path.parent_path(), split, canonical_sphere(), c.model.image_size);
}

Model<float> load_model(const RunConfig& c, const std::string& checkpoint) {
  Model<float> model(c.model);
  load_checkpoint(checkpoint, model);
  return model;
}

int run_gen_data(const Common& common, const Overrides& o) {
  auto cfg = resolve(common, o);
  const auto out = prepare_out(common, cfg);
  const auto m = build_dataset(cfg.dataset, out);
  const auto back = load_manifest(out / "manifest.json");
  if (back.samples.size() != m.samples.size()) throw IoError("manifest did not read back");
  std::cerr << "wrote " << m.samples.size() << " samples (" << m.count(Split::kTrain) << " train, "
            << m.count(Split::kTest) << " test) to " << out.string() << "\n";
  return 0;
}

int run_train(const Common& common, const Overrides& o, const std::string& resume) {
  auto cfg = resolve(common, o);
  const auto out = prepare_out(common, cfg);
  cfg.train.checkpoint = (out / "model.nvsm").string();
  cfg.train.log = (out / "train.log").string();
  cfg.train.probe_log = (out / "probe_loss.tsv").string();
  const auto samples = load_split(cfg, Split::kTrain);
  Model<float> model(cfg.model);
  TrainHooks hooks;
  int last_epoch = -1;
  double epoch_sum = 0;
  int epoch_steps = 0;
  hooks.on_step = [&](const StepInfo& s) {
    if (s.epoch != last_epoch && epoch_steps > 0) {
      std::fprintf(stderr, "epoch %d  mean loss %.6f\n", last_epoch, epoch_sum / epoch_steps);
      epoch_sum = 0;
      epoch_steps = 0;
    }
    last_epoch = s.epoch;
    epoch_sum += s.loss;
    ++epoch_steps;
  };
  const auto result = train(model, samples, cfg.train,
                            resume.empty() ? std::nullopt : std::optional<fs::path>(resume), hooks);
  if (epoch_steps > 0) std::fprintf(stderr, "epoch %d  mean loss %.6f\n", last_epoch, epoch_sum / epoch_steps);
  Model<float> check(cfg.model);
  load_checkpoint(cfg.train.checkpoint, check);
  if (!result.probe_losses.empty()) {
    TrainConfig probe_cfg = cfg.train;
    std::vector<Sample> probe(samples.begin(),
                              samples.begin() + static_cast<std::ptrdiff_t>(std::min(samples.size(), cfg.train.probe_samples)));
    const double again = probe_loss(check, probe, probe_cfg);
    if (std::abs(again - result.probe_losses.back()) > 1e-6) throw IoError("checkpoint did not reproduce the probe loss");
  }
  return 0;
}

Evaluation run_evaluation(const RunConfig& cfg, const std::string& checkpoint) {
  const auto model = load_model(cfg, checkpoint);
  const auto samples = load_split(cfg, Split::kTest);
  if (samples.empty()) throw InvalidArgument("test split is empty");
  return evaluate(model, samples, cfg.eval, canonical_sphere());
}

int run_eval(const Common& common, const Overrides& o, const std::string& checkpoint) {
  auto cfg = resolve(common, o);
  if (!fs::exists(checkpoint)) throw NotFound("checkpoint not found: " + checkpoint);
  const auto out = prepare_out(common, cfg);
  const auto ev = run_evaluation(cfg, checkpoint);
  write_report(ev.report, out / "report");
  const auto back = report_from_json(nlohmann::json::parse(io::read_file(out / "report.json")));
  if (!(back == ev.report)) throw IoError("report did not read back");
  bool ranks = true;
  for (int k = 2; k <= cfg.model.views; ++k) {
    const auto name = "learned_kth:" + std::to_string(k);
    ranks = ranks && std::find(cfg.eval.strategies.begin(), cfg.eval.strategies.end(), name) != cfg.eval.strategies.end();
  }
  if (ranks) io::write_file(out / "ranking.csv", ranking_csv(ev.report, static_cast<std::size_t>(cfg.model.views)));
  std::cout << render_table(ev.report);
  return 0;
}

int run_oracle(const Common& common, Overrides o, const std::string& checkpoint) {
  o.strategies = "oracle";
  auto cfg = resolve(common, o);
  if (!fs::exists(checkpoint)) throw NotFound("checkpoint not found: " + checkpoint);
  const auto out = prepare_out(common, cfg);
  const auto ev = run_evaluation(cfg, checkpoint);
  io::write_file(out / "oracle.json", dump_json(oracle_json(ev)));
  std::cout << render_table(ev.report);
  return 0;
}

int run_render(const Common& common, const Overrides& o, const std::string& sample, const std::string& grid) {
  auto cfg = resolve(common, o);
  BinaryGrid g;
  if (!grid.empty()) {
    g = vxg::decode_binary(io::read_file(grid));
  } else {
    if (sample.empty()) throw InvalidArgument("render needs --sample or --grid");
    const auto path = manifest_path(cfg);
    const auto m = load_manifest(path);
    bool found = false;
    for (const auto& e : m.samples) {
      if (e.sample_id == sample) {
        g = vxg::decode_binary(io::read_file(path.parent_path() / e.grid_path));
        found = true;
      }
    }
    if (!found) throw NotFound("sample not in manifest: " + sample);
  }
  const auto out = prepare_out(common, cfg);
  const auto sphere = canonical_sphere();
  const auto views = render_all(g, sphere, cfg.model.image_size);
  for (std::size_t i = 0; i < views.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "view_%02zu.ppm", i);
    write_ppm(out / name, views[i]);
  }
  return 0;
}

int run_report(const Common& common, const std::vector<std::string>& inputs, std::vector<std::string> labels) {
  if (inputs.empty()) throw InvalidArgument("report needs at least one eval JSON");
  if (labels.empty())
    for (const auto& p : inputs) labels.push_back(fs::path(p).parent_path().filename().string());
  std::vector<EvalReport> reports;
  for (const auto& p : inputs) {
    try {
      reports.push_back(report_from_json(nlohmann::json::parse(io::read_file(p))));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(p + ": " + e.what());
    }
  }
  const auto merged = merge_reports(reports, labels);
  const fs::path out(common.out);
  fs::create_directories(out);
  write_report(merged, out / "comparison");
  std::cout << render_table(merged);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Next-view selection and voxel reconstruction"};
  app.require_subcommand(1);
  Common common;
  Overrides o;
  std::string checkpoint, resume, sample, grid;
  std::vector<std::string> inputs, labels;

  auto manifest_opt = [&](CLI::App* s) { s->add_option("--manifest", o.manifest, "dataset manifest.json"); };
  auto model_opts = [&](CLI::App* s) {
    s->add_option("--image-size", o.image_size);
    s->add_option("--resolution", o.resolution);
    s->add_option("--fusion", o.fusion, "context_aware|simple_average");
    s->add_option("--include-base", o.include_base);
  };

  auto* gen = app.add_subcommand("gen-data", "generate a procedural shape dataset");
  add_common(gen, common);
  gen->add_option("--samples-per-class", o.samples_per_class);
  gen->add_option("--train-fraction", o.train_fraction);
  gen->add_option("--resolution", o.resolution);

  auto* tr = app.add_subcommand("train", "train the joint model");
  add_common(tr, common);
  manifest_opt(tr);
  model_opts(tr);
  tr->add_option("--epochs", o.epochs);
  tr->add_option("--batch-size", o.batch_size);
  tr->add_option("--learning-rate", o.learning_rate);
  tr->add_option("--optimizer", o.optimizer, "adam|sgd");
  tr->add_option("--base-policy", o.base_policy, "random_per_sample|fixed:<id>");
  tr->add_option("--augment", o.augment);
  tr->add_option("--jitter", o.jitter);
  tr->add_option("--resume", resume, "checkpoint to continue from");

  auto* ev = app.add_subcommand("eval", "evaluate selection strategies");
  add_common(ev, common);
  manifest_opt(ev);
  model_opts(ev);
  ev->add_option("--checkpoint", checkpoint)->required();
  ev->add_option("--strategies", o.strategies, "comma-separated strategy names");
  ev->add_option("--base-view", o.base_view);
  ev->add_option("--sweep-bases", o.sweep_bases);
  ev->add_option("--threshold", o.threshold);

  auto* orc = app.add_subcommand("oracle", "per-sample exhaustive view choice");
  add_common(orc, common);
  manifest_opt(orc);
  model_opts(orc);
  orc->add_option("--checkpoint", checkpoint)->required();
  orc->add_option("--base-view", o.base_view);
  orc->add_option("--sweep-bases", o.sweep_bases);
  orc->add_option("--threshold", o.threshold);

  auto* ren = app.add_subcommand("render", "dump the rendered views of one shape");
  add_common(ren, common);
  manifest_opt(ren);
  ren->add_option("--image-size", o.image_size);
  ren->add_option("--sample", sample, "sample id from the manifest");
  ren->add_option("--grid", grid, ".vxg file");

  auto* rep = app.add_subcommand("report", "merge eval reports into one table");
  add_common(rep, common);
  rep->add_option("inputs", inputs, "report.json files")->required();
  rep->add_option("--labels", labels, "one label per input");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) return run_gen_data(common, o);
    if (*tr) return run_train(common, o, resume);
    if (*ev) return run_eval(common, o, checkpoint);
    if (*orc) return run_oracle(common, o, checkpoint);
    if (*ren) return run_render(common, o, sample, grid);
    if (*rep) return run_report(common, inputs, labels);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
