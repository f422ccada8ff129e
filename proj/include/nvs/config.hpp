#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "nvs/binary_io.hpp"
#include "nvs/dataset.hpp"
#include "nvs/error.hpp"
#include "nvs/eval.hpp"
#include "nvs/model.hpp"
#include "nvs/train.hpp"

namespace nvs {

// Every knob of a run. Written out in full next to each run's outputs so the
// file alone reproduces it.
struct RunConfig {
  DatasetConfig dataset = DatasetConfig::uniform(40);
  ModelConfig model{};
  TrainConfig train{};
  EvalConfig eval{};

  // One seed for everything random: shape sampling, initialization, batch
  // order, base views and augmentation.
  void set_seed(std::uint64_t seed) {
    dataset.seed = seed;
    model.init_seed = seed;
    train.seed = seed;
  }

  void validate() const {
    model.validate();
    train.validate();
    eval.validate(static_cast<std::size_t>(model.views));
    if (dataset.resolution != model.resolution) {
      throw InvalidArgument("dataset resolution " + std::to_string(dataset.resolution) +
                            " differs from model resolution " + std::to_string(model.resolution));
    }
  }
};

inline nlohmann::json to_json(const RunConfig& c) {
  return {{"dataset", to_json(c.dataset)},
          {"model", to_json(c.model)},
          {"train", to_json(c.train)},
          {"eval", to_json(c.eval)}};
}

inline RunConfig run_config_from_json(const nlohmann::json& j, RunConfig c = {}) {
  try {
    for (const auto& [key, _] : j.items()) {
      if (key != "dataset" && key != "model" && key != "train" && key != "eval" && key != "seed") {
        throw ParseError("unknown config section '" + key + "'");
      }
    }
    if (j.contains("seed")) c.set_seed(j.at("seed").get<std::uint64_t>());
    if (j.contains("dataset")) c.dataset = dataset_config_from_json(j.at("dataset"), c.dataset);
    if (j.contains("model")) {
      const auto& m = j.at("model");
      c.model = model_config_from_json(m, c.model);
      if (m.contains("resolution") && !m.contains("decoder_channels")) {
        c.model.decoder_channels = default_decoder_channels(c.model.resolution);
      }
    }
    if (j.contains("train")) c.train = train_config_from_json(j.at("train"), c.train);
    if (j.contains("eval")) c.eval = eval_config_from_json(j.at("eval"), c.eval);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  const auto text = io::read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("config " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace nvs
