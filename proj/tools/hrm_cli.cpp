// Copyright 2026 The hrm-vision Authors.
// SPDX-License-Identifier: Apache-2.0

// Command-line front end: train, eval and fetch.

#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

#include "fetch.hpp"
#include "hrm/hrm.hpp"

namespace {

enum exit_code { ok = 0, failure = 1, usage = 2, data = 3, numeric = 4 };

hrm::key_values parse_overrides(const std::vector<std::string>& sets) {
  hrm::key_values kv;
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos)
      throw hrm::config_error("--set expects key=value, got '" + s + "'");
    kv[hrm::trim(s.substr(0, eq))] = hrm::trim(s.substr(eq + 1));
  }
  return kv;
}

}  // namespace

int main(int argc, char** argv) {
  hrm::tune_allocator();
  CLI::App app{"Hierarchical reasoning model and CNN baseline for image classification"};
  app.require_subcommand(1);

  std::string model, dataset, data_dir, out_dir, config_file, checkpoint, base_url;
  std::size_t epochs = 0, seed = 0;
  std::vector<std::string> sets;

  auto* train = app.add_subcommand("train", "Train a model and write metrics, plots and a checkpoint");
  train->add_option("--model", model, "hrm or cnn")->check(CLI::IsMember({"hrm", "cnn"}));
  train->add_option("--dataset", dataset, "mnist, cifar10 or cifar100")
      ->check(CLI::IsMember({"mnist", "cifar10", "cifar100"}));
  auto* epochs_opt = train->add_option("--epochs", epochs, "Training epochs");
  auto* seed_opt = train->add_option("--seed", seed, "Run seed");
  train->add_option("--data-dir", data_dir, "Directory holding mnist/, cifar-10-batches-bin/, ...");
  train->add_option("--out-dir", out_dir, "Where artifacts are written");
  train->add_option("--config", config_file, "key=value configuration file")->check(CLI::ExistingFile);
  train->add_option("--set", sets, "Override any configuration key (key=value), repeatable");

  auto* eval = app.add_subcommand("eval", "Score a checkpoint on its test split");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint manifest")->required()->check(CLI::ExistingFile);
  eval->add_option("--dataset", dataset, "Dataset override")
      ->check(CLI::IsMember({"mnist", "cifar10", "cifar100"}));
  eval->add_option("--data-dir", data_dir, "Data directory override");
  eval->add_option("--set", sets, "Override a configuration key (key=value), repeatable");

  auto* fetch = app.add_subcommand("fetch", "Download and unpack a dataset");
  fetch->add_option("--dataset", dataset, "mnist, cifar10 or cifar100")
      ->required()
      ->check(CLI::IsMember({"mnist", "cifar10", "cifar100"}));
  fetch->add_option("--data-dir", data_dir, "Destination root")->default_val("data");
  fetch->add_option("--base-url", base_url, "Mirror replacing the published base URL");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      hrm::key_values kv;
      if (!config_file.empty()) kv = hrm::read_key_values(config_file);
      for (const auto& [k, v] : parse_overrides(sets)) kv[k] = v;
      if (!model.empty()) kv["model"] = model;
      if (!dataset.empty()) kv["dataset"] = dataset;
      if (*epochs_opt) kv["epochs"] = std::to_string(epochs);
      if (*seed_opt) kv["seed"] = std::to_string(seed);
      if (!data_dir.empty()) kv["data_dir"] = data_dir;
      if (!out_dir.empty()) kv["out_dir"] = out_dir;
      const auto cfg = hrm::run_config::resolve(kv);
      hrm::run(cfg, std::cout);
    } else if (eval->parsed()) {
      auto kv = parse_overrides(sets);
      if (!dataset.empty()) kv["dataset"] = dataset;
      if (!data_dir.empty()) kv["data_dir"] = data_dir;
      hrm::evaluate_checkpoint(checkpoint, kv, std::cout);
    } else if (fetch->parsed()) {
      curl_global_init(CURL_GLOBAL_DEFAULT);
      auto src = dataset == "mnist"     ? hrm::fetch::mnist_source()
                 : dataset == "cifar10" ? hrm::fetch::cifar10_source()
                                        : hrm::fetch::cifar100_source();
      if (!base_url.empty()) src.base_url = base_url.back() == '/' ? base_url : base_url + "/";
      hrm::fetch::fetch(src, data_dir, [](const std::string& m) { std::cout << m << std::endl; });
      curl_global_cleanup();
    }
  } catch (const hrm::config_error& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return usage;
  } catch (const hrm::numeric_error& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return numeric;
  } catch (const hrm::data_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return data;
  } catch (const hrm::format_error& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return data;
  } catch (const hrm::io_error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return data;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return failure;
  }
  return ok;
}
