#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "rankedit/error.hpp"
#include "rankedit/harness.hpp"

namespace {

int fail(rankedit::ErrorKind kind, const std::string& message) {
  nlohmann::json err = {{"error", {{"kind", rankedit::to_string(kind)},
                                   {"message", message},
                                   {"exit_code", static_cast<int>(kind)}}}};
  std::cerr << err.dump() << '\n';
  return static_cast<int>(kind);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rank-one factual editing for causal text encoders"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::string seed_list;
  std::size_t layer = 0;
  app.add_option("--config", config_path, "Run configuration (JSON)")->required();
  app.add_option("--out", out_dir, "Output directory (overrides output_dir)");
  app.add_option("--seed-list", seed_list, "Seeds, e.g. 0-24 or 0,3,7");
  auto* layer_opt = app.add_option("--layer", layer, "Edit layer override");

  auto* init = app.add_subcommand("init-model", "Build vocabulary and random weights");
  auto* cov = app.add_subcommand("estimate-cov", "Cache key second moments per layer");
  auto* edit = app.add_subcommand("edit", "Apply one edit");
  auto* seq = app.add_subcommand("seq-edit", "Apply every dataset entry in sequence");
  auto* eval = app.add_subcommand("eval", "Score a model on a dataset");
  auto* sweep = app.add_subcommand("sweep-layers", "Edit one entry at each layer and score it");

  std::string entry;
  edit->add_option("--entry", entry, "Dataset entry id (when no request file is configured)");
  sweep->add_option("--entry", entry, "Dataset entry id");
  bool edit_each = false;
  eval->add_flag("--edit-each", edit_each, "Edit the clean model once per entry and score it");
  std::vector<std::size_t> layers;
  sweep->add_option("--layers", layers, "Layers to sweep (default: all)")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(rankedit::ErrorKind::kUsage, e.what());
  }

  try {
    rankedit::RunConfig cfg = rankedit::RunConfig::load(config_path);
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    if (!seed_list.empty()) cfg.seeds = rankedit::parse_seed_list(seed_list);
    if (layer_opt->count() > 0) cfg.layer = layer;
    if (!entry.empty()) cfg.entry = entry;
    if (!layers.empty()) cfg.layers = layers;

    nlohmann::json summary;
    if (*init) {
      summary = rankedit::cmd_init_model(cfg);
    } else if (*cov) {
      summary = rankedit::cmd_estimate_cov(cfg);
    } else if (*edit) {
      summary = rankedit::cmd_edit(cfg);
    } else if (*seq) {
      summary = rankedit::cmd_seq_edit(cfg);
    } else if (*eval) {
      summary = rankedit::cmd_eval(cfg, edit_each);
    } else if (*sweep) {
      summary = rankedit::cmd_sweep_layers(cfg);
    }
    std::cout << summary.dump(2) << '\n';
  } catch (const rankedit::Error& e) {
    return fail(e.kind(), e.what());
  } catch (const std::exception& e) {
    return fail(rankedit::ErrorKind::kData, e.what());
  }
  return 0;
}
