#include <CLI11.hpp>

#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "eegdm/cli/commands.hpp"

using namespace eegdm;
using namespace eegdm::cli;

namespace {

enum Exit { kOk = 0, kInternal = 1, kConfig = 2, kData = 3, kNumeric = 4 };

int fail(int code, const std::string& kind, const std::string& message) {
  std::cerr << Json{{"error", kind}, {"message", message}}.dump() << std::endl;
  return code;
}

// Flag -> config key bindings collected while building the parser.
struct Bindings {
  std::map<std::string, std::string> values;  // key -> text
  std::vector<std::pair<CLI::Option*, std::string>> flags;

  void text(CLI::App* app, const std::string& name, const std::string& key, const std::string& help) {
    app->add_option_function<std::string>(
        name, [this, key](const std::string& v) { values[key] = v; }, help)
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  }
  void toggle(CLI::App* app, const std::string& name, const std::string& key, const std::string& help) {
    flags.emplace_back(app->add_flag(name, help), key);
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diffusion-pretrained state-space backbone and latent fusion classifier for EEG segments"};
  app.require_subcommand(1);
  app.fallthrough();
  std::vector<std::string> config_files, sets;
  bool verbose = false;
  Bindings bind;

  app.add_option("-c,--config", config_files, "JSON config file (flat dotted keys); later files win")
      ->check(CLI::ExistingFile);
  app.add_option("--set", sets, "Override one config key, as key=value");
  app.add_flag("-v,--verbose", verbose, "Progress on stderr");
  bind.text(&app, "--seed", "seed", "Seed for all randomness");
  bind.text(&app, "--threads", "threads", "Worker thread cap");
  bind.text(&app, "--data", "data.root", "Dataset directory (holds manifest.json)");
  bind.text(&app, "--run", "run.dir", "Output directory for checkpoints, caches and reports");

  auto* synth = app.add_subcommand("synth", "Write a synthetic frequency-band dataset");
  bind.text(synth, "--imbalance", "synth.imbalance", "Relative class sizes, e.g. 10:1");
  bind.text(synth, "--n-per-class", "synth.n_per_class", "Train+valid segments per class");
  bind.text(synth, "--test-per-class", "synth.test_per_class", "Test segments per class");
  bind.text(synth, "--classes", "synth.classes", "Number of classes");

  auto* pretrain = app.add_subcommand("pretrain", "Diffusion pretraining of the backbone");
  bind.text(pretrain, "--schedule", "backbone.schedule", "Noise schedule: cosine or linear");
  bind.text(pretrain, "--epochs", "pretrain.epochs", "Training epochs");

  auto* extract = app.add_subcommand("extract", "Cache pooled backbone latents for every split");
  auto* finetune = app.add_subcommand("finetune", "Train the fusion classifier over several seeds");
  auto* eval = app.add_subcommand("eval", "Score fine-tuned models on a split");
  for (auto* sub : {extract, finetune, eval}) {
    bind.text(sub, "--tap", "extract.tap", "Latent tap: gate or filter");
    bind.text(sub, "--pool", "extract.pool", "Temporal pooling: std or avg");
    bind.text(sub, "--pools", "extract.pools", "Temporal pools per segment");
    bind.text(sub, "--mode", "extract.mode", "Extraction input: none or noiseless");
    bind.text(sub, "--step", "extract.step", "Diffusion step for extraction");
  }
  for (auto* sub : {finetune, eval}) {
    bind.text(sub, "--layers", "lft.layers", "Layer subset: all, first-half, second-half, q1..q4 or a list");
    bind.text(sub, "--fusion", "lft.fusion", "Fusion strategy: base, none or mean");
    bind.toggle(sub, "--class-weights", "finetune.class_weights", "Inverse-frequency class weights");
    bind.text(sub, "--seeds", "finetune.seeds", "Number of fine-tuning seeds");
  }
  bind.text(finetune, "--epochs", "finetune.epochs", "Maximum epochs");
  bind.text(eval, "--split", "eval.split", "Split to score: train, valid or test");
  bind.text(eval, "--resample-test", "eval.resample_test", "Resample the split to this rate (Hz)");

  auto* generate = app.add_subcommand("generate", "Ancestral samples from the pretrained backbone");
  bind.text(generate, "--count", "generate.count", "Segments to generate");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(kConfig, "config", e.what());
  }

  try {
    RunConfig rc;
    for (const auto& f : config_files) rc.merge_file(f);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
      rc.set_text(s.substr(0, eq), s.substr(eq + 1));
    }
    for (const auto& [key, text] : bind.values) rc.set_text(key, text);
    for (const auto& [opt, key] : bind.flags)
      if (opt->count()) rc.set(key, true);
    validate(rc);

    Context ctx;
    if (verbose) ctx.progress = &std::cerr;
    const std::map<CLI::App*, std::function<Json(const RunConfig&, const Context&)>> commands{
        {synth, cmd_synth},       {pretrain, cmd_pretrain}, {extract, cmd_extract},
        {finetune, cmd_finetune}, {eval, cmd_eval},         {generate, cmd_generate}};
    for (const auto& [sub, fn] : commands)
      if (sub->parsed()) std::cout << fn(rc, ctx).dump(2) << std::endl;
    return kOk;
  } catch (const ConfigError& e) {
    return fail(kConfig, "config", e.what());
  } catch (const NumericError& e) {
    return fail(kNumeric, "numeric", e.what());
  } catch (const DataError& e) {
    return fail(kData, "data", e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(kData, "data", e.what());
  } catch (const std::invalid_argument& e) {
    return fail(kConfig, "config", e.what());
  } catch (const std::out_of_range& e) {
    return fail(kConfig, "config", e.what());
  } catch (const std::exception& e) {
    return fail(kInternal, "internal", e.what());
  }
}
