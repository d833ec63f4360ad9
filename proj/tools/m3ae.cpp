#include <torch/torch.h>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "m3ae/data.hpp"
#include "m3ae/error.hpp"
#include "m3ae/eval.hpp"
#include "m3ae/manifest.hpp"
#include "m3ae/trainer.hpp"

namespace fs = std::filesystem;
using namespace m3ae;

namespace {

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string data;
  std::string out;
  std::string pretrained;
  std::string resume;
  std::string checkpoint;
  bool from_scratch = false;
  std::vector<std::string> ablate;
  std::string subsets = "all";
  std::string device = "cpu";
  bool quiet = false;

  int subjects = 50;
  int side = 32;
  int patch_side = 16;
  int test = 0;
};

std::string command_line(int argc, char** argv) {
  std::string out;
  for (int i = 0; i < argc; ++i) out += (i ? " " : "") + std::string(argv[i]);
  return out;
}

void configure_runtime(const Options& o) {
  if (o.device != "cpu") throw ConfigError("--device " + o.device + " is not supported; this build runs on cpu");
  if (const char* env = std::getenv("M3AE_DETERMINISTIC"); env && std::string(env) == "1") {
    at::globalContext().setDeterministicAlgorithms(true, false);
    torch::set_num_threads(1);
  }
}

TrainConfig resolve_config(const Options& o, bool finetune) {
  TrainConfig c = TrainConfig::full_scale();
  if (!o.config_path.empty()) c = TrainConfig::load(o.config_path, c);
  if (o.seed) c.seed = *o.seed;
  for (const auto& mode : o.ablate) {
    if (mode == "zero-fill")
      c.fill = FillMode::kZero;
    else if (mode == "mean-fill")
      c.fill = FillMode::kMean;
    else if (mode == "no-patch-mask")
      c.patch_masking = false;
    else if (mode == "no-distill") {
      if (!finetune) throw ConfigError("--ablate no-distill applies to finetune only");
      c.distill = false;
    } else {
      throw ConfigError("unknown --ablate mode '" + mode + "' (zero-fill, mean-fill, no-distill, no-patch-mask)");
    }
  }
  c.validate();
  return c;
}

std::vector<Subject> load_preprocessed(const std::string& data) {
  if (data.empty()) throw ConfigError("--data is required");
  auto subjects = load_dataset(data);
  for (auto& s : subjects) {
    try {
      s.image = preprocess(s.image);
    } catch (const Error& e) {
      throw Error("subject " + s.id + ": " + e.what());
    }
  }
  return subjects;
}

RunManifest start_manifest(int argc, char** argv, const Options& o) {
  RunManifest m;
  m.command = command_line(argc, argv);
  m.config_path = o.config_path;
  m.started = utc_timestamp();
  if (!o.config_path.empty()) m.inputs[o.config_path] = hash_path(o.config_path);
  if (!o.data.empty()) m.inputs[o.data] = hash_path(o.data);
  for (const auto& p : {o.pretrained, o.resume, o.checkpoint})
    if (!p.empty()) m.inputs[p] = hash_path(p);
  return m;
}

void finish_manifest(RunManifest& m, const fs::path& out, const std::string& name) {
  m.finished = utc_timestamp();
  m.outputs = list_files(out);
  const auto path = write_manifest(out, name, m);
  std::cerr << "manifest " << path.string() << '\n';
}

int cmd_phantom(int argc, char** argv, const Options& o) {
  if (o.out.empty()) throw ConfigError("--out is required");
  PhantomConfig pc;
  pc.subject_count = o.subjects;
  pc.volume_side = o.side;
  pc.patch_side = o.patch_side;
  pc.seed = o.seed.value_or(7);
  if (o.test < 0 || o.test >= pc.subject_count) throw ConfigError("--test must lie in [0, subjects)");
  pc.validate();
  auto m = start_manifest(argc, argv, o);
  m.seed = pc.seed;
  m.config = {{"subjects", pc.subject_count}, {"side", pc.volume_side},       {"patch_side", pc.patch_side},
              {"modalities", pc.modality_count}, {"noise_sigma", pc.noise_sigma}, {"test", o.test}};
  const auto subjects = generate_phantom(pc);
  const fs::path out = o.out;
  const int train = pc.subject_count - o.test;
  for (int i = 0; i < pc.subject_count; ++i) {
    const fs::path dir = o.test == 0 ? out : out / (i < train ? "train" : "test");
    save_subject(subjects[i], dir / subjects[i].id);
  }
  finish_manifest(m, out, "phantom");
  std::cout << "wrote " << pc.subject_count << " subjects to " << out.string() << '\n';
  return 0;
}

int cmd_train(int argc, char** argv, const Options& o, Stage stage) {
  if (o.out.empty()) throw ConfigError("--out is required");
  const bool finetune = stage == Stage::kFinetune;
  if (!finetune && (o.from_scratch || !o.pretrained.empty()))
    throw ConfigError("--pretrained and --from-scratch apply to finetune only");
  if (finetune && o.from_scratch && !o.pretrained.empty())
    throw ConfigError("--pretrained and --from-scratch are mutually exclusive");
  if (finetune && !o.from_scratch && o.pretrained.empty() && o.resume.empty())
    throw ConfigError("finetune needs --pretrained CKPT, or --from-scratch to train without stage 1");
  const auto config = resolve_config(o, finetune);
  auto m = start_manifest(argc, argv, o);
  m.seed = config.seed;
  m.config = config.to_json();
  const auto train = load_preprocessed(o.data);

  RunOptions run;
  run.out_dir = o.out;
  run.quiet = o.quiet;
  run.from_scratch = o.from_scratch;
  if (!o.pretrained.empty()) run.pretrained = o.pretrained;
  if (!o.resume.empty()) run.resume = o.resume;
  const auto result = run_stage(config, stage, train, run);
  finish_manifest(m, o.out, to_string(stage));
  std::cout << "final checkpoint " << result.final_checkpoint.string() << '\n';
  return 0;
}

int cmd_eval(int argc, char** argv, const Options& o) {
  if (o.out.empty()) throw ConfigError("--out is required");
  if (o.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  auto m = start_manifest(argc, argv, o);
  const auto model = load_inference_model(load_checkpoint(o.checkpoint));
  m.config = {{"subsets", o.subsets}, {"threshold", model.threshold}};
  const auto subsets = parse_subsets(o.subsets, model.modality_names);
  const auto subjects = load_preprocessed(o.data);
  const auto results = evaluate(model, subjects, subsets);
  const auto summary = write_report(o.out, results, subsets, model.modality_names);
  std::cout << "mean dsc";
  for (int r = 0; r < 3; ++r) std::cout << ' ' << kRegionNames[r] << '=' << summary.mean_dsc[r];
  std::cout << '\n';
  finish_manifest(m, o.out, "eval");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Missing-modality brain tumour segmentation with masked-autoencoder pretraining"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "Config file (key = value lines)")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Random seed");
    sub->add_option("--out", o.out, "Output directory");
    sub->add_option("--device", o.device, "Compute device")->default_val("cpu");
    sub->add_flag("--quiet", o.quiet, "Suppress per-epoch progress");
  };

  auto* phantom = app.add_subcommand("phantom", "Generate a synthetic phantom dataset");
  add_common(phantom);
  phantom->add_option("--subjects", o.subjects, "Number of subjects")->default_val(50);
  phantom->add_option("--side", o.side, "Cube side in voxels")->default_val(32);
  phantom->add_option("--patch-side", o.patch_side, "Patch side the volume must divide into")->default_val(16);
  phantom->add_option("--test", o.test, "Put the last N subjects under test/ and the rest under train/");

  auto* pretrain = app.add_subcommand("pretrain", "Stage 1: masked reconstruction with a learned substitute");
  auto* finetune = app.add_subcommand("finetune", "Stage 2: segmentation with self-distillation");
  for (auto* sub : {pretrain, finetune}) {
    add_common(sub);
    sub->add_option("--data", o.data, "Training dataset directory")->required();
    sub->add_option("--ablate", o.ablate, "zero-fill | mean-fill | no-distill | no-patch-mask");
    sub->add_option("--resume", o.resume, "Checkpoint of the same stage to continue from");
  }
  finetune->add_option("--pretrained", o.pretrained, "Stage-1 checkpoint");
  finetune->add_flag("--from-scratch", o.from_scratch, "Train without a stage-1 checkpoint");

  auto* eval = app.add_subcommand("eval", "Evaluate every modality subset on a dataset");
  add_common(eval);
  eval->add_option("--data", o.data, "Evaluation dataset directory")->required();
  eval->add_option("--checkpoint", o.checkpoint, "Fine-tuned checkpoint")->required();
  eval->add_option("--subsets", o.subsets, "all, or comma-separated subsets such as flair,t1+t2")->default_val("all");

  CLI11_PARSE(app, argc, argv);

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    configure_runtime(o);
    if (name == "phantom") return cmd_phantom(argc, argv, o);
    if (name == "pretrain") return cmd_train(argc, argv, o, Stage::kPretrain);
    if (name == "finetune") return cmd_train(argc, argv, o, Stage::kFinetune);
    return cmd_eval(argc, argv, o);
  } catch (const std::exception& e) {
    std::cerr << "m3ae " << name << ": error: " << e.what() << '\n';
    return 1;
  }
}
