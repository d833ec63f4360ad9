#include "m3ae/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "m3ae/error.hpp"
#include "m3ae/prefetch.hpp"

namespace m3ae {
namespace {

constexpr std::uint64_t kStageKey[2] = {0x5354414745310000ull, 0x5354414745320000ull};
constexpr std::uint64_t kOrderStream = 1;
constexpr std::uint64_t kItemStream = 2;
constexpr std::uint64_t kInitStream = 3;

std::uint64_t stage_key(Stage s) { return kStageKey[s == Stage::kPretrain ? 0 : 1]; }

std::uint64_t derived_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  return Rng::derive(seed, keys).next_u64() >> 1;
}

std::vector<int> epoch_order(std::size_t n, std::uint64_t seed, Stage stage, int epoch) {
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng::derive(seed, {stage_key(stage), kOrderStream, static_cast<std::uint64_t>(epoch)});
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_int(0, static_cast<std::int64_t>(i) - 1)]);
  return order;
}

torch::Tensor dropped_channels(const ModalitySet& kept, std::int64_t n) {
  auto m = torch::zeros({n, 1, 1, 1}, torch::kBool);
  for (std::int64_t c = 0; c < n; ++c)
    if (!kept.contains(static_cast<int>(c))) m[c] = true;
  return m;
}

void set_lr(torch::optim::Adam& opt, double lr) {
  for (auto& group : opt.param_groups()) static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
}

void require_finite(const torch::Tensor& t, const std::string& what, std::int64_t step) {
  if (!std::isfinite(t.item<double>()))
    throw NumericError(what + " is not finite at step " + std::to_string(step));
}

std::string hex(const std::vector<std::uint8_t>& bytes) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (auto b : bytes) {
    out += digits[b >> 4];
    out += digits[b & 15];
  }
  return out;
}

std::string fmt(double v, int digits = 9) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", digits, v);
  return buf;
}

// Keeps the header and every row whose leading step column is below `limit`.
void truncate_log(const std::filesystem::path& path, std::int64_t limit) {
  std::ifstream in(path);
  if (!in) return;
  std::vector<std::string> keep;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      keep.push_back(line);
      header = false;
      continue;
    }
    if (std::stoll(line.substr(0, line.find(','))) < limit) keep.push_back(line);
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : keep) out << l << '\n';
}

}  // namespace

std::string to_string(Stage stage) { return stage == Stage::kPretrain ? "pretrain" : "finetune"; }

double lr_at(std::int64_t step, std::int64_t total_steps, double lr0) {
  if (total_steps <= 0) return lr0;
  const double t = static_cast<double>(std::clamp<std::int64_t>(step, 0, total_steps)) / static_cast<double>(total_steps);
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

PretrainItem prepare_pretrain_item(const Subject& subject, int index, const TrainConfig& config, Rng& rng) {
  PretrainItem item;
  item.subject = index;
  const int n = static_cast<int>(subject.image.modalities());
  item.crop = draw_crop(subject.image.spatial(), config.crop_side, rng);
  item.aug = draw_augment(n, rng);
  const SpatialShape shape{config.crop_side, config.crop_side, config.crop_side};
  item.mask = config.patch_masking ? sample_pretrain_mask(n, shape, config.patch_side, config.mask_rate, rng)
                                   : sample_dropout_mask(n, shape, config.patch_side, rng);
  const Subject view = apply_augment(apply_crop(subject, item.crop), item.aug);
  item.x = view.image.voxels;
  item.mask_voxels = item.mask.voxel_mask();
  return item;
}

FinetuneItem prepare_finetune_item(const Subject& subject, int index, const TrainConfig& config, Rng& rng) {
  FinetuneItem item;
  item.subject = index;
  const int n = static_cast<int>(subject.image.modalities());
  item.crop = draw_crop(subject.image.spatial(), config.crop_side, rng);
  item.aug = draw_augment(n, rng);
  std::tie(item.view_a, item.view_b) = sample_two_distinct_situations(n, rng);
  const Subject view = apply_augment(apply_crop(subject, item.crop), item.aug);
  item.x = view.image.voxels;
  item.regions = labels_to_regions(view.label).regions;
  return item;
}

PretrainLoss pretrain_loss(UNet3d& net, const torch::Tensor& x, const torch::Tensor& mask, const torch::Tensor& fill,
                           bool regularize, const LossWeights& weights) {
  const auto input = substitute_masked(x, fill, mask);
  const auto out = net->forward(input, HeadMode::kPretrain);
  PretrainLoss loss;
  loss.mse = recon_mse(out.recon, x);
  loss.reg = regularize ? l2_reg(fill) : torch::zeros({}, x.options());
  loss.total = loss.mse + weights.gamma_reg * loss.reg;
  return loss;
}

FinetuneLoss finetune_loss(UNet3d& net, const torch::Tensor& x, const torch::Tensor& regions, const ModalitySet& a,
                           const ModalitySet& b, const torch::Tensor& fill, const LossWeights& weights, bool distill) {
  const auto n = x.size(0);
  const auto view_a = substitute_masked(x, fill, dropped_channels(a, n));
  const auto view_b = substitute_masked(x, fill, dropped_channels(b, n));
  const auto out = net->forward(torch::stack({view_a, view_b}), HeadMode::kFinetune);
  std::map<int, torch::Tensor> probs_a, probs_b;
  for (const auto& [div, p] : out.seg_probs) {
    probs_a[div] = p[0];
    probs_b[div] = p[1];
  }
  const auto divisors = net->config().supervision_divisors();
  const auto seg0 = seg_loss(probs_a, regions, divisors, weights.dice_smooth);
  const auto seg1 = seg_loss(probs_b, regions, divisors, weights.dice_smooth);
  const auto con = distill ? consistency(out.bottleneck[0], out.bottleneck[1]) : torch::zeros({}, x.options());
  return finetune_objective(seg0, seg1, con, weights);
}

std::vector<double> modality_means(const std::vector<Subject>& subjects) {
  if (subjects.empty()) throw ConfigError("cannot compute modality means of an empty dataset");
  const auto n = subjects.front().image.modalities();
  std::vector<double> sum(n, 0.0);
  std::vector<double> count(n, 0.0);
  for (const auto& s : subjects) {
    const auto v = s.image.voxels.to(torch::kFloat64);
    const auto fg = (v != 0).any(0);
    for (std::int64_t m = 0; m < n; ++m) {
      sum[m] += v[m].masked_select(fg).sum().item<double>();
      count[m] += static_cast<double>(fg.sum().item<std::int64_t>());
    }
  }
  std::vector<double> out(n);
  for (std::int64_t m = 0; m < n; ++m) out[m] = count[m] > 0 ? sum[m] / count[m] : 0.0;
  return out;
}

namespace {

SubstituteImage make_fill(const TrainConfig& config, const std::vector<Subject>& train, std::uint64_t seed) {
  const std::int64_t c = config.crop_side;
  const std::int64_t n = config.net.in_channels;
  switch (config.fill) {
    case FillMode::kInversion: return init_substitute({n, c, c, c}, seed);
    case FillMode::kZero: return SubstituteImage::constant(std::vector<double>(n, 0.0), {c, c, c}, FillMode::kZero);
    case FillMode::kMean: return SubstituteImage::constant(modality_means(train), {c, c, c}, FillMode::kMean);
  }
  throw ConfigError("unknown fill mode");
}

std::int64_t steps_per_epoch(const TrainConfig& config, Stage stage, std::size_t subjects) {
  if (stage == Stage::kFinetune) return static_cast<std::int64_t>(subjects);
  return static_cast<std::int64_t>((subjects + config.batch - 1) / config.batch);
}

}  // namespace

TrainState make_pretrain_state(const TrainConfig& config, const std::vector<Subject>& train) {
  config.validate();
  TrainState state;
  state.config = config;
  state.stage = Stage::kPretrain;
  state.net = make_unet(config.net, HeadMode::kPretrain, derived_seed(config.seed, {kInitStream, 1}));
  state.optimizer = std::make_shared<torch::optim::Adam>(state.net->parameters(), torch::optim::AdamOptions(config.lr0));
  state.substitute = make_fill(config, train, derived_seed(config.seed, {kInitStream, 2}));
  state.total_steps = config.pretrain_epochs * steps_per_epoch(config, Stage::kPretrain, train.size());
  return state;
}

TrainState make_finetune_state(const TrainConfig& config, const Checkpoint* pretrained,
                               const std::vector<Subject>& train) {
  config.validate();
  TrainState state;
  if (pretrained) {
    if (pretrained->meta.at("stage").get<std::string>() != to_string(Stage::kPretrain))
      throw ConfigError("fine-tuning must start from a stage-1 (pretrain) checkpoint");
    TrainState pre = from_checkpoint(*pretrained);
    const auto& pc = pre.config;
    if (pc.net.in_channels != config.net.in_channels || pc.net.base_channels != config.net.base_channels ||
        pc.net.levels != config.net.levels || pc.net.blocks_per_level != config.net.blocks_per_level ||
        pc.net.groups_per_norm != config.net.groups_per_norm)
      throw ConfigError("network configuration differs from the pretrained checkpoint");
    if (pc.crop_side != config.crop_side) throw ConfigError("crop_side differs from the pretrained checkpoint");
    state.net = pre.net;
    swap_head(state.net, derived_seed(config.seed, {kInitStream, 3}));
    if (config.fill != pre.substitute.mode())
      throw ConfigError("fill mode " + to_string(config.fill) + " differs from the pretrained checkpoint (" +
                        to_string(pre.substitute.mode()) + "); pretrain with the same ablation");
    if (config.patch_masking != pc.patch_masking)
      throw ConfigError(std::string("patch masking is ") + (config.patch_masking ? "on" : "off") +
                        " but the pretrained checkpoint was trained with it " + (pc.patch_masking ? "on" : "off") +
                        "; pretrain with the same ablation");
    state.substitute = pre.substitute;
  } else {
    state.net = make_unet(config.net, HeadMode::kFinetune, derived_seed(config.seed, {kInitStream, 1}));
    state.substitute = make_fill(config, train, derived_seed(config.seed, {kInitStream, 2}));
  }
  freeze_substitute(state.substitute);
  state.config = config;
  state.stage = Stage::kFinetune;
  state.optimizer = std::make_shared<torch::optim::Adam>(state.net->parameters(), torch::optim::AdamOptions(config.lr0));
  state.total_steps = config.finetune_epochs * steps_per_epoch(config, Stage::kFinetune, train.size());
  return state;
}

StepLosses pretrain_step(TrainState& state, const std::vector<PretrainItem>& batch) {
  if (state.stage != Stage::kPretrain) throw ConfigError("pretrain_step on a fine-tuning state");
  if (batch.empty()) throw ConfigError("empty pretraining batch");
  std::vector<torch::Tensor> xs, ms;
  for (const auto& item : batch) {
    xs.push_back(item.x);
    ms.push_back(item.mask_voxels);
  }
  const auto x = torch::stack(xs);
  const auto mask = torch::stack(ms);

  StepLosses out;
  out.step = state.global_step;
  out.epoch = state.epoch;
  out.lr = lr_at(state.global_step, state.total_steps, state.config.lr0);
  set_lr(*state.optimizer, out.lr);
  state.optimizer->zero_grad();
  state.substitute.zero_grad();

  const auto loss = pretrain_loss(state.net, x, mask, state.substitute.voxels(), state.substitute.trainable(),
                                  state.config.weights);
  require_finite(loss.total, "pretraining loss", out.step);
  loss.total.backward();
  state.optimizer->step();
  if (state.substitute.trainable()) inversion_step(state.substitute, out.lr);

  out.mse = loss.mse.item<double>();
  out.reg = loss.reg.item<double>();
  out.total = loss.total.item<double>();
  ++state.global_step;
  return out;
}

StepLosses finetune_step(TrainState& state, const FinetuneItem& item) {
  if (state.stage != Stage::kFinetune) throw ConfigError("finetune_step on a pretraining state");
  StepLosses out;
  out.step = state.global_step;
  out.epoch = state.epoch;
  out.lr = lr_at(state.global_step, state.total_steps, state.config.lr0);
  set_lr(*state.optimizer, out.lr);
  state.optimizer->zero_grad();

  const auto loss = finetune_loss(state.net, item.x, item.regions, item.view_a, item.view_b,
                                  state.substitute.voxels(), state.config.weights, state.config.distill);
  require_finite(loss.total, "fine-tuning loss", out.step);
  loss.total.backward();
  state.optimizer->step();

  out.seg0 = loss.seg0.item<double>();
  out.seg1 = loss.seg1.item<double>();
  out.con = loss.con.item<double>();
  out.total = loss.total.item<double>();
  ++state.global_step;
  return out;
}

Checkpoint to_checkpoint(TrainState& state) {
  Checkpoint ckpt;
  ckpt.meta["format"] = "m3ae-checkpoint";
  ckpt.meta["stage"] = to_string(state.stage);
  ckpt.meta["epoch"] = state.epoch;
  ckpt.meta["global_step"] = state.global_step;
  ckpt.meta["total_steps"] = state.total_steps;
  ckpt.meta["config"] = state.config.to_json();
  ckpt.meta["heads"] = state.net->has_segmentation_heads() ? "segmentation" : "regression";
  ckpt.meta["substitute"] = {{"trainable", state.substitute.trainable()},
                             {"mode", to_string(state.substitute.mode())}};
  ckpt.meta["rng"] = {{"seed", state.config.seed}, {"next_epoch", state.epoch}};
  put_module(ckpt, *state.net, "net/");
  std::vector<std::pair<std::string, torch::Tensor>> named;
  for (const auto& item : state.net->named_parameters()) named.emplace_back(item.key(), item.value());
  put_adam(ckpt, *state.optimizer, named, "adam/");
  ckpt.put("x_sub", state.substitute.voxels());
  if (state.substitute.trainable() && state.substitute.has_optimizer())
    put_adam(ckpt, state.substitute.optimizer(), {{"x_sub", state.substitute.voxels()}}, "x_sub_adam/");
  return ckpt;
}

TrainState from_checkpoint(const Checkpoint& ckpt) {
  TrainState state;
  state.config = TrainConfig::from_json(ckpt.meta.at("config"));
  state.stage = ckpt.meta.at("stage").get<std::string>() == "pretrain" ? Stage::kPretrain : Stage::kFinetune;
  state.epoch = ckpt.meta.at("epoch");
  state.global_step = ckpt.meta.at("global_step");
  state.total_steps = ckpt.meta.at("total_steps");
  const bool seg = ckpt.meta.at("heads").get<std::string>() == "segmentation";
  state.net = UNet3d(state.config.net);
  if (seg)
    state.net->attach_segmentation_heads();
  else
    state.net->attach_regression_head();
  load_module(ckpt, *state.net, "net/");
  state.optimizer = std::make_shared<torch::optim::Adam>(state.net->parameters(),
                                                         torch::optim::AdamOptions(state.config.lr0));
  std::vector<std::pair<std::string, torch::Tensor>> named;
  for (const auto& item : state.net->named_parameters()) named.emplace_back(item.key(), item.value());
  load_adam(ckpt, *state.optimizer, named, "adam/");
  const auto& sub = ckpt.meta.at("substitute");
  state.substitute = SubstituteImage::from_tensor(ckpt.get("x_sub"), sub.at("trainable").get<bool>(),
                                                  fill_mode_from_string(sub.at("mode")));
  if (state.substitute.trainable())
    load_adam(ckpt, state.substitute.optimizer(), {{"x_sub", state.substitute.voxels()}}, "x_sub_adam/");
  return state;
}

std::string StepTrace::csv_row() const {
  std::ostringstream os;
  os << step << ',' << epoch << ',';
  for (std::size_t i = 0; i < subjects.size(); ++i) os << (i ? ";" : "") << subjects[i];
  os << ',';
  for (std::size_t i = 0; i < crops.size(); ++i)
    os << (i ? ";" : "") << crops[i].offset[0] << ':' << crops[i].offset[1] << ':' << crops[i].offset[2];
  os << ',';
  for (std::size_t i = 0; i < flips.size(); ++i)
    os << (i ? ";" : "") << flips[i][0] << flips[i][1] << flips[i][2];
  os << ',';
  for (std::size_t i = 0; i < masks.size(); ++i) os << (i ? ";" : "") << masks[i];
  os << ',';
  for (std::size_t i = 0; i < kept.size(); ++i) os << (i ? ";" : "") << kept[i];
  return os.str();
}

RunResult run_stage(const TrainConfig& config, Stage stage, const std::vector<Subject>& train,
                    const RunOptions& options) {
  namespace fs = std::filesystem;
  config.validate();
  if (train.empty()) throw ConfigError("no training subjects");
  for (const auto& s : train) {
    if (s.image.modalities() != config.net.in_channels)
      throw ConfigError("subject " + s.id + " has " + std::to_string(s.image.modalities()) + " modalities, expected " +
                        std::to_string(config.net.in_channels));
    if (s.image.available_set() != ModalitySet::all(config.net.in_channels))
      throw ConfigError("training subject " + s.id + " is missing modalities");
    for (auto d : s.image.spatial())
      if (d < config.crop_side) throw ShapeError("subject " + s.id + " is smaller than the training crop");
  }

  TrainState state;
  if (options.resume) {
    state = from_checkpoint(load_checkpoint(*options.resume));
    if (state.stage != stage) throw ConfigError("resume checkpoint belongs to the other stage");
  } else if (stage == Stage::kPretrain) {
    state = make_pretrain_state(config, train);
  } else if (options.pretrained) {
    const auto ckpt = load_checkpoint(*options.pretrained);
    state = make_finetune_state(config, &ckpt, train);
  } else if (options.from_scratch) {
    state = make_finetune_state(config, nullptr, train);
  } else {
    throw ConfigError("fine-tuning needs a stage-1 checkpoint (--pretrained) or the explicit --from-scratch flag");
  }
  const TrainConfig& cfg = state.config;

  fs::create_directories(options.out_dir / "checkpoints");
  const auto name = to_string(stage);
  RunResult result;
  result.loss_csv = options.out_dir / (name + "_loss.csv");
  result.trace_csv = options.out_dir / (name + "_trace.csv");
  if (options.resume) {
    truncate_log(result.loss_csv, state.global_step);
    truncate_log(result.trace_csv, state.global_step);
  } else {
    std::ofstream(result.loss_csv, std::ios::trunc)
        << (stage == Stage::kPretrain ? "step,epoch,lr,l_mse,l_reg,total\n"
                                      : "step,epoch,lr,l_seg0,l_seg1,l_con,total\n");
    std::ofstream(result.trace_csv, std::ios::trunc) << "step,epoch,subjects,crops,flips,masks,kept\n";
  }
  std::ofstream loss_log(result.loss_csv, std::ios::app);
  std::ofstream trace_log(result.trace_csv, std::ios::app);

  const int epochs = stage == Stage::kPretrain ? cfg.pretrain_epochs : cfg.finetune_epochs;
  const auto per_epoch = steps_per_epoch(cfg, stage, train.size());
  const std::uint64_t key = stage_key(stage);

  auto save_epoch_checkpoint = [&](int epoch) {
    char file[64];
    std::snprintf(file, sizeof(file), "%s_e%04d.ckpt", name.c_str(), epoch);
    save_checkpoint(options.out_dir / "checkpoints" / file, to_checkpoint(state));
  };

  for (int epoch = state.epoch; epoch < epochs; ++epoch) {
    const auto order = epoch_order(train.size(), cfg.seed, stage, epoch);
    double epoch_sum = 0.0;

    if (stage == Stage::kPretrain) {
      using Batch = std::vector<PretrainItem>;
      OrderedPrefetcher<Batch> loader(
          static_cast<std::size_t>(per_epoch),
          [&](std::size_t k) {
            Batch batch;
            for (std::size_t p = k * cfg.batch; p < std::min(train.size(), (k + 1) * cfg.batch); ++p) {
              Rng rng = Rng::derive(cfg.seed, {key, kItemStream, static_cast<std::uint64_t>(epoch), p});
              batch.push_back(prepare_pretrain_item(train[order[p]], order[p], cfg, rng));
            }
            return batch;
          },
          cfg.loader_workers, static_cast<std::size_t>(cfg.queue_depth));
      for (std::int64_t k = 0; k < per_epoch; ++k) {
        const auto batch = loader.next();
        const auto losses = pretrain_step(state, batch);
        StepTrace trace{losses.step, epoch, {}, {}, {}, {}, {}};
        for (const auto& item : batch) {
          trace.subjects.push_back(item.subject);
          trace.crops.push_back(item.crop);
          trace.flips.push_back(item.aug.flip);
          trace.masks.push_back(hex(item.mask.serialize()));
        }
        loss_log << losses.step << ',' << epoch << ',' << fmt(losses.lr, 17) << ',' << fmt(losses.mse) << ','
                 << fmt(losses.reg) << ',' << fmt(losses.total) << '\n';
        trace_log << trace.csv_row() << '\n';
        epoch_sum += losses.mse;
        if (options.on_step) options.on_step(losses, trace);
      }
    } else {
      OrderedPrefetcher<FinetuneItem> loader(
          static_cast<std::size_t>(per_epoch),
          [&](std::size_t k) {
            Rng rng = Rng::derive(cfg.seed, {key, kItemStream, static_cast<std::uint64_t>(epoch), k});
            return prepare_finetune_item(train[order[k]], order[k], cfg, rng);
          },
          cfg.loader_workers, static_cast<std::size_t>(cfg.queue_depth));
      for (std::int64_t k = 0; k < per_epoch; ++k) {
        const auto item = loader.next();
        const auto losses = finetune_step(state, item);
        StepTrace trace{losses.step, epoch, {item.subject}, {item.crop}, {item.aug.flip}, {},
                        {item.view_a.bits(), item.view_b.bits()}};
        loss_log << losses.step << ',' << epoch << ',' << fmt(losses.lr, 17) << ',' << fmt(losses.seg0) << ','
                 << fmt(losses.seg1) << ',' << fmt(losses.con) << ',' << fmt(losses.total) << '\n';
        trace_log << trace.csv_row() << '\n';
        epoch_sum += losses.total;
        if (options.on_step) options.on_step(losses, trace);
      }
    }
    loss_log.flush();
    trace_log.flush();

    state.epoch = epoch + 1;
    result.epoch_mean_loss.push_back(epoch_sum / static_cast<double>(per_epoch));
    if (!options.quiet)
      std::cerr << name << " epoch " << state.epoch << "/" << epochs << " mean "
                << (stage == Stage::kPretrain ? "l_mse " : "loss ") << fmt(result.epoch_mean_loss.back(), 6)
                << '\n';
    const bool stopping = options.stop_after_epoch > 0 && state.epoch >= options.stop_after_epoch;
    if (state.epoch % cfg.checkpoint_every == 0 || state.epoch == epochs || stopping) save_epoch_checkpoint(state.epoch);
    if (stopping && state.epoch < epochs) return result;
  }

  result.final_checkpoint = options.out_dir / (name + "_final.ckpt");
  save_checkpoint(result.final_checkpoint, to_checkpoint(state));
  if (stage == Stage::kPretrain) export_substitute(state.substitute, options.out_dir / "x_sub");
  return result;
}

}  // namespace m3ae
