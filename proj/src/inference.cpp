#include <algorithm>

#include "m3ae/data.hpp"
#include "m3ae/error.hpp"
#include "m3ae/eval.hpp"
#include "m3ae/trainer.hpp"

namespace m3ae {

std::vector<std::int64_t> window_starts(std::int64_t dim, std::int64_t window) {
  if (window <= 0 || dim < window)
    throw ShapeError("volume side " + std::to_string(dim) + " is smaller than the inference window " +
                     std::to_string(window));
  const auto stride = std::max<std::int64_t>(window / 2, 1);
  std::vector<std::int64_t> starts;
  for (std::int64_t s = 0; s + window < dim; s += stride) starts.push_back(s);
  starts.push_back(dim - window);
  return starts;
}

InferenceModel load_inference_model(const Checkpoint& ckpt) {
  if (ckpt.meta.value("stage", "") != "finetune" || ckpt.meta.value("heads", "") != "segmentation")
    throw ConfigError("checkpoint has no trained segmentation heads; evaluate a fine-tuning checkpoint");
  TrainState state = from_checkpoint(ckpt);
  InferenceModel model;
  model.net = state.net;
  model.net->eval();
  model.substitute = state.substitute.voxels().detach();
  model.modality_names = state.config.modality_names;
  model.threshold = state.config.threshold;
  return model;
}

Prediction infer(const InferenceModel& model, const MultimodalVolume& image, const ModalitySet& kept) {
  if (!model.net || !model.net->has_segmentation_heads())
    throw ConfigError("inference needs a network with segmentation heads");
  image.validate();
  const auto n = image.modalities();
  if (model.substitute.dim() != 4 || model.substitute.size(0) != n)
    throw ShapeError("substitute has " + std::to_string(model.substitute.size(0)) + " modalities, image has " +
                     std::to_string(n));
  if (kept.empty()) throw ConfigError("kept subset is empty");
  if (kept.count() != n) throw ConfigError("subset modality count differs from the image");
  for (int m = 0; m < n; ++m)
    if (kept.contains(m) && !image.available[m])
      throw ConfigError("modality " + std::to_string(m) + " is requested but not available");

  const auto window = model.substitute.size(1);
  const auto spatial = image.spatial();
  const auto sd = window_starts(spatial[0], window);
  const auto sh = window_starts(spatial[1], window);
  const auto sw = window_starts(spatial[2], window);

  auto dropped = torch::zeros({n, 1, 1, 1}, torch::kBool);
  for (int m = 0; m < n; ++m)
    if (!kept.contains(m)) dropped[m] = true;
  const auto sub = model.substitute.to(image.voxels.dtype());

  torch::NoGradGuard no_grad;
  auto sum = torch::zeros({3, spatial[0], spatial[1], spatial[2]}, torch::kFloat32);
  auto count = torch::zeros({1, spatial[0], spatial[1], spatial[2]}, torch::kFloat32);
  using torch::indexing::Slice;
  std::vector<std::array<std::int64_t, 3>> origins;
  for (auto d : sd)
    for (auto h : sh)
      for (auto w : sw) origins.push_back({d, h, w});

  constexpr std::size_t kBatch = 8;
  for (std::size_t first = 0; first < origins.size(); first += kBatch) {
    const auto last = std::min(origins.size(), first + kBatch);
    std::vector<torch::Tensor> inputs;
    for (std::size_t i = first; i < last; ++i) {
      const auto& o = origins[i];
      const auto x = image.voxels.index({Slice(), Slice(o[0], o[0] + window), Slice(o[1], o[1] + window),
                                         Slice(o[2], o[2] + window)});
      inputs.push_back(torch::where(dropped, sub, x));
    }
    UNet3d net = model.net;
    const auto probs = net->forward(torch::stack(inputs).to(sub.dtype()), HeadMode::kFinetune)
                           .seg_probs.at(1)
                           .to(torch::kFloat32);
    for (std::size_t i = first; i < last; ++i) {
      const auto& o = origins[i];
      const auto region = std::initializer_list<torch::indexing::TensorIndex>{
          Slice(), Slice(o[0], o[0] + window), Slice(o[1], o[1] + window), Slice(o[2], o[2] + window)};
      sum.index(region).add_(probs[static_cast<std::int64_t>(i - first)]);
      count.index(region).add_(1.0f);
    }
  }

  Prediction out;
  out.probs = sum / count;
  out.labels = regions_to_labels(out.probs > model.threshold);
  return out;
}

std::vector<CaseResult> evaluate(const InferenceModel& model, const std::vector<Subject>& subjects,
                                 const std::vector<ModalitySet>& subsets) {
  if (subjects.empty()) throw ConfigError("no evaluation subjects");
  std::vector<CaseResult> results;
  for (const auto& subject : subjects) {
    const auto gt = labels_to_regions(subject.label).regions;
    for (const auto& subset : subsets) {
      Prediction pred;
      try {
        pred = infer(model, subject.image, subset);
      } catch (const Error& e) {
        throw Error("subject " + subject.id + ": " + e.what());
      }
      const auto regions = labels_to_regions(pred.labels).regions;
      for (int r = 0; r < 3; ++r) {
        CaseResult c;
        c.subset = subset;
        c.region = r;
        c.case_id = subject.id;
        c.dsc = dsc(regions[r], gt[r]);
        c.hd95 = hd95(regions[r], gt[r], subject.image.spacing);
        results.push_back(c);
      }
    }
  }
  return results;
}

}  // namespace m3ae
