#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "m3ae/data.hpp"
#include "m3ae/error.hpp"
#include "m3ae/eval.hpp"

namespace m3ae {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_same_shape(const torch::Tensor& a, const torch::Tensor& b) {
  if (a.sizes() != b.sizes()) throw ShapeError("prediction and reference shapes differ");
  if (a.dim() != 3) throw ShapeError("masks must be D x H x W");
}

// Squared distance transform along one line of samples spaced `step` apart.
void edt_line(const double* f, double* d, std::int64_t n, double step, std::vector<std::int64_t>& v,
              std::vector<double>& z) {
  v.resize(n);
  z.resize(n + 1);
  std::int64_t k = -1;
  auto pos = [step](std::int64_t i) { return static_cast<double>(i) * step; };
  for (std::int64_t q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    auto meet = [&](std::int64_t p) {
      return ((f[q] + pos(q) * pos(q)) - (f[p] + pos(p) * pos(p))) / (2.0 * (pos(q) - pos(p)));
    };
    double s = meet(v[k]);
    while (s <= z[k]) s = meet(v[--k]);
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  if (k < 0) {
    std::fill(d, d + n, kInf);
    return;
  }
  std::int64_t j = 0;
  for (std::int64_t q = 0; q < n; ++q) {
    while (z[j + 1] < pos(q)) ++j;
    const double dx = pos(q) - pos(v[j]);
    d[q] = dx * dx + f[v[j]];
  }
}

std::vector<double> directed_distances(const torch::Tensor& from, const torch::Tensor& distance) {
  const auto sel = distance.masked_select(from).contiguous();
  return {sel.data_ptr<double>(), sel.data_ptr<double>() + sel.numel()};
}

}  // namespace

std::vector<ModalitySet> enumerate_subsets(int modalities) {
  if (modalities < 1) throw ConfigError("at least one modality is required");
  if (modalities == 4) {
    std::vector<ModalitySet> out;
    for (std::uint32_t bits : {8u, 4u, 2u, 1u, 12u, 6u, 3u, 10u, 9u, 5u, 7u, 11u, 13u, 14u, 15u})
      out.emplace_back(bits, 4);
    return out;
  }
  std::vector<ModalitySet> out;
  for (std::uint32_t bits = 1; bits < (1u << modalities); ++bits) out.emplace_back(bits, modalities);
  std::stable_sort(out.begin(), out.end(),
                   [](const ModalitySet& a, const ModalitySet& b) { return a.size() < b.size(); });
  return out;
}

std::vector<ModalitySet> parse_subsets(const std::string& text, const std::vector<std::string>& names) {
  const int n = static_cast<int>(names.size());
  if (text == "all") return enumerate_subsets(n);
  std::vector<ModalitySet> out;
  std::stringstream list(text);
  std::string item;
  while (std::getline(list, item, ',')) {
    std::uint32_t bits = 0;
    std::stringstream parts(item);
    std::string name;
    while (std::getline(parts, name, '+')) {
      const auto it = std::find(names.begin(), names.end(), name);
      if (it == names.end()) throw ConfigError("unknown modality '" + name + "' in subset '" + item + "'");
      bits |= 1u << (it - names.begin());
    }
    if (bits == 0) throw ConfigError("empty subset in '" + text + "'");
    out.emplace_back(bits, n);
  }
  if (out.empty()) throw ConfigError("no subsets given");
  return out;
}

double dsc(const torch::Tensor& pred, const torch::Tensor& gt) {
  if (pred.sizes() != gt.sizes()) throw ShapeError("prediction and reference shapes differ");
  const auto p = pred.to(torch::kBool);
  const auto g = gt.to(torch::kBool);
  const auto np = p.sum().item<std::int64_t>();
  const auto ng = g.sum().item<std::int64_t>();
  if (np + ng == 0) return 1.0;
  const auto inter = (p & g).sum().item<std::int64_t>();
  return 2.0 * static_cast<double>(inter) / static_cast<double>(np + ng);
}

torch::Tensor boundary_voxels(const torch::Tensor& mask) {
  if (mask.dim() != 3) throw ShapeError("masks must be D x H x W");
  const auto m = mask.to(torch::kBool);
  // Zero padding counts the outside of the volume as background.
  const auto padded = torch::constant_pad_nd(m.to(torch::kUInt8), {1, 1, 1, 1, 1, 1}, 0).to(torch::kBool);
  const auto D = m.size(0), H = m.size(1), W = m.size(2);
  using torch::indexing::Slice;
  auto interior = padded.index({Slice(0, D), Slice(1, H + 1), Slice(1, W + 1)}) &
                  padded.index({Slice(2, D + 2), Slice(1, H + 1), Slice(1, W + 1)}) &
                  padded.index({Slice(1, D + 1), Slice(0, H), Slice(1, W + 1)}) &
                  padded.index({Slice(1, D + 1), Slice(2, H + 2), Slice(1, W + 1)}) &
                  padded.index({Slice(1, D + 1), Slice(1, H + 1), Slice(0, W)}) &
                  padded.index({Slice(1, D + 1), Slice(1, H + 1), Slice(2, W + 2)});
  return m & ~interior;
}

torch::Tensor distance_transform(const torch::Tensor& sites, const std::array<double, 3>& spacing) {
  if (sites.dim() != 3) throw ShapeError("sites must be D x H x W");
  const std::array<std::int64_t, 3> dims{sites.size(0), sites.size(1), sites.size(2)};
  auto field = torch::where(sites.to(torch::kBool), torch::zeros({}, torch::kFloat64),
                            torch::full({}, kInf, torch::kFloat64))
                   .contiguous();
  double* data = field.data_ptr<double>();
  const std::array<std::int64_t, 3> strides{dims[1] * dims[2], dims[2], 1};
  std::vector<double> line_in, line_out, z;
  std::vector<std::int64_t> v;
  for (int axis = 0; axis < 3; ++axis) {
    const auto n = dims[axis];
    line_in.resize(n);
    line_out.resize(n);
    const int a = (axis + 1) % 3, b = (axis + 2) % 3;
    for (std::int64_t i = 0; i < dims[a]; ++i) {
      for (std::int64_t j = 0; j < dims[b]; ++j) {
        double* base = data + i * strides[a] + j * strides[b];
        for (std::int64_t q = 0; q < n; ++q) line_in[q] = base[q * strides[axis]];
        edt_line(line_in.data(), line_out.data(), n, spacing[axis], v, z);
        for (std::int64_t q = 0; q < n; ++q) base[q * strides[axis]] = line_out[q];
      }
    }
  }
  return field.sqrt_();
}

double volume_diagonal(const std::array<std::int64_t, 3>& spatial, const std::array<double, 3>& spacing) {
  double sum = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double extent = static_cast<double>(spatial[i]) * spacing[i];
    sum += extent * extent;
  }
  return std::sqrt(sum);
}

double hd95(const torch::Tensor& pred, const torch::Tensor& gt, const std::array<double, 3>& spacing) {
  check_same_shape(pred, gt);
  for (double s : spacing)
    if (!(s > 0)) throw ConfigError("spacing must be positive");
  const auto p = pred.to(torch::kBool);
  const auto g = gt.to(torch::kBool);
  const bool pe = !p.any().item<bool>();
  const bool ge = !g.any().item<bool>();
  if (pe && ge) return 0.0;
  if (pe || ge) return volume_diagonal({p.size(0), p.size(1), p.size(2)}, spacing);
  const auto bp = boundary_voxels(p);
  const auto bg = boundary_voxels(g);
  auto d_pg = directed_distances(bp, distance_transform(bg, spacing));
  auto d_gp = directed_distances(bg, distance_transform(bp, spacing));
  return std::max(percentile_linear(d_pg, 95.0), percentile_linear(d_gp, 95.0));
}

}  // namespace m3ae
