#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "m3ae/error.hpp"
#include "m3ae/eval.hpp"
#include "m3ae/image_io.hpp"

namespace m3ae {
namespace {

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

std::string presence(const ModalitySet& s) {
  std::string out;
  for (int m = 0; m < s.count(); ++m) out += std::string(",") + (s.contains(m) ? "1" : "0");
  return out;
}

void mean_std(const std::vector<double>& v, double& mean, double& sd) {
  double sum = 0.0;
  for (double x : v) sum += x;
  mean = sum / static_cast<double>(v.size());
  double sq = 0.0;
  for (double x : v) sq += (x - mean) * (x - mean);
  sd = std::sqrt(sq / static_cast<double>(v.size()));
}

void fill_rect(torch::Tensor& img, int x0, int y0, int x1, int y1, std::array<std::uint8_t, 3> rgb) {
  const int h = static_cast<int>(img.size(0)), w = static_cast<int>(img.size(1));
  x0 = std::clamp(x0, 0, w);
  x1 = std::clamp(x1, 0, w);
  y0 = std::clamp(y0, 0, h);
  y1 = std::clamp(y1, 0, h);
  auto a = img.accessor<std::uint8_t, 3>();
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x)
      for (int c = 0; c < 3; ++c) a[y][x][c] = rgb[c];
}

// Grouped bar chart of mean DSC per subset and region, with a presence
// grid (one square per modality, filled when kept) under each group.
void write_plot(const std::filesystem::path& path, const Summary& summary, int modalities) {
  constexpr int kLeft = 24, kTop = 12, kPlotH = 200, kBar = 8, kGap = 12, kCell = 6;
  constexpr std::array<std::array<std::uint8_t, 3>, 3> kColors = {{{230, 159, 0}, {86, 180, 233}, {0, 158, 115}}};
  const int groups = static_cast<int>(summary.rows.size()) + 1;
  const int group_w = 3 * kBar + kGap;
  const int width = kLeft + groups * group_w + kGap;
  const int height = kTop + kPlotH + 8 + modalities * (kCell + 2) + 8;
  auto img = torch::full({height, width, 3}, 255, torch::kUInt8);
  const int base = kTop + kPlotH;
  for (int t = 0; t <= 4; ++t) {
    const int y = base - t * kPlotH / 4;
    fill_rect(img, kLeft - 4, y, width - kGap / 2, y + 1, {210, 210, 210});
  }
  fill_rect(img, kLeft - 1, kTop, kLeft, base + 1, {0, 0, 0});
  fill_rect(img, kLeft - 1, base, width - kGap / 2, base + 1, {0, 0, 0});
  for (int g = 0; g < groups; ++g) {
    const bool mean_group = g == groups - 1;
    const auto& values = mean_group ? summary.mean_dsc : summary.rows[g].dsc_mean;
    const int x = kLeft + kGap / 2 + g * group_w;
    for (int r = 0; r < 3; ++r) {
      const int h = static_cast<int>(std::lround(std::clamp(values[r], 0.0, 1.0) * kPlotH));
      fill_rect(img, x + r * kBar, base - h, x + (r + 1) * kBar - 1, base, kColors[r]);
    }
    for (int m = 0; m < modalities; ++m) {
      const int y = base + 8 + m * (kCell + 2);
      const int cx = x + (3 * kBar - kCell) / 2;
      if (mean_group) {
        fill_rect(img, cx, y + kCell / 2 - 1, cx + kCell, y + kCell / 2 + 1, {0, 0, 0});
      } else if (summary.rows[g].subset.contains(m)) {
        fill_rect(img, cx, y, cx + kCell, y + kCell, {0, 0, 0});
      } else {
        fill_rect(img, cx, y, cx + kCell, y + kCell, {0, 0, 0});
        fill_rect(img, cx + 1, y + 1, cx + kCell - 1, y + kCell - 1, {255, 255, 255});
      }
    }
  }
  write_png_rgb(path, img);
}

}  // namespace

Summary summarize(const std::vector<CaseResult>& results, const std::vector<ModalitySet>& subsets) {
  if (subsets.empty()) throw ConfigError("no subsets to summarize");
  std::map<std::pair<std::uint32_t, int>, std::pair<std::vector<double>, std::vector<double>>> groups;
  for (const auto& c : results) {
    auto& g = groups[{c.subset.bits(), c.region}];
    g.first.push_back(c.dsc);
    g.second.push_back(c.hd95);
  }
  Summary summary;
  int cases = -1;
  for (const auto& subset : subsets) {
    SubsetSummary row;
    row.subset = subset;
    for (int r = 0; r < 3; ++r) {
      const auto it = groups.find({subset.bits(), r});
      if (it == groups.end())
        throw Error("incomplete results: no " + std::string(kRegionNames[r]) + " values for subset " +
                    std::to_string(subset.bits()));
      const int n = static_cast<int>(it->second.first.size());
      if (cases >= 0 && n != cases) throw Error("incomplete results: case counts differ between subsets");
      cases = n;
      mean_std(it->second.first, row.dsc_mean[r], row.dsc_std[r]);
      mean_std(it->second.second, row.hd95_mean[r], row.hd95_std[r]);
    }
    row.cases = cases;
    summary.rows.push_back(row);
  }
  for (int r = 0; r < 3; ++r) {
    double d = 0.0, h = 0.0;
    for (const auto& row : summary.rows) {
      d += row.dsc_mean[r];
      h += row.hd95_mean[r];
    }
    summary.mean_dsc[r] = d / static_cast<double>(summary.rows.size());
    summary.mean_hd95[r] = h / static_cast<double>(summary.rows.size());
  }
  return summary;
}

Summary write_report(const std::filesystem::path& dir, const std::vector<CaseResult>& results,
                     const std::vector<ModalitySet>& subsets, const std::vector<std::string>& modality_names) {
  const auto summary = summarize(results, subsets);
  const int n = subsets.front().count();
  if (static_cast<int>(modality_names.size()) != n) throw ConfigError("modality names do not match the subsets");
  std::filesystem::create_directories(dir);
  std::string header = "subset";
  for (const auto& name : modality_names) header += "," + name;

  std::ofstream metrics(dir / "metrics.csv", std::ios::binary | std::ios::trunc);
  metrics << "# hd95 in mm from boundary voxels; both masks empty -> 0, exactly one empty -> volume diagonal\n";
  metrics << header << ",region,case_id,dsc,hd95\n";
  for (const auto& subset : subsets)
    for (int r = 0; r < 3; ++r)
      for (const auto& c : results)
        if (c.subset == subset && c.region == r)
          metrics << subset.label(modality_names) << presence(subset) << ',' << kRegionNames[r] << ',' << c.case_id
                  << ',' << num(c.dsc) << ',' << num(c.hd95) << '\n';
  if (!metrics) throw Error("cannot write " + (dir / "metrics.csv").string());

  std::ofstream out(dir / "summary.csv", std::ios::binary | std::ios::trunc);
  out << header << ",region,dsc_mean,dsc_std,hd95_mean,hd95_std,cases\n";
  for (const auto& row : summary.rows)
    for (int r = 0; r < 3; ++r)
      out << row.subset.label(modality_names) << presence(row.subset) << ',' << kRegionNames[r] << ','
          << num(row.dsc_mean[r]) << ',' << num(row.dsc_std[r]) << ',' << num(row.hd95_mean[r]) << ','
          << num(row.hd95_std[r]) << ',' << row.cases << '\n';
  for (int r = 0; r < 3; ++r)
    out << "Mean" << std::string(n, ',') << ',' << kRegionNames[r] << ',' << num(summary.mean_dsc[r]) << ",,"
        << num(summary.mean_hd95[r]) << ",," << summary.rows.size() << '\n';
  if (!out) throw Error("cannot write " + (dir / "summary.csv").string());

  write_plot(dir / "summary.png", summary, n);
  return summary;
}

}  // namespace m3ae
