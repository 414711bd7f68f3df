#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "detco/image.hpp"
#include "detco/matrix.hpp"
#include "detco/tensor.hpp"
#include "detco/trainer.hpp"

namespace detco::viz {

enum class Reduction { kMeanAbs, kMax };
Reduction parse_reduction(const std::string& name);
std::string reduction_name(Reduction r);

/// Final-stage attention: channel reduction followed by min-max scaling.
struct AttentionMap {
  Matrix values;  // h x w, in [0,1]
  int channels = 0;
  double raw_min = 0.0;
  double raw_max = 0.0;
  /// True when the reduced map was constant; `values` is then all zeros.
  bool constant_input = false;
  Reduction reduction = Reduction::kMeanAbs;
};

/// `features` is C x h x w or 1 x C x h x w. The reduction is exactly
/// invariant to channel order.
AttentionMap attention_map(const Tensor& features, Reduction reduction = Reduction::kMeanAbs);

/// Bilinearly upsamples the map to the image and blends a heat colormap:
/// out = (1 - alpha*a) * img + alpha*a * heat(a).
Image overlay(const Image& img, const AttentionMap& amap, double alpha = 0.6);
void write_overlay(const Image& img, const AttentionMap& amap, const std::filesystem::path& path, double alpha = 0.6);

/// Attention of the query encoder's last stage for one image resized to
/// `side` (0 = the checkpoint's global view side). `resized` receives the
/// network input image.
AttentionMap checkpoint_attention(const std::filesystem::path& checkpoint, const Image& img, int side,
                                  Reduction reduction, Image* resized = nullptr);

/// Reads a metrics log. Blank lines are ignored; a malformed line raises
/// FormatError naming its line number; a log without records raises
/// FormatError("no records").
std::vector<trainer::StepRecord> read_metrics_log(const std::filesystem::path& path);

struct PlotOutputs {
  std::vector<std::filesystem::path> charts;
  std::vector<std::filesystem::path> series;
  std::size_t records = 0;
};

/// Writes one PNG chart and one CSV per metric family into `out_dir`:
/// total, lr, loss_gg, loss_ll, loss_gl. Branch CSVs share the header
/// "step,stage2,stage3,stage4,stage5".
PlotOutputs plot_metrics(const std::filesystem::path& log_path, const std::filesystem::path& out_dir);

}  // namespace detco::viz
