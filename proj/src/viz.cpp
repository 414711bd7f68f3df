#include "detco/viz.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "detco/errors.hpp"
#include "detco/model.hpp"

namespace detco::viz {
namespace {

// Jet-style colormap on [0,1].
void heat_color(double a, double rgb[3]) {
  auto ramp = [](double v) { return std::clamp(v, 0.0, 1.0); };
  rgb[0] = ramp(1.5 - std::abs(4.0 * a - 3.0));
  rgb[1] = ramp(1.5 - std::abs(4.0 * a - 2.0));
  rgb[2] = ramp(1.5 - std::abs(4.0 * a - 1.0));
}

std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

struct Series {
  std::string name;
  std::vector<double> values;
};

void write_csv(const std::filesystem::path& path, const std::vector<int>& steps, const std::vector<Series>& series) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "step";
  for (const auto& s : series) out << ',' << s.name;
  out << '\n';
  for (std::size_t i = 0; i < steps.size(); ++i) {
    out << steps[i];
    for (const auto& s : series) out << ',' << format_number(s.values[i]);
    out << '\n';
  }
}

void write_chart(const std::filesystem::path& path, const std::string& title, const std::vector<int>& steps,
                 const std::vector<Series>& series) {
  constexpr int kW = 800, kH = 480, kLeft = 80, kRight = 150, kTop = 40, kBottom = 50;
  const cv::Scalar palette[] = {{200, 90, 30}, {40, 150, 40}, {30, 30, 210}, {150, 40, 150}};
  cv::Mat canvas(kH, kW, CV_8UC3, cv::Scalar(255, 255, 255));

  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& s : series) {
    for (double v : s.values) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double x0 = steps.front(), x1 = std::max<double>(steps.back(), x0 + 1);
  auto px = [&](double step, double v) {
    const double fx = (step - x0) / (x1 - x0);
    const double fy = (v - lo) / (hi - lo);
    return cv::Point(kLeft + static_cast<int>(std::lround(fx * (kW - kLeft - kRight))),
                     kH - kBottom - static_cast<int>(std::lround(fy * (kH - kTop - kBottom))));
  };

  const cv::Scalar ink(40, 40, 40);
  cv::rectangle(canvas, cv::Point(kLeft, kTop), cv::Point(kW - kRight, kH - kBottom), ink, 1);
  cv::putText(canvas, title, cv::Point(kLeft, kTop - 12), cv::FONT_HERSHEY_SIMPLEX, 0.6, ink, 1, cv::LINE_AA);
  cv::putText(canvas, format_number(hi).substr(0, 8), cv::Point(4, kTop + 5), cv::FONT_HERSHEY_SIMPLEX, 0.4, ink, 1,
              cv::LINE_AA);
  cv::putText(canvas, format_number(lo).substr(0, 8), cv::Point(4, kH - kBottom), cv::FONT_HERSHEY_SIMPLEX, 0.4, ink,
              1, cv::LINE_AA);
  cv::putText(canvas, "step " + std::to_string(steps.front()), cv::Point(kLeft, kH - kBottom + 20),
              cv::FONT_HERSHEY_SIMPLEX, 0.4, ink, 1, cv::LINE_AA);
  cv::putText(canvas, "step " + std::to_string(steps.back()), cv::Point(kW - kRight - 70, kH - kBottom + 20),
              cv::FONT_HERSHEY_SIMPLEX, 0.4, ink, 1, cv::LINE_AA);

  for (std::size_t k = 0; k < series.size(); ++k) {
    std::vector<cv::Point> pts;
    pts.reserve(steps.size());
    for (std::size_t i = 0; i < steps.size(); ++i) pts.push_back(px(steps[i], series[k].values[i]));
    const cv::Scalar color = palette[k % 4];
    cv::polylines(canvas, pts, false, color, 1, cv::LINE_AA);
    const int ly = kTop + 20 + static_cast<int>(k) * 20;
    cv::line(canvas, cv::Point(kW - kRight + 10, ly - 4), cv::Point(kW - kRight + 30, ly - 4), color, 2);
    cv::putText(canvas, series[k].name, cv::Point(kW - kRight + 36, ly), cv::FONT_HERSHEY_SIMPLEX, 0.45, ink, 1,
                cv::LINE_AA);
  }
  if (!cv::imwrite(path.string(), canvas, {cv::IMWRITE_PNG_COMPRESSION, 6})) {
    throw IoError("cannot write chart " + path.string());
  }
}

}  // namespace

Reduction parse_reduction(const std::string& name) {
  if (name == "mean-abs") return Reduction::kMeanAbs;
  if (name == "max") return Reduction::kMax;
  throw ConfigError("reduction: expected one of {mean-abs, max}, got '" + name + "'");
}

std::string reduction_name(Reduction r) { return r == Reduction::kMeanAbs ? "mean-abs" : "max"; }

AttentionMap attention_map(const Tensor& features, Reduction reduction) {
  const auto& s = features.shape();
  const bool batched = s.size() == 4;
  if (!(s.size() == 3 || (batched && s[0] == 1))) {
    throw InputError("attention expects C x h x w features, got " + shape_string(s));
  }
  const int c = s[batched ? 1 : 0], h = s[batched ? 2 : 1], w = s[batched ? 3 : 2];
  if (c < 1) throw InputError("attention needs at least one channel");

  AttentionMap out;
  out.channels = c;
  out.reduction = reduction;
  Matrix raw(h, w);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<float> column(static_cast<std::size_t>(c));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t pix = static_cast<std::size_t>(y) * w + x;
      for (int ch = 0; ch < c; ++ch) column[ch] = features[ch * plane + pix];
      if (reduction == Reduction::kMax) {
        raw(y, x) = *std::max_element(column.begin(), column.end());
      } else {
        // Summing in sorted order makes the mean independent of channel order.
        for (float& v : column) v = std::abs(v);
        std::sort(column.begin(), column.end());
        double sum = 0.0;
        for (float v : column) sum += v;
        raw(y, x) = sum / c;
      }
    }
  }
  out.raw_min = raw.minCoeff();
  out.raw_max = raw.maxCoeff();
  if (!(out.raw_max > out.raw_min)) {
    out.constant_input = true;
    out.values = Matrix::Zero(h, w);
    return out;
  }
  out.values = (raw.array() - out.raw_min) / (out.raw_max - out.raw_min);
  return out;
}

Image overlay(const Image& img, const AttentionMap& amap, double alpha) {
  if (img.empty()) throw InputError("overlay needs a non-empty image");
  const int h = static_cast<int>(amap.values.rows()), w = static_cast<int>(amap.values.cols());
  Image small(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) small.at(y, x, c) = static_cast<float>(amap.values(y, x));
    }
  }
  const Image up = resize_bilinear(small, img.height(), img.width());
  Image out(img.height(), img.width());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const double a = std::clamp(static_cast<double>(up.at(y, x, 0)), 0.0, 1.0);
      double heat[3];
      heat_color(a, heat);
      const double k = alpha * a;
      for (int c = 0; c < 3; ++c) {
        out.at(y, x, c) = static_cast<float>((1.0 - k) * img.at(y, x, c) + k * heat[c]);
      }
    }
  }
  return out;
}

void write_overlay(const Image& img, const AttentionMap& amap, const std::filesystem::path& path, double alpha) {
  save_png(overlay(img, amap, alpha), path);
}

AttentionMap checkpoint_attention(const std::filesystem::path& checkpoint, const Image& img, int side,
                                  Reduction reduction, Image* resized) {
  const trainer::LoadedCheckpoint ck = trainer::load_checkpoint(checkpoint);
  const model::DetcoModel model(ck.config.model);
  const int s = side > 0 ? side : ck.config.augment.global_side;
  model.check_input_side(s);
  Image input = resize_bilinear(ingest_source(img), s, s);
  const model::StageFeatures feats = model::encode_stages(model, ck.state.query, images_to_tensor({&input}));
  AttentionMap amap = attention_map(feats.maps[model::kNumStages - 1], reduction);
  if (resized) *resized = std::move(input);
  return amap;
}

std::vector<trainer::StepRecord> read_metrics_log(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw FileNotFoundError("metrics log not found: " + path.string());
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<trainer::StepRecord> out;
  int lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(trainer::parse_metrics_line(line));
    } catch (const FormatError& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (out.empty()) throw FormatError(path.string() + ": no records");
  return out;
}

PlotOutputs plot_metrics(const std::filesystem::path& log_path, const std::filesystem::path& out_dir) {
  const auto records = read_metrics_log(log_path);
  std::filesystem::create_directories(out_dir);
  std::vector<int> steps;
  Series total{"total", {}}, lr{"lr", {}};
  std::array<std::vector<Series>, 3> branches;
  const char* branch_names[] = {"loss_gg", "loss_ll", "loss_gl"};
  for (auto& b : branches) {
    for (int s = 0; s < model::kNumStages; ++s) b.push_back({"stage" + std::to_string(model::kStageNames[s]), {}});
  }
  for (const auto& r : records) {
    steps.push_back(r.step);
    total.values.push_back(r.report.total);
    lr.values.push_back(r.lr);
    for (int s = 0; s < model::kNumStages; ++s) {
      branches[0][s].values.push_back(r.report.per_stage[s].l_gg);
      branches[1][s].values.push_back(r.report.per_stage[s].l_ll);
      branches[2][s].values.push_back(r.report.per_stage[s].l_gl);
    }
  }

  PlotOutputs out;
  out.records = records.size();
  auto emit = [&](const std::string& name, const std::string& title, const std::vector<Series>& series) {
    const auto csv = out_dir / (name + ".csv");
    const auto png = out_dir / (name + ".png");
    write_csv(csv, steps, series);
    write_chart(png, title, steps, series);
    out.series.push_back(csv);
    out.charts.push_back(png);
  };
  emit("total", "total loss", {total});
  emit("lr", "learning rate", {lr});
  emit(branch_names[0], "global<->global loss per stage", branches[0]);
  emit(branch_names[1], "local<->local loss per stage", branches[1]);
  emit(branch_names[2], "global<->local loss per stage", branches[2]);
  return out;
}

}  // namespace detco::viz
