// Copyright 2026 The histopatch Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "commands.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "histopatch/error.hpp"
#include "histopatch/fps.hpp"
#include "histopatch/histo_rotate.hpp"
#include "histopatch/pathdino.hpp"
#include "histopatch/random.hpp"
#include "histopatch/retrieval.hpp"
#include "histopatch/slide_io.hpp"
#include "histopatch/tissue_seg.hpp"

namespace histopatch::cli {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

constexpr const char* kVersion = "0.1.0";

int resolve_workers(int requested, std::size_t items) {
  int n = requested > 0 ? requested : static_cast<int>(std::thread::hardware_concurrency());
  if (const char* env = std::getenv("HISTOPATCH_THREADS")) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    if (end != env && cap > 0) n = std::min(n, static_cast<int>(cap));
  }
  n = std::min<long long>(n, static_cast<long long>(std::max<std::size_t>(items, 1)));
  return std::max(n, 1);
}

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  const auto count = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
  for (std::size_t w = 0; w < count; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  }
}

namespace {

enum class LogLevel { kDebug, kInfo, kWarn, kError };

class Logger {
 public:
  Logger(bool json, LogLevel level) : json_(json), level_(level) {}

  void log(LogLevel level, std::string_view event, const Json& fields = Json::object()) {
    if (level < level_) return;
    static constexpr const char* kNames[] = {"debug", "info", "warn", "error"};
    const char* name = kNames[static_cast<int>(level)];
    std::string line;
    if (json_) {
      Json j;
      j["level"] = name;
      j["event"] = event;
      for (const auto& [k, v] : fields.items()) j[k] = v;
      line = j.dump();
    } else {
      std::ostringstream os;
      os << name << ": " << event;
      for (const auto& [k, v] : fields.items()) {
        os << ' ' << k << '=' << (v.is_string() ? v.get<std::string>() : v.dump());
      }
      line = os.str();
    }
    std::lock_guard lock(mutex_);
    std::cerr << line << '\n';
  }
  void info(std::string_view event, const Json& fields = Json::object()) {
    log(LogLevel::kInfo, event, fields);
  }
  void warn(std::string_view event, const Json& fields = Json::object()) {
    log(LogLevel::kWarn, event, fields);
  }

 private:
  bool json_;
  LogLevel level_;
  std::mutex mutex_;
};

struct Globals {
  int threads = 0;
  std::string log_format = "text";
  std::string log_level = "info";
};

Json globals_json(const Globals& g) {
  return Json{{"threads", g.threads}, {"log", g.log_format}, {"log_level", g.log_level}};
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void write_json(const fs::path& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  out << j.dump(2) << "\n";
}

Json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot read " + path.string());
  return Json::parse(in);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

std::vector<fs::path> list_inputs(const fs::path& input) {
  if (fs::is_regular_file(input)) return {input};
  if (!fs::is_directory(input)) {
    throw Error(ErrorCode::kIoError, "input not found: " + input.string());
  }
  static const std::set<std::string> kExtensions = {".png", ".tif", ".tiff"};
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(input)) {
    if (e.is_regular_file() && kExtensions.contains(lower(e.path().extension().string()))) {
      out.push_back(e.path());
    }
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw Error(ErrorCode::kInvalidArgument, "no PNG/TIFF inputs in " + input.string());
  return out;
}

std::string canonical_string(const fs::path& p) {
  return fs::absolute(p).lexically_normal().string();
}

/// Result of one slide-level job.
struct Outcome {
  std::string slide_id;
  std::string path;
  bool ok = false;
  std::string reason;
  std::string message;
  double seconds = 0.0;
  Json details = Json::object();
};

// Runs `job` for every input with slide-level isolation: an exception marks
// that slide as missed and the batch continues.
template <typename Job>
std::vector<Outcome> run_batch(const std::vector<fs::path>& inputs, int workers, Logger& log,
                               Job&& job) {
  std::vector<Outcome> outcomes(inputs.size());
  std::map<std::string, int> seen;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    outcomes[i].slide_id = inputs[i].stem().string();
    outcomes[i].path = canonical_string(inputs[i]);
    ++seen[outcomes[i].slide_id];
  }
  parallel_for(inputs.size(), workers, [&](std::size_t i) {
    auto& o = outcomes[i];
    const auto t0 = Clock::now();
    if (seen.at(o.slide_id) > 1) {
      o.reason = "DuplicateSlideId";
      o.message = "more than one input has the stem " + o.slide_id;
    } else {
      try {
        o.details = job(inputs[i], o.slide_id);
        o.ok = true;
      } catch (const Error& e) {
        o.reason = e.name();
        o.message = e.what();
      } catch (const std::exception& e) {
        o.reason = "InternalError";
        o.message = e.what();
      }
    }
    o.seconds = seconds_since(t0);
    if (o.ok) {
      log.info("slide_done", {{"slide_id", o.slide_id}, {"seconds", o.seconds}});
    } else {
      log.warn("slide_missed",
               {{"slide_id", o.slide_id}, {"reason", o.reason}, {"message", o.message}});
    }
  });
  return outcomes;
}

/// Report with balanced accounting: succeeded + missed = total.
Json batch_report(const std::string& command, const std::vector<Outcome>& outcomes,
                  double wall_seconds) {
  Json missed = Json::array();
  Json slides = Json::array();
  int succeeded = 0;
  double busy = 0.0;
  for (const auto& o : outcomes) {
    busy += o.seconds;
    if (o.ok) {
      ++succeeded;
      Json s;
      s["slide_id"] = o.slide_id;
      s["seconds"] = o.seconds;
      for (const auto& [k, v] : o.details.items()) s[k] = v;
      slides.push_back(std::move(s));
    } else {
      missed.push_back(
          {{"slide_id", o.slide_id}, {"path", o.path}, {"reason", o.reason}, {"message", o.message}});
    }
  }
  Json r;
  r["command"] = command;
  r["total"] = outcomes.size();
  r["succeeded"] = succeeded;
  r["missed_count"] = missed.size();
  r["missed"] = std::move(missed);
  r["slides"] = std::move(slides);
  r["wall_seconds"] = wall_seconds;
  r["mean_minutes_per_slide"] =
      outcomes.empty() ? 0.0 : busy / 60.0 / static_cast<double>(outcomes.size());
  return r;
}

int batch_exit_code(const std::vector<Outcome>& outcomes) {
  return std::all_of(outcomes.begin(), outcomes.end(), [](const Outcome& o) { return o.ok; })
             ? 0
             : 2;
}

Json slide_list(const std::vector<Outcome>& outcomes) {
  Json list = Json::array();
  for (const auto& o : outcomes) list.push_back({{"slide_id", o.slide_id}, {"path", o.path}});
  return list;
}

RgbImage load_full_raster(const fs::path& path) {
  const auto slide = open_slide(path);
  return read_region(slide, {0, 0, slide.width(), slide.height(), 0});
}

// "AUTO" (any case) or a number.
std::optional<double> parse_auto(const std::string& text, const std::string& flag) {
  if (lower(text) == "auto") return std::nullopt;
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::kInvalidArgument, flag + " expects AUTO or a number, got " + text);
}

// ---------------------------------------------------------------- fps

struct FpsArgs {
  std::string input;
  std::string out = "plans";
  int n_patches = 40;
  std::string e_min = "AUTO";
  std::string bandwidth = "scott";
  std::string stride = "AUTO";
  double coverage = 0.9;
  std::uint64_t seed = 7;
  int patch_size = 1024;
  int thumb_size = 1024;
  std::string threshold = "otsu";
  double min_area = 32.0;
  bool with_replacement = false;
  std::string export_masks;
};

FpsConfig fps_config(const FpsArgs& a) {
  FpsConfig c;
  c.n_samples = a.n_patches;
  c.coverage_min = a.coverage;
  c.seed = a.seed;
  c.patch_size = a.patch_size;
  c.contour.min_area = a.min_area;
  c.mode = a.with_replacement ? SamplingMode::kWithReplacement : SamplingMode::kWithoutReplacement;
  if (const auto v = parse_auto(a.e_min, "--e-min")) c.e_min = *v;
  if (const auto v = parse_auto(a.stride, "--stride")) c.stride = static_cast<int>(*v);
  if (lower(a.bandwidth) != "scott") {
    const auto v = parse_auto(a.bandwidth, "--bandwidth");
    if (!v) throw Error(ErrorCode::kInvalidArgument, "--bandwidth expects scott or a number");
    c.bandwidth = Bandwidth::fixed(*v);
  }
  if (lower(a.threshold) != "otsu") {
    const auto v = parse_auto(a.threshold, "--threshold");
    if (!v) throw Error(ErrorCode::kInvalidArgument, "--threshold expects otsu or an integer");
    c.threshold = Threshold::fixed(static_cast<int>(*v));
  }
  if (c.n_samples < 1) throw Error(ErrorCode::kInvalidArgument, "--n-patches must be >= 1");
  if (c.patch_size < 1) throw Error(ErrorCode::kInvalidArgument, "--patch-size must be >= 1");
  return c;
}

int cmd_fps(const FpsArgs& a, const Globals& g, Logger& log) {
  const auto config = fps_config(a);
  const auto inputs = list_inputs(a.input);
  const fs::path out = a.out;
  fs::create_directories(out);
  if (!a.export_masks.empty()) fs::create_directories(a.export_masks);

  const auto t0 = Clock::now();
  const int workers = resolve_workers(g.threads, inputs.size());
  log.info("fps_start", {{"slides", inputs.size()}, {"workers", workers}});
  auto outcomes = run_batch(inputs, workers, log, [&](const fs::path& path, const std::string& id) {
    const auto plan_path = out / (id + ".jsonl");
    fs::remove(plan_path);
    const auto slide = open_slide(path, {a.thumb_size});
    auto cfg = config;
    cfg.seed = mix_seed(a.seed, stable_hash(slide.slide_id()));
    if (!a.export_masks.empty()) {
      const auto mask = make_mask(slide.thumbnail(), cfg.threshold);
      write_pbm(mask, fs::path(a.export_masks) / (id + ".pbm"));
      write_contours_jsonl(id, find_contours(mask, cfg.contour),
                           fs::path(a.export_masks) / (id + ".contours.jsonl"));
    }
    const auto plan = run_fps(slide, cfg);
    write_plan_jsonl(plan, plan_path);
    const auto& c = plan.counts;
    return Json{{"thumb", {c.thumb_width, c.thumb_height}},
                {"tissue_threshold", c.tissue_threshold},
                {"tissue_pixels", c.tissue_pixels},
                {"contours", c.contours},
                {"candidates", c.candidates},
                {"stride", c.stride},
                {"bandwidth", c.bandwidth},
                {"bandwidth_fallback", c.bandwidth_fallback},
                {"e_min", plan.e_min},
                {"requested", plan.n_requested},
                {"selected", plan.selected.size()},
                {"short_plan", plan.short_plan}};
  });

  Json params{{"n_patches", a.n_patches}, {"e_min", a.e_min},         {"bandwidth", a.bandwidth},
              {"stride", a.stride},       {"coverage", a.coverage},   {"patch_size", a.patch_size},
              {"thumb_size", a.thumb_size}, {"threshold", a.threshold}, {"min_area", a.min_area},
              {"with_replacement", a.with_replacement}};
  Json run_config{{"command", "fps"},   {"version", kVersion},          {"seed", a.seed},
                  {"params", params},   {"globals", globals_json(g)},   {"input", canonical_string(a.input)},
                  {"out", canonical_string(out)}, {"slides", slide_list(outcomes)}};
  write_json(out / "run_config.json", run_config);
  const auto report = batch_report("fps", outcomes, seconds_since(t0));
  write_json(out / "report.json", report);
  log.info("fps_done", {{"succeeded", report["succeeded"]}, {"missed", report["missed_count"]}});
  return batch_exit_code(outcomes);
}

// ---------------------------------------------------------------- plans

struct PlannedSlide {
  std::string slide_id;
  fs::path slide_path;
  fs::path plan_path;
};

// Slides of an fps run that produced a plan, in run order.
std::vector<PlannedSlide> planned_slides(const fs::path& plans, int* thumb_size) {
  const auto config = read_json(plans / "run_config.json");
  if (config.value("command", std::string{}) != "fps") {
    throw Error(ErrorCode::kInvalidArgument, plans.string() + " is not an fps output directory");
  }
  if (thumb_size) *thumb_size = config.at("params").value("thumb_size", 1024);
  std::vector<PlannedSlide> out;
  for (const auto& s : config.at("slides")) {
    PlannedSlide p{s.at("slide_id").get<std::string>(), s.at("path").get<std::string>(), {}};
    p.plan_path = plans / (p.slide_id + ".jsonl");
    if (fs::exists(p.plan_path)) out.push_back(std::move(p));
  }
  if (out.empty()) throw Error(ErrorCode::kInvalidArgument, "no plan files in " + plans.string());
  return out;
}

std::vector<fs::path> slide_paths(const std::vector<PlannedSlide>& slides) {
  std::vector<fs::path> paths;
  for (const auto& s : slides) paths.push_back(s.slide_path);
  return paths;
}

// ---------------------------------------------------------------- extract

struct ExtractArgs {
  std::string plans = "plans";
  std::string out = "patches";
};

int cmd_extract(const ExtractArgs& a, const Globals& g, Logger& log) {
  int thumb_size = 1024;
  const auto slides = planned_slides(a.plans, &thumb_size);
  const fs::path out = a.out;
  fs::create_directories(out);
  std::map<std::string, fs::path> plan_of;
  for (const auto& s : slides) plan_of[s.slide_id] = s.plan_path;

  const auto t0 = Clock::now();
  const auto paths = slide_paths(slides);
  auto outcomes = run_batch(paths, resolve_workers(g.threads, paths.size()), log,
                            [&](const fs::path& path, const std::string& id) {
                              const auto plan = read_plan_jsonl(plan_of.at(id));
                              const auto slide = open_slide(path, {thumb_size});
                              for (const auto& r : plan.slide_rects) {
                                write_png(read_region(slide, {r.x, r.y, r.width, r.height, plan.level}),
                                          out / patch_file_name(id, r));
                              }
                              return Json{{"patches", plan.slide_rects.size()}};
                            });
  write_json(out / "run_config.json",
             Json{{"command", "extract"},
                  {"version", kVersion},
                  {"plans", canonical_string(a.plans)},
                  {"globals", globals_json(g)},
                  {"slides", slide_list(outcomes)}});
  write_json(out / "report.json", batch_report("extract", outcomes, seconds_since(t0)));
  return batch_exit_code(outcomes);
}

// ---------------------------------------------------------------- augment

struct AugmentArgs {
  std::string input;
  std::string out = "crops";
  int n_local = 8;
  std::string mode = "auto";
  std::uint64_t seed = 7;
  int global_size = 224;
  int local_size = 96;
  std::string interpolation = "bilinear";
};

int cmd_augment(const AugmentArgs& a, const Globals& g, Logger& log) {
  HistoRotateConfig config;
  config.n_local = a.n_local;
  config.global = CropSpec::global(a.global_size);
  config.local = CropSpec::local(a.local_size);
  const auto mode = lower(a.mode);
  if (mode == "auto") {
    config.global_rotation = GlobalRotation::kAuto;
  } else if (mode == "continuous") {
    config.global_rotation = GlobalRotation::kContinuous;
  } else if (mode == "discrete") {
    config.global_rotation = GlobalRotation::kDiscrete;
  } else {
    throw Error(ErrorCode::kInvalidArgument, "--mode expects auto, continuous or discrete");
  }
  const auto interp = lower(a.interpolation);
  if (interp != "bilinear" && interp != "nearest") {
    throw Error(ErrorCode::kInvalidArgument, "--interpolation expects bilinear or nearest");
  }
  config.interpolation = interp == "nearest" ? Interpolation::kNearest : Interpolation::kBilinear;

  const auto inputs = list_inputs(a.input);
  const fs::path out = a.out;
  fs::create_directories(out);
  const auto t0 = Clock::now();
  auto outcomes = run_batch(inputs, resolve_workers(g.threads, inputs.size()), log,
                            [&](const fs::path& path, const std::string& id) {
                              const auto img = load_full_raster(path);
                              const auto set =
                                  make_crop_set(img, config, mix_seed(a.seed, stable_hash(id)), id);
                              write_crop_set(set, out);
                              return Json{{"crops", set.crops.size()}};
                            });
  write_json(out / "run_config.json",
             Json{{"command", "augment"},
                  {"version", kVersion},
                  {"seed", a.seed},
                  {"params",
                   {{"n_local", a.n_local},
                    {"mode", mode},
                    {"global_size", a.global_size},
                    {"local_size", a.local_size},
                    {"interpolation", interp}}},
                  {"globals", globals_json(g)},
                  {"slides", slide_list(outcomes)}});
  write_json(out / "report.json", batch_report("augment", outcomes, seconds_since(t0)));
  return batch_exit_code(outcomes);
}

// ---------------------------------------------------------------- embed

struct EmbedArgs {
  std::string weights;
  std::string plans = "plans";
  std::string out = "emb";
  std::string labels;
};

struct SlideLabel {
  std::string label;
  std::string patient_id;
};

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  const auto e = s.find_last_not_of(" \t\r\n");
  return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
}

// CSV rows `slide_id,label[,patient_id]`; an optional header starts with slide_id.
std::map<std::string, SlideLabel> read_labels(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot read labels " + path.string());
  std::map<std::string, SlideLabel> out;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(trim(cell));
    if (first && !cells.empty() && cells[0] == "slide_id") {
      first = false;
      continue;
    }
    first = false;
    if (cells.size() < 2 || cells[0].empty() || cells[1].empty()) {
      throw Error(ErrorCode::kInvalidArgument, "malformed label row: " + line);
    }
    out[cells[0]] = {cells[1], cells.size() > 2 ? cells[2] : std::string{}};
  }
  return out;
}

int cmd_embed(const EmbedArgs& a, const Globals& g, Logger& log) {
  const auto weights = load_weights(a.weights);
  const PathDino model(weights);
  int thumb_size = 1024;
  const auto slides = planned_slides(a.plans, &thumb_size);
  std::map<std::string, SlideLabel> labels;
  if (!a.labels.empty()) labels = read_labels(a.labels);

  std::map<std::string, fs::path> plan_of;
  for (const auto& s : slides) plan_of[s.slide_id] = s.plan_path;
  struct Rows {
    std::vector<Eigen::VectorXf> vectors;
    std::vector<Rect> rects;
  };
  std::vector<Rows> rows(slides.size());
  std::map<std::string, std::size_t> index_of;
  for (std::size_t i = 0; i < slides.size(); ++i) index_of[slides[i].slide_id] = i;

  const auto t0 = Clock::now();
  const auto paths = slide_paths(slides);
  auto outcomes = run_batch(
      paths, resolve_workers(g.threads, paths.size()), log,
      [&](const fs::path& path, const std::string& id) {
        if (!a.labels.empty() && !labels.contains(id)) {
          throw Error(ErrorCode::kInvalidArgument, "no label for slide " + id);
        }
        const auto plan = read_plan_jsonl(plan_of.at(id));
        const auto slide = open_slide(path, {thumb_size});
        auto& r = rows[index_of.at(id)];
        for (const auto& rect : plan.slide_rects) {
          const auto img = read_region(slide, {rect.x, rect.y, rect.width, rect.height, plan.level});
          r.vectors.push_back(model.forward(img).embedding);
          r.rects.push_back(rect);
        }
        return Json{{"patches", r.vectors.size()}};
      });

  std::set<std::string> names;
  for (const auto& o : outcomes) {
    if (o.ok) names.insert(a.labels.empty() ? "unlabeled" : labels.at(o.slide_id).label);
  }
  const std::vector<std::string> label_names(names.begin(), names.end());
  std::map<std::string, int> label_index;
  for (std::size_t i = 0; i < label_names.size(); ++i) label_index[label_names[i]] = static_cast<int>(i);

  std::vector<EmbeddingMeta> meta;
  std::vector<const Eigen::VectorXf*> vectors;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    if (!outcomes[i].ok) continue;
    const auto& id = outcomes[i].slide_id;
    const SlideLabel sl = a.labels.empty() ? SlideLabel{"unlabeled", {}} : labels.at(id);
    for (std::size_t k = 0; k < rows[i].vectors.size(); ++k) {
      meta.push_back({id, rows[i].rects[k].x, rows[i].rects[k].y, label_index.at(sl.label),
                      sl.patient_id});
      vectors.push_back(&rows[i].vectors[k]);
    }
  }
  Eigen::MatrixXf matrix(static_cast<Eigen::Index>(vectors.size()), model.config().dim);
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    matrix.row(static_cast<Eigen::Index>(i)) = vectors[i]->transpose();
  }
  const fs::path out = a.out;
  save_store(EmbeddingStore(std::move(matrix), std::move(meta), label_names), out);
  write_json(out / "run_config.json",
             Json{{"command", "embed"},
                  {"version", kVersion},
                  {"weights", canonical_string(a.weights)},
                  {"plans", canonical_string(a.plans)},
                  {"labels", a.labels.empty() ? std::string{} : canonical_string(a.labels)},
                  {"globals", globals_json(g)},
                  {"slides", slide_list(outcomes)}});
  write_json(out / "report.json", batch_report("embed", outcomes, seconds_since(t0)));
  log.info("embed_done", {{"rows", vectors.size()}});
  return batch_exit_code(outcomes);
}

// ---------------------------------------------------------------- search

struct SearchArgs {
  std::string store = "emb";
  std::string level = "patch";
  int k = 5;
  std::string exclude = "patient";
  std::string report;
};

Json optional_score(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

Json metric_block(const RetrievalResult& r) {
  Json j;
  j["k"] = r.k;
  j["queries"] = r.truths.size();
  j["accuracy"] = {{"top1", r.accuracy.top1},
                   {"mv3", optional_score(r.accuracy.mv3)},
                   {"mv5", optional_score(r.accuracy.mv5)}};
  j["macro_f1"] = {{"top1", r.macro_f1.top1},
                   {"mv3", optional_score(r.macro_f1.mv3)},
                   {"mv5", optional_score(r.macro_f1.mv5)}};
  return j;
}

int cmd_search(const SearchArgs& a, const Globals&, Logger& log) {
  const auto store = load_store(a.store);
  const auto level = lower(a.level);
  const auto exclude = lower(a.exclude);
  Exclusion exclusion = Exclusion::kSamePatient;
  if (exclude == "self") {
    exclusion = Exclusion::kSelf;
  } else if (exclude == "slide") {
    exclusion = Exclusion::kSameSlide;
  } else if (exclude != "patient") {
    throw Error(ErrorCode::kInvalidArgument, "--exclude expects self, slide or patient");
  }
  if (level != "patch" && level != "wsi" && level != "both") {
    throw Error(ErrorCode::kInvalidArgument, "--level expects patch, wsi or both");
  }

  Json report;
  report["store"] = canonical_string(a.store);
  report["exclude"] = exclude;
  if (level == "patch" || level == "both") {
    report["patch"] = metric_block(knn_leave_one_out(store, a.k, exclusion));
  }
  if (level == "wsi" || level == "both") {
    report["wsi"] = metric_block(wsi_leave_one_out(store, a.k, exclusion == Exclusion::kSamePatient));
  }
  for (const char* key : {"patch", "wsi"}) {
    if (!report.contains(key)) continue;
    const auto& b = report[key];
    std::cout << key << " accuracy top1=" << b["accuracy"]["top1"].dump()
              << " mv3=" << b["accuracy"]["mv3"].dump() << " mv5=" << b["accuracy"]["mv5"].dump()
              << " | macro_f1 top1=" << b["macro_f1"]["top1"].dump()
              << " mv3=" << b["macro_f1"]["mv3"].dump() << " mv5=" << b["macro_f1"]["mv5"].dump()
              << "\n";
  }
  if (!a.report.empty()) {
    const fs::path path = a.report;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_json(path, report);
  }
  log.info("search_done", {{"level", level}, {"rows", store.size()}});
  return 0;
}

// ---------------------------------------------------------------- probe

struct ProbeArgs {
  std::string store = "emb";
  ProbeOptions options;
  std::string report;
};

int cmd_probe(const ProbeArgs& a, const Globals&, Logger& log) {
  const auto store = load_store(a.store);
  const auto r = linear_probe_cv(store, a.options);
  std::cout << "accuracy " << format_mean_std(r.mean_accuracy, r.std_accuracy) << "  macro_f1 "
            << format_mean_std(r.mean_macro_f1, r.std_macro_f1) << "\n";
  if (!a.report.empty()) {
    Json folds = Json::array();
    for (const auto& f : r.folds) {
      folds.push_back({{"accuracy", f.accuracy}, {"macro_f1", f.macro_f1}, {"final_loss", f.final_loss}});
    }
    write_json(a.report, Json{{"folds", folds},
                              {"accuracy", {{"mean", r.mean_accuracy}, {"std", r.std_accuracy}}},
                              {"macro_f1", {{"mean", r.mean_macro_f1}, {"std", r.std_macro_f1}}},
                              {"seed", a.options.seed},
                              {"epochs", a.options.epochs},
                              {"lr", a.options.lr}});
  }
  log.info("probe_done", {{"folds", r.folds.size()}});
  return 0;
}

// ---------------------------------------------------------------- attn

struct AttnArgs {
  std::string weights;
  std::string image;
  std::string out = "attn";
};

int cmd_attn(const AttnArgs& a, const Globals&, Logger& log) {
  const PathDino model(load_weights(a.weights));
  const auto trace = model.forward(load_full_raster(a.image), true);
  const auto maps = attention_heatmaps(trace, model.config());
  const int grid = model.config().grid();
  const int scale = model.config().patch_size;
  const int side = grid * scale;
  fs::create_directories(a.out);
  for (std::size_t h = 0; h < maps.size(); ++h) {
    std::vector<std::uint8_t> up(static_cast<std::size_t>(side) * side);
    for (int y = 0; y < side; ++y) {
      for (int x = 0; x < side; ++x) {
        up[static_cast<std::size_t>(y) * side + x] =
            maps[h][static_cast<std::size_t>(y / scale) * grid + x / scale];
      }
    }
    write_png_gray(up, side, side, fs::path(a.out) / ("head_" + std::to_string(h) + ".png"));
  }
  log.info("attn_done", {{"heads", maps.size()}});
  return 0;
}

// ---------------------------------------------------------------- init-weights

struct InitArgs {
  std::string out = "model.json";
  std::uint64_t seed = 7;
  int image_size = 224;
};

int cmd_init(const InitArgs& a, const Globals&, Logger& log) {
  ModelConfig config;
  config.image_size = a.image_size;
  config.validate();
  const fs::path out = a.out;
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_weights(WeightContainer::random(config, a.seed), out);
  log.info("weights_written", {{"path", out.string()}, {"params", count_parameters(config).total}});
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"histopatch: whole-slide patch selection, augmentation, embedding and retrieval"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", kVersion);

  Globals g;
  app.add_option("--threads", g.threads, "Worker threads (0 = hardware; HISTOPATCH_THREADS caps)");
  app.add_option("--log", g.log_format, "Log format")->check(CLI::IsMember({"text", "json"}));
  app.add_option("--log-level", g.log_level, "Minimum log level")
      ->check(CLI::IsMember({"debug", "info", "warn", "error"}));

  FpsArgs fps;
  auto* c_fps = app.add_subcommand("fps", "Select patch locations per slide");
  c_fps->add_option("--input", fps.input, "Slide file or directory")->required();
  c_fps->add_option("--out", fps.out, "Plan output directory");
  c_fps->add_option("--n-patches", fps.n_patches, "Patches per slide");
  c_fps->add_option("--e-min", fps.e_min, "Minimum centre distance in mask pixels, or AUTO");
  c_fps->add_option("--bandwidth", fps.bandwidth, "scott or a fixed bandwidth");
  c_fps->add_option("--stride", fps.stride, "Candidate stride in mask pixels, or AUTO");
  c_fps->add_option("--coverage", fps.coverage, "Minimum tissue fraction per candidate");
  c_fps->add_option("--seed", fps.seed, "Base seed");
  c_fps->add_option("--patch-size", fps.patch_size, "Patch side in slide pixels");
  c_fps->add_option("--thumb-size", fps.thumb_size, "Thumbnail max dimension");
  c_fps->add_option("--threshold", fps.threshold, "otsu or a fixed luma threshold");
  c_fps->add_option("--min-area", fps.min_area, "Minimum contour area in mask pixels");
  c_fps->add_flag("--with-replacement", fps.with_replacement, "Sample with replacement");
  c_fps->add_option("--export-masks", fps.export_masks, "Directory for PBM masks and contours");

  ExtractArgs extract;
  auto* c_extract = app.add_subcommand("extract", "Write planned patches as PNG");
  c_extract->add_option("--plans", extract.plans, "fps output directory");
  c_extract->add_option("--out", extract.out, "Patch output directory");

  AugmentArgs augment;
  auto* c_augment = app.add_subcommand("augment", "HistoRotate multi-crop views");
  c_augment->add_option("--input", augment.input, "Image file or directory")->required();
  c_augment->add_option("--out", augment.out, "Crop output directory");
  c_augment->add_option("--n-local", augment.n_local, "Local crops per image");
  c_augment->add_option("--mode", augment.mode, "Global rotation: auto, continuous, discrete");
  c_augment->add_option("--seed", augment.seed, "Base seed");
  c_augment->add_option("--global-size", augment.global_size, "Global crop output side");
  c_augment->add_option("--local-size", augment.local_size, "Local crop output side");
  c_augment->add_option("--interpolation", augment.interpolation, "bilinear or nearest");

  EmbedArgs embed;
  auto* c_embed = app.add_subcommand("embed", "Embed planned patches");
  c_embed->add_option("--weights", embed.weights, "Weight manifest (model.json)")->required();
  c_embed->add_option("--plans", embed.plans, "fps output directory");
  c_embed->add_option("--out", embed.out, "Embedding store directory");
  c_embed->add_option("--labels", embed.labels, "CSV slide_id,label[,patient_id]");

  SearchArgs search;
  auto* c_search = app.add_subcommand("search", "Leave-one-out retrieval evaluation");
  c_search->add_option("--store", search.store, "Embedding store directory");
  c_search->add_option("--level", search.level, "patch, wsi or both");
  c_search->add_option("--k", search.k, "Neighbours retrieved");
  c_search->add_option("--exclude", search.exclude, "self, slide or patient");
  c_search->add_option("--report", search.report, "Report JSON path");

  ProbeArgs probe;
  auto* c_probe = app.add_subcommand("probe", "Cross-validated linear probe");
  c_probe->add_option("--store", probe.store, "Embedding store directory");
  c_probe->add_option("--folds", probe.options.folds, "Stratified folds");
  c_probe->add_option("--seed", probe.options.seed, "Fold assignment seed");
  c_probe->add_option("--epochs", probe.options.epochs, "Gradient steps");
  c_probe->add_option("--lr", probe.options.lr, "Learning rate");
  c_probe->add_option("--report", probe.report, "Report JSON path");

  AttnArgs attn;
  auto* c_attn = app.add_subcommand("attn", "Per-head class-token attention heatmaps");
  c_attn->add_option("--weights", attn.weights, "Weight manifest")->required();
  c_attn->add_option("--image", attn.image, "Input image")->required();
  c_attn->add_option("--out", attn.out, "Output directory");

  InitArgs init;
  auto* c_init = app.add_subcommand("init-weights", "Write randomly initialised weights");
  c_init->add_option("--out", init.out, "Manifest path");
  c_init->add_option("--seed", init.seed, "Seed");
  c_init->add_option("--image-size", init.image_size, "Input side (224 or 512)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  static const std::map<std::string, LogLevel> kLevels = {
      {"debug", LogLevel::kDebug}, {"info", LogLevel::kInfo},
      {"warn", LogLevel::kWarn},   {"error", LogLevel::kError}};
  Logger log(g.log_format == "json", kLevels.at(g.log_level));
  try {
    if (c_fps->parsed()) return cmd_fps(fps, g, log);
    if (c_extract->parsed()) return cmd_extract(extract, g, log);
    if (c_augment->parsed()) return cmd_augment(augment, g, log);
    if (c_embed->parsed()) return cmd_embed(embed, g, log);
    if (c_search->parsed()) return cmd_search(search, g, log);
    if (c_probe->parsed()) return cmd_probe(probe, g, log);
    if (c_attn->parsed()) return cmd_attn(attn, g, log);
    if (c_init->parsed()) return cmd_init(init, g, log);
  } catch (const Error& e) {
    log.log(LogLevel::kError, "fatal", {{"error", e.name()}, {"message", e.what()}});
    return 1;
  } catch (const std::exception& e) {
    log.log(LogLevel::kError, "fatal", {{"error", "InternalError"}, {"message", e.what()}});
    return 1;
  }
  return 1;
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"histopatch"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace histopatch::cli
