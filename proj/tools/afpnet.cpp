#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "afp/checkpoint.hpp"
#include "afp/config.hpp"
#include "afp/data.hpp"
#include "afp/error.hpp"
#include "afp/evalproto.hpp"
#include "afp/gradcheck.hpp"
#include "afp/train.hpp"

namespace {

using afp::ErrorKind;
using json = nlohmann::json;
namespace fs = std::filesystem;

// Synthetic held-out samples start at this index so they never overlap the
// training indices.
constexpr std::uint64_t kValFirstIndex = 1'000'000;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool out_required) {
  cmd->add_option("--config", c.config, "Run configuration (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Seed override");
  auto* out = cmd->add_option("--out", c.out, "Output path");
  if (out_required) out->required();
}

afp::RunConfig load_config(const Common& c) {
  afp::RunConfig cfg = c.config.empty() ? afp::RunConfig{} : afp::load_run_config(c.config);
  if (c.seed) cfg.train.seed = *c.seed;
  cfg.validate();
  return cfg;
}

void emit(const std::string& out, const std::string& text) {
  if (out.empty()) {
    std::cout << text;
    std::cout.flush();
    return;
  }
  std::ofstream f(out, std::ios::trunc);
  afp::check(f.good(), ErrorKind::kIo, "cannot write " + out);
  f << text;
  afp::check(f.good(), ErrorKind::kIo, "write failed for " + out);
}

json metrics_json(double threshold, const afp::MetricsReport& m) {
  return {{"threshold", threshold}, {"tp", m.counts.tp},   {"fp", m.counts.fp},
          {"fn", m.counts.fn},      {"precision", m.precision}, {"recall", m.recall},
          {"f1", m.f1},             {"f2", m.f2}};
}

json epoch_json(const afp::train::EpochLog& log) {
  json j = {{"epoch", log.epoch},   {"loss", log.mean_loss}, {"l_loc", log.mean_loc},
            {"l_cls", log.mean_cls}, {"lr", log.lr},         {"seconds", log.seconds}};
  if (log.val_f1) {
    j["val_f1"] = *log.val_f1;
    j["val_threshold"] = log.val_threshold;
  }
  return j;
}

std::vector<afp::Detection> run_predict(const afp::checkpoint::AnyCheckpoint& ck,
                                        const afp::Tensor& image, double thresh,
                                        double nms_iou) {
  return std::visit(
      [&](const auto& loaded) {
        return afp::train::predict(loaded.state.model, image, thresh, nms_iou);
      },
      ck);
}

// ---- train ----------------------------------------------------------------

struct TrainArgs {
  Common common;
  std::string data;
  std::string val;
  std::string resume;
  std::string log;
};

template <typename T>
void train_with(const afp::RunConfig& cfg, afp::train::TrainState<T> state,
                const TrainArgs& args) {
  std::vector<afp::Sample> train_data;
  std::vector<afp::Sample> val_data;
  if (!args.data.empty()) {
    train_data = afp::data::load_dataset(args.data);
  } else {
    train_data = afp::data::synth_dataset(cfg.synth, 0, cfg.train.train_samples);
  }
  if (!args.val.empty()) {
    val_data = afp::data::load_dataset(args.val);
  } else if (args.data.empty()) {
    val_data = afp::data::synth_dataset(cfg.synth, kValFirstIndex, cfg.train.val_samples);
  }

  std::ofstream log_file;
  if (!args.log.empty()) {
    log_file.open(args.log, std::ios::trunc);
    afp::check(log_file.good(), ErrorKind::kIo, "cannot write " + args.log);
  }
  const fs::path out = args.common.out;
  const int every = cfg.train.checkpoint_every;
  afp::train::train<T>(
      state, cfg, train_data, val_data,
      [&](const afp::train::EpochLog& log) {
        const std::string line = epoch_json(log).dump();
        std::cout << line << '\n' << std::flush;
        if (log_file.is_open()) log_file << line << '\n' << std::flush;
      },
      [&](const afp::train::TrainState<T>& s) {
        if (every > 0 && s.epoch % every == 0) afp::checkpoint::save(out, cfg, s);
      });
  afp::checkpoint::save(out, cfg, state);
}

void cmd_train(const TrainArgs& args) {
  if (args.resume.empty()) {
    const afp::RunConfig cfg = load_config(args.common);
    if (cfg.train.precision == afp::Precision::kFloat64)
      train_with<double>(cfg, afp::train::init_state<double>(cfg), args);
    else
      train_with<float>(cfg, afp::train::init_state<float>(cfg), args);
    return;
  }
  auto ck = afp::checkpoint::load(args.resume);
  std::visit(
      [&](auto& loaded) {
        afp::RunConfig cfg = loaded.config;
        if (!args.common.config.empty()) cfg = load_config(args.common);
        else if (args.common.seed) cfg.train.seed = *args.common.seed;
        afp::check(afp::to_json(cfg.pyramid) == afp::to_json(loaded.config.pyramid),
                   ErrorKind::kInvalidArgument,
                   "resume: pyramid config differs from the checkpoint's");
        using State = std::decay_t<decltype(loaded.state)>;
        using T = std::decay_t<decltype(loaded.state.model.params()[0][0])>;
        const bool is_double = std::is_same_v<T, double>;
        afp::check(is_double == (cfg.train.precision == afp::Precision::kFloat64),
                   ErrorKind::kInvalidArgument,
                   "resume: precision differs from the checkpoint's");
        train_with<T>(cfg, State(std::move(loaded.state)), args);
      },
      ck);
}

// ---- predict --------------------------------------------------------------

struct PredictArgs {
  Common common;
  std::string checkpoint;
  std::string data;
  std::vector<std::string> images;
  double score_thresh = 0.05;
  double nms_iou = 0.1;
};

void cmd_predict(const PredictArgs& args) {
  afp::check(args.data.empty() != args.images.empty(), ErrorKind::kInvalidArgument,
             "predict: give exactly one of --data or --images");
  const auto ck = afp::checkpoint::load(args.checkpoint);
  std::vector<afp::DetectionRecord> records;
  if (!args.data.empty()) {
    for (const auto& s : afp::data::load_dataset(args.data))
      records.push_back({s.id, run_predict(ck, s.image, args.score_thresh, args.nms_iou)});
  } else {
    for (const auto& path : args.images) {
      const afp::Tensor image = afp::data::load_image_ppm(path);
      records.push_back({path, run_predict(ck, image, args.score_thresh, args.nms_iou)});
    }
  }
  emit(args.common.out, afp::data::detections_jsonl(records));
}

// ---- eval / prcurve -------------------------------------------------------

struct EvalArgs {
  Common common;
  std::string data;
  std::string detections;
  std::string checkpoint;
  std::vector<double> thresholds;
  double nms_iou = 0.1;
};

struct EvalInputs {
  std::vector<std::vector<afp::Detection>> dets;
  std::vector<std::vector<afp::GroundTruth>> gts;
};

EvalInputs eval_inputs(const EvalArgs& args, double min_thresh) {
  afp::check(args.detections.empty() != args.checkpoint.empty(),
             ErrorKind::kInvalidArgument,
             "give exactly one of --detections or --checkpoint");
  EvalInputs in;
  if (!args.checkpoint.empty()) {
    const auto ck = afp::checkpoint::load(args.checkpoint);
    for (const auto& s : afp::data::load_dataset(args.data)) {
      in.dets.push_back(run_predict(ck, s.image, min_thresh, args.nms_iou));
      in.gts.push_back(s.gts);
    }
    return in;
  }
  const auto annotations = afp::data::load_annotations(args.data);
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < annotations.size(); ++i) {
    afp::check(index.emplace(annotations[i].image, i).second, ErrorKind::kParse,
               args.data + ": duplicate image " + annotations[i].image);
    in.gts.push_back(annotations[i].gts);
  }
  in.dets.resize(annotations.size());
  for (auto& rec : afp::data::load_detections(args.detections)) {
    const auto it = index.find(rec.image);
    afp::check(it != index.end(), ErrorKind::kInvalidArgument,
               args.detections + ": image " + rec.image + " has no annotation");
    auto& slot = in.dets[it->second];
    slot.insert(slot.end(), rec.detections.begin(), rec.detections.end());
  }
  return in;
}

void cmd_eval(const EvalArgs& args) {
  const double thresh = args.thresholds.empty() ? 0.5 : args.thresholds.front();
  afp::check(args.thresholds.size() <= 1, ErrorKind::kInvalidArgument,
             "eval takes a single --score-thresh");
  const EvalInputs in = eval_inputs(args, thresh);
  const afp::EvalCounts counts = afp::eval::evaluate(in.dets, in.gts, thresh);
  json j = metrics_json(thresh, afp::eval::metrics(counts));
  j["images"] = in.gts.size();
  emit(args.common.out, j.dump() + "\n");
}

void cmd_prcurve(const EvalArgs& args) {
  const std::vector<double> thresholds =
      args.thresholds.empty() ? afp::eval::default_thresholds() : args.thresholds;
  const EvalInputs in = eval_inputs(args, thresholds.front());
  const auto rows = afp::eval::pr_sweep(in.dets, in.gts, thresholds);
  emit(args.common.out, afp::eval::sweep_csv(rows));
}

// ---- assign-dump ----------------------------------------------------------

struct AssignArgs {
  Common common;
  std::string boxes;
  std::string data;
  int index = 0;
};

void cmd_assign_dump(const AssignArgs& args) {
  const afp::RunConfig cfg = load_config(args.common);
  afp::check(args.boxes.empty() != args.data.empty(), ErrorKind::kInvalidArgument,
             "assign-dump: give exactly one of --boxes or --data");
  std::vector<afp::GroundTruth> gts;
  if (!args.boxes.empty()) {
    json j;
    try {
      j = json::parse(args.boxes);
    } catch (const json::exception& e) {
      afp::fail(ErrorKind::kParse, std::string("--boxes: ") + e.what());
    }
    afp::check(j.is_array(), ErrorKind::kParse, "--boxes must be a JSON array of boxes");
    for (const auto& b : j) {
      afp::check(b.is_array() && b.size() == 4, ErrorKind::kParse,
                 "--boxes: each box is [x1, y1, x2, y2]");
      gts.push_back({{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(),
                      b[3].get<double>()},
                     0});
    }
  } else {
    const auto records = afp::data::load_annotations(args.data);
    afp::check(args.index >= 0 && args.index < static_cast<int>(records.size()),
               ErrorKind::kInvalidArgument,
               "--index " + std::to_string(args.index) + " is out of range");
    gts = records[args.index].gts;
  }
  const int size = cfg.pyramid.input_size;
  afp::data::validate_boxes(gts, size, size, "--boxes");
  const auto levels = afp::make_levels(size, cfg.pyramid.strides);
  const auto maps = afp::assign::assign(gts, levels, cfg.assign);
  json j = afp::to_json(maps);
  emit(args.common.out, j.dump() + "\n");
}

// ---- gradcheck ------------------------------------------------------------

struct GradArgs {
  Common common;
  int samples = 20;
  int batch = 2;
  double eps = 1e-5;
  double tolerance = 1e-3;
  double jitter = 0.02;
};

bool cmd_gradcheck(const GradArgs& args) {
  const afp::RunConfig cfg = load_config(args.common);
  afp::check(args.batch > 0, ErrorKind::kInvalidArgument, "--batch must be positive");
  afp::Model<double> model(cfg.pyramid);
  model.initialize(cfg.train.seed);
  afp::gradcheck::jitter(model.params(), args.jitter, cfg.train.seed);
  const auto batch = afp::data::synth_dataset(cfg.synth, 0, args.batch);
  const int size = cfg.pyramid.input_size;
  afp::Tensor images(afp::Shape{args.batch, 3, size, size});
  std::vector<afp::AssignmentMaps> maps;
  const auto levels = afp::make_levels(size, cfg.pyramid.strides);
  for (int i = 0; i < args.batch; ++i) {
    std::copy(batch[i].image.data().begin(), batch[i].image.data().end(),
              images.plane(i, 0));
    maps.push_back(afp::assign::assign(batch[i].gts, levels, cfg.assign));
  }
  const auto report = afp::gradcheck::check_model(model, images, maps, cfg.loss, args.samples,
                                                  args.eps, cfg.train.seed);
  json rows = json::array();
  for (const auto& e : report.entries)
    rows.push_back({{"param", e.name},
                    {"index", e.index},
                    {"analytic", e.analytic},
                    {"numeric", e.numeric},
                    {"rel_error", e.rel_error}});
  const bool pass = report.max_rel_error < args.tolerance;
  const json j = {{"max_rel_error", report.max_rel_error},
                  {"floor", report.floor},
                  {"tolerance", args.tolerance},
                  {"pass", pass},
                  {"entries", rows}};
  emit(args.common.out, j.dump() + "\n");
  return pass;
}

// ---- synth ----------------------------------------------------------------

struct SynthArgs {
  Common common;
  int count = 16;
  std::uint64_t first = 0;
};

void cmd_synth(const SynthArgs& args) {
  afp::RunConfig cfg = load_config(args.common);
  if (args.common.seed) cfg.synth.seed = *args.common.seed;
  afp::check(args.count >= 0, ErrorKind::kInvalidArgument, "--count must be non-negative");
  const fs::path root = args.common.out;
  std::error_code ec;
  fs::create_directories(root / "images", ec);
  afp::check(!ec, ErrorKind::kIo, "cannot create " + (root / "images").string());
  std::vector<afp::AnnotationRecord> records;
  for (int i = 0; i < args.count; ++i) {
    const std::uint64_t index = args.first + static_cast<std::uint64_t>(i);
    const afp::Sample s = afp::data::synth_sample(cfg.synth, index);
    char name[32];
    std::snprintf(name, sizeof(name), "images/%06llu.ppm",
                  static_cast<unsigned long long>(index));
    afp::data::write_image_ppm(root / name, s.image);
    records.push_back({name, s.gts});
  }
  afp::data::write_annotations(root / "annotations.jsonl", records);
}

void print_error(const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Anchor-free polyp detector: training, inference and evaluation"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Train a model and write a checkpoint");
  add_common(train, train_args.common, true);
  train->add_option("--data", train_args.data, "Training annotations (JSONL); default synthetic")
      ->check(CLI::ExistingFile);
  train->add_option("--val", train_args.val, "Validation annotations (JSONL)")
      ->check(CLI::ExistingFile);
  train->add_option("--resume", train_args.resume, "Continue from a checkpoint")
      ->check(CLI::ExistingFile);
  train->add_option("--log", train_args.log, "Also write epoch lines to this file");

  PredictArgs predict_args;
  auto* predict = app.add_subcommand("predict", "Run a checkpoint on images");
  add_common(predict, predict_args.common, false);
  predict->add_option("--checkpoint", predict_args.checkpoint, "Checkpoint file")
      ->required()
      ->check(CLI::ExistingFile);
  predict->add_option("--data", predict_args.data, "Annotations (JSONL) naming the images")
      ->check(CLI::ExistingFile);
  predict->add_option("--images", predict_args.images, "PPM images")->check(CLI::ExistingFile);
  predict->add_option("--score-thresh", predict_args.score_thresh, "Keep scores above this")
      ->capture_default_str();
  predict->add_option("--nms-iou", predict_args.nms_iou, "NMS IoU threshold")
      ->capture_default_str();

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "Centroid-matched metrics at one threshold");
  add_common(eval, eval_args.common, false);
  EvalArgs pr_args;
  auto* prcurve = app.add_subcommand("prcurve", "Precision/recall sweep as CSV");
  add_common(prcurve, pr_args.common, false);
  for (auto [cmd, a] : {std::pair{eval, &eval_args}, std::pair{prcurve, &pr_args}}) {
    cmd->add_option("--data", a->data, "Ground-truth annotations (JSONL)")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--detections", a->detections, "Detection dump (JSONL)")
        ->check(CLI::ExistingFile);
    cmd->add_option("--checkpoint", a->checkpoint, "Predict with this checkpoint instead")
        ->check(CLI::ExistingFile);
    cmd->add_option("--nms-iou", a->nms_iou, "NMS IoU threshold with --checkpoint")
        ->capture_default_str();
  }
  eval->add_option("--score-thresh", eval_args.thresholds, "Score threshold (default 0.5)")
      ->expected(1);
  prcurve
      ->add_option("--score-thresh", pr_args.thresholds,
                   "Ascending thresholds, comma separated (default 0.05..0.95)")
      ->delimiter(',');

  AssignArgs assign_args;
  auto* assign = app.add_subcommand("assign-dump", "Label assignment maps as JSON");
  add_common(assign, assign_args.common, false);
  assign->add_option("--boxes", assign_args.boxes, "Boxes as JSON, e.g. [[x1,y1,x2,y2]]");
  assign->add_option("--data", assign_args.data, "Annotations (JSONL)")
      ->check(CLI::ExistingFile);
  assign->add_option("--index", assign_args.index, "Record index within --data")
      ->capture_default_str();

  GradArgs grad_args;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of the full model");
  add_common(grad, grad_args.common, false);
  grad->add_option("--samples", grad_args.samples, "Parameters to probe")->capture_default_str();
  grad->add_option("--batch", grad_args.batch, "Synthetic images per batch")
      ->capture_default_str();
  grad->add_option("--eps", grad_args.eps, "Central-difference step")->capture_default_str();
  grad->add_option("--jitter", grad_args.jitter,
                   "Uniform noise added to the initial weights before checking")
      ->capture_default_str();
  grad->add_option("--tolerance", grad_args.tolerance, "Maximum relative error")
      ->capture_default_str();

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset (PPM + JSONL)");
  add_common(synth, synth_args.common, true);
  synth->add_option("--count", synth_args.count, "Number of images")->capture_default_str();
  synth->add_option("--first", synth_args.first, "Index of the first image")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return 2;
  }

  try {
    if (*train) cmd_train(train_args);
    if (*predict) cmd_predict(predict_args);
    if (*eval) cmd_eval(eval_args);
    if (*prcurve) cmd_prcurve(pr_args);
    if (*assign) cmd_assign_dump(assign_args);
    if (*grad && !cmd_gradcheck(grad_args)) {
      print_error("gradcheck_failed", "relative error above tolerance");
      return 3;
    }
    if (*synth) cmd_synth(synth_args);
  } catch (const afp::Error& e) {
    print_error(std::string(afp::to_string(e.kind())), e.what());
    return 1;
  } catch (const nlohmann::json::exception& e) {
    print_error("parse_error", e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return 1;
  }
  return 0;
}
