#include "commands.hpp"

#include <fstream>
#include <iostream>

#include "blend.hpp"
#include "evaluator.hpp"
#include "plot.hpp"
#include "report.hpp"
#include "toygen.hpp"
#include "trainer.hpp"

namespace fbind {

using nlohmann::json;

namespace {

namespace fs = std::filesystem;

// Config objects are strict: a key the command does not know is an error.
void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& command) {
  if (!j.is_object()) {
    throw ValidationError(command + ": config must be a JSON object");
  }
  for (const auto& [key, value] : j.items()) {
    (void)value;
    bool ok = false;
    for (const char* a : allowed) {
      if (key == a) {
        ok = true;
        break;
      }
    }
    if (!ok) {
      throw ValidationError(command + ": unknown config key '" + key + "'");
    }
  }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key) || j[key].is_null()) return fallback;
  try {
    return j[key].get<T>();
  } catch (const json::exception&) {
    throw ValidationError(std::string("config key '") + key +
                          "' has the wrong type");
  }
}

std::string require_string(const json& j, const char* key,
                           const std::string& command) {
  if (!j.contains(key) || !j[key].is_string() ||
      j[key].get<std::string>().empty()) {
    throw ValidationError(command + ": config key '" + key + "' is required");
  }
  return j[key].get<std::string>();
}

void write_run_json(const fs::path& where, const std::string& command,
                    const json& resolved) {
  json run;
  run["command"] = command;
  run["config"] = resolved;
  std::ofstream out(where);
  if (!out) throw IoError("cannot write '" + where.string() + "'");
  out << run.dump(2) << "\n";
}

fs::path run_json_for_dir(const fs::path& out_dir) { return out_dir / "run.json"; }

fs::path run_json_for_file(const fs::path& out_file) {
  fs::path p = out_file;
  p.replace_extension(".run.json");
  return p;
}

ClassCatalog catalog_for_manifest(const DatasetManifest& manifest,
                                  int num_classes, int ignore_id) {
  if (num_classes <= 0) {
    num_classes = scan_max_class_id(manifest, ignore_id) + 1;
    num_classes = std::max(num_classes, 2);
  }
  return ClassCatalog::make(num_classes, ignore_id);
}

NetworkConfig net_config_from_json(const json& j) {
  check_keys(j,
             {"num_classes", "encoder_tag", "output_stride", "encoder_width",
              "encoder_blocks", "branch_hidden", "fbh_hidden"},
             "net");
  NetworkConfig c;
  c.num_classes = get_or(j, "num_classes", c.num_classes);
  c.encoder_tag = get_or<std::string>(j, "encoder_tag", c.encoder_tag);
  c.output_stride = get_or(j, "output_stride", c.output_stride);
  c.encoder_width = get_or(j, "encoder_width", c.encoder_width);
  c.encoder_blocks = get_or(j, "encoder_blocks", c.encoder_blocks);
  c.branch_hidden = get_or(j, "branch_hidden", c.branch_hidden);
  c.fbh_hidden = get_or(j, "fbh_hidden", c.fbh_hidden);
  c.validate();
  return c;
}

json net_config_to_json(const NetworkConfig& c) {
  return json{{"num_classes", c.num_classes},
              {"encoder_tag", c.encoder_tag},
              {"output_stride", c.output_stride},
              {"encoder_width", c.encoder_width},
              {"encoder_blocks", c.encoder_blocks},
              {"branch_hidden", c.branch_hidden},
              {"fbh_hidden", c.fbh_hidden}};
}

}  // namespace

json cmd_toygen(const json& config) {
  check_keys(config,
             {"n", "size", "classes", "occlusion_rate", "max_instances",
              "seed", "out"},
             "toygen");
  ToyConfig tc;
  tc.n_images = get_or(config, "n", tc.n_images);
  tc.image_size = get_or(config, "size", tc.image_size);
  tc.n_classes = get_or(config, "classes", tc.n_classes);
  tc.occlusion_rate = get_or(config, "occlusion_rate", tc.occlusion_rate);
  tc.max_instances = get_or(config, "max_instances", tc.max_instances);
  tc.seed = get_or<std::uint64_t>(config, "seed", tc.seed);
  const fs::path out_dir = require_string(config, "out", "toygen");
  tc.validate();

  const DatasetManifest manifest = generate_toy_dataset(tc, out_dir);

  json resolved{{"n", tc.n_images},
                {"size", tc.image_size},
                {"classes", tc.n_classes},
                {"occlusion_rate", tc.occlusion_rate},
                {"max_instances", tc.max_instances},
                {"seed", tc.seed},
                {"out", out_dir.string()}};
  write_run_json(run_json_for_dir(out_dir), "toygen", resolved);

  return json{{"manifest", (out_dir / "manifest.jsonl").string()},
              {"images", manifest.entries.size()}};
}

json cmd_blend(const json& config) {
  check_keys(config,
             {"manifest", "strategy", "delta_lo", "delta_hi", "partners",
              "mixup_alpha", "seed", "float_npy", "single_cluster",
              "num_classes", "ignore_id", "out"},
             "blend");
  const fs::path manifest_path = require_string(config, "manifest", "blend");
  BlendStrategy strategy;
  strategy.tag = parse_blend_tag(require_string(config, "strategy", "blend"));
  strategy.delta_lo = get_or(config, "delta_lo", strategy.delta_lo);
  strategy.delta_hi = get_or(config, "delta_hi", strategy.delta_hi);
  strategy.partners = get_or(config, "partners", strategy.partners);
  strategy.mixup_alpha = get_or(config, "mixup_alpha", strategy.mixup_alpha);
  strategy.validate();
  const std::uint64_t seed = get_or<std::uint64_t>(config, "seed", 1);
  BlendOutputOptions opts;
  opts.float_npy = get_or(config, "float_npy", false);
  opts.single_cluster = get_or(config, "single_cluster", false);
  const int num_classes = get_or(config, "num_classes", 0);
  const int ignore_id = get_or(config, "ignore_id", 255);
  const fs::path out_dir = require_string(config, "out", "blend");

  const DatasetManifest source = DatasetManifest::read(manifest_path);
  const ClassCatalog catalog = catalog_for_manifest(source, num_classes, ignore_id);
  const DatasetManifest result = generate_blended_dataset(
      source, catalog, strategy, seed, out_dir, opts);

  json resolved{{"manifest", manifest_path.string()},
                {"strategy", blend_tag_name(strategy.tag)},
                {"delta_lo", strategy.delta_lo},
                {"delta_hi", strategy.delta_hi},
                {"partners", strategy.partners},
                {"mixup_alpha", strategy.mixup_alpha},
                {"seed", seed},
                {"float_npy", opts.float_npy},
                {"single_cluster", opts.single_cluster},
                {"num_classes", catalog.num_classes},
                {"ignore_id", ignore_id},
                {"out", out_dir.string()}};
  write_run_json(run_json_for_dir(out_dir), "blend", resolved);

  return json{{"manifest", (out_dir / "manifest.jsonl").string()},
              {"entries", result.entries.size()}};
}

json cmd_cooc(const json& config) {
  check_keys(config, {"manifest", "num_classes", "ignore_id", "out"}, "cooc");
  const fs::path manifest_path = require_string(config, "manifest", "cooc");
  const int num_classes = get_or(config, "num_classes", 0);
  const int ignore_id = get_or(config, "ignore_id", 255);
  const fs::path out_path = require_string(config, "out", "cooc");

  const DatasetManifest manifest = DatasetManifest::read(manifest_path);
  const ClassCatalog catalog =
      catalog_for_manifest(manifest, num_classes, ignore_id);
  const CoOccurrenceMatrix m = compute_cooccurrence(manifest, catalog);
  m.save_json(out_path);

  json resolved{{"manifest", manifest_path.string()},
                {"num_classes", catalog.num_classes},
                {"ignore_id", ignore_id},
                {"out", out_path.string()}};
  write_run_json(run_json_for_file(out_path), "cooc", resolved);

  return json{{"out", out_path.string()},
              {"num_classes", catalog.num_classes}};
}

json cmd_train(const json& config) {
  check_keys(config,
             {"stage", "manifest", "out", "resume", "net", "base_lr",
              "momentum", "weight_decay", "epochs", "poly_power", "crop_size",
              "batch_size", "seed", "ppa_epsilon", "workers", "ignore_id"},
             "train");
  TrainConfig tc;
  tc.stage = get_or(config, "stage", 1);
  tc.base_lr = get_or(config, "base_lr", 0.0);
  tc.momentum = get_or(config, "momentum", tc.momentum);
  tc.weight_decay = get_or(config, "weight_decay", tc.weight_decay);
  tc.epochs = get_or(config, "epochs", tc.epochs);
  tc.poly_power = get_or(config, "poly_power", tc.poly_power);
  tc.crop_size = get_or(config, "crop_size", tc.crop_size);
  tc.batch_size = get_or(config, "batch_size", tc.batch_size);
  tc.seed = get_or<std::uint64_t>(config, "seed", tc.seed);
  tc.ppa_epsilon = get_or(config, "ppa_epsilon", tc.ppa_epsilon);
  tc.workers = get_or(config, "workers", tc.workers);
  tc.validate();
  const int ignore_id = get_or(config, "ignore_id", 255);
  const fs::path manifest_path = require_string(config, "manifest", "train");
  const fs::path out_dir = require_string(config, "out", "train");
  const std::string resume = get_or<std::string>(config, "resume", "");

  if (tc.stage == 2 && resume.empty()) {
    throw ValidationError(
        "train: stage 2 requires --resume with a stage-1 checkpoint");
  }
  if (!resume.empty() && config.contains("net")) {
    throw ValidationError("train: 'net' and 'resume' are mutually exclusive");
  }

  BindingNet net = [&] {
    if (!resume.empty()) return BindingNet::load(resume);
    const json net_json = config.contains("net") ? config["net"] : json::object();
    return BindingNet::build(net_config_from_json(net_json),
                             Rng::derive(tc.seed, 0xfb));
  }();

  const DatasetManifest manifest = DatasetManifest::read(manifest_path);
  const ClassCatalog catalog =
      ClassCatalog::make(net.cfg.num_classes, ignore_id);

  fs::create_directories(out_dir);
  std::ofstream metrics(out_dir / "metrics.jsonl");
  if (!metrics) {
    throw IoError("cannot write '" + (out_dir / "metrics.jsonl").string() + "'");
  }
  const auto log = train_stage(net, manifest, catalog, tc,
                               [&metrics](const EpochRecord& r) {
                                 metrics << json{{"epoch", r.epoch},
                                                 {"lr", r.lr},
                                                 {"l_fb", r.l_fb},
                                                 {"l_t", r.l_t},
                                                 {"l_p", r.l_p},
                                                 {"l_ppa", r.l_ppa},
                                                 {"total", r.total}}
                                                .dump()
                                         << "\n"
                                         << std::flush;
                               });

  const fs::path ckpt = out_dir / "checkpoint.fbnd";
  net.save(ckpt);

  json resolved{{"stage", tc.stage},
                {"manifest", manifest_path.string()},
                {"out", out_dir.string()},
                {"resume", resume},
                {"base_lr", tc.resolved_lr()},
                {"momentum", tc.momentum},
                {"weight_decay", tc.weight_decay},
                {"epochs", tc.epochs},
                {"poly_power", tc.poly_power},
                {"crop_size", tc.crop_size},
                {"batch_size", tc.batch_size},
                {"seed", tc.seed},
                {"ppa_epsilon", tc.ppa_epsilon},
                {"workers", tc.workers},
                {"ignore_id", ignore_id}};
  if (resume.empty()) resolved["net"] = net_config_to_json(net.cfg);
  write_run_json(run_json_for_dir(out_dir), "train", resolved);

  return json{{"checkpoint", ckpt.string()},
              {"metrics", (out_dir / "metrics.jsonl").string()},
              {"epochs", log.size()},
              {"final_total", log.empty() ? 0.0 : log.back().total}};
}

json cmd_eval(const json& config) {
  check_keys(config,
             {"ckpt", "manifest", "out", "subset", "cooc", "anchor",
              "any_pair", "perturbation", "max_norm", "head", "target",
              "method", "setting", "per_image", "csv", "plot", "ignore_id"},
             "eval");
  const fs::path ckpt_path = require_string(config, "ckpt", "eval");
  const fs::path manifest_path = require_string(config, "manifest", "eval");
  const fs::path out_path = require_string(config, "out", "eval");
  const int ignore_id = get_or(config, "ignore_id", 255);

  BindingNet net = BindingNet::load(ckpt_path);
  const ClassCatalog catalog = ClassCatalog::make(net.cfg.num_classes, ignore_id);
  const DatasetManifest manifest = DatasetManifest::read(manifest_path);

  // anchor default: the catalog's person class when it has one, else class 1
  int anchor = get_or(config, "anchor", 0);
  if (anchor == 0) {
    anchor = 1;
    for (std::size_t i = 0; i < catalog.names.size(); ++i) {
      if (catalog.names[i] == "person") anchor = static_cast<int>(i);
    }
  }
  SubsetSpec spec = SubsetSpec::parse(get_or<std::string>(config, "subset", "all"),
                                      anchor);
  spec.any_pair = get_or(config, "any_pair", false);

  std::optional<CoOccurrenceMatrix> cooc;
  const std::string cooc_path = get_or<std::string>(config, "cooc", "");
  if (spec.kind == SubsetKind::CoocThreshold) {
    if (cooc_path.empty()) {
      throw ValidationError(
          "eval: subset cooc<T needs 'cooc' pointing at a matrix JSON "
          "(produce one with the cooc command)");
    }
    cooc = CoOccurrenceMatrix::load_json(cooc_path);
    if (cooc->num_classes != catalog.num_classes) {
      throw ValidationError("eval: co-occurrence matrix has " +
                            std::to_string(cooc->num_classes) +
                            " classes, checkpoint has " +
                            std::to_string(catalog.num_classes));
    }
  }

  EvalOptions opts;
  const std::string head = get_or<std::string>(config, "head", "auto");
  if (head == "auto") {
    opts.head = EvalHead::Auto;
  } else if (head == "st") {
    opts.head = EvalHead::Dominant;
  } else if (head == "sp") {
    opts.head = EvalHead::Phantom;
  } else if (head == "sfb") {
    opts.head = EvalHead::Binding;
  } else {
    throw ValidationError("eval: head must be auto|st|sp|sfb");
  }
  const std::string target = get_or<std::string>(config, "target", "primary");
  if (target == "second") {
    opts.target_second = true;
  } else if (target != "primary") {
    throw ValidationError("eval: target must be primary|second");
  }
  const std::string pert = get_or<std::string>(config, "perturbation", "");
  if (!pert.empty()) opts.perturbation = fs::path(pert);
  if (config.contains("max_norm") && !config["max_norm"].is_null()) {
    opts.max_norm = config["max_norm"].get<double>();
  }
  opts.per_image = get_or(config, "per_image", false);
  opts.method = get_or<std::string>(config, "method", "model");
  opts.setting = get_or<std::string>(config, "setting", "clean");

  const EvalReport report = evaluate(net, manifest, catalog, spec, opts,
                                     cooc ? &*cooc : nullptr);
  report.save_json(out_path);
  const std::string csv = get_or<std::string>(config, "csv", "");
  if (!csv.empty()) report.save_csv(csv);
  const std::string plot = get_or<std::string>(config, "plot", "");
  if (!plot.empty()) {
    std::vector<std::pair<std::string, double>> bars;
    for (std::size_t c = 0; c < report.class_names.size(); ++c) {
      if (report.per_class_iou[c]) {
        bars.emplace_back(report.class_names[c], *report.per_class_iou[c]);
      }
    }
    bar_chart(plot, "per-class iou (" + report.subset + ")", "iou", bars);
  }

  json resolved{{"ckpt", ckpt_path.string()},
                {"manifest", manifest_path.string()},
                {"out", out_path.string()},
                {"subset", get_or<std::string>(config, "subset", "all")},
                {"cooc", cooc_path},
                {"anchor", anchor},
                {"any_pair", spec.any_pair},
                {"perturbation", pert},
                {"head", head},
                {"target", target},
                {"method", opts.method},
                {"setting", opts.setting},
                {"per_image", opts.per_image},
                {"csv", csv},
                {"plot", plot},
                {"ignore_id", ignore_id}};
  if (opts.max_norm) resolved["max_norm"] = *opts.max_norm;
  write_run_json(run_json_for_file(out_path), "eval", resolved);

  return json{{"report", out_path.string()},
              {"miou", report.miou},
              {"image_count", report.image_count},
              {"mean_phantom_activation", report.mean_phantom_activation}};
}

json cmd_report(const json& config) {
  check_keys(config, {"inputs", "out"}, "report");
  if (!config.contains("inputs") || !config["inputs"].is_array() ||
      config["inputs"].empty()) {
    throw ValidationError("report: 'inputs' must be a non-empty array of report paths");
  }
  std::vector<fs::path> inputs;
  for (const auto& p : config["inputs"]) {
    inputs.emplace_back(p.get<std::string>());
  }
  const fs::path out_dir = require_string(config, "out", "report");

  const ReportOutput out = merge_reports(inputs, out_dir);

  json resolved{{"inputs", config["inputs"]}, {"out", out_dir.string()}};
  write_run_json(run_json_for_dir(out_dir), "report", resolved);

  json summary{{"summary_csv", out.summary_csv.string()},
               {"plot", out.plot.string()},
               {"rows", out.rows}};
  if (out.grid_csv) summary["grid_csv"] = out.grid_csv->string();
  return summary;
}

json run_command(const std::string& name, const json& config) {
  if (name == "toygen") return cmd_toygen(config);
  if (name == "blend") return cmd_blend(config);
  if (name == "cooc") return cmd_cooc(config);
  if (name == "train") return cmd_train(config);
  if (name == "eval") return cmd_eval(config);
  if (name == "report") return cmd_report(config);
  throw ValidationError("unknown command '" + name + "'");
}

}  // namespace fbind
