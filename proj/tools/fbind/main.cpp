// fbind CLI: thin front end over the libfbind C API. Flags are folded into
// the command's JSON config (flags > config file > defaults) and handed to
// the library; results come back as JSON on stdout.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fbind.h"
#include "json.hpp"

namespace {

using nlohmann::json;

const char* status_name(fb_status s) {
  switch (s) {
    case FB_OK: return "OK";
    case FB_ERR_INVALID_ARGUMENT: return "INVALID_ARGUMENT";
    case FB_ERR_VALIDATION: return "VALIDATION";
    case FB_ERR_IO: return "IO";
    case FB_ERR_RUNTIME: return "RUNTIME";
  }
  return "UNKNOWN";
}

int exit_code(fb_status s) {
  switch (s) {
    case FB_OK: return 0;
    case FB_ERR_INVALID_ARGUMENT:
    case FB_ERR_VALIDATION: return 1;
    default: return 2;
  }
}

int fail(const std::string& code, const std::string& message, int rc) {
  std::cerr << "ERROR " << code << ": " << message << "\n";
  return rc;
}

// Accepts either a bare config object or a previously emitted run.json
// ({"command": ..., "config": {...}}), so any run reproduces via --config.
bool load_config_file(const std::string& path, const std::string& command,
                      json* out, std::string* error) {
  std::ifstream in(path);
  if (!in) {
    *error = "cannot open config file '" + path + "'";
    return false;
  }
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    *error = "config file '" + path + "' is not a JSON object";
    return false;
  }
  if (j.contains("command")) {
    if (j["command"] != command) {
      *error = "config file '" + path + "' was recorded for command '" +
               j["command"].get<std::string>() + "', not '" + command + "'";
      return false;
    }
    j = j.value("config", json::object());
  }
  *out = std::move(j);
  return true;
}

using CommandFn = fb_status (*)(const char*, char**);

int run_command(CommandFn fn, const std::string& name,
                const std::string& config_path, const json& flags,
                bool verbose) {
  json config = json::object();
  if (!config_path.empty()) {
    std::string error;
    if (!load_config_file(config_path, name, &config, &error)) {
      return fail("IO", error, 2);
    }
  }
  config.update(flags);

  char* result = nullptr;
  const std::string payload = config.dump();
  const fb_status status = fn(payload.c_str(), &result);
  if (status != FB_OK) {
    return fail(status_name(status), fb_last_error(), exit_code(status));
  }
  if (result) {
    const json r = json::parse(result, nullptr, false);
    std::cout << (verbose && !r.is_discarded() ? r.dump(2) : std::string(result))
              << "\n";
    fb_string_free(result);
  }
  return 0;
}

// Collects only flags the user actually set, so config-file values survive.
struct FlagSet {
  CLI::App* cmd;
  json values = json::object();

  void seen(const std::string& flag, const char* key, const json& v) {
    if (cmd->count(flag) > 0) values[key] = v;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "fbind: category-clustered image blending, source-separation training "
      "and evaluation for dense labeling"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(fb_version()));
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "pretty-print command results");

  // toygen
  auto* toygen = app.add_subcommand("toygen", "generate the synthetic shapes dataset");
  int tg_n = 200, tg_size = 64, tg_classes = 4, tg_max_inst = 3;
  double tg_occ = 0.5;
  std::uint64_t tg_seed = 7;
  std::string tg_out, tg_config;
  toygen->add_option("--n", tg_n, "number of images");
  toygen->add_option("--size", tg_size, "image side length");
  toygen->add_option("--classes", tg_classes, "foreground shape classes");
  toygen->add_option("--occlusion-rate", tg_occ, "probability a later instance overlaps a prior one");
  toygen->add_option("--max-instances", tg_max_inst, "max instances per image");
  toygen->add_option("--seed", tg_seed, "generation seed");
  toygen->add_option("--out", tg_out, "output directory");
  toygen->add_option("--config", tg_config, "JSON config file (flags override)");

  // blend
  auto* blend = app.add_subcommand("blend", "materialize a blended source dataset");
  std::string bl_manifest, bl_strategy, bl_out, bl_config;
  double bl_lo = 0.7, bl_hi = 1.0, bl_alpha = 1.0;
  int bl_partners = 10, bl_classes = 0, bl_ignore = 255;
  std::uint64_t bl_seed = 1;
  bool bl_npy = false, bl_single = false;
  blend->add_option("--manifest", bl_manifest, "source dataset manifest (JSONL)");
  blend->add_option("--strategy", bl_strategy, "cfb|rfb|cafb|wrfb|mfb|mixup|cutmix");
  blend->add_option("--delta-lo", bl_lo, "blend weight range low");
  blend->add_option("--delta-hi", bl_hi, "blend weight range high");
  blend->add_option("--partners", bl_partners, "partners per sample (rfb/wrfb)");
  blend->add_option("--mixup-alpha", bl_alpha, "Beta(alpha, alpha) for mixup");
  blend->add_option("--seed", bl_seed, "pairing seed");
  blend->add_flag("--float-npy", bl_npy, "store blended images as lossless .npy");
  blend->add_flag("--single-cluster", bl_single,
                  "multi-class images join only their primary class cluster");
  blend->add_option("--num-classes", bl_classes, "total classes incl. background (0 = infer)");
  blend->add_option("--ignore-id", bl_ignore, "ignore label");
  blend->add_option("--out", bl_out, "output directory");
  blend->add_option("--config", bl_config, "JSON config file (flags override)");

  // cooc
  auto* cooc = app.add_subcommand("cooc", "compute the class co-occurrence matrix");
  std::string co_manifest, co_out, co_config;
  int co_classes = 0, co_ignore = 255;
  cooc->add_option("--manifest", co_manifest, "dataset manifest");
  cooc->add_option("--num-classes", co_classes, "total classes incl. background (0 = infer)");
  cooc->add_option("--ignore-id", co_ignore, "ignore label");
  cooc->add_option("--out", co_out, "output JSON path");
  cooc->add_option("--config", co_config, "JSON config file (flags override)");

  // train
  auto* train = app.add_subcommand("train", "train stage 1 (binding) or stage 2 (denoising)");
  int tr_stage = 1, tr_epochs = 30, tr_crop = 321, tr_batch = 8, tr_workers = 0,
      tr_ignore = 255;
  double tr_lr = 0.0, tr_momentum = 0.9, tr_wd = 5e-4, tr_poly = 0.9,
         tr_eps = 1e-12;
  std::uint64_t tr_seed = 1;
  std::string tr_manifest, tr_out, tr_resume, tr_config, tr_net;
  train->add_option("--stage", tr_stage, "1 or 2");
  train->add_option("--manifest", tr_manifest, "training manifest");
  train->add_option("--resume", tr_resume, "checkpoint to fine-tune from (required for stage 2)");
  train->add_option("--base-lr", tr_lr, "initial learning rate (0 = stage default)");
  train->add_option("--momentum", tr_momentum, "SGD momentum");
  train->add_option("--weight-decay", tr_wd, "L2 weight decay");
  train->add_option("--epochs", tr_epochs, "training epochs");
  train->add_option("--poly-power", tr_poly, "poly schedule exponent");
  train->add_option("--crop-size", tr_crop, "square crop side");
  train->add_option("--batch-size", tr_batch, "batch size");
  train->add_option("--seed", tr_seed, "training seed");
  train->add_option("--ppa-epsilon", tr_eps, "epsilon inside the PPA log");
  train->add_option("--workers", tr_workers, "loader workers (0 = bit-reproducible)");
  train->add_option("--ignore-id", tr_ignore, "ignore label");
  train->add_option("--net-config", tr_net, "network config JSON file (fresh stage-1 models)");
  train->add_option("--out", tr_out, "output directory");
  train->add_option("--config", tr_config, "JSON config file (flags override)");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint (mIoU, subsets, perturbations)");
  std::string ev_ckpt, ev_manifest, ev_subset = "all", ev_cooc, ev_pert,
              ev_head = "auto", ev_target = "primary", ev_method = "model",
              ev_setting = "clean", ev_csv, ev_plot, ev_out, ev_config;
  int ev_anchor = 0, ev_ignore = 255;
  double ev_max_norm = -1.0;
  bool ev_any_pair = false, ev_per_image = false;
  eval->add_option("--ckpt", ev_ckpt, "checkpoint file");
  eval->add_option("--manifest", ev_manifest, "evaluation manifest");
  eval->add_option("--subset", ev_subset,
                   "all|occ1|occall|nobj=K|nuniq=K|cooc<T|excl=CLS|with=CLS");
  eval->add_option("--cooc", ev_cooc, "co-occurrence matrix JSON (for cooc<T)");
  eval->add_option("--anchor", ev_anchor, "anchor class for with=CLS (0 = person or 1)");
  eval->add_flag("--any-pair", ev_any_pair, "cooc<T keeps images with any pair under threshold");
  eval->add_option("--perturbation", ev_pert, "perturbation file (.npy or image)");
  eval->add_option("--max-norm", ev_max_norm, "assert perturbation L-inf norm <= this");
  eval->add_option("--head", ev_head, "auto|st|sp|sfb");
  eval->add_option("--target", ev_target, "primary|second (score against G1 or G2)");
  eval->add_option("--method", ev_method, "method label stored in the report");
  eval->add_option("--setting", ev_setting, "attack/setting label stored in the report");
  eval->add_flag("--per-image", ev_per_image, "store per-image IoU in the report");
  eval->add_option("--csv", ev_csv, "also write per-class IoU CSV here");
  eval->add_option("--plot", ev_plot, "also write a per-class IoU bar chart PNG here");
  eval->add_option("--ignore-id", ev_ignore, "ignore label");
  eval->add_option("--out", ev_out, "output report.json path");
  eval->add_option("--config", ev_config, "JSON config file (flags override)");

  // report
  auto* report = app.add_subcommand("report", "merge eval reports into CSV and plots");
  std::vector<std::string> rp_inputs;
  std::string rp_out, rp_config;
  report->add_option("--inputs", rp_inputs, "report.json files")->expected(-1);
  report->add_option("--out", rp_out, "output directory");
  report->add_option("--config", rp_config, "JSON config file (flags override)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::CallForVersion& e) {
    std::cout << fb_version() << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "ERROR USAGE: " << e.what() << "\n";
    std::cerr << app.help();
    return 1;
  }

  if (toygen->parsed()) {
    FlagSet f{toygen};
    f.seen("--n", "n", tg_n);
    f.seen("--size", "size", tg_size);
    f.seen("--classes", "classes", tg_classes);
    f.seen("--occlusion-rate", "occlusion_rate", tg_occ);
    f.seen("--max-instances", "max_instances", tg_max_inst);
    f.seen("--seed", "seed", tg_seed);
    f.seen("--out", "out", tg_out);
    return run_command(fb_toygen, "toygen", tg_config, f.values, verbose);
  }
  if (blend->parsed()) {
    FlagSet f{blend};
    f.seen("--manifest", "manifest", bl_manifest);
    f.seen("--strategy", "strategy", bl_strategy);
    f.seen("--delta-lo", "delta_lo", bl_lo);
    f.seen("--delta-hi", "delta_hi", bl_hi);
    f.seen("--partners", "partners", bl_partners);
    f.seen("--mixup-alpha", "mixup_alpha", bl_alpha);
    f.seen("--seed", "seed", bl_seed);
    f.seen("--float-npy", "float_npy", bl_npy);
    f.seen("--single-cluster", "single_cluster", bl_single);
    f.seen("--num-classes", "num_classes", bl_classes);
    f.seen("--ignore-id", "ignore_id", bl_ignore);
    f.seen("--out", "out", bl_out);
    return run_command(fb_blend, "blend", bl_config, f.values, verbose);
  }
  if (cooc->parsed()) {
    FlagSet f{cooc};
    f.seen("--manifest", "manifest", co_manifest);
    f.seen("--num-classes", "num_classes", co_classes);
    f.seen("--ignore-id", "ignore_id", co_ignore);
    f.seen("--out", "out", co_out);
    return run_command(fb_cooc, "cooc", co_config, f.values, verbose);
  }
  if (train->parsed()) {
    FlagSet f{train};
    f.seen("--stage", "stage", tr_stage);
    f.seen("--manifest", "manifest", tr_manifest);
    f.seen("--resume", "resume", tr_resume);
    f.seen("--base-lr", "base_lr", tr_lr);
    f.seen("--momentum", "momentum", tr_momentum);
    f.seen("--weight-decay", "weight_decay", tr_wd);
    f.seen("--epochs", "epochs", tr_epochs);
    f.seen("--poly-power", "poly_power", tr_poly);
    f.seen("--crop-size", "crop_size", tr_crop);
    f.seen("--batch-size", "batch_size", tr_batch);
    f.seen("--seed", "seed", tr_seed);
    f.seen("--ppa-epsilon", "ppa_epsilon", tr_eps);
    f.seen("--workers", "workers", tr_workers);
    f.seen("--ignore-id", "ignore_id", tr_ignore);
    f.seen("--out", "out", tr_out);
    if (train->count("--net-config") > 0) {
      json net;
      std::string error;
      std::ifstream in(tr_net);
      if (!in) return fail("IO", "cannot open net config '" + tr_net + "'", 2);
      net = json::parse(in, nullptr, false);
      if (net.is_discarded()) {
        return fail("VALIDATION", "net config '" + tr_net + "' is not valid JSON", 1);
      }
      f.values["net"] = net;
    }
    return run_command(fb_train, "train", tr_config, f.values, verbose);
  }
  if (eval->parsed()) {
    FlagSet f{eval};
    f.seen("--ckpt", "ckpt", ev_ckpt);
    f.seen("--manifest", "manifest", ev_manifest);
    f.seen("--subset", "subset", ev_subset);
    f.seen("--cooc", "cooc", ev_cooc);
    f.seen("--anchor", "anchor", ev_anchor);
    f.seen("--any-pair", "any_pair", ev_any_pair);
    f.seen("--perturbation", "perturbation", ev_pert);
    f.seen("--max-norm", "max_norm", ev_max_norm);
    f.seen("--head", "head", ev_head);
    f.seen("--target", "target", ev_target);
    f.seen("--method", "method", ev_method);
    f.seen("--setting", "setting", ev_setting);
    f.seen("--per-image", "per_image", ev_per_image);
    f.seen("--csv", "csv", ev_csv);
    f.seen("--plot", "plot", ev_plot);
    f.seen("--ignore-id", "ignore_id", ev_ignore);
    f.seen("--out", "out", ev_out);
    return run_command(fb_eval, "eval", ev_config, f.values, verbose);
  }
  if (report->parsed()) {
    FlagSet f{report};
    f.seen("--inputs", "inputs", rp_inputs);
    f.seen("--out", "out", rp_out);
    return run_command(fb_report, "report", rp_config, f.values, verbose);
  }
  std::cerr << app.help();
  return 1;
}
