#include "fbind.h"

#include <cstdlib>
#include <cstring>
#include <string>

#include "commands.hpp"
#include "common.hpp"
#include "evaluator.hpp"
#include "net.hpp"

namespace {

thread_local std::string g_last_error;

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out) std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

fb_status classify(const std::exception& e) {
  if (dynamic_cast<const fbind::ValidationError*>(&e)) return FB_ERR_VALIDATION;
  if (dynamic_cast<const fbind::IoError*>(&e)) return FB_ERR_IO;
  return FB_ERR_RUNTIME;
}

fb_status run_json_command(const char* name, const char* config_json,
                           char** result_json) {
  g_last_error.clear();
  if (config_json == nullptr) {
    g_last_error = "config_json is NULL";
    return FB_ERR_INVALID_ARGUMENT;
  }
  nlohmann::json config = nlohmann::json::parse(config_json, nullptr, false);
  if (config.is_discarded()) {
    g_last_error = "config_json is not valid JSON";
    return FB_ERR_INVALID_ARGUMENT;
  }
  try {
    const nlohmann::json result = fbind::run_command(name, config);
    if (result_json) *result_json = dup_string(result.dump());
    return FB_OK;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return classify(e);
  }
}

}  // namespace

struct fb_model {
  fbind::BindingNet net;
};

extern "C" {

const char* fb_version(void) { return "0.1.0"; }

const char* fb_last_error(void) { return g_last_error.c_str(); }

fb_status fb_toygen(const char* c, char** r) { return run_json_command("toygen", c, r); }
fb_status fb_blend(const char* c, char** r) { return run_json_command("blend", c, r); }
fb_status fb_cooc(const char* c, char** r) { return run_json_command("cooc", c, r); }
fb_status fb_train(const char* c, char** r) { return run_json_command("train", c, r); }
fb_status fb_eval(const char* c, char** r) { return run_json_command("eval", c, r); }
fb_status fb_report(const char* c, char** r) { return run_json_command("report", c, r); }

void fb_string_free(char* s) { std::free(s); }

fb_status fb_model_open(const char* checkpoint_path, fb_model** out) {
  g_last_error.clear();
  if (checkpoint_path == nullptr || out == nullptr) {
    g_last_error = "checkpoint_path and out must be non-NULL";
    return FB_ERR_INVALID_ARGUMENT;
  }
  try {
    auto* m = new fb_model{fbind::BindingNet::load(checkpoint_path)};
    *out = m;
    return FB_OK;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return classify(e);
  }
}

void fb_model_close(fb_model* model) { delete model; }

fb_status fb_model_num_classes(const fb_model* model, int* out) {
  g_last_error.clear();
  if (model == nullptr || out == nullptr) {
    g_last_error = "model and out must be non-NULL";
    return FB_ERR_INVALID_ARGUMENT;
  }
  *out = model->net.cfg.num_classes;
  return FB_OK;
}

fb_status fb_model_predict(fb_model* model, const float* image, int h, int w,
                           int* labels_out) {
  g_last_error.clear();
  if (model == nullptr || image == nullptr || labels_out == nullptr) {
    g_last_error = "model, image and labels_out must be non-NULL";
    return FB_ERR_INVALID_ARGUMENT;
  }
  if (h < 1 || w < 1) {
    g_last_error = "image dimensions must be positive";
    return FB_ERR_INVALID_ARGUMENT;
  }
  try {
    fbind::Image img(h, w);
    for (std::size_t i = 0; i < img.v.size(); ++i) {
      img.v[i] = static_cast<double>(image[i]);
    }
    auto& net = model->net;
    const bool use_fbh = net.stage != 2;
    const fbind::PredictionTriple t = net.forward(img, use_fbh);
    const fbind::Tensor logits =
        net.upsample_to_input(use_fbh ? *t.sfb : t.st, t);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        int best = 0;
        double bv = logits.at(0, y, x);
        for (int c = 1; c < logits.c; ++c) {
          if (logits.at(c, y, x) > bv) {
            bv = logits.at(c, y, x);
            best = c;
          }
        }
        labels_out[static_cast<std::size_t>(y) * w + x] = best;
      }
    }
    return FB_OK;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return classify(e);
  }
}

}  // extern "C"
