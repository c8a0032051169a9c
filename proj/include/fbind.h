/* fbind — category-clustered image blending, source-separation training and
 * evaluation for dense image labeling.
 *
 * C API of the shared library. Every pipeline command takes a JSON
 * configuration string (the same schema the `fbind` CLI resolves its flags
 * into; see README) and reports failures through status codes plus a
 * thread-local message retrievable with fb_last_error().
 */
#ifndef FBIND_H
#define FBIND_H

#ifdef __cplusplus
extern "C" {
#endif

typedef enum fb_status {
  FB_OK = 0,
  FB_ERR_INVALID_ARGUMENT = 1, /* malformed config / unknown keys */
  FB_ERR_VALIDATION = 2,       /* well-formed input violating a contract */
  FB_ERR_IO = 3,               /* filesystem or codec failure */
  FB_ERR_RUNTIME = 4
} fb_status;

/* Library semantic version, e.g. "0.1.0". */
const char* fb_version(void);

/* Message for the most recent failing fb_* call on this thread. Valid until
 * the next fb_* call on the same thread. */
const char* fb_last_error(void);

/* Pipeline commands. `config_json` is the full configuration object for the
 * command. On success, when `result_json` is non-NULL it receives a malloc'd
 * JSON summary (output paths, counts, headline metrics) that the caller must
 * release with fb_string_free. Every command writes a run.json echoing the
 * fully resolved configuration next to its outputs. */
fb_status fb_toygen(const char* config_json, char** result_json);
fb_status fb_blend(const char* config_json, char** result_json);
fb_status fb_cooc(const char* config_json, char** result_json);
fb_status fb_train(const char* config_json, char** result_json);
fb_status fb_eval(const char* config_json, char** result_json);
fb_status fb_report(const char* config_json, char** result_json);

void fb_string_free(char* s);

/* Opaque handle over a trained network checkpoint, for direct inference. */
typedef struct fb_model fb_model;

fb_status fb_model_open(const char* checkpoint_path, fb_model** out);
void fb_model_close(fb_model* model);
fb_status fb_model_num_classes(const fb_model* model, int* out);

/* Dense prediction at full resolution. `image` is h*w*3 floats in [0, 1],
 * row-major interleaved RGB. `labels_out` receives h*w predicted class ids
 * from the checkpoint's serving head (binding head for stage-1 checkpoints,
 * dominant branch after stage 2). */
fb_status fb_model_predict(fb_model* model, const float* image, int h, int w,
                           int* labels_out);

#ifdef __cplusplus
}
#endif

#endif /* FBIND_H */
