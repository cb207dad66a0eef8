#ifndef UNIMOT_H
#define UNIMOT_H

#include <stddef.h>
#include <stdint.h>

#if defined(UNIMOT_BUILDING)
#define UNIMOT_API __attribute__((visibility("default")))
#else
#define UNIMOT_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum unimot_status {
    UNIMOT_OK = 0,
    UNIMOT_ERR_INVALID_ARGUMENT = 1,
    UNIMOT_ERR_SHAPE = 2,
    UNIMOT_ERR_IO = 3,
    UNIMOT_ERR_FORMAT = 4, /* malformed file, bad checksum, unsupported version */
    UNIMOT_ERR_NUMERIC = 5,
    UNIMOT_ERR_INTERNAL = 6
} unimot_status;

/* Message of the last failed call on this thread; empty after success. */
UNIMOT_API const char* unimot_last_error(void);
UNIMOT_API const char* unimot_version(void);

/* Receives one NUL-terminated report line per call. */
typedef void (*unimot_line_sink)(const char* line, void* user);

/* Trains from a key = value config file. Writes checkpoint.umot, metrics.jsonl and
   config.txt into out_dir (created if missing); each metrics line is also passed
   to `metrics` when non-null. threads = 0 reads UNIMOT_THREADS (default 1). */
UNIMOT_API unimot_status unimot_train(const char* config_path, const char* out_dir, size_t threads,
                                      unimot_line_sink metrics, void* user);

typedef struct unimot_model unimot_model;

/* use_ema != 0 selects the EMA shadow weights. */
UNIMOT_API unimot_status unimot_model_load(const char* checkpoint_path, int use_ema, unimot_model** out);
UNIMOT_API void unimot_model_free(unimot_model* model);

typedef struct unimot_model_info {
    size_t vocab;
    size_t width;
    size_t layers;
    size_t head_size;
    size_t q_heads;
    size_t kv_heads;
    size_t parameters;
    size_t train_height;
    size_t train_width;
    uint64_t step;
} unimot_model_info;

UNIMOT_API unimot_status unimot_model_get_info(const unimot_model* model, unimot_model_info* out);

typedef struct unimot_sampler_config {
    size_t steps;
    double shift;
    double gamma;
    double gamma_img;
    int renorm;
    uint64_t seed;
} unimot_sampler_config;

/* 32 steps, shift 3, gamma 4, gamma_img 1, renorm on, seed 0. */
UNIMOT_API void unimot_sampler_config_default(unimot_sampler_config* cfg);

/* Prompt words or integer ids separated by whitespace, wrapped in <bos> ... <eos>
   when those are absent. Writes up to `capacity` ids and the full count to *count. */
UNIMOT_API unimot_status unimot_parse_prompt(const char* text, int32_t* ids, size_t capacity, size_t* count);

/* Generates a [3, height, width] image in [-1, 1], channel-major, into `pixels`
   (pixels_len must be 3 * height * width). */
UNIMOT_API unimot_status unimot_sample(const unimot_model* model, const int32_t* tokens, size_t n_tokens,
                                       size_t height, size_t width, const unimot_sampler_config* cfg,
                                       double* pixels, size_t pixels_len);

UNIMOT_API unimot_status unimot_write_ppm(const char* path, const double* pixels, size_t height, size_t width);

/* Runs the invariant suite; one JSON line per invariant. filter = NULL or "" runs
   every module; faults is a comma-separated list ("rope-theta", "noise-leak"). */
UNIMOT_API unimot_status unimot_verify(const char* filter, const char* faults, unimot_line_sink sink, void* user,
                                       size_t* n_failed);

UNIMOT_API unimot_status unimot_bench(const char* layout, size_t block_size, size_t repeats, unimot_line_sink sink,
                                      void* user);

/* Scores every <stem>.ppm of dir with its .prompt.txt, .ref.txt and .ocr.txt
   sidecars; one JSON line per image. */
UNIMOT_API unimot_status unimot_reward(const char* dir, size_t epoch, double lambda_sty, unimot_line_sink sink,
                                       void* user);

#ifdef __cplusplus
}
#endif

#endif
