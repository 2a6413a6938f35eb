/* avdit: joint audio-video latent diffusion transformer, C API.
 *
 * The library trains and samples a two-modality DDPM whose denoiser is a
 * frozen image diffusion-transformer backbone extended with trainable
 * adapters, and verifies it against closed-form oracles on a synthetic
 * jointly-Gaussian latent task.
 *
 * All entry points return an avdit_status; on failure a human-readable
 * message is available from avdit_last_error() until the next call on the
 * same thread. Strings returned through `const char**` out-parameters live in
 * thread-local storage with the same lifetime rule.
 */
#ifndef AVDIT_H
#define AVDIT_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum avdit_status {
    AVDIT_OK = 0,
    AVDIT_ERR_RUNTIME = 1, /* runtime failure (I/O, numerics, aborts) */
    AVDIT_ERR_CONFIG = 2,  /* configuration/contract error */
    AVDIT_ERR_CHECK = 3    /* an invariant or gradient check failed */
} avdit_status;

const char* avdit_version(void);
const char* avdit_last_error(void);

/* ---- configuration handle ---------------------------------------------- */

typedef struct avdit_config avdit_config;

/* Load a `key = value` config file; unknown keys are rejected. */
avdit_status avdit_config_open(const char* path, avdit_config** out);
/* All defaults (the desk-scale preset). */
avdit_status avdit_config_create(avdit_config** out);
avdit_status avdit_config_set(avdit_config* cfg, const char* key, const char* value);
/* Value text for a key, or NULL if the key is unknown. */
const char* avdit_config_get(const avdit_config* cfg, const char* key);
/* Resolved config text in canonical order. */
avdit_status avdit_config_serialize(const avdit_config* cfg, const char** out_text);
void avdit_config_close(avdit_config* cfg);

/* ---- commands ----------------------------------------------------------- */

/* Train per config; writes checkpoint.avdt, metrics.csv and run_meta.txt
 * into out_dir. Fails with AVDIT_ERR_RUNTIME on a NaN abort (a last-good
 * checkpoint is dumped first). */
avdit_status avdit_train(const avdit_config* cfg, const char* out_dir, int verbose);

/* Draw n joint samples from a trained checkpoint with a respaced reverse
 * process of `steps` steps; writes latents.avdt and moments.csv into out_dir.
 * seed == 0 uses the seed recorded in the checkpoint config. */
avdit_status avdit_sample(const char* checkpoint_path, const char* out_dir, int64_t n,
                          int32_t steps, uint64_t seed, int verbose);

/* Parameter-count report (total / frozen / trainable and a per-component
 * breakdown) for the configured model. */
avdit_status avdit_params_report(const avdit_config* cfg, const char** out_text);

/* Finite-difference gradient check over every trainable submodule.
 * Returns AVDIT_ERR_CHECK if any module fails. */
avdit_status avdit_gradcheck(const avdit_config* cfg, const char** out_report);

/* Train each ablation variant and the full model at the configured step
 * count and write a comparison CSV of oracle errors to out_csv. */
avdit_status avdit_ablate(const avdit_config* cfg, const char* out_csv, int verbose,
                          const char** out_report);

#ifdef __cplusplus
}
#endif

#endif /* AVDIT_H */
