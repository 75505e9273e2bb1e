#ifndef MOLLAE_H
#define MOLLAE_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes returned by every fallible call. On failure, a thread-local
 * message is available via mollae_last_error(). */
typedef enum {
    MOLLAE_OK = 0,
    MOLLAE_ERR_INVALID_ARGUMENT = 1,
    MOLLAE_ERR_IO = 2,
    MOLLAE_ERR_RUNTIME = 3
} mollae_status;

/* Opaque model handle: parameters, config, vocabulary, optimizer state. */
typedef struct mollae_model mollae_model;

const char* mollae_version(void);
const char* mollae_last_error(void);

/* Frees strings returned through char** out-parameters. */
void mollae_string_free(char* s);

/* config_text: key=value lines (NULL or "" = defaults). */
mollae_status mollae_model_create(const char* config_text, mollae_model** out);
mollae_status mollae_model_load(const char* checkpoint_path, mollae_model** out);
mollae_status mollae_model_save(mollae_model* m, const char* checkpoint_path);
void mollae_model_free(mollae_model* m);

/* Serialized resolved configuration of the model. */
mollae_status mollae_model_config(mollae_model* m, char** out_text);

/* Content hash of an on-disk checkpoint ("fnv1a64:<hex>"). */
mollae_status mollae_checkpoint_hash(const char* path, char** out_hash);

/* Trains on a multi-record XYZ corpus up to the configured step budget,
 * checkpointing to checkpoint_path (optional). train_steps_override > 0
 * replaces the configured budget (useful when resuming). Returns a JSON
 * report. */
mollae_status mollae_train(mollae_model* m, const char* xyz_path, const char* checkpoint_path,
                           int train_steps_override, char** out_report_json);

/* Unconditional sampling into one multi-record XYZ file. n_atoms > 0 fixes
 * the atom count; 0 draws counts from the trained prior. */
mollae_status mollae_sample(mollae_model* m, uint64_t seed, int count, int steps, int n_atoms,
                            const char* out_xyz_path);

/* Posterior of the first molecule in xyz_path as a JSON latent record. */
mollae_status mollae_encode(mollae_model* m, const char* xyz_path, char** out_json);

/* Decodes a JSON latent record (as produced by mollae_encode) to XYZ.
 * n_atoms_override > 0 replaces the record's atom count. */
mollae_status mollae_decode(mollae_model* m, const char* latent_json, uint64_t seed, int steps,
                            int n_atoms_override, const char* out_xyz_path);

/* `count` analogs of the input with its atom count shifted by delta. */
mollae_status mollae_analog(mollae_model* m, const char* xyz_path, int delta, uint64_t seed,
                            int steps, int count, const char* out_xyz_path);

/* Latent-half exchange. out_ab keeps A's spatial half with B's feature half;
 * out_ba the reverse. */
mollae_status mollae_swap(mollae_model* m, const char* xyz_a, const char* xyz_b, uint64_t seed,
                          int steps, const char* out_xyz_ab, const char* out_xyz_ba);

/* Single convex combination of both latent halves at `lambda` in [0,1]
 * (0 = pure A, 1 = pure B). */
mollae_status mollae_blend(mollae_model* m, const char* xyz_a, const char* xyz_b, double lambda,
                           uint64_t seed, int steps, const char* out_xyz_path);

/* Writes `points` interpolation frames plus property/trend CSVs into out_dir;
 * returns the trend CSV text. */
mollae_status mollae_interpolate(mollae_model* m, const char* xyz_a, const char* xyz_b, int points,
                                 uint64_t seed, int steps, const char* out_dir,
                                 char** out_trend_csv);

/* Rigid motion superposing A's latent frame onto B's; writes A so transformed
 * and returns the rotation/translation as JSON. */
mollae_status mollae_align(mollae_model* m, const char* xyz_a, const char* xyz_b,
                           const char* out_xyz_a_aligned, char** out_transform_json);

/* Stability/validity/uniqueness metrics over a multi-record XYZ file.
 * vocab_spec: "qm9", "drugs", or comma-separated element symbols.
 * train_xyz_path (optional) enables novelty. Returns CSV. */
mollae_status mollae_eval(const char* xyz_path, const char* vocab_spec, const char* train_xyz_path,
                          char** out_csv);

#ifdef __cplusplus
}
#endif

#endif /* MOLLAE_H */
