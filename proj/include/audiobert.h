/* C interface to the audiobert pipeline: data generation, the three training
 * phases, retrieval-index construction, evaluation, and single-prompt queries.
 *
 * Conventions:
 *   - every function returns ab_status; on failure ab_last_error() holds a
 *     thread-local message valid until the next call on that thread
 *   - char** outputs receive a heap string owned by the caller; release it
 *     with ab_string_free
 *   - an ab_config is an opaque run configuration created by
 *     ab_config_default or ab_config_load and released with ab_config_free
 */
#ifndef AUDIOBERT_H
#define AUDIOBERT_H

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ab_status {
    AB_OK = 0,
    AB_ERR_RUNTIME = 1, /* failure doing the work: I/O, missing artifacts */
    AB_ERR_USAGE = 2    /* bad arguments: unknown keys, malformed values */
} ab_status;

typedef struct ab_config ab_config;

const char* ab_version(void);
const char* ab_last_error(void);

/* configuration ----------------------------------------------------------- */

ab_status ab_config_default(ab_config** out);

/* parse a section.key=value file; unknown keys are usage errors */
ab_status ab_config_load(const char* path, ab_config** out);

/* apply one "section.key=value" assignment */
ab_status ab_config_set(ab_config* c, const char* assignment);

/* apply AB_<SECTION>_<KEY> environment overrides */
ab_status ab_config_apply_env(ab_config* c);

/* render the effective configuration as parseable text */
ab_status ab_config_text(const ab_config* c, char** text_out);

void ab_config_free(ab_config* c);

/* pipeline commands -------------------------------------------------------- */

/* generate the benchmark under [run] data_dir; returns the manifest JSON */
ab_status ab_gen_data(const ab_config* c, char** manifest_json_out);

/* phase is "detector", "clap", or "audiobert" (base pretraining plus gated
 * fine-tuning in one phase); writes a checkpoint and a loss-curve CSV under
 * [run] checkpoint_dir and returns a JSON report */
ab_status ab_train(const ab_config* c, const char* phase, char** report_json_out);

/* embed every clip with the trained dual encoder into a frozen index */
ab_status ab_build_index(const ab_config* c, char** report_json_out);

/* evaluate one split ("train", "dev", "test", "gen"); the report carries the
 * trained model and the gating-off baseline side by side, as one document */
ab_status ab_eval(const ab_config* c, const char* split, char** metrics_json_out);

/* answer one [MASK] prompt; emit_json selects the trace format */
ab_status ab_query(const ab_config* c, const char* prompt, int emit_json, char** out);

void ab_string_free(char* s);

#ifdef __cplusplus
}
#endif

#endif /* AUDIOBERT_H */
