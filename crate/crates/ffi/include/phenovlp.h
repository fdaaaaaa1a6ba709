#ifndef PHENOVLP_H
#define PHENOVLP_H

/* Generated by cbindgen from phenovlp-ffi; edit src/lib.rs instead. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum PvStatus {
  PV_STATUS_OK = 0,
  // A required pointer argument was null.
  PV_STATUS_NULL_ARGUMENT = 1,
  // A string argument was not valid UTF-8.
  PV_STATUS_INVALID_UTF8 = 2,
  PV_STATUS_STRUCTURAL = 3,
  PV_STATUS_LOOKUP = 4,
  PV_STATUS_PARAMETER = 5,
  PV_STATUS_PARSE = 6,
  PV_STATUS_INVARIANT = 7,
  // A pipeline stage failed; earlier stages are preserved on disk.
  PV_STATUS_STAGE = 8,
  PV_STATUS_EXTERNAL = 9,
  PV_STATUS_NON_FINITE = 10,
  PV_STATUS_IO = 11,
  PV_STATUS_JSON = 12,
  // An internal panic was caught at the boundary.
  PV_STATUS_PANIC = 13,
} PvStatus;

// Knowledge graph parsed from an ontology. Opaque.
typedef struct PvGraph PvGraph;

// Trained dual encoder loaded from a checkpoint directory. Opaque.
typedef struct PvModel PvModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Text of the most recent failure on the calling thread. Never null; the
// pointer stays valid until the next failing call on this thread.
const char *pv_last_error_message(void);

// Crate version as a static string.
const char *pv_version(void);

// Parse an OBO ontology file into a knowledge graph.
//
// # Safety
// `path` must be a nul-terminated string and `out` a valid pointer. On
// success `*out` owns the graph; release it with [`pv_graph_free`].
enum PvStatus pv_graph_parse_obo(const char *path, struct PvGraph **out);

// Load a graph previously written by the build-kg stage (JSONL).
//
// # Safety
// Same contract as [`pv_graph_parse_obo`].
enum PvStatus pv_graph_read_jsonl(const char *path, struct PvGraph **out);

// Number of live terms in the graph.
//
// # Safety
// `graph` must come from a `pv_graph_*` constructor and not be freed.
enum PvStatus pv_graph_term_count(const struct PvGraph *graph, size_t *out);

// Release a graph. Null is ignored.
//
// # Safety
// `graph` must come from a `pv_graph_*` constructor and not be freed
// twice.
void pv_graph_free(struct PvGraph *graph);

// Load a trained dual encoder from its checkpoint directory.
//
// # Safety
// `dir` must be a nul-terminated string and `out` a valid pointer. On
// success `*out` owns the model; release it with [`pv_model_free`].
enum PvStatus pv_model_load(const char *dir, struct PvModel **out);

// Width of the joint embedding space.
//
// # Safety
// `model` must come from [`pv_model_load`] and not be freed.
enum PvStatus pv_model_joint_dim(const struct PvModel *model, size_t *out);

// Side length in pixels the vision tower expects.
//
// # Safety
// `model` must come from [`pv_model_load`] and not be freed.
enum PvStatus pv_model_image_size(const struct PvModel *model, size_t *out);

// Embed `n_texts` nul-terminated strings into `out`, a row-major buffer
// of `n_texts * joint_dim` doubles. Rows are unit length.
//
// # Safety
// `texts` must point to `n_texts` valid strings and `out` to `out_len`
// writable doubles.
enum PvStatus pv_model_embed_texts(const struct PvModel *model,
                                   const char *const *texts,
                                   size_t n_texts,
                                   double *out,
                                   size_t out_len);

// Decode an image file, resize it to the model's input size, and embed
// it. `out` receives `joint_dim` doubles.
//
// # Safety
// `path` must be a nul-terminated string and `out` writable for
// `out_len` doubles.
enum PvStatus pv_model_embed_image_file(const struct PvModel *model,
                                        const char *path,
                                        double *out,
                                        size_t out_len);

// Release a model. Null is ignored.
//
// # Safety
// `model` must come from [`pv_model_load`] and not be freed twice.
void pv_model_free(struct PvModel *model);

// Contrastive loss over an interleaved batch of unit-length rows
// (row 2i and 2i+1 describe the same entity). `embeds` is row-major
// `n_rows * dim`.
//
// # Safety
// `embeds` must point to `n_rows * dim` doubles and `out` be writable.
enum PvStatus pv_knowledge_loss(const double *embeds,
                                size_t n_rows,
                                size_t dim,
                                double tau,
                                double *out);

// Bidirectional image-text contrastive loss over aligned unit-length
// rows. Both buffers are row-major `n * dim`.
//
// # Safety
// `image` and `text` must each point to `n * dim` doubles and `out` be
// writable.
enum PvStatus pv_multimodal_loss(const double *image,
                                 const double *text,
                                 size_t n,
                                 size_t dim,
                                 double tau,
                                 double *out);

// Learning rate at `step` of a linear-warmup cosine-decay schedule.
//
// # Safety
// `out` must be writable.
enum PvStatus pv_lr_schedule(uint64_t step,
                             uint64_t total_steps,
                             uint64_t warmup_steps,
                             double base_lr,
                             double *out);

// Recall@k over a row-major `n x n` similarity matrix where the true
// match of query `i` is gallery item `i`.
//
// # Safety
// `scores` must point to `n * n` doubles and `out` be writable.
enum PvStatus pv_paired_recall_at_k(const double *scores, size_t n, size_t k, double *out);

// Number of curated pairs in a JSONL file written by the curate stage.
//
// # Safety
// `path` must be a nul-terminated string and `out` writable.
enum PvStatus pv_count_pairs(const char *path, size_t *out);

// Run the whole pipeline described by a TOML config into `out_dir`.
// Stages whose recorded inputs and outputs are unchanged are skipped.
//
// # Safety
// Both arguments must be nul-terminated strings.
enum PvStatus pv_run_pipeline(const char *config_path, const char *out_dir);

// Write the self-contained demo workspace (toy ontology, rendered
// corpus, config.toml) under `dir`.
//
// # Safety
// `dir` must be a nul-terminated string.
enum PvStatus pv_write_demo_workspace(const char *dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PHENOVLP_H */
