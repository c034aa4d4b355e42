#ifndef NEUROSCOPE_H
#define NEUROSCOPE_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. `NS_OK` is zero; everything else is a failure.
 */
typedef enum NsStatus {
  NS_OK = 0,
  NS_NULL_POINTER = 1,
  NS_INVALID_ARGUMENT = 2,
  NS_IO = 3,
  NS_VALIDATION = 4,
  NS_UNKNOWN_LAYER = 5,
  NS_OUT_OF_RANGE = 6,
  NS_DEAD_NEURON = 7,
  NS_SINGULAR_CLASS_INDEX = 8,
  NS_BUFFER_TOO_SMALL = 9,
  NS_PANIC = 10,
} NsStatus;

/**
 * Network geometry description.
 */
typedef struct NsArchitecture NsArchitecture;

/**
 * A dataset opened from its manifest.
 */
typedef struct NsDataset NsDataset;

/**
 * Per-layer analysis results.
 */
typedef struct NsLayerReport NsLayerReport;

typedef struct NsReceptiveField {
  /**
   * Side of the square input footprint.
   */
  size_t size;
  /**
   * Input-pixel step between neighbouring activations.
   */
  size_t jump;
  /**
   * Input coordinate of the first footprint pixel of activation (0, 0).
   */
  int64_t start;
  /**
   * Input coordinate of the center of that footprint.
   */
  double offset;
} NsReceptiveField;

typedef struct NsColorResult {
  /**
   * Color selectivity index in [0, 1].
   */
  double alpha;
  /**
   * Hue of the first axis in degrees, NaN when achromatic.
   */
  double hue_degrees;
  double chroma_magnitude;
  /**
   * Nonzero when the color cloud had no spread.
   */
  uint8_t degenerate;
} NsColorResult;

typedef struct NsClassResult {
  /**
   * Class selectivity index in [0, 1].
   */
  double gamma;
  /**
   * Number of classes needed to reach the threshold.
   */
  size_t covering_classes;
  /**
   * Number of contributing images.
   */
  size_t images;
} NsClassResult;

typedef struct NsAnalysisConfig {
  size_t n_max;
  double min_ratio;
  double dead_epsilon;
  double th;
  /**
   * Nonzero divides the NF by the per-pixel weight sum instead of `n_max`.
   */
  uint8_t weight_sum_normalization;
  /**
   * Nonzero counts out-of-image pixels as zeros.
   */
  uint8_t include_masked;
} NsAnalysisConfig;

typedef struct NsNeuronSummary {
  uint8_t dead;
  /**
   * Color selectivity index, NaN when dead.
   */
  double alpha;
  /**
   * Hue in degrees, NaN when dead or achromatic.
   */
  double hue_degrees;
  /**
   * Class selectivity index, NaN when dead or undefined.
   */
  double gamma;
  /**
   * Classes covering the threshold, 0 when undefined.
   */
  size_t covering_classes;
  /**
   * Images that passed the ranking threshold.
   */
  size_t images_used;
  /**
   * Mean squared gradient of the neuron feature, NaN when dead.
   */
  double sharpness;
  /**
   * Neuron feature side in pixels, 0 when dead.
   */
  size_t nf_rows;
  size_t nf_cols;
} NsNeuronSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until
 * the next call into this library on the same thread.
 */
const char *ns_last_error_message(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed already.
 */
void ns_string_free(char *s);

/**
 * Library version, static storage.
 */
const char *ns_version(void);

/**
 * Built-in VGG-M geometry.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum NsStatus ns_arch_vgg_m(struct NsArchitecture **out);

/**
 * Parses an architecture description from text.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` valid for writes.
 */
enum NsStatus ns_arch_parse(const char *text, struct NsArchitecture **out);

/**
 * Reads an architecture description file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` valid for writes.
 */
enum NsStatus ns_arch_open(const char *path, struct NsArchitecture **out);

/**
 * # Safety
 * `arch` must come from an `ns_arch_*` constructor, or be null.
 */
void ns_arch_free(struct NsArchitecture *arch);

/**
 * # Safety
 * `arch` must be a live handle, `layer` a NUL-terminated string and
 * `out` valid for writes.
 */
enum NsStatus ns_arch_receptive_field(const struct NsArchitecture *arch,
                                      const char *layer,
                                      struct NsReceptiveField *out);

/**
 * Activation-map size of a layer for the architecture's input size.
 *
 * # Safety
 * `arch` must be a live handle, `layer` a NUL-terminated string, and
 * `rows`/`cols` valid for writes.
 */
enum NsStatus ns_arch_output_dims(const struct NsArchitecture *arch,
                                  const char *layer,
                                  size_t *rows,
                                  size_t *cols);

/**
 * Opens a dataset directory or `manifest.nsx` file and checks payload sizes.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` valid for writes.
 */
enum NsStatus ns_dataset_open(const char *path, struct NsDataset **out);

/**
 * # Safety
 * `ds` must come from [`ns_dataset_open`], or be null.
 */
void ns_dataset_free(struct NsDataset *ds);

/**
 * Number of layers, or 0 for a null handle.
 *
 * # Safety
 * `ds` must be a live handle or null.
 */
size_t ns_dataset_layer_count(const struct NsDataset *ds);

/**
 * # Safety
 * `ds` must be a live handle or null.
 */
size_t ns_dataset_image_count(const struct NsDataset *ds);

/**
 * # Safety
 * `ds` must be a live handle or null.
 */
size_t ns_dataset_class_count(const struct NsDataset *ds);

/**
 * Name of layer `index`; free with [`ns_string_free`].
 *
 * # Safety
 * `ds` must be a live handle; `out` valid for writes.
 */
enum NsStatus ns_dataset_layer_name(const struct NsDataset *ds, size_t index, char **out);

/**
 * Color selectivity of `n` RGB pixels (`3n` values in [0, 1]) with
 * optional per-pixel weights (null = uniform).
 *
 * # Safety
 * `rgb` must hold `3 * n` values, `weights` `n` values or be null, and
 * `out` be valid for writes.
 */
enum NsStatus ns_color_selectivity_rgb(const double *rgb,
                                       const double *weights,
                                       size_t n,
                                       struct NsColorResult *out);

/**
 * Class selectivity of `n` ranked images given their class labels and
 * normalized weights, at cumulative threshold `th` in (0, 1].
 *
 * # Safety
 * `labels` and `weights` must hold `n` values; `out` valid for writes.
 */
enum NsStatus ns_class_selectivity(const size_t *labels,
                                   const double *weights,
                                   size_t n,
                                   double th,
                                   struct NsClassResult *out);

/**
 * Ranks one neuron's per-image maxima. Writes up to `capacity` image ids
 * and weights in rank order and the selected count to `out_len`. A dead
 * neuron yields `NS_DEAD_NEURON`.
 *
 * # Safety
 * `values` must hold `n_images` values; `ids` and `weights` must hold
 * `capacity` values; `out_len` valid for writes.
 */
enum NsStatus ns_rank_neuron(const float *values,
                             size_t n_images,
                             size_t n_max,
                             double min_ratio,
                             size_t *ids,
                             double *weights,
                             size_t capacity,
                             size_t *out_len);

/**
 * Default analysis settings.
 */
struct NsAnalysisConfig ns_analysis_config_default(void);

/**
 * Ranks, composites and indexes every neuron of `layer`. `arch` may be
 * null to use the dataset's own description (or VGG-M when it has none);
 * `config` may be null for defaults.
 *
 * # Safety
 * Handles must be live, `layer` NUL-terminated, `out` valid for writes.
 */
enum NsStatus ns_analyze_layer(const struct NsDataset *ds,
                               const struct NsArchitecture *arch,
                               const char *layer,
                               const struct NsAnalysisConfig *config,
                               struct NsLayerReport **out);

/**
 * # Safety
 * `report` must come from [`ns_analyze_layer`], or be null.
 */
void ns_layer_report_free(struct NsLayerReport *report);

/**
 * # Safety
 * `report` must be a live handle or null.
 */
size_t ns_layer_report_neuron_count(const struct NsLayerReport *report);

/**
 * # Safety
 * `report` must be a live handle; `out` valid for writes.
 */
enum NsStatus ns_layer_report_neuron(const struct NsLayerReport *report,
                                     size_t neuron,
                                     struct NsNeuronSummary *out);

/**
 * Copies a neuron feature as row-major RGB doubles (`rows * cols * 3`).
 *
 * # Safety
 * `report` must be a live handle and `buf` hold `capacity` values.
 */
enum NsStatus ns_layer_report_nf(const struct NsLayerReport *report,
                                 size_t neuron,
                                 double *buf,
                                 size_t capacity);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NEUROSCOPE_H */
