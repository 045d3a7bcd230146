#ifndef NULLFWE_H
#define NULLFWE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NfStatus {
  NF_STATUS_OK = 0,
  NF_STATUS_NULL_POINTER = 1,
  NF_STATUS_INVALID_UTF8 = 2,
  NF_STATUS_VALIDATION = 3,
  NF_STATUS_IO = 4,
  NF_STATUS_DOMAIN = 5,
  NF_STATUS_RUNTIME = 6,
  NF_STATUS_PANIC = 7,
} NfStatus;

/**
 * Parsed, validated experiment configuration.
 */
typedef struct NfConfig NfConfig;

/**
 * A volume on a regular grid.
 */
typedef struct NfVolume NfVolume;

typedef struct NfFweReport {
  uint64_t n_analyses;
  uint64_t n_significant;
  double fwe;
  double ci_lo;
  double ci_hi;
  uint64_t excluded;
} NfFweReport;

typedef struct NfBiblioEstimate {
  uint64_t n_cluster_corrected;
  double frac_cdt_ge_01;
  uint64_t n_affected;
} NfBiblioEstimate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after success.
 * The pointer stays valid until the next call on this thread.
 */
const char *nf_last_error(void);

/**
 * Parse and validate a JSON experiment config.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum NfStatus nf_config_parse(const char *json, struct NfConfig **out);

/**
 * # Safety
 * `cfg` must come from [`nf_config_parse`] or be null.
 */
void nf_config_free(struct NfConfig *cfg);

/**
 * Run the experiment. `workers = 0` uses all available cores.
 *
 * # Safety
 * `cfg` must be a live handle; `out` must be writable.
 */
enum NfStatus nf_run_fwe(const struct NfConfig *cfg, uint32_t workers, struct NfFweReport *out);

/**
 * Results-CSV row for a report of this config. Release with
 * [`nf_string_free`].
 *
 * # Safety
 * `cfg` must be a live handle; `report` readable; `out` writable.
 */
enum NfStatus nf_fwe_csv_row(const struct NfConfig *cfg,
                             const struct NfFweReport *report,
                             char **out);

/**
 * # Safety
 * `s` must come from this library or be null.
 */
void nf_string_free(char *s);

/**
 * Wilson score 95% interval.
 *
 * # Safety
 * `lo` and `hi` must be writable.
 */
enum NfStatus nf_wilson_ci(uint64_t n_sig, uint64_t n, double *lo, double *hi);

/**
 * Bibliometric estimate from the embedded published inputs.
 *
 * # Safety
 * `out` must be writable.
 */
enum NfStatus nf_biblio_defaults(struct NfBiblioEstimate *out);

/**
 * Read a volume from `<base>.vhdr` / `<base>.vraw`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` writable.
 */
enum NfStatus nf_volume_read(const char *path, struct NfVolume **out);

/**
 * # Safety
 * `vol` must be a live handle; `path` a NUL-terminated string.
 */
enum NfStatus nf_volume_write(const struct NfVolume *vol, const char *path);

/**
 * Grid dimensions and voxel sizes.
 *
 * # Safety
 * `vol` must be a live handle; `dims` and `voxel_mm` point to 3 writable
 * elements each.
 */
enum NfStatus nf_volume_shape(const struct NfVolume *vol, uint64_t *dims, double *voxel_mm);

/**
 * Borrowed pointer to the x-fastest voxel values and their count. Valid
 * while the handle lives.
 *
 * # Safety
 * `vol` must be a live handle; `data` and `len` writable.
 */
enum NfStatus nf_volume_data(const struct NfVolume *vol, const double **data, uint64_t *len);

/**
 * # Safety
 * `vol` must come from this library or be null.
 */
void nf_volume_free(struct NfVolume *vol);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NULLFWE_H */
