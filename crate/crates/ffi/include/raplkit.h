#ifndef RAPLKIT_H
#define RAPLKIT_H

#include <stddef.h>
#include <stdint.h>

typedef enum RkDomain {
  RK_DOMAIN_PKG = 0,
  RK_DOMAIN_PP0 = 1,
  RK_DOMAIN_PP1 = 2,
  RK_DOMAIN_DRAM = 3,
} RkDomain;

typedef enum RkSamplerMode {
  RK_SAMPLER_MODE_NAIVE = 0,
  RK_SAMPLER_MODE_BATCHED = 1,
  RK_SAMPLER_MODE_RING = 2,
} RkSamplerMode;

typedef enum RkStatus {
  RK_STATUS_OK = 0,
  RK_STATUS_NULL_POINTER = 1,
  RK_STATUS_INVALID_ARGUMENT = 2,
  RK_STATUS_BACKEND_MISSING = 3,
  RK_STATUS_PERMISSION_DENIED = 4,
  RK_STATUS_READ_FAILED = 5,
  RK_STATUS_IO = 6,
  RK_STATUS_STATS_UNDEFINED = 7,
  RK_STATUS_PANIC = 8,
} RkStatus;

/**
 * Opaque counter source.
 */
typedef struct RkSource RkSource;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static NUL-terminated string.
 */
const char *rk_version(void);

/**
 * Message for the last failed call on this thread, or NULL. Valid until the
 * next failing call on the same thread.
 */
const char *rk_last_error_message(void);

/**
 * Constant-power synthetic source on the monotonic clock.
 *
 * # Safety
 * `out_src` must be a valid pointer.
 */
enum RkStatus rk_source_open_synthetic(double power_watts,
                                       double unit_joules,
                                       uint64_t wrap_range,
                                       uint32_t domain_mask,
                                       struct RkSource **out_src);

/**
 * powercap sysfs source; `root` is usually `/sys/class/powercap`.
 *
 * # Safety
 * `root` must be a NUL-terminated string and `out_src` a valid pointer.
 */
enum RkStatus rk_source_open_powercap(const char *root,
                                      uint32_t domain_mask,
                                      struct RkSource **out_src);

/**
 * MSR device source; `device_root` is usually `/dev/cpu`.
 *
 * # Safety
 * `device_root` must be a NUL-terminated string and `out_src` a valid pointer.
 */
enum RkStatus rk_source_open_msr(const char *device_root,
                                 uint32_t cpu,
                                 uint32_t domain_mask,
                                 struct RkSource **out_src);

/**
 * Source from a JSON descriptor, e.g.
 * `{"backend":"powercap","domains":["pkg","dram"]}`.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out_src` a valid pointer.
 */
enum RkStatus rk_source_open_json(const char *json, struct RkSource **out_src);

/**
 * Release a source. NULL is ignored.
 *
 * # Safety
 * `src` must come from an `rk_source_open_*` call and not be used afterwards.
 */
void rk_source_free(struct RkSource *src);

/**
 * Read every opened domain. `values` receives 4 entries indexed by
 * `RkDomain`; `out_mask` marks which were read.
 *
 * # Safety
 * `src` must be a live handle, `values` point to 4 writable `uint64_t`.
 */
enum RkStatus rk_source_read(struct RkSource *src, uint64_t *values, uint32_t *out_mask);

/**
 * Wrap range and joules-per-raw-unit of an opened domain.
 *
 * # Safety
 * `src` must be a live handle; output pointers valid.
 */
enum RkStatus rk_source_domain_info(const struct RkSource *src,
                                    enum RkDomain domain,
                                    uint64_t *out_wrap_range,
                                    double *out_joules_per_raw);

/**
 * Counter increment from `prev` to `curr` modulo `range`.
 *
 * # Safety
 * `out_delta` must be a valid pointer.
 */
enum RkStatus rk_wrap_delta(uint64_t prev, uint64_t curr, uint64_t range, uint64_t *out_delta);

double rk_raw_to_joules(uint64_t raw, double joules_per_raw);

/**
 * Sample `src` at `hz` for `duration_ns` into a CSV log plus `<path>.json`.
 * `out_samples` may be NULL.
 *
 * # Safety
 * `src` must be a live handle, `path` a NUL-terminated string.
 */
enum RkStatus rk_sample_to_csv(struct RkSource *src,
                               enum RkSamplerMode mode,
                               double hz,
                               uint64_t duration_ns,
                               const char *path,
                               uint64_t *out_samples);

/**
 * Post-process a sample log; writes `<log>.intervals.csv` and
 * `<log>.summary.json` next to it and returns per-domain joules.
 *
 * # Safety
 * `log_path` NUL-terminated; `total_joules` points to 4 writable doubles.
 */
enum RkStatus rk_log_summarize(const char *log_path,
                               double *total_joules,
                               uint32_t *out_mask,
                               double *out_duration_s);

/**
 * Kruskal–Wallis H over `n_groups` groups stored back to back in `values`.
 *
 * # Safety
 * `values` holds `sum(group_sizes)` doubles; `group_sizes` holds `n_groups`.
 */
enum RkStatus rk_kruskal_wallis(const double *values,
                                const size_t *group_sizes,
                                size_t n_groups,
                                double *out_h,
                                double *out_p);

/**
 * Dunn's test with Bonferroni adjustment; writes the `n_groups x n_groups`
 * row-major matrix of adjusted p-values.
 *
 * # Safety
 * As for [`rk_kruskal_wallis`]; `out_p_adjusted` holds `n_groups^2` doubles.
 */
enum RkStatus rk_dunn_bonferroni(const double *values,
                                 const size_t *group_sizes,
                                 size_t n_groups,
                                 double *out_p_adjusted);

/**
 * # Safety
 * `x`/`y` hold `nx`/`ny` doubles; `out_delta` valid.
 */
enum RkStatus rk_cliffs_delta(const double *x,
                              size_t nx,
                              const double *y,
                              size_t ny,
                              double *out_delta);

/**
 * # Safety
 * `x` holds `n` doubles; outputs valid.
 */
enum RkStatus rk_shapiro_wilk(const double *x, size_t n, double *out_w, double *out_p);

/**
 * Absolute and percentage overhead of a tool median over a baseline median.
 *
 * # Safety
 * Output pointers valid.
 */
enum RkStatus rk_overhead(double baseline_median,
                          double tool_median,
                          double *out_delta_t,
                          double *out_pct_delta);

/**
 * Per-operation latency; pass NaN as `baseline_batch_ms` for no baseline.
 *
 * # Safety
 * Output pointers valid.
 */
enum RkStatus rk_per_op(double median_batch_ms,
                        double baseline_batch_ms,
                        uint64_t iterations,
                        double *out_per_op_ms,
                        double *out_baseline_subtracted_ms);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RAPLKIT_H */
