#ifndef DCGRID_H
#define DCGRID_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DcgStatus {
  DCG_STATUS_OK = 0,
  DCG_STATUS_NULL_POINTER = 1,
  DCG_STATUS_INVALID_ARGUMENT = 2,
  DCG_STATUS_INVALID_SCENARIO = 3,
  DCG_STATUS_IO = 4,
  DCG_STATUS_SIMULATION = 5,
  DCG_STATUS_OPTIMIZATION = 6,
  DCG_STATUS_BUFFER_TOO_SMALL = 7,
  DCG_STATUS_PROTOCOL = 8,
  DCG_STATUS_PANIC = 9,
} DcgStatus;

/**
 * Opaque plant instance stepping on its own clock.
 */
typedef struct DcgPlant DcgPlant;

/**
 * Opaque scenario configuration.
 */
typedef struct DcgScenario DcgScenario;

/**
 * Summary of one virtual-time run.
 */
typedef struct DcgRunSummary {
  double total_cost;
  uint64_t samples;
  uint64_t soc_violations;
  uint64_t voltage_violations;
  uint64_t balance_violations;
  uint64_t ticks;
  uint64_t stale_ticks;
  double v_dc_min;
  double v_dc_max;
  double pcc_import_kwh;
  double pcc_export_kwh;
  /**
   * Mean one-way message delay, ms; NaN when no message was delayed.
   */
  double delay_mean_ms;
} DcgRunSummary;

/**
 * Measurement of one prosumer bus. `soc` is NaN without a battery.
 */
typedef struct DcgBusReading {
  uint8_t bus_id;
  double v_bus;
  double p_pv;
  double p_load;
  double p_bess;
  double soc;
} DcgBusReading;

/**
 * Battery of a dispatch problem. `e0` is the stored energy in Wh.
 */
typedef struct DcgBattery {
  double capacity_wh;
  double soc_min;
  double soc_max;
  double eta;
  double p_dispatch_w;
  double e0_wh;
} DcgBattery;

/**
 * Decoded Modbus-TCP header and function code.
 */
typedef struct DcgFrameHeader {
  uint16_t transaction_id;
  uint8_t unit_id;
  uint8_t function;
  /**
   * Bytes consumed from the input buffer.
   */
  size_t frame_len;
} DcgFrameHeader;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *dcg_version(void);

/**
 * Copies the last error message of this thread into `buf` (NUL
 * terminated, truncated to `len`). Returns the full message length.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t dcg_last_error_message(char *buf, size_t len);

/**
 * Creates the bundled four-bus scenario.
 *
 * # Safety
 * `out` must be a valid pointer to write the handle to.
 */
enum DcgStatus dcg_scenario_default(uint64_t seed, struct DcgScenario **out);

/**
 * Loads a scenario file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DcgStatus dcg_scenario_load(const char *path, struct DcgScenario **out);

/**
 * Writes the scenario to a file.
 *
 * # Safety
 * `scenario` must be a live handle and `path` a NUL-terminated string.
 */
enum DcgStatus dcg_scenario_save(const struct DcgScenario *scenario, const char *path);

/**
 * Sets the traffic class ("DS0", "DS1", "DS3", "E1", "E3") and congestion.
 *
 * # Safety
 * `scenario` must be a live handle and `class` a NUL-terminated string.
 */
enum DcgStatus dcg_scenario_set_network(struct DcgScenario *scenario,
                                        const char *class_,
                                        double congestion);

/**
 * Sets the simulated duration in seconds.
 *
 * # Safety
 * `scenario` must be a live handle.
 */
enum DcgStatus dcg_scenario_set_duration(struct DcgScenario *scenario, double seconds);

/**
 * # Safety
 * `scenario` must be null or a handle not yet freed.
 */
void dcg_scenario_free(struct DcgScenario *scenario);

/**
 * Runs the scenario on the deterministic virtual clock.
 *
 * # Safety
 * `scenario` must be a live handle and `out` a valid pointer.
 */
enum DcgStatus dcg_run_virtual(const struct DcgScenario *scenario, struct DcgRunSummary *out);

/**
 * Builds a plant at its initial state from a scenario.
 *
 * # Safety
 * `scenario` must be a live handle and `out` a valid pointer.
 */
enum DcgStatus dcg_plant_new(const struct DcgScenario *scenario, struct DcgPlant **out);

/**
 * # Safety
 * `plant` must be null or a handle not yet freed.
 */
void dcg_plant_free(struct DcgPlant *plant);

/**
 * Applies a dispatch command (-1 charge, 0 idle, +1 discharge) to the
 * battery on `bus_id`. A command that would leave the SoC band within one
 * hour is replaced by idle; `applied` receives the command in force.
 *
 * # Safety
 * `plant` must be a live handle; `applied` may be null.
 */
enum DcgStatus dcg_plant_dispatch(struct DcgPlant *plant,
                                  uint8_t bus_id,
                                  int32_t command,
                                  int32_t *applied);

/**
 * Advances the plant by `seconds` of simulated time.
 *
 * # Safety
 * `plant` must be a live handle.
 */
enum DcgStatus dcg_plant_advance(struct DcgPlant *plant, double seconds);

/**
 * Reads the plant: simulated time, bus voltage, grid exchange (import
 * positive) and up to `capacity` bus readings. `count` receives the number
 * of buses; `BufferTooSmall` is returned if it exceeds `capacity`.
 *
 * # Safety
 * `plant` must be a live handle; the scalar outputs valid pointers;
 * `buses` must point to `capacity` writable readings (or be null with
 * `capacity` 0).
 */
enum DcgStatus dcg_plant_measure(const struct DcgPlant *plant,
                                 double *t_sim,
                                 double *v_dc,
                                 double *p_pcc,
                                 struct DcgBusReading *buses,
                                 size_t capacity,
                                 size_t *count);

/**
 * Optimal hourly dispatch of `n` batteries over `horizon` hours.
 *
 * `c_grid`, `c_bess` and `net_load` (total load minus PV, W) hold one value
 * per hour. `plan` receives `horizon * n` commands, hour-major, and `cost`
 * the objective value.
 *
 * # Safety
 * Array arguments must point to the stated number of elements.
 */
enum DcgStatus dcg_dispatch(const struct DcgBattery *batteries,
                            size_t n,
                            const double *c_grid,
                            const double *c_bess,
                            const double *net_load,
                            size_t horizon,
                            int32_t *plan,
                            double *cost);

/**
 * Encodes a read-holding-registers (0x03) request into `buf`.
 *
 * # Safety
 * `buf` must point to `capacity` writable bytes and `written` be valid.
 */
enum DcgStatus dcg_modbus_read_request(uint16_t transaction_id,
                                       uint8_t unit_id,
                                       uint16_t address,
                                       uint16_t count,
                                       uint8_t *buf,
                                       size_t capacity,
                                       size_t *written);

/**
 * Decodes the header of the first Modbus-TCP frame in `buf`.
 *
 * # Safety
 * `buf` must point to `len` readable bytes and `out` be valid.
 */
enum DcgStatus dcg_modbus_decode(const uint8_t *buf, size_t len, struct DcgFrameHeader *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DCGRID_H */
