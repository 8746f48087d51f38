#ifndef TACTWIN_TACTWIN_H
#define TACTWIN_TACTWIN_H

/* C interface to the tactwin glove / vibrotactile feedback simulator.
 *
 * Every function that can fail returns a tw_status. On failure a message for
 * the calling thread is available from tw_last_error() until the next call.
 * Strings returned through `char**` are heap allocated; release them with
 * tw_string_free(). JSON arguments and results are UTF-8 text. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define TW_API __declspec(dllexport)
#else
#define TW_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum tw_status {
  TW_OK = 0,
  TW_ERR_INVALID_ARGUMENT = 1,
  TW_ERR_OUT_OF_RANGE = 2,
  TW_ERR_CONFIG = 3,
  TW_ERR_PARSE = 4,
  TW_ERR_IO = 5,
  TW_ERR_PRECONDITION = 6,
  TW_ERR_VALIDATION = 7,
  TW_ERR_ENCODING = 8,
  TW_ERR_STATE = 9,
  TW_ERR_NULL_POINTER = 10,
  TW_ERR_BUFFER_TOO_SMALL = 11,
  TW_ERR_INTERNAL = 12
} tw_status;

typedef enum tw_pvalue_method {
  TW_PVALUE_AUTO = 0,
  TW_PVALUE_CHI_SQUARE = 1,
  TW_PVALUE_EXACT = 2
} tw_pvalue_method;

TW_API const char* tw_version(void);
TW_API const char* tw_status_string(tw_status status);
TW_API const char* tw_last_error(void);
TW_API void tw_string_free(char* s);

/* Sensor readout with the default piezo model (10-bit ADC). */
TW_API tw_status tw_piezo_readout(double pressure, uint16_t* count);
TW_API tw_status tw_invert_count(double count, double* pressure, int* saturated);
TW_API tw_status tw_quantization_bound(double* bound);
/* Row-major scan of a 25-value pressure field into 25 counts. */
TW_API tw_status tw_scan(const double* pressure, size_t n, uint16_t* counts);

/* Sensor layout as `index,region` CSV. */
TW_API tw_status tw_layout_text(char** text);
/* Built-in pressure template of an object as `index,weight` CSV. */
TW_API tw_status tw_template_text(const char* object, char** text);

/* Compression modes. `spec` is "finger:6", "palm:3", ... or a path to a
 * mode file. */
TW_API tw_status tw_mode_list(char** json);
TW_API tw_status tw_mode_show(const char* spec, char** text);
TW_API tw_status tw_compress(const char* spec, const double* frame, size_t n, double* averages,
                             size_t capacity, size_t* num_motors);

/* Streaming pipeline. Config keys (all optional): object, grip, noise, mode,
 * threshold, encoder, gain, scan_rate_hz, seed, loss, latency_ms, jitter_ms,
 * reorder, queue_capacity, loop. */
typedef struct tw_pipeline tw_pipeline;
TW_API tw_status tw_pipeline_create(const char* config_json, tw_pipeline** out);
/* One scan period; `tick_json` receives the tick as a JSON object. */
TW_API tw_status tw_pipeline_step(tw_pipeline* p, char** tick_json);
TW_API tw_status tw_pipeline_stats(const tw_pipeline* p, char** json);
TW_API void tw_pipeline_destroy(tw_pipeline* p);

/* Simulated session(s). Keys: protocol, site, seed, responder, sigma,
 * confusion, participant, session_id, pair_policy, loss, log_dir, mode.
 * Result: {"sessions": [{"session_id", "summary", "log_file"?}]}. */
TW_API tw_status tw_experiment_run(const char* config_json, char** result_json);

/* Offline analysis of a log directory or file; writes the report files into
 * `report_dir` and returns summary.json. `options_json` may be NULL. */
TW_API tw_status tw_analyze_path(const char* input, const char* report_dir, const char* options_json,
                                 char** summary_json);
TW_API tw_status tw_session_summary(const char* log_path, char** summary_text);

/* Live session service (WebSocket /session plus HTTP). */
typedef struct tw_service tw_service;
TW_API tw_status tw_service_create(const char* config_json, tw_service** out);
TW_API tw_status tw_service_start(tw_service* s);
TW_API tw_status tw_service_port(const tw_service* s, uint16_t* port);
TW_API tw_status tw_service_control(tw_service* s, const char* message_json, char** reply_json);
TW_API tw_status tw_service_last_summary(const tw_service* s, char** summary_json);
TW_API tw_status tw_service_wait(tw_service* s);
TW_API tw_status tw_service_stop(tw_service* s);
TW_API void tw_service_destroy(tw_service* s);

/* Statistics. `data` is n_blocks rows of k values. */
TW_API tw_status tw_friedman(const double* data, size_t n_blocks, size_t k, tw_pvalue_method method,
                             double* chi2, double* p);
TW_API tw_status tw_chi_square_sf(double x, double df, double* p);
TW_API tw_status tw_aggregate_site_score(double intensity, double single, double pair, double* score,
                                         int* percent);

/* Packet codec. */
TW_API uint16_t tw_crc16(const uint8_t* bytes, size_t len);
TW_API tw_status tw_packet_encode(uint8_t type, uint8_t seq, const uint8_t* payload, size_t len, uint8_t* out,
                                  size_t capacity, size_t* written);
TW_API tw_status tw_packet_decode(const uint8_t* bytes, size_t len, uint8_t* type, uint8_t* seq,
                                  uint8_t* payload, size_t capacity, size_t* payload_len);

#ifdef __cplusplus
}
#endif

#endif
