/*
 * C API for the m4 runtime: an N-encoder / 1-backbone / M-generator
 * foundation model with per-task low-rank adapter packs, multi-path partial
 * activation, a local firmware-style service, and the cost/operator
 * analytics engine.
 *
 * Conventions:
 *   - every function returns an m4_status code; M4_OK is 0
 *   - the failing call's message is available via m4_last_error()
 *     (thread-local)
 *   - char** outputs are heap strings owned by the caller; release them
 *     with m4_string_free()
 *   - handles are opaque; free them with the matching *_free()
 *   - structured inputs and outputs ride as JSON strings; binary payloads
 *     are base64 fields inside them
 */
#ifndef M4_M4_H
#define M4_M4_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef struct m4_model m4_model;
typedef struct m4_registry m4_registry;
typedef struct m4_pack m4_pack;
typedef struct m4_service m4_service;

enum m4_status {
    M4_OK = 0,
    M4_E_INVALID = 1,
    M4_E_IO = 2,
    M4_E_PARSE = 3,
    M4_E_NOT_FOUND = 4,
    M4_E_DUPLICATE = 5,
    M4_E_DIMENSION = 6,
    M4_E_BUDGET = 7,
    M4_E_UNSUPPORTED = 8,
    M4_E_INTERNAL = 9
};

const char* m4_version(void);
const char* m4_errstr(int code);
const char* m4_last_error(void);
void m4_string_free(char* s);

/* ---- foundation model ------------------------------------------------ */

/* profile: "desk" (executable toy weights) or "paper" (published sizes) */
int m4_model_build(const char* profile, uint64_t seed, m4_model** out);
void m4_model_free(m4_model* model);
/* hash_hex receives 64 hex chars plus NUL */
int m4_model_weight_hash(const m4_model* model, char* hash_hex);
int m4_model_component_table(const m4_model* model, char** json_out);
/* round-trips one component ("Backbone", "IMG_enc", ... or "all") through a
 * storage format ("FP16" | "INT8" | "INT4") */
int m4_model_quantize(m4_model* model, const char* component, const char* format);

/* ---- task registry ----------------------------------------------------- */

int m4_registry_open(const char* path, m4_registry** out);
void m4_registry_free(m4_registry* reg);
int m4_registry_size(const m4_registry* reg, size_t* out);
int m4_registry_task_json(const m4_registry* reg, const char* task_id, char** json_out);
/* category counts plus per-task validation results */
int m4_registry_summary(const m4_registry* reg, char** json_out);
/* {"path":n,"activated":[...],"generator":"..."} */
int m4_route(const m4_registry* reg, const char* task_id, char** json_out);
/* slots_json: {"slot":"value", ...} */
int m4_render_prompt(const m4_registry* reg, const char* task_id, const char* slots_json, char** out);

/* ---- adapter packs ------------------------------------------------------ */

/* config_json: {"technique":"LoRA","rank":4,"alpha":4.0,
 *               "targets":[{"component":"Backbone","role":"query"},...]}
 * profile selects the geometry the pack is sized for ("desk" | "paper"). */
int m4_pack_create(const char* profile, const char* task_id, const char* config_json, uint64_t seed,
                   m4_pack** out);
int m4_pack_load(const char* path, m4_pack** out);
int m4_pack_save(const m4_pack* pack, const char* path);
int m4_pack_info(const m4_pack* pack, char** json_out);
void m4_pack_free(m4_pack* pack);
int m4_attach(m4_model* model, const m4_pack* pack);
int m4_detach(m4_model* model, const char* task_id);

/* ---- execution ----------------------------------------------------------- */

/* request_json: {"input":{"modality":"imu","data":"<base64>"},
 *                "inputs":[...], "labels":[...], "slots":{...},
 *                "max_tokens":16} */
int m4_execute(const m4_model* model, const m4_registry* reg, const char* task_id,
               const char* request_json, char** response_json);

/* ---- training ------------------------------------------------------------ */

/* options_json: {"task":"T38",
 *                "dataset":{"kind":"path3-alignment","seed":1,"size":300,
 *                           "modality":"imu","zipf":0.0},
 *                "config":{"steps":200,"batch":8,"lr":0.1,"seed":1,
 *                          "tau":0.07,"loss":"auto"},
 *                "peft":{"technique":"LoRA","rank":4,"alpha":4.0,
 *                        "targets":[...]}}            (peft optional) */
int m4_train(const m4_model* model, const m4_registry* reg, const char* options_json, m4_pack** out_pack,
             char** log_csv);
int m4_evaluate(const m4_model* model, const m4_registry* reg, const m4_pack* pack,
                const char* options_json, char** report_json);
/* adds "fractions":[...] and "repeats":5 to the training options */
int m4_few_shot(const m4_model* model, const m4_registry* reg, const char* options_json,
                char** report_json);

/* ---- cost and operator analytics (stateless) ----------------------------- */

/* {"components":"fixtures/components.json","calibration":"fixtures/ts_models.json",
 *  "tasks":50,"format":"int4","quantize_generators":true} -> n,ts_bytes,fm_bytes CSV */
int m4_cost_storage_curve(const char* options_json, char** csv_out);
/* adds "budget":12000000000 and optional "buffer_fraction" -> JSON report */
int m4_cost_memory(const char* options_json, char** report_json);
/* {"table":"fixtures/table5.json","speedup":20.0} -> projection CSV */
int m4_whatif(const char* options_json, char** csv_out);
/* {"taxonomy":"fixtures/operators.txt","inventories":"fixtures/ts_zoo.json",
 *  "profiles":"fixtures/profiles.json","profile":"pixel7_edgetpu_2023"} */
int m4_census(const char* options_json, char** report_json);
/* {"profile":"paper","technique":"LoRA","rank":4,"targets":[...]} */
int m4_lora_count(const char* options_json, char** report_json);

/* ---- firmware service ------------------------------------------------------ */

/* The service copies the model; the caller keeps ownership of both handles.
 * budget_bytes of 0 means "use M4_BUDGET_BYTES or the default". */
int m4_service_start(const m4_model* model, const m4_registry* reg, const char* socket_path,
                     uint64_t budget_bytes, m4_service** out);
/* one JSON request line in, one JSON response out (no socket needed) */
int m4_service_request(m4_service* svc, const char* line, char** response_json);
int m4_service_status(m4_service* svc, char** json_out);
int m4_service_stop(m4_service* svc);
void m4_service_free(m4_service* svc);

#ifdef __cplusplus
}
#endif

#endif /* M4_M4_H */
