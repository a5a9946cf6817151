#ifndef SKILLS_CAPI_H
#define SKILLS_CAPI_H

/* Generated by cbindgen from the skills-capi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every API call.
 */
typedef enum SkillsStatus {
  SKILLS_STATUS_OK = 0,
  SKILLS_STATUS_NULL_ARGUMENT = 1,
  SKILLS_STATUS_INVALID_ARGUMENT = 2,
  SKILLS_STATUS_IO_ERROR = 3,
  SKILLS_STATUS_PARSE_ERROR = 4,
  SKILLS_STATUS_UNREACHABLE = 5,
  SKILLS_STATUS_NO_MATCH = 6,
  SKILLS_STATUS_BUFFER_TOO_SMALL = 7,
  SKILLS_STATUS_INTERNAL_ERROR = 8,
} SkillsStatus;

/**
 * Opaque classifier handle (owns its forward-pass scratch space).
 */
typedef struct SkillsClassifierHandle SkillsClassifierHandle;

/**
 * Opaque planner handle.
 */
typedef struct SkillsGraphHandle SkillsGraphHandle;

/**
 * Concrete values of the four symbolic facts.
 */
typedef struct SkillsEffectState {
  uint8_t door_open;
  uint8_t cube_held;
  uint8_t cube_in_cabinet;
  uint8_t cube_on_counter;
} SkillsEffectState;

/**
 * A partial assignment over the four symbolic facts. For each fact,
 * `known` selects whether the `value` constrains it.
 */
typedef struct SkillsFactGoal {
  uint8_t door_open_known;
  uint8_t door_open;
  uint8_t cube_held_known;
  uint8_t cube_held;
  uint8_t cube_in_cabinet_known;
  uint8_t cube_in_cabinet;
  uint8_t cube_on_counter_known;
  uint8_t cube_on_counter;
} SkillsFactGoal;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the last error message for this thread into `buf` (NUL
 * terminated, truncated to `cap` bytes).
 */
enum SkillsStatus skills_last_error(char *buf, uintptr_t cap);

/**
 * Load a serialized skill graph. On success `*out` owns the handle;
 * release it with `skills_graph_free`.
 */
enum SkillsStatus skills_graph_load(const char *path, struct SkillsGraphHandle **out);

void skills_graph_free(struct SkillsGraphHandle *handle);

/**
 * Nearest graph node to a 10-component world state, if any is within
 * the matching tolerances.
 */
enum SkillsStatus skills_graph_nearest_node(const struct SkillsGraphHandle *handle,
                                            const double *state,
                                            uint32_t *out_node);

/**
 * Plan from `start_node` under `effects` toward a goal given as
 * required facts plus an optional goal node (`goal_node < 0` for
 * none). Skill ids are written to `out_ids` (capacity `cap`); the plan
 * length goes to `out_len`.
 */
enum SkillsStatus skills_graph_plan(const struct SkillsGraphHandle *handle,
                                    uint32_t start_node,
                                    const struct SkillsEffectState *effects,
                                    const struct SkillsFactGoal *goal,
                                    int64_t goal_node,
                                    uint32_t *out_ids,
                                    uintptr_t cap,
                                    uintptr_t *out_len);

/**
 * Load a serialized classifier. Release with `skills_classifier_free`.
 */
enum SkillsStatus skills_classifier_load(const char *path, struct SkillsClassifierHandle **out);

void skills_classifier_free(struct SkillsClassifierHandle *handle);

/**
 * Movement skill id predicted for a 10-component world state.
 */
enum SkillsStatus skills_classifier_classify(struct SkillsClassifierHandle *handle,
                                             const double *state,
                                             uint32_t *out_skill);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SKILLS_CAPI_H */
