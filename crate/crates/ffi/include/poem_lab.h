#ifndef POEM_LAB_H
#define POEM_LAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PoemStatus {
  POEM_STATUS_OK = 0,
  POEM_STATUS_NULL_POINTER = 1,
  POEM_STATUS_INVALID_ARGUMENT = 2,
  POEM_STATUS_UNKNOWN_BLOCK = 3,
  POEM_STATUS_INVALID_BLOCK = 4,
  POEM_STATUS_CONFLICT = 5,
  POEM_STATUS_OVERFLOW = 6,
  POEM_STATUS_CONFIG = 7,
  POEM_STATUS_RUNTIME = 8,
  POEM_STATUS_PANIC = 9,
} PoemStatus;

typedef enum PoemRule {
  POEM_RULE_POEM = 0,
  POEM_RULE_HCR = 1,
  POEM_RULE_HCR_INTRINSIC = 2,
} PoemRule;

typedef enum PoemLevel {
  POEM_LEVEL_SUBORDINATE = 0,
  POEM_LEVEL_DOMINANT = 1,
} PoemLevel;

typedef enum PoemInsertOutcome {
  POEM_INSERT_OUTCOME_NEW_TIP = 0,
  POEM_INSERT_OUTCOME_SIDE_BRANCH = 1,
  POEM_INSERT_OUTCOME_DUPLICATE = 2,
  /**
   * Held back until a linked block arrives.
   */
  POEM_INSERT_OUTCOME_BUFFERED = 3,
} PoemInsertOutcome;

/**
 * Opaque block store.
 */
typedef struct PoemChainDag PoemChainDag;

/**
 * A block as submitted by the caller. The store derives its intrinsic weight.
 */
typedef struct PoemBlock {
  uint64_t id;
  /**
   * Big-endian hash.
   */
  uint8_t hash[32];
  uint64_t parent;
  enum PoemLevel level;
  /**
   * Only read for dominant blocks.
   */
  uint64_t sub_tip_ref;
  uint32_t miner;
  uint64_t height;
  uint64_t found_at_us;
} PoemBlock;

/**
 * Fixed-point weight: `whole + fraction / 2^64`.
 */
typedef struct PoemWeight {
  uint64_t whole;
  uint64_t fraction;
} PoemWeight;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the next call.
 */
const char *poem_last_error(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void poem_string_free(char *s);

/**
 * Creates an empty store holding only genesis (id 0).
 *
 * With `clamped`, every block weighs exactly its level's threshold bits.
 */
enum PoemStatus poem_chaindag_new(uint32_t field_bits,
                                  uint32_t m_t,
                                  uint32_t m_d,
                                  enum PoemRule active,
                                  bool clamped,
                                  struct PoemChainDag **dag_out);

/**
 * Frees a store. Null is ignored.
 *
 * # Safety
 * `dag` must come from [`poem_chaindag_new`] and not be freed twice.
 */
void poem_chaindag_free(struct PoemChainDag *dag);

/**
 * Inserts a block. Blocks whose links are unknown are buffered, not rejected.
 *
 * # Safety
 * `dag` must be a live store; `block` and `outcome` valid pointers.
 */
enum PoemStatus poem_chaindag_insert(struct PoemChainDag *dag,
                                     const struct PoemBlock *block,
                                     enum PoemInsertOutcome *outcome);

/**
 * Number of stored blocks, genesis included. Buffered blocks are not counted.
 *
 * # Safety
 * `dag` must be a live store or null.
 */
enum PoemStatus poem_chaindag_len(const struct PoemChainDag *dag, uint64_t *len);

/**
 * Preferred tip under `rule`.
 *
 * # Safety
 * `dag` must be a live store or null; `tip` writable or null.
 */
enum PoemStatus poem_chaindag_best_tip(const struct PoemChainDag *dag,
                                       enum PoemRule rule,
                                       uint64_t *tip);

/**
 * Accumulated intrinsic weight of the ancestry of `id`.
 *
 * # Safety
 * `dag` must be a live store or null; `weight` writable or null.
 */
enum PoemStatus poem_chaindag_weight(const struct PoemChainDag *dag,
                                     uint64_t id,
                                     struct PoemWeight *weight);

/**
 * Blocks abandoned when switching from `old_tip` to `new_tip`.
 *
 * # Safety
 * `dag` must be a live store or null; `depth` writable or null.
 */
enum PoemStatus poem_chaindag_reorg_depth(const struct PoemChainDag *dag,
                                          uint64_t old_tip,
                                          uint64_t new_tip,
                                          uint64_t *depth);

/**
 * `n = l - log2(h)` for a big-endian hash in an `field_bits`-bit field.
 *
 * # Safety
 * `hash` must point to 32 readable bytes, big-endian; `weight` writable or null.
 */
enum PoemStatus poem_intrinsic_weight(const uint8_t *hash,
                                      uint32_t field_bits,
                                      struct PoemWeight *weight);

/**
 * Entropy-minimum preference between two tips: 1 favors `a`, -1 favors `b`,
 * 0 only for identical inputs.
 *
 * # Safety
 * Hashes must point to 32 readable bytes; other pointers valid or null.
 */
enum PoemStatus poem_compare(const struct PoemWeight *weight_a,
                             const uint8_t *hash_a,
                             const struct PoemWeight *weight_b,
                             const uint8_t *hash_b,
                             int32_t *order);

/**
 * Overtake bounds for both rules as a JSON object.
 *
 * # Safety
 * `json` must be writable or null.
 */
enum PoemStatus poem_bounds_json(uint32_t m_t,
                                 uint32_t m_d,
                                 uint32_t extra_bits,
                                 uint32_t field_bits,
                                 char **json);

/**
 * Simulates a JSON configuration for one seed. The result holds `metrics` and
 * `stats`, plus the JSONL `trace` when `with_trace` is set.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string; `json` writable or null.
 */
enum PoemStatus poem_run_json(const char *config_json, uint64_t seed, bool with_trace, char **json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* POEM_LAB_H */
