//! C ABI over `poem-lab`.
//!
//! Every function returns a [`PoemStatus`]. On failure a message is kept per thread
//! and can be read with [`poem_last_error`]. Strings handed out by the library must
//! be released with [`poem_string_free`], stores with [`poem_chaindag_free`].

use std::cell::RefCell;
use std::cmp::Ordering;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use poem_lab::chaindag::{BlockId, BlockRecord, ChainDag, ChainError, ForkRule, InsertOutcome, Level, WeightPolicy};
use poem_lab::config::SimConfig;
use poem_lab::entropy::{bounds_row, compare_poem, intrinsic_weight, ChainWeight, FieldSpec, HashValue, IntrinsicWeight, ThresholdSpec};
use poem_lab::netsim;
use poem_lab::time::SimTime;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoemStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    UnknownBlock = 3,
    InvalidBlock = 4,
    Conflict = 5,
    Overflow = 6,
    Config = 7,
    Runtime = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoemRule {
    Poem = 0,
    Hcr = 1,
    HcrIntrinsic = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoemLevel {
    Subordinate = 0,
    Dominant = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoemInsertOutcome {
    NewTip = 0,
    SideBranch = 1,
    Duplicate = 2,
    /// Held back until a linked block arrives.
    Buffered = 3,
}

/// A block as submitted by the caller. The store derives its intrinsic weight.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PoemBlock {
    pub id: u64,
    /// Big-endian hash.
    pub hash: [u8; 32],
    pub parent: u64,
    pub level: PoemLevel,
    /// Only read for dominant blocks.
    pub sub_tip_ref: u64,
    pub miner: u32,
    pub height: u64,
    pub found_at_us: u64,
}

/// Fixed-point weight: `whole + fraction / 2^64`.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PoemWeight {
    pub whole: u64,
    pub fraction: u64,
}

/// Opaque block store.
pub struct PoemChainDag {
    dag: ChainDag,
    clamped: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

type Res<T> = Result<T, (PoemStatus, String)>;

fn fail<T>(status: PoemStatus, msg: impl Into<String>) -> Res<T> {
    Err((status, msg.into()))
}

/// Runs `f`, translating errors and panics into a status.
fn guard(f: impl FnOnce() -> Res<()>) -> PoemStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PoemStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            PoemStatus::Panic
        }
    }
}

fn chain_err(e: ChainError) -> (PoemStatus, String) {
    let status = match e {
        ChainError::UnknownBlock(_) => PoemStatus::UnknownBlock,
        ChainError::InvalidBlock { .. } | ChainError::Weight(_) => PoemStatus::InvalidBlock,
        ChainError::Conflict(_) => PoemStatus::Conflict,
        ChainError::MissingParent { .. } => PoemStatus::Runtime,
    };
    (status, e.to_string())
}

fn arg(e: impl std::fmt::Display) -> (PoemStatus, String) {
    (PoemStatus::InvalidArgument, e.to_string())
}

fn out<'a, T>(p: *mut T, name: &str) -> Res<&'a mut T> {
    // SAFETY: the caller passes either null or a valid, writable pointer.
    unsafe { p.as_mut() }.ok_or((PoemStatus::NullPointer, format!("{name} is null")))
}

fn input<'a, T>(p: *const T, name: &str) -> Res<&'a T> {
    // SAFETY: the caller passes either null or a valid pointer.
    unsafe { p.as_ref() }.ok_or((PoemStatus::NullPointer, format!("{name} is null")))
}

fn hash32(p: *const u8, name: &str) -> Res<HashValue> {
    // SAFETY: the caller passes either null or 32 readable bytes.
    let bytes = input(p.cast::<[u8; 32]>(), name)?;
    Ok(HashValue::from_be_bytes(*bytes))
}

fn to_rule(r: PoemRule) -> ForkRule {
    match r {
        PoemRule::Poem => ForkRule::Poem,
        PoemRule::Hcr => ForkRule::Hcr,
        PoemRule::HcrIntrinsic => ForkRule::HcrIntrinsic,
    }
}

fn poem_weight(w: ChainWeight) -> Res<PoemWeight> {
    let whole = u64::try_from(w.whole()).or(fail(PoemStatus::Overflow, "weight does not fit in 64 whole bits"))?;
    Ok(PoemWeight { whole, fraction: w.fraction() })
}

fn into_c_string(s: String, dst: &mut *mut c_char) -> Res<()> {
    *dst = CString::new(s).map_err(|e| (PoemStatus::Runtime, e.to_string()))?.into_raw();
    Ok(())
}

/// Message of the last failed call on this thread, or null. Valid until the next call.
#[no_mangle]
pub extern "C" fn poem_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn poem_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Creates an empty store holding only genesis (id 0).
///
/// With `clamped`, every block weighs exactly its level's threshold bits.
#[no_mangle]
pub extern "C" fn poem_chaindag_new(
    field_bits: u32,
    m_t: u32,
    m_d: u32,
    active: PoemRule,
    clamped: bool,
    dag_out: *mut *mut PoemChainDag,
) -> PoemStatus {
    guard(|| {
        let dst = out(dag_out, "dag_out")?;
        let field = FieldSpec::new(field_bits).map_err(arg)?;
        let t = ThresholdSpec::new(m_t, m_d, field).map_err(arg)?;
        let policy = if clamped { WeightPolicy::Clamped } else { WeightPolicy::Derived };
        let dag = ChainDag::new(field, t, policy, to_rule(active));
        *dst = Box::into_raw(Box::new(PoemChainDag { dag, clamped }));
        Ok(())
    })
}

/// Frees a store. Null is ignored.
///
/// # Safety
/// `dag` must come from [`poem_chaindag_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn poem_chaindag_free(dag: *mut PoemChainDag) {
    if !dag.is_null() {
        drop(Box::from_raw(dag));
    }
}

/// Inserts a block. Blocks whose links are unknown are buffered, not rejected.
///
/// # Safety
/// `dag` must be a live store; `block` and `outcome` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn poem_chaindag_insert(dag: *mut PoemChainDag, block: *const PoemBlock, outcome: *mut PoemInsertOutcome) -> PoemStatus {
    guard(|| {
        let store = out(dag, "dag")?;
        let b = *input(block, "block")?;
        let dst = out(outcome, "outcome")?;
        let t = store.dag.thresholds();
        let hash = HashValue::from_be_bytes(b.hash);
        let (level, bits) = match b.level {
            PoemLevel::Subordinate => (Level::Subordinate, t.m_t()),
            PoemLevel::Dominant => (Level::Dominant, t.dominant_bits()),
        };
        let n = if store.clamped {
            IntrinsicWeight::from_bits(bits)
        } else {
            intrinsic_weight(&hash, store.dag.field()).map_err(|e| (PoemStatus::InvalidBlock, e.to_string()))?
        };
        let record = BlockRecord {
            id: BlockId(b.id),
            hash,
            parent: BlockId(b.parent),
            level,
            sub_tip_ref: (level == Level::Dominant).then_some(BlockId(b.sub_tip_ref)),
            miner: b.miner,
            height: b.height,
            found_at: SimTime(b.found_at_us),
            n,
        };
        *dst = match store.dag.insert_block(record) {
            Ok(InsertOutcome::NewTip) => PoemInsertOutcome::NewTip,
            Ok(InsertOutcome::SideBranch) => PoemInsertOutcome::SideBranch,
            Ok(InsertOutcome::Duplicate) => PoemInsertOutcome::Duplicate,
            Err(ChainError::MissingParent { .. }) => PoemInsertOutcome::Buffered,
            Err(e) => return Err(chain_err(e)),
        };
        Ok(())
    })
}

/// Number of stored blocks, genesis included. Buffered blocks are not counted.
///
/// # Safety
/// `dag` must be a live store or null.
#[no_mangle]
pub unsafe extern "C" fn poem_chaindag_len(dag: *const PoemChainDag, len: *mut u64) -> PoemStatus {
    guard(|| {
        *out(len, "len")? = input(dag, "dag")?.dag.len() as u64;
        Ok(())
    })
}

/// Preferred tip under `rule`.
///
/// # Safety
/// `dag` must be a live store or null; `tip` writable or null.
#[no_mangle]
pub unsafe extern "C" fn poem_chaindag_best_tip(dag: *const PoemChainDag, rule: PoemRule, tip: *mut u64) -> PoemStatus {
    guard(|| {
        *out(tip, "tip")? = input(dag, "dag")?.dag.best_tip(to_rule(rule)).best_tip.0;
        Ok(())
    })
}

/// Accumulated intrinsic weight of the ancestry of `id`.
///
/// # Safety
/// `dag` must be a live store or null; `weight` writable or null.
#[no_mangle]
pub unsafe extern "C" fn poem_chaindag_weight(dag: *const PoemChainDag, id: u64, weight: *mut PoemWeight) -> PoemStatus {
    guard(|| {
        let w = input(dag, "dag")?.dag.poem_weight(BlockId(id)).map_err(chain_err)?;
        *out(weight, "weight")? = poem_weight(w)?;
        Ok(())
    })
}

/// Blocks abandoned when switching from `old_tip` to `new_tip`.
///
/// # Safety
/// `dag` must be a live store or null; `depth` writable or null.
#[no_mangle]
pub unsafe extern "C" fn poem_chaindag_reorg_depth(dag: *const PoemChainDag, old_tip: u64, new_tip: u64, depth: *mut u64) -> PoemStatus {
    guard(|| {
        *out(depth, "depth")? = input(dag, "dag")?.dag.reorg_depth(BlockId(old_tip), BlockId(new_tip)).map_err(chain_err)?;
        Ok(())
    })
}

/// `n = l - log2(h)` for a big-endian hash in an `field_bits`-bit field.
///
/// # Safety
/// `hash` must point to 32 readable bytes, big-endian; `weight` writable or null.
#[no_mangle]
pub unsafe extern "C" fn poem_intrinsic_weight(hash: *const u8, field_bits: u32, weight: *mut PoemWeight) -> PoemStatus {
    guard(|| {
        let h = hash32(hash, "hash")?;
        let field = FieldSpec::new(field_bits).map_err(arg)?;
        let n = intrinsic_weight(&h, field).map_err(arg)?;
        *out(weight, "weight")? = PoemWeight { whole: n.whole() as u64, fraction: n.fraction() };
        Ok(())
    })
}

/// Entropy-minimum preference between two tips: 1 favors `a`, -1 favors `b`,
/// 0 only for identical inputs.
///
/// # Safety
/// Hashes must point to 32 readable bytes; other pointers valid or null.
#[no_mangle]
pub unsafe extern "C" fn poem_compare(
    weight_a: *const PoemWeight,
    hash_a: *const u8,
    weight_b: *const PoemWeight,
    hash_b: *const u8,
    order: *mut i32,
) -> PoemStatus {
    guard(|| {
        let side = |w: *const PoemWeight, h: *const u8, name: &str| -> Res<(ChainWeight, HashValue)> {
            let w = input(w, name)?;
            let cw = ChainWeight::from_parts(w.whole as u128, w.fraction).map_err(arg)?;
            Ok((cw, hash32(h, name)?))
        };
        let a = side(weight_a, hash_a, "a")?;
        let b = side(weight_b, hash_b, "b")?;
        *out(order, "order")? = match compare_poem(a, b) {
            Ordering::Greater => 1,
            Ordering::Equal => 0,
            Ordering::Less => -1,
        };
        Ok(())
    })
}

/// Overtake bounds for both rules as a JSON object.
///
/// # Safety
/// `json` must be writable or null.
#[no_mangle]
pub unsafe extern "C" fn poem_bounds_json(m_t: u32, m_d: u32, extra_bits: u32, field_bits: u32, json: *mut *mut c_char) -> PoemStatus {
    guard(|| {
        let dst = out(json, "json")?;
        let field = FieldSpec::new(field_bits).map_err(arg)?;
        let t = ThresholdSpec::new(m_t, m_d, field).map_err(arg)?;
        let row = bounds_row(t, extra_bits, field).map_err(arg)?;
        into_c_string(serde_json::to_string(&row).map_err(|e| (PoemStatus::Runtime, e.to_string()))?, dst)
    })
}

/// Simulates a JSON configuration for one seed. The result holds `metrics` and
/// `stats`, plus the JSONL `trace` when `with_trace` is set.
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `json` writable or null.
#[no_mangle]
pub unsafe extern "C" fn poem_run_json(config_json: *const c_char, seed: u64, with_trace: bool, json: *mut *mut c_char) -> PoemStatus {
    guard(|| {
        let dst = out(json, "json")?;
        if config_json.is_null() {
            return fail(PoemStatus::NullPointer, "config_json is null");
        }
        let text = CStr::from_ptr(config_json).to_str().map_err(arg)?;
        let cfg = SimConfig::from_json(text).map_err(|e| (PoemStatus::Config, e.to_string()))?;
        let run = netsim::run(&cfg, seed).map_err(|e| (PoemStatus::Runtime, e.to_string()))?;
        let mut v = serde_json::json!({ "metrics": run.metrics, "stats": run.stats });
        if with_trace {
            v["trace"] = String::from_utf8(run.trace.to_jsonl()).map_err(|e| (PoemStatus::Runtime, e.to_string()))?.into();
        }
        into_c_string(v.to_string(), dst)
    })
}
