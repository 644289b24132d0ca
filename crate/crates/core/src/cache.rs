//! Set-associative, write-back, write-allocate LRU data cache, plus the
//! cold-instruction analysis used for the instruction-fetch feature.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::ExecutionTrace;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CacheError {
    #[error("invalid cache geometry: {0}")]
    InvalidConfig(String),
}

/// Cache geometry. Write-back and LRU replacement are fixed properties of the
/// model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacheConfig {
    pub cache_size: u32,
    pub line_size: u32,
    pub associativity: u32,
}

impl Default for CacheConfig {
    /// 16 KiB, 32-byte (256-bit) lines, 2 ways.
    fn default() -> Self {
        CacheConfig {
            cache_size: 16 * 1024,
            line_size: 32,
            associativity: 2,
        }
    }
}

impl CacheConfig {
    pub fn validate(&self) -> Result<(), CacheError> {
        let CacheConfig {
            cache_size,
            line_size,
            associativity,
        } = *self;
        if line_size == 0 || !line_size.is_power_of_two() {
            return Err(CacheError::InvalidConfig(format!(
                "line size {line_size} is not a power of two"
            )));
        }
        if associativity == 0 {
            return Err(CacheError::InvalidConfig(
                "associativity must be positive".into(),
            ));
        }
        let way_bytes = line_size as u64 * associativity as u64;
        if cache_size == 0 || !(cache_size as u64).is_multiple_of(way_bytes) {
            return Err(CacheError::InvalidConfig(format!(
                "cache size {cache_size} is not a multiple of line size x associativity ({way_bytes})"
            )));
        }
        Ok(())
    }

    pub fn set_count(&self) -> u32 {
        self.cache_size / (self.line_size * self.associativity)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessKind {
    Load,
    Store,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessOutcome {
    pub hit: bool,
    /// A dirty victim was written back to make room.
    pub evicted_dirty: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Line {
    tag: u32,
    dirty: bool,
}

#[derive(Debug, Clone)]
pub struct CacheModel {
    cfg: CacheConfig,
    /// Each set keeps its lines most-recently-used first.
    sets: Vec<Vec<Line>>,
}

impl CacheModel {
    pub fn new(cfg: CacheConfig) -> Result<Self, CacheError> {
        cfg.validate()?;
        let ways = cfg.associativity as usize;
        Ok(CacheModel {
            cfg,
            sets: (0..cfg.set_count())
                .map(|_| Vec::with_capacity(ways))
                .collect(),
        })
    }

    pub fn config(&self) -> &CacheConfig {
        &self.cfg
    }

    pub fn set_count(&self) -> usize {
        self.sets.len()
    }

    /// Set index and tag of an address.
    pub fn locate(&self, addr: u32) -> (usize, u32) {
        let line = addr / self.cfg.line_size;
        let sets = self.sets.len() as u32;
        ((line % sets) as usize, line / sets)
    }

    pub fn access(&mut self, addr: u32, kind: AccessKind) -> AccessOutcome {
        let (set_idx, tag) = self.locate(addr);
        let ways = self.cfg.associativity as usize;
        let set = &mut self.sets[set_idx];
        let store = kind == AccessKind::Store;

        if let Some(pos) = set.iter().position(|l| l.tag == tag) {
            let mut line = set.remove(pos);
            line.dirty |= store;
            set.insert(0, line);
            return AccessOutcome {
                hit: true,
                evicted_dirty: false,
            };
        }

        let evicted_dirty = if set.len() == ways {
            set.pop().is_some_and(|victim| victim.dirty)
        } else {
            false
        };
        set.insert(0, Line { tag, dirty: store });
        AccessOutcome {
            hit: false,
            evicted_dirty,
        }
    }

    /// Empties every set, returning the model to its cold state.
    pub fn reset(&mut self) {
        self.sets.iter_mut().for_each(Vec::clear);
    }

    /// Tags resident in `set`, most recent first, with their dirty bits.
    pub fn resident(&self, set: usize) -> Vec<(u32, bool)> {
        self.sets[set].iter().map(|l| (l.tag, l.dirty)).collect()
    }
}

/// Records which static instructions have been fetched at least once. Every
/// instruction starts cold and, once fetched, is never evicted.
#[derive(Debug, Clone, Default)]
pub struct ColdInstructionSet {
    seen: Vec<bool>,
    count: u64,
}

impl ColdInstructionSet {
    pub fn with_capacity(instructions: usize) -> Self {
        ColdInstructionSet {
            seen: vec![false; instructions],
            count: 0,
        }
    }

    pub fn fetch(&mut self, static_id: u32) {
        let i = static_id as usize;
        if i >= self.seen.len() {
            self.seen.resize(i + 1, false);
        }
        if !self.seen[i] {
            self.seen[i] = true;
            self.count += 1;
        }
    }

    pub fn cold_misses(&self) -> u64 {
        self.count
    }
}

/// Number of distinct static instructions executed during the traced run.
pub fn cold_instruction_count(trace: &ExecutionTrace) -> u64 {
    trace.inst_miss
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cache(size: u32, line: u32, ways: u32) -> CacheModel {
        CacheModel::new(CacheConfig {
            cache_size: size,
            line_size: line,
            associativity: ways,
        })
        .unwrap()
    }

    #[test]
    fn default_geometry() {
        let c = CacheModel::new(CacheConfig::default()).unwrap();
        assert_eq!(c.set_count(), 256);
        assert!((0..256).all(|s| c.resident(s).is_empty()));
    }

    #[test]
    fn degenerate_single_set() {
        let c = cache(64, 32, 2);
        assert_eq!(c.set_count(), 1);
    }

    #[test]
    fn invalid_geometry() {
        let bad = |s, l, w| {
            CacheConfig {
                cache_size: s,
                line_size: l,
                associativity: w,
            }
            .validate()
            .is_err()
        };
        assert!(bad(16384, 33, 2));
        assert!(bad(100, 32, 2));
        assert!(bad(16384, 32, 0));
        assert!(bad(0, 32, 2));
    }

    #[test]
    fn same_line_hits_then_lru_eviction() {
        use AccessKind::Load;
        let mut c = CacheModel::new(CacheConfig::default()).unwrap();
        let mut hits = 0;
        let mut misses = 0;
        let mut tally = |o: AccessOutcome| if o.hit { hits += 1 } else { misses += 1 };
        let o = c.access(0, Load);
        assert!(!o.hit);
        tally(o);
        let o = c.access(8, Load);
        assert!(o.hit);
        tally(o);
        // 8192 and 16384 map to set 0 with new tags.
        let o = c.access(8192, Load);
        assert!(!o.hit);
        tally(o);
        let o = c.access(16384, Load);
        assert!(!o.hit);
        tally(o);
        assert_eq!(c.resident(0), vec![(2, false), (1, false)]);
        let o = c.access(0, Load);
        assert!(!o.hit);
        tally(o);
        assert_eq!((hits, misses), (1, 4));
    }

    #[test]
    fn store_allocates_dirty_line() {
        let mut c = CacheModel::new(CacheConfig::default()).unwrap();
        let o = c.access(64, AccessKind::Store);
        assert_eq!(
            o,
            AccessOutcome {
                hit: false,
                evicted_dirty: false
            }
        );
        let (set, tag) = c.locate(64);
        assert_eq!(c.resident(set), vec![(tag, true)]);
        assert!(c.access(64, AccessKind::Store).hit);
    }

    #[test]
    fn dirty_victim_is_reported() {
        let mut c = cache(64, 32, 2);
        c.access(0, AccessKind::Store);
        c.access(32, AccessKind::Load);
        let o = c.access(64, AccessKind::Load);
        assert_eq!(
            o,
            AccessOutcome {
                hit: false,
                evicted_dirty: true
            }
        );
        let o = c.access(96, AccessKind::Load);
        assert!(!o.evicted_dirty);
    }

    #[test]
    fn reset_behaviour() {
        let mut c = CacheModel::new(CacheConfig::default()).unwrap();
        let fresh = c.clone();
        c.reset();
        assert_eq!(format!("{:?}", c.sets), format!("{:?}", fresh.sets));
        for a in [0u32, 4096, 77, 123456] {
            c.access(a, AccessKind::Store);
        }
        c.reset();
        assert!(!c.access(77, AccessKind::Load).hit);
        c.reset();
        assert!(!c.access(77, AccessKind::Load).hit);
    }

    #[test]
    fn cold_set_counts_distinct() {
        let mut s = ColdInstructionSet::with_capacity(4);
        for id in [0, 1, 1, 3, 0, 9] {
            s.fetch(id);
        }
        assert_eq!(s.cold_misses(), 4);
    }

    proptest! {
        #[test]
        fn rereading_mru_always_hits(addrs in proptest::collection::vec(0u32..65536, 1..200)) {
            let mut c = CacheModel::new(CacheConfig::default()).unwrap();
            for a in addrs {
                c.access(a, AccessKind::Load);
                prop_assert!(c.access(a, AccessKind::Load).hit);
            }
        }

        #[test]
        fn same_line_same_outcome(a in 0u32..65536, ops in proptest::collection::vec((0u32..65536, any::<bool>()), 0..100)) {
            let mut c = CacheModel::new(CacheConfig::default()).unwrap();
            for (addr, store) in ops {
                c.access(addr, if store { AccessKind::Store } else { AccessKind::Load });
            }
            let neighbour = (a / 32) * 32 + (a.wrapping_mul(7) % 32);
            prop_assert_eq!(c.locate(a), c.locate(neighbour));
            c.access(a, AccessKind::Load);
            prop_assert!(c.access(neighbour, AccessKind::Load).hit);
        }

        #[test]
        fn set_capacity_and_dirty_bits(ops in proptest::collection::vec((0u32..16384, any::<bool>()), 0..400)) {
            let mut c = cache(1024, 32, 4);
            // Tracks, per resident line, whether a store touched it since install.
            let mut stored: std::collections::HashMap<(usize, u32), bool> = Default::default();
            for (addr, store) in ops {
                let key = c.locate(addr);
                let before: Vec<u32> = c.resident(key.0).iter().map(|r| r.0).collect();
                let o = c.access(addr, if store { AccessKind::Store } else { AccessKind::Load });
                prop_assert!(!(o.hit && o.evicted_dirty));
                if !o.hit {
                    stored.insert(key, store);
                    let after: Vec<u32> = c.resident(key.0).iter().map(|r| r.0).collect();
                    for t in before.iter().filter(|t| !after.contains(t)) {
                        stored.remove(&(key.0, *t));
                    }
                } else if store {
                    stored.insert(key, true);
                }
                for s in 0..c.set_count() {
                    let lines = c.resident(s);
                    prop_assert!(lines.len() <= 4);
                    let mut tags: Vec<_> = lines.iter().map(|l| l.0).collect();
                    tags.sort_unstable();
                    tags.dedup();
                    prop_assert_eq!(tags.len(), lines.len());
                    for (tag, dirty) in lines {
                        prop_assert_eq!(dirty, stored[&(s, tag)]);
                    }
                }
            }
        }
    }
}
