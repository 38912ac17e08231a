//! Line-ownership cache model: one owner per line, bounded LRU residency per core.

use std::collections::{BTreeMap, VecDeque};

/// A cache line: resource index and line number within it.
pub type Line = (usize, usize);

#[derive(Debug, Clone, Default)]
pub struct CacheState {
    capacity: usize,
    owner: BTreeMap<Line, usize>,
    /// Most recently used at the back.
    resident: BTreeMap<usize, VecDeque<Line>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    Hit,
    Miss,
}

impl CacheState {
    pub fn new(capacity_lines: usize) -> Self {
        CacheState {
            capacity: capacity_lines,
            ..Default::default()
        }
    }

    pub fn owner(&self, line: Line) -> Option<usize> {
        self.owner.get(&line).copied()
    }

    pub fn is_resident(&self, core: usize, line: Line) -> bool {
        self.resident
            .get(&core)
            .is_some_and(|lru| lru.contains(&line))
    }

    pub fn resident_count(&self, core: usize) -> usize {
        self.resident.get(&core).map_or(0, VecDeque::len)
    }

    /// Writes `line` from `core`: a hit only if `core` owns it and still holds
    /// it. Afterwards `core` owns the line, other copies are invalidated and
    /// the line is most recently used.
    pub fn access(&mut self, core: usize, line: Line) -> Access {
        let hit = self.owner(line) == Some(core) && self.is_resident(core, line);
        if let Some(prev) = self.owner.insert(line, core) {
            if prev != core {
                if let Some(lru) = self.resident.get_mut(&prev) {
                    lru.retain(|l| *l != line);
                }
            }
        }
        let lru = self.resident.entry(core).or_default();
        lru.retain(|l| *l != line);
        lru.push_back(line);
        while lru.len() > self.capacity {
            lru.pop_front();
        }
        if hit {
            Access::Hit
        } else {
            Access::Miss
        }
    }

    /// Places `line` in `core`'s cache as owner without counting an access.
    pub fn preload(&mut self, core: usize, line: Line) {
        self.access(core, line);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_touch_misses_then_hits() {
        let mut c = CacheState::new(4);
        assert_eq!(c.access(0, (0, 0)), Access::Miss);
        assert_eq!(c.access(0, (0, 0)), Access::Hit);
    }

    #[test]
    fn ownership_transfer_invalidates() {
        let mut c = CacheState::new(4);
        c.access(0, (0, 0));
        assert_eq!(c.access(1, (0, 0)), Access::Miss);
        assert!(!c.is_resident(0, (0, 0)));
        assert_eq!(c.access(0, (0, 0)), Access::Miss);
        assert_eq!(c.owner((0, 0)), Some(0));
    }

    #[test]
    fn lru_eviction_bounded() {
        let mut c = CacheState::new(2);
        for l in 0..3 {
            c.access(0, (0, l));
        }
        assert_eq!(c.resident_count(0), 2);
        assert!(!c.is_resident(0, (0, 0)));
        // cyclic sweep larger than capacity always misses
        let mut c = CacheState::new(2);
        for _ in 0..3 {
            for l in 0..3 {
                assert_eq!(c.access(0, (0, l)), Access::Miss);
            }
        }
    }
}
