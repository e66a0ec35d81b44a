use crate::costmodel::CacheGeometry;

/// One set-associative cache level with true LRU replacement.
#[derive(Debug, Clone)]
pub struct Cache {
    geom: CacheGeometry,
    sets: u64,
    /// `sets * ways` line tags, `u64::MAX` meaning invalid.
    tags: Vec<u64>,
    stamps: Vec<u64>,
    clock: u64,
}

impl Cache {
    pub fn new(geom: CacheGeometry) -> Self {
        let sets = geom.sets();
        Cache {
            geom,
            sets: sets as u64,
            tags: vec![u64::MAX; sets * geom.ways],
            stamps: vec![0; sets * geom.ways],
            clock: 0,
        }
    }

    pub fn geometry(&self) -> CacheGeometry {
        self.geom
    }

    /// Looks up a line number, filling it on a miss. Returns true on hit.
    pub fn access(&mut self, line: u64) -> bool {
        self.clock += 1;
        let ways = self.geom.ways;
        let base = (line % self.sets) as usize * ways;
        let set_tags = &mut self.tags[base..base + ways];
        let set_stamps = &mut self.stamps[base..base + ways];
        if let Some(w) = set_tags.iter().position(|t| *t == line) {
            set_stamps[w] = self.clock;
            return true;
        }
        let victim = match set_tags.iter().position(|t| *t == u64::MAX) {
            Some(w) => w,
            None => set_stamps
                .iter()
                .enumerate()
                .min_by_key(|(_, s)| **s)
                .map(|(w, _)| w)
                .unwrap_or(0),
        };
        set_tags[victim] = line;
        set_stamps[victim] = self.clock;
        false
    }
}

/// L1 backed by L2. L2 is only consulted on an L1 miss, so an L2 miss always
/// implies an L1 miss. No inclusion is enforced.
#[derive(Debug, Clone)]
pub struct CacheState {
    pub l1: Cache,
    pub l2: Cache,
    m_l1: u64,
    m_l2: u64,
}

impl CacheState {
    pub fn new(l1: CacheGeometry, l2: CacheGeometry) -> Self {
        CacheState {
            l1: Cache::new(l1),
            l2: Cache::new(l2),
            m_l1: 0,
            m_l2: 0,
        }
    }

    pub fn line_size(&self) -> u64 {
        self.l1.geometry().line as u64
    }

    /// Accesses one line (by line number). Returns `(l1_miss, l2_miss)`.
    pub fn access_line(&mut self, line: u64) -> (bool, bool) {
        if self.l1.access(line) {
            return (false, false);
        }
        self.m_l1 += 1;
        let l2_miss = !self.l2.access(line);
        if l2_miss {
            self.m_l2 += 1;
        }
        (true, l2_miss)
    }

    pub fn l1_misses(&self) -> u64 {
        self.m_l1
    }

    pub fn l2_misses(&self) -> u64 {
        self.m_l2
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> CacheGeometry {
        // 2 sets x 2 ways of 64 B lines
        CacheGeometry {
            size: 256,
            line: 64,
            ways: 2,
        }
    }

    #[test]
    fn lru_evicts_least_recent() {
        let mut c = Cache::new(tiny());
        // lines 0, 2, 4 all map to set 0
        assert!(!c.access(0));
        assert!(!c.access(2));
        assert!(c.access(0));
        assert!(!c.access(4)); // evicts 2
        assert!(c.access(0));
        assert!(!c.access(2));
    }

    #[test]
    fn l2_miss_implies_l1_miss() {
        let mut h = CacheState::new(
            tiny(),
            CacheGeometry {
                size: 1024,
                line: 64,
                ways: 4,
            },
        );
        for line in [0, 2, 4, 0, 6, 8, 2, 0] {
            h.access_line(line);
        }
        assert!(h.l2_misses() <= h.l1_misses());
        assert_eq!(h.l2_misses(), 5);
    }
}
