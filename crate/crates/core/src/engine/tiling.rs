//! Output-stationary walk over scratchpad tiles and K chunks.

/// One K chunk of one output tile.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WorkItem {
    pub mi: u32,
    pub ni: u32,
    pub m0: u32,
    pub n0: u32,
    pub m_tile: u32,
    pub n_tile: u32,
    pub k0: u32,
    pub k_chunk: u32,
    /// First chunk of its tile: the accumulators are (re)initialised.
    pub first: bool,
    /// Last chunk of its tile: the tile is written back afterwards.
    pub last: bool,
}

/// Row-major over `(mi, ni)` tiles, K chunks innermost so the accumulators
/// of a tile stay resident until its last chunk.
#[derive(Debug, Clone)]
pub struct TileLoop {
    m: u32,
    n: u32,
    k: u32,
    m_scp: u32,
    n_scp: u32,
    k_step: u32,
    mi: u32,
    ni: u32,
    k0: u32,
    done: bool,
}

impl TileLoop {
    pub fn new(m: u32, n: u32, k: u32, m_scp: u32, n_scp: u32, k_step: u32) -> Self {
        TileLoop {
            m,
            n,
            k,
            m_scp: m_scp.max(1),
            n_scp: n_scp.max(1),
            k_step: k_step.max(1),
            mi: 0,
            ni: 0,
            k0: 0,
            done: m == 0 || n == 0 || k == 0,
        }
    }

    pub fn tiles_m(&self) -> u32 {
        self.m.div_ceil(self.m_scp)
    }

    pub fn tiles_n(&self) -> u32 {
        self.n.div_ceil(self.n_scp)
    }

    pub fn chunks(&self) -> u32 {
        self.k.div_ceil(self.k_step)
    }
}

impl Iterator for TileLoop {
    type Item = WorkItem;

    fn next(&mut self) -> Option<WorkItem> {
        if self.done {
            return None;
        }
        let m0 = self.mi * self.m_scp;
        let n0 = self.ni * self.n_scp;
        let k_chunk = self.k_step.min(self.k - self.k0);
        let item = WorkItem {
            mi: self.mi,
            ni: self.ni,
            m0,
            n0,
            m_tile: self.m_scp.min(self.m - m0),
            n_tile: self.n_scp.min(self.n - n0),
            k0: self.k0,
            k_chunk,
            first: self.k0 == 0,
            last: self.k0 + k_chunk == self.k,
        };
        if item.last {
            self.k0 = 0;
            self.ni += 1;
            if self.ni == self.tiles_n() {
                self.ni = 0;
                self.mi += 1;
                self.done = self.mi == self.tiles_m();
            }
        } else {
            self.k0 += k_chunk;
        }
        Some(item)
    }
}
