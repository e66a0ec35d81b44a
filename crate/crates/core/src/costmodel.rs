//! Cycle cost model for the scalar core and the 8-lane vector unit.
//!
//! Arithmetic on the vector unit advances `lanes` elements per lane-step and
//! the issue state machine works in beats of `fsm_chunk` lane-steps, so the
//! cost of one instruction is rounded up to whole beats:
//!
//! ```text
//! cycles(vl) = fsm_chunk * ceil(ceil(vl / lanes) / fsm_chunk)
//! ```
//!
//! With the defaults (8 lanes, 5-step beats) vector lengths that are
//! multiples of 40 waste no beat slots.

use crate::isa::{InstrClass, MemMode, Opcode};

/// Geometry of one cache level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheGeometry {
    pub size: usize,
    pub line: usize,
    pub ways: usize,
}

impl CacheGeometry {
    pub fn sets(&self) -> usize {
        (self.size / self.line / self.ways).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostModelConfig {
    pub lanes: u32,
    pub fsm_chunk: u32,
    /// Cycles per scalar opcode, indexed by opcode code. Only scalar entries
    /// are consulted.
    pub scalar_cycles: Vec<u32>,
    pub vmem_base: u32,
    pub vmem_per_elem: u32,
    pub l1_miss_penalty: u32,
    pub l2_miss_penalty: u32,
    pub vl_max: usize,
    pub l1: CacheGeometry,
    pub l2: CacheGeometry,
}

impl Default for CostModelConfig {
    fn default() -> Self {
        let mut scalar_cycles = vec![1; Opcode::ALL.len()];
        scalar_cycles[Opcode::Fdiv.code() as usize] = 20;
        CostModelConfig {
            lanes: 8,
            fsm_chunk: 5,
            scalar_cycles,
            vmem_base: 10,
            vmem_per_elem: 1,
            l1_miss_penalty: 10,
            l2_miss_penalty: 80,
            vl_max: 256,
            l1: CacheGeometry {
                size: 32 * 1024,
                line: 64,
                ways: 8,
            },
            l2: CacheGeometry {
                size: 1024 * 1024,
                line: 64,
                ways: 16,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid cost model: {0}")]
pub struct CostConfigError(pub String);

impl CostModelConfig {
    pub fn validate(&self) -> Result<(), CostConfigError> {
        let err = |m: &str| Err(CostConfigError(m.to_string()));
        if self.lanes == 0 {
            return err("lanes must be >= 1");
        }
        if self.fsm_chunk == 0 {
            return err("fsm_chunk must be >= 1");
        }
        if self.vl_max == 0 || self.vl_max > u16::MAX as usize {
            return err("vl_max must be in 1..=65535");
        }
        if self.scalar_cycles.len() != Opcode::ALL.len() {
            return err("scalar_cycles must have one entry per opcode");
        }
        for (name, g) in [("l1", &self.l1), ("l2", &self.l2)] {
            if g.line < 8 || !g.line.is_power_of_two() || g.ways == 0 || g.size < g.line * g.ways {
                return Err(CostConfigError(format!("bad {name} cache geometry {g:?}")));
            }
            if g.line != self.l1.line {
                return err("l1 and l2 must share a line size");
            }
        }
        Ok(())
    }

    pub fn scalar_cost(&self, op: Opcode) -> u32 {
        self.scalar_cycles[op.code() as usize]
    }

    pub fn set_scalar_cost(&mut self, op: Opcode, cycles: u32) {
        self.scalar_cycles[op.code() as usize] = cycles;
    }

    fn penalties(&self, l1m: u32, l2m: u32) -> u32 {
        l1m * self.l1_miss_penalty + l2m * self.l2_miss_penalty
    }
}

/// Cycles of one vector arithmetic instruction of length `vl`.
pub fn arith_cycles(vl: usize, cfg: &CostModelConfig) -> u32 {
    if vl == 0 {
        return 1;
    }
    let lanes = cfg.lanes as usize;
    let chunk = cfg.fsm_chunk as usize;
    let steps = vl.div_ceil(lanes);
    (chunk * steps.div_ceil(chunk)) as u32
}

/// Cycles of one vector memory instruction.
///
/// Unit-stride transfers move one cache line per cycle; strided and indexed
/// accesses pay per element.
pub fn mem_cycles(mode: MemMode, vl: usize, line_count: u32, l1m: u32, l2m: u32, cfg: &CostModelConfig) -> u32 {
    if vl == 0 {
        return 1;
    }
    let transfer = match mode {
        MemMode::Strided(_) | MemMode::Indexed(_) => vl as u32 * cfg.vmem_per_elem,
        MemMode::UnitStride | MemMode::None => line_count,
    };
    cfg.vmem_base + transfer + cfg.penalties(l1m, l2m)
}

/// Everything the dispatcher needs to price one executed instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InstrContext {
    pub opcode: Opcode,
    pub mem_mode: MemMode,
    /// Effective vector length (0 for scalar instructions).
    pub vl: usize,
    pub line_count: u32,
    pub l1_misses: u32,
    pub l2_misses: u32,
}

pub fn instr_cycles(ctx: &InstrContext, cfg: &CostModelConfig) -> u32 {
    let cycles = match ctx.opcode.class() {
        InstrClass::Scalar => {
            let base = cfg.scalar_cost(ctx.opcode);
            if ctx.opcode.is_memory() {
                base + cfg.penalties(ctx.l1_misses, ctx.l2_misses)
            } else {
                base
            }
        }
        InstrClass::VectorConfig => 1,
        InstrClass::VectorControlLane => arith_cycles(ctx.vl, cfg).div_ceil(cfg.fsm_chunk),
        InstrClass::VectorArithmetic => arith_cycles(ctx.vl, cfg),
        InstrClass::VectorMemory => mem_cycles(ctx.mem_mode, ctx.vl, ctx.line_count, ctx.l1_misses, ctx.l2_misses, cfg),
    };
    cycles.max(1)
}
