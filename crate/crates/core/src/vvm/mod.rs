//! Streaming vector virtual machine.
//!
//! A [`MachineState`] executes [`Instruction`]s one at a time against a sparse
//! flat memory and an L1/L2 cache model, producing one [`TraceEvent`] per
//! executed instruction. Vector instructions operate on the first
//! `active_vl` lanes only; lanes at or beyond `active_vl` are never touched.

mod cache;
mod memory;

use std::collections::HashSet;
use std::io;

use thiserror::Error;

pub use cache::{Cache, CacheState};
pub use memory::{BadAddress, SparseMemory, DEFAULT_MEMORY_BYTES};

use crate::costmodel::{instr_cycles, CostModelConfig, InstrContext};
use crate::isa::{InstrClass, Instruction, MemMode, Opcode, Operand, Reg, NUM_REGS};

#[derive(Debug, Error)]
pub enum VmError {
    #[error("memory fault at {addr:#x} (instruction {seq})")]
    MemoryFault { addr: u64, seq: u64 },
    #[error("invalid instruction {seq}: {reason}")]
    InvalidInstruction { seq: u64, reason: String },
    #[error("trace sink failed: {0}")]
    Sink(#[from] io::Error),
}

/// One executed instruction as seen by the trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceEvent {
    pub seq: u64,
    pub phase: u8,
    pub opcode: Opcode,
    pub class: InstrClass,
    /// Effective vector length; the granted length for `vsetvl`, 0 for scalar.
    pub vl: u16,
    pub cycles: u32,
    pub l1_misses: u16,
    pub l2_misses: u16,
}

/// Consumer of trace events. Implementations receive events from a single
/// producer, in program order.
pub trait TraceSink {
    fn accept(&mut self, event: &TraceEvent) -> io::Result<()>;
}

impl TraceSink for Vec<TraceEvent> {
    fn accept(&mut self, event: &TraceEvent) -> io::Result<()> {
        self.push(*event);
        Ok(())
    }
}

impl<S: TraceSink + ?Sized> TraceSink for &mut S {
    fn accept(&mut self, event: &TraceEvent) -> io::Result<()> {
        (**self).accept(event)
    }
}

impl<A: TraceSink, B: TraceSink> TraceSink for (A, B) {
    fn accept(&mut self, event: &TraceEvent) -> io::Result<()> {
        self.0.accept(event)?;
        self.1.accept(event)
    }
}

/// Discards every event.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullSink;

impl TraceSink for NullSink {
    fn accept(&mut self, _: &TraceEvent) -> io::Result<()> {
        Ok(())
    }
}

/// Adapts a closure into a sink.
pub struct FnSink<F>(pub F);

impl<F: FnMut(&TraceEvent)> TraceSink for FnSink<F> {
    fn accept(&mut self, event: &TraceEvent) -> io::Result<()> {
        (self.0)(event);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunSummary {
    pub total_cycles: u64,
    pub total_instructions: u64,
}

#[derive(Debug, Clone)]
pub struct MachineState {
    x: [u64; NUM_REGS as usize],
    f: [f64; NUM_REGS as usize],
    /// 32 registers of `vl_max` lanes each, stored as raw 64-bit patterns.
    v: Vec<u64>,
    active_vl: usize,
    vl_max: usize,
    memory: SparseMemory,
    cache: CacheState,
    seq: u64,
    /// Instructions still to be skipped by a taken forward branch.
    pending_skip: u64,
    lines: Vec<u64>,
    seen: HashSet<u64>,
    addrs: Vec<u64>,
}

impl MachineState {
    pub fn new(cfg: &CostModelConfig) -> Self {
        Self::with_memory(cfg, DEFAULT_MEMORY_BYTES)
    }

    pub fn with_memory(cfg: &CostModelConfig, memory_bytes: u64) -> Self {
        MachineState {
            x: [0; NUM_REGS as usize],
            f: [0.0; NUM_REGS as usize],
            v: vec![0; NUM_REGS as usize * cfg.vl_max],
            active_vl: 0,
            vl_max: cfg.vl_max,
            memory: SparseMemory::new(memory_bytes),
            cache: CacheState::new(cfg.l1, cfg.l2),
            seq: 0,
            pending_skip: 0,
            lines: Vec::new(),
            seen: HashSet::new(),
            addrs: Vec::new(),
        }
    }

    pub fn vl_max(&self) -> usize {
        self.vl_max
    }

    pub fn active_vl(&self) -> usize {
        self.active_vl
    }

    /// Grants `min(requested, vl_max)` and makes it the active length.
    pub fn set_vl(&mut self, requested: u64) -> usize {
        let granted = requested.min(self.vl_max as u64) as usize;
        self.active_vl = granted;
        granted
    }

    pub fn x(&self, i: u8) -> u64 {
        if i == 0 {
            0
        } else {
            self.x[i as usize]
        }
    }

    pub fn set_x(&mut self, i: u8, value: u64) {
        if i != 0 {
            self.x[i as usize] = value;
        }
    }

    pub fn f(&self, i: u8) -> f64 {
        self.f[i as usize]
    }

    pub fn set_f(&mut self, i: u8, value: f64) {
        self.f[i as usize] = value;
    }

    /// All `vl_max` lanes of a vector register as raw bits.
    pub fn vreg(&self, i: u8) -> &[u64] {
        let b = i as usize * self.vl_max;
        &self.v[b..b + self.vl_max]
    }

    pub fn vreg_f64(&self, i: u8) -> Vec<f64> {
        self.vreg(i).iter().map(|b| f64::from_bits(*b)).collect()
    }

    pub fn set_vreg_f64(&mut self, i: u8, values: &[f64]) {
        let b = i as usize * self.vl_max;
        for (lane, v) in values.iter().take(self.vl_max).enumerate() {
            self.v[b + lane] = v.to_bits();
        }
    }

    pub fn memory(&self) -> &SparseMemory {
        &self.memory
    }

    pub fn memory_mut(&mut self) -> &mut SparseMemory {
        &mut self.memory
    }

    pub fn cache(&self) -> &CacheState {
        &self.cache
    }

    /// Number of instructions executed so far.
    pub fn executed(&self) -> u64 {
        self.seq
    }

    fn src_bits(&self, op: Operand, lane: usize) -> u64 {
        match op {
            Operand::Reg(Reg::V(r)) => self.v[r as usize * self.vl_max + lane],
            Operand::Reg(Reg::F(r)) => self.f[r as usize].to_bits(),
            Operand::Reg(Reg::X(r)) => self.x(r),
            Operand::Imm(v) => v as u64,
        }
    }

    fn src_f64(&self, op: Operand, lane: usize) -> f64 {
        f64::from_bits(self.src_bits(op, lane))
    }

    fn scalar_int(&self, op: Operand) -> u64 {
        match op {
            Operand::Reg(Reg::X(r)) => self.x(r),
            Operand::Imm(v) => v as u64,
            Operand::Reg(Reg::F(r)) => self.f[r as usize].to_bits(),
            Operand::Reg(Reg::V(_)) => 0,
        }
    }

    fn reg_x(&self, op: Operand) -> u64 {
        match op {
            Operand::Reg(Reg::X(r)) => self.x(r),
            _ => 0,
        }
    }

    fn fault(&self, addr: u64) -> VmError {
        VmError::MemoryFault { addr, seq: self.seq }
    }

    fn invalid(&self, reason: impl Into<String>) -> VmError {
        VmError::InvalidInstruction {
            seq: self.seq,
            reason: reason.into(),
        }
    }

    /// Runs every address in `self.addrs` through the cache once per distinct
    /// line, in first-touch order. Returns `(lines, l1 misses, l2 misses)`.
    fn touch_lines(&mut self) -> (u32, u32, u32) {
        let line_size = self.cache.line_size();
        self.lines.clear();
        self.seen.clear();
        for &a in &self.addrs {
            let line = a / line_size;
            if self.lines.last() == Some(&line) {
                continue;
            }
            if self.seen.insert(line) {
                self.lines.push(line);
            }
        }
        let (mut l1, mut l2) = (0, 0);
        for &line in &self.lines {
            let (m1, m2) = self.cache.access_line(line);
            l1 += m1 as u32;
            l2 += m2 as u32;
        }
        (self.lines.len() as u32, l1, l2)
    }

    fn check_addrs(&self) -> Result<(), VmError> {
        for &a in &self.addrs {
            self.memory.check(a).map_err(|BadAddress(a)| self.fault(a))?;
        }
        Ok(())
    }

    /// Executes one instruction and returns its trace event.
    pub fn step(&mut self, instr: &Instruction, cost: &CostModelConfig) -> Result<TraceEvent, VmError> {
        use Opcode::*;
        let class = instr.class();
        let mut event_vl = 0usize;
        let mut lines = 0;
        let mut l1m = 0;
        let mut l2m = 0;
        let s = &instr.srcs;
        if s.len() != instr.opcode.source_count() {
            return Err(self.invalid("wrong operand count"));
        }

        match instr.opcode {
            Add | Mul => {
                let (a, b) = (self.reg_x(s[0]), self.scalar_int(s[1]));
                let r = if instr.opcode == Add {
                    a.wrapping_add(b)
                } else {
                    a.wrapping_mul(b)
                };
                self.write_x(instr.dest, r)?;
            }
            Load | Store => {
                let addr = self.reg_x(s[0]).wrapping_add(self.scalar_int(s[1]));
                self.addrs.clear();
                self.addrs.push(addr);
                self.check_addrs()?;
                if instr.opcode == Load {
                    let word = self.memory.read(addr).map_err(|_| self.fault(addr))?;
                    match instr.dest {
                        Reg::X(d) => self.set_x(d, word),
                        Reg::F(d) => self.f[d as usize] = f64::from_bits(word),
                        Reg::V(_) => return Err(self.invalid("scalar load into vector register")),
                    }
                } else {
                    let word = self.src_bits(Operand::Reg(instr.dest), 0);
                    self.memory.write(addr, word).map_err(|_| self.fault(addr))?;
                }
                (lines, l1m, l2m) = self.touch_lines();
            }
            Branch => {
                let a = self.src_bits(Operand::Reg(instr.dest), 0);
                let b = self.scalar_int(s[0]);
                let dist = match s[1] {
                    Operand::Imm(d) if d >= 0 => d as u64,
                    _ => return Err(self.invalid("branch distance must be a non-negative immediate")),
                };
                if a == b {
                    self.pending_skip = dist;
                }
            }
            Cmp => {
                let lt = match (s[0], s[1]) {
                    (Operand::Reg(Reg::F(_)), Operand::Reg(Reg::F(_))) => self.src_f64(s[0], 0) < self.src_f64(s[1], 0),
                    _ => (self.scalar_int(s[0]) as i64) < (self.scalar_int(s[1]) as i64),
                };
                self.write_x(instr.dest, lt as u64)?;
            }
            Fadd | Fmul | Fdiv | FmaddUnfused => {
                let a = self.src_f64(s[0], 0);
                let b = self.src_f64(s[1], 0);
                let r = match instr.opcode {
                    Fadd => a + b,
                    Fmul => a * b,
                    Fdiv => a / b,
                    _ => unfused_macc(a, b, self.src_f64(s[2], 0)),
                };
                match instr.dest {
                    Reg::F(d) => self.f[d as usize] = r,
                    _ => return Err(self.invalid("FP result needs an f register")),
                }
            }
            Vsetvl => {
                let requested = self.scalar_int(s[0]) as i64;
                let granted = self.set_vl(requested.max(0) as u64);
                self.write_x(instr.dest, granted as u64)?;
                event_vl = granted;
            }
            Vfadd | Vfsub | Vfmul | Vfdiv | Vfmacc => {
                let d = self.vdest(instr.dest)?;
                event_vl = self.active_vl;
                let base = d as usize * self.vl_max;
                for lane in 0..self.active_vl {
                    let a = self.src_f64(s[0], lane);
                    let b = self.src_f64(s[1], lane);
                    let r = match instr.opcode {
                        Vfadd => a + b,
                        Vfsub => a - b,
                        Vfmul => a * b,
                        Vfdiv => a / b,
                        _ => unfused_macc(a, b, self.src_f64(s[2], lane)),
                    };
                    self.v[base + lane] = r.to_bits();
                }
            }
            VloadUnit | VloadStrided | VloadIndexed | VstoreUnit | VstoreStrided | VstoreIndexed => {
                let reg = self.vdest(instr.dest)?;
                event_vl = self.active_vl;
                if self.active_vl > 0 {
                    let base = self.reg_x(s[0]);
                    self.addrs.clear();
                    for lane in 0..self.active_vl {
                        let addr = match instr.mem_mode() {
                            MemMode::UnitStride => base.wrapping_add(8 * lane as u64),
                            MemMode::Strided(stride) => base.wrapping_add((stride as u64).wrapping_mul(lane as u64)),
                            MemMode::Indexed(ix) => base.wrapping_add(self.v[ix as usize * self.vl_max + lane]),
                            MemMode::None => return Err(self.invalid("missing memory operand")),
                        };
                        self.addrs.push(addr);
                    }
                    self.check_addrs()?;
                    let vb = reg as usize * self.vl_max;
                    if instr.opcode.is_store() {
                        for lane in 0..self.active_vl {
                            let a = self.addrs[lane];
                            self.memory.write(a, self.v[vb + lane]).map_err(|_| self.fault(a))?;
                        }
                    } else {
                        for lane in 0..self.active_vl {
                            let a = self.addrs[lane];
                            self.v[vb + lane] = self.memory.read(a).map_err(|_| self.fault(a))?;
                        }
                    }
                    (lines, l1m, l2m) = self.touch_lines();
                }
            }
            Vmv | Vbroadcast => {
                let d = self.vdest(instr.dest)?;
                event_vl = self.active_vl;
                let base = d as usize * self.vl_max;
                for lane in 0..self.active_vl {
                    self.v[base + lane] = self.src_bits(s[0], lane);
                }
            }
            Vslide => {
                let d = self.vdest(instr.dest)?;
                let src = match s[0] {
                    Operand::Reg(Reg::V(r)) => r as usize * self.vl_max,
                    _ => return Err(self.invalid("vslide source must be a vector register")),
                };
                let k = match s[1] {
                    Operand::Imm(k) if k >= 0 => k as usize,
                    _ => return Err(self.invalid("vslide offset must be a non-negative immediate")),
                };
                event_vl = self.active_vl;
                let base = d as usize * self.vl_max;
                for lane in 0..self.active_vl {
                    self.v[base + lane] = if lane + k < self.active_vl {
                        self.v[src + lane + k]
                    } else {
                        0
                    };
                }
            }
        }

        let ctx = InstrContext {
            opcode: instr.opcode,
            mem_mode: instr.mem_mode(),
            vl: if class == InstrClass::Scalar { 0 } else { event_vl },
            line_count: lines,
            l1_misses: l1m,
            l2_misses: l2m,
        };
        let event = TraceEvent {
            seq: self.seq,
            phase: instr.phase,
            opcode: instr.opcode,
            class,
            vl: ctx.vl as u16,
            cycles: instr_cycles(&ctx, cost),
            l1_misses: l1m.min(u16::MAX as u32) as u16,
            l2_misses: l2m.min(u16::MAX as u32) as u16,
        };
        self.seq += 1;
        Ok(event)
    }

    fn write_x(&mut self, dest: Reg, value: u64) -> Result<(), VmError> {
        match dest {
            Reg::X(d) => {
                self.set_x(d, value);
                Ok(())
            }
            _ => Err(self.invalid("integer result needs an x register")),
        }
    }

    fn vdest(&self, dest: Reg) -> Result<u8, VmError> {
        match dest {
            Reg::V(d) => Ok(d),
            _ => Err(self.invalid("vector operand expected")),
        }
    }
}

/// `round(round(a * b) + c)`: multiply-accumulate with two roundings.
#[inline]
pub fn unfused_macc(a: f64, b: f64, c: f64) -> f64 {
    let p = a * b;
    p + c
}

/// Executes one instruction; see [`MachineState::step`].
pub fn step(state: &mut MachineState, instr: &Instruction, cost: &CostModelConfig) -> Result<TraceEvent, VmError> {
    state.step(instr, cost)
}

/// Executes a stream of instructions without materializing it, delivering
/// events to `sink` in program order. Instructions covered by a taken forward
/// branch are consumed and discarded.
pub fn run<I, S>(
    program: I,
    state: &mut MachineState,
    cost: &CostModelConfig,
    mut sink: S,
) -> Result<RunSummary, VmError>
where
    I: IntoIterator<Item = Instruction>,
    S: TraceSink,
{
    let mut summary = RunSummary::default();
    for instr in program {
        if state.pending_skip > 0 {
            state.pending_skip -= 1;
            continue;
        }
        let ev = state.step(&instr, cost)?;
        summary.total_cycles += ev.cycles as u64;
        summary.total_instructions += 1;
        sink.accept(&ev)?;
    }
    state.pending_skip = 0;
    Ok(summary)
}
