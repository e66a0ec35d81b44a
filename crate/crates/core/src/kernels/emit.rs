//! Instruction-stream emitters for the eight phases.
//!
//! Loops are fully expanded. Every loop iteration carries its induction
//! update and a not-taken branch so scalar overhead shows up in the counts.
//! Lowering happens one loop at a time as the stream is consumed.
//!
//! Register conventions:
//!
//! | reg | use |
//! |-----|-----|
//! | x1  | scratch lane pointer |
//! | x2  | granted vector length |
//! | x3, x4 | addresses |
//! | x5, x6 | compare results, element validity |
//! | x7  | connectivity pointer |
//! | x8  | element key pointer |
//! | x9  | material table |
//! | x10, x11 | coordinates, velocities |
//! | x12, x13 | global RHS, global matrix pointer |
//! | x14 | loop end pointer |
//! | x15 | inner loop counter |
//! | x20 | valid element counter |
//! | f1..=f7 | constants |
//! | f10.., v10.. | statement temporaries |
//! | f20.., v20.. | loaded operands |

use crate::isa::{Instruction, Opcode, Operand, Reg};

use super::layout::{Const, Layout};
use super::reference::deriv;
use super::{KernelConfig, KernelError, Variant};

pub type PhaseStream = Box<dyn Iterator<Item = Instruction> + Send>;

#[derive(Debug, Clone, Copy)]
enum Src {
    Slot(u32),
    Const(Const),
    Tmp(u8),
}

#[derive(Debug, Clone, Copy)]
enum Dst {
    Slot(u32),
    Tmp(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Mul,
    Add,
    Sub,
    Div,
    /// `a * b + c`
    Macc,
}

#[derive(Debug, Clone, Copy)]
struct Stmt {
    op: Op,
    dst: Dst,
    a: Src,
    b: Src,
    c: Option<Src>,
}

/// Statements forming the body of one loop over the element axis.
type Block = Vec<Stmt>;

fn st(op: Op, dst: Dst, a: Src, b: Src) -> Stmt {
    Stmt { op, dst, a, b, c: None }
}

fn macc(dst: Dst, a: Src, b: Src, c: Src) -> Stmt {
    Stmt {
        op: Op::Macc,
        dst,
        a,
        b,
        c: Some(c),
    }
}

use Dst::Slot as DS;
use Dst::Tmp as DT;
use Src::Const as C;
use Src::Slot as S;
use Src::Tmp as T;

const X1: Reg = Reg::X(1);
const X2: Reg = Reg::X(2);
const X3: Reg = Reg::X(3);
const X4: Reg = Reg::X(4);
const X5: Reg = Reg::X(5);
const X6: Reg = Reg::X(6);
const X7: Reg = Reg::X(7);
const X8: Reg = Reg::X(8);
const X9: Reg = Reg::X(9);
const X10: Reg = Reg::X(10);
const X11: Reg = Reg::X(11);
const X12: Reg = Reg::X(12);
const X13: Reg = Reg::X(13);
const X14: Reg = Reg::X(14);
const X15: Reg = Reg::X(15);
const X20: Reg = Reg::X(20);
const X0: Reg = Reg::X(0);

fn r(reg: Reg) -> Operand {
    Operand::Reg(reg)
}

fn imm(v: i64) -> Operand {
    Operand::Imm(v)
}

/// Appends instructions tagged with one phase.
struct Builder {
    phase: u8,
    out: Vec<Instruction>,
}

impl Builder {
    fn new(phase: u8) -> Self {
        Builder { phase, out: Vec::new() }
    }

    fn push(&mut self, op: Opcode, dest: Reg, srcs: &[Operand]) {
        let i = Instruction::new(op, dest, srcs, self.phase)
            .unwrap_or_else(|e| panic!("emitter built an invalid instruction: {e}"));
        self.out.push(i);
    }

    fn li(&mut self, d: Reg, v: u64) {
        self.push(Opcode::Add, d, &[r(X0), imm(v as i64)]);
    }

    fn addi(&mut self, d: Reg, a: Reg, v: i64) {
        self.push(Opcode::Add, d, &[r(a), imm(v)]);
    }

    fn add(&mut self, d: Reg, a: Reg, b: Reg) {
        self.push(Opcode::Add, d, &[r(a), r(b)]);
    }

    fn muli(&mut self, d: Reg, a: Reg, v: i64) {
        self.push(Opcode::Mul, d, &[r(a), imm(v)]);
    }

    fn mul(&mut self, d: Reg, a: Reg, b: Reg) {
        self.push(Opcode::Mul, d, &[r(a), r(b)]);
    }

    fn load(&mut self, d: Reg, base: Reg, off: i64) {
        self.push(Opcode::Load, d, &[r(base), imm(off)]);
    }

    fn store(&mut self, s: Reg, base: Reg, off: i64) {
        self.push(Opcode::Store, s, &[r(base), imm(off)]);
    }

    fn branch(&mut self, a: Reg, b: Reg, skip: usize) {
        self.push(Opcode::Branch, a, &[r(b), imm(skip as i64)]);
    }

    fn cmp(&mut self, d: Reg, a: Reg, b: Reg) {
        self.push(Opcode::Cmp, d, &[r(a), r(b)]);
    }

    fn vsetvl(&mut self, requested: usize) {
        self.push(Opcode::Vsetvl, X2, &[imm(requested as i64)]);
    }

    /// Increments the inner loop counter and tests it: one iteration's
    /// worth of loop control.
    fn inner_loop_step(&mut self) {
        self.addi(X15, X15, 1);
        self.branch(X15, X0, 0);
    }

    fn load_consts(&mut self, l: &Layout) {
        for c in Const::ALL {
            self.load(Reg::F(c.freg()), X0, l.const_addr(c) as i64);
        }
    }

    /// Advances the lane pointer and optional companions by the granted
    /// vector length, then closes the strip.
    fn strip_advance(&mut self, also: &[Reg]) {
        self.muli(X4, X2, 8);
        self.add(X1, X1, X4);
        for a in also {
            self.add(*a, *a, X4);
        }
        self.branch(X1, X14, 0);
    }

    fn finish(self) -> Vec<Instruction> {
        self.out
    }
}

/// Everything a phase emitter needs for one chunk. Plain data, so emitters
/// can own it inside lazily evaluated iterators.
#[derive(Debug, Clone, Copy)]
struct Ctx {
    l: Layout,
    ngauss: usize,
    semi_implicit: bool,
    variant: Variant,
    vl_max: usize,
    e0: usize,
    count: usize,
    phase: u8,
}

impl Ctx {
    fn builder(&self) -> Builder {
        Builder::new(self.phase)
    }

    fn off(&self, slot: u32) -> i64 {
        self.l.slot_off(slot)
    }

    /// Strip lengths for `count` elements.
    fn strips(&self) -> impl Iterator<Item = usize> {
        let (count, vl_max) = (self.count, self.vl_max);
        (0..count.div_ceil(vl_max)).map(move |s| count - s * vl_max)
    }

    fn lane_loop_setup(&self, b: &mut Builder) {
        b.li(X1, self.l.scratch);
        b.li(X14, self.l.scratch + 8 * self.count as u64);
    }
}

/// Emits the instruction stream of `phase` for one chunk of elements.
pub fn emit_phase(
    phase: u8,
    variant: Variant,
    cfg: &KernelConfig,
    layout: &Layout,
    chunk: usize,
    vl_max: usize,
) -> Result<PhaseStream, KernelError> {
    cfg.validate()?;
    if !(1..=8).contains(&phase) || chunk >= cfg.chunks() || vl_max == 0 {
        return Err(KernelError::Unsupported { phase, variant });
    }
    let (e0, count) = cfg.chunk(chunk);
    let ctx = Ctx {
        l: *layout,
        ngauss: cfg.ngauss,
        semi_implicit: cfg.semi_implicit,
        variant,
        vl_max,
        e0,
        count,
        phase,
    };
    Ok(match phase {
        1 => phase1(ctx),
        2 => phase2(ctx),
        8 => phase8(ctx),
        _ => {
            let blocks = match phase {
                3 => phase3_blocks(&ctx),
                4 => phase4_blocks(&ctx),
                5 => phase5_blocks(&ctx),
                6 => phase6_blocks(&ctx),
                _ => phase7_blocks(&ctx),
            };
            let mut pro = ctx.builder();
            pro.load_consts(&ctx.l);
            let vector = variant.vectorizes_compute();
            Box::new(pro.finish().into_iter().chain(blocks.into_iter().flat_map(move |blk| {
                if vector {
                    lower_vector(&ctx, &blk)
                } else {
                    lower_scalar(&ctx, &blk)
                }
            })))
        }
    })
}

fn lower_scalar(ctx: &Ctx, blk: &[Stmt]) -> Vec<Instruction> {
    let mut b = ctx.builder();
    ctx.lane_loop_setup(&mut b);
    for _ in 0..ctx.count {
        for s in blk {
            let operand = |k: u8, src: Src, b: &mut Builder| match src {
                Src::Slot(slot) => {
                    let f = Reg::F(20 + k);
                    b.load(f, X1, ctx.off(slot));
                    r(f)
                }
                Src::Const(c) => r(Reg::F(c.freg())),
                Src::Tmp(t) => r(Reg::F(10 + t)),
            };
            let a = operand(0, s.a, &mut b);
            let bb = operand(1, s.b, &mut b);
            let c = s.c.map(|c| operand(2, c, &mut b));
            let d = match s.dst {
                Dst::Slot(_) => Reg::F(30),
                Dst::Tmp(t) => Reg::F(10 + t),
            };
            match s.op {
                Op::Mul => b.push(Opcode::Fmul, d, &[a, bb]),
                Op::Add => b.push(Opcode::Fadd, d, &[a, bb]),
                Op::Div => b.push(Opcode::Fdiv, d, &[a, bb]),
                // no scalar subtract: a + (b * -1), the negation being exact
                Op::Sub => {
                    b.push(Opcode::Fmul, Reg::F(31), &[bb, r(Reg::F(Const::MinusOne.freg()))]);
                    b.push(Opcode::Fadd, d, &[a, r(Reg::F(31))]);
                }
                Op::Macc => b.push(Opcode::FmaddUnfused, d, &[a, bb, c.unwrap_or(imm(0))]),
            }
            if let Dst::Slot(slot) = s.dst {
                b.store(d, X1, ctx.off(slot));
            }
        }
        b.addi(X1, X1, 8);
        b.branch(X1, X14, 0);
    }
    b.finish()
}

fn lower_vector(ctx: &Ctx, blk: &[Stmt]) -> Vec<Instruction> {
    let mut b = ctx.builder();
    ctx.lane_loop_setup(&mut b);
    let mut remaining = ctx.count;
    for _ in ctx.strips() {
        b.vsetvl(remaining);
        for s in blk {
            let operand = |k: u8, src: Src, b: &mut Builder| match src {
                Src::Slot(slot) => {
                    let v = Reg::V(20 + k);
                    b.addi(X3, X1, ctx.off(slot));
                    b.push(Opcode::VloadUnit, v, &[r(X3)]);
                    r(v)
                }
                Src::Const(c) => r(Reg::F(c.freg())),
                Src::Tmp(t) => r(Reg::V(10 + t)),
            };
            let a = operand(0, s.a, &mut b);
            let bb = operand(1, s.b, &mut b);
            let c = s.c.map(|c| operand(2, c, &mut b));
            let d = match s.dst {
                Dst::Slot(_) => Reg::V(30),
                Dst::Tmp(t) => Reg::V(10 + t),
            };
            let op = match s.op {
                Op::Mul => Opcode::Vfmul,
                Op::Add => Opcode::Vfadd,
                Op::Sub => Opcode::Vfsub,
                Op::Div => Opcode::Vfdiv,
                Op::Macc => Opcode::Vfmacc,
            };
            match c {
                Some(c) => b.push(op, d, &[a, bb, c]),
                None => b.push(op, d, &[a, bb]),
            }
            if let Dst::Slot(slot) = s.dst {
                b.addi(X3, X1, ctx.off(slot));
                b.push(Opcode::VstoreUnit, d, &[r(X3)]);
            }
        }
        b.strip_advance(&[]);
        remaining = remaining.saturating_sub(ctx.vl_max);
    }
    b.finish()
}

fn deriv_c(j: usize, n: usize) -> Src {
    C(Const::for_value(deriv(j, n)))
}

fn shape_c(n: usize, g: usize) -> Src {
    C(if n == g { Const::ShapeA } else { Const::ShapeB })
}

/// Jacobian, cofactors, determinant and inverse.
fn phase3_blocks(ctx: &Ctx) -> Vec<Block> {
    let s = ctx.l.slots;
    let mut out = Vec::new();
    for g in 0..ctx.ngauss {
        for i in 0..3 {
            for j in 0..3 {
                let d = s.xjacm(i, j);
                out.push(vec![st(Op::Mul, DS(d), S(s.elcod(i, 0)), deriv_c(j, 0))]);
                for n in 1..4 {
                    out.push(vec![macc(DS(d), S(s.elcod(i, n)), deriv_c(j, n), S(d))]);
                }
            }
        }
        let jm = |i: usize, j: usize| S(s.xjacm(i, j));
        for rr in 0..3 {
            for c in 0..3 {
                let (r1, r2, c1, c2) = ((rr + 1) % 3, (rr + 2) % 3, (c + 1) % 3, (c + 2) % 3);
                out.push(vec![
                    st(Op::Mul, DT(0), jm(r1, c1), jm(r2, c2)),
                    st(Op::Mul, DT(1), jm(r1, c2), jm(r2, c1)),
                    st(Op::Sub, DS(s.cof(rr, c)), T(0), T(1)),
                ]);
            }
        }
        let det = s.gpdet + g as u32;
        out.push(vec![
            st(Op::Mul, DT(0), jm(0, 0), S(s.cof(0, 0))),
            macc(DT(1), jm(0, 1), S(s.cof(0, 1)), T(0)),
            macc(DS(det), jm(0, 2), S(s.cof(0, 2)), T(1)),
        ]);
        for i in 0..3 {
            for j in 0..3 {
                out.push(vec![st(Op::Div, DS(s.xjaci(i, j, g)), S(s.cof(j, i)), S(det))]);
            }
        }
    }
    out
}

/// Cartesian derivatives.
fn phase4_blocks(ctx: &Ctx) -> Vec<Block> {
    let s = ctx.l.slots;
    let mut out = Vec::new();
    for g in 0..ctx.ngauss {
        for n in 0..4 {
            for j in 0..3 {
                let d = s.gpcar(j, n, g);
                out.push(vec![st(Op::Mul, DS(d), S(s.xjaci(0, j, g)), deriv_c(0, n))]);
                for i in 1..3 {
                    out.push(vec![macc(DS(d), S(s.xjaci(i, j, g)), deriv_c(i, n), S(d))]);
                }
            }
        }
    }
    out
}

/// Integration volumes, time-integration mass and the initial RHS.
fn phase5_blocks(ctx: &Ctx) -> Vec<Block> {
    let s = ctx.l.slots;
    let ng = ctx.ngauss as u32;
    let mut out = Vec::new();
    for g in 0..ng {
        out.push(vec![st(Op::Mul, DS(s.gpvol + g), S(s.gpdet + g), C(Const::Weight))]);
    }
    for g in 0..ng {
        out.push(vec![st(Op::Mul, DS(s.rmom + g), S(s.gpvol + g), C(Const::Dtinv))]);
    }
    if ng == 1 {
        out.push(vec![st(Op::Mul, DS(s.tmass), S(s.rmom), C(Const::One))]);
    } else {
        let mut blk = vec![st(Op::Add, DT(0), S(s.rmom), S(s.rmom + 1))];
        for g in 2..ng {
            let dst = if g + 1 == ng { DS(s.tmass) } else { DT(0) };
            blk.push(st(Op::Add, dst, T(0), S(s.rmom + g)));
        }
        if ng == 2 {
            blk.push(st(Op::Mul, DS(s.tmass), T(0), C(Const::One)));
        }
        out.push(blk);
    }
    for k in 0..12 {
        out.push(vec![st(Op::Mul, DS(s.elrhs + k), S(s.tmass), S(s.elvel + k))]);
    }
    out
}

/// Convective term.
fn phase6_blocks(ctx: &Ctx) -> Vec<Block> {
    let s = ctx.l.slots;
    let mut out = Vec::new();
    for g in 0..ctx.ngauss {
        for i in 0..3 {
            let d = s.gpvel + i as u32;
            out.push(vec![st(Op::Mul, DS(d), shape_c(0, g), S(s.elvel(i, 0)))]);
            for n in 1..4 {
                out.push(vec![macc(DS(d), shape_c(n, g), S(s.elvel(i, n)), S(d))]);
            }
        }
        for n in 0..4 {
            let d = s.conv + n as u32;
            out.push(vec![st(Op::Mul, DS(d), S(s.gpvel), S(s.gpcar(0, n, g)))]);
            for dd in 1..3 {
                out.push(vec![macc(DS(d), S(s.gpvel + dd as u32), S(s.gpcar(dd, n, g)), S(d))]);
            }
        }
        for n in 0..4 {
            for i in 0..3 {
                let e = s.elrhs(i, n);
                out.push(vec![
                    st(Op::Mul, DT(0), S(s.gpvol + g as u32), S(s.conv + n as u32)),
                    st(Op::Mul, DT(1), T(0), shape_c(n, g)),
                    macc(DS(e), T(1), S(s.gpvel + i as u32), S(e)),
                ]);
            }
        }
    }
    out
}

/// Viscous term.
fn phase7_blocks(ctx: &Ctx) -> Vec<Block> {
    let s = ctx.l.slots;
    let mut out = Vec::new();
    for g in 0..ctx.ngauss {
        let gv = S(s.gpvol + g as u32);
        for n in 0..4 {
            for m in 0..4 {
                out.push(vec![st(Op::Mul, DS(s.sv), S(s.gpcar(0, n, g)), S(s.gpcar(0, m, g)))]);
                for d in 1..3 {
                    out.push(vec![macc(DS(s.sv), S(s.gpcar(d, n, g)), S(s.gpcar(d, m, g)), S(s.sv))]);
                }
                if ctx.semi_implicit {
                    let e = s.elmat(n, m);
                    let last = if g == 0 {
                        st(Op::Mul, DS(e), T(0), S(s.sv))
                    } else {
                        macc(DS(e), T(0), S(s.sv), S(e))
                    };
                    out.push(vec![st(Op::Mul, DT(0), S(s.matprop), gv), last]);
                } else {
                    let mut blk = vec![st(Op::Mul, DT(0), S(s.matprop), gv), st(Op::Mul, DT(1), T(0), S(s.sv))];
                    for i in 0..3 {
                        let e = s.elrhs(i, n);
                        blk.push(st(Op::Mul, DT(2), T(1), S(s.elvel(i, m))));
                        blk.push(st(Op::Sub, DS(e), S(e), T(2)));
                    }
                    out.push(blk);
                }
            }
        }
    }
    out
}

/// Material table search for one element: the loop exits at the first entry
/// not below the key. Leaves the entry in f22.
fn table_search(b: &mut Builder) {
    b.load(Reg::F(21), X8, 0);
    for k in 0..16 {
        b.load(Reg::F(22), X9, 8 * k);
        b.cmp(X5, Reg::F(22), Reg::F(21));
        b.branch(X5, X0, 3 * (15 - k as usize));
    }
}

/// Scalar gather of one element's nodal values from `base` into `slot(i, n)`.
fn scalar_gather(ctx: &Ctx, b: &mut Builder, base: Reg, slot: impl Fn(usize, usize) -> u32) {
    let stride = (ctx.l.nelem * 8) as i64;
    for n in 0..4 {
        b.load(X4, X7, n as i64 * stride);
        b.muli(X4, X4, 24);
        b.add(X4, X4, base);
        for i in 0..3 {
            b.load(Reg::F(23), X4, 8 * i as i64);
            b.store(Reg::F(23), X1, ctx.off(slot(i, n)));
        }
        b.inner_loop_step();
    }
}

/// Vector gather over the element axis, node loop outermost.
fn vector_gather(ctx: Ctx, base: Reg, slot: fn(&super::Slots, usize, usize) -> u32) -> PhaseStream {
    let stride = (ctx.l.nelem * 8) as i64;
    Box::new((0..4).flat_map(move |n| {
        let mut b = ctx.builder();
        ctx.lane_loop_setup(&mut b);
        b.li(X7, ctx.l.lnods_off + 8 * ctx.e0 as u64);
        let mut remaining = ctx.count;
        for _ in ctx.strips() {
            b.vsetvl(remaining);
            b.addi(X3, X7, n as i64 * stride);
            b.push(Opcode::VloadUnit, Reg::V(1), &[r(X3)]);
            for i in 0..3 {
                b.addi(X3, base, 8 * i as i64);
                b.push(Opcode::VloadIndexed, Reg::V(2), &[r(X3), r(Reg::V(1))]);
                b.addi(X3, X1, ctx.off(slot(&ctx.l.slots, i, n)));
                b.push(Opcode::VstoreUnit, Reg::V(2), &[r(X3)]);
            }
            b.strip_advance(&[X7]);
            remaining = remaining.saturating_sub(ctx.vl_max);
        }
        b.finish()
    }))
}

/// Material lookup (work A) and velocity gather (work B).
fn phase1(ctx: Ctx) -> PhaseStream {
    let mut pro = ctx.builder();
    pro.load_consts(&ctx.l);
    pro.li(X9, ctx.l.table);
    pro.li(X11, ctx.l.veloc);
    ctx.lane_loop_setup(&mut pro);
    pro.li(X7, ctx.l.lnods + 8 * ctx.e0 as u64);
    pro.li(X8, ctx.l.keys + 8 * ctx.e0 as u64);
    let pro = pro.finish();
    let s = ctx.l.slots;
    let fission = ctx.variant.fissioned_lookup();
    let lanes = (0..ctx.count).flat_map(move |_| {
        let mut b = ctx.builder();
        table_search(&mut b);
        b.store(Reg::F(22), X1, ctx.off(s.matprop));
        if !fission {
            scalar_gather(&ctx, &mut b, X11, |i, n| s.elvel(i, n));
        }
        b.addi(X1, X1, 8);
        if !fission {
            b.addi(X7, X7, 8);
        }
        b.addi(X8, X8, 8);
        b.branch(X1, X14, 0);
        b.finish()
    });
    let stream = pro.into_iter().chain(lanes);
    if fission {
        Box::new(stream.chain(vector_gather(ctx, X11, super::Slots::elvel)))
    } else {
        Box::new(stream)
    }
}

/// Coordinate gather.
fn phase2(ctx: Ctx) -> PhaseStream {
    let mut pro = ctx.builder();
    pro.load_consts(&ctx.l);
    pro.li(X10, ctx.l.coords);
    let pro = pro.finish();
    let s = ctx.l.slots;
    if ctx.variant.interchanged_gather() {
        return Box::new(pro.into_iter().chain(vector_gather(ctx, X10, super::Slots::elcod)));
    }
    let node_vector = ctx.variant.node_vector_gather();
    let mut setup = ctx.builder();
    ctx.lane_loop_setup(&mut setup);
    let base = if node_vector { ctx.l.lnods_off } else { ctx.l.lnods };
    setup.li(X7, base + 8 * ctx.e0 as u64);
    let lanes = (0..ctx.count).flat_map(move |_| {
        let mut b = ctx.builder();
        if node_vector {
            b.vsetvl(4);
            b.push(Opcode::VloadStrided, Reg::V(1), &[r(X7), imm((ctx.l.nelem * 8) as i64)]);
            for i in 0..3 {
                b.addi(X3, X10, 8 * i as i64);
                b.push(Opcode::VloadIndexed, Reg::V(2), &[r(X3), r(Reg::V(1))]);
                b.addi(X3, X1, ctx.off(s.elcod(i, 0)));
                b.push(Opcode::VstoreStrided, Reg::V(2), &[r(X3), imm(ctx.l.slot_off(3))]);
            }
        } else {
            scalar_gather(&ctx, &mut b, X10, |i, n| s.elcod(i, n));
        }
        b.addi(X1, X1, 8);
        b.addi(X7, X7, 8);
        b.branch(X1, X14, 0);
        b.finish()
    });
    Box::new(pro.into_iter().chain(setup.finish()).chain(lanes))
}

/// Validity check and scatter into the global arrays.
fn phase8(ctx: Ctx) -> PhaseStream {
    let l = ctx.l;
    let s = l.slots;
    let mut pro = ctx.builder();
    pro.load_consts(&l);
    ctx.lane_loop_setup(&mut pro);
    pro.li(X7, l.lnods + 8 * ctx.e0 as u64);
    pro.li(X12, l.rhs);
    pro.li(X13, l.gmat + 128 * ctx.e0 as u64);
    let pro = pro.finish();
    let lanes = (0..ctx.count).flat_map(move |_| {
        let mut body = ctx.builder();
        body.addi(X20, X20, 1);
        let stride = (l.nelem * 8) as i64;
        let comp = (l.nnode * 8) as i64;
        for n in 0..4 {
            body.load(X4, X7, n as i64 * stride);
            body.muli(X4, X4, 8);
            body.add(X4, X4, X12);
            for i in 0..3 {
                body.load(Reg::F(20), X4, i as i64 * comp);
                body.load(Reg::F(21), X1, ctx.off(s.elrhs(i, n)));
                body.push(Opcode::Fadd, Reg::F(20), &[r(Reg::F(20)), r(Reg::F(21))]);
                body.store(Reg::F(20), X4, i as i64 * comp);
            }
            body.inner_loop_step();
        }
        if ctx.semi_implicit {
            for k in 0..16 {
                body.load(Reg::F(20), X1, ctx.off(s.elmat + k));
                body.store(Reg::F(20), X13, 8 * k as i64);
            }
        }
        let body = body.finish();

        let mut b = ctx.builder();
        b.li(X6, 1);
        for g in 0..ctx.ngauss {
            b.load(Reg::F(20), X1, ctx.off(s.gpdet + g as u32));
            b.cmp(X5, Reg::F(Const::Zero.freg()), Reg::F(20));
            b.mul(X6, X6, X5);
        }
        b.branch(X6, X0, body.len());
        b.out.extend(body);
        b.addi(X1, X1, 8);
        b.addi(X7, X7, 8);
        b.addi(X13, X13, 128);
        b.branch(X1, X14, 0);
        b.finish()
    });
    let mut epi = ctx.builder();
    epi.store(X20, X0, l.valid_count as i64);
    Box::new(pro.into_iter().chain(lanes).chain(epi.finish()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::InstrClass;

    fn stream(phase: u8, variant: Variant, vs: usize) -> Vec<Instruction> {
        let cfg = KernelConfig {
            vector_size: vs,
            nelem: vs * 2,
            ..Default::default()
        };
        let layout = Layout::new(&cfg, 64);
        emit_phase(phase, variant, &cfg, &layout, 0, 256).unwrap().collect()
    }

    #[test]
    fn scalar_variant_has_no_vector_instructions() {
        for p in 1..=8 {
            assert!(stream(p, Variant::Scalar, 16)
                .iter()
                .all(|i| i.class() == InstrClass::Scalar));
        }
    }

    #[test]
    fn phase8_stays_scalar_everywhere() {
        for v in Variant::ALL {
            assert!(stream(8, v, 64).iter().all(|i| i.class() == InstrClass::Scalar));
        }
    }

    #[test]
    fn phase_tags() {
        for p in 1..=8 {
            assert!(stream(p, Variant::Final, 16).iter().all(|i| i.phase == p));
        }
    }

    #[test]
    fn autovec_gathers_scalar() {
        for p in [1, 2] {
            assert!(stream(p, Variant::Autovec, 64)
                .iter()
                .all(|i| i.class() == InstrClass::Scalar));
        }
        assert!(stream(3, Variant::Autovec, 64).iter().any(|i| i.class().is_vector()));
    }

    #[test]
    fn vec2_requests_pnode() {
        let s = stream(2, Variant::Vec2, 256);
        let cfgs: Vec<_> = s.iter().filter(|i| i.opcode == Opcode::Vsetvl).collect();
        assert_eq!(cfgs.len(), 256);
        assert!(cfgs.iter().all(|i| i.srcs[0] == Operand::Imm(4)));
    }

    #[test]
    fn bad_phase() {
        let cfg = KernelConfig::default();
        let layout = Layout::new(&cfg, 64);
        assert!(matches!(
            emit_phase(9, Variant::Final, &cfg, &layout, 0, 256),
            Err(KernelError::Unsupported { phase: 9, .. })
        ));
        assert!(emit_phase(0, Variant::Final, &cfg, &layout, 0, 256).is_err());
    }
}
