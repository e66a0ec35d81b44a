//! Independent oracles shared by the integration tests.

#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::VecDeque;

use proptest::prelude::*;
use veclens_core::isa::{InstrClass, Opcode};
use veclens_core::vvm::TraceEvent;

pub fn arb_event(vl_max: u16) -> impl Strategy<Value = TraceEvent> {
    (
        0u64..(1 << 48),
        any::<u8>(),
        0..Opcode::ALL.len(),
        0..=vl_max,
        1u32..=u32::MAX,
        any::<u16>(),
        any::<u16>(),
    )
        .prop_map(move |(seq, phase, op, vl, cycles, l1, l2)| {
            let opcode = Opcode::ALL[op];
            let class = opcode.class();
            let vl = if class == InstrClass::Scalar { 0 } else { vl };
            TraceEvent {
                seq,
                phase,
                opcode,
                class,
                vl,
                cycles,
                l1_misses: l1,
                l2_misses: l2.min(l1),
            }
        })
}

/// Plain counts from one pass over the events, without `RawCounters`.
#[derive(Debug, Default, Clone, Copy, PartialEq)]
pub struct Recount {
    pub cycles: u64,
    pub vec_cycles: u64,
    pub instrs: u64,
    pub vec_instrs: u64,
    pub cfg_instrs: u64,
    pub vl_sum: u64,
    pub l1: u64,
    pub l2: u64,
}

pub fn recount<'a>(events: impl IntoIterator<Item = &'a TraceEvent>) -> Recount {
    let mut r = Recount::default();
    for ev in events {
        r.cycles += ev.cycles as u64;
        r.instrs += 1;
        r.l1 += ev.l1_misses as u64;
        r.l2 += ev.l2_misses as u64;
        match ev.class {
            InstrClass::Scalar => {}
            InstrClass::VectorConfig => r.cfg_instrs += 1,
            _ => {
                r.vec_instrs += 1;
                r.vec_cycles += ev.cycles as u64;
                r.vl_sum += ev.vl as u64;
            }
        }
    }
    r
}

/// `[M_v, A_v, C_v, AVL, E_v]`, NaN where undefined.
pub fn recount_ratios(r: &Recount, vl_max: usize) -> [f64; 5] {
    let div = |a: u64, b: u64| if b == 0 { f64::NAN } else { a as f64 / b as f64 };
    if r.instrs == 0 {
        return [f64::NAN; 5];
    }
    let avl = div(r.vl_sum, r.vec_instrs);
    [
        div(r.vec_instrs, r.instrs),
        div(r.vec_cycles, r.cycles),
        div(r.vec_cycles, r.vec_instrs),
        avl,
        avl / vl_max as f64,
    ]
}

pub fn close(a: f64, b: f64, rel: f64) -> bool {
    if a.is_nan() || b.is_nan() {
        return a.is_nan() && b.is_nan();
    }
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Fully associative per set, most recent at the back.
pub struct LruOracle {
    sets: Vec<VecDeque<u64>>,
    ways: usize,
}

impl LruOracle {
    pub fn new(size: usize, line: usize, ways: usize) -> Self {
        let n = (size / line / ways).max(1);
        LruOracle {
            sets: vec![VecDeque::new(); n],
            ways,
        }
    }

    pub fn access(&mut self, line: u64) -> bool {
        let n = self.sets.len() as u64;
        let set = &mut self.sets[(line % n) as usize];
        if let Some(pos) = set.iter().position(|l| *l == line) {
            set.remove(pos);
            set.push_back(line);
            return true;
        }
        if set.len() == self.ways {
            set.pop_front();
        }
        set.push_back(line);
        false
    }
}

/// Solves the normal equations `[1 X]^T [1 X] b = [1 X]^T y` by Gauss-Jordan
/// elimination with partial pivoting. Returns `(intercept, coefficients, r2)`.
pub fn normal_equations(y: &[f64], cols: &[Vec<f64>]) -> (f64, Vec<f64>, f64) {
    let n = y.len();
    let p = cols.len() + 1;
    let row = |i: usize, j: usize| if j == 0 { 1.0 } else { cols[j - 1][i] };
    let mut a = vec![vec![0.0f64; p + 1]; p];
    for r in 0..p {
        for c in 0..p {
            a[r][c] = (0..n).map(|i| row(i, r) * row(i, c)).sum();
        }
        a[r][p] = (0..n).map(|i| row(i, r) * y[i]).sum();
    }
    for k in 0..p {
        let piv = (k..p).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
        a.swap(k, piv);
        for r in 0..p {
            if r != k {
                let f = a[r][k] / a[k][k];
                for c in k..=p {
                    a[r][c] -= f * a[k][c];
                }
            }
        }
    }
    let b: Vec<f64> = (0..p).map(|k| a[k][p] / a[k][k]).collect();
    let mean = y.iter().sum::<f64>() / n as f64;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for i in 0..n {
        let fit: f64 = (0..p).map(|j| b[j] * row(i, j)).sum();
        ss_res += (y[i] - fit).powi(2);
        ss_tot += (y[i] - mean).powi(2);
    }
    (b[0], b[1..].to_vec(), 1.0 - ss_res / ss_tot)
}
