//! Counters and derived vectorization metrics.
//!
//! | metric | definition |
//! |--------|------------|
//! | `M_v`  | `i_v / i_t` |
//! | `A_v`  | `c_v / c_t` |
//! | `C_v`  | `c_v / i_v` |
//! | `AVL`  | `sum_vl / i_v` |
//! | `E_v`  | `AVL / vl_max` |
//!
//! "Vector" means the arithmetic, memory and control-lane classes;
//! `vsetvl` counts toward `i_t` and `c_t` only.

mod ols;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;

use thiserror::Error;

pub use ols::{ols_columns, ols_regression, OlsFit};

use crate::isa::InstrClass;
use crate::vvm::TraceEvent;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("incomplete sweep, missing (size, phase) cells: {0:?}")]
    IncompleteSweep(Vec<(usize, u8)>),
    #[error("design matrix is rank deficient")]
    SingularDesign,
    #[error("response has zero variance")]
    DegenerateResponse,
    #[error("need at least {needed} observations, got {got}")]
    TooFewObservations { needed: usize, got: usize },
    #[error("dimension mismatch: {0}")]
    Shape(String),
    #[error("no cycles recorded")]
    NoCycles,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct RawCounters {
    pub c_t: u64,
    pub c_v: u64,
    pub i_t: u64,
    pub i_v: u64,
    pub i_cfg: u64,
    pub sum_vl: u64,
    pub m_l1: u64,
    pub m_l2: u64,
    /// Scalar and vector memory instructions.
    pub i_mem: u64,
    /// Instruction count per [`InstrClass`], indexed by class code.
    pub class_counts: [u64; 5],
}

impl RawCounters {
    pub fn record(&mut self, ev: &TraceEvent) {
        let cycles = ev.cycles as u64;
        self.c_t += cycles;
        self.i_t += 1;
        self.m_l1 += ev.l1_misses as u64;
        self.m_l2 += ev.l2_misses as u64;
        self.class_counts[ev.class.code() as usize] += 1;
        if ev.opcode.is_memory() {
            self.i_mem += 1;
        }
        if ev.class == InstrClass::VectorConfig {
            self.i_cfg += 1;
        } else if ev.class.is_vector() {
            self.c_v += cycles;
            self.i_v += 1;
            self.sum_vl += ev.vl as u64;
        }
    }

    pub fn merge(&mut self, other: &RawCounters) {
        self.c_t += other.c_t;
        self.c_v += other.c_v;
        self.i_t += other.i_t;
        self.i_v += other.i_v;
        self.i_cfg += other.i_cfg;
        self.sum_vl += other.sum_vl;
        self.m_l1 += other.m_l1;
        self.m_l2 += other.m_l2;
        self.i_mem += other.i_mem;
        for (a, b) in self.class_counts.iter_mut().zip(other.class_counts) {
            *a += b;
        }
    }

    pub fn merged(mut self, other: &RawCounters) -> RawCounters {
        self.merge(other);
        self
    }

    pub fn class_count(&self, class: InstrClass) -> u64 {
        self.class_counts[class.code() as usize]
    }

    /// Checks the structural invariants.
    pub fn is_consistent(&self, vl_max: usize) -> bool {
        self.c_v <= self.c_t
            && self.i_v + self.i_cfg <= self.i_t
            && self.sum_vl <= self.i_v * vl_max as u64
            && self.m_l2 <= self.m_l1
            && self.class_counts.iter().sum::<u64>() == self.i_t
    }

    /// L1 misses per thousand instructions.
    pub fn l1_mpki(&self) -> Option<f64> {
        ratio(self.m_l1 as f64 * 1000.0, self.i_t)
    }

    /// Memory instructions as a percentage of all instructions.
    pub fn mem_pct(&self) -> Option<f64> {
        ratio(self.i_mem as f64 * 100.0, self.i_t)
    }
}

fn ratio(num: f64, den: u64) -> Option<f64> {
    (den != 0).then(|| num / den as f64)
}

/// Aggregation key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Group {
    Phase(u8),
    WholeRun,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupBy {
    Phase,
    WholeRun,
}

/// Folds events into counters, one entry per group that received events.
pub fn aggregate<'a, I>(events: I, by: GroupBy) -> BTreeMap<Group, RawCounters>
where
    I: IntoIterator<Item = &'a TraceEvent>,
{
    let mut out: BTreeMap<Group, RawCounters> = BTreeMap::new();
    for ev in events {
        let key = match by {
            GroupBy::Phase => Group::Phase(ev.phase),
            GroupBy::WholeRun => Group::WholeRun,
        };
        out.entry(key).or_default().record(ev);
    }
    if by == GroupBy::WholeRun && out.is_empty() {
        out.insert(Group::WholeRun, RawCounters::default());
    }
    out
}

/// Sum of all groups.
pub fn total<'a, I: IntoIterator<Item = &'a RawCounters>>(groups: I) -> RawCounters {
    groups
        .into_iter()
        .fold(RawCounters::default(), |acc, rc| acc.merged(rc))
}

/// Derived metrics. `None` marks a ratio with a zero denominator.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MetricSet {
    pub m_v: Option<f64>,
    pub a_v: Option<f64>,
    pub c_v: Option<f64>,
    pub avl: Option<f64>,
    pub e_v: Option<f64>,
}

pub fn compute_metrics(rc: &RawCounters, vl_max: usize) -> MetricSet {
    if rc.i_t == 0 {
        return MetricSet::default();
    }
    let avl = ratio(rc.sum_vl as f64, rc.i_v);
    MetricSet {
        m_v: ratio(rc.i_v as f64, rc.i_t),
        a_v: ratio(rc.c_v as f64, rc.c_t),
        c_v: ratio(rc.c_v as f64, rc.i_v),
        avl,
        e_v: avl.map(|a| a / vl_max as f64),
    }
}

impl MetricSet {
    pub fn in_range(&self, vl_max: usize) -> bool {
        let unit = |v: Option<f64>| v.is_none_or(|x| (0.0..=1.0).contains(&x));
        unit(self.m_v)
            && unit(self.a_v)
            && unit(self.e_v)
            && self.c_v.is_none_or(|c| c >= 0.0)
            && self.avl.is_none_or(|a| (0.0..=vl_max as f64).contains(&a))
    }
}

/// Share of total cycles per phase in percent, in phase order.
pub fn phase_weight_table(per_phase: &BTreeMap<u8, RawCounters>) -> Result<Vec<(u8, f64)>, MetricsError> {
    let total: u64 = per_phase.values().map(|r| r.c_t).sum();
    if total == 0 {
        return Err(MetricsError::NoCycles);
    }
    Ok(per_phase
        .iter()
        .map(|(p, r)| (*p, r.c_t as f64 * 100.0 / total as f64))
        .collect())
}

/// `M_v` per (vector size, phase).
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub sizes: Vec<usize>,
    pub phases: Vec<u8>,
    /// `cells[size index][phase index]`.
    pub cells: Vec<Vec<Option<f64>>>,
}

impl Heatmap {
    pub fn cell(&self, size: usize, phase: u8) -> Option<f64> {
        let r = self.sizes.iter().position(|s| *s == size)?;
        let c = self.phases.iter().position(|p| *p == phase)?;
        self.cells[r][c]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("vector_size");
        for p in &self.phases {
            let _ = write!(s, ",phase{p}");
        }
        s.push('\n');
        for (size, row) in self.sizes.iter().zip(&self.cells) {
            let _ = write!(s, "{size}");
            for c in row {
                s.push(',');
                s.push_str(&fmt_opt(*c));
            }
            s.push('\n');
        }
        s
    }
}

pub fn mix_heatmap(
    results: &BTreeMap<(usize, u8), RawCounters>,
    sizes: &[usize],
    phases: &[u8],
    vl_max: usize,
) -> Result<Heatmap, MetricsError> {
    let missing: Vec<(usize, u8)> = sizes
        .iter()
        .flat_map(|s| phases.iter().map(move |p| (*s, *p)))
        .filter(|k| !results.contains_key(k))
        .collect();
    if !missing.is_empty() {
        return Err(MetricsError::IncompleteSweep(missing));
    }
    let cells = sizes
        .iter()
        .map(|s| {
            phases
                .iter()
                .map(|p| compute_metrics(&results[&(*s, *p)], vl_max).m_v)
                .collect()
        })
        .collect();
    Ok(Heatmap {
        sizes: sizes.to_vec(),
        phases: phases.to_vec(),
        cells,
    })
}

/// `%g`-style formatting with six significant digits.
pub fn fmt_sig6(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{v:.5e}");
    let (mant, exp) = sci.split_once('e').unwrap_or((&sci, "0"));
    let exp: i32 = exp.parse().unwrap_or(0);
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        strip_zeros(format!("{v:.decimals$}"))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", strip_zeros(mant.to_string()), exp.abs())
    }
}

fn strip_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// Formats an optional value, absent values as an empty string.
pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_sig6).unwrap_or_default()
}

pub const COUNTER_CSV_HEADER: &str = "group,c_t,c_v,i_t,i_v,i_cfg,sum_vl,m_l1,m_l2,i_mem,M_v,A_v,C_v,AVL,E_v";

/// One CSV row per group: raw counters then the metric set.
pub fn write_counters_csv<W: io::Write>(
    mut w: W,
    groups: &BTreeMap<Group, RawCounters>,
    vl_max: usize,
) -> io::Result<usize> {
    writeln!(w, "{COUNTER_CSV_HEADER}")?;
    for (g, rc) in groups {
        let name = match g {
            Group::Phase(p) => format!("phase{p}"),
            Group::WholeRun => "all".into(),
        };
        let m = compute_metrics(rc, vl_max);
        writeln!(
            w,
            "{name},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            rc.c_t,
            rc.c_v,
            rc.i_t,
            rc.i_v,
            rc.i_cfg,
            rc.sum_vl,
            rc.m_l1,
            rc.m_l2,
            rc.i_mem,
            fmt_opt(m.m_v),
            fmt_opt(m.a_v),
            fmt_opt(m.c_v),
            fmt_opt(m.avl),
            fmt_opt(m.e_v),
        )?;
    }
    Ok(groups.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::Opcode;

    fn ev(phase: u8, opcode: Opcode, vl: u16, cycles: u32) -> TraceEvent {
        TraceEvent {
            seq: 0,
            phase,
            opcode,
            class: opcode.class(),
            vl,
            cycles,
            l1_misses: 0,
            l2_misses: 0,
        }
    }

    #[test]
    fn empty_aggregate() {
        let g = aggregate(&[], GroupBy::WholeRun);
        assert_eq!(g[&Group::WholeRun], RawCounters::default());
        assert!(aggregate(&[], GroupBy::Phase).is_empty());
    }

    #[test]
    fn partition_by_phase() {
        let evs = vec![
            ev(1, Opcode::Add, 0, 1),
            ev(2, Opcode::Vsetvl, 240, 1),
            ev(2, Opcode::Vfadd, 240, 30),
            ev(1, Opcode::Load, 0, 1),
        ];
        let g = aggregate(&evs, GroupBy::Phase);
        assert_eq!(g.len(), 2);
        assert_eq!(g[&Group::Phase(1)].i_t + g[&Group::Phase(2)].i_t, 4);
        let p2 = g[&Group::Phase(2)];
        assert_eq!((p2.i_v, p2.i_cfg, p2.sum_vl, p2.c_v, p2.c_t), (1, 1, 240, 30, 31));
        assert_eq!(g[&Group::Phase(1)].i_mem, 1);
        let whole = aggregate(&evs, GroupBy::WholeRun)[&Group::WholeRun];
        assert_eq!(whole, total(g.values()));
        assert!(whole.is_consistent(256));
    }

    #[test]
    fn metric_examples() {
        let rc = RawCounters {
            c_t: 30_000_000,
            c_v: 21_006_900,
            i_t: 1_000_000,
            i_v: 510_000,
            sum_vl: 510_000 * 240,
            ..Default::default()
        };
        let m = compute_metrics(&rc, 256);
        assert!((m.c_v.unwrap() - 41.19).abs() < 5e-3);
        assert_eq!(m.avl, Some(240.0));
        assert_eq!(m.e_v, Some(0.9375));

        let scalar = RawCounters {
            c_t: 1000,
            i_t: 1000,
            ..Default::default()
        };
        let m = compute_metrics(&scalar, 256);
        assert_eq!(m.m_v, Some(0.0));
        assert_eq!((m.c_v, m.avl, m.e_v), (None, None, None));
        assert_eq!(compute_metrics(&RawCounters::default(), 256), MetricSet::default());
    }

    #[test]
    fn weights() {
        let mut per = BTreeMap::new();
        per.insert(
            3,
            RawCounters {
                c_t: 7,
                ..Default::default()
            },
        );
        assert_eq!(phase_weight_table(&per).unwrap(), vec![(3, 100.0)]);
        per.insert(
            1,
            RawCounters {
                c_t: 7,
                ..Default::default()
            },
        );
        assert_eq!(phase_weight_table(&per).unwrap(), vec![(1, 50.0), (3, 50.0)]);
        assert_eq!(phase_weight_table(&BTreeMap::new()), Err(MetricsError::NoCycles));
    }

    #[test]
    fn heatmap_missing_cells() {
        let mut r = BTreeMap::new();
        r.insert(
            (16, 1),
            RawCounters {
                i_t: 4,
                c_t: 4,
                ..Default::default()
            },
        );
        let err = mix_heatmap(&r, &[16, 64], &[1], 256).unwrap_err();
        assert_eq!(err, MetricsError::IncompleteSweep(vec![(64, 1)]));
        let h = mix_heatmap(&r, &[16], &[1], 256).unwrap();
        assert_eq!(h.cell(16, 1), Some(0.0));
        assert_eq!(h.to_csv(), "vector_size,phase1\n16,0\n");
    }

    #[test]
    fn sig6() {
        assert_eq!(fmt_sig6(41.1900001), "41.19");
        assert_eq!(fmt_sig6(0.9375), "0.9375");
        assert_eq!(fmt_sig6(1.0), "1");
        assert_eq!(fmt_sig6(123456789.0), "1.23457e+08");
        assert_eq!(fmt_sig6(0.00001234567), "1.23457e-05");
        assert_eq!(fmt_sig6(-2.5), "-2.5");
        assert_eq!(fmt_sig6(999999.5), "1e+06");
        assert_eq!(fmt_sig6(100000.0), "100000");
    }

    #[test]
    fn csv_rows() {
        let evs = vec![ev(1, Opcode::Add, 0, 1)];
        let mut out = Vec::new();
        let n = write_counters_csv(&mut out, &aggregate(&evs, GroupBy::Phase), 256).unwrap();
        assert_eq!(n, 1);
        let s = String::from_utf8(out).unwrap();
        assert_eq!(s.lines().nth(1).unwrap(), "phase1,1,0,1,0,0,0,0,0,0,0,0,,,");
    }
}
