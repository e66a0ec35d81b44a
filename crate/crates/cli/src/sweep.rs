//! `sweep`: run the grid, verify every run against the reference assembly,
//! write traces and the summary.

use std::collections::BTreeMap;
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use tempfile::NamedTempFile;
use veclens_core::kernels::{
    build_mesh, locate_divergence, reference_assembly, run_variant, AssemblyOutputs, KernelConfig, Mesh, Variant,
    PHASES,
};
use veclens_core::metrics::{compute_metrics, fmt_opt, fmt_sig6, mix_heatmap, RawCounters};
use veclens_core::tracefmt::{write_aggregated, TraceWriter};
use veclens_core::vvm::{NullSink, TraceEvent, TraceSink};

use crate::config::Settings;
use crate::fsio::{persist, temp_beside, write_atomic};
use crate::{table, CliError};

pub const SUMMARY_HEADER: [&str; 19] = [
    "variant",
    "vector_size",
    "phase",
    "c_t",
    "c_v",
    "i_t",
    "i_v",
    "i_cfg",
    "sum_vl",
    "m_l1",
    "m_l2",
    "i_mem",
    "M_v",
    "A_v",
    "C_v",
    "AVL",
    "E_v",
    "l1_mpki",
    "mem_pct",
];

const BASELINE: (Variant, usize) = (Variant::Scalar, 16);

pub struct Outcome {
    pub variant: Variant,
    pub size: usize,
    pub per_phase: BTreeMap<u8, RawCounters>,
    pub total_cycles: u64,
    pub failure: Option<String>,
}

type FullWriter = TraceWriter<BufWriter<NamedTempFile>>;

/// Routes each event to the writer of its phase.
struct PhaseFiles(Vec<FullWriter>);

impl TraceSink for PhaseFiles {
    fn accept(&mut self, ev: &TraceEvent) -> io::Result<()> {
        match self.0.get_mut((ev.phase as usize).wrapping_sub(1)) {
            Some(w) => w.accept(ev),
            None => Err(io::Error::other(format!("event with phase {}", ev.phase))),
        }
    }
}

pub fn run_dir(out: &Path, v: Variant, size: usize) -> PathBuf {
    out.join(v.name()).join(format!("vs{size}"))
}

fn phase_file(dir: &Path, phase: u8) -> PathBuf {
    dir.join(format!("phase{phase}.vtr"))
}

fn run_one(
    s: &Settings,
    mesh: &Mesh,
    oracle: &AssemblyOutputs,
    v: Variant,
    size: usize,
    write: bool,
) -> Result<Outcome, CliError> {
    let cfg = KernelConfig {
        vector_size: size,
        ..s.kernel.clone()
    };
    let dir = run_dir(&s.out, v, size);
    let vl_max = s.cost.vl_max as u16;
    let result = if write && s.full_traces {
        let mut writers = Vec::new();
        for p in PHASES {
            let tmp = temp_beside(&phase_file(&dir, p))?;
            writers.push(TraceWriter::new(BufWriter::new(tmp), vl_max)?);
        }
        let mut files = PhaseFiles(writers);
        let r = run_variant(v, &cfg, mesh, &s.cost, &mut files)?;
        for (p, w) in PHASES.zip(files.0) {
            let path = phase_file(&dir, p);
            let (buf, _) = w.finish_and_patch()?;
            let tmp = buf
                .into_inner()
                .map_err(|e| CliError::io(format!("writing {}", path.display()))(e.into_error()))?;
            persist(tmp, &path)?;
        }
        r
    } else {
        let r = run_variant(v, &cfg, mesh, &s.cost, NullSink)?;
        if write {
            for (p, rc) in &r.per_phase {
                let one = BTreeMap::from([(*p, *rc)]);
                write_atomic(&phase_file(&dir, *p), |w| {
                    write_aggregated(w, vl_max, &one)?;
                    Ok(())
                })?;
            }
        }
        r
    };

    let mut failure = None;
    if let Some(m) = result.outputs.first_mismatch(oracle) {
        let at = match locate_divergence(v, &cfg, mesh, &s.cost)? {
            Some((phase, e)) => format!("phase {phase} (element {e})"),
            None => "phase 8".to_string(),
        };
        failure = Some(format!("variant {v}, size {size}, {at}: {m}"));
    }
    for (p, rc) in &result.per_phase {
        if failure.is_none() && !compute_metrics(rc, s.cost.vl_max).in_range(s.cost.vl_max) {
            failure = Some(format!("variant {v}, size {size}, phase {p}: metric out of range"));
        }
    }
    eprintln!(
        "{:>7} vs{:<4} {:>12} cycles  {}",
        v.name(),
        size,
        result.total_cycles,
        if failure.is_some() { "MISMATCH" } else { "ok" }
    );
    Ok(Outcome {
        variant: v,
        size,
        per_phase: result.per_phase,
        total_cycles: result.total_cycles,
        failure,
    })
}

pub fn summary_row(v: Variant, size: usize, phase: u8, rc: &RawCounters, vl_max: usize) -> Vec<String> {
    let m = compute_metrics(rc, vl_max);
    let mut row = vec![v.name().to_string(), size.to_string(), phase.to_string()];
    row.extend(
        [
            rc.c_t, rc.c_v, rc.i_t, rc.i_v, rc.i_cfg, rc.sum_vl, rc.m_l1, rc.m_l2, rc.i_mem,
        ]
        .map(|x| x.to_string()),
    );
    row.extend([m.m_v, m.a_v, m.c_v, m.avl, m.e_v, rc.l1_mpki(), rc.mem_pct()].map(fmt_opt));
    row
}

fn speedup_table(outcomes: &[Outcome], s: &Settings) -> Option<String> {
    let base = outcomes.iter().find(|o| (o.variant, o.size) == BASELINE)?.total_cycles as f64;
    let mut headers = vec!["vector_size"];
    headers.extend(s.variants.iter().map(|v| v.name()));
    let rows: Vec<Vec<String>> = s
        .sizes
        .iter()
        .map(|size| {
            let mut r = vec![size.to_string()];
            for v in &s.variants {
                let o = outcomes.iter().find(|o| o.variant == *v && o.size == *size);
                r.push(
                    o.map(|o| format!("{:.2}", base / o.total_cycles as f64))
                        .unwrap_or_default(),
                );
            }
            r
        })
        .collect();
    Some(table::render(&headers, &rows))
}

pub fn cmd_sweep(s: &Settings) -> Result<(), CliError> {
    let mesh = build_mesh(&s.kernel)?;
    let oracle = reference_assembly(&s.kernel, &mesh)?;
    let mut grid: Vec<(Variant, usize, bool)> = s
        .variants
        .iter()
        .flat_map(|v| s.sizes.iter().map(move |z| (*v, *z, true)))
        .collect();
    if !grid.iter().any(|(v, z, _)| (*v, *z) == BASELINE) {
        grid.push((BASELINE.0, BASELINE.1, false));
    }
    std::fs::create_dir_all(&s.out).map_err(CliError::io(format!("creating {}", s.out.display())))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(s.jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    let outcomes: Vec<Outcome> = pool.install(|| {
        grid.par_iter()
            .map(|(v, z, write)| run_one(s, &mesh, &oracle, *v, *z, *write))
            .collect::<Result<_, _>>()
    })?;
    let (written, extra): (Vec<&Outcome>, Vec<&Outcome>) = outcomes
        .iter()
        .partition(|o| grid.iter().any(|g| g.2 && (g.0, g.1) == (o.variant, o.size)));

    let vl_max = s.cost.vl_max;
    let rows: Vec<Vec<String>> = written
        .iter()
        .flat_map(|o| {
            o.per_phase
                .iter()
                .map(move |(p, rc)| summary_row(o.variant, o.size, *p, rc, vl_max))
        })
        .collect();
    write_atomic(&s.out.join("summary.csv"), |w| {
        w.write_all(table::csv(&SUMMARY_HEADER, &rows).as_bytes())
            .map_err(CliError::io("writing summary.csv"))
    })?;
    let phases: Vec<u8> = PHASES.collect();
    for v in &s.variants {
        let cells: BTreeMap<(usize, u8), RawCounters> = written
            .iter()
            .filter(|o| o.variant == *v)
            .flat_map(|o| o.per_phase.iter().map(move |(p, rc)| ((o.size, *p), *rc)))
            .collect();
        let heat = mix_heatmap(&cells, &s.sizes, &phases, vl_max)?;
        write_atomic(&s.out.join(v.name()).join("mix.csv"), |w| {
            w.write_all(heat.to_csv().as_bytes())
                .map_err(CliError::io("writing mix.csv"))
        })?;
    }

    println!(
        "{} runs, {} summary rows written to {}",
        written.len(),
        rows.len(),
        s.out.display()
    );
    if let Some(t) = speedup_table(&outcomes, s) {
        let note = if extra.is_empty() {
            ""
        } else {
            " (baseline run not part of the grid)"
        };
        println!("\nspeed-up over SCALAR at vector size 16{note}:\n{t}");
    }
    let best: Vec<String> = s
        .variants
        .iter()
        .filter_map(|v| {
            written
                .iter()
                .filter(|o| o.variant == *v)
                .min_by_key(|o| o.total_cycles)
                .map(|o| format!("{}={} ({} cycles)", v.name(), o.size, fmt_sig6(o.total_cycles as f64)))
        })
        .collect();
    println!("fastest size per variant: {}", best.join(", "));

    let failures: Vec<&str> = outcomes.iter().filter_map(|o| o.failure.as_deref()).collect();
    if failures.is_empty() {
        println!("all runs bitwise identical to the reference assembly");
        Ok(())
    } else {
        for f in &failures {
            eprintln!("mismatch: {f}");
        }
        Err(CliError::Verification(format!(
            "{} run(s) differ from the reference; first: {}",
            failures.len(),
            failures[0]
        )))
    }
}
