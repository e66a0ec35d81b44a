use std::collections::BTreeMap;
use std::io;

use super::layout::Layout;
use super::reference::{reference_element, ElementState};
use super::{emit_phase, KernelConfig, KernelError, Mesh, Variant, PHASES};
use crate::costmodel::CostModelConfig;
use crate::metrics::RawCounters;
use crate::vvm::{self, MachineState, TraceEvent, TraceSink};

#[derive(Debug, Clone, PartialEq)]
pub struct AssemblyOutputs {
    /// `global_rhs[dim * nnode + node]`
    pub global_rhs: Vec<f64>,
    /// Per-element 4x4 blocks, `global_mat[elem * 16 + n * 4 + m]`; zero for
    /// skipped elements. Absent for explicit runs.
    pub global_mat: Option<Vec<f64>>,
    pub valid_elements: u64,
    pub skipped_elements: u64,
}

impl AssemblyOutputs {
    /// Exact equality of every bit pattern.
    pub fn bitwise_eq(&self, other: &AssemblyOutputs) -> bool {
        self.first_mismatch(other).is_none()
    }

    /// Describes the first difference, if any.
    pub fn first_mismatch(&self, other: &AssemblyOutputs) -> Option<String> {
        fn cmp(name: &str, a: &[f64], b: &[f64]) -> Option<String> {
            if a.len() != b.len() {
                return Some(format!("{name}: length {} vs {}", a.len(), b.len()));
            }
            a.iter()
                .zip(b)
                .position(|(x, y)| x.to_bits() != y.to_bits())
                .map(|k| format!("{name}[{k}]: {:e} vs {:e}", a[k], b[k]))
        }
        if self.valid_elements != other.valid_elements {
            return Some(format!(
                "valid elements {} vs {}",
                self.valid_elements, other.valid_elements
            ));
        }
        cmp("global_rhs", &self.global_rhs, &other.global_rhs).or_else(|| match (&self.global_mat, &other.global_mat) {
            (Some(a), Some(b)) => cmp("global_mat", a, b),
            (None, None) => None,
            _ => Some("global_mat present in only one output".into()),
        })
    }

    /// Order-sensitive digest of the outputs' bit patterns (FNV-1a).
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |w: u64| {
            for b in w.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        self.global_rhs.iter().for_each(|v| feed(v.to_bits()));
        if let Some(m) = &self.global_mat {
            m.iter().for_each(|v| feed(v.to_bits()));
        }
        feed(self.valid_elements);
        h
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub outputs: AssemblyOutputs,
    /// Counters for phases 1 to 8.
    pub per_phase: BTreeMap<u8, RawCounters>,
    pub total_cycles: u64,
    pub total_instructions: u64,
}

struct PhaseRecorder([RawCounters; 9]);

impl TraceSink for PhaseRecorder {
    fn accept(&mut self, ev: &TraceEvent) -> io::Result<()> {
        self.0[ev.phase as usize].record(ev);
        Ok(())
    }
}

/// Runs every chunk through all eight phases of `variant` on a fresh machine.
/// Events are forwarded to `sink` in execution order.
pub fn run_variant<S: TraceSink>(
    variant: Variant,
    cfg: &KernelConfig,
    mesh: &Mesh,
    cost: &CostModelConfig,
    sink: S,
) -> Result<RunResult, KernelError> {
    run_inner(variant, cfg, mesh, cost, sink, false).map(|(r, _)| r)
}

/// Re-runs `variant` comparing each chunk's elemental arrays with the
/// reference after the chunk finishes. Returns the first phase whose results
/// differ, with the element index.
pub fn locate_divergence(
    variant: Variant,
    cfg: &KernelConfig,
    mesh: &Mesh,
    cost: &CostModelConfig,
) -> Result<Option<(u8, usize)>, KernelError> {
    run_inner(variant, cfg, mesh, cost, vvm::NullSink, true).map(|(_, d)| d)
}

fn run_inner<S: TraceSink>(
    variant: Variant,
    cfg: &KernelConfig,
    mesh: &Mesh,
    cost: &CostModelConfig,
    mut sink: S,
    check: bool,
) -> Result<(RunResult, Option<(u8, usize)>), KernelError> {
    cfg.validate()?;
    cost.validate().map_err(|e| KernelError::Config(e.to_string()))?;
    if mesh.nelem != cfg.nelem {
        return Err(KernelError::Config(format!(
            "mesh has {} elements, config {}",
            mesh.nelem, cfg.nelem
        )));
    }
    let layout = Layout::new(cfg, mesh.nnode);
    let mut state = MachineState::with_memory(cost, layout.end);
    for (addr, words) in layout.initial_image(cfg, mesh) {
        state
            .memory_mut()
            .write_u64_slice(addr, &words)
            .map_err(|e| KernelError::Config(format!("memory image does not fit at {:#x}", e.0)))?;
    }

    let mut rec = PhaseRecorder([RawCounters::default(); 9]);
    let mut total_cycles = 0;
    let mut total_instructions = 0;
    let mut divergence = None;
    for chunk in 0..cfg.chunks() {
        for phase in PHASES {
            let stream = emit_phase(phase, variant, cfg, &layout, chunk, cost.vl_max)?;
            let s = vvm::run(stream, &mut state, cost, (&mut rec, &mut sink))?;
            total_cycles += s.total_cycles;
            total_instructions += s.total_instructions;
        }
        if check && divergence.is_none() {
            divergence = check_chunk(cfg, mesh, &layout, &state, chunk);
        }
    }

    let mem = state.memory();
    let read = |addr: u64, n: usize| {
        mem.read_f64_vec(addr, n)
            .map_err(|e| KernelError::Config(format!("output outside memory at {:#x}", e.0)))
    };
    let global_rhs = read(layout.rhs, 3 * mesh.nnode)?;
    let global_mat = if cfg.semi_implicit {
        Some(read(layout.gmat, 16 * cfg.nelem)?)
    } else {
        None
    };
    let valid = mem
        .read(layout.valid_count)
        .map_err(|e| KernelError::Config(format!("output outside memory at {:#x}", e.0)))?;
    let per_phase = PHASES.map(|p| (p, rec.0[p as usize])).collect();
    Ok((
        RunResult {
            outputs: AssemblyOutputs {
                global_rhs,
                global_mat,
                valid_elements: valid,
                skipped_elements: cfg.nelem as u64 - valid,
            },
            per_phase,
            total_cycles,
            total_instructions,
        },
        divergence,
    ))
}

/// Compares scratch with the reference element states, attributing each
/// array to the phase that last writes it.
fn check_chunk(
    cfg: &KernelConfig,
    mesh: &Mesh,
    layout: &Layout,
    state: &MachineState,
    chunk: usize,
) -> Option<(u8, usize)> {
    let (e0, count) = cfg.chunk(chunk);
    let s = layout.slots;
    let ng = cfg.ngauss as u32;
    let mut worst: Option<(u8, usize)> = None;
    for lane in 0..count {
        let e = e0 + lane;
        let want: ElementState = reference_element(cfg, mesh, e);
        let got = |slot: u32| {
            let addr = layout.scratch + (slot as u64 * cfg.vector_size as u64 + lane as u64) * 8;
            state.memory().read(addr).unwrap_or(u64::MAX)
        };
        let same = |base: u32, vals: &[f64]| {
            vals.iter()
                .enumerate()
                .all(|(k, v)| got(base + k as u32) == v.to_bits())
        };
        let mut checks: Vec<(u8, bool)> = vec![
            (
                1,
                got(s.matprop) == want.matprop.to_bits() && same(s.elvel, &want.elvel),
            ),
            (2, same(s.elcod, &want.elcod)),
            (
                3,
                same(s.xjaci, &want.xjaci[..9 * ng as usize]) && same(s.gpdet, &want.gpdet[..ng as usize]),
            ),
            (4, same(s.gpcar, &want.gpcar[..12 * ng as usize])),
            (
                5,
                same(s.gpvol, &want.gpvol[..ng as usize])
                    && same(s.rmom, &want.rmom[..ng as usize])
                    && got(s.tmass) == want.tmass.to_bits(),
            ),
            (6, same(s.gpvel, &want.gpvel)),
            (7, same(s.elrhs, &want.elrhs)),
        ];
        if cfg.semi_implicit {
            checks.push((7, same(s.elmat, &want.elmat)));
        }
        if let Some((p, _)) = checks.into_iter().find(|(_, ok)| !ok) {
            if worst.is_none_or(|(wp, _)| p < wp) {
                worst = Some((p, e));
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{build_mesh, reference_assembly};

    fn small(vs: usize, nelem: usize) -> (KernelConfig, Mesh) {
        let cfg = KernelConfig {
            vector_size: vs,
            nelem,
            ..Default::default()
        };
        let mesh = build_mesh(&cfg).unwrap();
        (cfg, mesh)
    }

    #[test]
    fn every_variant_matches_reference_small() {
        let (cfg, mesh) = small(16, 50);
        let want = reference_assembly(&cfg, &mesh).unwrap();
        let cost = CostModelConfig::default();
        for v in Variant::ALL {
            let got = run_variant(v, &cfg, &mesh, &cost, vvm::NullSink).unwrap();
            assert_eq!(got.outputs.first_mismatch(&want), None, "{v}");
            assert_eq!(got.per_phase.len(), 8);
            let sum: u64 = got.per_phase.values().map(|r| r.c_t).sum();
            assert_eq!(sum, got.total_cycles);
            assert_eq!(locate_divergence(v, &cfg, &mesh, &cost).unwrap(), None, "{v}");
        }
    }

    #[test]
    fn explicit_and_single_point() {
        let cost = CostModelConfig::default();
        for (semi, ng) in [(false, 4), (true, 1), (false, 1)] {
            let cfg = KernelConfig {
                vector_size: 8,
                nelem: 20,
                semi_implicit: semi,
                ngauss: ng,
                ..Default::default()
            };
            let mesh = build_mesh(&cfg).unwrap();
            let want = reference_assembly(&cfg, &mesh).unwrap();
            for v in [Variant::Scalar, Variant::Final] {
                let got = run_variant(v, &cfg, &mesh, &cost, vvm::NullSink).unwrap();
                assert_eq!(got.outputs.first_mismatch(&want), None, "{v} semi={semi} ng={ng}");
            }
        }
    }
}
