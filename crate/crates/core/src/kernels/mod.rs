//! Synthetic CFD element-assembly mini-app.
//!
//! Elements are processed in chunks of `vector_size`. Each chunk runs eight
//! phases:
//!
//! 1. material lookup (work A) and velocity gather (work B)
//! 2. coordinate gather
//! 3. Jacobian, determinant and inverse at every integration point
//! 4. Cartesian shape derivatives
//! 5. time-integration scaling
//! 6. convective contribution to the elemental RHS
//! 7. viscous contribution to the elemental matrix (or RHS when explicit)
//! 8. validity check and scatter to the global arrays
//!
//! [`reference_assembly`] evaluates this in plain Rust; [`run_variant`]
//! executes the emitted instruction stream of one [`Variant`] on the VM.
//! Both produce bitwise identical outputs.

mod emit;
mod layout;
mod mesh;
mod reference;
mod run;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub use emit::{emit_phase, PhaseStream};
pub use layout::{Layout, Slots};
pub use mesh::{build_mesh, Mesh};
pub use reference::{reference_assembly, reference_element, shape_value, ElementState, DTINV, SHAPE_A, SHAPE_B};
pub use run::{locate_divergence, run_variant, AssemblyOutputs, RunResult};

use crate::vvm::VmError;

pub const PHASES: std::ops::RangeInclusive<u8> = 1..=8;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("invalid kernel configuration: {0}")]
    Config(String),
    #[error("unsupported phase {phase} for variant {variant}")]
    Unsupported { phase: u8, variant: Variant },
    #[error(transparent)]
    Vm(#[from] VmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Scalar,
    Autovec,
    Vec2,
    Ivec2,
    Vec1,
    Final,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Scalar,
        Variant::Autovec,
        Variant::Vec2,
        Variant::Ivec2,
        Variant::Vec1,
        Variant::Final,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Scalar => "SCALAR",
            Variant::Autovec => "AUTOVEC",
            Variant::Vec2 => "VEC2",
            Variant::Ivec2 => "IVEC2",
            Variant::Vec1 => "VEC1",
            Variant::Final => "FINAL",
        }
    }

    /// Phases 3 to 7 vectorized over the element axis.
    pub fn vectorizes_compute(self) -> bool {
        self != Variant::Scalar
    }

    /// Phase 2 vectorized over the node axis (vl = pnode).
    pub fn node_vector_gather(self) -> bool {
        self == Variant::Vec2
    }

    /// Phase 2 loops interchanged, element axis vectorized.
    pub fn interchanged_gather(self) -> bool {
        matches!(self, Variant::Ivec2 | Variant::Final)
    }

    /// Phase 1 outer loop split, work B vectorized.
    pub fn fissioned_lookup(self) -> bool {
        matches!(self, Variant::Vec1 | Variant::Final)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = KernelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .iter()
            .copied()
            .find(|v| v.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| KernelError::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelConfig {
    pub vector_size: usize,
    pub nelem: usize,
    pub pnode: usize,
    pub ndime: usize,
    pub ngauss: usize,
    pub seed: u64,
    pub semi_implicit: bool,
}

/// Smallest element count divisible by every swept vector size.
pub const DEFAULT_NELEM: usize = 7680;

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            vector_size: 240,
            nelem: DEFAULT_NELEM,
            pnode: 4,
            ndime: 3,
            ngauss: 4,
            seed: 42,
            semi_implicit: true,
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<(), KernelError> {
        let err = |m: String| Err(KernelError::Config(m));
        if self.vector_size == 0 {
            return err("vector_size must be >= 1".into());
        }
        if self.nelem == 0 {
            return err("nelem must be >= 1".into());
        }
        if self.ndime != 3 || self.pnode != 4 {
            return err(format!(
                "only linear tetrahedra are supported (ndime=3, pnode=4), got ndime={} pnode={}",
                self.ndime, self.pnode
            ));
        }
        if !matches!(self.ngauss, 1 | 4) {
            return err(format!("ngauss must be 1 or 4, got {}", self.ngauss));
        }
        Ok(())
    }

    /// Number of kernel calls; the last may be shorter than `vector_size`.
    pub fn chunks(&self) -> usize {
        self.nelem.div_ceil(self.vector_size)
    }

    /// `(first element, element count)` of chunk `c`.
    pub fn chunk(&self, c: usize) -> (usize, usize) {
        let e0 = c * self.vector_size;
        (e0, self.vector_size.min(self.nelem - e0))
    }
}
