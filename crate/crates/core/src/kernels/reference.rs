//! Scalar evaluation of the assembly. Every floating-point operation here has
//! a one-to-one counterpart in the emitted instruction streams, in the same
//! order, so results match bit for bit.

#![allow(clippy::needless_range_loop, clippy::assign_op_pattern)]

use super::{AssemblyOutputs, KernelConfig, KernelError, Mesh};

/// Shape function value at its own 4-point integration point.
pub const SHAPE_A: f64 = 0.5854101966249685;
/// Shape function value at the other three integration points.
pub const SHAPE_B: f64 = 0.1381966011250105;
pub const DTINV: f64 = 50.0;

pub fn shape_value(inode: usize, g: usize, ngauss: usize) -> f64 {
    match (ngauss, inode == g) {
        (1, _) => 0.25,
        (_, true) => SHAPE_A,
        _ => SHAPE_B,
    }
}

pub fn gauss_weight(ngauss: usize) -> f64 {
    if ngauss == 1 {
        1.0 / 6.0
    } else {
        1.0 / 24.0
    }
}

/// Derivative of shape function `n` along reference axis `j`.
pub fn deriv(j: usize, n: usize) -> f64 {
    if n == 0 {
        -1.0
    } else if j == n - 1 {
        1.0
    } else {
        0.0
    }
}

fn cyc(i: usize, k: usize) -> usize {
    (i + k) % 3
}

/// All elemental arrays of one element after phases 1 to 7.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementState {
    pub matprop: f64,
    /// `(i, n) -> n * 3 + i`
    pub elvel: [f64; 12],
    pub elcod: [f64; 12],
    /// `(i, j, g) -> (g * 3 + i) * 3 + j`
    pub xjaci: [f64; 36],
    pub gpdet: [f64; 4],
    /// `(j, n, g) -> (g * 4 + n) * 3 + j`
    pub gpcar: [f64; 48],
    pub gpvol: [f64; 4],
    pub rmom: [f64; 4],
    pub tmass: f64,
    /// Values of the last integration point.
    pub gpvel: [f64; 3],
    pub elrhs: [f64; 12],
    /// `(n, m) -> n * 4 + m`
    pub elmat: [f64; 16],
}

impl ElementState {
    /// Checked by phase 8: every determinant strictly positive.
    pub fn is_valid(&self, ngauss: usize) -> bool {
        self.gpdet[..ngauss].iter().all(|d| 0.0 < *d)
    }
}

pub fn reference_element(cfg: &KernelConfig, mesh: &Mesh, e: usize) -> ElementState {
    let ng = cfg.ngauss;
    let mut s = ElementState {
        matprop: 0.0,
        elvel: [0.0; 12],
        elcod: [0.0; 12],
        xjaci: [0.0; 36],
        gpdet: [0.0; 4],
        gpcar: [0.0; 48],
        gpvol: [0.0; 4],
        rmom: [0.0; 4],
        tmass: 0.0,
        gpvel: [0.0; 3],
        elrhs: [0.0; 12],
        elmat: [0.0; 16],
    };

    // phase 1
    let key = mesh.elem_key[e];
    s.matprop = *mesh
        .material_table
        .iter()
        .find(|t| key <= **t)
        .unwrap_or(&mesh.material_table[15]);
    for n in 0..4 {
        let node = mesh.node(n, e);
        for i in 0..3 {
            s.elvel[n * 3 + i] = mesh.veloc[node * 3 + i];
        }
    }
    // phase 2
    for n in 0..4 {
        let node = mesh.node(n, e);
        for i in 0..3 {
            s.elcod[n * 3 + i] = mesh.coords[node * 3 + i];
        }
    }
    // phase 3
    for g in 0..ng {
        let mut jm = [[0.0f64; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = s.elcod[i] * deriv(j, 0);
                for n in 1..4 {
                    acc = s.elcod[n * 3 + i] * deriv(j, n) + acc;
                }
                jm[i][j] = acc;
            }
        }
        let mut cof = [[0.0f64; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                let (r1, r2, c1, c2) = (cyc(r, 1), cyc(r, 2), cyc(c, 1), cyc(c, 2));
                let t0 = jm[r1][c1] * jm[r2][c2];
                let t1 = jm[r1][c2] * jm[r2][c1];
                cof[r][c] = t0 - t1;
            }
        }
        let t0 = jm[0][0] * cof[0][0];
        let t1 = jm[0][1] * cof[0][1] + t0;
        let det = jm[0][2] * cof[0][2] + t1;
        s.gpdet[g] = det;
        for i in 0..3 {
            for j in 0..3 {
                s.xjaci[(g * 3 + i) * 3 + j] = cof[j][i] / det;
            }
        }
    }
    // phase 4
    for g in 0..ng {
        for n in 0..4 {
            for j in 0..3 {
                let mut acc = s.xjaci[(g * 3) * 3 + j] * deriv(0, n);
                for i in 1..3 {
                    acc = s.xjaci[(g * 3 + i) * 3 + j] * deriv(i, n) + acc;
                }
                s.gpcar[(g * 4 + n) * 3 + j] = acc;
            }
        }
    }
    // phase 5
    let w = gauss_weight(ng);
    for g in 0..ng {
        s.gpvol[g] = s.gpdet[g] * w;
        s.rmom[g] = s.gpvol[g] * DTINV;
    }
    let mut tmass = s.rmom[0];
    for g in 1..ng {
        tmass += s.rmom[g];
    }
    s.tmass = tmass;
    for k in 0..12 {
        s.elrhs[k] = s.tmass * s.elvel[k];
    }
    // phase 6
    for g in 0..ng {
        for i in 0..3 {
            let mut acc = shape_value(0, g, ng) * s.elvel[i];
            for n in 1..4 {
                acc = shape_value(n, g, ng) * s.elvel[n * 3 + i] + acc;
            }
            s.gpvel[i] = acc;
        }
        let mut conv = [0.0f64; 4];
        for (n, cv) in conv.iter_mut().enumerate() {
            let mut acc = s.gpvel[0] * s.gpcar[(g * 4 + n) * 3];
            for d in 1..3 {
                acc = s.gpvel[d] * s.gpcar[(g * 4 + n) * 3 + d] + acc;
            }
            *cv = acc;
        }
        for n in 0..4 {
            for i in 0..3 {
                let t0 = s.gpvol[g] * conv[n];
                let t1 = t0 * shape_value(n, g, ng);
                s.elrhs[n * 3 + i] = t1 * s.gpvel[i] + s.elrhs[n * 3 + i];
            }
        }
    }
    // phase 7
    for g in 0..ng {
        for n in 0..4 {
            for m in 0..4 {
                let car = |d: usize, k: usize| s.gpcar[(g * 4 + k) * 3 + d];
                let mut sv = car(0, n) * car(0, m);
                for d in 1..3 {
                    sv = car(d, n) * car(d, m) + sv;
                }
                let coef = s.matprop * s.gpvol[g];
                if cfg.semi_implicit {
                    s.elmat[n * 4 + m] = if g == 0 {
                        coef * sv
                    } else {
                        coef * sv + s.elmat[n * 4 + m]
                    };
                } else {
                    let t = coef * sv;
                    for i in 0..3 {
                        let u = t * s.elvel[m * 3 + i];
                        s.elrhs[n * 3 + i] -= u;
                    }
                }
            }
        }
    }
    s
}

/// Evaluates all elements in ascending order and assembles the global arrays.
pub fn reference_assembly(cfg: &KernelConfig, mesh: &Mesh) -> Result<AssemblyOutputs, KernelError> {
    cfg.validate()?;
    if mesh.nelem != cfg.nelem {
        return Err(KernelError::Config(format!(
            "mesh has {} elements, config {}",
            mesh.nelem, cfg.nelem
        )));
    }
    let nnode = mesh.nnode;
    let mut global_rhs = vec![0.0; 3 * nnode];
    let mut global_mat = cfg.semi_implicit.then(|| vec![0.0; 16 * cfg.nelem]);
    let mut valid = 0;
    for e in 0..cfg.nelem {
        let s = reference_element(cfg, mesh, e);
        if !s.is_valid(cfg.ngauss) {
            continue;
        }
        valid += 1;
        for n in 0..4 {
            let node = mesh.node(n, e);
            for i in 0..3 {
                global_rhs[i * nnode + node] += s.elrhs[n * 3 + i];
            }
        }
        if let Some(gm) = global_mat.as_mut() {
            gm[e * 16..e * 16 + 16].copy_from_slice(&s.elmat);
        }
    }
    Ok(AssemblyOutputs {
        global_rhs,
        global_mat,
        valid_elements: valid,
        skipped_elements: cfg.nelem as u64 - valid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::build_mesh;

    #[test]
    fn shape_partition_of_unity() {
        for ng in [1, 4] {
            for g in 0..ng {
                let s: f64 = (0..4).map(|n| shape_value(n, g, ng)).sum();
                assert!((s - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn unit_tet_jacobian_is_identity() {
        let cfg = KernelConfig {
            nelem: 1,
            vector_size: 1,
            ..Default::default()
        };
        let mut mesh = build_mesh(&cfg).unwrap();
        for n in 0..4 {
            mesh.lnods[n] = n as u32;
        }
        mesh.coords[..12].copy_from_slice(&[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let s = reference_element(&cfg, &mesh, 0);
        for g in 0..4 {
            assert_eq!(s.gpdet[g], 1.0);
            for i in 0..3 {
                for j in 0..3 {
                    assert_eq!(s.xjaci[(g * 3 + i) * 3 + j], if i == j { 1.0 } else { 0.0 });
                }
            }
        }
        // reference volume 1/6 split over four points
        let vol: f64 = s.gpvol.iter().sum();
        assert!((vol - 1.0 / 6.0).abs() < 1e-15);
        // gpcar equals the reference derivatives
        for n in 0..4 {
            for j in 0..3 {
                assert_eq!(s.gpcar[n * 3 + j], deriv(j, n));
            }
        }
    }

    #[test]
    fn scaled_tet_determinant() {
        let cfg = KernelConfig {
            nelem: 1,
            vector_size: 1,
            ..Default::default()
        };
        let mut mesh = build_mesh(&cfg).unwrap();
        for n in 0..4 {
            mesh.lnods[n] = n as u32;
        }
        mesh.coords[..12].copy_from_slice(&[1.0, 1.0, 1.0, 3.0, 1.0, 1.0, 1.0, 4.0, 1.0, 1.0, 1.0, 0.5]);
        let s = reference_element(&cfg, &mesh, 0);
        assert_eq!(s.gpdet[0], 2.0 * 3.0 * -0.5);
        assert!(!s.is_valid(4));
    }

    #[test]
    fn explicit_mode_has_no_matrix() {
        let cfg = KernelConfig {
            nelem: 240,
            semi_implicit: false,
            ..Default::default()
        };
        let mesh = build_mesh(&cfg).unwrap();
        let out = reference_assembly(&cfg, &mesh).unwrap();
        assert!(out.global_mat.is_none());
        let implicit = reference_assembly(
            &KernelConfig {
                semi_implicit: true,
                ..cfg.clone()
            },
            &mesh,
        )
        .unwrap();
        assert_ne!(out.global_rhs, implicit.global_rhs);
    }

    #[test]
    fn default_mesh_mostly_valid() {
        let cfg = KernelConfig::default();
        let mesh = build_mesh(&cfg).unwrap();
        let out = reference_assembly(&cfg, &mesh).unwrap();
        assert!(out.valid_elements > cfg.nelem as u64 * 9 / 10);
        assert!(out.global_rhs.iter().all(|v| v.is_finite()));
    }
}
