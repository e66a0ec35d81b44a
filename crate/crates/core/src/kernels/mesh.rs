use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{KernelConfig, KernelError};

/// Tetrahedral mesh of a jittered structured cube grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub nnode: usize,
    pub nelem: usize,
    /// Node-major coordinates, `coords[node * 3 + dim]`.
    pub coords: Vec<f64>,
    /// Node-major velocities, `veloc[node * 3 + dim]`.
    pub veloc: Vec<f64>,
    /// Connectivity, `lnods[inode * nelem + elem]`.
    pub lnods: Vec<u32>,
    /// Per-element lookup key in `[0, 1)`.
    pub elem_key: Vec<f64>,
    /// Ascending, last entry 1.0.
    pub material_table: [f64; 16],
}

impl Mesh {
    pub fn node(&self, inode: usize, elem: usize) -> usize {
        self.lnods[inode * self.nelem + elem] as usize
    }
}

/// Vertex offsets of the six Kuhn tetrahedra of a unit cube, each listed
/// with positive orientation.
fn kuhn_tets() -> [[[usize; 3]; 4]; 6] {
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut out = [[[0; 3]; 4]; 6];
    for (t, p) in PERMS.iter().enumerate() {
        let mut v = [[0usize; 3]; 4];
        for k in 1..4 {
            v[k] = v[k - 1];
            v[k][p[k - 1]] = 1;
        }
        let odd = matches!(t, 1 | 2 | 5);
        if odd {
            v.swap(1, 2);
        }
        out[t] = v;
    }
    out
}

pub fn build_mesh(cfg: &KernelConfig) -> Result<Mesh, KernelError> {
    cfg.validate()?;
    let mut n = 1;
    while 6 * n * n * n < cfg.nelem {
        n += 1;
    }
    let np = n + 1;
    let nnode = np * np * np;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut coords = Vec::with_capacity(nnode * 3);
    for a in 0..np {
        for b in 0..np {
            for c in 0..np {
                for g in [a, b, c] {
                    let u: f64 = rng.random();
                    coords.push((g as f64 + 0.5 + (u - 0.5) * 0.5) / np as f64);
                }
            }
        }
    }
    let veloc: Vec<f64> = (0..nnode * 3).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let elem_key: Vec<f64> = (0..cfg.nelem).map(|_| rng.random()).collect();
    let mut material_table = [1.0; 16];
    for m in material_table.iter_mut().take(15) {
        *m = rng.random();
    }
    material_table.sort_by(f64::total_cmp);

    let tets = kuhn_tets();
    let id = |a: usize, b: usize, c: usize| ((a * np + b) * np + c) as u32;
    let mut lnods = vec![0u32; 4 * cfg.nelem];
    for e in 0..cfg.nelem {
        let cube = e / 6;
        let (a, b, c) = (cube / (n * n), (cube / n) % n, cube % n);
        for (k, off) in tets[e % 6].iter().enumerate() {
            lnods[k * cfg.nelem + e] = id(a + off[0], b + off[1], c + off[2]);
        }
    }

    Ok(Mesh {
        nnode,
        nelem: cfg.nelem,
        coords,
        veloc,
        lnods,
        elem_key,
        material_table,
    })
}
