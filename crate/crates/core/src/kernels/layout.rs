//! VM memory map for one run.

use super::reference::{gauss_weight, DTINV, SHAPE_A, SHAPE_B};
use super::{KernelConfig, Mesh};

/// Scratch array slot bases. Slot `s` of lane `l` lives at
/// `scratch + (s * vector_size + l) * 8`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slots {
    pub matprop: u32,
    pub elvel: u32,
    pub elcod: u32,
    pub xjacm: u32,
    pub cof: u32,
    pub xjaci: u32,
    pub gpdet: u32,
    pub gpcar: u32,
    pub gpvol: u32,
    pub rmom: u32,
    pub tmass: u32,
    pub gpvel: u32,
    pub conv: u32,
    /// Phase-7 contraction of two derivative columns.
    pub sv: u32,
    pub elrhs: u32,
    pub elmat: u32,
    pub total: u32,
}

impl Slots {
    pub fn new(ngauss: usize) -> Self {
        let ng = ngauss as u32;
        let mut next = 0;
        let mut take = |n: u32| {
            let b = next;
            next += n;
            b
        };
        let mut s = Slots {
            matprop: take(1),
            elvel: take(12),
            elcod: take(12),
            xjacm: take(9),
            cof: take(9),
            xjaci: take(9 * ng),
            gpdet: take(ng),
            gpcar: take(12 * ng),
            gpvol: take(ng),
            rmom: take(ng),
            tmass: take(1),
            gpvel: take(3),
            conv: take(4),
            sv: take(1),
            elrhs: take(12),
            elmat: take(16),
            total: 0,
        };
        s.total = next;
        s
    }

    pub fn elvel(&self, i: usize, n: usize) -> u32 {
        self.elvel + (n * 3 + i) as u32
    }
    pub fn elcod(&self, i: usize, n: usize) -> u32 {
        self.elcod + (n * 3 + i) as u32
    }
    pub fn elrhs(&self, i: usize, n: usize) -> u32 {
        self.elrhs + (n * 3 + i) as u32
    }
    pub fn xjacm(&self, i: usize, j: usize) -> u32 {
        self.xjacm + (i * 3 + j) as u32
    }
    pub fn cof(&self, r: usize, c: usize) -> u32 {
        self.cof + (r * 3 + c) as u32
    }
    pub fn xjaci(&self, i: usize, j: usize, g: usize) -> u32 {
        self.xjaci + ((g * 3 + i) * 3 + j) as u32
    }
    pub fn gpcar(&self, j: usize, n: usize, g: usize) -> u32 {
        self.gpcar + ((g * 4 + n) * 3 + j) as u32
    }
    pub fn elmat(&self, n: usize, m: usize) -> u32 {
        self.elmat + (n * 4 + m) as u32
    }
}

/// Floating-point constants held in the constant table and, while a phase
/// runs, in `f1..=f7`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Const {
    Zero,
    One,
    MinusOne,
    ShapeA,
    ShapeB,
    Weight,
    Dtinv,
}

impl Const {
    pub const ALL: [Const; 7] = [
        Const::Zero,
        Const::One,
        Const::MinusOne,
        Const::ShapeA,
        Const::ShapeB,
        Const::Weight,
        Const::Dtinv,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn freg(self) -> u8 {
        1 + self as u8
    }

    pub fn value(self, ngauss: usize) -> f64 {
        match self {
            Const::Zero => 0.0,
            Const::One => 1.0,
            Const::MinusOne => -1.0,
            Const::ShapeA => {
                if ngauss == 1 {
                    0.25
                } else {
                    SHAPE_A
                }
            }
            Const::ShapeB => {
                if ngauss == 1 {
                    0.25
                } else {
                    SHAPE_B
                }
            }
            Const::Weight => gauss_weight(ngauss),
            Const::Dtinv => DTINV,
        }
    }

    /// Constant equal to a reference derivative value.
    pub fn for_value(v: f64) -> Const {
        if v == 0.0 {
            Const::Zero
        } else if v > 0.0 {
            Const::One
        } else {
            Const::MinusOne
        }
    }
}

/// Byte addresses of every array in VM memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub consts: u64,
    pub table: u64,
    pub valid_count: u64,
    pub coords: u64,
    pub veloc: u64,
    /// Node indices, `[pnode][nelem]`.
    pub lnods: u64,
    /// Node byte offsets `node * 24`, `[pnode][nelem]`.
    pub lnods_off: u64,
    pub keys: u64,
    /// `[3][nnode]`
    pub rhs: u64,
    /// `[nelem][16]`
    pub gmat: u64,
    pub scratch: u64,
    pub end: u64,
    pub slots: Slots,
    pub vector_size: usize,
    pub nelem: usize,
    pub nnode: usize,
}

const PAGE: u64 = 4096;

impl Layout {
    pub fn new(cfg: &KernelConfig, nnode: usize) -> Self {
        let slots = Slots::new(cfg.ngauss);
        let mut next = PAGE;
        let mut take = |bytes: u64| {
            let b = next;
            next = (next + bytes).div_ceil(PAGE) * PAGE;
            b
        };
        let consts = take(8 * (Const::ALL.len() as u64 + 16 + 1));
        let table = consts + 8 * Const::ALL.len() as u64;
        let valid_count = table + 16 * 8;
        let n = nnode as u64;
        let e = cfg.nelem as u64;
        let coords = take(24 * n);
        let veloc = take(24 * n);
        let lnods = take(32 * e);
        let lnods_off = take(32 * e);
        let keys = take(8 * e);
        let rhs = take(24 * n);
        let gmat = take(128 * e);
        let scratch = take(8 * slots.total as u64 * cfg.vector_size as u64);
        Layout {
            consts,
            table,
            valid_count,
            coords,
            veloc,
            lnods,
            lnods_off,
            keys,
            rhs,
            gmat,
            scratch,
            end: next,
            slots,
            vector_size: cfg.vector_size,
            nelem: cfg.nelem,
            nnode,
        }
    }

    /// Byte offset of a slot relative to the lane pointer.
    pub fn slot_off(&self, slot: u32) -> i64 {
        slot as i64 * self.vector_size as i64 * 8
    }

    pub fn const_addr(&self, c: Const) -> u64 {
        self.consts + 8 * c.index() as u64
    }

    /// Raw 64-bit words to preload, as `(address, words)`.
    pub fn initial_image(&self, cfg: &KernelConfig, mesh: &Mesh) -> Vec<(u64, Vec<u64>)> {
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        let consts: Vec<f64> = Const::ALL.iter().map(|c| c.value(cfg.ngauss)).collect();
        vec![
            (self.consts, bits(&consts)),
            (self.table, bits(&mesh.material_table)),
            (self.coords, bits(&mesh.coords)),
            (self.veloc, bits(&mesh.veloc)),
            (self.lnods, mesh.lnods.iter().map(|n| *n as u64).collect()),
            (self.lnods_off, mesh.lnods.iter().map(|n| *n as u64 * 24).collect()),
            (self.keys, bits(&mesh.elem_key)),
        ]
    }
}
