//! The mini vector ISA: opcode vocabulary, instruction classes, operands and
//! the one-instruction-per-line textual encoding.
//!
//! Textual form: `opcode dest, src1[, src2[, src3]] [#phase=N]`, with `;`
//! starting a comment. Registers are `x0..x31` (integer, `x0` reads as zero),
//! `f0..f31` (double) and `v0..v31` (vector). Immediates are decimal or `0x` hex
//! integers; floating-point constants live in memory.
//!
//! Operand conventions that differ from "dest first":
//! - `store`, `vstore_*`: the first operand is the data register.
//! - `branch a, b, n`: forward skip of the next `n` instructions when `a == b`.
//!   Loop back-edges in an expanded stream appear as `branch` with `n = 0`.
//! - `cmp d, a, b`: `d = (a < b) as u64`, integer or floating compare depending
//!   on the operand register file.

use std::fmt;
use std::str::FromStr;

use arrayvec::ArrayVec;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IsaError {
    #[error("unknown opcode `{0}`")]
    UnknownOpcode(String),
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("line {line}, column {column}: unknown register `{name}`")]
    UnknownRegister { line: usize, column: usize, name: String },
    #[error("unknown instruction class code {0}")]
    UnknownClass(u8),
    #[error("opcode code {0} out of range")]
    OpcodeOutOfRange(u16),
}

/// Instruction classes of the analysis hierarchy. `VectorConfig` is kept apart
/// from the three "vector proper" classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum InstrClass {
    Scalar = 0,
    VectorConfig = 1,
    VectorArithmetic = 2,
    VectorMemory = 3,
    VectorControlLane = 4,
}

impl InstrClass {
    pub const ALL: [InstrClass; 5] = [
        InstrClass::Scalar,
        InstrClass::VectorConfig,
        InstrClass::VectorArithmetic,
        InstrClass::VectorMemory,
        InstrClass::VectorControlLane,
    ];

    /// True for the classes executed on the vector unit (arithmetic, memory,
    /// control-lane). Configuration instructions are not vector instructions.
    pub fn is_vector(self) -> bool {
        matches!(
            self,
            InstrClass::VectorArithmetic | InstrClass::VectorMemory | InstrClass::VectorControlLane
        )
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<Self, IsaError> {
        Self::ALL
            .get(code as usize)
            .copied()
            .ok_or(IsaError::UnknownClass(code))
    }

    pub fn name(self) -> &'static str {
        match self {
            InstrClass::Scalar => "Scalar",
            InstrClass::VectorConfig => "VectorConfig",
            InstrClass::VectorArithmetic => "VectorArithmetic",
            InstrClass::VectorMemory => "VectorMemory",
            InstrClass::VectorControlLane => "VectorControlLane",
        }
    }
}

impl fmt::Display for InstrClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InstrClass {
    type Err = IsaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .ok_or_else(|| IsaError::UnknownOpcode(s.to_string()))
    }
}

macro_rules! opcodes {
    ($($variant:ident => $mnemonic:literal, $class:ident;)*) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        #[repr(u16)]
        pub enum Opcode {
            $($variant,)*
        }

        impl Opcode {
            /// The closed opcode set, in wire-code order.
            pub const ALL: &'static [Opcode] = &[$(Opcode::$variant,)*];

            pub fn mnemonic(self) -> &'static str {
                match self {
                    $(Opcode::$variant => $mnemonic,)*
                }
            }

            pub fn class(self) -> InstrClass {
                match self {
                    $(Opcode::$variant => InstrClass::$class,)*
                }
            }

            pub fn from_mnemonic(s: &str) -> Result<Opcode, IsaError> {
                match s {
                    $($mnemonic => Ok(Opcode::$variant),)*
                    _ => Err(IsaError::UnknownOpcode(s.to_string())),
                }
            }
        }
    };
}

opcodes! {
    Add => "add", Scalar;
    Mul => "mul", Scalar;
    Load => "load", Scalar;
    Store => "store", Scalar;
    Branch => "branch", Scalar;
    Cmp => "cmp", Scalar;
    Fadd => "fadd", Scalar;
    Fmul => "fmul", Scalar;
    Fdiv => "fdiv", Scalar;
    FmaddUnfused => "fmadd_unfused", Scalar;
    Vsetvl => "vsetvl", VectorConfig;
    Vfadd => "vfadd", VectorArithmetic;
    Vfsub => "vfsub", VectorArithmetic;
    Vfmul => "vfmul", VectorArithmetic;
    Vfdiv => "vfdiv", VectorArithmetic;
    Vfmacc => "vfmacc", VectorArithmetic;
    VloadUnit => "vload_unit", VectorMemory;
    VloadStrided => "vload_strided", VectorMemory;
    VloadIndexed => "vload_indexed", VectorMemory;
    VstoreUnit => "vstore_unit", VectorMemory;
    VstoreStrided => "vstore_strided", VectorMemory;
    VstoreIndexed => "vstore_indexed", VectorMemory;
    Vmv => "vmv", VectorControlLane;
    Vbroadcast => "vbroadcast", VectorControlLane;
    Vslide => "vslide", VectorControlLane;
}

impl Opcode {
    pub fn code(self) -> u16 {
        self as u16
    }

    pub fn from_code(code: u16) -> Result<Opcode, IsaError> {
        Opcode::ALL
            .get(code as usize)
            .copied()
            .ok_or(IsaError::OpcodeOutOfRange(code))
    }

    /// Scalar or vector load/store.
    pub fn is_memory(self) -> bool {
        matches!(self, Opcode::Load | Opcode::Store) || self.class() == InstrClass::VectorMemory
    }

    pub fn is_store(self) -> bool {
        matches!(
            self,
            Opcode::Store | Opcode::VstoreUnit | Opcode::VstoreStrided | Opcode::VstoreIndexed
        )
    }

    /// Allowed operand kinds, position 0 being the `dest` slot.
    fn signature(self) -> &'static [u8] {
        use Opcode::*;
        match self {
            Add | Mul => &[K_X, K_X, K_X | K_I],
            Load | Store => &[K_X | K_F, K_X, K_I],
            Branch => &[K_X, K_X, K_I],
            Cmp => &[K_X, K_X | K_F, K_X | K_F],
            Fadd | Fmul | Fdiv => &[K_F, K_F, K_F],
            FmaddUnfused => &[K_F, K_F, K_F, K_F],
            Vsetvl => &[K_X, K_X | K_I],
            Vfadd | Vfsub | Vfmul | Vfdiv => &[K_V, K_V | K_F, K_V | K_F],
            Vfmacc => &[K_V, K_V | K_F, K_V | K_F, K_V | K_F],
            VloadUnit | VstoreUnit => &[K_V, K_X],
            VloadStrided | VstoreStrided => &[K_V, K_X, K_I],
            VloadIndexed | VstoreIndexed => &[K_V, K_X, K_V],
            Vmv => &[K_V, K_V],
            Vbroadcast => &[K_V, K_F | K_X],
            Vslide => &[K_V, K_V, K_I],
        }
    }

    /// Number of source operands (excluding the `dest` slot).
    pub fn source_count(self) -> usize {
        self.signature().len() - 1
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

const K_X: u8 = 1;
const K_F: u8 = 2;
const K_V: u8 = 4;
const K_I: u8 = 8;

/// Returns the closed opcode set.
pub fn opcode_set() -> Vec<Opcode> {
    Opcode::ALL.to_vec()
}

pub fn classify(opcode: Opcode) -> InstrClass {
    opcode.class()
}

/// Classifies an opcode given by mnemonic; fails for anything outside the set.
pub fn classify_mnemonic(mnemonic: &str) -> Result<InstrClass, IsaError> {
    Opcode::from_mnemonic(mnemonic).map(Opcode::class)
}

pub const NUM_REGS: u8 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Reg {
    X(u8),
    F(u8),
    V(u8),
}

impl Reg {
    fn kind(self) -> u8 {
        match self {
            Reg::X(_) => K_X,
            Reg::F(_) => K_F,
            Reg::V(_) => K_V,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Reg::X(i) | Reg::F(i) | Reg::V(i) => i as usize,
        }
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Reg::X(i) => write!(f, "x{i}"),
            Reg::F(i) => write!(f, "f{i}"),
            Reg::V(i) => write!(f, "v{i}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Operand {
    Reg(Reg),
    Imm(i64),
}

impl Operand {
    fn kind(self) -> u8 {
        match self {
            Operand::Reg(r) => r.kind(),
            Operand::Imm(_) => K_I,
        }
    }
}

impl From<Reg> for Operand {
    fn from(r: Reg) -> Self {
        Operand::Reg(r)
    }
}

impl From<i64> for Operand {
    fn from(v: i64) -> Self {
        Operand::Imm(v)
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Reg(r) => r.fmt(f),
            Operand::Imm(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemMode {
    None,
    UnitStride,
    /// Byte stride between consecutive elements.
    Strided(i64),
    /// Byte offsets taken from the given vector register.
    Indexed(u8),
}

/// Element width in bits. Fixed: every element is a double.
pub const SEW: u32 = 64;

/// Vector configuration as set by `vsetvl`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VectorConfig {
    pub vl: usize,
    pub sew: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instruction {
    pub opcode: Opcode,
    pub dest: Reg,
    pub srcs: ArrayVec<Operand, 3>,
    /// Originating kernel phase (1..=8); 0 when untagged.
    pub phase: u8,
}

impl Instruction {
    /// Builds an instruction, checking operand count and kinds against the
    /// opcode's signature.
    pub fn new(opcode: Opcode, dest: Reg, srcs: &[Operand], phase: u8) -> Result<Instruction, String> {
        let sig = opcode.signature();
        if srcs.len() != sig.len() - 1 {
            return Err(format!(
                "`{opcode}` takes {} source operand(s), got {}",
                sig.len() - 1,
                srcs.len()
            ));
        }
        if dest.kind() & sig[0] == 0 {
            return Err(format!("`{opcode}`: bad first operand `{dest}`"));
        }
        for (i, (op, allowed)) in srcs.iter().zip(&sig[1..]).enumerate() {
            if op.kind() & allowed == 0 {
                return Err(format!("`{opcode}`: bad operand {} `{op}`", i + 2));
            }
        }
        if opcode == Opcode::Cmp && srcs[0].kind() != srcs[1].kind() {
            return Err("`cmp` operands must come from the same register file".into());
        }
        Ok(Instruction {
            opcode,
            dest,
            srcs: srcs.iter().copied().collect(),
            phase,
        })
    }

    pub fn class(&self) -> InstrClass {
        self.opcode.class()
    }

    pub fn mem_mode(&self) -> MemMode {
        use Opcode::*;
        match self.opcode {
            Load | Store | VloadUnit | VstoreUnit => MemMode::UnitStride,
            VloadStrided | VstoreStrided => match self.srcs[1] {
                Operand::Imm(s) => MemMode::Strided(s),
                Operand::Reg(_) => MemMode::None,
            },
            VloadIndexed | VstoreIndexed => match self.srcs[1] {
                Operand::Reg(Reg::V(i)) => MemMode::Indexed(i),
                _ => MemMode::None,
            },
            _ => MemMode::None,
        }
    }

    pub fn with_phase(mut self, phase: u8) -> Self {
        self.phase = phase;
        self
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.opcode, self.dest)?;
        for s in &self.srcs {
            write!(f, ", {s}")?;
        }
        if self.phase != 0 {
            write!(f, " #phase={}", self.phase)?;
        }
        Ok(())
    }
}

pub fn format_instruction(instr: &Instruction) -> String {
    instr.to_string()
}

pub fn parse_instruction(text: &str) -> Result<Instruction, IsaError> {
    match parse_line(text, 1)? {
        Some(i) => Ok(i),
        None => Err(IsaError::Syntax {
            line: 1,
            column: 1,
            message: "empty instruction".into(),
        }),
    }
}

/// Parses a whole listing; blank and comment-only lines are skipped.
pub fn parse_program(text: &str) -> Result<Vec<Instruction>, IsaError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if let Some(i) = parse_line(line, n + 1)? {
            out.push(i);
        }
    }
    Ok(out)
}

fn syntax(line: usize, column: usize, message: impl Into<String>) -> IsaError {
    IsaError::Syntax {
        line,
        column,
        message: message.into(),
    }
}

fn parse_line(text: &str, line: usize) -> Result<Option<Instruction>, IsaError> {
    let code = match text.find(';') {
        Some(p) => &text[..p],
        None => text,
    };
    let (body, tag) = match code.find('#') {
        Some(p) => (&code[..p], Some((p, &code[p..]))),
        None => (code, None),
    };
    if body.trim().is_empty() {
        if let Some((p, _)) = tag {
            return Err(syntax(line, p + 1, "phase tag without instruction"));
        }
        return Ok(None);
    }

    let phase = match tag {
        None => 0,
        Some((p, t)) => {
            let t = t.trim_end();
            let v = t
                .strip_prefix("#phase=")
                .ok_or_else(|| syntax(line, p + 1, "expected `#phase=N`"))?;
            v.parse::<u8>()
                .ok()
                .filter(|v| *v <= 8)
                .ok_or_else(|| syntax(line, p + 8, format!("invalid phase `{v}`")))?
        }
    };

    let start = body.len() - body.trim_start().len();
    let trimmed = body.trim();
    let (mnemonic, rest, rest_off) = match trimmed.find(char::is_whitespace) {
        Some(p) => (&trimmed[..p], &trimmed[p..], start + p),
        None => (trimmed, "", start + trimmed.len()),
    };
    let opcode = Opcode::from_mnemonic(mnemonic)?;

    let mut operands = Vec::new();
    if !rest.trim().is_empty() {
        let mut off = rest_off;
        for piece in rest.split(',') {
            let lead = piece.len() - piece.trim_start().len();
            let tok = piece.trim();
            let col = off + lead + 1;
            if tok.is_empty() {
                return Err(syntax(line, col, "missing operand"));
            }
            operands.push((parse_operand(tok, line, col)?, col));
            off += piece.len() + 1;
        }
    }
    if operands.is_empty() {
        return Err(syntax(line, rest_off + 1, format!("`{opcode}` needs operands")));
    }
    let (dest_op, dest_col) = operands[0];
    let dest = match dest_op {
        Operand::Reg(r) => r,
        Operand::Imm(_) => return Err(syntax(line, dest_col, "first operand must be a register")),
    };
    let srcs: Vec<Operand> = operands[1..].iter().map(|(o, _)| *o).collect();
    Instruction::new(opcode, dest, &srcs, phase)
        .map(Some)
        .map_err(|m| syntax(line, dest_col, m))
}

fn parse_operand(tok: &str, line: usize, column: usize) -> Result<Operand, IsaError> {
    let first = tok.chars().next().unwrap_or(' ');
    if matches!(first, 'x' | 'f' | 'v') && !tok.starts_with("0x") {
        let idx = tok[1..]
            .parse::<u8>()
            .ok()
            .filter(|i| *i < NUM_REGS)
            .ok_or_else(|| IsaError::UnknownRegister {
                line,
                column,
                name: tok.to_string(),
            })?;
        return Ok(Operand::Reg(match first {
            'x' => Reg::X(idx),
            'f' => Reg::F(idx),
            _ => Reg::V(idx),
        }));
    }
    let (neg, digits) = match tok.strip_prefix('-') {
        Some(d) => (true, d),
        None => (false, tok),
    };
    let parsed = match digits.strip_prefix("0x") {
        Some(h) => i64::from_str_radix(h, 16),
        None => digits.parse::<i64>(),
    };
    match parsed {
        Ok(v) => Ok(Operand::Imm(if neg { -v } else { v })),
        Err(_) if first.is_ascii_alphabetic() => Err(IsaError::UnknownRegister {
            line,
            column,
            name: tok.to_string(),
        }),
        Err(_) => Err(syntax(line, column, format!("invalid operand `{tok}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn opcode_set_membership_and_size() {
        let set = opcode_set();
        assert!(set.contains(&Opcode::Vfmacc));
        assert!(set.contains(&Opcode::Vsetvl));
        // 10 scalar + 1 config + 5 arithmetic + 6 memory + 3 control-lane
        assert_eq!(set.len(), 25);
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify(Opcode::Vsetvl), InstrClass::VectorConfig);
        assert_eq!(classify(Opcode::Vmv), InstrClass::VectorControlLane);
        assert_eq!(classify(Opcode::Vbroadcast), InstrClass::VectorControlLane);
        assert_eq!(classify(Opcode::Vslide), InstrClass::VectorControlLane);
        assert_eq!(classify(Opcode::Fadd), InstrClass::Scalar);
        assert_eq!(classify_mnemonic("vfmacc"), Ok(InstrClass::VectorArithmetic));
        assert_eq!(
            classify_mnemonic("vfsqrt"),
            Err(IsaError::UnknownOpcode("vfsqrt".into()))
        );
    }

    #[test]
    fn config_is_not_vector() {
        assert!(!InstrClass::VectorConfig.is_vector());
        assert!(!InstrClass::Scalar.is_vector());
        assert!(InstrClass::VectorMemory.is_vector());
    }

    #[test]
    fn parse_examples() {
        let i = parse_instruction("vfmacc v1, v2, v3, v1 #phase=6").unwrap();
        assert_eq!(i.opcode, Opcode::Vfmacc);
        assert_eq!(i.class(), InstrClass::VectorArithmetic);
        assert_eq!(i.phase, 6);

        let i = parse_instruction("vsetvl x5, 240").unwrap();
        assert_eq!(i.opcode, Opcode::Vsetvl);
        assert_eq!(i.class(), InstrClass::VectorConfig);
        assert_eq!(i.srcs[0], Operand::Imm(240));

        let i = parse_instruction("vload_indexed v4, x10, v7 #phase=2").unwrap();
        assert_eq!(i.mem_mode(), MemMode::Indexed(7));
        assert_eq!(i.phase, 2);
    }

    #[test]
    fn parse_errors_carry_position() {
        match parse_instruction("vfadd v1, v2, v99") {
            Err(IsaError::UnknownRegister { line, column, name }) => {
                assert_eq!((line, column, name.as_str()), (1, 15, "v99"));
            }
            other => panic!("unexpected {other:?}"),
        }
        match parse_instruction("vfadd v1, , v2") {
            Err(IsaError::Syntax { column, .. }) => assert_eq!(column, 11),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_instruction("frobnicate x1, x2"),
            Err(IsaError::UnknownOpcode(_))
        ));
        assert!(matches!(
            parse_instruction("vfadd v1, v2"),
            Err(IsaError::Syntax { .. })
        ));
        assert!(matches!(
            parse_instruction("cmp x1, x2, f3"),
            Err(IsaError::Syntax { .. })
        ));
    }

    #[test]
    fn program_skips_comments_and_reports_lines() {
        let src = "; header\nvsetvl x5, 8\n\n  vfadd v1, v2, v3 ; sum\n";
        let prog = parse_program(src).unwrap();
        assert_eq!(prog.len(), 2);
        match parse_program("vsetvl x5, 8\nadd x1, x2, q3") {
            Err(IsaError::UnknownRegister { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn strided_mode_and_format() {
        let i = parse_instruction("vstore_strided v2, x3, 0x600 #phase=2").unwrap();
        assert_eq!(i.mem_mode(), MemMode::Strided(0x600));
        assert_eq!(i.to_string(), "vstore_strided v2, x3, 1536 #phase=2");
        let i = parse_instruction("add x1, x1, -8").unwrap();
        assert_eq!(i.srcs[1], Operand::Imm(-8));
        assert_eq!(parse_instruction("vfadd v1, v2, v3").unwrap().mem_mode(), MemMode::None);
    }

    #[test]
    fn class_and_opcode_codes_round_trip() {
        for op in Opcode::ALL {
            assert_eq!(Opcode::from_code(op.code()).unwrap(), *op);
        }
        for c in InstrClass::ALL {
            assert_eq!(InstrClass::from_code(c.code()).unwrap(), c);
            assert_eq!(c.name().parse::<InstrClass>().unwrap(), c);
        }
        assert!(Opcode::from_code(25).is_err());
        assert!(InstrClass::from_code(5).is_err());
    }
}
