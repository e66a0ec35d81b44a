use proptest::prelude::*;
use proptest::strategy::ValueTree;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use veclens_core::isa::{format_instruction, parse_instruction, parse_program, Instruction, Opcode, Operand, Reg};

fn random_reg(rng: &mut ChaCha8Rng) -> Reg {
    let i = rng.random_range(0..32u8);
    match rng.random_range(0..3) {
        0 => Reg::X(i),
        1 => Reg::F(i),
        _ => Reg::V(i),
    }
}

fn random_operand(rng: &mut ChaCha8Rng) -> Operand {
    if rng.random_bool(0.25) {
        let imm: i64 = rng.random();
        Operand::Imm(imm >> rng.random_range(0..64))
    } else {
        Operand::Reg(random_reg(rng))
    }
}

/// Draws operand lists until one satisfies the opcode's signature.
fn arb_instruction() -> impl Strategy<Value = Instruction> {
    (prop::sample::select(Opcode::ALL), any::<u64>(), 0u8..=8).prop_map(|(op, seed, phase)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let dest = random_reg(&mut rng);
            let srcs: Vec<Operand> = (0..op.source_count()).map(|_| random_operand(&mut rng)).collect();
            if let Ok(i) = Instruction::new(op, dest, &srcs, phase) {
                return i;
            }
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn parse_format_identity(instr in arb_instruction()) {
        let text = format_instruction(&instr);
        prop_assert_eq!(parse_instruction(&text).unwrap(), instr);
    }

    #[test]
    fn program_round_trip(prog in prop::collection::vec(arb_instruction(), 0..30)) {
        let text: String = prog.iter().map(|i| format!("{i}\n")).collect();
        prop_assert_eq!(parse_program(&text).unwrap(), prog);
    }
}

#[test]
fn every_opcode_is_reachable() {
    let mut runner = proptest::test_runner::TestRunner::deterministic();
    let mut seen = std::collections::HashSet::new();
    let strat = arb_instruction();
    for _ in 0..5000 {
        let i = strat.new_tree(&mut runner).unwrap().current();
        seen.insert(i.opcode);
    }
    assert_eq!(seen.len(), Opcode::ALL.len());
}
