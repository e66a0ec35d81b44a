mod common;

use std::collections::BTreeMap;
use std::io::Cursor;

use common::arb_event;
use proptest::prelude::*;
use veclens_core::metrics::{aggregate, Group, GroupBy, RawCounters};
use veclens_core::tracefmt::{
    export_csv, parse_events_csv, read_aggregated, read_counters, read_trace, write_aggregated, write_events_csv,
    write_trace, write_trace_stream, TraceError, HEADER_LEN, RECORD_LEN,
};
use veclens_core::vvm::TraceEvent;

fn encode(events: &[TraceEvent]) -> Vec<u8> {
    let mut cur = Cursor::new(Vec::new());
    write_trace(events, &mut cur, 256).unwrap();
    cur.into_inner()
}

proptest! {
    #[test]
    fn binary_round_trip(events in prop::collection::vec(arb_event(256), 0..200)) {
        let bytes = encode(&events);
        prop_assert_eq!(bytes.len() as u64, HEADER_LEN + RECORD_LEN * events.len() as u64);
        let (h, back) = read_trace(&bytes[..]).unwrap();
        prop_assert_eq!(h.record_count, events.len() as u64);
        prop_assert_eq!(h.vl_max, 256);
        prop_assert_eq!(back, events);
    }

    #[test]
    fn streaming_round_trip(events in prop::collection::vec(arb_event(512), 0..100)) {
        let mut out = Vec::new();
        let n = write_trace_stream(&events, &mut out, 512).unwrap();
        prop_assert_eq!(n, events.len() as u64);
        prop_assert_eq!(out.len() as u64, HEADER_LEN + RECORD_LEN * n);
        let (h, back) = read_trace(&out[..]).unwrap();
        prop_assert_eq!(h.record_count, 0);
        prop_assert_eq!(back, events);
    }

    #[test]
    fn csv_round_trip(events in prop::collection::vec(arb_event(256), 0..100)) {
        let mut direct = Vec::new();
        let rows = write_events_csv(&events, &mut direct).unwrap();
        prop_assert_eq!(rows, events.len() as u64);
        let mut exported = Vec::new();
        export_csv(&encode(&events)[..], &mut exported).unwrap();
        prop_assert_eq!(&direct, &exported);
        let text = String::from_utf8(direct).unwrap();
        prop_assert_eq!(text.lines().count(), events.len() + 1);
        prop_assert_eq!(parse_events_csv(&text).unwrap(), events);
    }

    #[test]
    fn truncation_always_detected(events in prop::collection::vec(arb_event(256), 1..40), cut in any::<prop::sample::Index>()) {
        let bytes = encode(&events);
        let len = cut.index(bytes.len());
        match read_trace(&bytes[..len]) {
            Err(TraceError::NotATrace) => prop_assert!(len < 4),
            Err(TraceError::TruncatedTrace { offset }) => {
                if len >= HEADER_LEN as usize {
                    let expect = HEADER_LEN + (len as u64 - HEADER_LEN) / RECORD_LEN * RECORD_LEN;
                    prop_assert_eq!(offset, expect);
                }
            }
            other => prop_assert!(false, "cut at {} of {}: {:?}", len, bytes.len(), other.map(|r| r.1.len())),
        }
    }

    #[test]
    fn streaming_truncation_detected(events in prop::collection::vec(arb_event(256), 1..40), drop in 1usize..20) {
        let mut out = Vec::new();
        write_trace_stream(&events, &mut out, 256).unwrap();
        out.truncate(out.len() - drop);
        let is_truncated = matches!(read_trace(&out[..]), Err(TraceError::TruncatedTrace { .. }));
        prop_assert!(is_truncated);
    }

    #[test]
    fn aggregated_round_trip_matches_recount(events in prop::collection::vec(arb_event(256), 0..200)) {
        let per_phase: BTreeMap<u8, RawCounters> = aggregate(&events, GroupBy::Phase)
            .into_iter()
            .filter_map(|(g, rc)| match g {
                Group::Phase(p) => Some((p, rc)),
                Group::WholeRun => None,
            })
            .collect();
        let mut agg = Vec::new();
        write_aggregated(&mut agg, 256, &per_phase).unwrap();
        let (h, back) = read_aggregated(&agg[..]).unwrap();
        prop_assert!(h.aggregated());
        prop_assert_eq!(&back, &per_phase);
        let (_, from_full) = read_counters(&encode(&events)[..]).unwrap();
        prop_assert_eq!(&from_full, &per_phase);
        let (_, from_agg) = read_counters(&agg[..]).unwrap();
        prop_assert_eq!(from_agg, per_phase);
    }
}

#[test]
fn fixed_sizes() {
    assert_eq!(encode(&[]).len(), 16);
    let ev = TraceEvent {
        seq: 0,
        phase: 1,
        opcode: veclens_core::isa::Opcode::Add,
        class: veclens_core::isa::InstrClass::Scalar,
        vl: 0,
        cycles: 1,
        l1_misses: 0,
        l2_misses: 0,
    };
    assert_eq!(encode(&[ev, ev, ev]).len(), 76);
    let mut csv = Vec::new();
    export_csv(&encode(&[])[..], &mut csv).unwrap();
    assert_eq!(
        String::from_utf8(csv).unwrap(),
        "seq,phase,class,opcode,vl,cycles,l1_misses,l2_misses\n"
    );
}

#[test]
fn bad_magic_and_version() {
    let mut b = encode(&[]);
    b[0] = b'X';
    assert!(matches!(read_trace(&b[..]), Err(TraceError::NotATrace)));
    let mut b = encode(&[]);
    b[4] = 9;
    assert!(matches!(read_trace(&b[..]), Err(TraceError::VersionUnsupported(9))));
}
