//! VTRC binary trace files and their CSV form.
//!
//! All integers are little-endian, no padding.
//!
//! Header, 16 bytes:
//!
//! | offset | width | field |
//! |-------:|------:|-------|
//! | 0  | 4 | magic `VTRC` (`56 54 52 43`) |
//! | 4  | 2 | version, currently 1 |
//! | 6  | 2 | `vl_max` |
//! | 8  | 2 | flags; bit 0 set for aggregated files |
//! | 10 | 6 | record count (48-bit), 0 when unknown |
//!
//! Per-instruction record, 20 bytes:
//!
//! | offset | width | field |
//! |-------:|------:|-------|
//! | 0  | 6 | seq (48-bit) |
//! | 6  | 1 | phase |
//! | 7  | 1 | class code |
//! | 8  | 2 | opcode code |
//! | 10 | 2 | vl |
//! | 12 | 4 | cycles |
//! | 16 | 2 | L1 misses |
//! | 18 | 2 | L2 misses |
//!
//! Aggregated record, 120 bytes: fifteen u64 in the order phase, `c_t`, `c_v`,
//! `i_t`, `i_v`, `i_cfg`, `sum_vl`, `m_l1`, `m_l2`, `i_mem` and the five
//! per-class instruction counts.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Read, Seek, SeekFrom, Write};

use thiserror::Error;

use crate::isa::{InstrClass, Opcode};
use crate::metrics::RawCounters;
use crate::vvm::{TraceEvent, TraceSink};

pub const MAGIC: [u8; 4] = *b"VTRC";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: u64 = 16;
pub const RECORD_LEN: u64 = 20;
pub const AGG_RECORD_LEN: u64 = 120;
pub const FLAG_AGGREGATED: u16 = 1;
pub const MAX_U48: u64 = (1 << 48) - 1;

pub const CSV_HEADER: &str = "seq,phase,class,opcode,vl,cycles,l1_misses,l2_misses";

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("not a VTRC trace")]
    NotATrace,
    #[error("trace truncated at byte offset {offset}")]
    TruncatedTrace { offset: u64 },
    #[error("unsupported trace version {0}")]
    VersionUnsupported(u16),
    #[error("corrupt record at byte offset {offset}: {reason}")]
    CorruptRecord { offset: u64, reason: String },
    #[error("expected {expected} trace, found the other kind")]
    WrongKind { expected: &'static str },
    #[error("value {0} does not fit in 48 bits")]
    Overflow(u64),
    #[error("I/O error after {bytes_written} bytes written: {source}")]
    Write { bytes_written: u64, source: io::Error },
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("CSV line {line}: {reason}")]
    Csv { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceHeader {
    pub version: u16,
    pub vl_max: u16,
    pub flags: u16,
    pub record_count: u64,
}

impl TraceHeader {
    pub fn new(vl_max: u16, aggregated: bool) -> Self {
        TraceHeader {
            version: VERSION,
            vl_max,
            flags: if aggregated { FLAG_AGGREGATED } else { 0 },
            record_count: 0,
        }
    }

    pub fn aggregated(&self) -> bool {
        self.flags & FLAG_AGGREGATED != 0
    }

    pub fn encode(&self) -> [u8; HEADER_LEN as usize] {
        let mut b = [0u8; HEADER_LEN as usize];
        b[0..4].copy_from_slice(&MAGIC);
        b[4..6].copy_from_slice(&self.version.to_le_bytes());
        b[6..8].copy_from_slice(&self.vl_max.to_le_bytes());
        b[8..10].copy_from_slice(&self.flags.to_le_bytes());
        b[10..16].copy_from_slice(&self.record_count.to_le_bytes()[..6]);
        b
    }

    pub fn decode(b: &[u8; HEADER_LEN as usize]) -> Result<Self, TraceError> {
        if b[0..4] != MAGIC {
            return Err(TraceError::NotATrace);
        }
        let version = u16::from_le_bytes([b[4], b[5]]);
        if version != VERSION {
            return Err(TraceError::VersionUnsupported(version));
        }
        Ok(TraceHeader {
            version,
            vl_max: u16::from_le_bytes([b[6], b[7]]),
            flags: u16::from_le_bytes([b[8], b[9]]),
            record_count: u48(&b[10..16]),
        })
    }
}

fn u48(b: &[u8]) -> u64 {
    let mut w = [0u8; 8];
    w[..6].copy_from_slice(&b[..6]);
    u64::from_le_bytes(w)
}

pub fn encode_record(ev: &TraceEvent) -> Result<[u8; RECORD_LEN as usize], TraceError> {
    if ev.seq > MAX_U48 {
        return Err(TraceError::Overflow(ev.seq));
    }
    let mut b = [0u8; RECORD_LEN as usize];
    b[0..6].copy_from_slice(&ev.seq.to_le_bytes()[..6]);
    b[6] = ev.phase;
    b[7] = ev.class.code();
    b[8..10].copy_from_slice(&ev.opcode.code().to_le_bytes());
    b[10..12].copy_from_slice(&ev.vl.to_le_bytes());
    b[12..16].copy_from_slice(&ev.cycles.to_le_bytes());
    b[16..18].copy_from_slice(&ev.l1_misses.to_le_bytes());
    b[18..20].copy_from_slice(&ev.l2_misses.to_le_bytes());
    Ok(b)
}

/// Decodes one record; `offset` is only used for error reporting.
pub fn decode_record(b: &[u8; RECORD_LEN as usize], offset: u64) -> Result<TraceEvent, TraceError> {
    let corrupt = |reason: String| TraceError::CorruptRecord { offset, reason };
    let class = InstrClass::from_code(b[7]).map_err(|e| corrupt(e.to_string()))?;
    let opcode = Opcode::from_code(u16::from_le_bytes([b[8], b[9]])).map_err(|e| corrupt(e.to_string()))?;
    if opcode.class() != class {
        return Err(corrupt(format!("class {class} does not match opcode {opcode}")));
    }
    Ok(TraceEvent {
        seq: u48(&b[0..6]),
        phase: b[6],
        opcode,
        class,
        vl: u16::from_le_bytes([b[10], b[11]]),
        cycles: u32::from_le_bytes([b[12], b[13], b[14], b[15]]),
        l1_misses: u16::from_le_bytes([b[16], b[17]]),
        l2_misses: u16::from_le_bytes([b[18], b[19]]),
    })
}

/// Streaming record writer. The header is written on construction with a
/// record count of 0.
pub struct TraceWriter<W: Write> {
    inner: W,
    header: TraceHeader,
    records: u64,
    bytes: u64,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(inner: W, vl_max: u16) -> Result<Self, TraceError> {
        Self::with_header(inner, TraceHeader::new(vl_max, false))
    }

    fn with_header(inner: W, header: TraceHeader) -> Result<Self, TraceError> {
        let mut w = TraceWriter {
            inner,
            header,
            records: 0,
            bytes: 0,
        };
        w.put(&header.encode())?;
        Ok(w)
    }

    fn put(&mut self, bytes: &[u8]) -> Result<(), TraceError> {
        self.inner.write_all(bytes).map_err(|source| TraceError::Write {
            bytes_written: self.bytes,
            source,
        })?;
        self.bytes += bytes.len() as u64;
        Ok(())
    }

    pub fn write_event(&mut self, ev: &TraceEvent) -> Result<(), TraceError> {
        if self.header.aggregated() {
            return Err(TraceError::WrongKind { expected: "aggregated" });
        }
        let rec = encode_record(ev)?;
        self.put(&rec)?;
        self.records += 1;
        Ok(())
    }

    pub fn records(&self) -> u64 {
        self.records
    }

    /// Flushes and returns the destination and the number of records written.
    pub fn finish(mut self) -> Result<(W, u64), TraceError> {
        let bytes_written = self.bytes;
        self.inner
            .flush()
            .map_err(|source| TraceError::Write { bytes_written, source })?;
        Ok((self.inner, self.records))
    }
}

impl<W: Write + Seek> TraceWriter<W> {
    /// Like [`finish`](Self::finish), then rewrites the header with the final
    /// record count.
    pub fn finish_and_patch(mut self) -> Result<(W, u64), TraceError> {
        if self.records > MAX_U48 {
            return Err(TraceError::Overflow(self.records));
        }
        let bytes_written = self.bytes;
        let wrap = |source| TraceError::Write { bytes_written, source };
        self.header.record_count = self.records;
        let end = self.inner.stream_position().map_err(wrap)?;
        self.inner.seek(SeekFrom::Start(end - self.bytes)).map_err(wrap)?;
        self.inner.write_all(&self.header.encode()).map_err(wrap)?;
        self.inner.seek(SeekFrom::Start(end)).map_err(wrap)?;
        self.finish()
    }
}

impl<W: Write> TraceSink for TraceWriter<W> {
    fn accept(&mut self, event: &TraceEvent) -> io::Result<()> {
        self.write_event(event).map_err(|e| match e {
            TraceError::Write { source, .. } => source,
            other => io::Error::other(other),
        })
    }
}

/// Writes a complete per-instruction trace to a seekable destination and
/// patches the header record count.
pub fn write_trace<'a, I, W>(events: I, dest: W, vl_max: u16) -> Result<u64, TraceError>
where
    I: IntoIterator<Item = &'a TraceEvent>,
    W: Write + Seek,
{
    let mut w = TraceWriter::new(dest, vl_max)?;
    for ev in events {
        w.write_event(ev)?;
    }
    Ok(w.finish_and_patch()?.1)
}

/// Writes a per-instruction trace to a non-seekable destination; the header
/// record count stays 0.
pub fn write_trace_stream<'a, I, W>(events: I, dest: W, vl_max: u16) -> Result<u64, TraceError>
where
    I: IntoIterator<Item = &'a TraceEvent>,
    W: Write,
{
    let mut w = TraceWriter::new(dest, vl_max)?;
    for ev in events {
        w.write_event(ev)?;
    }
    Ok(w.finish()?.1)
}

/// Fills `buf` as far as possible; returns the number of bytes read.
fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut n = 0;
    while n < buf.len() {
        match r.read(&mut buf[n..]) {
            Ok(0) => break,
            Ok(k) => n += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(n)
}

fn read_header<R: Read>(r: &mut R) -> Result<TraceHeader, TraceError> {
    let mut b = [0u8; HEADER_LEN as usize];
    let n = read_full(r, &mut b)?;
    if n < 4 || b[0..4] != MAGIC {
        return Err(TraceError::NotATrace);
    }
    if n < HEADER_LEN as usize {
        return Err(TraceError::TruncatedTrace { offset: 0 });
    }
    TraceHeader::decode(&b)
}

/// Streaming decoder over per-instruction records.
///
/// With a non-zero declared count exactly that many records are read and
/// nothing beyond them. With a count of 0, records are read until end of
/// input. A partial record is always an error.
pub struct TraceReader<R: Read> {
    inner: R,
    header: TraceHeader,
    read: u64,
    done: bool,
}

impl<R: Read> TraceReader<R> {
    pub fn new(mut inner: R) -> Result<Self, TraceError> {
        let header = read_header(&mut inner)?;
        if header.aggregated() {
            return Err(TraceError::WrongKind {
                expected: "per-instruction",
            });
        }
        Ok(TraceReader {
            inner,
            header,
            read: 0,
            done: false,
        })
    }

    pub fn header(&self) -> &TraceHeader {
        &self.header
    }

    fn next_record(&mut self) -> Result<Option<TraceEvent>, TraceError> {
        let declared = self.header.record_count;
        if declared != 0 && self.read == declared {
            return Ok(None);
        }
        let offset = HEADER_LEN + self.read * RECORD_LEN;
        let mut b = [0u8; RECORD_LEN as usize];
        let n = read_full(&mut self.inner, &mut b)?;
        if n == 0 && declared == 0 {
            return Ok(None);
        }
        if n < RECORD_LEN as usize {
            return Err(TraceError::TruncatedTrace { offset });
        }
        self.read += 1;
        decode_record(&b, offset).map(Some)
    }
}

impl<R: Read> Iterator for TraceReader<R> {
    type Item = Result<TraceEvent, TraceError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.next_record() {
            Ok(Some(ev)) => Some(Ok(ev)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

pub fn read_trace<R: Read>(source: R) -> Result<(TraceHeader, Vec<TraceEvent>), TraceError> {
    let reader = TraceReader::new(source)?;
    let header = *reader.header();
    let events = reader.collect::<Result<Vec<_>, _>>()?;
    Ok((header, events))
}

fn counters_to_words(phase: u8, rc: &RawCounters) -> [u64; 15] {
    let c = rc.class_counts;
    [
        phase as u64,
        rc.c_t,
        rc.c_v,
        rc.i_t,
        rc.i_v,
        rc.i_cfg,
        rc.sum_vl,
        rc.m_l1,
        rc.m_l2,
        rc.i_mem,
        c[0],
        c[1],
        c[2],
        c[3],
        c[4],
    ]
}

/// Writes one aggregated record per phase.
pub fn write_aggregated<W: Write>(
    dest: W,
    vl_max: u16,
    per_phase: &BTreeMap<u8, RawCounters>,
) -> Result<u64, TraceError> {
    let mut header = TraceHeader::new(vl_max, true);
    header.record_count = per_phase.len() as u64;
    let mut w = TraceWriter::with_header(dest, header)?;
    for (phase, rc) in per_phase {
        let mut buf = [0u8; AGG_RECORD_LEN as usize];
        for (i, word) in counters_to_words(*phase, rc).iter().enumerate() {
            buf[i * 8..i * 8 + 8].copy_from_slice(&word.to_le_bytes());
        }
        w.put(&buf)?;
        w.records += 1;
    }
    Ok(w.finish()?.1)
}

pub fn read_aggregated<R: Read>(mut source: R) -> Result<(TraceHeader, BTreeMap<u8, RawCounters>), TraceError> {
    let header = read_header(&mut source)?;
    if !header.aggregated() {
        return Err(TraceError::WrongKind { expected: "aggregated" });
    }
    let mut out = BTreeMap::new();
    for i in 0..header.record_count {
        let offset = HEADER_LEN + i * AGG_RECORD_LEN;
        let mut b = [0u8; AGG_RECORD_LEN as usize];
        if read_full(&mut source, &mut b)? < b.len() {
            return Err(TraceError::TruncatedTrace { offset });
        }
        let w: Vec<u64> = b
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap_or([0; 8])))
            .collect();
        let phase = u8::try_from(w[0]).map_err(|_| TraceError::CorruptRecord {
            offset,
            reason: format!("phase {} out of range", w[0]),
        })?;
        let rc = RawCounters {
            c_t: w[1],
            c_v: w[2],
            i_t: w[3],
            i_v: w[4],
            i_cfg: w[5],
            sum_vl: w[6],
            m_l1: w[7],
            m_l2: w[8],
            i_mem: w[9],
            class_counts: [w[10], w[11], w[12], w[13], w[14]],
        };
        out.insert(phase, rc);
    }
    Ok((header, out))
}

/// Either kind of trace file, folded to per-phase counters.
pub fn read_counters<R: Read>(source: R) -> Result<(TraceHeader, BTreeMap<u8, RawCounters>), TraceError> {
    let mut source = io::BufReader::new(source);
    let peek = source.fill_buf()?;
    let aggregated =
        peek.len() >= 10 && peek[0..4] == MAGIC && u16::from_le_bytes([peek[8], peek[9]]) & FLAG_AGGREGATED != 0;
    if aggregated {
        return read_aggregated(source);
    }
    let reader = TraceReader::new(source)?;
    let header = *reader.header();
    let mut out: BTreeMap<u8, RawCounters> = BTreeMap::new();
    for ev in reader {
        let ev = ev?;
        out.entry(ev.phase).or_default().record(&ev);
    }
    Ok((header, out))
}

pub fn csv_row(ev: &TraceEvent) -> String {
    format!(
        "{},{},{},{},{},{},{},{}",
        ev.seq, ev.phase, ev.class, ev.opcode, ev.vl, ev.cycles, ev.l1_misses, ev.l2_misses
    )
}

/// Writes the CSV form of an event list; returns the number of data rows.
pub fn write_events_csv<'a, I, W>(events: I, mut dest: W) -> Result<u64, TraceError>
where
    I: IntoIterator<Item = &'a TraceEvent>,
    W: Write,
{
    writeln!(dest, "{CSV_HEADER}")?;
    let mut n = 0;
    for ev in events {
        writeln!(dest, "{}", csv_row(ev))?;
        n += 1;
    }
    dest.flush()?;
    Ok(n)
}

/// Streams a binary per-instruction trace to CSV.
pub fn export_csv<R: Read, W: Write>(source: R, mut dest: W) -> Result<u64, TraceError> {
    writeln!(dest, "{CSV_HEADER}")?;
    let mut n = 0;
    for ev in TraceReader::new(source)? {
        writeln!(dest, "{}", csv_row(&ev?))?;
        n += 1;
    }
    dest.flush()?;
    Ok(n)
}

/// Parses CSV produced by [`write_events_csv`] or [`export_csv`].
pub fn parse_events_csv(text: &str) -> Result<Vec<TraceEvent>, TraceError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        _ => {
            return Err(TraceError::Csv {
                line: 1,
                reason: "missing header".into(),
            })
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let err = |reason: String| TraceError::Csv { line: i + 1, reason };
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 8 {
            return Err(err(format!("expected 8 fields, got {}", f.len())));
        }
        let num = |s: &str| s.parse::<u64>().map_err(|e| err(format!("`{s}`: {e}")));
        let class: InstrClass = f[2].parse().map_err(|e: crate::isa::IsaError| err(e.to_string()))?;
        let opcode = Opcode::from_mnemonic(f[3]).map_err(|e| err(e.to_string()))?;
        let narrow = |v: u64, max: u64| {
            if v > max {
                Err(err(format!("{v} out of range")))
            } else {
                Ok(v)
            }
        };
        out.push(TraceEvent {
            seq: narrow(num(f[0])?, MAX_U48)?,
            phase: narrow(num(f[1])?, u8::MAX as u64)? as u8,
            class,
            opcode,
            vl: narrow(num(f[4])?, u16::MAX as u64)? as u16,
            cycles: narrow(num(f[5])?, u32::MAX as u64)? as u32,
            l1_misses: narrow(num(f[6])?, u16::MAX as u64)? as u16,
            l2_misses: narrow(num(f[7])?, u16::MAX as u64)? as u16,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn sample() -> Vec<TraceEvent> {
        [Opcode::Vsetvl, Opcode::VloadUnit, Opcode::Add]
            .iter()
            .enumerate()
            .map(|(i, op)| TraceEvent {
                seq: i as u64,
                phase: 2,
                opcode: *op,
                class: op.class(),
                vl: if op.class().is_vector() || *op == Opcode::Vsetvl {
                    240
                } else {
                    0
                },
                cycles: 40 + i as u32,
                l1_misses: i as u16,
                l2_misses: 0,
            })
            .collect()
    }

    #[test]
    fn sizes() {
        let mut c = Cursor::new(Vec::new());
        assert_eq!(write_trace(&[], &mut c, 256).unwrap(), 0);
        assert_eq!(c.get_ref().len(), 16);
        let mut c = Cursor::new(Vec::new());
        assert_eq!(write_trace(&sample(), &mut c, 256).unwrap(), 3);
        assert_eq!(c.get_ref().len(), 76);
        assert_eq!(&c.get_ref()[0..4], b"VTRC");
        assert_eq!(c.get_ref()[10], 3);
    }

    #[test]
    fn round_trip_and_stream_count() {
        let mut c = Cursor::new(Vec::new());
        write_trace(&sample(), &mut c, 256).unwrap();
        let (h, evs) = read_trace(Cursor::new(c.into_inner())).unwrap();
        assert_eq!(h.record_count, 3);
        assert_eq!(h.vl_max, 256);
        assert_eq!(evs, sample());

        let mut v = Vec::new();
        write_trace_stream(&sample(), &mut v, 256).unwrap();
        assert_eq!(&v[10..16], &[0; 6]);
        assert_eq!(read_trace(&v[..]).unwrap().1, sample());
    }

    #[test]
    fn reader_errors() {
        let mut c = Cursor::new(Vec::new());
        write_trace(&sample(), &mut c, 256).unwrap();
        let bytes = c.into_inner();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_trace(&bad[..]), Err(TraceError::NotATrace)));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(read_trace(&bad[..]), Err(TraceError::VersionUnsupported(9))));
        assert!(matches!(
            read_trace(&bytes[..16 + 20 + 7]),
            Err(TraceError::TruncatedTrace { offset: 36 })
        ));
        assert!(matches!(
            read_trace(&bytes[..16 + 40]),
            Err(TraceError::TruncatedTrace { offset: 56 })
        ));
        assert!(matches!(
            read_trace(&bytes[..9]),
            Err(TraceError::TruncatedTrace { offset: 0 })
        ));
        let mut bad = bytes.clone();
        bad[16 + 7] = 2; // class of vsetvl record
        assert!(matches!(
            read_trace(&bad[..]),
            Err(TraceError::CorruptRecord { offset: 16, .. })
        ));
        // a declared count stops the reader before trailing bytes
        let mut extra = bytes.clone();
        extra.extend_from_slice(&[0xff; 7]);
        assert_eq!(read_trace(&extra[..]).unwrap().1.len(), 3);
    }

    #[test]
    fn csv_round_trip() {
        let mut out = Vec::new();
        assert_eq!(write_events_csv(&[], &mut out).unwrap(), 0);
        assert_eq!(String::from_utf8(out).unwrap(), format!("{CSV_HEADER}\n"));
        let mut c = Cursor::new(Vec::new());
        write_trace(&sample(), &mut c, 256).unwrap();
        let mut out = Vec::new();
        assert_eq!(export_csv(Cursor::new(c.into_inner()), &mut out).unwrap(), 3);
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert_eq!(text.lines().nth(1).unwrap(), "0,2,VectorConfig,vsetvl,240,40,0,0");
        assert_eq!(parse_events_csv(&text).unwrap(), sample());
    }

    #[test]
    fn aggregated_round_trip() {
        let mut per = BTreeMap::new();
        for ev in sample() {
            per.entry(ev.phase).or_insert_with(RawCounters::default).record(&ev);
        }
        per.insert(
            7,
            RawCounters {
                c_t: u64::MAX,
                ..Default::default()
            },
        );
        let mut v = Vec::new();
        assert_eq!(write_aggregated(&mut v, 256, &per).unwrap(), 2);
        assert_eq!(v.len() as u64, HEADER_LEN + 2 * AGG_RECORD_LEN);
        let (h, back) = read_aggregated(&v[..]).unwrap();
        assert!(h.aggregated());
        assert_eq!(back, per);
        assert_eq!(read_counters(&v[..]).unwrap().1, per);
        assert!(matches!(read_trace(&v[..]), Err(TraceError::WrongKind { .. })));
        assert!(matches!(
            read_aggregated(&v[..v.len() - 1]),
            Err(TraceError::TruncatedTrace { offset: 136 })
        ));
    }
}
