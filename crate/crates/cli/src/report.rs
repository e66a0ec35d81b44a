//! `analyze`, `compare`, `regress` and `export`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use veclens_core::metrics::{
    compute_metrics, fmt_opt, fmt_sig6, ols_columns, phase_weight_table, total, write_counters_csv, Group, RawCounters,
};
use veclens_core::tracefmt::{export_csv, read_counters, TraceHeader, HEADER_LEN};

use crate::fsio::write_atomic;
use crate::{table, CliError, Format};

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Usage(format!("cannot open {}: {e}", path.display())))
}

fn vl_max_of(h: &TraceHeader) -> usize {
    if h.vl_max == 0 {
        256
    } else {
        h.vl_max as usize
    }
}

pub fn cmd_analyze(trace: &Path, phases: Option<&[u8]>, format: Format) -> Result<(), CliError> {
    let (header, mut per_phase) = read_counters(open(trace)?)?;
    if let Some(keep) = phases {
        per_phase.retain(|p, _| keep.contains(p));
    }
    let vl_max = vl_max_of(&header);
    let mut groups: BTreeMap<Group, RawCounters> = per_phase.iter().map(|(p, rc)| (Group::Phase(*p), *rc)).collect();
    if !per_phase.is_empty() {
        groups.insert(Group::WholeRun, total(per_phase.values()));
    }
    let weights = phase_weight_table(&per_phase).unwrap_or_default();
    let weight_rows: Vec<Vec<String>> = weights.iter().map(|(p, w)| vec![p.to_string(), fmt_sig6(*w)]).collect();
    let out = io::stdout();
    let mut out = out.lock();
    let werr = CliError::io("writing report");
    match format {
        Format::Csv => {
            let mut buf = Vec::new();
            write_counters_csv(&mut buf, &groups, vl_max).map_err(CliError::io("writing report"))?;
            buf.extend_from_slice(b"\n");
            buf.extend_from_slice(table::csv(&["phase", "weight_pct"], &weight_rows).as_bytes());
            out.write_all(&buf).map_err(werr)
        }
        Format::Text => {
            let rows: Vec<Vec<String>> = groups
                .iter()
                .map(|(g, rc)| {
                    let m = compute_metrics(rc, vl_max);
                    let name = match g {
                        Group::Phase(p) => format!("phase{p}"),
                        Group::WholeRun => "all".into(),
                    };
                    let mut r = vec![name, rc.c_t.to_string(), rc.i_t.to_string(), rc.i_v.to_string()];
                    r.extend(
                        [m.m_v, m.a_v, m.c_v, m.avl, m.e_v, rc.l1_mpki(), rc.mem_pct()]
                            .map(|v| v.map(fmt_sig6).unwrap_or_else(|| "-".into())),
                    );
                    r
                })
                .collect();
            let text = format!(
                "metrics (vl_max {vl_max}):\n{}\nphase weights (% of cycles):\n{}",
                table::render(
                    &["group", "c_t", "i_t", "i_v", "M_v", "A_v", "C_v", "AVL", "E_v", "l1_mpki", "mem_pct"],
                    &rows
                ),
                table::render(&["phase", "weight_pct"], &weight_rows)
            );
            out.write_all(text.as_bytes()).map_err(werr)
        }
    }
}

/// A summary.csv held in memory.
pub struct Summary {
    pub path: PathBuf,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Summary {
    pub fn load(path: &Path) -> Result<Summary, CliError> {
        let path = if path.is_dir() {
            path.join("summary.csv")
        } else {
            path.to_path_buf()
        };
        let bad = |e: csv::Error| CliError::Usage(format!("{}: {e}", path.display()));
        let mut rdr = csv::Reader::from_reader(open(&path)?);
        let headers = rdr.headers().map_err(bad)?.iter().map(str::to_string).collect();
        let rows = rdr
            .records()
            .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
            .collect::<Result<_, _>>()
            .map_err(bad)?;
        Ok(Summary { path, headers, rows })
    }

    pub fn column(&self, name: &str) -> Result<usize, CliError> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Usage(format!("{}: no column `{name}`", self.path.display())))
    }

    fn num(&self, row: &[String], col: usize) -> Result<Option<f64>, CliError> {
        let cell = row[col].trim();
        if cell.is_empty() {
            return Ok(None);
        }
        cell.parse().map(Some).map_err(|_| {
            CliError::Usage(format!(
                "{}: `{cell}` in column `{}` is not a number",
                self.path.display(),
                self.headers[col]
            ))
        })
    }
}

pub struct CompareOptions {
    pub run_a: PathBuf,
    pub run_b: PathBuf,
    pub a_variant: Option<String>,
    pub b_variant: Option<String>,
    pub format: Format,
    pub fail_on_regression: bool,
}

const METRICS: [&str; 5] = ["M_v", "A_v", "C_v", "AVL", "E_v"];

type Key = (String, usize, u8);

fn keyed(s: &Summary, variant: Option<&str>) -> Result<BTreeMap<Key, Vec<String>>, CliError> {
    let (cv, cs, cp) = (s.column("variant")?, s.column("vector_size")?, s.column("phase")?);
    let mut out = BTreeMap::new();
    for row in &s.rows {
        if let Some(want) = variant {
            if !row[cv].eq_ignore_ascii_case(want) {
                continue;
            }
        }
        let size = row[cs]
            .parse()
            .map_err(|_| CliError::Usage(format!("{}: bad vector_size `{}`", s.path.display(), row[cs])))?;
        let phase = row[cp]
            .parse()
            .map_err(|_| CliError::Usage(format!("{}: bad phase `{}`", s.path.display(), row[cp])))?;
        let name = if variant.is_some() {
            String::new()
        } else {
            row[cv].clone()
        };
        out.insert((name, size, phase), row.clone());
    }
    Ok(out)
}

pub fn cmd_compare(o: &CompareOptions) -> Result<(), CliError> {
    let a = Summary::load(&o.run_a)?;
    let b = Summary::load(&o.run_b)?;
    if a.headers != b.headers {
        return Err(CliError::Usage(format!(
            "schema mismatch between {} and {}",
            a.path.display(),
            b.path.display()
        )));
    }
    let pinned = o.a_variant.is_some() || o.b_variant.is_some();
    let (va, vb) = if pinned {
        let pick = |v: &Option<String>, s: &Summary| -> Result<String, CliError> {
            match v {
                Some(v) => Ok(v.clone()),
                None => {
                    let c = s.column("variant")?;
                    let mut names: Vec<&String> = s.rows.iter().map(|r| &r[c]).collect();
                    names.dedup();
                    match names.as_slice() {
                        [one] => Ok((*one).clone()),
                        _ => Err(CliError::Usage(format!(
                            "{} holds several variants; name one",
                            s.path.display()
                        ))),
                    }
                }
            }
        };
        (Some(pick(&o.a_variant, &a)?), Some(pick(&o.b_variant, &b)?))
    } else {
        (None, None)
    };
    let ka = keyed(&a, va.as_deref())?;
    let kb = keyed(&b, vb.as_deref())?;
    let ct = a.column("c_t")?;
    let mcols: Vec<usize> = METRICS.iter().map(|m| a.column(m)).collect::<Result<_, _>>()?;

    let mut rows = Vec::new();
    let mut regressions = 0;
    for (key, ra) in &ka {
        let Some(rb) = kb.get(key) else { continue };
        let (ca, cb) = (a.num(ra, ct)?.unwrap_or(0.0), b.num(rb, ct)?.unwrap_or(0.0));
        let ratio = if cb == 0.0 { None } else { Some(ca / cb) };
        let regression = ratio.is_some_and(|r| r > 1.0);
        regressions += regression as usize;
        let label = match (&va, &vb) {
            (Some(x), Some(y)) => format!("{}/{}", x.to_uppercase(), y.to_uppercase()),
            _ => key.0.clone(),
        };
        let mut r = vec![
            label,
            key.1.to_string(),
            key.2.to_string(),
            fmt_sig6(ca),
            fmt_sig6(cb),
            fmt_opt(ratio),
        ];
        for c in &mcols {
            let d = match (a.num(ra, *c)?, b.num(rb, *c)?) {
                (Some(x), Some(y)) => Some(x - y),
                _ => None,
            };
            r.push(fmt_opt(d));
        }
        r.push(if regression { "slower".into() } else { String::new() });
        rows.push(r);
    }
    if rows.is_empty() {
        return Err(CliError::Usage("no (variant, size, phase) rows in common".into()));
    }
    let headers = [
        "variant",
        "vector_size",
        "phase",
        "cycles_a",
        "cycles_b",
        "ratio",
        "d_M_v",
        "d_A_v",
        "d_C_v",
        "d_AVL",
        "d_E_v",
        "flag",
    ];
    let text = match o.format {
        Format::Csv => table::csv(&headers, &rows),
        Format::Text => format!(
            "{}{} of {} phases slower in A ({} unmatched in A, {} in B)\n",
            table::render(&headers, &rows),
            regressions,
            rows.len(),
            ka.len() - rows.len(),
            kb.len() - rows.len()
        ),
    };
    io::stdout()
        .write_all(text.as_bytes())
        .map_err(CliError::io("writing report"))?;
    if o.fail_on_regression && regressions > 0 {
        return Err(CliError::Verification(format!("{regressions} phase(s) slower in A")));
    }
    Ok(())
}

pub struct RegressOptions {
    pub summary: PathBuf,
    pub dependent: String,
    pub independent: Vec<String>,
    pub variant: Option<String>,
    pub phase: Option<u8>,
    pub size: Option<usize>,
}

pub fn cmd_regress(o: &RegressOptions) -> Result<(), CliError> {
    if o.independent.is_empty() {
        return Err(CliError::Usage("no independent columns given".into()));
    }
    let s = Summary::load(&o.summary)?;
    let dep = s.column(&o.dependent)?;
    let ind: Vec<usize> = o.independent.iter().map(|c| s.column(c)).collect::<Result<_, _>>()?;
    let filters: Vec<(usize, String)> = [
        ("variant", o.variant.clone()),
        ("phase", o.phase.map(|p| p.to_string())),
        ("vector_size", o.size.map(|z| z.to_string())),
    ]
    .into_iter()
    .filter_map(|(c, v)| v.map(|v| (c, v)))
    .map(|(c, v)| s.column(c).map(|i| (i, v)))
    .collect::<Result<_, _>>()?;

    let mut y = Vec::new();
    let mut cols = vec![Vec::new(); ind.len()];
    let mut skipped = 0;
    for row in &s.rows {
        if !filters.iter().all(|(c, v)| row[*c].eq_ignore_ascii_case(v)) {
            continue;
        }
        let yv = s.num(row, dep)?;
        let xs: Vec<Option<f64>> = ind.iter().map(|c| s.num(row, *c)).collect::<Result<_, _>>()?;
        match (yv, xs.iter().copied().collect::<Option<Vec<f64>>>()) {
            (Some(yv), Some(xs)) => {
                y.push(yv);
                for (col, x) in cols.iter_mut().zip(xs) {
                    col.push(x);
                }
            }
            _ => skipped += 1,
        }
    }
    let fit = ols_columns(&y, &cols)?;
    let mut rows: Vec<Vec<String>> = vec![vec!["intercept".into(), fmt_sig6(fit.intercept)]];
    rows.extend(
        o.independent
            .iter()
            .zip(&fit.coefficients)
            .map(|(n, c)| vec![n.clone(), fmt_sig6(*c)]),
    );
    let text = format!(
        "{} ~ {}  ({} observations, {} skipped for missing values)\n{}R2 = {}\n",
        o.dependent,
        o.independent.join(" + "),
        y.len(),
        skipped,
        table::render(&["term", "coefficient"], &rows),
        fmt_sig6(fit.r_squared)
    );
    io::stdout()
        .write_all(text.as_bytes())
        .map_err(CliError::io("writing report"))
}

fn export_to(trace: &Path, w: &mut dyn Write) -> Result<(), CliError> {
    let mut head = [0u8; HEADER_LEN as usize];
    let mut f = open(trace)?;
    let n = f
        .read(&mut head)
        .map_err(CliError::io(format!("reading {}", trace.display())))?;
    let aggregated = n == head.len() && TraceHeader::decode(&head).is_ok_and(|h| h.aggregated());
    if aggregated {
        let (h, per_phase) = read_counters(open(trace)?)?;
        let groups: BTreeMap<Group, RawCounters> = per_phase.into_iter().map(|(p, rc)| (Group::Phase(p), rc)).collect();
        write_counters_csv(w, &groups, vl_max_of(&h)).map_err(CliError::io("writing CSV"))?;
    } else {
        export_csv(open(trace)?, w)?;
    }
    Ok(())
}

pub fn cmd_export(trace: &Path, out: Option<&Path>) -> Result<(), CliError> {
    match out {
        Some(p) => write_atomic(p, |w| export_to(trace, w)),
        None => {
            let stdout = io::stdout();
            let mut w = BufWriter::new(stdout.lock());
            export_to(trace, &mut w)?;
            w.flush().map_err(CliError::io("writing CSV"))
        }
    }
}
