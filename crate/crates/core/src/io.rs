//! CSV and JSON files for tables, states, sweeps and shot records.
//!
//! CSV files may open with `# key: <json>` lines carrying metadata; readers
//! collect them and the CSV parser skips them. Floats are written in their
//! shortest round-trip form, so every file reads back bit-exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::conditioner::ConditionalState;
use crate::distribution::{JointDistribution, PhotoCountDistribution, ProbTable, Provenance};
use crate::error::{Error, Result};
use crate::nongauss::{SweepAxis, SweepRow};
use crate::params::ExperimentParams;
use crate::sampler::{RecordMeta, ShotRecord};

/// Metadata lines of a CSV file.
pub type Meta = BTreeMap<String, Value>;

/// Version written into figure manifests.
pub const MANIFEST_SCHEMA: u32 = 1;

/// Shortest round-trip decimal, with an exponent for very small or large magnitudes.
pub fn format_float(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && a.is_finite() && !(1e-5..1e16).contains(&a) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

fn format_err(reason: impl Into<String>) -> Error {
    Error::Format { path: None, reason: reason.into() }
}

/// What a CSV file holds, judged by its header.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CsvKind {
    Joint,
    Counts,
    Shots,
    Sweep,
    Means,
}

impl CsvKind {
    fn header(&self) -> &'static str {
        match self {
            CsvKind::Joint => "s,t,p",
            CsvKind::Counts => "s,p",
            CsvKind::Shots => "s,t",
            CsvKind::Sweep => "axis,value,delta,delta_R,S_state,S_ref",
            CsvKind::Means => "rule,threshold,theory,synthetic",
        }
    }

    fn from_header(header: &str) -> Option<Self> {
        [CsvKind::Joint, CsvKind::Counts, CsvKind::Shots, CsvKind::Sweep, CsvKind::Means]
            .into_iter()
            .find(|k| k.header() == header)
    }
}

struct CsvText {
    meta: Meta,
    kind: CsvKind,
    records: Vec<csv::StringRecord>,
}

fn parse_csv(mut input: impl Read) -> Result<CsvText> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;
    let mut meta = Meta::new();
    for line in text.lines().filter(|l| l.starts_with('#')) {
        let body = line[1..].trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) =
            body.split_once(':').ok_or_else(|| format_err(format!("metadata line without ':': {line}")))?;
        let value: Value =
            serde_json::from_str(value.trim()).map_err(|e| format_err(format!("metadata {key:?} is not JSON: {e}")))?;
        meta.insert(key.trim().to_string(), value);
    }
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let header = reader.headers()?.iter().map(str::trim).collect::<Vec<_>>().join(",");
    let kind = CsvKind::from_header(&header).ok_or_else(|| format_err(format!("unrecognized header {header:?}")))?;
    let records = reader.records().collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(CsvText { meta, kind, records })
}

fn expect_kind(text: &CsvText, kind: CsvKind) -> Result<()> {
    if text.kind == kind {
        Ok(())
    } else {
        Err(format_err(format!("expected header {:?}, found {:?}", kind.header(), text.kind.header())))
    }
}

fn field<T: std::str::FromStr>(record: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    let raw = record.get(i).ok_or_else(|| format_err(format!("row is missing column {name}")))?;
    raw.trim().parse().map_err(|_| format_err(format!("bad {name} value {raw:?}")))
}

fn meta_value<T: serde::de::DeserializeOwned>(meta: &Meta, key: &str) -> Result<Option<T>> {
    meta.get(key)
        .map(|v| serde_json::from_value(v.clone()).map_err(|e| format_err(format!("metadata {key:?}: {e}"))))
        .transpose()
}

fn write_meta(out: &mut String, meta: &Meta) -> Result<()> {
    for (key, value) in meta {
        writeln!(out, "# {key}: {}", serde_json::to_string(value)?).unwrap();
    }
    Ok(())
}

/// Detects the kind of a CSV file from its header.
pub fn csv_kind(input: impl Read) -> Result<CsvKind> {
    Ok(parse_csv(input)?.kind)
}

pub fn write_joint_csv(mut w: impl Write, joint: &JointDistribution) -> Result<()> {
    let mut meta = Meta::new();
    meta.insert("provenance".into(), serde_json::to_value(joint.provenance)?);
    meta.insert("tol".into(), serde_json::to_value(joint.tol)?);
    meta.insert("tail_bound".into(), serde_json::to_value(joint.tail_bound)?);
    let mut out = String::new();
    write_meta(&mut out, &meta)?;
    out.push_str("s,t,p\n");
    for (s, t, p) in joint.probs.cells() {
        writeln!(out, "{s},{t},{}", format_float(p)).unwrap();
    }
    w.write_all(out.as_bytes())?;
    Ok(())
}

fn cells_to_table(cells: &[(usize, usize, f64)]) -> ProbTable {
    let rows = cells.iter().map(|c| c.0 + 1).max().unwrap_or(0);
    let cols = cells.iter().map(|c| c.1 + 1).max().unwrap_or(0);
    let mut table = ProbTable::zeros(rows, cols);
    for &(s, t, p) in cells {
        table.set(s, t, p);
    }
    table
}

fn table_from_text(text: &CsvText) -> Result<ProbTable> {
    let mut cells = Vec::with_capacity(text.records.len());
    for r in &text.records {
        let p: f64 = field(r, 2, "p")?;
        if !(p >= 0.0) {
            return Err(format_err(format!("negative or NaN probability {p}")));
        }
        cells.push((field(r, 0, "s")?, field(r, 1, "t")?, p));
    }
    Ok(cells_to_table(&cells))
}

pub fn read_joint_csv(input: impl Read) -> Result<JointDistribution> {
    let text = parse_csv(input)?;
    expect_kind(&text, CsvKind::Joint)?;
    Ok(JointDistribution {
        probs: table_from_text(&text)?,
        tail_bound: meta_value(&text.meta, "tail_bound")?.unwrap_or(0.0),
        tol: meta_value(&text.meta, "tol")?.unwrap_or(f64::NAN),
        provenance: meta_value(&text.meta, "provenance")?.unwrap_or(Provenance::Unknown),
    })
}

#[derive(Serialize, Deserialize)]
struct JointJson {
    params: Option<ExperimentParams>,
    provenance: Provenance,
    tol: f64,
    probs: Vec<Vec<f64>>,
    tail_bound: f64,
}

pub fn write_joint_json(w: impl Write, joint: &JointDistribution) -> Result<()> {
    let doc = JointJson {
        params: joint.provenance.params(),
        provenance: joint.provenance,
        tol: joint.tol,
        probs: joint.probs.to_nested(),
        tail_bound: joint.tail_bound,
    };
    serde_json::to_writer_pretty(w, &doc)?;
    Ok(())
}

pub fn read_joint_json(input: impl Read) -> Result<JointDistribution> {
    let doc: JointJson = serde_json::from_reader(input)?;
    let cols = doc.probs.iter().map(Vec::len).max().unwrap_or(0);
    let mut probs = ProbTable::zeros(doc.probs.len(), cols);
    for (s, row) in doc.probs.iter().enumerate() {
        for (t, &p) in row.iter().enumerate() {
            probs.set(s, t, p);
        }
    }
    Ok(JointDistribution { probs, tail_bound: doc.tail_bound, tol: doc.tol, provenance: doc.provenance })
}

/// Writes `s,p`; `meta` is extended with the tail bound.
pub fn write_counts_csv(mut w: impl Write, dist: &PhotoCountDistribution, meta: &Meta) -> Result<()> {
    let mut meta = meta.clone();
    meta.insert("tail_bound".into(), serde_json::to_value(dist.tail_bound())?);
    let mut out = String::new();
    write_meta(&mut out, &meta)?;
    out.push_str("s,p\n");
    for (s, p) in dist.probs().iter().enumerate() {
        writeln!(out, "{s},{}", format_float(*p)).unwrap();
    }
    w.write_all(out.as_bytes())?;
    Ok(())
}

pub fn read_counts_csv(input: impl Read) -> Result<(PhotoCountDistribution, Meta)> {
    let text = parse_csv(input)?;
    expect_kind(&text, CsvKind::Counts)?;
    let mut cells = Vec::with_capacity(text.records.len());
    for r in &text.records {
        let p: f64 = field(r, 1, "p")?;
        if !(p >= 0.0) {
            return Err(format_err(format!("negative or NaN probability {p}")));
        }
        cells.push((field::<usize>(r, 0, "s")?, p));
    }
    let len = cells.iter().map(|c| c.0 + 1).max().unwrap_or(0);
    let mut probs = vec![0.0; len];
    for (s, p) in cells {
        probs[s] = p;
    }
    let tail = meta_value(&text.meta, "tail_bound")?.unwrap_or(0.0);
    Ok((PhotoCountDistribution::new(probs, tail), text.meta))
}

pub fn write_shots_csv(mut w: impl Write, record: &ShotRecord) -> Result<()> {
    let mut meta = Meta::new();
    meta.insert("meta".into(), serde_json::to_value(&record.meta)?);
    let mut out = String::with_capacity(8 * record.len() + 64);
    write_meta(&mut out, &meta)?;
    out.push_str("s,t\n");
    for (s, t) in &record.shots {
        writeln!(out, "{s},{t}").unwrap();
    }
    w.write_all(out.as_bytes())?;
    Ok(())
}

pub fn read_shots_csv(input: impl Read) -> Result<ShotRecord> {
    let text = parse_csv(input)?;
    expect_kind(&text, CsvKind::Shots)?;
    let shots = text.records.iter().map(|r| Ok((field(r, 0, "s")?, field(r, 1, "t")?))).collect::<Result<Vec<_>>>()?;
    let meta = meta_value(&text.meta, "meta")?.unwrap_or(RecordMeta::Unknown);
    ShotRecord::new(shots, meta).map_err(|_| format_err("shot file has no rows"))
}

#[derive(Serialize, Deserialize)]
struct ShotsJson {
    meta: RecordMeta,
    shots: Vec<(u64, u64)>,
}

pub fn write_shots_json(w: impl Write, record: &ShotRecord) -> Result<()> {
    serde_json::to_writer(w, &ShotsJson { meta: record.meta.clone(), shots: record.shots.clone() })?;
    Ok(())
}

pub fn read_shots_json(input: impl Read) -> Result<ShotRecord> {
    let doc: ShotsJson = serde_json::from_reader(input)?;
    ShotRecord::new(doc.shots, doc.meta).map_err(|_| format_err("shot file has no rows"))
}

/// Reads a probability table from any CSV kind: joint tables as they are,
/// shot records as normalized histograms, count distributions as one column.
pub fn read_table_csv(input: impl Read) -> Result<ProbTable> {
    let text = parse_csv(input)?;
    match text.kind {
        CsvKind::Joint => table_from_text(&text),
        CsvKind::Shots => {
            let n = text.records.len() as f64;
            let mut counts: BTreeMap<(usize, usize), u64> = BTreeMap::new();
            for r in &text.records {
                *counts.entry((field(r, 0, "s")?, field(r, 1, "t")?)).or_default() += 1;
            }
            let cells: Vec<_> = counts.into_iter().map(|((s, t), c)| (s, t, c as f64 / n)).collect();
            Ok(cells_to_table(&cells))
        }
        CsvKind::Counts => {
            let mut cells = Vec::new();
            for r in &text.records {
                cells.push((field(r, 0, "s")?, 0, field(r, 1, "p")?));
            }
            Ok(cells_to_table(&cells))
        }
        CsvKind::Sweep | CsvKind::Means => Err(format_err("not a probability table")),
    }
}

/// Stored form of a conditional state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionalStateDoc {
    pub t: u64,
    pub params: ExperimentParams,
    pub gamma_min: u64,
    pub weights: Vec<f64>,
    /// Authoritative; `weights` underflow for wide states.
    pub log_weights: Vec<f64>,
    pub tail_bound: f64,
    #[serde(rename = "M_t")]
    pub mean_t: f64,
    pub tol: f64,
}

impl From<&ConditionalState> for ConditionalStateDoc {
    fn from(state: &ConditionalState) -> Self {
        ConditionalStateDoc {
            t: state.t(),
            params: *state.params(),
            gamma_min: state.gamma_min(),
            weights: state.log_weights().iter().map(|w| w.exp()).collect(),
            log_weights: state.log_weights().to_vec(),
            tail_bound: state.tail_bound(),
            mean_t: state.conditional_mean(),
            tol: state.tol(),
        }
    }
}

pub fn write_state_json(w: impl Write, state: &ConditionalState) -> Result<()> {
    serde_json::to_writer_pretty(w, &ConditionalStateDoc::from(state))?;
    Ok(())
}

pub fn read_state_json(input: impl Read) -> Result<ConditionalState> {
    let doc: ConditionalStateDoc = serde_json::from_reader(input)?;
    ConditionalState::from_parts(doc.params, doc.t, doc.gamma_min, doc.log_weights, doc.tail_bound, doc.tol)
}

/// One line of a sweep CSV.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepLine {
    pub axis: SweepAxis,
    pub value: f64,
    pub delta: f64,
    #[serde(rename = "delta_R")]
    pub delta_r: f64,
    #[serde(rename = "S_state")]
    pub s_state: f64,
    #[serde(rename = "S_ref")]
    pub s_ref: f64,
}

impl From<&SweepRow> for SweepLine {
    fn from(row: &SweepRow) -> Self {
        let r = &row.report;
        SweepLine {
            axis: row.axis,
            value: row.value,
            delta: r.delta,
            delta_r: r.delta_r,
            s_state: r.s_state,
            s_ref: r.s_ref,
        }
    }
}

pub fn write_sweep_csv(mut w: impl Write, rows: &[SweepRow], meta: &Meta) -> Result<()> {
    let mut out = String::new();
    write_meta(&mut out, meta)?;
    out.push_str(CsvKind::Sweep.header());
    out.push('\n');
    for row in rows {
        let l = SweepLine::from(row);
        let nums = [l.value, l.delta, l.delta_r, l.s_state, l.s_ref].map(format_float);
        writeln!(out, "{},{}", l.axis.name(), nums.join(",")).unwrap();
    }
    w.write_all(out.as_bytes())?;
    Ok(())
}

pub fn read_sweep_csv(input: impl Read) -> Result<(Vec<SweepLine>, Meta)> {
    let text = parse_csv(input)?;
    expect_kind(&text, CsvKind::Sweep)?;
    let lines = text
        .records
        .iter()
        .map(|r| {
            let axis: String = field(r, 0, "axis")?;
            Ok(SweepLine {
                axis: axis.parse().map_err(|_| format_err(format!("bad axis {axis:?}")))?,
                value: field(r, 1, "value")?,
                delta: field(r, 2, "delta")?,
                delta_r: field(r, 3, "delta_R")?,
                s_state: field(r, 4, "S_state")?,
                s_ref: field(r, 5, "S_ref")?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((lines, text.meta))
}

#[derive(Serialize, Deserialize)]
struct SweepJson {
    metadata: Meta,
    rows: Vec<SweepRow>,
}

pub fn write_sweep_json(w: impl Write, rows: &[SweepRow], meta: &Meta) -> Result<()> {
    serde_json::to_writer_pretty(w, &SweepJson { metadata: meta.clone(), rows: rows.to_vec() })?;
    Ok(())
}

pub fn read_sweep_json(input: impl Read) -> Result<(Vec<SweepRow>, Meta)> {
    let doc: SweepJson = serde_json::from_reader(input)?;
    Ok((doc.rows, doc.metadata))
}

/// Conditional mean against the conditioning value or threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanLine {
    /// `exact`, `above` or `below`.
    pub rule: String,
    pub threshold: u64,
    pub theory: f64,
    /// Empty when no synthetic shot passed the rule.
    pub synthetic: Option<f64>,
}

pub fn write_means_csv(mut w: impl Write, lines: &[MeanLine], meta: &Meta) -> Result<()> {
    let mut out = String::new();
    write_meta(&mut out, meta)?;
    out.push_str(CsvKind::Means.header());
    out.push('\n');
    for l in lines {
        let synthetic = l.synthetic.map(format_float).unwrap_or_default();
        writeln!(out, "{},{},{},{synthetic}", l.rule, l.threshold, format_float(l.theory)).unwrap();
    }
    w.write_all(out.as_bytes())?;
    Ok(())
}

pub fn read_means_csv(input: impl Read) -> Result<(Vec<MeanLine>, Meta)> {
    let text = parse_csv(input)?;
    expect_kind(&text, CsvKind::Means)?;
    let lines = text
        .records
        .iter()
        .map(|r| {
            let raw = r.get(3).unwrap_or("").trim();
            Ok(MeanLine {
                rule: field(r, 0, "rule")?,
                threshold: field(r, 1, "threshold")?,
                theory: field(r, 2, "theory")?,
                synthetic: if raw.is_empty() { None } else { Some(field(r, 3, "synthetic")?) },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((lines, text.meta))
}

/// One emitted file of a figure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub description: String,
    pub axes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<ExperimentParams>,
    /// Scalar summaries, e.g. a fidelity.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub values: BTreeMap<String, f64>,
}

/// Index of the files written for one figure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: u32,
    pub figure: String,
    pub tol: f64,
    pub seed: u64,
    pub files: Vec<ManifestEntry>,
}

pub fn write_manifest(w: impl Write, manifest: &Manifest) -> Result<()> {
    serde_json::to_writer_pretty(w, manifest)?;
    Ok(())
}

pub fn read_manifest(input: impl Read) -> Result<Manifest> {
    let manifest: Manifest = serde_json::from_reader(input)?;
    if manifest.schema != MANIFEST_SCHEMA {
        return Err(format_err(format!("unsupported manifest schema {}", manifest.schema)));
    }
    Ok(manifest)
}
