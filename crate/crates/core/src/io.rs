//! File formats. Floats are always written with 17 significant digits so that
//! every value reads back bit-exactly.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::ser::Serialize;
use serde::{Deserialize, Serialize as SerializeDerive};
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::dagdist::{DagDistribution, LinkFamily, Order};
use crate::error::{Error, Result};
use crate::graph::Adjacency;
use crate::perm::{Construction, PermutationDistribution};
use crate::sem::{Dataset, Likelihood, LinearSem, MaskedMlpSem, SemModel};
use crate::vi::{PriorSpec, TraceRow, VariationalState};

/// Scientific notation with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Pretty JSON whose floats use [`fmt_f64`].
pub struct Float17Formatter<'a>(PrettyFormatter<'a>);

impl Default for Float17Formatter<'_> {
    fn default() -> Self {
        Self(PrettyFormatter::with_indent(b"  "))
    }
}

impl Formatter for Float17Formatter<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        writer.write_all(fmt_f64(value).as_bytes())
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> std::io::Result<()> {
        self.write_f64(writer, value as f64)
    }

    fn begin_array<W: ?Sized + Write>(&mut self, writer: &mut W) -> std::io::Result<()> {
        self.0.begin_array(writer)
    }

    fn end_array<W: ?Sized + Write>(&mut self, writer: &mut W) -> std::io::Result<()> {
        self.0.end_array(writer)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, writer: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_array_value(writer, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> std::io::Result<()> {
        self.0.end_array_value(writer)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, writer: &mut W) -> std::io::Result<()> {
        self.0.begin_object(writer)
    }

    fn end_object<W: ?Sized + Write>(&mut self, writer: &mut W) -> std::io::Result<()> {
        self.0.end_object(writer)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, writer: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_object_key(writer, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> std::io::Result<()> {
        self.0.begin_object_value(writer)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> std::io::Result<()> {
        self.0.end_object_value(writer)
    }
}

pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Float17Formatter::default());
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, to_json_string(value)?)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(BufWriter::new(File::create(path)?)))
}

fn csv_rows(path: &Path) -> Result<Vec<csv::StringRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    Ok(reader.records().collect::<std::result::Result<_, _>>()?)
}

/// Parses rows of numbers; `first_line` is the 1-based file line of `rows[0]`.
fn parse_numeric(rows: &[csv::StringRecord], first_line: usize) -> Result<DMatrix<f64>> {
    let width = rows.first().map_or(0, |r| r.len());
    let mut data = Vec::with_capacity(rows.len() * width);
    for (k, rec) in rows.iter().enumerate() {
        let line = first_line + k;
        if rec.len() != width {
            return Err(Error::Data {
                row: line,
                column: rec.len().min(width) + 1,
                message: format!("expected {width} columns, found {}", rec.len()),
            });
        }
        for (c, cell) in rec.iter().enumerate() {
            let location = |message: String| Error::Data {
                row: line,
                column: c + 1,
                message,
            };
            if cell.is_empty() {
                return Err(location("missing value".into()));
            }
            let v: f64 = cell.parse().map_err(|_| location(format!("not a number: {cell:?}")))?;
            if !v.is_finite() {
                return Err(location(format!("non-finite value {cell:?}")));
            }
            data.push(v);
        }
    }
    Ok(DMatrix::from_row_slice(rows.len(), width, &data))
}

/// Numeric CSV with an optional header, detected by a non-numeric first row.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let rows = csv_rows(path)?;
    let Some(first) = rows.first() else {
        return Err(Error::Data {
            row: 1,
            column: 1,
            message: "empty file".into(),
        });
    };
    let has_header = first.iter().any(|c| c.parse::<f64>().is_err());
    let (names, body, first_line) = if has_header {
        (first.iter().map(str::to_string).collect::<Vec<_>>(), &rows[1..], 2)
    } else {
        ((0..first.len()).map(|j| format!("x{j}")).collect(), &rows[..], 1)
    };
    if body.is_empty() {
        return Err(Error::Data {
            row: first_line,
            column: 1,
            message: "no data rows".into(),
        });
    }
    if body[0].len() != names.len() {
        return Err(Error::Data {
            row: first_line,
            column: 1,
            message: format!("header has {} columns, data has {}", names.len(), body[0].len()),
        });
    }
    Dataset::with_names(parse_numeric(body, first_line)?, names)
}

/// Writes a header row of `names` followed by the rows of `x`.
pub fn write_matrix_with_header(path: &Path, x: &DMatrix<f64>, names: &[String]) -> Result<()> {
    if names.len() != x.ncols() {
        return Err(Error::DimensionMismatch {
            expected: x.ncols(),
            got: names.len(),
        });
    }
    let mut w = csv_writer(path)?;
    w.write_record(names)?;
    write_rows(&mut w, x)?;
    w.flush()?;
    Ok(())
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    write_matrix_with_header(path, data.x(), data.names())
}

fn write_rows(w: &mut csv::Writer<BufWriter<File>>, x: &DMatrix<f64>) -> Result<()> {
    for r in 0..x.nrows() {
        w.write_record(x.row(r).iter().map(|v| fmt_f64(*v)))?;
    }
    Ok(())
}

/// Headerless real matrix.
pub fn write_matrix(path: &Path, x: &DMatrix<f64>) -> Result<()> {
    let mut w = csv_writer(path)?;
    write_rows(&mut w, x)?;
    w.flush()?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    parse_numeric(&csv_rows(path)?, 1)
}

/// Headerless `D × D` grid of 0/1.
pub fn write_adjacency_csv(path: &Path, adj: &Adjacency) -> Result<()> {
    let mut w = csv_writer(path)?;
    for i in 0..adj.nodes() {
        w.write_record((0..adj.nodes()).map(|j| if adj.get(i, j) { "1" } else { "0" }))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_adjacency_csv(path: &Path) -> Result<Adjacency> {
    let m = read_matrix(path)?;
    if m.nrows() != m.ncols() {
        return Err(Error::Format(format!("adjacency is {}x{}", m.nrows(), m.ncols())));
    }
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            let v = m[(r, c)];
            if v != 0.0 && v != 1.0 {
                return Err(Error::Data {
                    row: r + 1,
                    column: c + 1,
                    message: format!("adjacency entries must be 0 or 1, found {v}"),
                });
            }
        }
    }
    Adjacency::from_matrix(&m, 0.5)
}

#[derive(Clone, Debug, PartialEq, Eq, SerializeDerive, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeList {
    pub nodes: usize,
    pub edges: Vec<(usize, usize)>,
}

pub fn write_adjacency_json(path: &Path, adj: &Adjacency) -> Result<()> {
    write_json(
        path,
        &EdgeList {
            nodes: adj.nodes(),
            edges: adj.edges(),
        },
    )
}

pub fn read_adjacency_json(path: &Path) -> Result<Adjacency> {
    let list: EdgeList = read_json(path)?;
    Adjacency::from_edges(list.nodes, &list.edges)
}

/// Generic CSV table with a header row.
pub fn write_table<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv_writer(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["iteration", "elbo"])?;
    for row in trace {
        w.write_record([row.iteration.to_string(), fmt_f64(row.elbo)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let rows = csv_rows(path)?;
    let body = rows.get(1..).unwrap_or_default();
    body.iter()
        .enumerate()
        .map(|(k, r)| {
            let bad = |column: usize| Error::Data {
                row: k + 2,
                column,
                message: "malformed trace row".into(),
            };
            let iteration = r.get(0).and_then(|v| v.parse().ok()).ok_or_else(|| bad(1))?;
            let elbo = r.get(1).and_then(|v| v.parse().ok()).ok_or_else(|| bad(2))?;
            Ok(TraceRow { iteration, elbo })
        })
        .collect()
}

/// Row-major matrix with explicit shape.
#[derive(Clone, Debug, PartialEq, SerializeDerive, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixRecord {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&DMatrix<f64>> for MatrixRecord {
    fn from(m: &DMatrix<f64>) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.transpose().iter().copied().collect(),
        }
    }
}

impl MatrixRecord {
    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::Format(format!(
                "matrix declared {}x{} but holds {} values",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Clone, Debug, PartialEq, SerializeDerive, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PermRecord {
    pub log_scores: Vec<f64>,
    pub construction: Construction,
    pub temperature: f64,
}

#[derive(Clone, Debug, PartialEq, SerializeDerive, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DagRecord {
    pub theta: MatrixRecord,
    pub family: LinkFamily,
    pub order: Order,
}

#[derive(Clone, Debug, PartialEq, SerializeDerive, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SemRecord {
    Linear {
        noise_scale: f64,
        bias: Vec<f64>,
        weights: Option<MatrixRecord>,
    },
    Mlp {
        noise_scale: f64,
        hidden: usize,
        params: Vec<f64>,
    },
}

/// Everything needed to resume training or draw posterior summaries.
#[derive(Clone, Debug, PartialEq, SerializeDerive, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointRecord {
    pub names: Vec<String>,
    pub threshold: f64,
    pub permutation: PermRecord,
    pub dag: DagRecord,
    pub sem: SemRecord,
    pub prior_permutation: PermRecord,
    pub prior_dag: DagRecord,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub names: Vec<String>,
    pub threshold: f64,
    pub state: VariationalState,
    pub prior: PriorSpec,
}

fn perm_record(p: &PermutationDistribution) -> PermRecord {
    PermRecord {
        log_scores: p.log_scores().to_vec(),
        construction: p.construction(),
        temperature: p.temperature(),
    }
}

fn dag_record(d: &DagDistribution) -> DagRecord {
    DagRecord {
        theta: d.theta().into(),
        family: d.family(),
        order: d.order(),
    }
}

impl PermRecord {
    fn build(&self) -> Result<PermutationDistribution> {
        PermutationDistribution::new(self.log_scores.clone(), self.construction, self.temperature)
    }
}

impl DagRecord {
    fn build(&self) -> Result<DagDistribution> {
        DagDistribution::new(self.theta.to_matrix()?, self.family, self.order)
    }
}

impl Checkpoint {
    pub fn to_record(&self) -> CheckpointRecord {
        let sem = match &self.state.sem {
            SemModel::Linear(m) => SemRecord::Linear {
                noise_scale: m.noise_scale(),
                bias: m.bias().iter().copied().collect(),
                weights: m.weights().map(MatrixRecord::from),
            },
            SemModel::Mlp(m) => SemRecord::Mlp {
                noise_scale: m.noise_scale(),
                hidden: m.hidden(),
                params: m.params(),
            },
        };
        CheckpointRecord {
            names: self.names.clone(),
            threshold: self.threshold,
            permutation: perm_record(&self.state.perm),
            dag: dag_record(&self.state.dag),
            sem,
            prior_permutation: perm_record(&self.prior.perm),
            prior_dag: dag_record(&self.prior.dag),
        }
    }

    pub fn from_record(rec: &CheckpointRecord) -> Result<Self> {
        let perm = rec.permutation.build()?;
        let d = perm.dim();
        let sem = match &rec.sem {
            SemRecord::Linear {
                noise_scale,
                bias,
                weights,
            } => {
                let w = weights.as_ref().map(MatrixRecord::to_matrix).transpose()?;
                SemModel::Linear(LinearSem::from_parts(*noise_scale, DVector::from_vec(bias.clone()), w)?)
            }
            SemRecord::Mlp {
                noise_scale,
                hidden,
                params,
            } => SemModel::Mlp(MaskedMlpSem::from_params(d, *hidden, *noise_scale, params.clone())?),
        };
        let state = VariationalState::new(perm, rec.dag.build()?, sem)?;
        let prior = PriorSpec::new(rec.prior_permutation.build()?, rec.prior_dag.build()?)?;
        if rec.names.len() != d {
            return Err(Error::Format(format!("{} names for {d} nodes", rec.names.len())));
        }
        Ok(Self {
            names: rec.names.clone(),
            threshold: rec.threshold,
            state,
            prior,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, &self.to_record())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_record(&read_json(path)?)
    }
}
