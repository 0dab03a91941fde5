//! Artifact file formats.
//!
//! All floats are written as `{:.16e}` (17 significant digits), which round-trips `f64`.
//! Text artifacts start with a magic line, then `key value` header lines, then a data marker.
//!
//! Operator (`operator.txt`):
//! ```text
//! zkroa-operator v1
//! size <n>
//! dt <dt>
//! dictionary <descriptor>
//! reg <svd_tol>
//! rank <rank>
//! residual <||Y - XT||_F>
//! data
//! re,im re,im ...      (n lines, one per matrix row, n pairs each)
//! ```
//!
//! Iterated coefficients (`u_zk.txt`):
//! ```text
//! zkroa-u v1
//! dictionary <descriptor>
//! mode matrix|vector
//! iterations <k>
//! final_residual <r_k>
//! residuals <r_1> ... <r_k>
//! coeffs
//! re,im                (one line per basis function)
//! ```
//!
//! Smooth model (`model.txt`):
//! ```text
//! zkroa-mlp v1
//! sizes <n> <w_1> ... 1
//! activation tanh
//! x_mean <..n values>
//! x_scale <..n values>
//! y_mean <v>
//! y_scale <v>
//! epochs_run <e>
//! final_mse <v>
//! params
//! weights <out> <in>   followed by <out> lines of <in> values
//! bias <out>           followed by one line of <out> values
//! ...                  (one weights/bias pair per layer)
//! ```
//!
//! Mask: `mask.csv` has one row per cell, `i_1..i_n,x_1..x_n,value,mask`, first axis
//! slowest; `grid.json` holds `bounds`, `resolution`, `threshold`, `seed`, `volume_fraction`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::edmd::{CMatrix, OperatorMatrix};
use crate::error::{Error, Result};
use crate::roa::{Grid, IterationMode, RoaMask, UApprox};
use crate::scalar::{fmt_f64, Complex, Real};
use crate::smooth::SmoothModel;
use crate::systems::Region;

const OPERATOR_MAGIC: &str = "zkroa-operator v1";
const U_MAGIC: &str = "zkroa-u v1";
const MODEL_MAGIC: &str = "zkroa-mlp v1";

/// Opens an upstream artifact, mapping a missing file to [`Error::MissingArtifact`].
pub fn open_artifact(path: &Path) -> Result<BufReader<File>> {
    match File::open(path) {
        Ok(f) => Ok(BufReader::new(f)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::MissingArtifact(path.to_path_buf())),
        Err(e) => Err(e.into()),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn fmt<T: Real>(v: T) -> String {
    fmt_f64(v.as_f64())
}

fn fmt_c<T: Real>(z: Complex<T>) -> String {
    format!("{},{}", fmt(z.re), fmt(z.im))
}

fn fmt_list<T: Real>(v: &[T]) -> String {
    v.iter().map(|&x| fmt(x)).collect::<Vec<_>>().join(" ")
}

fn parse_num<T: Real>(s: &str) -> Result<T> {
    s.trim().parse::<f64>().map(T::lit).map_err(|_| Error::Parse(format!("bad number '{s}'")))
}

fn parse_usize(s: &str) -> Result<usize> {
    s.trim().parse().map_err(|_| Error::Parse(format!("bad integer '{s}'")))
}

fn parse_c<T: Real>(s: &str) -> Result<Complex<T>> {
    let (re, im) = s.split_once(',').ok_or_else(|| Error::Parse(format!("bad complex pair '{s}'")))?;
    Ok(Complex::new(parse_num(re)?, parse_num(im)?))
}

fn parse_list<T: Real>(s: &str) -> Result<Vec<T>> {
    s.split_whitespace().map(parse_num).collect()
}

/// Line reader over a header of `key value` lines.
struct Lines<R> {
    inner: std::io::Lines<R>,
    what: &'static str,
}

impl<R: BufRead> Lines<R> {
    fn new(r: R, what: &'static str) -> Self {
        Self { inner: r.lines(), what }
    }

    fn next_line(&mut self) -> Result<String> {
        match self.inner.next() {
            Some(l) => Ok(l?),
            None => Err(Error::Parse(format!("{} file ends early", self.what))),
        }
    }

    fn expect(&mut self, exact: &str) -> Result<()> {
        let l = self.next_line()?;
        if l.trim_end() != exact {
            return Err(Error::Parse(format!("{} file: expected '{exact}', found '{l}'", self.what)));
        }
        Ok(())
    }

    fn field(&mut self, key: &str) -> Result<String> {
        let l = self.next_line()?;
        match l.split_once(' ') {
            Some((k, v)) if k == key => Ok(v.to_string()),
            _ if l.trim_end() == key => Ok(String::new()),
            _ => Err(Error::Parse(format!("{} file: expected field '{key}', found '{l}'", self.what))),
        }
    }
}

pub fn write_operator<T: Real>(path: &Path, op: &OperatorMatrix<T>) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{OPERATOR_MAGIC}")?;
    writeln!(w, "size {}", op.t.rows())?;
    writeln!(w, "dt {}", fmt(op.horizon))?;
    writeln!(w, "dictionary {}", op.dictionary)?;
    writeln!(w, "reg {}", fmt(op.reg))?;
    writeln!(w, "rank {}", op.rank)?;
    writeln!(w, "residual {}", fmt(op.residual))?;
    writeln!(w, "data")?;
    for r in 0..op.t.rows() {
        let row: Vec<String> = op.t.row(r).iter().map(|&z| fmt_c(z)).collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_operator<T: Real>(path: &Path) -> Result<OperatorMatrix<T>> {
    let mut l = Lines::new(open_artifact(path)?, "operator");
    l.expect(OPERATOR_MAGIC)?;
    let n = parse_usize(&l.field("size")?)?;
    let horizon = parse_num(&l.field("dt")?)?;
    let dictionary = l.field("dictionary")?;
    let reg = parse_num(&l.field("reg")?)?;
    let rank = parse_usize(&l.field("rank")?)?;
    let residual = parse_num(&l.field("residual")?)?;
    l.expect("data")?;
    let mut data = Vec::with_capacity(n * n);
    for r in 0..n {
        let line = l.next_line()?;
        let row: Vec<Complex<T>> = line.split_whitespace().map(parse_c).collect::<Result<_>>()?;
        if row.len() != n {
            return Err(Error::Parse(format!("operator row {r} has {} entries, expected {n}", row.len())));
        }
        data.extend(row);
    }
    Ok(OperatorMatrix { t: CMatrix::from_rows(n, n, data)?, reg, rank, residual, horizon, dictionary })
}

pub fn write_u<T: Real>(path: &Path, u: &UApprox<T>) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{U_MAGIC}")?;
    writeln!(w, "dictionary {}", u.dict.descriptor())?;
    writeln!(w, "mode {}", u.mode)?;
    writeln!(w, "iterations {}", u.iterations)?;
    writeln!(w, "final_residual {}", fmt(u.final_residual))?;
    writeln!(w, "residuals {}", fmt_list(&u.residuals))?;
    writeln!(w, "coeffs")?;
    for &c in &u.coeffs {
        writeln!(w, "{}", fmt_c(c))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_u<T: Real>(path: &Path) -> Result<UApprox<T>> {
    let mut l = Lines::new(open_artifact(path)?, "coefficient");
    l.expect(U_MAGIC)?;
    let dict = Dictionary::parse_descriptor(&l.field("dictionary")?)?;
    let mode: IterationMode = l.field("mode")?.parse()?;
    let iterations = parse_usize(&l.field("iterations")?)?;
    let final_residual = parse_num(&l.field("final_residual")?)?;
    let residuals = parse_list(&l.field("residuals")?)?;
    l.expect("coeffs")?;
    let coeffs = (0..dict.size()).map(|_| parse_c(&l.next_line()?)).collect::<Result<Vec<_>>>()?;
    Ok(UApprox { dict, coeffs, iterations, final_residual, residuals, mode })
}

pub fn write_model<T: Real>(path: &Path, m: &SmoothModel<T>) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{MODEL_MAGIC}")?;
    writeln!(w, "sizes {}", m.sizes().iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" "))?;
    writeln!(w, "activation tanh")?;
    writeln!(w, "x_mean {}", fmt_list(&m.x_mean))?;
    writeln!(w, "x_scale {}", fmt_list(&m.x_scale))?;
    writeln!(w, "y_mean {}", fmt(m.y_mean))?;
    writeln!(w, "y_scale {}", fmt(m.y_scale))?;
    writeln!(w, "epochs_run {}", m.epochs_run)?;
    writeln!(w, "final_mse {}", fmt(m.final_mse))?;
    writeln!(w, "params")?;
    let p = m.params();
    let mut off = 0;
    for s in m.sizes().windows(2) {
        let (fan_in, fan_out) = (s[0], s[1]);
        writeln!(w, "weights {fan_out} {fan_in}")?;
        for o in 0..fan_out {
            writeln!(w, "{}", fmt_list(&p[off + o * fan_in..off + (o + 1) * fan_in]))?;
        }
        off += fan_out * fan_in;
        writeln!(w, "bias {fan_out}")?;
        writeln!(w, "{}", fmt_list(&p[off..off + fan_out]))?;
        off += fan_out;
    }
    w.flush()?;
    Ok(())
}

pub fn read_model<T: Real>(path: &Path) -> Result<SmoothModel<T>> {
    let mut l = Lines::new(open_artifact(path)?, "model");
    l.expect(MODEL_MAGIC)?;
    let sizes: Vec<usize> = l.field("sizes")?.split_whitespace().map(parse_usize).collect::<Result<_>>()?;
    l.expect("activation tanh")?;
    let x_mean = parse_list(&l.field("x_mean")?)?;
    let x_scale = parse_list(&l.field("x_scale")?)?;
    let y_mean = parse_num(&l.field("y_mean")?)?;
    let y_scale = parse_num(&l.field("y_scale")?)?;
    let epochs_run = parse_usize(&l.field("epochs_run")?)?;
    let final_mse = parse_num(&l.field("final_mse")?)?;
    l.expect("params")?;
    let mut params = Vec::new();
    for s in sizes.windows(2) {
        let (fan_in, fan_out) = (s[0], s[1]);
        l.expect(&format!("weights {fan_out} {fan_in}"))?;
        for _ in 0..fan_out {
            let row: Vec<T> = parse_list(&l.next_line()?)?;
            if row.len() != fan_in {
                return Err(Error::Parse(format!("weight row has {} values, expected {fan_in}", row.len())));
            }
            params.extend(row);
        }
        l.expect(&format!("bias {fan_out}"))?;
        let b: Vec<T> = parse_list(&l.next_line()?)?;
        if b.len() != fan_out {
            return Err(Error::Parse(format!("bias row has {} values, expected {fan_out}", b.len())));
        }
        params.extend(b);
    }
    let n = sizes.first().copied().unwrap_or(0);
    if x_mean.len() != n || x_scale.len() != n {
        return Err(Error::Parse("standardization vectors do not match the input size".into()));
    }
    let mut m = SmoothModel::from_parts(sizes, params)?;
    m.x_mean = x_mean;
    m.x_scale = x_scale;
    m.y_mean = y_mean;
    m.y_scale = y_scale;
    m.epochs_run = epochs_run;
    m.final_mse = final_mse;
    Ok(m)
}

/// Contents of `grid.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub bounds: Vec<[f64; 2]>,
    pub resolution: Vec<usize>,
    pub threshold: f64,
    pub seed: usize,
    pub volume_fraction: f64,
}

/// Writes `mask.csv` and `grid.json` into `dir`. `values` are the field values per cell.
pub fn write_mask<T: Real>(dir: &Path, mask: &RoaMask<T>, values: &[T]) -> Result<()> {
    let grid = &mask.grid;
    let n = grid.resolution().len();
    let mut w = csv::Writer::from_writer(create(&dir.join("mask.csv"))?);
    let mut header: Vec<String> = (1..=n).map(|d| format!("i_{d}")).collect();
    header.extend((1..=n).map(|d| format!("x_{d}")));
    header.extend(["value".into(), "mask".into()]);
    w.write_record(&header)?;
    for i in 0..grid.len() {
        let mut rec: Vec<String> = grid.multi(i).iter().map(|j| j.to_string()).collect();
        rec.extend(grid.center(i).into_iter().map(fmt));
        rec.push(fmt(values[i]));
        rec.push(u8::from(mask.mask[i]).to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    let meta = GridMeta {
        bounds: grid.region().bounds().iter().map(|&(a, b)| [a.as_f64(), b.as_f64()]).collect(),
        resolution: grid.resolution().to_vec(),
        threshold: mask.threshold.as_f64(),
        seed: mask.seed,
        volume_fraction: mask.volume_fraction.as_f64(),
    };
    let mut g = create(&dir.join("grid.json"))?;
    serde_json::to_writer_pretty(&mut g, &meta).map_err(|e| Error::Parse(e.to_string()))?;
    writeln!(g)?;
    g.flush()?;
    Ok(())
}

/// Reads the mask and per-cell values written by [`write_mask`].
pub fn read_mask<T: Real>(dir: &Path) -> Result<(RoaMask<T>, Vec<T>)> {
    let meta: GridMeta =
        serde_json::from_reader(open_artifact(&dir.join("grid.json"))?).map_err(|e| Error::Parse(format!("grid.json: {e}")))?;
    let region = Region::new(meta.bounds.iter().map(|b| (T::lit(b[0]), T::lit(b[1]))).collect())?;
    let grid = Grid::new(region, meta.resolution.clone())?;
    let n = meta.resolution.len();
    let mut r = csv::Reader::from_reader(open_artifact(&dir.join("mask.csv"))?);
    let mut mask = Vec::with_capacity(grid.len());
    let mut values = Vec::with_capacity(grid.len());
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != 2 * n + 2 {
            return Err(Error::Parse(format!("mask.csv row has {} columns, expected {}", rec.len(), 2 * n + 2)));
        }
        values.push(parse_num(&rec[2 * n])?);
        mask.push(&rec[2 * n + 1] == "1");
    }
    if mask.len() != grid.len() {
        return Err(Error::Parse(format!("mask.csv has {} rows for {} cells", mask.len(), grid.len())));
    }
    let m = RoaMask {
        grid,
        mask,
        threshold: T::lit(meta.threshold),
        seed: meta.seed,
        volume_fraction: T::lit(meta.volume_fraction),
    };
    Ok((m, values))
}
