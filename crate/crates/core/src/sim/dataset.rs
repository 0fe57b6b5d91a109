//! Parameter sweeps, frame storage, normalization and on-disk formats.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::geometry::StrengthParam;
use super::integrator::{run_simulation, SimConfig};
use super::potential::Strengths;
use crate::error::{dim_err, Error, Result};
use crate::linalg::Matrix;
use crate::rng::substream;

/// Which strength coefficients are appended to position and velocity.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameLayout {
    /// lat_assoc, long_assoc, long_angle, quad_angles.
    #[default]
    Ten,
    /// All five strengths.
    Eleven,
}

impl FrameLayout {
    pub fn params(self) -> &'static [StrengthParam] {
        use StrengthParam::*;
        match self {
            FrameLayout::Ten => &[LatAssoc, LongAssoc, LongAngle, QuadAngles],
            FrameLayout::Eleven => &[LatAssoc, LongAssoc, LatAngle, LongAngle, QuadAngles],
        }
    }

    pub fn width(self) -> usize {
        6 + self.params().len()
    }

    pub fn coefficients(self, s: &Strengths) -> Vec<f64> {
        self.params().iter().map(|&p| s.get(p)).collect()
    }

    pub fn columns(self) -> Vec<String> {
        let mut c: Vec<String> = ["x", "y", "z", "vx", "vy", "vz"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        c.extend(self.params().iter().map(|p| p.name().to_string()));
        c
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub run: usize,
    pub step: usize,
    /// n × F inputs.
    pub x: Matrix,
    /// n × 1 per-particle potential energy, zJ.
    pub y: Matrix,
}

/// Cartesian product of strength values; unlisted strengths stay at `base`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamGrid {
    #[serde(default)]
    pub base: Strengths,
    pub axes: Vec<(StrengthParam, Vec<f64>)>,
}

impl ParamGrid {
    pub const GRID_VALUES: [f64; 7] = [0.1, 0.3, 0.6, 1.0, 1.3, 1.6, 1.9];

    pub fn desk() -> Self {
        let v = vec![0.1, 1.0, 1.9];
        Self {
            base: Strengths::default(),
            axes: vec![
                (StrengthParam::LatAssoc, v.clone()),
                (StrengthParam::LongAssoc, v),
            ],
        }
    }

    pub fn full() -> Self {
        Self {
            base: Strengths::default(),
            axes: StrengthParam::ALL
                .iter()
                .map(|&p| (p, Self::GRID_VALUES.to_vec()))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|(_, v)| v.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Combination `idx`, first axis varying slowest.
    pub fn combination(&self, mut idx: usize) -> Strengths {
        let mut s = self.base;
        for (p, values) in self.axes.iter().rev() {
            s.set(*p, values[idx % values.len()]);
            idx /= values.len();
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run: usize,
    pub strengths: Strengths,
    pub frames: usize,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub n: usize,
    pub layout: FrameLayout,
    pub frames: Vec<Frame>,
    pub runs: Vec<RunSummary>,
    pub seed: u64,
    pub config: SimConfig,
}

impl Dataset {
    pub fn f(&self) -> usize {
        self.layout.width()
    }

    pub fn failed_runs(&self) -> usize {
        self.runs.iter().filter(|r| r.error.is_some()).count()
    }
}

/// Run every grid combination in parallel. Run `r` uses `substream(seed, r)`.
/// Failed runs are kept in `runs` with their error and contribute no frames.
pub fn generate_dataset(grid: &ParamGrid, config: &SimConfig, seed: u64) -> Result<Dataset> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("parameter grid is empty".into()));
    }
    let mut base = config.clone();
    base.validate()?;
    for r in 0..grid.len() {
        base.strengths = grid.combination(r);
        base.validate()?;
    }
    let results: Vec<(RunSummary, Vec<Frame>)> = (0..grid.len())
        .into_par_iter()
        .map(|r| {
            let mut cfg = config.clone();
            cfg.strengths = grid.combination(r);
            let run_seed = rand::RngCore::next_u64(&mut substream(seed, r as u64));
            match run_simulation(&cfg, run_seed, r) {
                Ok(frames) => (
                    RunSummary {
                        run: r,
                        strengths: cfg.strengths,
                        frames: frames.len(),
                        error: None,
                    },
                    frames,
                ),
                Err(e) => (
                    RunSummary {
                        run: r,
                        strengths: cfg.strengths,
                        frames: 0,
                        error: Some(e.to_string()),
                    },
                    Vec::new(),
                ),
            }
        })
        .collect();
    let n = config.shape.n_rings * config.shape.k;
    let mut runs = Vec::with_capacity(results.len());
    let mut frames = Vec::new();
    for (s, f) in results {
        runs.push(s);
        frames.extend(f);
    }
    Ok(Dataset {
        n,
        layout: config.layout,
        frames,
        runs,
        seed,
        config: config.clone(),
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMode {
    /// Separate statistics for every (particle, column) pair.
    #[default]
    PerNodeFeature,
    /// One statistic per column, pooled over particles.
    PerFeature,
}

/// z-score statistics fitted on a subset of frames.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalization {
    pub mode: NormalizationMode,
    pub x_mean: Matrix,
    pub x_std: Matrix,
    pub y_mean: Matrix,
    pub y_std: Matrix,
}

/// Series with spread below this get unit std (they are only centred).
const MIN_STD: f64 = 1e-12;

fn moments(mats: &[&Matrix], mode: NormalizationMode) -> (Matrix, Matrix) {
    let (n, f) = mats[0].shape();
    let rows = match mode {
        NormalizationMode::PerNodeFeature => n,
        NormalizationMode::PerFeature => 1,
    };
    let mut mean = Matrix::zeros(rows, f);
    let mut m2 = Matrix::zeros(rows, f);
    let mut count = 0.0;
    // Welford over samples, one sample = one frame (or one frame row).
    for m in mats {
        for i in 0..n {
            let r = if rows == 1 { 0 } else { i };
            if rows == 1 || i == 0 {
                count += 1.0;
            }
            for j in 0..f {
                let v = m[(i, j)];
                let d = v - mean[(r, j)];
                mean[(r, j)] += d / count;
                m2[(r, j)] += d * (v - mean[(r, j)]);
            }
        }
    }
    let std = m2.map(|s| {
        let sd = (s / count).sqrt();
        if sd < MIN_STD {
            1.0
        } else {
            sd
        }
    });
    (mean, std)
}

impl Normalization {
    pub fn fit(frames: &[Frame], indices: &[usize], mode: NormalizationMode) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidArgument(
                "normalization needs at least one frame".into(),
            ));
        }
        let xs: Vec<&Matrix> = indices.iter().map(|&i| &frames[i].x).collect();
        let ys: Vec<&Matrix> = indices.iter().map(|&i| &frames[i].y).collect();
        let (x_mean, x_std) = moments(&xs, mode);
        let (y_mean, y_std) = moments(&ys, mode);
        Ok(Self {
            mode,
            x_mean,
            x_std,
            y_mean,
            y_std,
        })
    }

    fn apply(m: &Matrix, mean: &Matrix, std: &Matrix) -> Result<Matrix> {
        if m.cols() != mean.cols() || (mean.rows() != 1 && mean.rows() != m.rows()) {
            return Err(dim_err(
                "normalize",
                format!("{:?} vs stats {:?}", m.shape(), mean.shape()),
            ));
        }
        let mut out = m.clone();
        for i in 0..m.rows() {
            let r = if mean.rows() == 1 { 0 } else { i };
            for j in 0..m.cols() {
                out[(i, j)] = (m[(i, j)] - mean[(r, j)]) / std[(r, j)];
            }
        }
        Ok(out)
    }

    pub fn x(&self, m: &Matrix) -> Result<Matrix> {
        Self::apply(m, &self.x_mean, &self.x_std)
    }

    pub fn y(&self, m: &Matrix) -> Result<Matrix> {
        Self::apply(m, &self.y_mean, &self.y_std)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub n: usize,
    pub f: usize,
    pub frame_count: usize,
    pub columns: Vec<String>,
    pub layout: FrameLayout,
    pub seed: u64,
    pub config: SimConfig,
    pub runs: Vec<RunSummary>,
    pub failed_runs: usize,
    /// Free-form echo of whatever produced the dataset.
    #[serde(default)]
    pub extra: serde_json::Value,
}

pub const MANIFEST: &str = "manifest.json";
pub const CSV_FILE: &str = "frames.csv";
pub const BIN_FILE: &str = "frames.bin";

impl Dataset {
    pub fn manifest(&self, format: &str, extra: serde_json::Value) -> DatasetManifest {
        DatasetManifest {
            format: format.into(),
            n: self.n,
            f: self.f(),
            frame_count: self.frames.len(),
            columns: self.layout.columns(),
            layout: self.layout,
            seed: self.seed,
            config: self.config.clone(),
            runs: self.runs.clone(),
            failed_runs: self.failed_runs(),
            extra,
        }
    }

    fn write_manifest(&self, dir: &Path, format: &str, extra: serde_json::Value) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.manifest(format, extra))?;
        fs::write(dir.join(MANIFEST), text + "\n")?;
        Ok(())
    }

    /// `frames.csv` with columns `run,frame,step,node,<X columns>,energy`.
    pub fn write_csv(&self, dir: &Path, extra: serde_json::Value) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut w = BufWriter::new(fs::File::create(dir.join(CSV_FILE))?);
        write!(w, "run,frame,step,node")?;
        for c in self.layout.columns() {
            write!(w, ",{c}")?;
        }
        writeln!(w, ",energy")?;
        for (fi, fr) in self.frames.iter().enumerate() {
            for i in 0..self.n {
                write!(w, "{},{},{},{}", fr.run, fi, fr.step, i)?;
                for v in fr.x.row(i) {
                    write!(w, ",{v}")?;
                }
                writeln!(w, ",{}", fr.y[(i, 0)])?;
            }
        }
        w.flush()?;
        self.write_manifest(dir, "csv", extra)
    }

    /// `frames.bin`: per frame, `run` and `step` as u64 LE, then X row-major
    /// and y as f64 LE.
    pub fn write_bin(&self, dir: &Path, extra: serde_json::Value) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut w = BufWriter::new(fs::File::create(dir.join(BIN_FILE))?);
        for fr in &self.frames {
            w.write_all(&(fr.run as u64).to_le_bytes())?;
            w.write_all(&(fr.step as u64).to_le_bytes())?;
            for v in fr.x.as_slice().iter().chain(fr.y.as_slice()) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        self.write_manifest(dir, "bin", extra)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let mpath = dir.join(MANIFEST);
        let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(&mpath)?)?;
        if manifest.f != manifest.layout.width() {
            return Err(Error::Parse {
                path: mpath,
                detail: format!(
                    "f = {} disagrees with layout {:?}",
                    manifest.f, manifest.layout
                ),
            });
        }
        let frames = match manifest.format.as_str() {
            "bin" => read_bin(&dir.join(BIN_FILE), &manifest)?,
            "csv" => read_csv(&dir.join(CSV_FILE), &manifest)?,
            other => {
                return Err(Error::Parse {
                    path: mpath,
                    detail: format!("unknown format `{other}`"),
                })
            }
        };
        Ok(Dataset {
            n: manifest.n,
            layout: manifest.layout,
            frames,
            runs: manifest.runs,
            seed: manifest.seed,
            config: manifest.config,
        })
    }
}

fn read_bin(path: &Path, m: &DatasetManifest) -> Result<Vec<Frame>> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let per = 16 + 8 * m.n * (m.f + 1);
    if bytes.len() != per * m.frame_count {
        return Err(Error::Parse {
            path: path.into(),
            detail: format!(
                "expected {} bytes, found {}",
                per * m.frame_count,
                bytes.len()
            ),
        });
    }
    let u = |b: &[u8]| u64::from_le_bytes(b.try_into().expect("8 bytes"));
    let f = |b: &[u8]| f64::from_le_bytes(b.try_into().expect("8 bytes"));
    let mut frames = Vec::with_capacity(m.frame_count);
    for chunk in bytes.chunks_exact(per) {
        let vals: Vec<f64> = chunk[16..].chunks_exact(8).map(f).collect();
        let (xv, yv) = vals.split_at(m.n * m.f);
        frames.push(Frame {
            run: u(&chunk[..8]) as usize,
            step: u(&chunk[8..16]) as usize,
            x: Matrix::from_vec(m.n, m.f, xv.to_vec())?,
            y: Matrix::from_vec(m.n, 1, yv.to_vec())?,
        });
    }
    Ok(frames)
}

fn read_csv(path: &Path, m: &DatasetManifest) -> Result<Vec<Frame>> {
    let perr = |line: usize, detail: String| Error::Parse {
        path: path.into(),
        detail: format!("line {line}: {detail}"),
    };
    let reader = BufReader::new(fs::File::open(path)?);
    let mut frames: Vec<Frame> = Vec::with_capacity(m.frame_count);
    let width = 4 + m.f + 1;
    for (ln, line) in reader.lines().enumerate().skip(1) {
        let line = line?;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width {
            return Err(perr(
                ln + 1,
                format!("{} fields, expected {width}", fields.len()),
            ));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|e| perr(ln + 1, e.to_string()));
        let (run, fi, step, node) = (
            int(fields[0])?,
            int(fields[1])?,
            int(fields[2])?,
            int(fields[3])?,
        );
        if fi == frames.len() {
            frames.push(Frame {
                run,
                step,
                x: Matrix::zeros(m.n, m.f),
                y: Matrix::zeros(m.n, 1),
            });
        }
        if fi + 1 != frames.len() || node >= m.n {
            return Err(perr(ln + 1, format!("frame {fi} node {node} out of order")));
        }
        let fr = frames.last_mut().expect("pushed above");
        for (j, s) in fields[4..].iter().enumerate() {
            let v: f64 = s
                .parse()
                .map_err(|e: std::num::ParseFloatError| perr(ln + 1, e.to_string()))?;
            if j < m.f {
                fr.x[(node, j)] = v;
            } else {
                fr.y[(node, 0)] = v;
            }
        }
    }
    if frames.len() != m.frame_count {
        return Err(perr(
            0,
            format!("{} frames, manifest says {}", frames.len(), m.frame_count),
        ));
    }
    Ok(frames)
}
