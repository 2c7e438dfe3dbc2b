//! Multi-view datasets: loading, zero-filling, missingness simulation and
//! synthetic generation.
//!
//! Directory layout read by [`load_views`] and written by [`write_views`]:
//!
//! ```text
//! view_0.csv … view_{M-1}.csv   one sample per line, numeric cells, no header
//! labels.csv                    optional, one integer label per line
//! mask.csv                      optional, one line per sample with M 0/1 flags
//! ```
//!
//! Cells may be separated by commas, semicolons, tabs or spaces.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// One client's view: features plus which samples are observed.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewDataset {
    pub view: usize,
    pub x: Matrix,
    pub present: Vec<bool>,
}

impl ViewDataset {
    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    /// Zero the rows of absent samples.
    pub fn zero_fill(&mut self) {
        for i in 0..self.x.rows() {
            if !self.present[i] {
                self.x.row_mut(i).iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    /// Per-column zero mean and unit variance using present rows only;
    /// absent rows stay zero.
    pub fn standardize(&mut self) {
        let rows: Vec<usize> = (0..self.n()).filter(|&i| self.present[i]).collect();
        if rows.is_empty() {
            return;
        }
        let cnt = rows.len() as f64;
        for c in 0..self.dim() {
            let mean = rows.iter().map(|&i| self.x.get(i, c)).sum::<f64>() / cnt;
            let var = rows.iter().map(|&i| (self.x.get(i, c) - mean).powi(2)).sum::<f64>() / cnt;
            let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
            for &i in &rows {
                let v = (self.x.get(i, c) - mean) / sd;
                self.x.set(i, c, v);
            }
        }
        self.zero_fill();
    }
}

/// All views of a dataset, row-aligned, with optional ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewData {
    pub views: Vec<ViewDataset>,
    pub labels: Option<Vec<usize>>,
}

impl MultiViewData {
    pub fn n(&self) -> usize {
        self.views.first().map_or(0, ViewDataset::n)
    }

    pub fn num_views(&self) -> usize {
        self.views.len()
    }

    /// Samples observed on every view.
    pub fn complete_count(&self) -> usize {
        (0..self.n())
            .filter(|&i| self.views.iter().all(|v| v.present[i]))
            .count()
    }

    pub fn standardize(&mut self) {
        self.views.iter_mut().for_each(ViewDataset::standardize);
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.views.is_empty() {
            return Err(Error::param("dataset has no views"));
        }
        for v in &self.views {
            if v.n() != n || v.present.len() != n {
                return Err(Error::param(format!("view {} has {} rows, expected {n}", v.view, v.n())));
            }
        }
        if let Some(l) = &self.labels {
            if l.len() != n {
                return Err(Error::param(format!("{} labels for {n} samples", l.len())));
            }
        }
        Ok(())
    }
}

fn split_cells(line: &str) -> impl Iterator<Item = &str> {
    line.split(|c: char| c == ',' || c == ';' || c.is_whitespace())
        .filter(|s| !s.is_empty())
}

fn read_matrix(path: &Path) -> Result<Matrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::load(path, 0, e.to_string()))?;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let start = data.len();
        for cell in split_cells(line) {
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::load(path, ln + 1, format!("non-numeric cell '{cell}'")))?;
            if !v.is_finite() {
                return Err(Error::load(path, ln + 1, format!("non-finite cell '{cell}'")));
            }
            data.push(v);
        }
        let width = data.len() - start;
        match cols {
            None => cols = Some(width),
            Some(c) if c != width => {
                return Err(Error::load(path, ln + 1, format!("expected {c} cells, found {width}")));
            }
            _ => {}
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::load(path, 0, "file has no rows"));
    }
    Matrix::from_vec(rows, cols.unwrap_or(0), data)
}

/// One integer per non-blank line.
pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| Error::load(path, 0, e.to_string()))?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let v: i64 = t
            .parse()
            .map_err(|_| Error::load(path, ln + 1, format!("malformed label '{t}'")))?;
        if v < 0 {
            return Err(Error::load(path, ln + 1, format!("negative label {v}")));
        }
        out.push(v as usize);
    }
    Ok(out)
}

fn read_mask(path: &Path, views: usize) -> Result<Vec<Vec<bool>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::load(path, 0, e.to_string()))?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let flags: Vec<bool> = split_cells(line)
            .map(|c| match c {
                "1" => Ok(true),
                "0" => Ok(false),
                other => Err(Error::load(path, ln + 1, format!("mask flag '{other}' is not 0/1"))),
            })
            .collect::<Result<_>>()?;
        if flags.len() != views {
            return Err(Error::load(
                path,
                ln + 1,
                format!("expected {views} flags, found {}", flags.len()),
            ));
        }
        if !flags.iter().any(|f| *f) {
            return Err(Error::load(path, ln + 1, "sample is absent from every view"));
        }
        out.push(flags);
    }
    Ok(out)
}

/// Read a dataset directory; features are zero-filled where masked and
/// standardized per view over present samples.
pub fn load_views(dir: &Path) -> Result<MultiViewData> {
    let mut mats = Vec::new();
    loop {
        let p = dir.join(format!("view_{}.csv", mats.len()));
        if !p.exists() {
            break;
        }
        mats.push((read_matrix(&p)?, p));
    }
    if mats.is_empty() {
        return Err(Error::load(dir.join("view_0.csv"), 0, "no view files found"));
    }
    let n = mats[0].0.rows();
    for (m, p) in &mats {
        if m.rows() != n {
            return Err(Error::load(p, m.rows(), format!("has {} rows, view_0.csv has {n}", m.rows())));
        }
    }

    let mask_path = dir.join("mask.csv");
    let mask = if mask_path.exists() {
        let mask = read_mask(&mask_path, mats.len())?;
        if mask.len() != n {
            return Err(Error::load(&mask_path, mask.len(), format!("has {} rows, expected {n}", mask.len())));
        }
        Some(mask)
    } else {
        None
    };

    let labels_path = dir.join("labels.csv");
    let labels = if labels_path.exists() {
        let l = read_labels(&labels_path)?;
        if l.len() != n {
            return Err(Error::load(&labels_path, l.len(), format!("has {} labels, expected {n}", l.len())));
        }
        Some(l)
    } else {
        None
    };

    let views = mats
        .into_iter()
        .enumerate()
        .map(|(v, (x, _))| {
            let present = match &mask {
                Some(m) => m.iter().map(|r| r[v]).collect(),
                None => vec![true; n],
            };
            let mut view = ViewDataset { view: v, x, present };
            view.standardize();
            view
        })
        .collect();
    Ok(MultiViewData { views, labels })
}

/// One label per line.
pub fn write_labels(labels: &[usize], path: &Path) -> Result<()> {
    let mut s = String::with_capacity(labels.len() * 3);
    for l in labels {
        writeln!(s, "{l}").expect("string write");
    }
    fs::write(path, s)?;
    Ok(())
}

/// Write views, labels and (when any sample is missing) the mask.
pub fn write_views(data: &MultiViewData, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for v in &data.views {
        let mut s = String::new();
        for r in v.x.iter_rows() {
            let cells: Vec<String> = r.iter().map(|c| format!("{c:?}")).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        fs::write(dir.join(format!("view_{}.csv", v.view)), s)?;
    }
    if let Some(labels) = &data.labels {
        write_labels(labels, &dir.join("labels.csv"))?;
    }
    if data.complete_count() < data.n() {
        let mut s = String::new();
        for i in 0..data.n() {
            let flags: Vec<&str> = data
                .views
                .iter()
                .map(|v| if v.present[i] { "1" } else { "0" })
                .collect();
            s.push_str(&flags.join(" "));
            s.push('\n');
        }
        fs::write(dir.join("mask.csv"), s)?;
    }
    Ok(())
}

/// How to knock views out of samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissingSpec {
    /// Fraction of samples that lose at least one view.
    pub rate: f64,
    pub seed: u64,
    /// Dirichlet concentration skewing which views lose samples.
    pub alpha: Option<f64>,
}

/// Per-view shares of the missing-view slots and the resulting counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewAllocation {
    pub shares: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Draw view shares from `Dirichlet(α·1)` and split `slots` into per-view
/// counts by largest remainder.
pub fn dirichlet_allocate(spec: &MissingSpec, views: usize, slots: usize) -> Result<ViewAllocation> {
    let alpha = spec
        .alpha
        .ok_or_else(|| Error::param("dirichlet allocation needs a concentration"))?;
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::param(format!("dirichlet concentration must be positive, got {alpha}")));
    }
    if views == 0 {
        return Err(Error::param("need at least one view"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0xD1D1_D1D1);
    // Gamma(α) = Gamma(α + 1) · U^{1/α}, kept in log space so tiny α does
    // not underflow every draw to zero.
    let gamma = Gamma::new(alpha + 1.0, 1.0).map_err(|e| Error::param(e.to_string()))?;
    let logs: Vec<f64> = (0..views)
        .map(|_| {
            let g: f64 = gamma.sample(&mut rng);
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            g.ln() + u.ln() / alpha
        })
        .collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = w.iter().sum();
    let shares: Vec<f64> = w.iter().map(|v| v / total).collect();

    let raw: Vec<f64> = shares.iter().map(|s| s * slots as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut rest = slots - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..views).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &v in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        counts[v] += 1;
        rest -= 1;
    }
    Ok(ViewAllocation { shares, counts })
}

/// Make `round(N·rate)` samples incomplete. Each loses
/// `round(U(1, M−1))` views and keeps at least one.
pub fn apply_missing(data: &MultiViewData, spec: &MissingSpec) -> Result<MultiViewData> {
    if !(0.0..1.0).contains(&spec.rate) {
        return Err(Error::param(format!("missing rate must lie in [0, 1), got {}", spec.rate)));
    }
    data.validate()?;
    let n = data.n();
    let m = data.num_views();
    let complete = ((n as f64) * (1.0 - spec.rate)).round() as usize;
    let incomplete = n - complete;
    let mut out = data.clone();
    if incomplete == 0 {
        return Ok(out);
    }
    if m < 2 {
        return Err(Error::param("simulating missing views needs at least two views"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut chosen: Vec<usize> = order[..incomplete].to_vec();
    chosen.sort_unstable();

    let lose: Vec<usize> = chosen
        .iter()
        .map(|_| {
            let hi = (m - 1) as f64;
            let draw = if hi > 1.0 { rng.random_range(1.0..hi) } else { 1.0 };
            (draw.round() as usize).clamp(1, m - 1)
        })
        .collect();

    let dropped: Vec<Vec<usize>> = match spec.alpha {
        None => lose
            .iter()
            .map(|&k| {
                let mut v: Vec<usize> = (0..m).collect();
                v.shuffle(&mut rng);
                v.truncate(k);
                v
            })
            .collect(),
        Some(_) => {
            let slots = lose.iter().sum();
            let mut quota: Vec<i64> = dirichlet_allocate(spec, m, slots)?
                .counts
                .into_iter()
                .map(|c| c as i64)
                .collect();
            let mut by_need: Vec<usize> = (0..chosen.len()).collect();
            by_need.sort_by(|&a, &b| lose[b].cmp(&lose[a]).then(a.cmp(&b)));
            let mut dropped = vec![Vec::new(); chosen.len()];
            for s in by_need {
                let mut views: Vec<usize> = (0..m).collect();
                views.sort_by(|&a, &b| quota[b].cmp(&quota[a]).then(a.cmp(&b)));
                views.truncate(lose[s]);
                for &v in &views {
                    quota[v] -= 1;
                }
                dropped[s] = views;
            }
            dropped
        }
    };

    for (&i, views) in chosen.iter().zip(&dropped) {
        for &v in views {
            out.views[v].present[i] = false;
        }
    }
    out.views.iter_mut().for_each(ViewDataset::zero_fill);
    Ok(out)
}

/// Parameters of the synthetic multi-view benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub samples: usize,
    pub clusters: usize,
    /// Feature width of each view; its length is the number of views.
    pub dims: Vec<usize>,
    /// Distance between any two cluster means, in units of the noise scale.
    pub separation: f64,
    pub seed: u64,
}

/// Gaussian blobs with a shared cluster identity, seen through an
/// independent random linear map per view. Each view draws its own noise so
/// the views complement each other.
pub fn synth_blobs(spec: &SynthSpec) -> Result<MultiViewData> {
    let SynthSpec {
        samples: n,
        clusters: k,
        ref dims,
        separation,
        seed,
    } = *spec;
    if k == 0 || k > n {
        return Err(Error::param(format!("cannot draw {k} clusters over {n} samples")));
    }
    if dims.is_empty() || dims.contains(&0) {
        return Err(Error::param("every view needs a positive width"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let latent = k.max(2);
    // Mutually equidistant means: scaled standard basis vectors.
    let scale = separation / std::f64::consts::SQRT_2;
    let mut labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    labels.shuffle(&mut rng);

    let views = dims
        .iter()
        .enumerate()
        .map(|(v, &d)| {
            let proj = Matrix::from_fn(latent, d, |_, _| {
                let g: f64 = StandardNormal.sample(&mut rng);
                g / (latent as f64).sqrt()
            });
            let z = Matrix::from_fn(n, latent, |i, j| {
                let mean = if j == labels[i] { scale } else { 0.0 };
                let e: f64 = StandardNormal.sample(&mut rng);
                mean + e
            });
            ViewDataset {
                view: v,
                x: z.matmul(&proj).expect("latent width matches"),
                present: vec![true; n],
            }
        })
        .collect();
    Ok(MultiViewData {
        views,
        labels: Some(labels),
    })
}
