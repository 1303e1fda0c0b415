//! Robustness evaluation: clean accuracy, accuracy-vs-ε sweeps, and
//! adversarial/perturbation image grids.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::attacks::{fgsm, pgd, AdvExample, AttackConfig};
use crate::checkpoint;
use crate::data::{denormalize, encode_ppm, normalize, Dataset, Image};
use crate::error::{Error, Result};
use crate::nn::ModelParams;
use crate::rng::derive_seed;
use crate::tensor::Tensor;

/// Table I grid.
pub const FGSM_DEFAULT_EPS: [f64; 7] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
/// Table II grid.
pub const PGD_DEFAULT_EPS: [f64; 6] = [0.0, 0.05, 0.1, 0.15, 0.2, 0.3];

/// Width in pixels of the white gaps between grid cells.
pub const GRID_SEPARATOR: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    Fgsm,
    Pgd,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Fgsm => "fgsm",
            AttackKind::Pgd => "pgd",
        }
    }

    pub fn default_eps(self) -> Vec<f64> {
        match self {
            AttackKind::Fgsm => FGSM_DEFAULT_EPS.to_vec(),
            AttackKind::Pgd => PGD_DEFAULT_EPS.to_vec(),
        }
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fgsm" => Ok(AttackKind::Fgsm),
            "pgd" => Ok(AttackKind::Pgd),
            other => Err(Error::Config(format!("unknown attack {other:?}, expected fgsm or pgd"))),
        }
    }
}

impl std::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Runs one attack at budget `epsilon`; `cfg` supplies the PGD settings.
pub fn run_attack(
    model: &ModelParams,
    x: &Tensor,
    label: usize,
    kind: AttackKind,
    epsilon: f64,
    cfg: &AttackConfig,
) -> Result<AdvExample> {
    match kind {
        AttackKind::Fgsm => fgsm(model, x, label, epsilon),
        AttackKind::Pgd => pgd(model, x, label, &AttackConfig { epsilon, ..cfg.clone() }),
    }
}

/// Percentage of examples whose prediction on the normalized image matches
/// the label.
pub fn accuracy(model: &ModelParams, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::Data("accuracy of an empty dataset".into()));
    }
    let mut correct = 0usize;
    for (img, label) in ds.examples() {
        if model.predict(&normalize(img))? == *label {
            correct += 1;
        }
    }
    Ok(100.0 * correct as f64 / ds.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub epsilon: f64,
    pub accuracy_percent: f64,
    pub n_examples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub attack_name: String,
    pub rows: Vec<ReportRow>,
    /// SHA-256 of the evaluated checkpoint.
    pub model_id: String,
    pub config: AttackConfig,
}

impl EvalReport {
    pub fn accuracy_at(&self, epsilon: f64) -> Option<f64> {
        self.rows.iter().find(|r| r.epsilon == epsilon).map(|r| r.accuracy_percent)
    }
}

fn validate_sweep_eps(eps_list: &[f64]) -> Result<()> {
    if eps_list.is_empty() {
        return Err(Error::Config("epsilon list is empty".into()));
    }
    if eps_list.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
        return Err(Error::Config("epsilons must be finite and non-negative".into()));
    }
    if eps_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("epsilons must be strictly increasing".into()));
    }
    if !eps_list.contains(&0.0) {
        return Err(Error::Config("epsilon list must contain 0".into()));
    }
    Ok(())
}

/// Seed of the attack on example `example` at sweep position `eps_index`.
pub fn example_seed(sweep_seed: u64, eps_index: usize, example: usize) -> u64 {
    derive_seed(sweep_seed, &[eps_index as u64, example as u64])
}

/// Attacks every example at every ε and records adversarial accuracy.
pub fn epsilon_sweep(
    model: &ModelParams,
    ds: &Dataset,
    kind: AttackKind,
    eps_list: &[f64],
    cfg: &AttackConfig,
) -> Result<EvalReport> {
    validate_sweep_eps(eps_list)?;
    if ds.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty dataset".into()));
    }
    cfg.validate()?;
    let inputs: Vec<(Tensor, usize)> = ds.examples().iter().map(|(i, l)| (normalize(i), *l)).collect();
    let mut rows = Vec::with_capacity(eps_list.len());
    for (ei, &eps) in eps_list.iter().enumerate() {
        let mut correct = 0usize;
        for (xi, (x, label)) in inputs.iter().enumerate() {
            let per_example = AttackConfig {
                seed: example_seed(cfg.seed, ei, xi),
                ..cfg.clone()
            };
            let adv = run_attack(model, x, *label, kind, eps, &per_example).map_err(|e| Error::Attack {
                index: xi,
                source: Box::new(e),
            })?;
            if adv.predicted_label == *label {
                correct += 1;
            }
        }
        let accuracy_percent = 100.0 * correct as f64 / inputs.len() as f64;
        log::info!("{kind} eps {eps:.2}: accuracy {accuracy_percent:.2}%");
        rows.push(ReportRow {
            epsilon: eps,
            accuracy_percent,
            n_examples: inputs.len(),
        });
    }
    Ok(EvalReport {
        attack_name: kind.name().to_string(),
        rows,
        model_id: checkpoint::digest(model),
        config: cfg.clone(),
    })
}

/// Report as CSV: `epsilon,accuracy_percent,n_examples`, two decimals.
pub fn report_csv(report: &EvalReport) -> String {
    let mut out = String::from("epsilon,accuracy_percent,n_examples\n");
    for r in &report.rows {
        writeln!(out, "{:.2},{:.2},{}", r.epsilon, r.accuracy_percent, r.n_examples).unwrap();
    }
    out
}

pub fn write_report_csv(report: &EvalReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, report_csv(report)).map_err(|e| Error::io(path, e))
}

pub fn parse_report_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut lines = text.lines();
    if lines.next() != Some("epsilon,accuracy_percent,n_examples") {
        return Err(Error::Data("missing report CSV header".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = || Error::Data(format!("bad report CSV row {}: {line:?}", i + 2));
            let mut parts = line.split(',');
            let (Some(e), Some(a), Some(n), None) = (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(bad());
            };
            Ok(ReportRow {
                epsilon: e.parse().map_err(|_| bad())?,
                accuracy_percent: a.parse().map_err(|_| bad())?,
                n_examples: n.parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

/// Two rows of cells: adversarial images on top, perturbations below, one
/// column per ε.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    pub rows: usize,
    pub cols: usize,
    /// Row-major: `cells[row * cols + col]`.
    pub cells: Vec<Image>,
    pub captions: Vec<String>,
}

impl ImageGrid {
    pub fn cell(&self, row: usize, col: usize) -> &Image {
        &self.cells[row * self.cols + col]
    }
}

/// Maps a perturbation in `[-eps, eps]` affinely onto `[0, 1]` (mid-gray at
/// zero, or everywhere when `eps == 0`).
pub fn perturbation_image(perturbation: &Tensor, epsilon: f64) -> Result<Image> {
    let shape = perturbation.shape();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(Error::shape(&[3, 0, 0], shape));
    }
    let (h, w) = (shape[1], shape[2]);
    let mut pixels = vec![0.5; 3 * h * w];
    if epsilon > 0.0 {
        for i in 0..h * w {
            for c in 0..3 {
                let d = perturbation.data()[c * h * w + i];
                pixels[i * 3 + c] = ((d + epsilon) / (2.0 * epsilon)).clamp(0.0, 1.0);
            }
        }
    }
    Image::new(h, w, pixels)
}

pub fn render_attack_grid(
    model: &ModelParams,
    img: &Image,
    label: usize,
    kind: AttackKind,
    eps_list: &[f64],
    cfg: &AttackConfig,
) -> Result<ImageGrid> {
    if eps_list.is_empty() {
        return Err(Error::Config("epsilon list is empty".into()));
    }
    let x = normalize(img);
    let mut top = Vec::with_capacity(eps_list.len());
    let mut bottom = Vec::with_capacity(eps_list.len());
    for (ei, &eps) in eps_list.iter().enumerate() {
        let per_column = AttackConfig {
            seed: example_seed(cfg.seed, ei, 0),
            ..cfg.clone()
        };
        let adv = run_attack(model, &x, label, kind, eps, &per_column)?;
        top.push(denormalize(&adv.x_adv)?);
        bottom.push(perturbation_image(&adv.perturbation, eps)?);
    }
    Ok(ImageGrid {
        rows: 2,
        cols: eps_list.len(),
        captions: eps_list.iter().map(|e| format!("eps={e:.2}")).collect(),
        cells: top.into_iter().chain(bottom).collect(),
    })
}

/// Lays the cells out in one image with white separators.
pub fn grid_image(grid: &ImageGrid) -> Result<Image> {
    let first = grid.cells.first().ok_or_else(|| Error::Data("empty grid".into()))?;
    let (ch, cw) = (first.height(), first.width());
    if grid.cells.len() != grid.rows * grid.cols || grid.cells.iter().any(|c| (c.height(), c.width()) != (ch, cw)) {
        return Err(Error::Data("grid cells must be uniform and fill rows x cols".into()));
    }
    let height = grid.rows * ch + (grid.rows - 1) * GRID_SEPARATOR;
    let width = grid.cols * cw + (grid.cols - 1) * GRID_SEPARATOR;
    let mut pixels = vec![1.0; height * width * 3];
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            let cell = grid.cell(r, c);
            let (oy, ox) = (r * (ch + GRID_SEPARATOR), c * (cw + GRID_SEPARATOR));
            for y in 0..ch {
                let dst = ((oy + y) * width + ox) * 3;
                let src = y * cw * 3;
                pixels[dst..dst + cw * 3].copy_from_slice(&cell.pixels()[src..src + cw * 3]);
            }
        }
    }
    Image::new(height, width, pixels)
}

pub fn write_grid_ppm(grid: &ImageGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_ppm(&grid_image(grid)?)).map_err(|e| Error::io(path, e))
}
