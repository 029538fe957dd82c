//! Weight-matrix spectra: singular values, power-law tail fits and the
//! per-layer summary used to flag under-trained layers.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::stats::KahanSum;

/// Layers whose fitted exponent exceeds this are flagged as under-trained.
pub const HEALTHY_ALPHA_MAX: f64 = 6.0;
pub const MIN_TAIL: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Row-major.
    pub values: Vec<f64>,
}

impl WeightMatrix {
    pub fn new(name: impl Into<String>, rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("matrix", "rows and cols must be at least 1"));
        }
        if rows.checked_mul(cols) != Some(values.len()) {
            return Err(Error::invalid(
                "matrix",
                format!("{rows}x{cols} needs {} values, got {}", rows * cols, values.len()),
            ));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid("matrix", format!("non-finite value at index {i}")));
        }
        Ok(WeightMatrix {
            name: name.into(),
            rows,
            cols,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut v = vec![0.0; n * n];
        for i in 0..n {
            v[i * n + i] = 1.0;
        }
        WeightMatrix::new("identity", n, n, v).expect("valid identity")
    }

    pub fn diag(d: &[f64]) -> Result<Self> {
        let n = d.len();
        let mut v = vec![0.0; n * n];
        for (i, &x) in d.iter().enumerate() {
            v[i * n + i] = x;
        }
        WeightMatrix::new("diag", n, n, v)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn scaled(&self, c: f64) -> Self {
        WeightMatrix {
            name: self.name.clone(),
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        let mut v = Vec::with_capacity(self.values.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                v.push(self.get(r, c));
            }
        }
        WeightMatrix {
            name: self.name.clone(),
            rows: self.cols,
            cols: self.rows,
            values: v,
        }
    }

    pub fn matmul(&self, other: &WeightMatrix) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::invalid("matrix", "inner dimensions differ"));
        }
        let mut v = vec![0.0; self.rows * other.cols];
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                for j in 0..other.cols {
                    v[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        WeightMatrix::new(self.name.clone(), self.rows, other.cols, v)
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).collect::<KahanSum>().total()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct BinHeader {
    rows: usize,
    cols: usize,
    dtype: String,
}

/// Loads a matrix. `.csv` files hold one row per line; anything else is a
/// JSON header line `{"rows","cols","dtype":"f32"}` followed by the
/// little-endian row-major payload.
pub fn load_matrix(path: &Path) -> Result<WeightMatrix> {
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        return parse_csv(&name, &text).map_err(|m| Error::format(path, m));
    }
    let mut reader = BufReader::new(file);
    let mut header = String::new();
    reader.read_line(&mut header).map_err(|e| Error::io(path, e))?;
    let h: BinHeader =
        serde_json::from_str(header.trim_end()).map_err(|e| Error::format(path, format!("header: {e}")))?;
    if h.dtype != "f32" {
        return Err(Error::format(path, format!("unsupported dtype {:?}", h.dtype)));
    }
    let mut payload = Vec::new();
    reader.read_to_end(&mut payload).map_err(|e| Error::io(path, e))?;
    let expected = h.rows.checked_mul(h.cols).and_then(|n| n.checked_mul(4));
    if expected != Some(payload.len()) {
        return Err(Error::format(
            path,
            format!(
                "header declares {}x{} values but the payload holds {} bytes",
                h.rows,
                h.cols,
                payload.len()
            ),
        ));
    }
    let values = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    WeightMatrix::new(name, h.rows, h.cols, values).map_err(|e| Error::format(path, e.to_string()))
}

fn parse_csv(name: &str, text: &str) -> std::result::Result<WeightMatrix, String> {
    let mut values = Vec::new();
    let mut rows = 0;
    let mut cols = None;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>().map_err(|e| format!("line {}: {e}", i + 1)))
            .collect::<std::result::Result<_, _>>()?;
        match cols {
            None => cols = Some(row.len()),
            Some(c) if c != row.len() => {
                return Err(format!("line {}: expected {c} columns, got {}", i + 1, row.len()))
            }
            _ => {}
        }
        values.extend(row);
        rows += 1;
    }
    WeightMatrix::new(name, rows, cols.unwrap_or(0), values).map_err(|e| e.to_string())
}

/// Writes the binary format read by [`load_matrix`] (values narrowed to f32).
pub fn write_matrix(m: &WeightMatrix, path: &Path) -> Result<()> {
    let header = serde_json::to_string(&BinHeader {
        rows: m.rows,
        cols: m.cols,
        dtype: "f32".into(),
    })
    .expect("header serializes");
    let mut buf = Vec::with_capacity(header.len() + 1 + m.values.len() * 4);
    buf.extend_from_slice(header.as_bytes());
    buf.push(b'\n');
    for v in &m.values {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

const JACOBI_MAX_SWEEPS: usize = 80;

fn rotate(a: &mut [f64], b: &mut [f64], tol: f64) -> bool {
    let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b.iter()) {
        alpha += x * x;
        beta += y * y;
        gamma += x * y;
    }
    if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
        return false;
    }
    let zeta = (beta - alpha) / (2.0 * gamma);
    let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = c * t;
    for (x, y) in a.iter_mut().zip(b.iter_mut()) {
        let (xi, yi) = (*x, *y);
        *x = c * xi - s * yi;
        *y = s * xi + c * yi;
    }
    true
}

/// Round-robin schedule: every round pairs each column with one partner,
/// and every pair meets once per sweep.
fn round_robin(n: usize) -> Vec<Vec<(usize, usize)>> {
    let m = n + n % 2;
    let mut ring: Vec<usize> = (0..m).collect();
    let mut rounds = Vec::with_capacity(m - 1);
    for _ in 0..m.saturating_sub(1) {
        let pairs = (0..m / 2)
            .map(|i| (ring[i], ring[m - 1 - i]))
            .filter(|&(a, b)| a < n && b < n)
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        rounds.push(pairs);
        let last = ring.pop().expect("non-empty");
        ring.insert(1, last);
    }
    rounds
}

/// Singular values in descending order, by one-sided Jacobi on the columns
/// of the taller orientation. Pairs within a round touch disjoint columns
/// and are rotated in parallel.
pub fn singular_values(m: &WeightMatrix) -> Vec<f64> {
    let (rows, cols) = if m.cols <= m.rows {
        (m.rows, m.cols)
    } else {
        (m.cols, m.rows)
    };
    let mut columns: Vec<Vec<f64>> = (0..cols)
        .map(|c| {
            (0..rows)
                .map(|r| if m.cols <= m.rows { m.get(r, c) } else { m.get(c, r) })
                .collect()
        })
        .collect();
    let tol = f64::EPSILON * rows as f64;
    let rounds = round_robin(cols);
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for round in &rounds {
            let mut work: Vec<(usize, usize, Vec<f64>, Vec<f64>)> = round
                .iter()
                .map(|&(i, j)| (i, j, std::mem::take(&mut columns[i]), std::mem::take(&mut columns[j])))
                .collect();
            let any = work
                .par_iter_mut()
                .map(|(_, _, a, b)| rotate(a, b, tol))
                .reduce(|| false, |x, y| x | y);
            rotated |= any;
            for (i, j, a, b) in work {
                columns[i] = a;
                columns[j] = b;
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sigma: Vec<f64> = columns
        .iter()
        .map(|c| c.iter().map(|v| v * v).collect::<KahanSum>().total().sqrt())
        .collect();
    sigma.sort_by(|a, b| b.total_cmp(a));
    sigma
}

/// Largest singular value by power iteration on AᵀA from a seeded start.
pub fn spectral_norm_power(m: &WeightMatrix, max_iter: usize, rel_tol: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v: Vec<f64> = (0..m.cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut last = 0.0;
    for _ in 0..max_iter.max(1) {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        let u: Vec<f64> = (0..m.rows)
            .map(|r| (0..m.cols).map(|c| m.get(r, c) * v[c]).sum())
            .collect();
        let sigma = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        v = (0..m.cols)
            .map(|c| (0..m.rows).map(|r| m.get(r, c) * u[r]).sum())
            .collect();
        if (sigma - last).abs() <= rel_tol * sigma {
            return sigma;
        }
        last = sigma;
    }
    last
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Esd {
    pub sigma: Vec<f64>,
    pub lambda: Vec<f64>,
}

pub fn esd(m: &WeightMatrix) -> Esd {
    let sigma = singular_values(m);
    let lambda = sigma.iter().map(|s| s * s).collect();
    Esd { sigma, lambda }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerLawFit {
    pub alpha: f64,
    pub lambda_min: f64,
    pub ks_distance: f64,
    pub n_tail: usize,
}

fn fit_tail(sorted: &[f64], lambda_min: f64) -> Option<PowerLawFit> {
    let tail = &sorted[sorted.partition_point(|&x| x < lambda_min)..];
    let k = tail.len();
    if k < MIN_TAIL {
        return None;
    }
    let s = tail.iter().map(|x| (x / lambda_min).ln()).collect::<KahanSum>().total();
    if s.is_nan() || s <= 0.0 {
        return None;
    }
    let alpha = 1.0 + k as f64 / s;
    let kf = k as f64;
    let ks = tail
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = 1.0 - (x / lambda_min).powf(1.0 - alpha);
            ((i + 1) as f64 / kf - f).abs().max((f - i as f64 / kf).abs())
        })
        .fold(0.0, f64::max);
    Some(PowerLawFit {
        alpha,
        lambda_min,
        ks_distance: ks,
        n_tail: k,
    })
}

fn positive_sorted(lambda: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = lambda.iter().copied().filter(|&x| x > 0.0 && x.is_finite()).collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Continuous power-law fit: every distinct λ with at least [`MIN_TAIL`]
/// points at or above it is a candidate λ_min; α is the maximum-likelihood
/// exponent for that tail and the candidate with the smallest
/// Kolmogorov-Smirnov distance wins (ties go to the smaller λ_min).
pub fn powerlaw_fit(lambda: &[f64]) -> Result<PowerLawFit> {
    let sorted = positive_sorted(lambda);
    let mut candidates = sorted.clone();
    candidates.dedup();
    let best = candidates
        .par_iter()
        .filter_map(|&lm| fit_tail(&sorted, lm))
        .reduce_with(|a, b| {
            if (b.ks_distance, b.lambda_min) < (a.ks_distance, a.lambda_min) {
                b
            } else {
                a
            }
        });
    best.ok_or_else(|| {
        Error::FitInfeasible(format!(
            "no λ_min leaves {MIN_TAIL} or more tail values with positive log-spread ({} positive values)",
            sorted.len()
        ))
    })
}

pub fn powerlaw_fit_fixed(lambda: &[f64], lambda_min: f64) -> Result<PowerLawFit> {
    if lambda_min.is_nan() || lambda_min <= 0.0 {
        return Err(Error::invalid("lambda_min", "must be positive"));
    }
    fit_tail(&positive_sorted(lambda), lambda_min)
        .ok_or_else(|| Error::FitInfeasible(format!("tail above {lambda_min} is too short or degenerate")))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralReport {
    pub layer: String,
    pub rows: usize,
    pub cols: usize,
    pub singular_values: Vec<f64>,
    pub esd: Vec<f64>,
    pub powerlaw_alpha: Option<f64>,
    pub lambda_min: Option<f64>,
    pub ks_distance: Option<f64>,
    pub fit_error: Option<String>,
    pub spectral_norm: f64,
    pub stable_rank: f64,
    pub esd_entropy: f64,
    pub under_trained: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub enum LambdaMin {
    #[default]
    Fitted,
    Fixed(f64),
}

/// Full per-layer summary. A failed tail fit leaves the α fields empty
/// (and the layer unflagged) rather than failing the report.
pub fn layer_report(m: &WeightMatrix, lambda_min: LambdaMin) -> Result<SpectralReport> {
    let Esd { sigma, lambda } = esd(m);
    let sigma_max = sigma.first().copied().unwrap_or(0.0);
    if sigma_max == 0.0 {
        return Err(Error::invalid("matrix", format!("{} is all zeros", m.name)));
    }
    // numerically zero singular values do not count towards the spectrum
    let cutoff = sigma_max * m.rows.max(m.cols) as f64 * f64::EPSILON;
    let positive: Vec<f64> = sigma
        .iter()
        .zip(&lambda)
        .filter(|(s, _)| **s > cutoff)
        .map(|(_, l)| *l)
        .collect();
    let total: f64 = positive.iter().copied().collect::<KahanSum>().total();
    let stable_rank = total / (sigma_max * sigma_max);
    let esd_entropy = if positive.len() <= 1 {
        0.0
    } else {
        let h = positive
            .iter()
            .map(|l| {
                let p = l / total;
                -p * p.ln()
            })
            .collect::<KahanSum>()
            .total();
        (h / (positive.len() as f64).ln()).clamp(0.0, 1.0)
    };
    let fit = match lambda_min {
        LambdaMin::Fitted => powerlaw_fit(&positive),
        LambdaMin::Fixed(x) => powerlaw_fit_fixed(&positive, x),
    };
    let (alpha, lmin, ks, fit_error) = match fit {
        Ok(f) => (Some(f.alpha), Some(f.lambda_min), Some(f.ks_distance), None),
        Err(Error::FitInfeasible(msg)) => (None, None, None, Some(msg)),
        Err(e) => return Err(e),
    };
    Ok(SpectralReport {
        layer: m.name.clone(),
        rows: m.rows,
        cols: m.cols,
        singular_values: sigma,
        esd: lambda,
        powerlaw_alpha: alpha,
        lambda_min: lmin,
        ks_distance: ks,
        fit_error,
        spectral_norm: sigma_max,
        stable_rank,
        esd_entropy,
        under_trained: alpha.is_some_and(|a| a > HEALTHY_ALPHA_MAX),
    })
}

/// Layer name → matrix file, in file order. Relative paths resolve against
/// the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub layers: Vec<(String, PathBuf)>,
}

impl<'de> Deserialize<'de> for Manifest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct Ordered;
        impl<'de> Visitor<'de> for Ordered {
            type Value = Manifest;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object mapping layer names to matrix paths")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<Manifest, A::Error> {
                let mut layers = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, PathBuf>()? {
                    layers.push((k, v));
                }
                Ok(Manifest { layers })
            }
        }
        d.deserialize_map(Ordered)
    }
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Manifest = serde_json::from_str(&raw).map_err(|e| Error::format(path, e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for (_, p) in &mut m.layers {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(m)
    }
}

pub fn analyze_manifest(manifest: &Manifest, lambda_min: LambdaMin) -> Result<Vec<SpectralReport>> {
    manifest
        .layers
        .par_iter()
        .map(|(name, path)| {
            let mut m = load_matrix(path)?;
            m.name = name.clone();
            layer_report(&m, lambda_min)
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn reports_csv(reports: &[SpectralReport]) -> String {
    let mut s = String::from("layer,alpha,lambda_min,spectral_norm,stable_rank,entropy,under_trained\n");
    for r in reports {
        let layer = if r.layer.contains([',', '"', '\n']) {
            format!("\"{}\"", r.layer.replace('"', "\"\""))
        } else {
            r.layer.clone()
        };
        s.push_str(&format!(
            "{layer},{},{},{},{},{},{}\n",
            opt(r.powerlaw_alpha),
            opt(r.lambda_min),
            r.spectral_norm,
            r.stable_rank,
            r.esd_entropy,
            r.under_trained
        ));
    }
    s
}
