//! Image-sequence spectra and sparse spectral point clouds.
//!
//! A sequence is mean-removed, transformed with a 3D FFT, folded onto the
//! non-negative frequency half-space with conjugate powers summed, and the
//! strongest bins become the model's point-cloud input `[z, kx, ky, w, p]`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Result, SptError};
use crate::io as bin;
use crate::numcore::Array;
use crate::wavefield::{GridSpec, ImageSequence};

const CLOUD_MAGIC: &[u8; 4] = b"SPTP";
const CLOUD_VERSION: u32 = 1;

/// Folded wavenumber-frequency power spectrum of one sequence.
///
/// Only the `w >= 0` half-space is stored; the `w = 0` plane and the
/// `(kx, ky) = 0` column are kept for bookkeeping but excluded from the
/// power maximum and from point selection.
#[derive(Clone, Debug)]
pub struct Spectrum3D {
    pub grid: GridSpec,
    /// Frequency planes `0..=nt/2`, each `ny * nx`, indexed `[w][ky][kx]`.
    pub power: Vec<f64>,
    pub omega_axis: Vec<f64>,
    /// Signed wavenumber value per FFT bin index.
    pub kx_axis: Vec<f64>,
    pub ky_axis: Vec<f64>,
    /// Maximum power over selectable bins.
    pub power_max: f64,
    /// Relative Parseval residual of the transform (diagnostic).
    pub parseval_rel_err: f64,
    pub label_hs: f64,
    pub zone: u8,
    pub sample_id: String,
}

impl Spectrum3D {
    pub fn n_omega(&self) -> usize {
        self.grid.nt / 2 + 1
    }

    /// Bins eligible for selection (non-DC plane, non-zero wavenumber).
    pub fn selectable_bins(&self) -> usize {
        (self.n_omega() - 1) * (self.grid.nx * self.grid.ny - 1)
    }
}

fn signed_value(i: usize, n: usize, delta: f64) -> f64 {
    let s = if i <= n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    };
    s as f64 * delta
}

/// 3D power spectrum after temporal-mean removal, folded to `w >= 0` with
/// conjugate powers summed. Parseval is verified on the unfolded transform.
pub fn power_spectrum(seq: &ImageSequence) -> Result<Spectrum3D> {
    let grid = seq.grid;
    grid.validate()?;
    let (nt, ny, nx) = (grid.nt, grid.ny, grid.nx);
    let npix = ny * nx;
    if seq.frames.len() != nt * npix {
        return Err(SptError::invalid(format!(
            "frame buffer has {} values, grid wants {}",
            seq.frames.len(),
            nt * npix
        )));
    }
    if seq.frames.iter().any(|v| !v.is_finite()) {
        return Err(SptError::invalid("power_spectrum: non-finite frame value"));
    }

    // Temporal mean removal; the input energy for Parseval is accumulated on
    // the mean-removed signal.
    let mut mean = vec![0f64; npix];
    for t in 0..nt {
        let frame = &seq.frames[t * npix..(t + 1) * npix];
        for (m, &v) in mean.iter_mut().zip(frame.iter()) {
            *m += v as f64;
        }
    }
    let inv_nt = 1.0 / nt as f64;
    for m in mean.iter_mut() {
        *m *= inv_nt;
    }
    let mut data: Vec<Complex<f64>> = Vec::with_capacity(nt * npix);
    let mut input_energy = 0f64;
    for t in 0..nt {
        let frame = &seq.frames[t * npix..(t + 1) * npix];
        for (i, &v) in frame.iter().enumerate() {
            let c = v as f64 - mean[i];
            input_energy += c * c;
            data.push(Complex::new(c, 0.0));
        }
    }

    // Forward FFT along x, y, t.
    let mut planner = FftPlanner::<f64>::new();
    let fft_x = planner.plan_fft_forward(nx);
    let fft_y = planner.plan_fft_forward(ny);
    let fft_t = planner.plan_fft_forward(nt);
    let scratch_len = fft_x
        .get_inplace_scratch_len()
        .max(fft_y.get_inplace_scratch_len())
        .max(fft_t.get_inplace_scratch_len());
    let mut scratch = vec![Complex::default(); scratch_len];
    for row in data.chunks_exact_mut(nx) {
        fft_x.process_with_scratch(row, &mut scratch);
    }
    let mut col = vec![Complex::default(); ny.max(nt)];
    for t in 0..nt {
        let frame = &mut data[t * npix..(t + 1) * npix];
        for x in 0..nx {
            for y in 0..ny {
                col[y] = frame[y * nx + x];
            }
            fft_y.process_with_scratch(&mut col[..ny], &mut scratch);
            for y in 0..ny {
                frame[y * nx + x] = col[y];
            }
        }
    }
    for p in 0..npix {
        for t in 0..nt {
            col[t] = data[t * npix + p];
        }
        fft_t.process_with_scratch(&mut col[..nt], &mut scratch);
        for t in 0..nt {
            data[t * npix + p] = col[t];
        }
    }

    let spectrum_energy: f64 = data.iter().map(|c| c.norm_sqr()).sum();
    let parseval_rel_err = {
        let lhs = spectrum_energy / (nt * npix) as f64;
        let denom = input_energy.max(1e-300);
        (lhs - input_energy).abs() / denom
    };
    if parseval_rel_err > 1e-6 && input_energy > 1e-12 {
        return Err(SptError::NonFinite(format!(
            "power_spectrum: Parseval residual {parseval_rel_err:.3e}"
        )));
    }

    // Fold to w >= 0. A wave at (+k, +w) lives at time index nt - iw with
    // spatial index +k, and at +iw with spatial index -k; the retained bin
    // (iw, +k) sums both images. The DC and Nyquist planes are self-paired
    // and stored unsummed.
    let n_omega = nt / 2 + 1;
    let mut power = vec![0f64; n_omega * npix];
    for a in 0..n_omega {
        let plane = &mut power[a * npix..(a + 1) * npix];
        if a == 0 || (a == nt / 2) {
            let src = &data[a * npix..(a + 1) * npix];
            for (dst, c) in plane.iter_mut().zip(src.iter()) {
                *dst = c.norm_sqr();
            }
        } else {
            let pos = &data[(nt - a) * npix..(nt - a + 1) * npix];
            let neg = &data[a * npix..(a + 1) * npix];
            for b in 0..ny {
                for c in 0..nx {
                    let mirror = ((ny - b) % ny) * nx + (nx - c) % nx;
                    plane[b * nx + c] = pos[b * nx + c].norm_sqr() + neg[mirror].norm_sqr();
                }
            }
        }
    }

    let dkx = grid.delta_kx();
    let dky = grid.delta_ky();
    let dw = grid.delta_omega();
    let mut power_max = 0f64;
    for a in 1..n_omega {
        let plane = &power[a * npix..(a + 1) * npix];
        for (i, &p) in plane.iter().enumerate() {
            if i == 0 {
                continue; // zero-wavenumber column
            }
            if p > power_max {
                power_max = p;
            }
        }
    }

    Ok(Spectrum3D {
        grid,
        power,
        omega_axis: (0..n_omega).map(|a| a as f64 * dw).collect(),
        kx_axis: (0..nx).map(|c| signed_value(c, nx, dkx)).collect(),
        ky_axis: (0..ny).map(|b| signed_value(b, ny, dky)).collect(),
        power_max,
        parseval_rel_err,
        label_hs: seq.label_hs,
        zone: seq.zone,
        sample_id: seq.sample_id.clone(),
    })
}

/// One selected spectral point.
#[derive(Clone, Copy, Debug)]
pub struct SpectralPoint {
    pub kx: f64,
    pub ky: f64,
    pub omega: f64,
    pub p_raw: f64,
    /// `p_raw / power_max`, in (0, 1].
    pub p_norm: f64,
}

/// Top-N spectral points of one sample, sorted by raw power descending with
/// the deterministic tie-break (omega, kx, ky ascending).
#[derive(Clone, Debug)]
pub struct SpectralPointCloud {
    pub points: Vec<SpectralPoint>,
    pub label_hs: f64,
    pub zone: u8,
    pub power_max: f64,
    pub sample_id: String,
}

impl SpectralPointCloud {
    pub fn n_points(&self) -> usize {
        self.points.len()
    }

    /// Keeps the strongest `n` points (the sorted prefix).
    pub fn truncate(&mut self, n: usize) -> Result<()> {
        if n == 0 || n > self.points.len() {
            return Err(SptError::invalid(format!(
                "cannot truncate a {}-point cloud to {n}",
                self.points.len()
            )));
        }
        self.points.truncate(n);
        Ok(())
    }
}

/// Selection diagnostics reported alongside the cloud.
#[derive(Clone, Copy, Debug)]
pub struct SelectionDiagnostics {
    /// Selected points with raw power below `threshold_ratio * power_max`.
    pub below_threshold: usize,
    /// `(nt * ny * nx) / n`.
    pub compression_ratio: f64,
    /// `n / (nt * ny * nx)`.
    pub retained_fraction: f64,
}

fn point_order(a: &SpectralPoint, b: &SpectralPoint) -> std::cmp::Ordering {
    b.p_raw
        .total_cmp(&a.p_raw)
        .then(a.omega.total_cmp(&b.omega))
        .then(a.kx.total_cmp(&b.kx))
        .then(a.ky.total_cmp(&b.ky))
}

/// Selects the `n` strongest selectable bins under the total tie-break.
pub fn select_top_points(
    spec: &Spectrum3D,
    n: usize,
    threshold_ratio: f64,
) -> Result<(SpectralPointCloud, SelectionDiagnostics)> {
    if n == 0 {
        return Err(SptError::invalid("select_top_points: n must be >= 1"));
    }
    let available = spec.selectable_bins();
    if n > available {
        return Err(SptError::invalid(format!(
            "select_top_points: n = {n} exceeds the {available} selectable bins"
        )));
    }
    let (nx, ny) = (spec.grid.nx, spec.grid.ny);
    let npix = nx * ny;
    let mut candidates: Vec<SpectralPoint> = Vec::with_capacity(available);
    for a in 1..spec.n_omega() {
        let plane = &spec.power[a * npix..(a + 1) * npix];
        let omega = spec.omega_axis[a];
        for b in 0..ny {
            for c in 0..nx {
                if b == 0 && c == 0 {
                    continue;
                }
                let p_raw = plane[b * nx + c];
                candidates.push(SpectralPoint {
                    kx: spec.kx_axis[c],
                    ky: spec.ky_axis[b],
                    omega,
                    p_raw,
                    p_norm: 0.0,
                });
            }
        }
    }
    candidates.select_nth_unstable_by(n - 1, point_order);
    candidates.truncate(n);
    candidates.sort_unstable_by(point_order);

    let power_max = spec.power_max;
    let threshold = threshold_ratio * power_max;
    let mut below = 0usize;
    for p in candidates.iter_mut() {
        p.p_norm = p.p_raw / power_max;
        if p.p_raw < threshold {
            below += 1;
        }
    }
    let total = spec.grid.total_bins() as f64;
    Ok((
        SpectralPointCloud {
            points: candidates,
            label_hs: spec.label_hs,
            zone: spec.zone,
            power_max,
            sample_id: spec.sample_id.clone(),
        },
        SelectionDiagnostics {
            below_threshold: below,
            compression_ratio: total / n as f64,
            retained_fraction: n as f64 / total,
        },
    ))
}

/// `power_spectrum` followed by `select_top_points`.
pub fn extract_cloud(
    seq: &ImageSequence,
    n: usize,
    threshold_ratio: f64,
) -> Result<(SpectralPointCloud, SelectionDiagnostics)> {
    let spectrum = power_spectrum(seq)?;
    select_top_points(&spectrum, n, threshold_ratio)
}

/// Input feature columns fed to the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureSubset {
    /// `[z, kx, ky, w, p]`
    Full,
    /// `[w, p]`
    OmegaPower,
    /// `[kx, ky, w]`
    WavenumberOmega,
}

impl FeatureSubset {
    pub fn width(&self) -> usize {
        match self {
            FeatureSubset::Full => 5,
            FeatureSubset::OmegaPower => 2,
            FeatureSubset::WavenumberOmega => 3,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            FeatureSubset::Full => "full",
            FeatureSubset::OmegaPower => "omega_p",
            FeatureSubset::WavenumberOmega => "k_omega",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(FeatureSubset::Full),
            "omega_p" => Ok(FeatureSubset::OmegaPower),
            "k_omega" => Ok(FeatureSubset::WavenumberOmega),
            other => Err(SptError::Config(format!(
                "unknown feature subset '{other}' (full | omega_p | k_omega)"
            ))),
        }
    }
}

/// N x c feature matrix for the configured subset of `[z, kx, ky, w, p]`.
pub fn build_features(cloud: &SpectralPointCloud, subset: FeatureSubset) -> Array<f64> {
    let n = cloud.points.len();
    let c = subset.width();
    let mut data = Vec::with_capacity(n * c);
    let z = cloud.zone as f64;
    for p in &cloud.points {
        match subset {
            FeatureSubset::Full => {
                data.extend_from_slice(&[z, p.kx, p.ky, p.omega, p.p_norm]);
            }
            FeatureSubset::OmegaPower => {
                data.extend_from_slice(&[p.omega, p.p_norm]);
            }
            FeatureSubset::WavenumberOmega => {
                data.extend_from_slice(&[p.kx, p.ky, p.omega]);
            }
        }
    }
    Array::matrix(n, c, data).expect("feature matrix shape")
}

/// Accumulates raw point power into `n_bins` uniform frequency bins and
/// normalizes by the maximum bin. Returns `(bin center, normalized power)`.
pub fn integrate_frequency_spectrum(
    cloud: &SpectralPointCloud,
    n_bins: usize,
) -> Result<Vec<(f64, f64)>> {
    if n_bins < 2 {
        return Err(SptError::invalid("integrate: n_bins must be >= 2"));
    }
    if cloud.points.is_empty() {
        return Err(SptError::invalid("integrate: empty cloud"));
    }
    let omega_max = cloud
        .points
        .iter()
        .map(|p| p.omega)
        .fold(0.0f64, f64::max);
    let width = if omega_max > 0.0 {
        omega_max / n_bins as f64
    } else {
        1.0
    };
    let mut acc = vec![0f64; n_bins];
    for p in &cloud.points {
        let mut i = (p.omega / width) as usize;
        if i >= n_bins {
            i = n_bins - 1;
        }
        acc[i] += p.p_raw;
    }
    let max = acc.iter().copied().fold(0.0f64, f64::max);
    let scale = if max > 0.0 { 1.0 / max } else { 1.0 };
    Ok(acc
        .iter()
        .enumerate()
        .map(|(i, &v)| ((i as f64 + 0.5) * width, v * scale))
        .collect())
}

/// Writes the point-cloud format: magic "SPTP", version, header, N x 5
/// f32 rows `[z, kx, ky, w, p_norm]`, then N f32 raw powers.
pub fn write_cloud(path: &Path, cloud: &SpectralPointCloud) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CLOUD_MAGIC)?;
    bin::write_u32(&mut w, CLOUD_VERSION)?;
    bin::write_u32(&mut w, cloud.points.len() as u32)?;
    bin::write_f64(&mut w, cloud.label_hs)?;
    bin::write_u8(&mut w, cloud.zone)?;
    bin::write_f64(&mut w, cloud.power_max)?;
    bin::write_str(&mut w, &cloud.sample_id)?;
    let mut rows = Vec::with_capacity(cloud.points.len() * 5);
    for p in &cloud.points {
        rows.extend_from_slice(&[
            cloud.zone as f32,
            p.kx as f32,
            p.ky as f32,
            p.omega as f32,
            p.p_norm as f32,
        ]);
    }
    bin::write_f32_slice(&mut w, &rows)?;
    let raw: Vec<f32> = cloud.points.iter().map(|p| p.p_raw as f32).collect();
    bin::write_f32_slice(&mut w, &raw)?;
    Ok(())
}

pub fn read_cloud(path: &Path) -> Result<SpectralPointCloud> {
    let mut r = BufReader::new(File::open(path)?);
    bin::expect_magic(&mut r, CLOUD_MAGIC, "point-cloud file")?;
    let version = bin::read_u32(&mut r)?;
    if version != CLOUD_VERSION {
        return Err(SptError::Format(format!(
            "point-cloud version {version} unsupported"
        )));
    }
    let n = bin::read_u32(&mut r)? as usize;
    if n == 0 || n > 1 << 24 {
        return Err(SptError::Format(format!("implausible point count {n}")));
    }
    let label_hs = bin::read_f64(&mut r)?;
    let zone = bin::read_u8(&mut r)?;
    let power_max = bin::read_f64(&mut r)?;
    let sample_id = bin::read_str(&mut r, 4096)?;
    let rows = bin::read_f32_vec(&mut r, n * 5)?;
    let raw = bin::read_f32_vec(&mut r, n)?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(SptError::Format("trailing bytes after point data".into()));
    }
    let mut points = Vec::with_capacity(n);
    for i in 0..n {
        let row = &rows[i * 5..(i + 1) * 5];
        points.push(SpectralPoint {
            kx: row[1] as f64,
            ky: row[2] as f64,
            omega: row[3] as f64,
            p_raw: raw[i] as f64,
            p_norm: row[4] as f64,
        });
    }
    Ok(SpectralPointCloud {
        points,
        label_hs,
        zone,
        power_max,
        sample_id,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavefield::{synthesize_from_components, GridSpec, WaveComponent};
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use tempfile::tempdir;

    fn small_grid() -> GridSpec {
        GridSpec {
            nt: 16,
            nx: 32,
            ny: 32,
            dt: 2.5,
            dx: 7.5,
            dy: 7.5,
        }
    }

    fn tone_sequence(grid: &GridSpec, ikx: usize, iky: usize, iw: usize) -> ImageSequence {
        let comp = WaveComponent {
            ikx,
            iky,
            kx: signed_value(ikx, grid.nx, grid.delta_kx()),
            ky: signed_value(iky, grid.ny, grid.delta_ky()),
            omega: iw as f64 * grid.delta_omega(),
            amplitude: 1.4,
            phase: 0.9,
        };
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let frames = synthesize_from_components(grid, &[comp], 1.0, 0.0, 0.0, &mut rng).unwrap();
        ImageSequence {
            grid: *grid,
            frames,
            label_hs: 1.0,
            zone: 1,
            sample_id: "tone".into(),
            seed: 3,
        }
    }

    #[test]
    fn resolution_axes_default_grid() {
        let g = GridSpec::default();
        assert!((g.delta_omega() - 0.0392699).abs() < 1e-6);
        assert!((g.delta_kx() - 0.00654498).abs() < 1e-8);
        assert!((g.nyquist_omega() - 1.2566371).abs() < 1e-6);
    }

    #[test]
    fn single_tone_occupies_one_bin() {
        let grid = small_grid();
        let (ikx, iky, iw) = (3, 30, 4); // iky = 30 is a negative-ky bin
        let seq = tone_sequence(&grid, ikx, iky, iw);
        let spec = power_spectrum(&seq).unwrap();
        assert!(spec.parseval_rel_err < 1e-6);

        let npix = grid.nx * grid.ny;
        let peak_idx = iw * npix + iky * grid.nx + ikx;
        let peak = spec.power[peak_idx];
        assert!(peak > 0.0);
        for (i, &p) in spec.power.iter().enumerate() {
            if i != peak_idx {
                assert!(
                    p < 1e-10 * peak,
                    "bin {i} holds {p:e}, peak {peak:e}"
                );
            }
        }
        // top-1 point sits at the tone's (k, w) bin exactly
        let (cloud, _) = select_top_points(&spec, 1, 0.01).unwrap();
        let p = cloud.points[0];
        assert_eq!(p.omega, spec.omega_axis[iw]);
        assert_eq!(p.kx, spec.kx_axis[ikx]);
        assert_eq!(p.ky, spec.ky_axis[iky]);
        assert_eq!(p.p_norm, 1.0);
    }

    #[test]
    fn constant_frames_have_zero_retained_power() {
        let grid = small_grid();
        let seq = ImageSequence {
            grid,
            frames: vec![3.5; grid.total_bins()],
            label_hs: 1.0,
            zone: 1,
            sample_id: "const".into(),
            seed: 0,
        };
        let spec = power_spectrum(&seq).unwrap();
        assert!(spec.power.iter().all(|&p| p < 1e-12));
        assert_eq!(spec.power_max, 0.0);
    }

    #[test]
    fn non_finite_frames_rejected() {
        let grid = small_grid();
        let mut frames = vec![0.0f32; grid.total_bins()];
        frames[10] = f32::NAN;
        let seq = ImageSequence {
            grid,
            frames,
            label_hs: 1.0,
            zone: 1,
            sample_id: "nan".into(),
            seed: 0,
        };
        assert!(power_spectrum(&seq).is_err());
    }

    fn toy_spectrum(powers: &[(usize, usize, usize, f64)]) -> Spectrum3D {
        let grid = small_grid();
        let npix = grid.nx * grid.ny;
        let n_omega = grid.nt / 2 + 1;
        let mut power = vec![0f64; n_omega * npix];
        let mut power_max = 0f64;
        for &(a, b, c, p) in powers {
            power[a * npix + b * grid.nx + c] = p;
            if a > 0 && !(b == 0 && c == 0) {
                power_max = power_max.max(p);
            }
        }
        Spectrum3D {
            grid,
            power,
            omega_axis: (0..n_omega).map(|a| a as f64 * grid.delta_omega()).collect(),
            kx_axis: (0..grid.nx)
                .map(|c| signed_value(c, grid.nx, grid.delta_kx()))
                .collect(),
            ky_axis: (0..grid.ny)
                .map(|b| signed_value(b, grid.ny, grid.delta_ky()))
                .collect(),
            power_max,
            parseval_rel_err: 0.0,
            label_hs: 2.0,
            zone: 2,
            sample_id: "toy".into(),
        }
    }

    #[test]
    fn selection_takes_strongest_and_counts_threshold() {
        let spec = toy_spectrum(&[
            (1, 1, 1, 10.0),
            (2, 1, 2, 5.0),
            (3, 2, 1, 0.2),
            (4, 2, 2, 0.05),
        ]);
        let (cloud, diag) = select_top_points(&spec, 2, 0.01).unwrap();
        assert_eq!(cloud.points[0].p_raw, 10.0);
        assert_eq!(cloud.points[1].p_raw, 5.0);
        assert_eq!(diag.below_threshold, 0);

        // selecting past the named bins pulls in zero-power bins too; the
        // sub-threshold counter sees 0.05 plus two zero bins
        let (_, diag6) = select_top_points(&spec, 6, 0.01).unwrap();
        assert_eq!(diag6.below_threshold, 3);
    }

    #[test]
    fn tie_break_prefers_lower_omega_then_kx_then_ky() {
        let spec = toy_spectrum(&[(4, 1, 1, 7.0), (2, 1, 1, 7.0), (2, 1, 5, 7.0)]);
        let (cloud, _) = select_top_points(&spec, 3, 0.01).unwrap();
        assert_eq!(cloud.points[0].omega, spec.omega_axis[2]);
        assert!(cloud.points[0].kx < cloud.points[1].kx);
        assert_eq!(cloud.points[2].omega, spec.omega_axis[4]);
    }

    #[test]
    fn selection_rejects_oversized_n() {
        let spec = toy_spectrum(&[(1, 1, 1, 1.0)]);
        let available = spec.selectable_bins();
        assert!(select_top_points(&spec, available + 1, 0.01).is_err());
    }

    #[test]
    fn feature_layout_and_subsets() {
        let cloud = SpectralPointCloud {
            points: vec![SpectralPoint {
                kx: 0.05,
                ky: -0.01,
                omega: 0.7,
                p_raw: 100.0,
                p_norm: 0.3,
            }],
            label_hs: 2.0,
            zone: 2,
            power_max: 100.0 / 0.3,
            sample_id: "f".into(),
        };
        let full = build_features(&cloud, FeatureSubset::Full);
        assert_eq!(full.shape(), &[1, 5]);
        assert_eq!(full.data(), &[2.0, 0.05, -0.01, 0.7, 0.3]);
        let wp = build_features(&cloud, FeatureSubset::OmegaPower);
        assert_eq!(wp.data(), &[0.7, 0.3]);
        let kw = build_features(&cloud, FeatureSubset::WavenumberOmega);
        assert_eq!(kw.data(), &[0.05, -0.01, 0.7]);
    }

    #[test]
    fn integrate_accumulates_and_normalizes() {
        let mk = |omega: f64, p_raw: f64| SpectralPoint {
            kx: 0.0,
            ky: 0.01,
            omega,
            p_raw,
            p_norm: 1.0,
        };
        let cloud = SpectralPointCloud {
            points: vec![mk(0.5, 0.3), mk(0.51, 0.2), mk(1.0, 0.1)],
            label_hs: 1.0,
            zone: 1,
            power_max: 1.0,
            sample_id: "i".into(),
        };
        let spec = integrate_frequency_spectrum(&cloud, 4).unwrap();
        // bins of width 0.25 over [0, 1]: 0.5 and 0.51 share bin 2
        assert_eq!(spec.len(), 4);
        assert!((spec[2].1 - 1.0).abs() < 1e-12);
        assert!((spec[3].1 - 0.1 / 0.5).abs() < 1e-12);

        let single = SpectralPointCloud {
            points: vec![mk(0.7, 2.0)],
            ..cloud.clone()
        };
        let s = integrate_frequency_spectrum(&single, 5).unwrap();
        let hot: Vec<usize> = s
            .iter()
            .enumerate()
            .filter(|(_, v)| v.1 > 0.0)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(hot, vec![4]);
        assert_eq!(s[4].1, 1.0);
    }

    #[test]
    fn cloud_roundtrip() {
        let dir = tempdir().unwrap();
        let grid = small_grid();
        let seq = tone_sequence(&grid, 2, 3, 5);
        let (cloud, _) = extract_cloud(&seq, 16, 0.01).unwrap();
        let path = dir.path().join("c.sptp");
        write_cloud(&path, &cloud).unwrap();
        let back = read_cloud(&path).unwrap();
        assert_eq!(back.points.len(), cloud.points.len());
        assert_eq!(back.zone, cloud.zone);
        assert_eq!(back.sample_id, cloud.sample_id);
        for (a, b) in cloud.points.iter().zip(back.points.iter()) {
            assert_eq!(a.kx as f32, b.kx as f32);
            assert_eq!(a.p_norm as f32, b.p_norm as f32);
            assert_eq!(a.p_raw as f32, b.p_raw as f32);
        }
    }
}
