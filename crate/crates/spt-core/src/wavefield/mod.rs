//! Synthetic sea-surface image sequences.
//!
//! Linear wave components are placed on the wavenumber grid with frequencies
//! from the finite-depth dispersion relation, so the 3D spectrum of a
//! generated sequence concentrates on the dispersion shell. Ground-truth
//! significant wave height is exact by construction: component amplitudes
//! are rescaled so that `4 * sqrt(m0)` hits the requested value.

mod dataset;
mod synth;

pub use dataset::{
    derive_seed, generate_dataset, read_sample, write_sample, DatasetConfig, DatasetManifest,
    ManifestRecord, Split,
};
pub use synth::{plan_components, synthesize_from_components, synthesize_sequence, WaveComponent};

use crate::error::{Result, SptError};

pub const GRAVITY: f64 = 9.81;
/// Phillips constant of the Pierson-Moskowitz spectrum.
pub const PM_ALPHA: f64 = 0.0081;

/// Space-time sampling of an image sequence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    /// Frames per sequence.
    pub nt: usize,
    /// Pixels per row.
    pub nx: usize,
    /// Rows per frame.
    pub ny: usize,
    /// Seconds per frame.
    pub dt: f64,
    /// Meters per pixel in x.
    pub dx: f64,
    /// Meters per pixel in y.
    pub dy: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            nt: 64,
            nx: 128,
            ny: 128,
            dt: 2.5,
            dx: 7.5,
            dy: 7.5,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, n) in [("nt", self.nt), ("nx", self.nx), ("ny", self.ny)] {
            if n < 8 || !n.is_power_of_two() {
                return Err(SptError::invalid(format!(
                    "{name} = {n} must be a power of two >= 8"
                )));
            }
        }
        for (name, v) in [("dt", self.dt), ("dx", self.dx), ("dy", self.dy)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(SptError::invalid(format!("{name} = {v} must be positive")));
            }
        }
        Ok(())
    }

    pub fn delta_kx(&self) -> f64 {
        std::f64::consts::TAU / (self.nx as f64 * self.dx)
    }

    pub fn delta_ky(&self) -> f64 {
        std::f64::consts::TAU / (self.ny as f64 * self.dy)
    }

    pub fn delta_omega(&self) -> f64 {
        std::f64::consts::TAU / (self.nt as f64 * self.dt)
    }

    /// Temporal Nyquist frequency `pi / dt`.
    pub fn nyquist_omega(&self) -> f64 {
        std::f64::consts::PI / self.dt
    }

    pub fn pixels_per_frame(&self) -> usize {
        self.nx * self.ny
    }

    pub fn total_bins(&self) -> usize {
        self.nt * self.nx * self.ny
    }
}

/// Sea state driving one synthesized sequence.
#[derive(Clone, Debug)]
pub struct SeaStateSpec {
    /// Target significant wave height, meters.
    pub hs_target: f64,
    /// Peak angular frequency, rad/s.
    pub omega_p: f64,
    /// JONSWAP peak-enhancement factor; 1.0 gives the PM shape.
    pub gamma: f64,
    /// Directional spreading exponent `s` of the cos^{2s} kernel.
    pub spread_exponent: f64,
    /// Peak propagation direction, radians.
    pub theta_p: f64,
    /// Water depth, meters.
    pub depth: f64,
    /// Surface current (Ux, Uy), m/s.
    pub current: (f64, f64),
    /// Amplitude of the quadratic harmonic term in [0, 1].
    pub harmonic_gain: f64,
    /// Multiplicative speckle standard deviation in [0, 1).
    pub noise_level: f64,
    /// Intensity gains for zones 1..3.
    pub zone_gains: [f64; 3],
}

impl Default for SeaStateSpec {
    fn default() -> Self {
        Self {
            hs_target: 2.0,
            omega_p: 0.8,
            gamma: 3.3,
            spread_exponent: 10.0,
            theta_p: 0.0,
            depth: 39.0,
            current: (0.0, 0.0),
            harmonic_gain: 0.0,
            noise_level: 0.0,
            zone_gains: [1.0, 0.8, 0.6],
        }
    }
}

impl SeaStateSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.3..=8.0).contains(&self.hs_target) {
            return Err(SptError::invalid(format!(
                "hs_target = {} outside [0.3, 8.0] m",
                self.hs_target
            )));
        }
        if !(self.omega_p > 0.0) {
            return Err(SptError::invalid("omega_p must be positive"));
        }
        if self.gamma < 1.0 {
            return Err(SptError::invalid("gamma must be >= 1"));
        }
        if !(self.depth > 0.0) {
            return Err(SptError::invalid("depth must be positive"));
        }
        if self.spread_exponent < 0.0 {
            return Err(SptError::invalid("spread_exponent must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.harmonic_gain) {
            return Err(SptError::invalid("harmonic_gain must be in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.noise_level) {
            return Err(SptError::invalid("noise_level must be in [0, 1)"));
        }
        if self.zone_gains.iter().any(|&g| !(g > 0.0)) {
            return Err(SptError::invalid("zone_gains must all be positive"));
        }
        Ok(())
    }
}

/// A synthesized gray-scale sequence with its ground-truth label.
#[derive(Clone, Debug)]
pub struct ImageSequence {
    pub grid: GridSpec,
    /// Non-negative intensities, row-major `(t, y, x)`.
    pub frames: Vec<f32>,
    /// Ground-truth significant wave height, meters.
    pub label_hs: f64,
    /// Observation zone in {1, 2, 3}.
    pub zone: u8,
    pub sample_id: String,
    pub seed: u64,
}

impl ImageSequence {
    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.grid.pixels_per_frame();
        &self.frames[t * n..(t + 1) * n]
    }
}

/// Finite-depth linear dispersion with current advection:
/// `omega = sqrt(g k tanh(k h)) + k . U`.
pub fn dispersion_omega(
    k_magnitude: f64,
    depth: f64,
    k_vector: (f64, f64),
    current: (f64, f64),
) -> Result<f64> {
    if !k_magnitude.is_finite()
        || !depth.is_finite()
        || !k_vector.0.is_finite()
        || !k_vector.1.is_finite()
        || !current.0.is_finite()
        || !current.1.is_finite()
    {
        return Err(SptError::invalid("dispersion_omega: non-finite input"));
    }
    if k_magnitude < 0.0 {
        return Err(SptError::invalid(format!(
            "dispersion_omega: negative wavenumber {k_magnitude}"
        )));
    }
    if !(depth > 0.0) {
        return Err(SptError::invalid(format!(
            "dispersion_omega: depth {depth} must be positive"
        )));
    }
    Ok(intrinsic_omega(k_magnitude, depth) + k_vector.0 * current.0 + k_vector.1 * current.1)
}

/// Dispersion frequency without current.
pub fn intrinsic_omega(k: f64, depth: f64) -> f64 {
    (GRAVITY * k * (k * depth).tanh()).sqrt()
}

/// Group velocity `d omega / d k` of the intrinsic dispersion relation;
/// tends to `sqrt(g h)` as k -> 0.
pub fn group_velocity(k: f64, depth: f64) -> f64 {
    if k < 1e-12 {
        return (GRAVITY * depth).sqrt();
    }
    let kh = k * depth;
    let th = kh.tanh();
    let omega = (GRAVITY * k * th).sqrt();
    let sech2 = 1.0 - th * th;
    (GRAVITY * th + GRAVITY * kh * sech2) / (2.0 * omega)
}

/// Pierson-Moskowitz frequency spectrum
/// `S(w) = alpha g^2 w^-5 exp(-1.25 (w_p / w)^4)`.
pub fn pm_spectrum(omega: f64, omega_p: f64) -> Result<f64> {
    if !(omega > 0.0) || !omega.is_finite() {
        return Err(SptError::invalid(format!(
            "pm_spectrum: omega = {omega} must be positive"
        )));
    }
    if !(omega_p > 0.0) || !omega_p.is_finite() {
        return Err(SptError::invalid(format!(
            "pm_spectrum: omega_p = {omega_p} must be positive"
        )));
    }
    let r = omega_p / omega;
    Ok(PM_ALPHA * GRAVITY * GRAVITY * omega.powi(-5) * (-1.25 * r.powi(4)).exp())
}

/// JONSWAP spectrum: PM shape times `gamma^r` with the standard sigma
/// switch at the peak. `gamma = 1` reduces exactly to [`pm_spectrum`].
pub fn jonswap_spectrum(omega: f64, omega_p: f64, gamma: f64) -> Result<f64> {
    if gamma < 1.0 {
        return Err(SptError::invalid(format!(
            "jonswap_spectrum: gamma = {gamma} must be >= 1"
        )));
    }
    let pm = pm_spectrum(omega, omega_p)?;
    let sigma = if omega <= omega_p { 0.07 } else { 0.09 };
    let d = omega - omega_p;
    let r = (-d * d / (2.0 * sigma * sigma * omega_p * omega_p)).exp();
    Ok(pm * gamma.powf(r))
}

/// Zeroth moment of the PM spectrum in closed form.
pub fn pm_m0(omega_p: f64) -> f64 {
    PM_ALPHA * GRAVITY * GRAVITY / (5.0 * omega_p.powi(4))
}

/// Peak frequency of a fully developed PM sea with significant wave
/// height `hs`: inverts `hs = 4 sqrt(m0)`.
pub fn pm_peak_omega(hs: f64) -> f64 {
    (16.0 * PM_ALPHA * GRAVITY * GRAVITY / (5.0 * hs * hs)).powf(0.25)
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(std::f64::consts::TAU);
    if w > std::f64::consts::PI {
        w - std::f64::consts::TAU
    } else {
        w
    }
}

/// Unnormalized spreading kernel `cos^{2s}((theta - theta_p) / 2)`.
pub fn spreading_kernel(theta: f64, theta_p: f64, s: f64) -> f64 {
    let half = wrap_angle(theta - theta_p) / 2.0;
    half.cos().powf(2.0 * s)
}

/// Integral of the spreading kernel over `(-pi, pi]` (Simpson's rule);
/// dividing the kernel by this makes it a direction density.
pub fn directional_norm(s: f64) -> f64 {
    let n = 4096usize; // even
    let h = std::f64::consts::TAU / n as f64;
    let f = |i: usize| {
        let theta = -std::f64::consts::PI + i as f64 * h;
        spreading_kernel(theta, 0.0, s)
    };
    let mut acc = f(0) + f(n);
    let mut i = 1;
    while i < n {
        acc += f(i) * if i % 2 == 1 { 4.0 } else { 2.0 };
        i += 1;
    }
    acc * h / 3.0
}

/// Normalized directional spreading density; integrates to 1 over a full
/// circle, so discrete direction-bin weights built from it sum to 1.
pub fn directional_spreading(theta: f64, theta_p: f64, s: f64) -> f64 {
    spreading_kernel(theta, theta_p, s) / directional_norm(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dispersion_examples() {
        assert_eq!(
            dispersion_omega(0.0, 39.0, (0.0, 0.0), (0.0, 0.0)).unwrap(),
            0.0
        );
        let w = dispersion_omega(0.1, 39.0, (0.1, 0.0), (0.0, 0.0)).unwrap();
        assert!((w - 0.990049).abs() < 1e-4, "got {w}");
        let w2 = dispersion_omega(0.01, 39.0, (0.01, 0.0), (0.0, 0.0)).unwrap();
        assert!((w2 - 0.190886).abs() < 1e-4, "got {w2}");
    }

    #[test]
    fn dispersion_rejects_bad_input() {
        assert!(dispersion_omega(-0.1, 39.0, (0.0, 0.0), (0.0, 0.0)).is_err());
        assert!(dispersion_omega(f64::NAN, 39.0, (0.0, 0.0), (0.0, 0.0)).is_err());
        assert!(dispersion_omega(0.1, 0.0, (0.0, 0.0), (0.0, 0.0)).is_err());
    }

    #[test]
    fn dispersion_current_shift() {
        let base = dispersion_omega(0.1, 39.0, (0.1, 0.0), (0.0, 0.0)).unwrap();
        let with = dispersion_omega(0.1, 39.0, (0.1, 0.0), (0.5, 0.0)).unwrap();
        assert!((with - base - 0.05).abs() < 1e-12);
    }

    #[test]
    fn group_velocity_matches_finite_difference() {
        for &k in &[0.01, 0.05, 0.2] {
            let h = 1e-6;
            let fd = (intrinsic_omega(k + h, 39.0) - intrinsic_omega(k - h, 39.0)) / (2.0 * h);
            assert!((group_velocity(k, 39.0) - fd).abs() < 1e-6);
        }
        assert!((group_velocity(0.0, 39.0) - (GRAVITY * 39.0).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn pm_examples() {
        // direct scalar evaluation of alpha g^2 / w^5 e^{-1.25} at the peak
        let s = pm_spectrum(0.65, 0.65).unwrap();
        assert!((s - 1.9248).abs() < 1e-3, "got {s}");
        assert!(pm_spectrum(1e-6, 0.65).unwrap() < 1e-100);
        assert!(pm_spectrum(0.0, 0.65).is_err());
        assert!(pm_spectrum(-1.0, 0.65).is_err());
        // closed-form m0 -> Hs = 3.738 m at omega_p = 0.65
        let hs = 4.0 * pm_m0(0.65).sqrt();
        assert!((hs - 3.738).abs() < 1e-3, "got {hs}");
        // pm_peak_omega inverts the closed form
        assert!((pm_peak_omega(hs) - 0.65).abs() < 1e-9);
    }

    #[test]
    fn pm_m0_matches_quadrature() {
        // trapezoid over a wide band as an independent check of the
        // closed-form zeroth moment
        let omega_p = 0.65;
        let n = 200_000;
        let lo = 1e-3;
        let hi = 40.0;
        let h = (hi - lo) / n as f64;
        let mut acc = 0.5 * (pm_spectrum(lo, omega_p).unwrap() + pm_spectrum(hi, omega_p).unwrap());
        for i in 1..n {
            acc += pm_spectrum(lo + i as f64 * h, omega_p).unwrap();
        }
        let m0 = acc * h;
        assert!(
            (m0 - pm_m0(omega_p)).abs() / pm_m0(omega_p) < 1e-6,
            "quadrature {m0} vs closed form {}",
            pm_m0(omega_p)
        );
    }

    #[test]
    fn jonswap_examples() {
        // gamma = 1 reduces to PM
        let a = jonswap_spectrum(0.8, 0.65, 1.0).unwrap();
        let b = pm_spectrum(0.8, 0.65).unwrap();
        assert_eq!(a, b);
        // at the peak the ratio is exactly gamma
        let j = jonswap_spectrum(0.65, 0.65, 3.3).unwrap();
        assert!((j / pm_spectrum(0.65, 0.65).unwrap() - 3.3).abs() < 1e-12);
        // enhancement exponent at omega = 0.72 (sigma = 0.09 branch)
        let j2 = jonswap_spectrum(0.72, 0.65, 3.3).unwrap();
        let r = (-(0.07f64 * 0.07) / (2.0 * 0.09 * 0.09 * 0.65 * 0.65)).exp();
        assert!((r - 0.48876).abs() < 1e-4, "exponent r = {r}");
        assert!((j2 / pm_spectrum(0.72, 0.65).unwrap() - 3.3f64.powf(r)).abs() < 1e-12);
        assert!(jonswap_spectrum(0.8, 0.65, 0.5).is_err());
    }

    #[test]
    fn spreading_examples() {
        // peak direction maximizes the unnormalized kernel at 1
        assert_eq!(spreading_kernel(0.3, 0.3, 7.5), 1.0);
        // s = 0 gives a uniform density
        let d0 = directional_spreading(1.0, 0.0, 0.0);
        let d1 = directional_spreading(-2.0, 0.0, 0.0);
        assert!((d0 - d1).abs() < 1e-12);
        assert!((d0 - 1.0 / std::f64::consts::TAU).abs() < 1e-9);
        // opposite direction zeroes the kernel for s = 1
        assert!(spreading_kernel(std::f64::consts::PI, 0.0, 1.0).abs() < 1e-30);
    }

    #[test]
    fn spreading_density_integrates_to_one() {
        for &s in &[0.0, 1.0, 4.0, 10.0, 16.0] {
            let n = 10_000;
            let h = std::f64::consts::TAU / n as f64;
            let sum: f64 = (0..n)
                .map(|i| directional_spreading(-std::f64::consts::PI + (i as f64 + 0.5) * h, 0.4, s) * h)
                .sum();
            assert!((sum - 1.0).abs() < 1e-6, "s = {s}: integral {sum}");
        }
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::default().validate().is_ok());
        let mut g = GridSpec::default();
        g.nt = 48;
        assert!(g.validate().is_err());
        g = GridSpec::default();
        g.dt = 0.0;
        assert!(g.validate().is_err());
    }
}
