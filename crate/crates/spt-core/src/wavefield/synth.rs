//! Wave-component planning and frame rendering.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Result, SptError};
use crate::wavefield::{
    directional_norm, group_velocity, intrinsic_omega, spreading_kernel, GridSpec,
    ImageSequence, SeaStateSpec,
};

/// One linear component sitting on a wavenumber grid bin.
#[derive(Clone, Copy, Debug)]
pub struct WaveComponent {
    /// FFT bin indices of the wavevector.
    pub ikx: usize,
    pub iky: usize,
    /// Signed wavevector, rad/m.
    pub kx: f64,
    pub ky: f64,
    /// Encounter frequency snapped to the temporal grid, rad/s.
    pub omega: f64,
    pub amplitude: f64,
    pub phase: f64,
}

fn signed_index(i: usize, n: usize) -> i64 {
    if i <= n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

/// Builds the deterministic component set for a sea state: every wavenumber
/// bin whose dispersion frequency resolves strictly inside the temporal band
/// becomes one component. Frequencies are quantized to the temporal grid so
/// each component occupies a single (k, omega) bin of the sequence spectrum.
/// Amplitudes follow `a^2 = 2 S(w) D(theta) J dkx dky` with the dispersion
/// Jacobian `J = c_g / k`, then are rescaled so `4 sqrt(sum a^2 / 2)` equals
/// the target height exactly.
pub fn plan_components(
    spec: &SeaStateSpec,
    grid: &GridSpec,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<WaveComponent>> {
    spec.validate()?;
    grid.validate()?;
    let dkx = grid.delta_kx();
    let dky = grid.delta_ky();
    let dw = grid.delta_omega();
    let max_bin = grid.nt / 2 - 1;
    let norm = directional_norm(spec.spread_exponent);
    let mut comps = Vec::new();
    for iky in 0..grid.ny {
        for ikx in 0..grid.nx {
            if ikx == 0 && iky == 0 {
                continue;
            }
            let kx = signed_index(ikx, grid.nx) as f64 * dkx;
            let ky = signed_index(iky, grid.ny) as f64 * dky;
            let k = kx.hypot(ky);
            let w_intr = intrinsic_omega(k, spec.depth);
            let w_enc = w_intr + kx * spec.current.0 + ky * spec.current.1;
            if !(w_enc > 0.0) {
                continue;
            }
            let bin = (w_enc / dw).round() as i64;
            if bin < 1 || bin as usize > max_bin {
                continue;
            }
            let s = crate::wavefield::jonswap_spectrum(w_intr, spec.omega_p, spec.gamma)?;
            let d = spreading_kernel(ky.atan2(kx), spec.theta_p, spec.spread_exponent) / norm;
            let jac = group_velocity(k, spec.depth) / k;
            let a2 = 2.0 * s * d * jac * dkx * dky;
            if !(a2 > 0.0) || !a2.is_finite() {
                continue;
            }
            comps.push(WaveComponent {
                ikx,
                iky,
                kx,
                ky,
                omega: bin as f64 * dw,
                amplitude: a2.sqrt(),
                phase: rng.random_range(0.0..std::f64::consts::TAU),
            });
        }
    }
    let m0: f64 = comps.iter().map(|c| 0.5 * c.amplitude * c.amplitude).sum();
    if comps.is_empty() || !(m0 > 0.0) {
        let k_min = dkx.min(dky);
        return Err(SptError::Generation(format!(
            "no resolvable wave components for omega_p = {:.4} rad/s; \
             the resolvable band is [{:.4}, {:.4}] rad/s",
            spec.omega_p,
            intrinsic_omega(k_min, spec.depth),
            grid.nyquist_omega()
        )));
    }
    let target_m0 = (spec.hs_target / 4.0) * (spec.hs_target / 4.0);
    let scale = (target_m0 / m0).sqrt();
    for c in comps.iter_mut() {
        c.amplitude *= scale;
    }
    Ok(comps)
}

/// Renders frames from explicit components:
/// `zone_gain * G(eta + harmonic) * (1 + speckle)`, where `G` shifts the
/// minimum to zero. Exposed so tests can force degenerate component sets.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_from_components(
    grid: &GridSpec,
    components: &[WaveComponent],
    zone_gain: f64,
    harmonic_gain: f64,
    noise_level: f64,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<f32>> {
    grid.validate()?;
    if components.is_empty() {
        return Err(SptError::Generation("empty component set".into()));
    }
    let (nt, ny, nx) = (grid.nt, grid.ny, grid.nx);
    let npix = ny * nx;
    let mut eta = vec![0f64; nt * npix];

    let mut planner = FftPlanner::<f64>::new();
    let fft_x = planner.plan_fft_inverse(nx);
    let fft_y = planner.plan_fft_inverse(ny);
    let mut scratch = vec![Complex::default(); fft_x.get_inplace_scratch_len().max(fft_y.get_inplace_scratch_len())];
    let mut col = vec![Complex::default(); ny];
    let mut spec2d = vec![Complex::<f64>::default(); npix];

    // Per-component phasor advanced by one frame per step.
    let mut cur: Vec<Complex<f64>> = components
        .iter()
        .map(|c| Complex::from_polar(0.5 * c.amplitude, c.phase))
        .collect();
    let rot: Vec<Complex<f64>> = components
        .iter()
        .map(|c| Complex::from_polar(1.0, -c.omega * grid.dt))
        .collect();

    for t in 0..nt {
        spec2d.fill(Complex::default());
        for (c, ph) in components.iter().zip(cur.iter()) {
            let idx = c.iky * nx + c.ikx;
            let conj_idx = ((ny - c.iky) % ny) * nx + (nx - c.ikx) % nx;
            debug_assert_ne!(idx, conj_idx, "self-conjugate component bin");
            spec2d[idx] += ph;
            spec2d[conj_idx] += ph.conj();
        }
        // unnormalized inverse 2D FFT: rows, then strided columns
        for row in spec2d.chunks_exact_mut(nx) {
            fft_x.process_with_scratch(row, &mut scratch);
        }
        for x in 0..nx {
            for y in 0..ny {
                col[y] = spec2d[y * nx + x];
            }
            fft_y.process_with_scratch(&mut col, &mut scratch);
            for y in 0..ny {
                spec2d[y * nx + x] = col[y];
            }
        }
        let frame = &mut eta[t * npix..(t + 1) * npix];
        for (dst, src) in frame.iter_mut().zip(spec2d.iter()) {
            *dst = src.re;
        }
        for (ph, r) in cur.iter_mut().zip(rot.iter()) {
            *ph *= r;
        }
    }

    // Quadratic harmonic term, normalized to the surface scale.
    if harmonic_gain > 0.0 {
        let n = eta.len() as f64;
        let mean_eta: f64 = eta.iter().sum::<f64>() / n;
        let var_eta: f64 = eta.iter().map(|&v| (v - mean_eta) * (v - mean_eta)).sum::<f64>() / n;
        let sq: Vec<f64> = eta.iter().map(|&v| v * v).collect();
        let mean_sq: f64 = sq.iter().sum::<f64>() / n;
        let var_sq: f64 = sq.iter().map(|&v| (v - mean_sq) * (v - mean_sq)).sum::<f64>() / n;
        if var_sq > 1e-300 {
            let scale = harmonic_gain * var_eta.sqrt() / var_sq.sqrt();
            for (v, &s) in eta.iter_mut().zip(sq.iter()) {
                *v += scale * (s - mean_sq);
            }
        }
    }

    // Affine map to non-negative intensities (minimum to zero), zone gain,
    // multiplicative speckle clamped at zero.
    let min = eta.iter().copied().fold(f64::INFINITY, f64::min);
    let normal = if noise_level > 0.0 {
        Some(Normal::new(0.0, noise_level).map_err(|e| SptError::Generation(e.to_string()))?)
    } else {
        None
    };
    let mut out = Vec::with_capacity(eta.len());
    for &v in eta.iter() {
        let mut p = zone_gain * (v - min);
        if let Some(n) = &normal {
            p *= 1.0 + n.sample(rng);
        }
        out.push(p.max(0.0) as f32);
    }
    Ok(out)
}

/// Synthesizes one image sequence; bit-identical for identical
/// `(spec, grid, zone, seed)`.
pub fn synthesize_sequence(
    spec: &SeaStateSpec,
    grid: &GridSpec,
    zone: u8,
    seed: u64,
) -> Result<ImageSequence> {
    if !(1..=3).contains(&zone) {
        return Err(SptError::invalid(format!("zone = {zone} not in 1..=3")));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let comps = plan_components(spec, grid, &mut rng)?;
    let frames = synthesize_from_components(
        grid,
        &comps,
        spec.zone_gains[zone as usize - 1],
        spec.harmonic_gain,
        spec.noise_level,
        &mut rng,
    )?;
    Ok(ImageSequence {
        grid: *grid,
        frames,
        label_hs: spec.hs_target,
        zone,
        sample_id: format!("seq-{seed:016x}"),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

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

    #[test]
    fn realized_m0_matches_label_exactly() {
        let spec = SeaStateSpec {
            hs_target: 2.0,
            omega_p: 0.8,
            ..Default::default()
        };
        let grid = GridSpec::default();
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let comps = plan_components(&spec, &grid, &mut rng).unwrap();
        let m0: f64 = comps.iter().map(|c| 0.5 * c.amplitude * c.amplitude).sum();
        assert!((4.0 * m0.sqrt() - 2.0).abs() < 1e-6);
    }

    #[test]
    fn determinism_bitwise() {
        let spec = SeaStateSpec {
            hs_target: 1.5,
            omega_p: 0.9,
            noise_level: 0.1,
            harmonic_gain: 0.2,
            ..Default::default()
        };
        let grid = small_grid();
        let a = synthesize_sequence(&spec, &grid, 2, 1234).unwrap();
        let b = synthesize_sequence(&spec, &grid, 2, 1234).unwrap();
        assert_eq!(a.frames, b.frames);
        let c = synthesize_sequence(&spec, &grid, 2, 1235).unwrap();
        assert_ne!(a.frames, c.frames);
    }

    #[test]
    fn frames_are_finite_and_non_negative() {
        let spec = SeaStateSpec {
            hs_target: 3.0,
            omega_p: 0.7,
            noise_level: 0.3,
            harmonic_gain: 0.5,
            ..Default::default()
        };
        let seq = synthesize_sequence(&spec, &small_grid(), 1, 99).unwrap();
        assert!(seq.frames.iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn out_of_band_peak_is_an_error_naming_the_band() {
        let spec = SeaStateSpec {
            hs_target: 0.3,
            omega_p: 60.0, // far above anything the grid resolves
            ..Default::default()
        };
        let err = synthesize_sequence(&spec, &small_grid(), 1, 1).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("resolvable band"), "message: {msg}");
    }

    #[test]
    fn single_component_is_a_pure_traveling_cosine() {
        let grid = small_grid();
        let comp = WaveComponent {
            ikx: 3,
            iky: 2,
            kx: 3.0 * grid.delta_kx(),
            ky: 2.0 * grid.delta_ky(),
            omega: 2.0 * grid.delta_omega(),
            amplitude: 1.0,
            phase: 0.4,
        };
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let frames =
            synthesize_from_components(&grid, &[comp], 1.0, 0.0, 0.0, &mut rng).unwrap();
        // Compare frame 0 against the analytic cosine (up to the min shift).
        let mut expect = Vec::with_capacity(grid.pixels_per_frame());
        for iy in 0..grid.ny {
            for ix in 0..grid.nx {
                let phase = comp.kx * (ix as f64 * grid.dx) + comp.ky * (iy as f64 * grid.dy)
                    + comp.phase;
                expect.push(phase.cos());
            }
        }
        let min = expect.iter().copied().fold(f64::INFINITY, f64::min);
        for (got, want) in frames.iter().zip(expect.iter()) {
            assert!((*got as f64 - (want - min)).abs() < 1e-6);
        }
    }
}
