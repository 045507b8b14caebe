//! Acceptance suite. Prints one `[PASS]` or `[FAIL]` line per criterion and
//! a summary. Pass criterion numbers as arguments to run a subset, e.g.
//! `cargo test --release --test acceptance -- 1 4 12`.
//!
//! The process exits 0 even when criteria fail, so that `cargo test` reports
//! the failures without aborting; set `ACCEPTANCE_STRICT=1` to exit 1 instead.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::time::{Duration, Instant};

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bayesdecon::camera::{
    adu_to_photon_estimate, simulate_raw, uniform_camera, CameraMap, SimulationRecord,
};
use bayesdecon::inference::{
    run_chain, run_model, sample_photons_given_readout, Model, PosteriorSummary, SamplerConfig,
};
use bayesdecon::metrics::{
    ac_energy_beyond_cutoff, autocorrelation, compare, cv_map, decile_means, energy_beyond_cutoff,
};
use bayesdecon::optics::{default_gaussian_side, gaussian_psf, otf_from_psf, Convolver, Psf};
use bayesdecon::parallel::run_wavefront;
use bayesdecon::prior::{
    build_prior, log_prior, sample_from_prior_with, DirichletOtfPrior, IncrementalPrior,
    SpectrumState, DEFAULT_ALPHA_FLOOR,
};
use bayesdecon::rl::rl_run;
use bayesdecon::targets::{build_target, TargetKind};
use bayesdecon::{ImageGrid, Role};

const PITCH: f64 = 65.0;
const NA: f64 = 1.3;
const WAVELENGTH: f64 = 510.0;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn default_psf() -> Psf {
    gaussian_psf(
        NA,
        WAVELENGTH,
        PITCH,
        default_gaussian_side(NA, WAVELENGTH, PITCH),
    )
    .unwrap()
}

// ---------------------------------------------------------------- oracles

fn direct_convolution(x: ArrayView2<f64>, k: ArrayView2<f64>) -> Array2<f64> {
    let (rows, cols) = x.dim();
    let (kr, kc) = k.dim();
    let (hr, hc) = (kr as isize / 2, kc as isize / 2);
    Array2::from_shape_fn((rows, cols), |(r, c)| {
        let mut acc = 0.0;
        for i in 0..kr {
            for j in 0..kc {
                let rr = r as isize + hr - i as isize;
                let cc = c as isize + hc - j as isize;
                if rr >= 0 && cc >= 0 && (rr as usize) < rows && (cc as usize) < cols {
                    acc += k[[i, j]] * x[[rr as usize, cc as usize]];
                }
            }
        }
        acc
    })
}

fn naive_dft_magnitudes(x: ArrayView2<f64>) -> Array2<f64> {
    let (rows, cols) = x.dim();
    Array2::from_shape_fn((rows, cols), |(k0, k1)| {
        let (mut re, mut im) = (0.0, 0.0);
        for ((r, c), &v) in x.indexed_iter() {
            let theta = -2.0 * PI * ((k0 * r) as f64 / rows as f64 + (k1 * c) as f64 / cols as f64);
            re += v * theta.cos();
            im += v * theta.sin();
        }
        re.hypot(im)
    })
}

fn ln_poisson_pmf(k: u64, rate: f64) -> f64 {
    if rate == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    k as f64 * rate.ln() - rate - libm::lgamma(k as f64 + 1.0)
}

fn ln_gauss(x: f64, mean: f64, sd: f64) -> f64 {
    -0.5 * ((x - mean) / sd).powi(2) - sd.ln() - 0.5 * (2.0 * PI).ln()
}

fn normalize_log(weights: &[f64]) -> Vec<f64> {
    let top = weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = weights.iter().map(|v| (v - top).exp()).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

/// Posterior mean of one pixel with a flat prior, delta PSF, unit gain and no
/// offset, by quadrature over the rate with the photon count summed out.
fn flat_pixel_posterior_mean(w: f64, read_sd: f64) -> f64 {
    let top = w.max(1.0) * 3.0 + 60.0;
    let n = 40_000;
    let h = top / n as f64;
    let max_k = (top * 2.0) as u64 + 50;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 1..=n {
        let rho = i as f64 * h;
        let terms: Vec<f64> = (0..max_k)
            .map(|k| ln_gauss(w, k as f64, read_sd) + ln_poisson_pmf(k, rho))
            .collect();
        let top_t = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let dens = top_t.exp() * terms.iter().map(|t| (t - top_t).exp()).sum::<f64>();
        let weight = if i == n { 0.5 } else { 1.0 };
        num += weight * rho * dens;
        den += weight * dens;
    }
    num / den
}

// ------------------------------------------------------ shared fixtures

struct StarSim {
    sim: SimulationRecord,
    psf: Psf,
    camera: CameraMap,
}

fn star_simulation() -> StarSim {
    let shape = (128, 128);
    let psf = default_psf();
    let truth = build_target(TargetKind::SiemensStar, shape, &psf, 150.0).unwrap();
    let camera = uniform_camera(shape, 1.0, 0.0, 0.01).unwrap();
    let sim = simulate_raw(&truth, &psf, &camera, 1).unwrap();
    StarSim { sim, psf, camera }
}

struct BayesRun {
    summary: PosteriorSummary,
    elapsed: Duration,
}

#[derive(Default)]
struct Context {
    star: Option<StarSim>,
    bayes: Option<BayesRun>,
}

impl Context {
    fn star(&mut self) -> &StarSim {
        self.star.get_or_insert_with(star_simulation)
    }

    fn bayes(&mut self) -> &BayesRun {
        if self.bayes.is_none() {
            let f = self.star();
            let config = SamplerConfig {
                n_samples: 100,
                burn_in: 500,
                thin: 10,
                proposal_sd: 0.1,
                seed: 1,
                ..SamplerConfig::default()
            };
            let (raw, psf, camera) = (f.sim.raw.clone(), f.psf.clone(), f.camera.clone());
            let t = Instant::now();
            let summary = run_wavefront(&raw, &psf, &camera, &config, 1).unwrap();
            self.bayes = Some(BayesRun {
                summary,
                elapsed: t.elapsed(),
            });
        }
        self.bayes.as_ref().unwrap()
    }
}

// ------------------------------------------------------------ criteria

fn c1_convolution() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let x = Array2::from_shape_fn((32, 32), |_| rng.random::<f64>() * 100.0);
        let k = Array2::from_shape_fn((7, 7), |_| rng.random::<f64>());
        let psf = Psf::from_values(k, PITCH).unwrap();
        let fast = Convolver::new(&psf, (32, 32)).convolve(x.view());
        let slow = direct_convolution(x.view(), psf.values().view());
        let scale = slow.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let err = fast
            .iter()
            .zip(slow.iter())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        worst = worst.max(err / scale);
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome::new(
        worst < 1e-10 && secs < 1.0,
        format!("max relative error {worst:.2e}, {secs:.3} s (limit 1e-10, 1 s)"),
    )
}

fn c2_photon_sampler() -> Outcome {
    let start = Instant::now();
    let camera = uniform_camera((1, 1), 2.0, 100.0, 2.0).unwrap();
    let cal = camera.pixel(0, 0);
    let (w, mu) = (120.0, 10.0);
    let draws = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut counts = vec![0u64; 400];
    for _ in 0..draws {
        let k = sample_photons_given_readout(w, mu, cal, &mut rng) as usize;
        counts[k.min(399)] += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    let logs: Vec<f64> = (0..400u64)
        .map(|k| ln_gauss(w, 2.0 * k as f64 + 100.0, 2.0) + ln_poisson_pmf(k, mu))
        .collect();
    let exact = normalize_log(&logs);
    let tv = 0.5
        * exact
            .iter()
            .zip(&counts)
            .map(|(p, &n)| (p - n as f64 / draws as f64).abs())
            .sum::<f64>();
    Outcome::new(
        tv < 0.01 && secs < 5.0,
        format!("total variation {tv:.4}, {secs:.2} s (limit 0.01, 5 s)"),
    )
}

fn otf_prior(shape: (usize, usize)) -> DirichletOtfPrior {
    let otf = otf_from_psf(&default_psf(), shape).unwrap();
    build_prior(&otf, DEFAULT_ALPHA_FLOOR).unwrap()
}

fn c3_scale_invariance() -> Outcome {
    let prior = otf_prior((32, 32));
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let x = Array2::from_shape_fn((32, 32), |_| 0.1 + rng.random::<f64>() * 50.0);
        let base = log_prior(&SpectrumState::from_object(x.view()), &prior).unwrap();
        for c in [1e-3, 1.0, 1e3] {
            let scaled = log_prior(&SpectrumState::from_object((&x * c).view()), &prior).unwrap();
            worst = worst.max((scaled - base).abs());
        }
    }
    Outcome::new(
        worst < 1e-9,
        format!("max |change| {worst:.2e} (limit 1e-9)"),
    )
}

fn c4_incremental_spectrum() -> Outcome {
    let shape = (32, 32);
    let prior = otf_prior(shape);
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut x = Array2::from_shape_fn(shape, |_| 1.0 + rng.random::<f64>() * 20.0);
    let mut inc = IncrementalPrior::new(&prior);
    inc.rebuild(x.view());
    for _ in 0..10_000 {
        let p = (rng.random_range(0..shape.0), rng.random_range(0..shape.1));
        let delta = (rng.random::<f64>() - 0.5) * 2.0;
        if x[p] + delta <= 0.0 {
            continue;
        }
        inc.propose(p, delta);
        inc.commit();
        x[p] += delta;
        if inc.updates_since_rebuild() >= 4096 {
            inc.rebuild(x.view());
        }
    }
    let got = inc.full_magnitudes();
    let want = naive_dft_magnitudes(x.view());
    let scale = want.iter().cloned().fold(0.0, f64::max);
    let err = got
        .iter()
        .zip(want.iter())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
        / scale;
    Outcome::new(
        err < 1e-6,
        format!("max relative error {err:.2e} after 10^4 updates (limit 1e-6)"),
    )
}

fn c5_dirichlet_mean() -> Outcome {
    let prior = otf_prior((16, 16));
    let alpha = prior.alpha();
    let a0 = alpha.sum() * prior.concentration();
    let draws = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut sum = Array2::<f64>::zeros(alpha.dim());
    for _ in 0..draws {
        sum += &sample_from_prior_with(&prior, &mut rng);
    }
    let mean = sum / draws as f64;
    let mut outside = 0;
    let mut worst: f64 = 0.0;
    for (&m, &a) in mean.iter().zip(alpha.iter()) {
        let p = a / alpha.sum();
        let se = (p * (1.0 - p) / (a0 + 1.0) / draws as f64).sqrt();
        let z = (m - p).abs() / se;
        worst = worst.max(z);
        if z > 3.0 {
            outside += 1;
        }
    }
    Outcome::new(
        outside == 0,
        format!(
            "{outside} of {} components beyond 3 SE, max {worst:.2} SE",
            alpha.len()
        ),
    )
}

fn c6_tiny_posterior() -> Outcome {
    let start = Instant::now();
    let shape = (4, 4);
    let truth = Array2::from_shape_fn(shape, |(r, c)| 10.0 + 2.0 * (r * 4 + c) as f64);
    let camera = uniform_camera(shape, 1.0, 0.0, 1.0).unwrap();
    let psf = Psf::delta(PITCH).unwrap();
    let sim = simulate_raw(
        &ImageGrid::new(truth, PITCH, Role::Object).unwrap(),
        &psf,
        &camera,
        6,
    )
    .unwrap();
    let model =
        Model::with_prior(sim.raw.clone(), psf, camera, DirichletOtfPrior::flat(shape)).unwrap();
    let config = SamplerConfig {
        n_samples: 100_000,
        burn_in: 1_000,
        thin: 1,
        keep_samples: false,
        seed: 6,
        ..SamplerConfig::default()
    };
    let summary = run_model(&model, &config).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let mut worst: f64 = 0.0;
    for ((r, c), &w) in sim.raw.values().indexed_iter() {
        let exact = flat_pixel_posterior_mean(w, 1.0);
        worst = worst.max((summary.mean.values()[[r, c]] - exact).abs() / exact);
    }
    Outcome::new(
        worst < 0.05 && secs < 120.0,
        format!("max relative error of the mean {worst:.4}, {secs:.1} s (limit 0.05, 120 s)"),
    )
}

fn c7_rl_degrades(ctx: &mut Context) -> Outcome {
    let start = Instant::now();
    let f = ctx.star();
    let data = adu_to_photon_estimate(&f.sim.raw, &f.camera).unwrap();
    let trace = rl_run(&data, &f.psf, 1000, &[1000], Some(&f.sim.ground_truth)).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let best = trace.best_iteration().unwrap();
    let best_psnr = trace.metrics[best - 1].psnr_db;
    let last_psnr = trace.metrics[999].psnr_db;
    Outcome::new(
        best <= 50 && last_psnr < best_psnr - 1.0 && secs < 300.0,
        format!("best iteration {best} at {best_psnr:.2} dB, iteration 1000 at {last_psnr:.2} dB, {secs:.1} s"),
    )
}

fn running_mean_reports(
    summary: &PosteriorSummary,
    truth: &ImageGrid,
    ns: &[usize],
) -> Vec<(usize, f64, f64)> {
    let samples = &summary.retained_samples;
    ns.iter()
        .map(|&n| {
            let mut acc = Array2::<f64>::zeros(truth.shape());
            for s in &samples[..n] {
                acc += s.values();
            }
            let mean = ImageGrid::new(acc / n as f64, PITCH, Role::Object).unwrap();
            let rep = compare(&mean, truth, None).unwrap();
            (n, rep.psnr_db, rep.rmse)
        })
        .collect()
}

fn chain_diagnostics(summary: &PosteriorSummary) -> String {
    let samples = &summary.retained_samples;
    let shape = summary.mean.shape();
    let mut lag1 = 0.0;
    let mut counted = 0;
    for r in 0..shape.0 {
        for c in 0..shape.1 {
            let series: Vec<f64> = samples.iter().map(|s| s.values()[[r, c]]).collect();
            let a = autocorrelation(&series, 1);
            if a.is_finite() {
                lag1 += a;
                counted += 1;
            }
        }
    }
    format!(
        "acceptance {:.3}, mean lag-1 autocorrelation {:.3} over {counted} pixels",
        summary.diagnostics.acceptance_rate(),
        lag1 / counted.max(1) as f64
    )
}

fn c8_more_samples_help(ctx: &mut Context) -> Outcome {
    let truth = ctx.star().sim.ground_truth.clone();
    let run = ctx.bayes();
    let reps = running_mean_reports(&run.summary, &truth, &[1, 10, 100]);
    let (p1, r1) = (reps[0].1, reps[0].2);
    let (r10, p100, r100) = (reps[1].2, reps[2].1, reps[2].2);
    let pass = p100 >= p1 && r100 <= r10 && r10 <= r1 * 1.02 && run.elapsed.as_secs_f64() < 1800.0;
    Outcome::new(
        pass,
        format!(
            "PSNR {p1:.3}/{:.3}/{p100:.3} dB, RMSE {r1:.4}/{r10:.4}/{r100:.4} at N=1/10/100; {}; sampler {:.0} s (limit 1800 s)",
            reps[1].1,
            chain_diagnostics(&run.summary),
            run.elapsed.as_secs_f64()
        ),
    )
}

fn c9_band_limit(ctx: &mut Context) -> Outcome {
    let f = ctx.star();
    let cutoff = f.psf.cutoff_frequency().unwrap();
    let data = adu_to_photon_estimate(&f.sim.raw, &f.camera).unwrap();
    let rl = rl_run(&data, &f.psf, 1000, &[1000], None)
        .unwrap()
        .final_estimate;
    let mean = ctx.bayes().summary.mean.clone();
    let bayes_frac = energy_beyond_cutoff(mean.view(), PITCH, cutoff);
    let bayes_ac = ac_energy_beyond_cutoff(mean.view(), PITCH, cutoff);
    let rl_frac = energy_beyond_cutoff(rl.view(), PITCH, cutoff);
    let rl_ac = ac_energy_beyond_cutoff(rl.view(), PITCH, cutoff);
    Outcome::new(
        bayes_frac < 0.05 && rl_frac > bayes_frac,
        format!(
            "energy beyond cutoff: posterior mean {bayes_frac:.3e}, RL(1000) {rl_frac:.3e} \
             (DC excluded: {bayes_ac:.3e} vs {rl_ac:.3e})"
        ),
    )
}

fn c10_cv_tracks_brightness(ctx: &mut Context) -> Outcome {
    let summary = &ctx.bayes().summary;
    let cv = cv_map(summary).unwrap();
    let (bright, dark) = decile_means(cv.view(), summary.mean.view()).unwrap();
    Outcome::new(
        bright < dark,
        format!("mean CV brightest decile {bright:.4}, darkest decile {dark:.4}"),
    )
}

fn agreement_fraction(chunked: &PosteriorSummary, serial: &PosteriorSummary) -> f64 {
    let sd = serial.std();
    let hits = chunked
        .mean
        .values()
        .iter()
        .zip(serial.mean.values().iter())
        .zip(sd.iter())
        .filter(|((a, b), s)| (*a - *b).abs() <= 3.0 * **s)
        .count();
    hits as f64 / sd.len() as f64
}

fn c11_parallel() -> Outcome {
    let shape = (256, 256);
    let psf = default_psf();
    let truth = build_target(TargetKind::SiemensStar, shape, &psf, 150.0).unwrap();
    let camera = uniform_camera(shape, 1.0, 0.0, 0.01).unwrap();
    let sim = simulate_raw(&truth, &psf, &camera, 11).unwrap();
    let config = SamplerConfig {
        n_samples: 6,
        burn_in: 6,
        thin: 1,
        seed: 11,
        ..SamplerConfig::default()
    };
    let time = |workers: usize| {
        let t = Instant::now();
        let s = run_wavefront(&sim.raw, &psf, &camera, &config, workers).unwrap();
        (s, t.elapsed().as_secs_f64())
    };
    let (one, t1) = time(1);
    let (four, t4) = time(4);
    let identical = one == four;
    let speedup = t1 / t4;
    let serial = run_chain(
        &sim.raw,
        &psf,
        &camera,
        &SamplerConfig {
            seed: 12,
            ..config.clone()
        },
    )
    .unwrap();
    let agree = agreement_fraction(&one, &serial);
    let cpus = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    Outcome::new(
        identical && speedup >= 1.5 && agree >= 0.99,
        format!(
            "bit-identical {identical}, speedup {speedup:.2}x on {cpus} CPU(s) ({t1:.0} s vs {t4:.0} s), \
             {:.1}% of pixels within 3 serial SD; acceptance chunked {:.3}, serial {:.3}",
            100.0 * agree,
            one.diagnostics.acceptance_rate(),
            serial.diagnostics.acceptance_rate()
        ),
    )
}

fn c12_rl_monotone(ctx: &mut Context) -> Outcome {
    let f = ctx.star();
    let data = f.sim.photons.clone();
    let trace = rl_run(&data, &f.psf, 200, &[], None).unwrap();
    let ll = &trace.log_likelihood;
    let mut worst = f64::INFINITY;
    let mut drops = 0;
    for pair in ll.windows(2) {
        let step = pair[1] - pair[0];
        worst = worst.min(step);
        if step < -1e-8 {
            drops += 1;
        }
    }
    Outcome::new(
        drops == 0,
        format!("{drops} decreasing steps over 200 iterations, smallest step {worst:.3e}"),
    )
}

// ------------------------------------------------ invariants beyond 1-12

/// Pure-noise images should not gain energy beyond the optical cutoff.
fn pure_noise_spectrum() -> Outcome {
    let shape = (32, 32);
    let psf = default_psf();
    let camera = uniform_camera(shape, 1.0, 0.0, 0.01).unwrap();
    let flat = ImageGrid::filled(shape, 2.0, PITCH, Role::Object).unwrap();
    let sim = simulate_raw(&flat, &psf, &camera, 13).unwrap();
    let config = SamplerConfig {
        n_samples: 100,
        burn_in: 200,
        thin: 5,
        seed: 13,
        ..SamplerConfig::default()
    };
    let summary = run_chain(&sim.raw, &psf, &camera, &config).unwrap();
    let cutoff = psf.cutoff_frequency().unwrap();
    let frac = energy_beyond_cutoff(summary.mean.view(), PITCH, cutoff);
    let ac = ac_energy_beyond_cutoff(summary.mean.view(), PITCH, cutoff);
    Outcome::new(
        frac < 0.05,
        format!(
            "energy beyond cutoff {frac:.4} (limit 0.05), {ac:.4} without DC; acceptance {:.3}",
            summary.diagnostics.acceptance_rate()
        ),
    )
}

/// Chunked and single-chunk chains target the same posterior.
fn chunked_matches_serial() -> Outcome {
    let shape = (64, 64);
    let psf = gaussian_psf(NA, WAVELENGTH, PITCH, 5).unwrap();
    let truth = build_target(TargetKind::SiemensStar, shape, &psf, 80.0).unwrap();
    let camera = uniform_camera(shape, 2.0, 100.0, 2.0).unwrap();
    let sim = simulate_raw(&truth, &psf, &camera, 7).unwrap();
    let config = SamplerConfig {
        n_samples: 40,
        burn_in: 100,
        thin: 5,
        seed: 1,
        ..SamplerConfig::default()
    };
    let serial = run_chain(&sim.raw, &psf, &camera, &config).unwrap();
    let chunked = run_wavefront(
        &sim.raw,
        &psf,
        &camera,
        &SamplerConfig {
            seed: 2,
            chunk_side: Some(16),
            ..config
        },
        2,
    )
    .unwrap();
    let agree = agreement_fraction(&chunked, &serial);
    Outcome::new(
        agree >= 0.99,
        format!(
            "{:.1}% of pixels within 3 serial SD (limit 99%); acceptance chunked {:.3}, serial {:.3}",
            100.0 * agree,
            chunked.diagnostics.acceptance_rate(),
            serial.diagnostics.acceptance_rate()
        ),
    )
}

type Criterion = (&'static str, &'static str, fn(&mut Context) -> Outcome);

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("1", "FFT convolution matches direct summation", |_| {
            c1_convolution()
        }),
        (
            "2",
            "photon sampler matches the enumerated conditional",
            |_| c2_photon_sampler(),
        ),
        ("3", "prior is invariant to object scale", |_| {
            c3_scale_invariance()
        }),
        (
            "4",
            "incremental spectrum matches a fresh transform",
            |_| c4_incremental_spectrum(),
        ),
        ("5", "Dirichlet draws have mean alpha", |_| {
            c5_dirichlet_mean()
        }),
        (
            "6",
            "tiny chain matches the quadrature posterior mean",
            |_| c6_tiny_posterior(),
        ),
        (
            "7",
            "Richardson-Lucy peaks early then degrades",
            c7_rl_degrades,
        ),
        (
            "8",
            "posterior mean improves with more samples",
            c8_more_samples_help,
        ),
        ("9", "posterior mean stays band limited", c9_band_limit),
        (
            "10",
            "CV is lower on bright pixels",
            c10_cv_tracks_brightness,
        ),
        (
            "11",
            "parallel runs are reproducible, faster and consistent",
            |_| c11_parallel(),
        ),
        (
            "12",
            "Richardson-Lucy never lowers the likelihood",
            c12_rl_monotone,
        ),
        (
            "noise",
            "pure-noise posterior mean stays band limited",
            |_| pure_noise_spectrum(),
        ),
        ("chunks", "chunked and serial posteriors agree", |_| {
            chunked_matches_serial()
        }),
    ];
    let wanted: BTreeSet<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut ctx = Context::default();
    let mut failed = Vec::new();
    let mut ran = 0;
    for (id, name, run) in &criteria {
        if !wanted.is_empty() && !wanted.contains(*id) {
            continue;
        }
        let start = Instant::now();
        let outcome = run(&mut ctx);
        let tag = if outcome.pass { "PASS" } else { "FAIL" };
        println!(
            "[{tag}] {id:>6} {name}: {} [{:.1} s]",
            outcome.detail,
            start.elapsed().as_secs_f64()
        );
        ran += 1;
        if !outcome.pass {
            failed.push(*id);
        }
    }
    println!(
        "acceptance: {} of {ran} passed; failed: {failed:?}",
        ran - failed.len()
    );
    if !failed.is_empty() && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
