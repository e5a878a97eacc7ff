//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p gcsr --test acceptance -- --nocapture` to see the
//! lines. Criterion 8 is reported but never fails the test.

mod common;

use std::time::{Duration, Instant};

use gcsr::ann::{build_index, IndexParams, SourcePatches};
use gcsr::backproject::Backprojected;
use gcsr::config::PipelineConfig;
use gcsr::metrics::{emd, Metric, MassDistribution};
use gcsr::patch::{FeaturePlanes, FeatureWeights, PatchRef};
use gcsr::pipeline::{evaluate, synthesize, Synthesis};
use gcsr::raster::{lab_to_rgb, rgb_to_lab, LAB, PixelCoord, Raster};
use gcsr::resample::{self, Interpolation};
use gcsr::seam::{build_seam_graph, min_cut, Constraint, Label, OverlapRegion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const F: usize = 2;
const SIZE: usize = 128;

struct Outcome {
    id: u32,
    name: &'static str,
    pass: bool,
    hard: bool,
    detail: String,
}

#[derive(Default)]
struct Runs {
    traces: Vec<(String, Backprojected, f64)>,
}

impl Runs {
    fn run(&mut self, label: &str, target: &Raster, sources: &[Raster], cfg: &PipelineConfig) -> (Synthesis, Duration) {
        let t0 = Instant::now();
        let out = synthesize(target, sources, cfg).expect("pipeline run");
        let elapsed = t0.elapsed();
        // Independent recomputation of the reduction constraint in LAB.
        let reduced = resample::reduce(&out.lab, cfg.factor).unwrap();
        let residual = reduced.mean_abs_diff(&rgb_to_lab(target).unwrap()).unwrap();
        self.traces.push((label.to_string(), out.backprojected.clone(), residual));
        (out, elapsed)
    }
}

fn bandpass_l(r: &Raster) -> Raster {
    let lab = if r.has_layout(&LAB) { r.clone() } else { rgb_to_lab(r).unwrap() };
    resample::band_pass(&lab.select("L").unwrap(), F as f64).unwrap()
}

/// Mean absolute band-pass difference over columns `x0..x1`.
fn region_bandpass_mae(a: &Raster, b: &Raster, x0: usize, x1: usize) -> f64 {
    let (ba, bb) = (bandpass_l(a), bandpass_l(b));
    let mut sum = 0.0;
    let mut n = 0;
    for y in 0..a.height() {
        for x in x0..x1 {
            sum += (ba.get(0, x, y) - bb.get(0, x, y)).abs() as f64;
            n += 1;
        }
    }
    sum / n as f64
}

fn composite_fixture() -> (Raster, Raster, Raster, Raster) {
    let s0 = common::stripes(SIZE, SIZE);
    let s1 = common::noise(SIZE, SIZE, 17);
    let gt = common::side_by_side(&s0, &s1);
    let target = lab_to_rgb(&resample::reduce(&rgb_to_lab(&gt).unwrap(), F).unwrap()).unwrap();
    (s0, s1, gt, target)
}

fn texture_discrimination(runs: &mut Runs) -> Outcome {
    let (s0, s1, _, target) = composite_fixture();
    let cfg = PipelineConfig::default();
    let (out, elapsed) = runs.run("two sources", &target, &[s0, s1], &cfg);
    let w = cfg.patch_size;
    let correct = out
        .report
        .patches
        .iter()
        .filter(|p| {
            let expected = if p.target.x + w / 2 <= SIZE / 2 { 0 } else { 1 };
            p.chosen.source == expected
        })
        .count();
    let frac = correct as f64 / out.report.patches.len() as f64;
    Outcome {
        id: 1,
        name: "texture discrimination",
        pass: frac >= 0.85 && elapsed.as_secs_f64() <= 60.0,
        hard: true,
        detail: format!(
            "{correct}/{} patches from the correct source ({:.1}%), {:.1} s",
            out.report.patches.len(),
            100.0 * frac,
            elapsed.as_secs_f64()
        ),
    }
}

fn missing_source(runs: &mut Runs) -> Outcome {
    let (s0, _, gt, target) = composite_fixture();
    let (out, _) = runs.run("stripes only", &target, &[s0], &PipelineConfig::default());
    // Leave out a margin of one patch around the texture boundary.
    let covered = region_bandpass_mae(&out.rgb, &gt, 0, SIZE / 2 - 4);
    let uncovered = region_bandpass_mae(&out.rgb, &gt, SIZE / 2 + 4, SIZE);
    Outcome {
        id: 2,
        name: "missing-source degradation",
        pass: uncovered >= 2.0 * covered,
        hard: true,
        detail: format!(
            "band-pass MAE uncovered {uncovered:.3} vs covered {covered:.3} (ratio {:.2})",
            uncovered / covered
        ),
    }
}

fn backprojection_constraint(runs: &Runs) -> Outcome {
    let mut worst = 0.0f64;
    let mut bad = Vec::new();
    for (label, bp, residual) in &runs.traces {
        worst = worst.max(*residual);
        let monotone = bp.trace.windows(2).all(|w| w[1] <= w[0]);
        if !(bp.converged && *residual <= 0.5 && monotone) {
            bad.push(format!(
                "{label}: converged {} residual {residual:.4} monotone {monotone}",
                bp.converged
            ));
        }
    }
    Outcome {
        id: 3,
        name: "back-projection constraint",
        pass: bad.is_empty(),
        hard: true,
        detail: if bad.is_empty() {
            format!("{} runs, worst residual {worst:.4}", runs.traces.len())
        } else {
            bad.join("; ")
        },
    }
}

fn smooth_plane(w: usize, h: usize, phase: f32) -> Raster {
    let data = (0..w * h)
        .map(|i| {
            let (x, y) = ((i % w) as f32, (i / w) as f32);
            128.0
                + 50.0 * (0.13 * x + 0.07 * y + phase).sin()
                + 40.0 * (0.05 * x - 0.11 * y + 2.0 * phase).cos()
                + 20.0 * (0.29 * x + 0.23 * y - phase).sin()
        })
        .collect();
    Raster::from_plane(w, h, "L", data).unwrap()
}

fn edge_only(r: &Raster, w: usize) -> FeaturePlanes {
    let weights = FeatureWeights {
        edge: 1.0,
        lum: 0.0,
        chroma: 0.0,
    };
    FeaturePlanes::new(r, r, None, &weights, w).unwrap()
}

fn ann_contract() -> Outcome {
    let w = 8;
    let eps = 0.5 * (w * w) as f32;
    let base = edge_only(&smooth_plane(107, 107, 0.0), w);
    let index = build_index(
        SourcePatches::dense(vec![base.clone()]).unwrap(),
        IndexParams {
            metric: Metric::L1,
            epsilon: eps,
            ..IndexParams::default()
        },
    )
    .unwrap();
    assert_eq!(index.len(), 10_000);
    let rows: Vec<Vec<f32>> = (0..100 * 100)
        .map(|i| base.feature(PatchRef::new(0, i % 100, i / 100)).unwrap().values)
        .collect();

    // Queries are indexed patches under +-2 levels of noise, so each has a
    // close match as in the pipeline. Queries from an unrelated image are
    // timed as well but not gated: with no neighbor near epsilon, no
    // axis-aligned bound prunes in 64 dimensions.
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let perturbed: Vec<Vec<f32>> = (0..1000)
        .map(|_| {
            let at = PatchRef::new(0, rng.random_range(0..100), rng.random_range(0..100));
            let mut q = base.feature(at).unwrap().values;
            for v in &mut q {
                *v += rng.random_range(-2.0..2.0);
            }
            q
        })
        .collect();
    let other = edge_only(&smooth_plane(107, 107, 0.9), w);
    let unrelated: Vec<Vec<f32>> = (0..200)
        .map(|_| {
            let at = PatchRef::new(0, rng.random_range(0..100), rng.random_range(0..100));
            other.feature(at).unwrap().values
        })
        .collect();

    let scan = |queries: &[Vec<f32>]| -> (Vec<f32>, f64) {
        let t0 = Instant::now();
        let d = queries
            .iter()
            .map(|q| {
                let mut best = f32::INFINITY;
                for r in &rows {
                    let mut d = 0.0f32;
                    for (a, b) in r.iter().zip(q) {
                        d += (a - b).abs();
                    }
                    best = best.min(d);
                }
                best
            })
            .collect();
        (d, t0.elapsed().as_secs_f64())
    };
    let tree = |queries: &[Vec<f32>]| -> (Vec<f32>, f64) {
        let t0 = Instant::now();
        let d = queries.iter().map(|q| index.nearest(q).unwrap().distance).collect();
        (d, t0.elapsed().as_secs_f64())
    };
    let within = |found: &[f32], truth: &[f32]| found.iter().zip(truth).filter(|(f, t)| **f <= **t + eps).count();

    let (truth, scan_time) = scan(&perturbed);
    let (found, tree_time) = tree(&perturbed);
    let ok = within(&found, &truth);
    let speedup = scan_time / tree_time;
    let (far_truth, far_scan) = scan(&unrelated);
    let (far_found, far_tree) = tree(&unrelated);
    let far_ok = within(&far_found, &far_truth);
    Outcome {
        id: 4,
        name: "ANN contract",
        pass: ok == perturbed.len() && far_ok == unrelated.len() && speedup >= 10.0,
        hard: true,
        detail: format!(
            "{ok}/{} within eps={eps}, speedup {speedup:.1}x (scan {scan_time:.3} s, tree {tree_time:.3} s); \
             unrelated-image queries {far_ok}/{} within eps, speedup {:.1}x (not gated)",
            perturbed.len(),
            unrelated.len(),
            far_scan / far_tree
        ),
    }
}

fn random_overlap(rng: &mut ChaCha8Rng) -> OverlapRegion {
    loop {
        let (w, h) = (rng.random_range(2..=5), rng.random_range(1..=4));
        let n = w * h;
        let cons: Vec<Constraint> = (0..n)
            .map(|_| match rng.random_range(0..4) {
                0 => Constraint::Old,
                1 => Constraint::New,
                _ => Constraint::Free,
            })
            .collect();
        let free = cons.iter().filter(|&&c| c == Constraint::Free).count();
        let has = |k| cons.contains(&k);
        if free > 12 || !has(Constraint::Old) || !has(Constraint::New) {
            continue;
        }
        let old = (0..n).map(|_| rng.random_range(0..=255) as f32).collect();
        let new = (0..n).map(|_| rng.random_range(0..=255) as f32).collect();
        return OverlapRegion::new(PixelCoord::new(0, 0), w, h, old, new, cons).unwrap();
    }
}

/// Energy of a labeling summed directly over horizontal and vertical pairs.
fn labeling_energy(ov: &OverlapRegion, labels: &[Label]) -> f64 {
    let e = |i: usize| (ov.old[i] - ov.new[i]).abs() as f64;
    let mut total = 0.0;
    for y in 0..ov.height {
        for x in 0..ov.width {
            let p = y * ov.width + x;
            if x + 1 < ov.width && labels[p] != labels[p + 1] {
                total += e(p) + e(p + 1);
            }
            if y + 1 < ov.height && labels[p] != labels[p + ov.width] {
                total += e(p) + e(p + ov.width);
            }
        }
    }
    total
}

fn graphcut_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut failures = 0;
    for _ in 0..200 {
        let ov = random_overlap(&mut rng);
        let free: Vec<usize> = (0..ov.len()).filter(|&i| ov.constraints[i] == Constraint::Free).collect();
        let base: Vec<Label> = ov
            .constraints
            .iter()
            .map(|c| if *c == Constraint::New { Label::TakeNew } else { Label::KeepOld })
            .collect();
        let mut best = f64::INFINITY;
        for bits in 0u32..(1 << free.len()) {
            let mut labels = base.clone();
            for (k, &p) in free.iter().enumerate() {
                if bits >> k & 1 == 1 {
                    labels[p] = Label::TakeNew;
                }
            }
            best = best.min(labeling_energy(&ov, &labels));
        }
        let cut = min_cut(&build_seam_graph(&ov).unwrap());
        let respects = cut.mask.labels.iter().zip(&ov.constraints).all(|(l, c)| match c {
            Constraint::Old => *l == Label::KeepOld,
            Constraint::New => *l == Label::TakeNew,
            Constraint::Free => true,
        });
        let recomputed = labeling_energy(&ov, &cut.mask.labels);
        if !(respects && cut.cost == best && cut.flow == recomputed) {
            failures += 1;
        }
    }
    Outcome {
        id: 5,
        name: "graphcut optimality",
        pass: failures == 0,
        hard: true,
        detail: format!("{} of 200 instances matched exhaustive enumeration", 200 - failures),
    }
}

/// Min-cost assignment of unit atoms by trying every permutation.
fn brute_force_transport(a: &[u32], b: &[u32], width: usize) -> f64 {
    let atoms = |m: &[u32]| -> Vec<(i64, i64)> {
        m.iter()
            .enumerate()
            .flat_map(|(i, &k)| std::iter::repeat_n(((i % width) as i64, (i / width) as i64), k as usize))
            .collect()
    };
    let (sa, sb) = (atoms(a), atoms(b));
    let mut perm: Vec<usize> = (0..sb.len()).collect();
    let mut best = i64::MAX;
    // Heap's algorithm, iterative.
    let n = perm.len();
    let mut c = vec![0; n];
    let cost = |p: &[usize]| -> i64 {
        sa.iter()
            .zip(p)
            .map(|(&(x0, y0), &j)| (x0 - sb[j].0).abs() + (y0 - sb[j].1).abs())
            .sum()
    };
    best = best.min(cost(&perm));
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(cost(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best as f64
}

fn spread_atoms(rng: &mut ChaCha8Rng, atoms: u32) -> Vec<u32> {
    let mut m = vec![0u32; 9];
    for _ in 0..atoms {
        m[rng.random_range(0..9)] += 1;
    }
    m
}

fn emd_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let atoms = rng.random_range(1..=7);
        let (a, b) = (spread_atoms(&mut rng, atoms), spread_atoms(&mut rng, atoms));
        let to_dist = |m: &[u32]| MassDistribution::new(3, m.iter().map(|&k| k as f64).collect()).unwrap();
        let got = emd(&to_dist(&a), &to_dist(&b)).unwrap();
        worst = worst.max((got - brute_force_transport(&a, &b, 3)).abs());
    }

    let w = 8;
    let spike = |x: usize, y: usize| {
        let mut v = vec![0.0f32; w * w];
        v[y * w + x] = 255.0;
        v
    };
    let origin = spike(0, 0);
    let mut last = 0.0;
    let mut monotone = true;
    let mut l1_constant = true;
    for d in 1..=14usize {
        let (x, y) = (d.min(7), d.saturating_sub(7));
        let other = spike(x, y);
        let e = emd(
            &MassDistribution::from_luminosity(w, &origin).unwrap(),
            &MassDistribution::from_luminosity(w, &other).unwrap(),
        )
        .unwrap();
        monotone &= e > last;
        last = e;
        l1_constant &= Metric::L1.distance(&origin, &other) == 510.0;
    }
    Outcome {
        id: 6,
        name: "EMD oracle",
        pass: worst <= 1e-6 && monotone && l1_constant,
        hard: true,
        detail: format!("max |EMD - brute force| = {worst:.2e}, spike EMD monotone {monotone}, L1 = 510 throughout {l1_constant}"),
    }
}

fn max_diff(a: &Raster, b: &Raster) -> f32 {
    assert_eq!(a.extent(), b.extent());
    (0..a.channel_count())
        .flat_map(|c| a.plane_at(c).iter().zip(b.plane_at(c)).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f32::max)
}

fn resampler_identities() -> Outcome {
    let img = rgb_to_lab(&common::noise(40, 36, 3)).unwrap();

    let blur = resample::gaussian_blur(&img, 3.0).unwrap();
    let bp = resample::band_pass(&img, 3.0).unwrap();
    let rebuilt = bp.zip_with(&blur, |a, b| a + b).unwrap();
    let recon = max_diff(&rebuilt, &img);

    let mut ramp_err = 0.0f32;
    for factor in 2..=4 {
        let ramp = Raster::from_plane(12, 10, "L", (0..120).map(|i| 3.0 * (i % 12) as f32 - 2.0 * (i / 12) as f32 + 7.0).collect()).unwrap();
        let up = resample::enlarge(&ramp, factor, Interpolation::Bicubic).unwrap();
        // Interior: at least two low-resolution pixels from every edge.
        for y in 2 * factor..up.height() - 2 * factor {
            for x in 2 * factor..up.width() - 2 * factor {
                let sx = (2 * x + 1) as f32 / (2 * factor) as f32 - 0.5;
                let sy = (2 * y + 1) as f32 / (2 * factor) as f32 - 0.5;
                ramp_err = ramp_err.max((up.get(0, x, y) - (3.0 * sx - 2.0 * sy + 7.0)).abs());
            }
        }
    }

    let mut mirror_err = 0.0f32;
    let flips: [fn(&Raster) -> Raster; 2] = [Raster::flipped_h, Raster::flipped_v];
    for flip in flips {
        for m in Interpolation::ALL {
            for factor in 2..=4 {
                let a = resample::enlarge(&flip(&img), factor, m).unwrap();
                let b = flip(&resample::enlarge(&img, factor, m).unwrap());
                mirror_err = mirror_err.max(max_diff(&a, &b));
            }
        }
        let cropped = resample::crop_to_multiple(&img, 4).unwrap();
        for factor in [2, 4] {
            let a = resample::reduce(&flip(&cropped), factor).unwrap();
            let b = flip(&resample::reduce(&cropped, factor).unwrap());
            mirror_err = mirror_err.max(max_diff(&a, &b));
        }
        let a = resample::gaussian_blur(&flip(&img), 2.5).unwrap();
        let b = flip(&resample::gaussian_blur(&img, 2.5).unwrap());
        mirror_err = mirror_err.max(max_diff(&a, &b));
    }
    // Tolerances are a few f32 ulps at magnitude 255.
    let tol = 1e-4;
    Outcome {
        id: 7,
        name: "resampler identities",
        pass: recon <= tol && ramp_err <= 1e-3 && mirror_err <= tol,
        hard: true,
        detail: format!("band-pass+blur err {recon:.2e}, ramp err {ramp_err:.2e}, mirror err {mirror_err:.2e}"),
    }
}

fn self_reconstruction(runs: &mut Runs) -> Outcome {
    let (_, _, gt, target) = composite_fixture();
    let (out, _) = runs.run("ground truth source", &target, std::slice::from_ref(&gt), &PipelineConfig::default());
    let bicubic = lab_to_rgb(&resample::enlarge(&rgb_to_lab(&target).unwrap(), F, Interpolation::Bicubic).unwrap()).unwrap();
    let ours = evaluate(&out.rgb, &gt, F as f64).unwrap().bandpass_mae;
    let base = evaluate(&bicubic, &gt, F as f64).unwrap().bandpass_mae;
    Outcome {
        id: 8,
        name: "self-reconstruction beats bicubic (soft)",
        pass: ours < base,
        hard: false,
        detail: format!("band-pass MAE {ours:.3} vs bicubic {base:.3}"),
    }
}

fn determinism(runs: &mut Runs) -> Outcome {
    let (s0, s1, _, target) = composite_fixture();
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    let mut reports = Vec::new();
    for threads in [1, 8] {
        let cfg = PipelineConfig {
            threads,
            ..PipelineConfig::default()
        };
        let (out, _) = runs.run(&format!("threads {threads}"), &target, &[s0.clone(), s1.clone()], &cfg);
        let path = dir.path().join(format!("t{threads}.png"));
        gcsr::raster::save_image(&out.rgb, &path).unwrap();
        bytes.push(std::fs::read(&path).unwrap());
        reports.push(out.report.to_text(false).replace(&format!("threads = {threads}"), ""));
    }
    let same_png = bytes[0] == bytes[1];
    let same_report = reports[0] == reports[1];
    Outcome {
        id: 9,
        name: "determinism",
        pass: same_png && same_report,
        hard: true,
        detail: format!("PNG bytes identical {same_png}, reports identical {same_report}"),
    }
}

#[test]
fn acceptance() {
    let mut runs = Runs::default();
    let mut outcomes = vec![
        texture_discrimination(&mut runs),
        missing_source(&mut runs),
        ann_contract(),
        graphcut_optimality(),
        emd_oracle(),
        resampler_identities(),
        self_reconstruction(&mut runs),
        determinism(&mut runs),
    ];
    outcomes.push(backprojection_constraint(&runs));
    outcomes.sort_by_key(|o| o.id);
    for o in &outcomes {
        println!(
            "criterion {} [{}] {}: {}",
            o.id,
            if o.pass { "PASS" } else if o.hard { "FAIL" } else { "SOFT-FAIL" },
            o.name,
            o.detail
        );
    }
    let failed: Vec<u32> = outcomes.iter().filter(|o| o.hard && !o.pass).map(|o| o.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
