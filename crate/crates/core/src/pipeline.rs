//! End-to-end synthesis: feature preparation, search, seam compositing and
//! back-projection.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::ann::{build_index, IndexParams, Match, SourcePatches};
use crate::backproject::{backproject, Backprojected};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::patch::{build_grid, FeaturePlanes, PatchGridSpec, PatchRef, Transform};
use crate::raster::{self, lab_to_rgb, rgb_to_lab, PixelCoord, Raster, LAB, RGB};
use crate::resample;
use crate::seam::{self, Constraint, Label, OverlapRegion, SeamMask};

/// The enlarged target and its band-pass plane.
#[derive(Debug, Clone)]
pub struct PreparedTarget {
    /// Target in `L,A,B` at its original size.
    pub lab: Raster,
    pub enlarged: Raster,
    pub bandpass: Raster,
}

#[derive(Debug, Clone)]
pub struct PreparedSource {
    /// Cropped full-resolution source in `L,A,B`, pixel-aligned with
    /// `reenlarged` and `bandpass`.
    pub original: Raster,
    pub reenlarged: Raster,
    pub bandpass: Raster,
    /// Extent before cropping to a multiple of the factor.
    pub uncropped: (usize, usize),
}

fn as_lab(r: &Raster) -> Result<Raster> {
    if r.has_layout(&LAB) {
        Ok(r.clone())
    } else {
        rgb_to_lab(r)
    }
}

fn bandpass_of(lab: &Raster, cfg: &PipelineConfig) -> Result<Raster> {
    let l = lab.select("L")?;
    resample::band_pass_with(&l, cfg.factor as f64, cfg.blur_sigma_ratio)?.renamed(&["BP"])
}

/// Accepts `R,G,B` or `L,A,B` input.
pub fn prepare_target(t: &Raster, cfg: &PipelineConfig) -> Result<PreparedTarget> {
    let lab = as_lab(t)?;
    let enlarged = resample::enlarge(&lab, cfg.factor, cfg.method)?;
    if enlarged.width() < cfg.patch_size || enlarged.height() < cfg.patch_size {
        return Err(Error::param(
            "target",
            format!(
                "{}x{} enlarged is smaller than one {}-pixel patch",
                t.width(),
                t.height(),
                cfg.patch_size
            ),
        ));
    }
    let bandpass = bandpass_of(&enlarged, cfg)?;
    Ok(PreparedTarget {
        lab,
        enlarged,
        bandpass,
    })
}

pub fn prepare_source(s: &Raster, cfg: &PipelineConfig) -> Result<PreparedSource> {
    let uncropped = s.extent();
    let original = as_lab(&resample::crop_to_multiple(s, cfg.factor)?)?;
    if original.width() < cfg.patch_size || original.height() < cfg.patch_size {
        return Err(Error::param(
            "source",
            format!(
                "{}x{} is smaller than one {}-pixel patch",
                uncropped.0, uncropped.1, cfg.patch_size
            ),
        ));
    }
    let reduced = resample::reduce_with(&original, cfg.factor, cfg.blur_sigma_ratio)?;
    let reenlarged = resample::enlarge(&reduced, cfg.factor, cfg.method)?;
    let bandpass = bandpass_of(&reenlarged, cfg)?;
    Ok(PreparedSource {
        original,
        reenlarged,
        bandpass,
        uncropped,
    })
}

/// The raw-luminosity feature plane: unchanged when equalization is off,
/// otherwise high-passed (or contrast-normalized when a constant is set).
pub fn equalize_for_matching(lum: &Raster, cfg: &PipelineConfig) -> Result<Raster> {
    if !cfg.equalize {
        return Ok(lum.clone());
    }
    match cfg.contrast_c {
        Some(c) => resample::contrast_normalize_with(lum, cfg.equalize_radius, c, cfg.blur_sigma_ratio),
        None => resample::band_pass_with(lum, cfg.equalize_radius, cfg.blur_sigma_ratio),
    }
}

fn feature_planes(bandpass: &Raster, lab: &Raster, cfg: &PipelineConfig) -> Result<FeaturePlanes> {
    let lum = equalize_for_matching(&lab.select("L")?, cfg)?;
    let chroma = (cfg.weights.chroma > 0.0).then_some(lab);
    FeaturePlanes::new(bandpass, &lum, chroma, &cfg.weights, cfg.patch_size)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchRecord {
    /// Top-left corner in the enlarged target.
    pub target: PixelCoord,
    pub chosen: PatchRef,
    pub search_distance: f32,
    pub overlap_distance: f64,
    pub seam_cost: f64,
}

/// Line-oriented log of one synthesis run. Equality ignores timings.
#[derive(Debug, Clone, Default)]
pub struct RunReport {
    pub config: String,
    pub patches: Vec<PatchRecord>,
    pub backproject_trace: Vec<f64>,
    pub backproject_iterations: usize,
    pub converged: bool,
    pub timings: Vec<(String, f64)>,
}

impl PartialEq for RunReport {
    fn eq(&self, other: &Self) -> bool {
        self.to_text(false) == other.to_text(false)
    }
}

impl RunReport {
    pub fn to_text(&self, include_timings: bool) -> String {
        let mut s = String::new();
        for line in self.config.lines() {
            let _ = writeln!(s, "config {line}");
        }
        for (i, p) in self.patches.iter().enumerate() {
            let _ = writeln!(
                s,
                "patch {i} at {},{} source {} origin {},{} transform {} search {} overlap {} seam {}",
                p.target.x,
                p.target.y,
                p.chosen.source,
                p.chosen.origin.x,
                p.chosen.origin.y,
                p.chosen.transform,
                p.search_distance,
                p.overlap_distance,
                p.seam_cost
            );
        }
        for (i, r) in self.backproject_trace.iter().enumerate() {
            let _ = writeln!(s, "backproject {i} residual {r}");
        }
        let _ = writeln!(
            s,
            "backproject iterations {} converged {}",
            self.backproject_iterations, self.converged
        );
        if include_timings {
            for (stage, secs) in &self.timings {
                let _ = writeln!(s, "timing {stage} {secs:.6}");
            }
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct Synthesis {
    /// Back-projected result in `L,A,B`.
    pub lab: Raster,
    pub rgb: Raster,
    /// `L,A,B` canvas before back-projection.
    pub canvas: Raster,
    pub backprojected: Backprojected,
    pub report: RunReport,
}

struct Timer(Vec<(String, f64)>, Instant);

impl Timer {
    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        self.0.push((stage.to_string(), (now - self.1).as_secs_f64()));
        self.1 = now;
    }
}

/// Full-resolution `L,A,B` pixels of `p` in transformed order.
fn source_patch(sources: &[PreparedSource], p: PatchRef, w: usize) -> Raster {
    let src = &sources[p.source as usize].original;
    let mut out = Raster::new(w, w, &LAB).expect("valid patch extent");
    for c in 0..3 {
        for y in 0..w {
            for x in 0..w {
                let (sx, sy) = p.transform.source_of(x, y, w);
                out.set(c, x, y, src.get(c, p.origin.x + sx, p.origin.y + sy));
            }
        }
    }
    out
}

fn overlap_region(canvas: &Raster, written: &[bool], patch: &Raster, at: PixelCoord) -> OverlapRegion {
    let w = patch.width();
    let (cw, ch) = canvas.extent();
    let old: Vec<f32> = (0..w * w).map(|i| canvas.get(0, at.x + i % w, at.y + i / w)).collect();
    let new = patch.plane_at(0).to_vec();
    let written_at = |x: isize, y: isize| {
        x >= 0 && y >= 0 && (x as usize) < cw && (y as usize) < ch && written[y as usize * cw + x as usize]
    };
    let constraints = (0..w * w)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            let (gx, gy) = ((at.x + x) as isize, (at.y + y) as isize);
            if !written_at(gx, gy) {
                return Constraint::New;
            }
            let outside_written = (x == 0 && written_at(gx - 1, gy))
                || (x + 1 == w && written_at(gx + 1, gy))
                || (y == 0 && written_at(gx, gy - 1))
                || (y + 1 == w && written_at(gx, gy + 1));
            if outside_written {
                Constraint::Old
            } else {
                Constraint::Free
            }
        })
        .collect();
    OverlapRegion::new(at, w, w, old, new, constraints).expect("consistent overlap buffers")
}

fn overlap_l1(canvas: &Raster, written: &[bool], patch: &Raster, at: PixelCoord) -> f64 {
    let w = patch.width();
    let cw = canvas.width();
    let mut sum = 0.0f64;
    for y in 0..w {
        for x in 0..w {
            let (gx, gy) = (at.x + x, at.y + y);
            if written[gy * cw + gx] {
                sum += (patch.get(0, x, y) - canvas.get(0, gx, gy)).abs() as f64;
            }
        }
    }
    sum
}

fn to_png_gray(r: &Raster, offset: f32) -> Raster {
    r.map(|v| v + offset)
}

fn dump(dir: &Path, target: &PreparedTarget, sources: &[PreparedSource]) -> Result<()> {
    std::fs::create_dir_all(dir.join("seams")).map_err(|e| Error::Unwritable {
        path: dir.to_path_buf(),
        detail: e.to_string(),
    })?;
    raster::save_image(&lab_to_rgb(&target.enlarged)?, dir.join("enlarged_target.png"))?;
    raster::save_image(
        &to_png_gray(&target.bandpass, raster::LAB_NEUTRAL),
        dir.join("target_bandpass.png"),
    )?;
    for (i, s) in sources.iter().enumerate() {
        raster::save_image(
            &to_png_gray(&s.bandpass, raster::LAB_NEUTRAL),
            dir.join(format!("source{i}_bandpass.png")),
        )?;
    }
    Ok(())
}

/// Runs the whole reconstruction on an `R,G,B` (or `L,A,B`) target.
pub fn synthesize(t: &Raster, sources: &[Raster], cfg: &PipelineConfig) -> Result<Synthesis> {
    cfg.validate()?;
    if sources.is_empty() {
        return Err(Error::param("source", "at least one source image is required"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::param("threads", e.to_string()))?;
    pool.install(|| run(t, sources, cfg))
}

fn run(t: &Raster, sources: &[Raster], cfg: &PipelineConfig) -> Result<Synthesis> {
    let mut timer = Timer(Vec::new(), Instant::now());
    let w = cfg.patch_size;
    let target = prepare_target(t, cfg)?;
    let prepared: Vec<PreparedSource> = sources
        .par_iter()
        .map(|s| prepare_source(s, cfg))
        .collect::<Result<_>>()?;
    if let Some(dir) = &cfg.dump_intermediates {
        dump(dir, &target, &prepared)?;
    }
    timer.lap("prepare");

    let planes = prepared
        .iter()
        .map(|s| feature_planes(&s.bandpass, &s.reenlarged, cfg))
        .collect::<Result<Vec<_>>>()?;
    let index = build_index(
        SourcePatches::dense(planes)?,
        IndexParams {
            metric: cfg.metric,
            epsilon: cfg.epsilon_value(),
            ..IndexParams::default()
        },
    )?;
    let target_planes = feature_planes(&target.bandpass, &target.enlarged, cfg)?;
    let (ew, eh) = target.enlarged.extent();
    let grid = build_grid(&PatchGridSpec::new(w, cfg.overlap, ew, eh)?);
    timer.lap("index");

    let k = cfg.k.min(index.len() * cfg.transforms.len());
    let candidates: Vec<Vec<Match>> = grid
        .par_iter()
        .map(|&at| {
            let mut q = vec![0.0; target_planes.dim()];
            target_planes.write_feature(at, Transform::Identity, &mut q);
            index.k_nearest_with_transforms(&q, k, &cfg.transforms)
        })
        .collect::<Result<_>>()?;
    timer.lap("search");

    let mut canvas = target.enlarged.clone();
    let mut written = vec![false; ew * eh];
    let mut records = Vec::with_capacity(grid.len());
    for (i, (&at, cands)) in grid.iter().zip(&candidates).enumerate() {
        let mut best: Option<(f64, &Match, Raster, f64)> = None;
        for m in cands {
            let patch = source_patch(&prepared, m.patch, w);
            let overlap = if cfg.smooth_weight > 0.0 || cands.len() > 1 {
                overlap_l1(&canvas, &written, &patch, at)
            } else {
                0.0
            };
            let score = m.distance as f64 + cfg.smooth_weight * overlap;
            if best.as_ref().is_none_or(|b| score < b.0) {
                best = Some((score, m, patch, overlap));
            }
        }
        let (_, m, patch, overlap) = best.expect("k >= 1 candidates per query");
        let ov = overlap_region(&canvas, &written, &patch, at);
        let (mask, cost) = if ov.count(Constraint::Old) == 0 {
            (SeamMask::uniform(w, w, Label::TakeNew), 0.0)
        } else if ov.count(Constraint::New) == 0 {
            (SeamMask::uniform(w, w, Label::KeepOld), 0.0)
        } else {
            let cut = seam::min_cut(&seam::build_seam_graph(&ov)?);
            (cut.mask, cut.cost)
        };
        seam::composite(&mut canvas, &patch, at, &mask)?;
        for y in 0..w {
            for x in 0..w {
                if mask.labels[y * w + x] == Label::TakeNew {
                    written[(at.y + y) * ew + at.x + x] = true;
                }
            }
        }
        if let Some(dir) = &cfg.dump_intermediates {
            raster::save_mask(w, w, &mask.takes_new(), dir.join("seams").join(format!("patch{i:05}.png")))?;
        }
        records.push(PatchRecord {
            target: at,
            chosen: m.patch,
            search_distance: m.distance,
            overlap_distance: overlap,
            seam_cost: cost,
        });
    }
    timer.lap("composite");
    if let Some(dir) = &cfg.dump_intermediates {
        raster::save_image(&lab_to_rgb(&canvas)?, dir.join("canvas_before_backprojection.png"))?;
    }

    let bp = backproject(&canvas, &target.lab, cfg.factor, &cfg.backproject)?;
    if !bp.converged {
        log::warn!(
            "back-projection stopped at residual {:.4} after {} iterations",
            bp.mean_abs,
            bp.iterations
        );
    }
    let rgb = lab_to_rgb(&bp.image)?;
    timer.lap("backproject");

    let report = RunReport {
        config: cfg.to_kv(),
        patches: records,
        backproject_trace: bp.trace.clone(),
        backproject_iterations: bp.iterations,
        converged: bp.converged,
        timings: timer.0,
    };
    Ok(Synthesis {
        lab: bp.image.clone(),
        rgb,
        canvas,
        backprojected: bp,
        report,
    })
}

/// Image comparison figures; the band-pass ones use the `L` plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    /// Infinite for identical images.
    pub psnr: f64,
    pub mae: f64,
    pub bandpass_mae: f64,
    pub bandpass_energy: (f64, f64),
}

pub fn evaluate(a: &Raster, b: &Raster, radius: f64) -> Result<Evaluation> {
    if a.extent() != b.extent() {
        return Err(Error::ExtentMismatch {
            expected: a.extent(),
            found: b.extent(),
        });
    }
    let rgb = |r: &Raster| if r.has_layout(&RGB) { Ok(r.clone()) } else { lab_to_rgb(r) };
    let (ra, rb) = (rgb(a)?, rgb(b)?);
    let mut se = 0.0f64;
    for c in 0..3 {
        for (x, y) in ra.plane_at(c).iter().zip(rb.plane_at(c)) {
            se += ((x - y) as f64).powi(2);
        }
    }
    let mse = se / (3 * ra.len()) as f64;
    let psnr = if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0f64 * 255.0 / mse).log10()
    };
    let mae = ra.mean_abs_diff(&rb)?;
    let bp = |r: &Raster| resample::band_pass(&as_lab(r)?.select("L")?, radius);
    let (ba, bb) = (bp(a)?, bp(b)?);
    Ok(Evaluation {
        psnr,
        mae,
        bandpass_mae: ba.mean_abs_diff(&bb)?,
        bandpass_energy: (ba.mean_abs(), bb.mean_abs()),
    })
}
