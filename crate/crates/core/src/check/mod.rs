//! Randomized verification suites: analytic gradients against finite
//! differences, production routines against brute-force references, and
//! geometric invariants.

pub mod reference;

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::boxgeom::{assign_to_seeds, grid_boxes, iou, nms, scale_box, BBox, ImageBounds};
use crate::gradcore::{finite_diff_check, sigmoid, softmax_over_classes, Matrix};
use crate::inference::{eval_map, scc, ApMethod, Detection, ImageDetections, SccParams};
use crate::midn::{midn_backward, midn_forward, midn_loss, ImageRecord};
use crate::rcnn::{rcnn_loss, RcnnTargets, RegressionMode};
use crate::sce::{
    icbc_finetune_seeds, icbc_loss, mcc_loss, mine_base_seeds, IcbcSample, IcbcSampleSet,
    SampleKind,
};

/// Finite-difference step and the gradient tolerance.
pub const FD_EPSILON: f64 = 1e-5;
pub const GRADIENT_TOLERANCE: f64 = 1e-5;
/// Tolerance for real-valued oracle comparisons.
pub const ORACLE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub cases: usize,
    pub failures: usize,
    /// Largest observed error (gradient and real-valued oracle suites).
    pub max_error: f64,
    pub tolerance: f64,
    #[serde(skip)]
    pub elapsed: Duration,
    pub first_failure: Option<String>,
}

impl SuiteReport {
    fn new(name: &str, tolerance: f64) -> Self {
        SuiteReport {
            name: name.to_string(),
            cases: 0,
            failures: 0,
            max_error: 0.0,
            tolerance,
            elapsed: Duration::ZERO,
            first_failure: None,
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0 && self.cases > 0
    }

    fn record(&mut self, ok: bool, detail: impl FnOnce() -> String) {
        self.cases += 1;
        if !ok {
            self.failures += 1;
            if self.first_failure.is_none() {
                self.first_failure = Some(detail());
            }
        }
    }

    fn record_error(&mut self, err: f64, detail: impl FnOnce() -> String) {
        self.max_error = self.max_error.max(err);
        self.record(err <= self.tolerance, detail);
    }

    pub fn summary(&self) -> String {
        format!(
            "{} {}: {} cases, {} failures, max error {:.3e}, {:.2?}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.cases,
            self.failures,
            self.max_error,
            self.elapsed
        )
    }
}

fn timed(mut r: SuiteReport, start: Instant) -> SuiteReport {
    r.elapsed = start.elapsed();
    r
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn labels_with_positive(rng: &mut ChaCha8Rng, c: usize) -> Vec<bool> {
    let mut y: Vec<bool> = (0..c).map(|_| rng.random_bool(0.5)).collect();
    if !y.iter().any(|&v| v) {
        y[rng.random_range(0..c)] = true;
    }
    y
}

/// Image loss through both MIDN streams.
pub fn gradient_midn(seed: u64, instances: usize) -> SuiteReport {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = SuiteReport::new("gradient/midn", GRADIENT_TOLERANCE);
    for k in 0..instances {
        let c = rng.random_range(1..=4);
        let r = rng.random_range(1..=12);
        let labels = labels_with_positive(&mut rng, c);
        let weights = uniform(&mut rng, c, 0.2, 1.0);
        let point = uniform(&mut rng, 2 * c * r, -2.0, 2.0);
        let err = finite_diff_check(
            |p| {
                let xc = Matrix::from_vec(c, r, p[..c * r].to_vec()).expect("shape");
                let xd = Matrix::from_vec(c, r, p[c * r..].to_vec()).expect("shape");
                let s = midn_forward(&xc, &xd).expect("shape");
                let l = midn_loss(&s.x_img, &labels, &weights).expect("shape");
                let (gc, gd) = midn_backward(&s, &l.grad);
                let mut g = gc.into_data();
                g.extend(gd.into_data());
                (l.value, g)
            },
            &point,
            FD_EPSILON,
        );
        rep.record_error(err, || format!("instance {k}: C={c} R={r} error {err:.3e}"));
    }
    timed(rep, start)
}

/// Intra-class BCE through the sigmoid.
pub fn gradient_icbc(seed: u64, instances: usize) -> SuiteReport {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = SuiteReport::new("gradient/icbc", GRADIENT_TOLERANCE);
    let unit = BBox {
        x1: 0.0,
        y1: 0.0,
        x2: 1.0,
        y2: 1.0,
    };
    for k in 0..instances {
        let c = rng.random_range(1..=4);
        let u = rng.random_range(1..=12);
        let mut samples = Vec::new();
        let mut targets = Matrix::zeros(c, u);
        let mut weights = Matrix::zeros(c, u);
        for i in 0..u {
            let kind = match rng.random_range(0..3) {
                0 => SampleKind::Pos,
                1 => SampleKind::Neg,
                _ => SampleKind::Grid,
            };
            let class = rng.random_range(0..c);
            samples.push(IcbcSample {
                region: unit,
                kind,
                class,
                proposal: None,
            });
            weights[(class, i)] = if kind == SampleKind::Grid {
                1.5
            } else {
                rng.random_range(0.05..1.0)
            };
            if kind == SampleKind::Pos {
                targets[(class, i)] = 1.0;
            }
        }
        let set = IcbcSampleSet {
            samples,
            targets,
            weights,
        };
        let point = uniform(&mut rng, c * u, -3.0, 3.0);
        let err = finite_diff_check(
            |p| {
                let logits = Matrix::from_vec(c, u, p.to_vec()).expect("shape");
                let l = icbc_loss(&sigmoid(&logits), &set).expect("shape");
                (l.value, l.grad.into_data())
            },
            &point,
            FD_EPSILON,
        );
        rep.record_error(err, || format!("instance {k}: C={c} U={u} error {err:.3e}"));
    }
    timed(rep, start)
}

/// Weighted cross-entropy through the class softmax.
pub fn gradient_mcc(seed: u64, instances: usize) -> SuiteReport {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = SuiteReport::new("gradient/mcc", GRADIENT_TOLERANCE);
    for k in 0..instances {
        let c = rng.random_range(1..=4);
        let r = rng.random_range(1..=12);
        let labels: Vec<usize> = (0..r).map(|_| rng.random_range(0..=c)).collect();
        let weights = uniform(&mut rng, r, 0.05, 1.0);
        let point = uniform(&mut rng, (c + 1) * r, -3.0, 3.0);
        let err = finite_diff_check(
            |p| {
                let logits = Matrix::from_vec(c + 1, r, p.to_vec()).expect("shape");
                let l = mcc_loss(&softmax_over_classes(&logits), &labels, &weights).expect("shape");
                (l.value, l.grad.into_data())
            },
            &point,
            FD_EPSILON,
        );
        rep.record_error(err, || format!("instance {k}: C={c} R={r} error {err:.3e}"));
    }
    timed(rep, start)
}

/// Classifier cross-entropy plus smooth-L1 regression, both modes. Points
/// within 1e-3 of the smooth-L1 knot are redrawn.
pub fn gradient_rcnn(seed: u64, instances: usize) -> SuiteReport {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = SuiteReport::new("gradient/rcnn", GRADIENT_TOLERANCE);
    for k in 0..instances {
        let c = rng.random_range(1..=4);
        let r = rng.random_range(1..=12);
        let mode = if k % 2 == 0 {
            RegressionMode::ClassAgnostic
        } else {
            RegressionMode::PerClass
        };
        let outputs = mode.outputs(c);
        let labels: Vec<usize> = (0..r).map(|_| rng.random_range(0..=c)).collect();
        let targets = RcnnTargets {
            weights: uniform(&mut rng, r, 0.05, 1.0),
            regression: labels
                .iter()
                .map(|&l| (l < c).then(|| [0; 4].map(|_| rng.random_range(-1.5..1.5))))
                .collect(),
            labels,
        };
        let n_cls = (c + 1) * r;
        let point = loop {
            let p = uniform(&mut rng, n_cls + outputs * r, -3.0, 3.0);
            let deltas = &p[n_cls..];
            let near_knot = targets.regression.iter().enumerate().any(|(i, t)| {
                t.is_some_and(|t| {
                    let off = if mode == RegressionMode::PerClass {
                        4 * targets.labels[i]
                    } else {
                        0
                    };
                    (0..4).any(|j| ((deltas[(off + j) * r + i] - t[j]).abs() - 1.0).abs() < 1e-3)
                })
            });
            if !near_knot {
                break p;
            }
        };
        let err = finite_diff_check(
            |p| {
                let logits = Matrix::from_vec(c + 1, r, p[..n_cls].to_vec()).expect("shape");
                let deltas = Matrix::from_vec(outputs, r, p[n_cls..].to_vec()).expect("shape");
                let l = rcnn_loss(&softmax_over_classes(&logits), &deltas, &targets, mode)
                    .expect("shape");
                let mut g = l.cls.grad.clone().into_data();
                g.extend(l.reg.grad.data());
                (l.value(), g)
            },
            &point,
            FD_EPSILON,
        );
        rep.record_error(err, || {
            format!("instance {k}: C={c} R={r} {mode:?} error {err:.3e}")
        });
    }
    timed(rep, start)
}

pub fn gradient_suites(seed: u64, instances: usize) -> Vec<SuiteReport> {
    vec![
        gradient_midn(seed, instances),
        gradient_icbc(seed.wrapping_add(1), instances),
        gradient_mcc(seed.wrapping_add(2), instances),
        gradient_rcnn(seed.wrapping_add(3), instances),
    ]
}

/// Boxes on a coarse integer lattice so that ties and exact overlaps occur.
fn lattice_box(rng: &mut ChaCha8Rng, size: i32) -> BBox {
    let x1 = rng.random_range(0..size) as f64;
    let y1 = rng.random_range(0..size) as f64;
    let w = rng.random_range(1..=size / 2) as f64;
    let h = rng.random_range(1..=size / 2) as f64;
    BBox {
        x1,
        y1,
        x2: x1 + w,
        y2: y1 + h,
    }
}

fn lattice_boxes(rng: &mut ChaCha8Rng, n: usize) -> Vec<BBox> {
    (0..n).map(|_| lattice_box(rng, 12)).collect()
}

/// Scores from a small set so that ties are common.
fn coarse_scores(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| rng.random_range(0..8) as f64 / 8.0)
        .collect()
}

pub fn oracle_nms(seed: u64, instances: usize) -> SuiteReport {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = SuiteReport::new("oracle/nms", 0.0);
    for k in 0..instances {
        let n = rng.random_range(0..=15);
        let boxes = lattice_boxes(&mut rng, n);
        let scores = coarse_scores(&mut rng, n);
        let thr = [0.0, 0.1, 0.3, 0.5, 0.7][rng.random_range(0..5)];
        let got = nms(&boxes, &scores, thr).expect("aligned");
        let want = reference::nms(&boxes, &scores, thr);
        rep.record(got == want, || format!("instance {k}: {got:?} vs {want:?}"));
    }
    timed(rep, start)
}

pub fn oracle_assign(seed: u64, instances: usize) -> SuiteReport {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = SuiteReport::new("oracle/assign_to_seeds", ORACLE_TOLERANCE);
    for k in 0..instances {
        let n = rng.random_range(0..=15);
        let s = rng.random_range(1..=5);
        let props = lattice_boxes(&mut rng, n);
        let seeds = lattice_boxes(&mut rng, s);
        let classes: Vec<usize> = (0..s).map(|_| rng.random_range(0..4)).collect();
        let got = assign_to_seeds(&props, &seeds, &classes).expect("seeds present");
        let want = reference::assign(&props, &seeds);
        let mut err: f64 = 0.0;
        let mut same = true;
        for (g, w) in got.iter().zip(&want) {
            err = err.max((g.max_iou - w.0).abs());
            same &= g.seed_index == w.1 && g.seed_class == classes[w.1];
        }
        rep.max_error = rep.max_error.max(err);
        rep.record(same && err <= ORACLE_TOLERANCE, || {
            format!("instance {k}: mismatch")
        });
    }
    timed(rep, start)
}

pub fn oracle_mining(seed: u64, instances: usize) -> SuiteReport {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = SuiteReport::new("oracle/mine_base_seeds", ORACLE_TOLERANCE);
    for k in 0..instances {
        let c = rng.random_range(1..=4);
        let n = rng.random_range(1..=12);
        let boxes = lattice_boxes(&mut rng, n);
        let scores = Matrix::from_vec(c, n, coarse_scores(&mut rng, c * n)).expect("shape");
        let labels = labels_with_positive(&mut rng, c);
        let alpha = [0.5, 0.9, 1.0][rng.random_range(0..3)];
        let tau = [0.1, 0.3, 0.5][rng.random_range(0..3)];
        let got = mine_base_seeds(&scores, &labels, &boxes, alpha, tau).expect("shape");
        let want = reference::mine_base_seeds(&scores, &labels, &boxes, alpha, tau);
        let mut same = got.len() == want.len();
        let mut err: f64 = 0.0;
        for (g, w) in got.iter().zip(&want) {
            same &= g.proposal == w.0 && g.class == w.1 && g.bbox == boxes[w.0];
            err = err.max((g.confidence - w.2).abs());
        }
        rep.max_error = rep.max_error.max(err);
        rep.record(same && err <= ORACLE_TOLERANCE, || {
            format!("instance {k}: mismatch")
        });
    }
    timed(rep, start)
}

pub fn oracle_scc(seed: u64, instances: usize) -> SuiteReport {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = SuiteReport::new("oracle/scc", ORACLE_TOLERANCE);
    for k in 0..instances {
        let c = rng.random_range(1..=4);
        let r = rng.random_range(1..=12);
        // a spread of magnitudes around tau_midn
        let m: Vec<f64> = (0..r * c)
            .map(|_| 10f64.powf(rng.random_range(-5.0..0.0)))
            .collect();
        let m = Matrix::from_vec(r, c, m).expect("shape");
        let f =
            Matrix::from_vec(r, c + 1, uniform(&mut rng, r * (c + 1), 0.0, 1.0)).expect("shape");
        let params = SccParams {
            lambda: [0.01, 0.5, 1.0][rng.random_range(0..3)],
            tau_midn: [0.001, 0.01, 0.1][rng.random_range(0..3)],
            empty_is_noop: rng.random_bool(0.5),
        };
        let got = scc(&f, &m, &params).expect("shape");
        let want = reference::scc(&f, &m, params.lambda, params.tau_midn, params.empty_is_noop);
        let err = got
            .data()
            .iter()
            .zip(want.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        rep.record_error(err, || format!("instance {k}: error {err:.3e}"));
    }
    timed(rep, start)
}

pub fn oracle_map(seed: u64, instances: usize) -> SuiteReport {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = SuiteReport::new("oracle/eval_map", ORACLE_TOLERANCE);
    for k in 0..instances {
        let c = rng.random_range(1..=3);
        let images = rng.random_range(1..=4);
        let mut truth = Vec::new();
        let mut dets = Vec::new();
        for i in 0..images {
            let gt: Vec<(BBox, usize)> = (0..rng.random_range(0..=3))
                .map(|_| (lattice_box(&mut rng, 8), rng.random_range(0..c)))
                .collect();
            let mut labels = vec![false; c];
            gt.iter().for_each(|g| labels[g.1] = true);
            let mut list = Vec::new();
            for _ in 0..rng.random_range(0..=5) {
                // half of the detections perturb a ground-truth box
                let bbox = if !gt.is_empty() && rng.random_bool(0.5) {
                    let g = gt[rng.random_range(0..gt.len())].0;
                    let d = rng.random_range(0..=2) as f64;
                    BBox { x2: g.x2 + d, ..g }
                } else {
                    lattice_box(&mut rng, 8)
                };
                list.push(Detection {
                    bbox,
                    class: rng.random_range(0..c),
                    score: rng.random_range(0..5) as f64 / 4.0,
                });
            }
            truth.push(ImageRecord {
                id: format!("i{i}"),
                labels,
                gt,
            });
            dets.push(ImageDetections {
                image_id: format!("i{i}"),
                detections: list,
            });
        }
        let got = eval_map(&dets, &truth, c, ApMethod::ElevenPoint).expect("aligned");
        let (aps, map) = reference::eval_map(&dets, &truth, c);
        let mut err = (got.map - map).abs();
        let mut same = got.per_class_ap.len() == aps.len();
        for (g, w) in got.per_class_ap.iter().zip(&aps) {
            match (g, w) {
                (Some(a), Some(b)) => err = err.max((a - b).abs()),
                (None, None) => {}
                _ => same = false,
            }
        }
        rep.max_error = rep.max_error.max(err);
        rep.record(same && err <= ORACLE_TOLERANCE, || {
            format!("instance {k}: error {err:.3e}")
        });
    }
    timed(rep, start)
}

pub fn oracle_suites(seed: u64, instances: usize) -> Vec<SuiteReport> {
    vec![
        oracle_nms(seed, instances),
        oracle_assign(seed.wrapping_add(1), instances),
        oracle_mining(seed.wrapping_add(2), instances),
        oracle_scc(seed.wrapping_add(3), instances),
        oracle_map(seed.wrapping_add(4), instances),
    ]
}

fn real_box(rng: &mut ChaCha8Rng, extent: f64) -> BBox {
    let x1 = rng.random_range(0.0..extent * 0.8);
    let y1 = rng.random_range(0.0..extent * 0.8);
    BBox {
        x1,
        y1,
        x2: x1 + rng.random_range(0.5..extent * 0.4),
        y2: y1 + rng.random_range(0.5..extent * 0.4),
    }
}

/// Every checked property of one trial counts as a case.
pub fn geometry_suite(seed: u64, trials: usize) -> SuiteReport {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = SuiteReport::new("geometry", 0.0);
    let bounds = ImageBounds {
        width: 100.0,
        height: 100.0,
    };
    for k in 0..trials {
        let n = rng.random_range(1..=20);
        let boxes: Vec<BBox> = (0..n).map(|_| real_box(&mut rng, 100.0)).collect();
        let scores = uniform(&mut rng, n, 0.0, 1.0);
        let thr = rng.random_range(0.05..0.9);

        // kept boxes pairwise below the threshold; every dropped box is covered
        let keep = nms(&boxes, &scores, thr).expect("aligned");
        let bound = keep.iter().enumerate().all(|(a, &i)| {
            keep[a + 1..]
                .iter()
                .all(|&j| iou(&boxes[i], &boxes[j]) <= thr)
        });
        let covered = (0..n).filter(|i| !keep.contains(i)).all(|j| {
            keep.iter()
                .any(|&i| scores[i] >= scores[j] && iou(&boxes[i], &boxes[j]) > thr)
        });
        rep.record(bound && covered, || format!("trial {k}: nms bound"));

        // grid cells tile the box exactly
        let g = rng.random_range(1..=4);
        let b = boxes[0];
        let cells = grid_boxes(&b, g);
        let area: f64 = cells.iter().map(BBox::area).sum();
        let disjoint = cells.iter().enumerate().all(|(a, x)| {
            cells[a + 1..]
                .iter()
                .all(|y| x.intersection_area(y) <= 1e-9 * b.area())
        });
        let edges = cells[0].x1 == b.x1
            && cells[0].y1 == b.y1
            && cells[g * g - 1].x2 == b.x2
            && cells[g * g - 1].y2 == b.y2
            && cells.iter().all(|c| b.contains(c));
        rep.record(
            cells.len() == g * g && disjoint && edges && (area - b.area()).abs() <= 1e-9 * b.area(),
            || format!("trial {k}: grid tiling n={g}"),
        );

        // scaled boxes keep their center (before clipping) and stay on the canvas
        let theta = rng.random_range(0.0..0.9);
        let s = scale_box(&b, theta, bounds, &mut rng);
        rep.record(
            s.x1 >= 0.0 && s.y1 >= 0.0 && s.x2 <= 100.0 && s.y2 <= 100.0,
            || format!("trial {k}: scale bounds"),
        );

        // mined seeds respect the soft threshold and class-wise NMS
        let c = rng.random_range(1..=4);
        let sc = Matrix::from_vec(c, n, uniform(&mut rng, c * n, 0.0, 1.0)).expect("shape");
        let labels = labels_with_positive(&mut rng, c);
        let alpha = rng.random_range(0.5..1.0);
        let tau = rng.random_range(0.05..0.5);
        let seeds = mine_base_seeds(&sc, &labels, &boxes, alpha, tau).expect("shape");
        let ok = seeds.iter().all(|s| {
            let top = sc
                .row(s.class)
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
            labels[s.class] && s.confidence >= alpha * top
        }) && seeds.iter().enumerate().all(|(a, x)| {
            seeds.seeds[a + 1..]
                .iter()
                .all(|y| x.class != y.class || iou(&x.bbox, &y.bbox) <= tau)
        }) && labels
            .iter()
            .enumerate()
            .all(|(cl, &y)| !y || seeds.iter().any(|s| s.class == cl));
        rep.record(ok, || format!("trial {k}: seed mining"));

        // fine-tuned seeds surround a base seed of their class
        let icbc = Matrix::from_vec(c, n, uniform(&mut rng, c * n, 0.0, 1.0)).expect("shape");
        let tau_sur = rng.random_range(0.3..0.9);
        let ft = icbc_finetune_seeds(&seeds, &boxes, &icbc, tau_sur).expect("shape");
        let ok = ft.seeds[..seeds.len()] == seeds.seeds[..]
            && ft.seeds[seeds.len()..].iter().all(|f| {
                seeds
                    .iter()
                    .any(|b| b.class == f.class && iou(&b.bbox, &f.bbox) >= tau_sur)
            });
        rep.record(ok, || format!("trial {k}: fine-tune surround"));
    }
    timed(rep, start)
}

/// Everything `wsod check` runs, with the instance counts it uses.
pub fn run_all(seed: u64) -> Vec<SuiteReport> {
    let mut out = gradient_suites(seed, 200);
    out.extend(oracle_suites(seed, 2000));
    out.push(geometry_suite(seed, 2500));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_pass_small() {
        for r in gradient_suites(1, 20)
            .into_iter()
            .chain(oracle_suites(1, 100))
            .chain([geometry_suite(1, 100)])
        {
            assert!(r.passed(), "{}: {:?}", r.summary(), r.first_failure);
        }
    }
}
