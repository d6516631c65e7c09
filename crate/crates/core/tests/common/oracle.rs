//! Brute-force reference for small dispatch problems: tap enumeration plus
//! a setpoint grid refined by repeated zooming around the incumbent.

use rand::Rng;
use voltvar_core::optimizer::CvvcProblem;

const COARSE: usize = 201;
const FINE: usize = 41;
const LEVELS: usize = 14;

pub fn random_problem<R: Rng>(rng: &mut R) -> CvvcProblem {
    let k = rng.gen_range(1..=2);
    let r = rng.gen_range(0..=2);
    let n = rng.gen_range(2..=5);
    let v0: Vec<f64> = (0..n).map(|_| rng.gen_range(0.955..1.065)).collect();
    let dq: Vec<Vec<f64>> = (0..n).map(|_| (0..k).map(|_| rng.gen_range(5e-6..6e-5)).collect()).collect();
    let dvr: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..r)
                .map(|_| if rng.gen_bool(0.7) { rng.gen_range(0.004..0.0065) } else { 0.0 })
                .collect()
        })
        .collect();
    let cap: Vec<f64> = (0..k).map(|_| rng.gen_range(100.0..900.0)).collect();
    let taps: Vec<i32> = (0..r).map(|_| rng.gen_range(-3..=3)).collect();
    CvvcProblem {
        node_names: Vec::new(),
        v0,
        dq,
        dvr,
        q_now: (0..k).map(|i| rng.gen_range(-0.5..0.5) * cap[i]).collect(),
        q_min: cap.iter().map(|c| -c).collect(),
        q_max: cap,
        taps,
        tap_min: vec![-16; r],
        tap_max: vec![16; r],
        tap_groups: Vec::new(),
        max_tap_change: 2,
        v_min: 0.975,
        v_max: 1.04,
        tap_cost: rng.gen_range(0.05..0.3),
        q_cost: rng.gen_range(2e-4..2e-3),
        alpha: 1.0,
        beta: 1e4,
    }
}

fn tap_windows(p: &CvvcProblem) -> Vec<Vec<i32>> {
    let mut combos = vec![Vec::new()];
    for r in 0..p.taps.len() {
        let lo = (p.tap_min[r] - p.taps[r]).max(-p.max_tap_change);
        let hi = (p.tap_max[r] - p.taps[r]).min(p.max_tap_change);
        combos = combos
            .into_iter()
            .flat_map(|c| {
                (lo..=hi).map(move |d| {
                    let mut c = c.clone();
                    c.push(d);
                    c
                })
            })
            .collect();
    }
    combos
}

fn violation(p: &CvvcProblem, q: &[f64], dt: &[i32]) -> Vec<f64> {
    p.predict(q, dt)
        .iter()
        .map(|v| (p.v_min - v).max(v - p.v_max).max(0.0))
        .collect()
}

fn cost(p: &CvvcProblem, q: &[f64], dt: &[i32]) -> f64 {
    p.q_cost * q.iter().map(|v| v.abs()).sum::<f64>() + p.tap_cost * dt.iter().map(|d| d.abs() as f64).sum::<f64>()
}

/// Minimize `f` over the setpoint box; `None` marks an infeasible point.
fn grid_min(p: &CvvcProblem, f: &dyn Fn(&[f64]) -> Option<f64>) -> Option<(f64, Vec<f64>)> {
    let k = p.q_now.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let scan = |center: &[f64], half: &[f64], pts: usize, best: &mut Option<(f64, Vec<f64>)>| {
        let axis = |i: usize, j: usize| {
            let t = -1.0 + 2.0 * j as f64 / (pts - 1) as f64;
            (center[i] + t * half[i]).clamp(p.q_min[i], p.q_max[i])
        };
        let total = pts.pow(k as u32);
        for idx in 0..total {
            let mut q = vec![0.0; k];
            let mut rest = idx;
            for (i, qi) in q.iter_mut().enumerate() {
                *qi = axis(i, rest % pts);
                rest /= pts;
            }
            if let Some(v) = f(&q) {
                if best.as_ref().map_or(true, |(b, _)| v < *b) {
                    *best = Some((v, q));
                }
            }
        }
        // the zero point is an exact candidate the grid may straddle
        let zero = vec![0.0; k];
        if let Some(v) = f(&zero) {
            if best.as_ref().map_or(true, |(b, _)| v < *b) {
                *best = Some((v, zero));
            }
        }
    };
    let center: Vec<f64> = (0..k).map(|i| 0.5 * (p.q_min[i] + p.q_max[i])).collect();
    let mut half: Vec<f64> = (0..k).map(|i| 0.5 * (p.q_max[i] - p.q_min[i])).collect();
    scan(&center, &half, COARSE, &mut best);
    for h in half.iter_mut() {
        *h /= (COARSE - 1) as f64 / 4.0;
    }
    for _ in 0..LEVELS {
        // re-center while the incumbent moves so thin regions can be followed
        for _ in 0..200 {
            let Some((v, c)) = best.clone() else { break };
            scan(&c, &half, FINE, &mut best);
            if best.as_ref().is_some_and(|b| b.0 >= v) {
                break;
            }
        }
        for h in half.iter_mut() {
            *h /= 4.0;
        }
    }
    best
}

/// Strict optimum, `None` when no grid point is feasible.
pub fn strict(p: &CvvcProblem) -> Option<f64> {
    tap_windows(p)
        .iter()
        .filter_map(|dt| {
            grid_min(p, &|q| {
                violation(p, q, dt)
                    .iter()
                    .all(|v| *v <= 1e-12)
                    .then(|| cost(p, q, dt))
            })
            .map(|(v, _)| v)
        })
        .min_by(f64::total_cmp)
}

pub fn relaxed(p: &CvvcProblem) -> f64 {
    tap_windows(p)
        .iter()
        .filter_map(|dt| {
            grid_min(p, &|q| {
                let s: f64 = violation(p, q, dt).iter().map(|v| v * v).sum();
                Some(p.alpha * cost(p, q, dt) + p.beta * s)
            })
            .map(|(v, _)| v)
        })
        .min_by(f64::total_cmp)
        .expect("relaxed problem always has a candidate")
}

pub fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-6)
}
