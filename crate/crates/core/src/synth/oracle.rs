//! Brute-force reference implementations used to validate the fast paths.
//!
//! Nothing here calls into `metrics`; the hit test, bucket rules and PR sweep
//! are re-derived from raw coordinates. Floating-point reductions are done in
//! the same order as the production code so results compare with `==`.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::metrics::{CellMetrics, DuplicatePolicy, MetricReport, WindowConfig};
use crate::mixture::{DisplacementPower, InverseCovariance};
use crate::scene::{AgentType, PredictionSet, Scene, Trajectory, HORIZON_STEPS};
use crate::{Error, Result};

const CHECKPOINTS: [(usize, f64); 3] = [(5, 3.0), (9, 5.0), (15, 8.0)];

struct Row<'a> {
    scene_id: &'a str,
    agent_id: &'a str,
    agent_type: AgentType,
    bucket: usize,
    probs: Vec<f64>,
    hits: Vec<[bool; 3]>,
    ade: [f64; 3],
    fde: [f64; 3],
}

fn dist(ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    libm::hypot(ax - bx, ay - by)
}

/// Heading of the gt motion into step `k` (start position for `k = 0`),
/// `fallback` if that step is shorter than 1 cm.
fn gt_direction(gt: &Trajectory, x0: f64, y0: f64, k: usize, fallback: f64) -> f64 {
    let (px, py) = if k == 0 { (x0, y0) } else { (gt.at(k - 1).x, gt.at(k - 1).y) };
    let (dx, dy) = (gt.at(k).x - px, gt.at(k).y - py);
    if libm::hypot(dx, dy) < 0.01 {
        fallback
    } else {
        libm::atan2(dy, dx)
    }
}

fn oracle_hit(mode: &Trajectory, gt: &Trajectory, x0: f64, y0: f64, h0: f64, v0: f64, c: usize, w: &WindowConfig) -> bool {
    let (k, t) = CHECKPOINTS[c];
    let s = &w.speed;
    let mut frac = (v0 - s.low_speed) / (s.high_speed - s.low_speed);
    if frac < 0.0 {
        frac = 0.0;
    }
    if frac > 1.0 {
        frac = 1.0;
    }
    let scale = s.min_scale + (1.0 - s.min_scale) * frac;
    let lat_half = scale * (w.lateral_slope * t + w.lateral_offset);
    let lon_half = 2.0 * lat_half;
    let th = gt_direction(gt, x0, y0, k, h0);
    let (dx, dy) = (mode.at(k).x - gt.at(k).x, mode.at(k).y - gt.at(k).y);
    let (cs, sn) = (libm::cos(th), libm::sin(th));
    let lon = dx * cs + dy * sn;
    let lat = -dx * sn + dy * cs;
    lon.abs() <= lon_half && lat.abs() <= lat_half
}

/// Bucket index in declaration order of `DirectionBucket`.
fn oracle_bucket(gt: &Trajectory, x0: f64, y0: f64, h0: f64) -> usize {
    let last = gt.at(HORIZON_STEPS - 1);
    let (dx, dy) = (last.x - x0, last.y - y0);
    if libm::hypot(dx, dy) < 2.0 {
        return 0;
    }
    let mut fx = libm::cos(h0);
    let mut fy = libm::sin(h0);
    for k in (0..HORIZON_STEPS).rev() {
        let (px, py) = if k == 0 { (x0, y0) } else { (gt.at(k - 1).x, gt.at(k - 1).y) };
        let (sx, sy) = (gt.at(k).x - px, gt.at(k).y - py);
        if libm::hypot(sx, sy) >= 0.01 {
            fx = sx;
            fy = sy;
            break;
        }
    }
    let (ux, uy) = (libm::cos(h0), libm::sin(h0));
    let turn = libm::atan2(ux * fy - uy * fx, ux * fx + uy * fy) * 180.0 / PI;
    let a = turn.abs();
    if a < 30.0 {
        let lateral = ux * dy - uy * dx;
        if lateral > 2.0 {
            2
        } else if lateral < -2.0 {
            3
        } else {
            1
        }
    } else if a <= 150.0 {
        if turn > 0.0 {
            4
        } else {
            5
        }
    } else if turn > 0.0 {
        6
    } else {
        7
    }
}

fn build_row<'a>(pred: &'a PredictionSet, scene: &'a Scene, w: &WindowConfig) -> Result<Row<'a>> {
    let agent = scene
        .agents()
        .iter()
        .find(|a| a.id() == pred.agent_id())
        .ok_or_else(|| Error::UnknownAgent(pred.agent_id().into()))?;
    let gt = scene
        .ground_truth()
        .get(pred.agent_id())
        .ok_or_else(|| Error::UnknownAgent(pred.agent_id().into()))?;
    let (x0, y0, h0, v0) = (agent.position().x, agent.position().y, agent.heading(), agent.speed());
    let mut probs = Vec::new();
    let mut hits = Vec::new();
    for m in pred.modes() {
        probs.push(m.prob());
        let mut hh = [false; 3];
        for (c, slot) in hh.iter_mut().enumerate() {
            *slot = oracle_hit(m.mean(), gt, x0, y0, h0, v0, c, w);
        }
        hits.push(hh);
    }
    let mut ade = [0.0; 3];
    let mut fde = [0.0; 3];
    for (c, &(k, _)) in CHECKPOINTS.iter().enumerate() {
        let mut best_ade = f64::INFINITY;
        let mut best_fde = f64::INFINITY;
        for m in pred.modes() {
            let mut s = 0.0;
            for j in 0..=k {
                s += dist(m.mean().at(j).x, m.mean().at(j).y, gt.at(j).x, gt.at(j).y);
            }
            let a = s / (k + 1) as f64;
            if a < best_ade {
                best_ade = a;
            }
            let f = dist(m.mean().at(k).x, m.mean().at(k).y, gt.at(k).x, gt.at(k).y);
            if f < best_fde {
                best_fde = f;
            }
        }
        ade[c] = best_ade;
        fde[c] = best_fde;
    }
    Ok(Row {
        scene_id: scene.scene_id(),
        agent_id: pred.agent_id(),
        agent_type: agent.agent_type(),
        bucket: oracle_bucket(gt, x0, y0, h0),
        probs,
        hits,
        ade,
        fde,
    })
}

/// `true` when pooled item `a` is visited before item `b`.
fn before(rows: &[&Row<'_>], a: (usize, usize), b: (usize, usize)) -> bool {
    let (pa, pb) = (rows[a.0].probs[a.1], rows[b.0].probs[b.1]);
    if pa != pb {
        return pa > pb;
    }
    let ka = (rows[a.0].scene_id, rows[a.0].agent_id);
    let kb = (rows[b.0].scene_id, rows[b.0].agent_id);
    if ka != kb {
        return ka < kb;
    }
    a.1 < b.1
}

/// Area under the PR curve by explicit enumeration: every pooled mode is
/// ranked by counting the modes ahead of it, and precision/recall at each
/// rank are recounted from scratch.
fn oracle_ap(rows: &[&Row<'_>], c: usize, policy: DuplicatePolicy) -> f64 {
    let items: Vec<(usize, usize)> = rows
        .iter()
        .enumerate()
        .flat_map(|(r, row)| (0..row.probs.len()).map(move |m| (r, m)))
        .collect();
    let n = items.len();
    let mut by_rank = alloc::vec![(0usize, 0usize); n];
    for &it in &items {
        let rank = items.iter().filter(|&&o| o != it && before(rows, o, it)).count();
        by_rank[rank] = it;
    }
    // Classification of the item at each rank: Some(true) TP, Some(false) FP, None skipped.
    let class = |r: usize| -> Option<bool> {
        let (row, m) = by_rank[r];
        let hit = rows[row].hits[m][c];
        let earlier_hit = (0..r).any(|q| by_rank[q].0 == row && rows[row].hits[by_rank[q].1][c]);
        match (hit, earlier_hit) {
            (true, false) => Some(true),
            (true, true) if policy == DuplicatePolicy::Ignore => None,
            _ => Some(false),
        }
    };
    let total = rows.len() as f64;
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for r in 0..n {
        if class(r).is_none() {
            continue;
        }
        let (mut tp, mut seen) = (0usize, 0usize);
        for q in 0..=r {
            match class(q) {
                Some(true) => {
                    tp += 1;
                    seen += 1;
                }
                Some(false) => seen += 1,
                None => {}
            }
        }
        let recall = tp as f64 / total;
        let precision = tp as f64 / seen as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    ap
}

/// Independent evaluation of the full marginal metric report.
pub fn oracle_map(dataset: &[(&PredictionSet, &Scene)], window: &WindowConfig, policy: DuplicatePolicy) -> Result<MetricReport> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rows = Vec::new();
    for (p, s) in dataset {
        rows.push(build_row(p, s, window)?);
    }
    // Selection sort by (scene_id, agent_id), stable on equal keys.
    let mut sorted: Vec<&Row<'_>> = Vec::new();
    let mut used = alloc::vec![false; rows.len()];
    for _ in 0..rows.len() {
        let mut best: Option<usize> = None;
        for (i, r) in rows.iter().enumerate() {
            if used[i] {
                continue;
            }
            let better = match best {
                None => true,
                Some(b) => (r.scene_id, r.agent_id) < (rows[b].scene_id, rows[b].agent_id),
            };
            if better {
                best = Some(i);
            }
        }
        let b = best.expect("unused row remains");
        used[b] = true;
        sorted.push(&rows[b]);
    }

    let mut cells = [[None; 3]; 3];
    for (ti, t) in AgentType::ALL.iter().enumerate() {
        let of_type: Vec<&Row<'_>> = sorted.iter().copied().filter(|r| r.agent_type == *t).collect();
        if of_type.is_empty() {
            continue;
        }
        let n = of_type.len() as f64;
        for c in 0..3 {
            let mut bucket_ap = [None; 8];
            for (b, slot) in bucket_ap.iter_mut().enumerate() {
                let group: Vec<&Row<'_>> = of_type.iter().copied().filter(|r| r.bucket == b).collect();
                if !group.is_empty() {
                    *slot = Some(oracle_ap(&group, c, policy));
                }
            }
            let mut sum = 0.0;
            let mut cnt = 0usize;
            for ap in bucket_ap.iter().flatten() {
                sum += ap;
                cnt += 1;
            }
            let mut ade = 0.0;
            let mut fde = 0.0;
            let mut misses = 0usize;
            for r in &of_type {
                ade += r.ade[c];
                fde += r.fde[c];
                if !r.hits.iter().any(|h| h[c]) {
                    misses += 1;
                }
            }
            cells[ti][c] = Some(CellMetrics {
                count: of_type.len(),
                min_ade: ade / n,
                min_fde: fde / n,
                miss_rate: misses as f64 / n,
                map: sum / cnt as f64,
                bucket_ap,
            });
        }
    }
    let grand = |pick: fn(&CellMetrics) -> f64| -> f64 {
        let mut total = 0.0;
        let mut types = 0usize;
        for row in &cells {
            if let Some(first) = &row[0] {
                let mut s = pick(first);
                for cell in row[1..].iter().flatten() {
                    s += pick(cell);
                }
                total += s / 3.0;
                types += 1;
            }
        }
        total / types as f64
    };
    Ok(MetricReport {
        map: grand(|c| c.map),
        min_ade: grand(|c| c.min_ade),
        min_fde: grand(|c| c.min_fde),
        miss_rate: grand(|c| c.miss_rate),
        cells,
    })
}

/// Adaptive Simpson on `[a, b]` with absolute tolerance `tol`.
fn simpson(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let (fa, fb) = (f(a), f(b));
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_rec(f, a, b, fa, fm, fb, whole, tol, 48)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let diff = left + right - whole;
    if depth == 0 || diff.abs() <= 15.0 * tol {
        return left + right + diff / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// `∬ exp(-[xᵀ Λ x]^{r/2} / 2) dx dy` by nested adaptive Simpson quadrature
/// over a box outside which the integrand is below `e^{-60}`.
pub fn oracle_density_norm(r: DisplacementPower, lambda: &InverseCovariance) -> f64 {
    let m = lambda.matrix();
    let rv = r.get();
    // Smallest eigenvalue bounds the extent of the level set q = (120)^{2/r}.
    let mean = 0.5 * (m.xx + m.yy);
    let rad = libm::hypot(0.5 * (m.xx - m.yy), m.xy);
    let lo = mean - rad;
    let q_max = libm::pow(120.0, 2.0 / rv);
    let extent = libm::sqrt(q_max / lo);
    let density = |x: f64, y: f64| -> f64 {
        let q = m.xx * x * x + 2.0 * m.xy * x * y + m.yy * y * y;
        libm::exp(-0.5 * libm::pow(q.max(0.0), 0.5 * rv))
    };
    let tol = 1e-11;
    let mut outer = |x: f64| -> f64 {
        // Conditional peak along y for this x.
        let y0 = -m.xy / m.yy * x;
        let mut inner = |y: f64| density(x, y);
        simpson(&mut inner, -extent, y0, tol) + simpson(&mut inner, y0, extent, tol)
    };
    simpson(&mut outer, -extent, 0.0, tol) + simpson(&mut outer, 0.0, extent, tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_and_laplace_like_norms() {
        let id = InverseCovariance::IDENTITY;
        let g = oracle_density_norm(DisplacementPower::GAUSSIAN, &id);
        assert!((g - 2.0 * PI).abs() < 1e-6, "{g}");
        let l = oracle_density_norm(DisplacementPower::new(1.0).unwrap(), &id);
        assert!((l - 8.0 * PI).abs() < 1e-5, "{l}");
    }

    #[test]
    fn determinant_scaling() {
        // Λ → 4Λ multiplies det by 16, so the integral by 1/4.
        let r = DisplacementPower::new(1.5).unwrap();
        let a = InverseCovariance::new(0.3, -0.4, 0.1).unwrap();
        let b = InverseCovariance { c: a.c + libm::log(4.0), ..a };
        let (ia, ib) = (oracle_density_norm(r, &a), oracle_density_norm(r, &b));
        assert!((ib / ia - 0.25).abs() < 1e-8, "{}", ib / ia);
    }
}
