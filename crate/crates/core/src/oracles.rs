//! Independent reference computations used by the self-test command and
//! the test suites. Everything here is written with plain loops over
//! `f64`/`i64` and shares no code with the engine paths it checks.

use std::collections::VecDeque;

/// Row-major dense matrix view used by the references.
pub struct Mat<'a> {
    pub rows: usize,
    pub cols: usize,
    pub data: &'a [f32],
}

impl Mat<'_> {
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c] as f64
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Direct-summation 2-D convolution, stride 1, zero padding `pad`.
/// `x`: C×H×W (one sample), `w`: O×C×K×K.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_reference(
    x: &[f32],
    c: usize,
    h: usize,
    wd: usize,
    w: &[f32],
    b: &[f32],
    o: usize,
    k: usize,
    pad: usize,
) -> Vec<f64> {
    let ho = h + 2 * pad + 1 - k;
    let wo = wd + 2 * pad + 1 - k;
    let mut out = vec![0.0; o * ho * wo];
    for oc in 0..o {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = b[oc] as f64;
                for ic in 0..c {
                    for ki in 0..k {
                        for kj in 0..k {
                            let iy = oy as i64 + ki as i64 - pad as i64;
                            let ix = ox as i64 + kj as i64 - pad as i64;
                            if iy < 0 || ix < 0 || iy >= h as i64 || ix >= wd as i64 {
                                continue;
                            }
                            let xv = x[(ic * h + iy as usize) * wd + ix as usize] as f64;
                            let wv = w[((oc * c + ic) * k + ki) * k + kj] as f64;
                            acc += xv * wv;
                        }
                    }
                }
                out[(oc * ho + oy) * wo + ox] = acc;
            }
        }
    }
    out
}

/// GRU update for one row, gates ordered (reset, update, candidate) in
/// the stacked weight matrices `wx` (in×3H) and `wh` (H×3H).
pub fn gru_reference(x: &[f32], h: &[f32], wx: &Mat, wh: &Mat, bx: &[f32], bh: &[f32]) -> Vec<f64> {
    let hw = h.len();
    let gate = |g: usize, j: usize| -> (f64, f64) {
        let col = g * hw + j;
        let mut xs = bx[col] as f64;
        for (i, &xi) in x.iter().enumerate() {
            xs += xi as f64 * wx.at(i, col);
        }
        let mut hs = bh[col] as f64;
        for (i, &hi) in h.iter().enumerate() {
            hs += hi as f64 * wh.at(i, col);
        }
        (xs, hs)
    };
    (0..hw)
        .map(|j| {
            let (rx, rh) = gate(0, j);
            let (zx, zh) = gate(1, j);
            let (nx, nh) = gate(2, j);
            let r = sigmoid(rx + rh);
            let z = sigmoid(zx + zh);
            let n = (nx + r * nh).tanh();
            (1.0 - z) * n + z * h[j] as f64
        })
        .collect()
}

/// Multi-head attention for one query row over `members` key/value input
/// rows: per-head softmax of scaled dot products, weighted value sum,
/// heads concatenated and passed through the output map.
/// Also returns the per-head weights.
#[allow(clippy::too_many_arguments)]
pub fn attention_reference(
    query_in: &[f32],
    members: &[&[f32]],
    wq: &Mat,
    wk: &Mat,
    wv: &Mat,
    out_w: &Mat,
    out_b: &[f32],
    heads: usize,
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let width = wq.cols;
    let dk = width / heads;
    let project = |row: &[f32], m: &Mat, col: usize| -> f64 {
        let mut s = 0.0;
        for (i, &v) in row.iter().enumerate() {
            s += v as f64 * m.at(i, col);
        }
        s
    };
    let mut concat = vec![0.0; width];
    let mut all_weights = Vec::new();
    for h in 0..heads {
        let mut scores = Vec::new();
        for m in members {
            let mut s = 0.0;
            for d in 0..dk {
                let col = h * dk + d;
                s += project(query_in, wq, col) * project(m, wk, col);
            }
            scores.push(s / (dk as f64).sqrt());
        }
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let mu: Vec<f64> = exps.iter().map(|e| e / total).collect();
        for d in 0..dk {
            let col = h * dk + d;
            let mut acc = 0.0;
            for (mi, m) in members.iter().enumerate() {
                acc += mu[mi] * project(m, wv, col);
            }
            concat[col] = acc;
        }
        all_weights.push(mu);
    }
    let out = (0..out_w.cols)
        .map(|j| {
            let mut s = out_b[j] as f64;
            for (i, &c) in concat.iter().enumerate() {
                s += c * out_w.at(i, j);
            }
            s
        })
        .collect();
    (out, all_weights)
}

/// `Q_a = V + (A_a − mean A)`.
pub fn dueling_reference(value: f64, advantages: &[f64]) -> Vec<f64> {
    let mean = advantages.iter().sum::<f64>() / advantages.len() as f64;
    advantages.iter().map(|a| value + a - mean).collect()
}

/// Multi-step return for transition `t`: up to `n` rewards, stopping at
/// the last transition, plus the discounted bootstrap of the state reached
/// unless that state is a true terminal.
///
/// `rewards[k]` is `Some` for states that have an outgoing transition;
/// `bootstrap[k]` is the target-network value of state `k`; `terminal[k]`
/// marks a goal-reached final state.
pub fn n_step_return_reference(
    rewards: &[Option<f32>],
    bootstrap: &[f32],
    terminal: &[bool],
    t: usize,
    n: usize,
    gamma: f64,
) -> f64 {
    let mut total = 0.0;
    let mut steps = 0;
    while steps < n {
        match rewards.get(t + steps).copied().flatten() {
            Some(r) => {
                total += gamma.powi(steps as i32) * r as f64;
                steps += 1;
            }
            None => break,
        }
    }
    let s = t + steps;
    if !terminal[s] {
        total += gamma.powi(steps as i32) * bootstrap[s] as f64;
    }
    total
}

/// Flood-fill distance from `goal` on a `size`×`size` grid
/// (`blocked[r * size + c]`), 4-connected. `None` marks unreachable cells.
pub fn flood_fill_reference(
    blocked: &[bool],
    size: usize,
    goal: (usize, usize),
) -> Vec<Option<u64>> {
    let mut dist = vec![None; size * size];
    let start = goal.0 * size + goal.1;
    if blocked[start] {
        return dist;
    }
    dist[start] = Some(0);
    let mut frontier = VecDeque::from([(goal.0 as i64, goal.1 as i64)]);
    while let Some((r, c)) = frontier.pop_front() {
        let d = dist[r as usize * size + c as usize].unwrap();
        for (dr, dc) in [(0i64, 1i64), (1, 0), (0, -1), (-1, 0)] {
            let (nr, nc) = (r + dr, c + dc);
            if nr < 0 || nc < 0 || nr >= size as i64 || nc >= size as i64 {
                continue;
            }
            let idx = nr as usize * size + nc as usize;
            if !blocked[idx] && dist[idx].is_none() {
                dist[idx] = Some(d + 1);
                frontier.push_back((nr, nc));
            }
        }
    }
    dist
}

/// Heuristic bits for one FOV cell: for (up, down, left, right), 1 when the
/// neighbouring cell is free and exactly one step closer to the goal.
pub fn heuristic_bits_reference(
    dist: &[Option<u64>],
    blocked: &[bool],
    size: usize,
    cell: (i64, i64),
) -> [u8; 4] {
    let inside = |r: i64, c: i64| r >= 0 && c >= 0 && r < size as i64 && c < size as i64;
    let mut bits = [0u8; 4];
    if !inside(cell.0, cell.1) || blocked[cell.0 as usize * size + cell.1 as usize] {
        return bits;
    }
    let Some(here) = dist[cell.0 as usize * size + cell.1 as usize] else {
        return bits;
    };
    for (k, (dr, dc)) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)]
        .into_iter()
        .enumerate()
    {
        let (nr, nc) = (cell.0 + dr, cell.1 + dc);
        if !inside(nr, nc) || blocked[nr as usize * size + nc as usize] {
            continue;
        }
        if let Some(there) = dist[nr as usize * size + nc as usize] {
            if there + 1 == here {
                bits[k] = 1;
            }
        }
    }
    bits
}

/// Joint move resolution by repeated full rescans: start from every
/// agent's proposed cell (walls and map edges already bounce agents back),
/// then keep sending agents in vertex or swap conflicts home until a scan
/// finds nothing. Returns final cells and which agents were sent home.
pub fn resolve_moves_reference(
    prev: &[(i64, i64)],
    proposed: &[(i64, i64)],
    bounced: &[bool],
) -> (Vec<(i64, i64)>, Vec<bool>) {
    let n = prev.len();
    let mut cur = proposed.to_vec();
    let mut reset = bounced.to_vec();
    loop {
        let mut hit = vec![false; n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                if cur[i] == cur[j] {
                    hit[i] = true;
                }
                if cur[i] == prev[j] && cur[j] == prev[i] && cur[i] != prev[i] {
                    hit[i] = true;
                }
            }
        }
        let mut changed = false;
        for i in 0..n {
            if hit[i] && cur[i] != prev[i] {
                cur[i] = prev[i];
                reset[i] = true;
                changed = true;
            }
        }
        if !changed {
            return (cur, reset);
        }
    }
}
