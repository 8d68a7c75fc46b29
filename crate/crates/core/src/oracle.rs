//! Independent reference implementations used only to check the real code
//! paths: central finite differences, a generic dense two-phase simplex, and
//! brute-force assignment enumeration.

/// Central-difference gradient of `f` at `x` with step `h`.
pub fn central_difference(x: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let plus = f(&probe);
            probe[i] = orig - h;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|, floor)`
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| rel_err(*x, *y, floor))
        .fold(0.0, f64::max)
}

/// Result of [`param_grad_check`].
#[derive(Debug)]
pub struct GradCheck {
    /// Worst relative error per parameter name.
    pub errors: Vec<(String, f64)>,
    /// False when some perturbed evaluation produced a different signature
    /// than the unperturbed one (e.g. a transport plan changed support), in
    /// which case finite differences straddle a kink and are not comparable.
    pub stable: bool,
}

impl GradCheck {
    pub fn worst(&self) -> f64 {
        self.errors.iter().map(|e| e.1).fold(0.0, f64::max)
    }
}

/// Compares the tape gradient of `build` with central differences of step
/// `h` for every entry of `store`. Entries of `constants` are bound as
/// non-trainable leaves alongside. `build` returns the scalar loss and a
/// signature of any discrete choices made while computing it.
pub fn param_grad_check<S: PartialEq>(
    store: &crate::ParamStore,
    constants: &crate::ParamStore,
    h: f64,
    floor: f64,
    build: impl Fn(&mut crate::Graph, &crate::BoundParams) -> crate::Result<(crate::Var, S)>,
) -> crate::Result<GradCheck> {
    let bind = |g: &mut crate::Graph, s: &crate::ParamStore, trainable: bool| {
        let mut b = crate::BoundParams::bind(g, s, trainable);
        b.merge(crate::BoundParams::bind(g, constants, false));
        b
    };
    let mut g = crate::Graph::new();
    let bound = bind(&mut g, store, true);
    let (loss, signature) = build(&mut g, &bound)?;
    g.backward(loss)?;
    let stable = std::cell::Cell::new(true);
    let mut errors = Vec::new();
    for (name, t) in store.iter() {
        let analytic = g.grad(bound.get(name)?).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]);
        let numeric = central_difference(t.data(), h, |x| {
            let mut probe = store.clone();
            probe.get_mut(name).expect("present").data_mut().copy_from_slice(x);
            let mut g = crate::Graph::new();
            let bound = bind(&mut g, &probe, false);
            let (loss, sig) = build(&mut g, &bound).expect("probe build");
            if sig != signature {
                stable.set(false);
            }
            g.value(loss).item().expect("scalar loss")
        });
        errors.push((name.to_string(), max_rel_err(&analytic, &numeric, floor)));
    }
    Ok(GradCheck {
        errors,
        stable: stable.get(),
    })
}

const TOL: f64 = 1e-12;

/// Minimizes `c.x` subject to `a_ub x <= b_ub`, `a_eq x = b_eq`, `x >= 0`
/// with a dense two-phase tableau simplex under Bland's rule. Requires
/// `b_ub >= 0`. Returns `None` when infeasible.
pub fn lp_minimize(
    c: &[f64],
    a_ub: &[Vec<f64>],
    b_ub: &[f64],
    a_eq: &[Vec<f64>],
    b_eq: &[f64],
) -> Option<(f64, Vec<f64>)> {
    let n = c.len();
    let (n_ub, n_eq) = (a_ub.len(), a_eq.len());
    let rows = n_ub + n_eq;
    let cols = n + n_ub + n_eq;
    let mut t = vec![vec![0.0; cols + 1]; rows];
    let mut basis = vec![0usize; rows];
    for i in 0..n_ub {
        assert!(b_ub[i] >= 0.0);
        t[i][..n].copy_from_slice(&a_ub[i]);
        t[i][n + i] = 1.0;
        t[i][cols] = b_ub[i];
        basis[i] = n + i;
    }
    for j in 0..n_eq {
        let r = n_ub + j;
        let sign = if b_eq[j] < 0.0 { -1.0 } else { 1.0 };
        for k in 0..n {
            t[r][k] = sign * a_eq[j][k];
        }
        t[r][n + n_ub + j] = 1.0;
        t[r][cols] = sign * b_eq[j];
        basis[r] = n + n_ub + j;
    }
    let is_art = |j: usize| j >= n + n_ub;

    let phase1: Vec<f64> = (0..cols).map(|j| if is_art(j) { 1.0 } else { 0.0 }).collect();
    run_simplex(&mut t, &mut basis, &phase1, cols, |_| true);
    let infeas: f64 = (0..rows)
        .filter(|&i| is_art(basis[i]))
        .map(|i| t[i][cols])
        .sum();
    if infeas > 1e-9 {
        return None;
    }
    // drive zero-level artificials out of the basis where possible
    for i in 0..rows {
        if is_art(basis[i]) {
            if let Some(j) = (0..n + n_ub).find(|&j| t[i][j].abs() > 1e-9) {
                pivot(&mut t, &mut basis, i, j, cols);
            }
        }
    }
    let mut phase2 = vec![0.0; cols];
    phase2[..n].copy_from_slice(c);
    run_simplex(&mut t, &mut basis, &phase2, cols, |j| !is_art(j));

    let mut x = vec![0.0; n];
    for i in 0..rows {
        if basis[i] < n {
            x[basis[i]] = t[i][cols];
        }
    }
    let obj = c.iter().zip(&x).map(|(a, b)| a * b).sum();
    Some((obj, x))
}

fn run_simplex(
    t: &mut [Vec<f64>],
    basis: &mut [usize],
    cost: &[f64],
    cols: usize,
    allowed: impl Fn(usize) -> bool,
) {
    loop {
        let reduced = |j: usize, t: &[Vec<f64>], basis: &[usize]| {
            cost[j]
                - t.iter()
                    .zip(basis.iter())
                    .map(|(row, &b)| cost[b] * row[j])
                    .sum::<f64>()
        };
        let Some(enter) = (0..cols).find(|&j| {
            allowed(j) && !basis.contains(&j) && reduced(j, t, basis) < -TOL
        }) else {
            return;
        };
        let mut leave: Option<(usize, f64)> = None;
        for (i, row) in t.iter().enumerate() {
            if row[enter] > TOL {
                let ratio = row[cols] / row[enter];
                let better = match leave {
                    None => true,
                    Some((li, lr)) => {
                        ratio < lr - TOL || ((ratio - lr).abs() <= TOL && basis[i] < basis[li])
                    }
                };
                if better {
                    leave = Some((i, ratio));
                }
            }
        }
        let Some((row, _)) = leave else {
            panic!("lp oracle: unbounded");
        };
        pivot(t, basis, row, enter, cols);
    }
}

fn pivot(t: &mut [Vec<f64>], basis: &mut [usize], row: usize, col: usize, cols: usize) {
    let p = t[row][col];
    for v in t[row].iter_mut() {
        *v /= p;
    }
    let prow = t[row].clone();
    for (i, r) in t.iter_mut().enumerate() {
        if i != row {
            let f = r[col];
            if f != 0.0 {
                for j in 0..=cols {
                    r[j] -= f * prow[j];
                }
            }
        }
    }
    basis[row] = col;
}

/// Optimal value of the transportation LP (row sums <= w_a, column sums <= w_b,
/// total flow = min of the masses) via [`lp_minimize`].
pub fn transport_lp(cost: &[Vec<f64>], w_a: &[f64], w_b: &[f64]) -> (f64, Vec<Vec<f64>>) {
    let (m, n) = (w_a.len(), w_b.len());
    let c: Vec<f64> = cost.iter().flatten().copied().collect();
    let mut a_ub = Vec::new();
    let mut b_ub = Vec::new();
    for x in 0..m {
        let mut row = vec![0.0; m * n];
        row[x * n..(x + 1) * n].iter_mut().for_each(|v| *v = 1.0);
        a_ub.push(row);
        b_ub.push(w_a[x]);
    }
    for y in 0..n {
        let mut row = vec![0.0; m * n];
        for x in 0..m {
            row[x * n + y] = 1.0;
        }
        a_ub.push(row);
        b_ub.push(w_b[y]);
    }
    let total = w_a.iter().sum::<f64>().min(w_b.iter().sum::<f64>());
    let a_eq = vec![vec![1.0; m * n]];
    let (obj, x) = lp_minimize(&c, &a_ub, &b_ub, &a_eq, &[total]).expect("transport LP is feasible");
    let flow = x.chunks(n).map(<[f64]>::to_vec).collect();
    (obj, flow)
}

/// Minimum of `sum_i cost[i][perm[i]]` over all permutations.
pub fn brute_force_assignment(cost: &[Vec<f64>]) -> f64 {
    fn rec(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if row == cost.len() {
            *best = best.min(acc);
            return;
        }
        for j in 0..cost.len() {
            if !used[j] {
                used[j] = true;
                rec(cost, row + 1, used, acc + cost[row][j], best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    rec(cost, 0, &mut vec![false; cost.len()], 0.0, &mut best);
    best
}
