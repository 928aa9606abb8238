//! Bounded Nelder–Mead simplex search.

/// Termination settings for [`nelder_mead`].
#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions {
    pub max_evaluations: usize,
    /// Stop once the simplex spread in function value falls below this.
    pub f_tolerance: f64,
    /// ...and its spread in parameters below this.
    pub x_tolerance: f64,
    /// Relative size of the initial simplex along each axis.
    pub initial_step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_evaluations: 20_000,
            f_tolerance: 1e-16,
            x_tolerance: 1e-12,
            initial_step: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
}

/// Minimises `f` inside the box `bounds` starting from `x0`.
///
/// Candidate points are clamped into the box. The search restarts from the
/// incumbent until a restart no longer improves it, which guards against
/// the simplex collapsing onto a non-stationary point.
pub fn nelder_mead<F>(f: F, x0: &[f64], bounds: &[(f64, f64)], opts: NelderMeadOptions) -> Minimum
where
    F: Fn(&[f64]) -> f64,
{
    assert_eq!(x0.len(), bounds.len());
    let clamp = |x: &mut Vec<f64>| {
        for (v, (lo, hi)) in x.iter_mut().zip(bounds) {
            *v = v.clamp(*lo, *hi);
        }
    };
    let mut start = x0.to_vec();
    clamp(&mut start);
    let mut evaluations = 0;
    let mut best = Minimum {
        value: f(&start),
        x: start,
        evaluations: 1,
    };
    for _ in 0..8 {
        let run = simplex_run(&f, &best.x, bounds, &opts, &clamp);
        evaluations += run.evaluations;
        let improved = run.value < best.value - opts.f_tolerance.max(1e-300);
        if run.value <= best.value {
            best.x = run.x;
            best.value = run.value;
        }
        if !improved || evaluations >= opts.max_evaluations {
            break;
        }
    }
    best.evaluations = evaluations;
    best
}

fn simplex_run<F, C>(
    f: &F,
    x0: &[f64],
    bounds: &[(f64, f64)],
    opts: &NelderMeadOptions,
    clamp: &C,
) -> Minimum
where
    F: Fn(&[f64]) -> f64,
    C: Fn(&mut Vec<f64>),
{
    let n = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for i in 0..n {
        let mut x = x0.to_vec();
        let span = bounds[i].1 - bounds[i].0;
        let mut step = if x[i].abs() > 1e-8 {
            opts.initial_step * x[i].abs()
        } else {
            opts.initial_step.min(0.25 * span)
        };
        if x[i] + step > bounds[i].1 {
            step = -step;
        }
        x[i] += step;
        clamp(&mut x);
        let v = f(&x);
        simplex.push((x, v));
    }
    let mut evaluations = n + 1;

    while evaluations < opts.max_evaluations {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let f_spread = simplex[n].1 - simplex[0].1;
        let x_spread = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if f_spread <= opts.f_tolerance && x_spread <= opts.x_tolerance {
            break;
        }

        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            let mut x: Vec<f64> = centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + t * (w - c))
                .collect();
            clamp(&mut x);
            x
        };

        let xr = along(-1.0);
        let fr = f(&xr);
        evaluations += 1;
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = f(&xe);
            evaluations += 1;
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[n].1 {
                let x = along(-0.5);
                let v = f(&x);
                (x, v)
            } else {
                let x = along(0.5);
                let v = f(&x);
                (x, v)
            };
            evaluations += 1;
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for (x, v) in simplex.iter_mut().skip(1) {
                    for (xi, bi) in x.iter_mut().zip(&best) {
                        *xi = bi + 0.5 * (*xi - bi);
                    }
                    *v = f(x);
                }
                evaluations += n;
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = simplex.swap_remove(0);
    Minimum {
        x,
        value,
        evaluations,
    }
}
