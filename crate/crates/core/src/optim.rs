//! Derivative-free maximisation by the Nelder–Mead simplex method.

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadOptions {
    /// Stop once the spread of objective values over the simplex falls below this.
    pub f_tol: f64,
    pub max_iter: usize,
    /// Edge length of the initial simplex along each axis.
    pub initial_step: f64,
    /// Rebuilds of the simplex around the best point after convergence.
    pub restarts: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            f_tol: 1e-8,
            max_iter: 5000,
            initial_step: 0.5,
            restarts: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

/// Maximises `f` starting from `x0`. Non-finite values are treated as `-inf`.
pub fn maximize<F>(f: F, x0: &[f64], options: &NelderMeadOptions) -> NelderMeadOutcome
where
    F: Fn(&[f64]) -> f64,
{
    let mut evaluations = 0usize;
    let mut cost = |x: &[f64]| {
        evaluations += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            -v
        }
    };

    let mut best = x0.to_vec();
    let mut best_cost = cost(&best);
    let mut iterations = 0;
    let mut converged = false;
    let mut step = options.initial_step;
    for round in 0..=options.restarts {
        let run = minimize_from(&mut cost, &best, step, options.f_tol, options.max_iter - iterations.min(options.max_iter));
        iterations += run.iterations;
        let improved = best_cost - run.cost;
        if run.cost <= best_cost {
            best = run.x;
            best_cost = run.cost;
        }
        converged = run.converged;
        if !converged || iterations >= options.max_iter {
            break;
        }
        if round > 0 && !(improved > options.f_tol) {
            break;
        }
        step *= 0.2;
    }
    NelderMeadOutcome {
        x: best,
        value: -best_cost,
        iterations,
        evaluations,
        converged: converged && best_cost.is_finite(),
    }
}

struct Run {
    x: Vec<f64>,
    cost: f64,
    iterations: usize,
    converged: bool,
}

fn minimize_from<C>(cost: &mut C, x0: &[f64], step: f64, f_tol: f64, max_iter: usize) -> Run
where
    C: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += step;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| cost(v)).collect();
    let mut order: Vec<usize> = (0..=n).collect();

    let mut iterations = 0;
    let mut converged = false;
    let mut centroid = vec![0.0; n];
    while iterations < max_iter {
        // stable sort keeps tie handling independent of evaluation order
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let (lo, hi) = (order[0], order[n]);
        let spread = values[hi] - values[lo];
        if values[lo].is_finite() && spread < f_tol {
            converged = true;
            break;
        }
        iterations += 1;

        centroid.iter_mut().for_each(|c| *c = 0.0);
        for &i in &order[..n] {
            for (c, x) in centroid.iter_mut().zip(&simplex[i]) {
                *c += x / n as f64;
            }
        }
        let towards = |coef: f64, from: &[f64]| -> Vec<f64> {
            centroid.iter().zip(from).map(|(c, x)| c + coef * (x - c)).collect()
        };

        let worst = simplex[hi].clone();
        let reflected = towards(-REFLECT, &worst);
        let f_r = cost(&reflected);
        let second_worst = values[order[n - 1]];

        if f_r < values[lo] {
            let expanded = towards(-REFLECT * EXPAND, &worst);
            let f_e = cost(&expanded);
            if f_e < f_r {
                simplex[hi] = expanded;
                values[hi] = f_e;
            } else {
                simplex[hi] = reflected;
                values[hi] = f_r;
            }
            continue;
        }
        if f_r < second_worst {
            simplex[hi] = reflected;
            values[hi] = f_r;
            continue;
        }
        let (candidate, f_c) = if f_r < values[hi] {
            let outside = towards(-REFLECT * CONTRACT, &worst);
            let f = cost(&outside);
            (outside, if f <= f_r { f } else { f64::INFINITY })
        } else {
            let inside = towards(CONTRACT, &worst);
            let f = cost(&inside);
            (inside, if f < values[hi] { f } else { f64::INFINITY })
        };
        if f_c.is_finite() {
            simplex[hi] = candidate;
            values[hi] = f_c;
            continue;
        }
        let best = simplex[lo].clone();
        for &i in &order[1..] {
            for (x, b) in simplex[i].iter_mut().zip(&best) {
                *x = b + SHRINK * (*x - b);
            }
            values[i] = cost(&simplex[i]);
        }
    }
    let lo = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).expect("nonempty simplex");
    Run {
        x: simplex[lo].clone(),
        cost: values[lo],
        iterations,
        converged,
    }
}
