//! Box-constrained Nelder–Mead.
//!
//! Probes that leave the box are projected back onto it. Objective failures
//! (`None`) are treated as `+∞`, so the simplex moves away from them.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions {
    /// Stop once every vertex is within `tolerance · width` of the best one in
    /// each coordinate.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Initial step as a fraction of the box width.
    pub initial_step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 1000,
            initial_step: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub iterations: usize,
    pub converged: bool,
}

struct Counted<F> {
    f: F,
    evaluations: usize,
}

impl<F: FnMut(&[f64]) -> Option<f64>> Counted<F> {
    fn call(&mut self, x: &[f64]) -> f64 {
        self.evaluations += 1;
        match (self.f)(x) {
            Some(v) if v.is_finite() => v,
            _ => f64::INFINITY,
        }
    }
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, lo), hi) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(*lo, *hi);
    }
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x != y {
            return x < y;
        }
    }
    false
}

/// `true` when `(fa, a)` ranks before `(fb, b)`: smaller value, then smaller θ lexicographically.
pub(crate) fn better(fa: f64, a: &[f64], fb: f64, b: &[f64]) -> bool {
    fa < fb || (fa == fb && lex_less(a, b))
}

pub fn nelder_mead_box<F>(
    f: F,
    start: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: &NelderMeadOptions,
) -> Minimum
where
    F: FnMut(&[f64]) -> Option<f64>,
{
    let q = start.len();
    let mut obj = Counted { f, evaluations: 0 };
    let width: Vec<f64> = lower.iter().zip(upper).map(|(l, u)| u - l).collect();

    let mut x0 = start.to_vec();
    project(&mut x0, lower, upper);
    let mut simplex: Vec<Vec<f64>> = vec![x0.clone()];
    for a in 0..q {
        let mut v = x0.clone();
        let h = opts.initial_step * width[a];
        v[a] = if v[a] + h <= upper[a] { v[a] + h } else { v[a] - h };
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| obj.call(v)).collect();

    let mut iterations = 0;
    let mut converged = false;
    let mut order: Vec<usize> = (0..=q).collect();
    loop {
        order.sort_by(|&a, &b| {
            if better(values[a], &simplex[a], values[b], &simplex[b]) {
                std::cmp::Ordering::Less
            } else if better(values[b], &simplex[b], values[a], &simplex[a]) {
                std::cmp::Ordering::Greater
            } else {
                std::cmp::Ordering::Equal
            }
        });
        let best = order[0];
        let worst = order[q];
        let second_worst = order[q.saturating_sub(1)];

        let spread_ok = (0..q).all(|a| {
            let scale = if width[a] > 0.0 { width[a] } else { 1.0 };
            simplex
                .iter()
                .all(|v| (v[a] - simplex[best][a]).abs() <= opts.tolerance * scale)
        });
        if spread_ok && values[best].is_finite() {
            converged = true;
            break;
        }
        if iterations >= opts.max_iterations {
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; q];
        for &v in &order[..q] {
            for a in 0..q {
                centroid[a] += simplex[v][a] / q as f64;
            }
        }
        let along = |coef: f64| -> Vec<f64> {
            let mut p: Vec<f64> = (0..q)
                .map(|a| centroid[a] + coef * (simplex[worst][a] - centroid[a]))
                .collect();
            project(&mut p, lower, upper);
            p
        };

        let reflected = along(-1.0);
        let f_reflected = obj.call(&reflected);
        if f_reflected < values[best] {
            let expanded = along(-2.0);
            let f_expanded = obj.call(&expanded);
            if f_expanded < f_reflected {
                simplex[worst] = expanded;
                values[worst] = f_expanded;
            } else {
                simplex[worst] = reflected;
                values[worst] = f_reflected;
            }
            continue;
        }
        if f_reflected < values[second_worst] {
            simplex[worst] = reflected;
            values[worst] = f_reflected;
            continue;
        }
        if f_reflected < values[worst] {
            let outside = along(-0.5);
            let f_outside = obj.call(&outside);
            if f_outside <= f_reflected {
                simplex[worst] = outside;
                values[worst] = f_outside;
                continue;
            }
        } else {
            let inside = along(0.5);
            let f_inside = obj.call(&inside);
            if f_inside < values[worst] {
                simplex[worst] = inside;
                values[worst] = f_inside;
                continue;
            }
        }
        // shrink towards the best vertex
        let anchor = simplex[best].clone();
        for &v in &order[1..] {
            for a in 0..q {
                simplex[v][a] = anchor[a] + 0.5 * (simplex[v][a] - anchor[a]);
            }
            values[v] = obj.call(&simplex[v]);
        }
    }

    let mut best = 0;
    for v in 1..=q {
        if better(values[v], &simplex[v], values[best], &simplex[best]) {
            best = v;
        }
    }
    Minimum {
        x: simplex[best].clone(),
        value: values[best],
        evaluations: obj.evaluations,
        iterations,
        converged,
    }
}
