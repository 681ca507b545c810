//! Central finite-difference gradient checks.

use rand::seq::index::sample;

use fusestrata_core::seed;

use crate::backend::Val;
use crate::error::Result;
use crate::graph::Graph;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Checks at most this many coordinates per input (chosen with a
    /// seeded sample); `None` checks all of them.
    pub max_coords: Option<usize>,
    pub seed: u64,
    /// Lower bound on each error denominator, as a fraction of the largest
    /// analytic gradient entry over all inputs. Gradients that vanish
    /// identically (a conv bias feeding batch norm) leave only rounding
    /// noise on both sides, which would otherwise score as 1.
    pub scale_floor: f64,
    /// Graph mode: batch statistics and dropout when set.
    pub training: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            max_coords: None,
            seed: 0,
            scale_floor: 1e-3,
            training: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// `max_i ‖analytic − numeric‖∞ / max(‖analytic‖∞, ‖numeric‖∞, floor·G)`
    /// where `G` is the largest analytic entry over every input.
    /// over the inputs.
    pub max_rel_err: f64,
    pub per_input: Vec<f64>,
    pub coords_checked: usize,
}

/// Compares reverse-mode gradients of a scalar function with central
/// differences. `f` records the function on a fresh graph given one leaf
/// per point; it must be pure (same inputs, same value), so any dropout
/// or batch-norm state has to be recreated inside it.
pub fn check_gradients<F>(f: F, points: &[Tensor<f64>], opts: GradCheckOptions) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, &[Val<f64>]) -> Result<Val<f64>>,
{
    let eval = |pts: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new(opts.training);
        let leaves: Vec<Val<f64>> = pts.iter().map(|p| g.leaf(p.clone(), false)).collect();
        let out = f(&mut g, &leaves)?;
        Ok(g.value(&out).data[0])
    };

    let mut g = Graph::new(opts.training);
    let leaves: Vec<Val<f64>> = points.iter().map(|p| g.leaf(p.clone(), true)).collect();
    let out = f(&mut g, &leaves)?;
    g.backward(&out)?;
    let analytic: Vec<Tensor<f64>> = leaves
        .iter()
        .zip(points)
        .map(|(l, p)| g.grad(l).cloned().unwrap_or_else(|| Tensor::zeros(&p.shape)))
        .collect();
    drop(g);

    let global = analytic.iter().map(|a| a.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))).fold(0.0, f64::max);
    let floor = (opts.scale_floor * global).max(f64::MIN_POSITIVE);
    let mut per_input = Vec::with_capacity(points.len());
    let mut coords_checked = 0;
    let mut work: Vec<Tensor<f64>> = points.to_vec();
    for (i, p) in points.iter().enumerate() {
        let coords: Vec<usize> = match opts.max_coords {
            Some(m) if m < p.numel() => {
                let mut rng = seed::stream(opts.seed, "gradcheck", i as u64);
                let mut c = sample(&mut rng, p.numel(), m).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..p.numel()).collect(),
        };
        let (mut diff, mut scale) = (0.0f64, 0.0f64);
        for &j in &coords {
            let orig = p.data[j];
            work[i].data[j] = orig + opts.eps;
            let up = eval(&work)?;
            work[i].data[j] = orig - opts.eps;
            let down = eval(&work)?;
            work[i].data[j] = orig;
            let numeric = (up - down) / (2.0 * opts.eps);
            let a = analytic[i].data[j];
            diff = diff.max((a - numeric).abs());
            scale = scale.max(a.abs()).max(numeric.abs());
        }
        coords_checked += coords.len();
        per_input.push(diff / scale.max(floor));
    }
    Ok(GradCheck {
        max_rel_err: per_input.iter().copied().fold(0.0, f64::max),
        per_input,
        coords_checked,
    })
}
