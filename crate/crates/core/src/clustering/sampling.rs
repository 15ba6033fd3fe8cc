use rand::seq::index;
use rand::Rng;

use super::{ClusterConfig, ImportanceMap, Sampler};
use crate::error::{Error, Result};
use crate::rng::{substream, HgRng};

const SAMPLING_STREAM: u64 = 0x5A4D;

/// Draws `n` distinct seed pixels using the configured strategy and the
/// generator derived from `cfg.seed`. Returned indices are sorted.
pub fn sample_centers(imp: &ImportanceMap, n: usize, cfg: &ClusterConfig) -> Result<Vec<usize>> {
    let mut rng: HgRng = substream(cfg.seed, SAMPLING_STREAM);
    sample_centers_with(imp, n, cfg, &mut rng)
}

/// As [`sample_centers`], drawing from a caller-supplied generator.
pub fn sample_centers_with<R: Rng + ?Sized>(
    imp: &ImportanceMap,
    n: usize,
    cfg: &ClusterConfig,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let total = imp.values().len();
    if n == 0 {
        return Err(Error::invalid("cannot sample zero centers"));
    }
    if n > total {
        return Err(Error::invalid(format!(
            "cannot sample {n} distinct centers from {total} pixels"
        )));
    }
    let mut seeds = match cfg.sampler {
        Sampler::UniformRandom => index::sample(rng, total, n).into_vec(),
        Sampler::Importance => weighted_without_replacement(imp.values(), n, rng),
        Sampler::TopkRandom => topk_random(imp.values(), n, cfg, rng),
    };
    seeds.sort_unstable();
    Ok(seeds)
}

/// Sequential sampling without replacement with probability proportional to
/// weight (Efraimidis–Spirakis keys). Zero-weight pixels are used only when
/// fewer than `n` pixels carry weight, and then uniformly.
fn weighted_without_replacement<R: Rng + ?Sized>(
    weights: &[f64],
    n: usize,
    rng: &mut R,
) -> Vec<usize> {
    let mut keyed: Vec<(f64, usize)> = weights
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 0.0)
        .map(|(i, &w)| {
            let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
            (u.ln() / w, i)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut chosen: Vec<usize> = keyed.iter().take(n).map(|&(_, i)| i).collect();
    if chosen.len() < n {
        let zeros: Vec<usize> = weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| w <= 0.0)
            .map(|(i, _)| i)
            .collect();
        let fill = index::sample(rng, zeros.len(), n - chosen.len());
        chosen.extend(fill.iter().map(|k| zeros[k]));
    }
    chosen
}

/// Draw `κ·n` uniform candidates, keep the `⌈β·n⌉` most important, fill the
/// rest uniformly from the pixels not yet chosen.
fn topk_random<R: Rng + ?Sized>(
    weights: &[f64],
    n: usize,
    cfg: &ClusterConfig,
    rng: &mut R,
) -> Vec<usize> {
    let total = weights.len();
    let pool = (cfg.oversample * n).min(total);
    let mut candidates = index::sample(rng, total, pool).into_vec();
    // Stable: equal importance keeps draw order, which is already uniform.
    candidates.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]));
    let top = ((cfg.topk_fraction * n as f64).ceil() as usize).min(n);
    let mut chosen: Vec<usize> = candidates[..top.min(pool)].to_vec();
    let mut taken = vec![false; total];
    for &c in &chosen {
        taken[c] = true;
    }
    let rest: Vec<usize> = (0..total).filter(|&p| !taken[p]).collect();
    let fill = index::sample(rng, rest.len(), n - chosen.len());
    chosen.extend(fill.iter().map(|k| rest[k]));
    chosen
}
