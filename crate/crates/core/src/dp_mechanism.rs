//! Laplace perturbation of branch susceptances and of their per-level means.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::MechanismError;
use crate::net_model::{NetworkCase, VoltageLevel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    pub epsilon: f64,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
}

impl Default for PrivacyParams {
    fn default() -> Self {
        Self {
            epsilon: 1.0,
            alpha: 0.01,
            beta: 0.5,
            lambda: 30.0,
        }
    }
}

impl PrivacyParams {
    pub fn validate(&self) -> Result<(), MechanismError> {
        let positive = [
            ("epsilon", self.epsilon),
            ("alpha", self.alpha),
            ("beta", self.beta),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(MechanismError::InvalidParameter {
                    name,
                    value,
                    rule: "must be positive",
                });
            }
        }
        if !(self.lambda > 1.0 && self.lambda.is_finite()) {
            return Err(MechanismError::InvalidParameter {
                name: "lambda",
                value: self.lambda,
                rule: "must exceed 1",
            });
        }
        Ok(())
    }

    /// Scale of the per-branch draws, `3α/ε`.
    pub fn branch_scale(&self) -> f64 {
        3.0 * self.alpha / self.epsilon
    }

    /// Scale of the draw added to a mean over `n` branches, `3α/(n·ε)`.
    pub fn level_scale(&self, n: usize) -> f64 {
        3.0 * self.alpha / (n as f64 * self.epsilon)
    }
}

/// Which quantity a draw perturbs. Each (owner, quantity) pair has its own
/// random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Conductance,
    Susceptance,
    ShuntSusceptance,
}

impl Quantity {
    fn code(self) -> u64 {
        match self {
            Quantity::Conductance => 0,
            Quantity::Susceptance => 1,
            Quantity::ShuntSusceptance => 2,
        }
    }
}

/// Identifies one independent noise stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamKey {
    Branch {
        id: usize,
        quantity: Quantity,
    },
    /// Level identified by its nominal voltage in kV.
    Level {
        kv_bits: u64,
        quantity: Quantity,
    },
}

impl StreamKey {
    pub fn level(kv: f64, quantity: Quantity) -> Self {
        StreamKey::Level {
            kv_bits: kv.to_bits(),
            quantity,
        }
    }

    /// ChaCha stream number; branch and level streams occupy disjoint halves.
    pub fn stream_id(self) -> u64 {
        match self {
            StreamKey::Branch { id, quantity } => ((id as u64) << 2) | quantity.code(),
            StreamKey::Level { kv_bits, quantity } => {
                let milli_kv = (f64::from_bits(kv_bits) * 1000.0).round() as u64;
                (1 << 63) | (milli_kv << 2) | quantity.code()
            }
        }
    }
}

/// Inverse-CDF Laplace transform of a uniform `u ∈ (0, 1)`.
pub fn laplace_from_uniform(u: f64, scale: f64) -> f64 {
    let d = u - 0.5;
    if d == 0.0 {
        return 0.0;
    }
    -scale * d.signum() * (1.0 - 2.0 * d.abs()).ln()
}

/// Uniform in the open interval `(0, 1)` from 52 random bits; the result is
/// `(k + ½)/2⁵²`, exactly representable at both ends.
pub fn open_unit(bits: u64) -> f64 {
    const TWO52: f64 = (1u64 << 52) as f64;
    ((bits >> 12) as f64 + 0.5) / TWO52
}

/// One Laplace draw of scale `scale` from `rng`.
pub fn sample_laplace<R: RngCore + ?Sized>(scale: f64, rng: &mut R) -> Result<f64, MechanismError> {
    check_scale(scale)?;
    Ok(laplace_from_uniform(open_unit(rng.next_u64()), scale))
}

fn check_scale(scale: f64) -> Result<(), MechanismError> {
    if scale > 0.0 && scale.is_finite() {
        Ok(())
    } else {
        Err(MechanismError::NonPositiveScale(scale))
    }
}

/// Source of Laplace noise addressed by stream.
pub trait NoiseSource: Sync {
    fn laplace(&self, key: StreamKey, scale: f64) -> Result<f64, MechanismError>;
}

/// Seeded noise: each stream is a ChaCha8 stream under a common seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeededNoise {
    pub seed: u64,
}

impl SeededNoise {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn rng(&self, key: StreamKey) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(key.stream_id());
        rng
    }
}

impl NoiseSource for SeededNoise {
    fn laplace(&self, key: StreamKey, scale: f64) -> Result<f64, MechanismError> {
        sample_laplace(scale, &mut self.rng(key))
    }
}

/// Always returns 0; the mechanism becomes the identity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn laplace(&self, _key: StreamKey, scale: f64) -> Result<f64, MechanismError> {
        check_scale(scale)?;
        Ok(0.0)
    }
}

/// Number of draws taken at one scale for one family of quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawRecord {
    pub family: String,
    pub scale: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelMean {
    pub kv: f64,
    pub n: usize,
    pub mean: f64,
}

/// Noisy means of one quantity per level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub kv: f64,
    pub n: usize,
    pub mu_g: f64,
    pub mu_b: f64,
    pub mu_bsh: f64,
}

/// Output of the perturbation step, indexed like `NetworkCase::branches`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbedAdmittances {
    pub branch_ids: Vec<usize>,
    pub g_tilde: Vec<f64>,
    pub b_tilde: Vec<f64>,
    pub b_sh_tilde: Vec<f64>,
    pub levels: Vec<LevelStats>,
    /// Position in `levels` of each branch.
    pub level_of_branch: Vec<usize>,
    pub draws: Vec<DrawRecord>,
}

impl PerturbedAdmittances {
    pub fn len(&self) -> usize {
        self.branch_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.branch_ids.is_empty()
    }
}

/// Mean of `values` over each level plus Laplace noise of scale
/// `3α/(n_v·ε)`. `values` is indexed like `case.branches`.
pub fn noisy_level_means(
    levels: &[VoltageLevel],
    values: &[f64],
    quantity: Quantity,
    params: &PrivacyParams,
    noise: &dyn NoiseSource,
) -> Result<Vec<LevelMean>, MechanismError> {
    levels
        .iter()
        .map(|lv| {
            if lv.is_empty() {
                return Err(MechanismError::EmptyLevel { kv: lv.kv });
            }
            let n = lv.len();
            let mean = lv.branches.iter().map(|&k| values[k]).sum::<f64>() / n as f64;
            let z = noise.laplace(StreamKey::level(lv.kv, quantity), params.level_scale(n))?;
            Ok(LevelMean {
                kv: lv.kv,
                n,
                mean: mean + z,
            })
        })
        .collect()
}

/// Perturbs every in-service branch: `b̃ = b + Lap(3α/ε)`,
/// `g̃ = (g/b)·b̃`, `b̃_sh = b_sh + Lap(3α/ε)`, and computes the noisy
/// per-level means of the original `g`, `b`, `b_sh`.
pub fn perturb_branch_parameters(
    case: &NetworkCase,
    params: &PrivacyParams,
    noise: &dyn NoiseSource,
) -> Result<PerturbedAdmittances, MechanismError> {
    params.validate()?;
    let scale = params.branch_scale();
    let n = case.branches.len();
    let mut g = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    let mut bsh = Vec::with_capacity(n);
    let mut out = PerturbedAdmittances {
        branch_ids: Vec::with_capacity(n),
        g_tilde: Vec::with_capacity(n),
        b_tilde: Vec::with_capacity(n),
        b_sh_tilde: Vec::with_capacity(n),
        levels: Vec::new(),
        level_of_branch: vec![usize::MAX; n],
        draws: Vec::new(),
    };
    for br in &case.branches {
        let adm = br
            .admittance()
            .map_err(|_| MechanismError::NonNegativeSusceptance {
                id: br.id,
                b: f64::NAN,
            })?;
        if !(adm.b < 0.0) {
            return Err(MechanismError::NonNegativeSusceptance { id: br.id, b: adm.b });
        }
        let zb = noise.laplace(
            StreamKey::Branch {
                id: br.id,
                quantity: Quantity::Susceptance,
            },
            scale,
        )?;
        let zsh = noise.laplace(
            StreamKey::Branch {
                id: br.id,
                quantity: Quantity::ShuntSusceptance,
            },
            scale,
        )?;
        let b_t = adm.b + zb;
        out.branch_ids.push(br.id);
        out.b_tilde.push(b_t);
        out.g_tilde
            .push(if b_t == adm.b { adm.g } else { adm.g * b_t / adm.b });
        out.b_sh_tilde.push(adm.b_sh + zsh);
        g.push(adm.g);
        b.push(adm.b);
        bsh.push(adm.b_sh);
    }
    let levels = case.voltage_levels();
    let mg = noisy_level_means(&levels, &g, Quantity::Conductance, params, noise)?;
    let mb = noisy_level_means(&levels, &b, Quantity::Susceptance, params, noise)?;
    let msh = noisy_level_means(&levels, &bsh, Quantity::ShuntSusceptance, params, noise)?;
    for (v, lv) in levels.iter().enumerate() {
        for &k in &lv.branches {
            out.level_of_branch[k] = v;
        }
        out.levels.push(LevelStats {
            kv: lv.kv,
            n: lv.len(),
            mu_g: mg[v].mean,
            mu_b: mb[v].mean,
            mu_bsh: msh[v].mean,
        });
    }
    out.draws.push(DrawRecord {
        family: "branch_susceptance".into(),
        scale,
        count: n,
    });
    out.draws.push(DrawRecord {
        family: "branch_shunt_susceptance".into(),
        scale,
        count: n,
    });
    for lv in &out.levels {
        for fam in ["level_mean_g", "level_mean_b", "level_mean_bsh"] {
            out.draws.push(DrawRecord {
                family: format!("{fam}@{}kV", lv.kv),
                scale: params.level_scale(lv.n),
                count: 1,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_maps_to_zero() {
        assert_eq!(laplace_from_uniform(0.5, 3.0), 0.0);
    }

    #[test]
    fn inverse_cdf_quantiles() {
        // F(x) = 1 - ½e^{-x/s} for x >= 0
        let s = 0.03;
        let x = laplace_from_uniform(0.75, s);
        assert!((x - s * 2f64.ln()).abs() < 1e-15);
        assert!((laplace_from_uniform(0.25, s) + x).abs() < 1e-15);
    }

    #[test]
    fn open_unit_interval_is_open() {
        assert!(open_unit(0) > 0.0);
        assert!(open_unit(u64::MAX) < 1.0);
        assert!(laplace_from_uniform(open_unit(0), 1.0).is_finite());
        assert!(laplace_from_uniform(open_unit(u64::MAX), 1.0).is_finite());
    }

    #[test]
    fn scale_rules() {
        let p = PrivacyParams::default();
        assert!((p.branch_scale() - 0.03).abs() < 1e-15);
        assert!((p.level_scale(10) - 0.003).abs() < 1e-15);
        assert!(sample_laplace(0.0, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
        assert!(sample_laplace(-1.0, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn parameter_validation() {
        let bad = PrivacyParams {
            lambda: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = PrivacyParams {
            epsilon: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn stream_ids_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for id in 1..500 {
            for q in [
                Quantity::Conductance,
                Quantity::Susceptance,
                Quantity::ShuntSusceptance,
            ] {
                assert!(seen.insert(StreamKey::Branch { id, quantity: q }.stream_id()));
            }
        }
        for kv in [0.0, 0.6, 13.8, 69.0, 138.0, 230.0, 345.0] {
            for q in [
                Quantity::Conductance,
                Quantity::Susceptance,
                Quantity::ShuntSusceptance,
            ] {
                assert!(seen.insert(StreamKey::level(kv, q).stream_id()));
            }
        }
    }

    #[test]
    fn seeded_noise_is_reproducible() {
        let key = StreamKey::Branch {
            id: 3,
            quantity: Quantity::Susceptance,
        };
        let a = SeededNoise::new(9).laplace(key, 1.0).unwrap();
        let b = SeededNoise::new(9).laplace(key, 1.0).unwrap();
        let c = SeededNoise::new(10).laplace(key, 1.0).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert_ne!(a, c);
    }
}
