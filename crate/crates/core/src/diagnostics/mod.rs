//! Ensemble pessimism diagnostics: the LCB coefficient of the expected
//! ensemble minimum, OOD/ID standard-deviation ratios, distance to dataset
//! actions and convergence detection.

mod record;

use lbsac_autodiff::Tensor;

use crate::error::{Error, Result};
use crate::networks::{CriticEnsemble, SquashedGaussianPolicy};
use crate::rng::Rng;

pub use record::{
    detect_convergence, first_crossing, read_diagnostics_csv, speedup_ratio, ConvergenceCriterion,
    ConvergenceReport, CsvHeader, DiagnosticsRecord, DiagnosticsWriter, CSV_COLUMNS,
};

/// Standard normal quantile Φ⁻¹(p), Wichura's AS241 (PPND16).
pub fn inverse_normal_cdf(p: f64) -> f64 {
    if p.is_nan() || !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let r = (-r.ln()).sqrt();
    let x = if r <= 5.0 {
        let r = r - 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        let r = r - 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -x
    } else {
        x
    }
}

fn poly(c: &[f64; 8], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
}

const A: [f64; 8] = [
    3.387_132_872_796_366_608,
    1.331_416_678_917_843_774_5e2,
    1.971_590_950_306_551_442_7e3,
    1.373_169_376_550_946_112_5e4,
    4.592_195_393_154_987_145_7e4,
    6.726_577_092_700_870_085_3e4,
    3.343_057_558_358_812_810_5e4,
    2.509_080_928_730_122_672_7e3,
];
const B: [f64; 8] = [
    1.0,
    4.231_333_070_160_091_125_2e1,
    6.871_870_074_920_579_083e2,
    5.394_196_021_424_751_107_7e3,
    2.121_379_430_158_659_586_7e4,
    3.930_789_580_009_271_061e4,
    2.872_908_573_572_194_267_4e4,
    5.226_495_278_852_854_561e3,
];
const C: [f64; 8] = [
    1.423_437_110_749_683_577_34,
    4.630_337_846_156_545_295_9,
    5.769_497_221_460_691_405_5,
    3.647_848_324_763_204_605_04,
    1.270_458_252_452_368_382_58,
    2.417_807_251_774_506_117_7e-1,
    2.272_384_498_926_918_458_33e-2,
    7.745_450_142_783_414_076_4e-4,
];
const D: [f64; 8] = [
    1.0,
    2.053_191_626_637_758_821_87,
    1.676_384_830_183_803_849_4,
    6.897_673_349_851_000_045_5e-1,
    1.481_039_764_274_800_745_9e-1,
    1.519_866_656_361_645_719_66e-2,
    5.475_938_084_995_344_946e-4,
    1.050_750_071_644_416_843_24e-9,
];
const E: [f64; 8] = [
    6.657_904_643_501_103_777_2,
    5.463_784_911_164_114_369_9,
    1.784_826_539_917_291_335_8,
    2.965_605_718_285_048_912_3e-1,
    2.653_218_952_657_612_309_3e-2,
    1.242_660_947_388_078_438_6e-3,
    2.711_555_568_743_487_578_15e-5,
    2.010_334_399_292_288_132_65e-7,
];
const F: [f64; 8] = [
    1.0,
    5.998_322_065_558_879_376_9e-1,
    1.369_298_809_227_358_053_1e-1,
    1.487_536_129_085_061_485_25e-2,
    7.868_691_311_456_132_591e-4,
    1.846_318_317_510_054_681_8e-5,
    1.421_511_758_316_445_888_7e-7,
    2.044_263_103_389_939_785_64e-15,
];

/// `Φ⁻¹((N − π/8) / (N − π/4 + 1))`, the multiple of σ by which the expected
/// minimum of `N` Gaussian critics falls below their mean.
pub fn lcb_coefficient(n: usize) -> Result<f64> {
    if n < 1 {
        return Err(Error::invalid("ensemble size must be at least 1"));
    }
    let n = n as f64;
    let pi = std::f64::consts::PI;
    Ok(inverse_normal_cdf((n - pi / 8.0) / (n - pi / 4.0 + 1.0)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
}

/// Monte-Carlo estimate of E[min of `n` i.i.d. standard normals].
///
/// Normals are drawn by inverse transform, `Z = Φ⁻¹(U)`. Since `Φ⁻¹` is
/// increasing, the minimum of `n` such draws is `Φ⁻¹` of the minimum
/// uniform, so only one quantile is evaluated per sample.
pub fn expected_min_mc<R: rand::RngCore + ?Sized>(
    n: usize,
    samples: usize,
    rng: &mut R,
) -> Result<McEstimate> {
    if n < 1 || samples < 1 {
        return Err(Error::invalid("expected_min_mc needs n >= 1 and samples >= 1"));
    }
    let (mut sum, mut sum_sq) = (0.0f64, 0.0f64);
    for _ in 0..samples {
        let mut lowest = u64::MAX;
        for _ in 0..n {
            lowest = lowest.min(rng.next_u64() >> 11);
        }
        // Midpoint of the 2^-53 grid cell keeps u strictly inside (0, 1).
        let u = (lowest as f64 + 0.5) * (1.0 / (1u64 << 53) as f64);
        let m = inverse_normal_cdf(u);
        sum += m;
        sum_sq += m * m;
    }
    let k = samples as f64;
    let mean = sum / k;
    let var = (sum_sq / k - mean * mean).max(0.0);
    Ok(McEstimate {
        mean,
        std_error: (var / k).sqrt(),
    })
}

/// Mean and population standard deviation of one state-action pair's
/// ensemble predictions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnsembleStats {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl EnsembleStats {
    pub fn from_values(q: &[f64]) -> Result<Self> {
        if q.is_empty() {
            return Err(Error::invalid("ensemble statistics need at least one value"));
        }
        let n = q.len() as f64;
        let mean = q.iter().sum::<f64>() / n;
        let var = q.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Ok(EnsembleStats {
            mean,
            std: var.sqrt(),
            n: q.len(),
        })
    }

    /// Expected ensemble minimum `m − k(N)·σ`.
    pub fn lower_confidence_bound(&self) -> Result<f64> {
        Ok(self.mean - lcb_coefficient(self.n)? * self.std)
    }
}

/// Mean over columns of the population std over rows of `q: [N, B]`.
pub fn mean_ensemble_std(q: &Tensor<f32>) -> f64 {
    let (n, b) = (q.rows(), q.cols());
    let d = q.data();
    let mut total = 0.0;
    for col in 0..b {
        let vals: Vec<f64> = (0..n).map(|j| d[j * b + col] as f64).collect();
        total += EnsembleStats::from_values(&vals).map(|s| s.std).unwrap_or(0.0);
    }
    total / b as f64
}

pub const STD_RATIO_FLOOR: f64 = 1e-8;

/// `mean σ(OOD) / mean σ(ID)`, or `None` when the denominator is below
/// [`STD_RATIO_FLOOR`].
pub fn std_ratio_from_q(q_ood: &Tensor<f32>, q_id: &Tensor<f32>) -> Option<f64> {
    let den = mean_ensemble_std(q_id);
    if den < STD_RATIO_FLOOR {
        return None;
    }
    Some(mean_ensemble_std(q_ood) / den)
}

/// Ensemble disagreement on uniform random actions relative to the dataset
/// actions at the same probe states.
pub fn std_ratio(
    ensemble: &CriticEnsemble,
    probe_states: &Tensor<f32>,
    dataset_actions: &Tensor<f32>,
    rng: &mut Rng,
) -> Result<Option<f64>> {
    let random = Tensor::from_fn(dataset_actions.rows(), dataset_actions.cols(), |_, _| {
        rng.uniform_range(-1.0, 1.0) as f32
    });
    let q_ood = ensemble.forward(probe_states, &random, false)?;
    let q_id = ensemble.forward(probe_states, dataset_actions, false)?;
    Ok(std_ratio_from_q(&q_ood, &q_id))
}

/// Mean squared error over batch and action dims.
pub fn mse(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::invalid(format!(
            "mse shape mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum();
    Ok(s / a.numel() as f64)
}

/// Distance between the deterministic policy `tanh(μ(s))` and the dataset
/// actions.
pub fn action_mse(
    policy: &SquashedGaussianPolicy,
    probe_states: &Tensor<f32>,
    dataset_actions: &Tensor<f32>,
) -> Result<f64> {
    mse(&policy.act(probe_states)?, dataset_actions)
}
