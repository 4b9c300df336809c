//! Kaplan joint scaling law and cost–performance accounting.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameter count used for scaling-law evaluation: every parameter except
/// the token and positional embeddings.
pub const DEFAULT_SCALING_N: f64 = 4.0e7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScalingConstants {
    pub alpha_n: f64,
    pub alpha_d: f64,
    pub n_c: f64,
    pub d_c: f64,
}

impl Default for ScalingConstants {
    fn default() -> Self {
        Self {
            alpha_n: 0.076,
            alpha_d: 0.103,
            n_c: 6.4e13,
            d_c: 1.8e13,
        }
    }
}

impl ScalingConstants {
    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha_n, self.alpha_d, self.n_c, self.d_c];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::Domain(format!("scaling constants must be positive: {self:?}")))
        }
    }
}

fn positive(what: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what} must be positive and finite, got {v}")))
    }
}

/// `L(N, D) = [(N_c/N)^(α_N/α_D) + D_c/D]^α_D` in nats/token.
pub fn kaplan_loss(n: f64, d: f64, c: &ScalingConstants) -> Result<f64> {
    c.validate()?;
    positive("N", n)?;
    positive("D", d)?;
    Ok(((c.n_c / n).powf(c.alpha_n / c.alpha_d) + c.d_c / d).powf(c.alpha_d))
}

/// `(N_c/N)^α_N`, the loss as `D → ∞`.
pub fn limit_infinite_data(n: f64, c: &ScalingConstants) -> Result<f64> {
    c.validate()?;
    positive("N", n)?;
    Ok((c.n_c / n).powf(c.alpha_n))
}

/// `(D_c/D)^α_D`, the loss as `N → ∞`.
pub fn limit_infinite_model(d: f64, c: &ScalingConstants) -> Result<f64> {
    c.validate()?;
    positive("D", d)?;
    Ok((c.d_c / d).powf(c.alpha_d))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LimitRegime {
    /// Closer to the infinite-model limit: more data would help most.
    DataLimited,
    /// Closer to the infinite-data limit: more parameters would help most.
    ModelLimited,
    Boundary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeDiagnosis {
    pub n: f64,
    pub d: f64,
    pub loss: f64,
    pub limit_infinite_data: f64,
    pub limit_infinite_model: f64,
    pub gap_to_infinite_data: f64,
    pub gap_to_infinite_model: f64,
    pub regime: LimitRegime,
}

pub fn regime_diagnosis(n: f64, d: f64, c: &ScalingConstants) -> Result<RegimeDiagnosis> {
    let loss = kaplan_loss(n, d, c)?;
    let inf_data = limit_infinite_data(n, c)?;
    let inf_model = limit_infinite_model(d, c)?;
    let gap_data = (loss - inf_data).abs();
    let gap_model = (loss - inf_model).abs();
    let regime = if gap_model < gap_data {
        LimitRegime::DataLimited
    } else if gap_data < gap_model {
        LimitRegime::ModelLimited
    } else {
        LimitRegime::Boundary
    };
    Ok(RegimeDiagnosis {
        n,
        d,
        loss,
        limit_infinite_data: inf_data,
        limit_infinite_model: inf_model,
        gap_to_infinite_data: gap_data,
        gap_to_infinite_model: gap_model,
        regime,
    })
}

pub fn tokens_per_param(tokens: f64, params: f64) -> Result<f64> {
    positive("parameter count", params)?;
    Ok(tokens / params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub fraction: f64,
    /// Smallest qualifying level; `None` when the fraction is unreachable.
    pub level: Option<u32>,
    pub data_percent: Option<f64>,
    pub train_hours: Option<f64>,
    pub cost_percent: Option<f64>,
    pub reachable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostBasis {
    WallClock,
    /// Fixed-epoch compute `steps × batch × seq_len`, proportional to `2^k`.
    StepsProxy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffReport {
    pub reference_level: u32,
    pub reference_accuracy: f64,
    pub cost_basis: CostBasis,
    pub rows: Vec<TradeoffRow>,
}

fn to_map(pairs: &[(u32, f64)], what: &str) -> Result<BTreeMap<u32, f64>> {
    let mut map = BTreeMap::new();
    for &(k, v) in pairs {
        if map.insert(k, v).is_some() {
            return Err(Error::Config(format!("duplicate level {k} in {what}")));
        }
    }
    Ok(map)
}

/// For each fraction `f`, the smallest level whose accuracy reaches
/// `f × accuracy(max level)`. `costs` are training seconds per level; without
/// them cost percent falls back to the fixed-epoch steps proxy.
pub fn tradeoff_table(
    accuracies: &[(u32, f64)],
    costs: Option<&[(u32, f64)]>,
    fractions: &[f64],
) -> Result<TradeoffReport> {
    let acc = to_map(accuracies, "accuracies")?;
    let (&k_max, &reference) = acc.iter().next_back().ok_or(Error::EmptySelection)?;
    if acc.values().any(|a| !(a.is_finite() && *a >= 0.0)) {
        return Err(Error::Domain("accuracies must be finite and ≥ 0".into()));
    }
    let costs = costs.map(|c| to_map(c, "costs")).transpose()?;
    let cost_basis = if costs.is_some() {
        CostBasis::WallClock
    } else {
        CostBasis::StepsProxy
    };
    let cost_of = |k: u32| -> Result<(Option<f64>, f64)> {
        match &costs {
            Some(c) => {
                let (ck, cmax) = (c.get(&k), c.get(&k_max));
                match (ck, cmax) {
                    (Some(&s), Some(&smax)) if smax > 0.0 => {
                        Ok((Some(s / 3600.0), 100.0 * s / smax))
                    }
                    _ => Err(Error::Alignment(format!(
                        "no training time for level {k} or reference level {k_max}"
                    ))),
                }
            }
            None => Ok((None, 100.0 * 2f64.powi(k as i32 - k_max as i32))),
        }
    };
    let mut rows = Vec::with_capacity(fractions.len());
    for &f in fractions {
        // Fractions above 1 are accepted; they are the only unreachable ones.
        if !(f > 0.0 && f.is_finite()) {
            return Err(Error::Domain(format!("fraction {f} must be positive")));
        }
        let target = f * reference;
        let hit = acc.iter().find(|(_, &a)| a >= target).map(|(&k, _)| k);
        rows.push(match hit {
            Some(k) => {
                let (hours, cost) = cost_of(k)?;
                TradeoffRow {
                    fraction: f,
                    level: Some(k),
                    data_percent: Some(100.0 * 2f64.powi(k as i32 - k_max as i32)),
                    train_hours: hours,
                    cost_percent: Some(cost),
                    reachable: true,
                }
            }
            None => TradeoffRow {
                fraction: f,
                level: None,
                data_percent: None,
                train_hours: None,
                cost_percent: None,
                reachable: false,
            },
        });
    }
    Ok(TradeoffReport {
        reference_level: k_max,
        reference_accuracy: reference,
        cost_basis,
        rows,
    })
}

pub fn write_tradeoff_csv(report: &TradeoffReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "fraction",
        "level",
        "data_percent",
        "train_hours",
        "cost_percent",
        "cost_basis",
        "reachable",
    ])?;
    let basis = match report.cost_basis {
        CostBasis::WallClock => "wall-clock",
        CostBasis::StepsProxy => "steps-proxy",
    };
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &report.rows {
        w.write_record([
            r.fraction.to_string(),
            r.level.map(|k| k.to_string()).unwrap_or_default(),
            opt(r.data_percent),
            opt(r.train_hours),
            opt(r.cost_percent),
            basis.to_string(),
            r.reachable.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub k: u32,
    pub tokens: f64,
    pub predicted: f64,
    pub empirical: f64,
}

/// Kaplan predictions at each level's token count next to measured losses.
pub fn predicted_vs_empirical(
    levels: &[u32],
    tokens: &[f64],
    n: f64,
    c: &ScalingConstants,
    empirical: &[(u32, f64)],
) -> Result<Vec<PredictionRow>> {
    if levels.len() != tokens.len() || levels.len() != empirical.len() {
        return Err(Error::Alignment(format!(
            "{} levels, {} token counts, {} measurements",
            levels.len(),
            tokens.len(),
            empirical.len()
        )));
    }
    levels
        .iter()
        .zip(tokens)
        .zip(empirical)
        .map(|((&k, &d), &(ek, loss))| {
            if ek != k {
                return Err(Error::Alignment(format!(
                    "prediction level {k} paired with measurement level {ek}"
                )));
            }
            Ok(PredictionRow {
                k,
                tokens: d,
                predicted: kaplan_loss(n, d, c)?,
                empirical: loss,
            })
        })
        .collect()
}

pub fn write_prediction_csv(rows: &[PredictionRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["k", "tokens", "predicted_loss", "empirical_loss"])?;
    for r in rows {
        w.write_record([
            r.k.to_string(),
            r.tokens.to_string(),
            r.predicted.to_string(),
            r.empirical.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    // 50-digit evaluations of the closed form with the default constants.
    const HIGH_PRECISION: [(f64, f64, f64); 10] = [
        (1.0e5, 1.0e6, 5.681_965_420_199_907_5),
        (3.3e6, 2.5e7, 4.131_419_923_208_667_1),
        (4.0e7, 1.34e8, 3.461_781_966_874_555_7),
        (1.2e8, 7.0e9, 2.764_500_800_847_409_5),
        (7.5e8, 3.0e10, 2.401_844_505_087_767_2),
        (2.0e9, 1.0e11, 2.218_472_870_971_731_0),
        (5.0e10, 4.0e12, 1.726_483_136_176_176_9),
        (1.0e12, 1.0e13, 1.383_133_098_527_416_9),
        (6.4e13, 1.8e13, 1.074_004_471_620_124_3),
        (1.0e15, 1.0e16, 0.812_601_381_756_511_9),
    ];

    #[test]
    fn matches_high_precision_oracle() {
        let c = ScalingConstants::default();
        for (n, d, want) in HIGH_PRECISION {
            let got = kaplan_loss(n, d, &c).unwrap();
            assert!(((got - want) / want).abs() < 1e-10, "({n}, {d}): {got} vs {want}");
        }
    }

    #[test]
    fn reference_setting() {
        let c = ScalingConstants::default();
        assert!((kaplan_loss(4.0e7, 1.34e8, &c).unwrap() - 3.46).abs() <= 0.01);
        assert!((limit_infinite_data(4.0e7, &c).unwrap() - 2.96).abs() <= 0.01);
        assert!((limit_infinite_model(1.34e8, &c).unwrap() - 3.37).abs() <= 0.01);
        assert_eq!(limit_infinite_data(c.n_c, &c).unwrap(), 1.0);
        assert_eq!(limit_infinite_model(c.d_c, &c).unwrap(), 1.0);
        let diag = regime_diagnosis(4.0e7, 1.34e8, &c).unwrap();
        assert_eq!(diag.regime, LimitRegime::DataLimited);
        assert_eq!(diag.gap_to_infinite_model, (diag.loss - diag.limit_infinite_model).abs());
    }

    #[test]
    fn tie_is_boundary() {
        // With α_N = α_D and N_c/N = D_c/D both limits coincide.
        let c = ScalingConstants {
            alpha_n: 0.1,
            alpha_d: 0.1,
            n_c: 100.0,
            d_c: 100.0,
        };
        let diag = regime_diagnosis(10.0, 10.0, &c).unwrap();
        assert_eq!(diag.regime, LimitRegime::Boundary);
    }

    #[test]
    fn domain_errors() {
        let c = ScalingConstants::default();
        assert!(matches!(kaplan_loss(0.0, 1.0, &c), Err(Error::Domain(_))));
        assert!(matches!(kaplan_loss(1.0, -1.0, &c), Err(Error::Domain(_))));
        assert!(tokens_per_param(1.0, 0.0).is_err());
    }

    #[test]
    fn tokens_per_param_examples() {
        assert!((tokens_per_param(0.13e6, 2.3616e6).unwrap() - 0.056).abs() < 1e-3);
        let exact = tokens_per_param(131_072.0, 2_361_600.0).unwrap();
        assert_eq!((exact * 1000.0).round() / 1000.0, 0.056);
        assert_eq!(tokens_per_param(5.0, 5.0).unwrap(), 1.0);
        let full = tokens_per_param(134_217_728.0, 2_361_600.0).unwrap();
        assert!((full - 56.83).abs() < 5e-3, "{full}");
    }

    #[test]
    fn unreachable_fraction_is_kept() {
        let report = tradeoff_table(&[(3, 0.3), (4, 0.4)], None, &[0.5, 1.05]).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert_eq!(report.rows[0].level, Some(3));
        assert!(!report.rows[1].reachable);
        assert_eq!(report.rows[1].level, None);
        let report = tradeoff_table(&[(3, 0.5), (4, 0.4)], None, &[1.0]).unwrap();
        assert_eq!(report.rows[0].level, Some(3));
        assert_eq!(report.reference_accuracy, 0.4);
        assert_eq!(report.cost_basis, CostBasis::StepsProxy);
    }

    #[test]
    fn misaligned_predictions() {
        let c = ScalingConstants::default();
        assert!(matches!(
            predicted_vs_empirical(&[1, 2], &[1e3], 4e7, &c, &[(1, 3.0)]),
            Err(Error::Alignment(_))
        ));
        assert!(matches!(
            predicted_vs_empirical(&[1], &[1e3], 4e7, &c, &[(2, 3.0)]),
            Err(Error::Alignment(_))
        ));
    }
}
