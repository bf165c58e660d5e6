//! Engines and their hyperparameter grids, plus generic nested-CV selection.

use serde::{Deserialize, Serialize};

use crate::error::EvalError;
use crate::eval::split::{complement, stratified_kfold};
use crate::model::ModelConfig;

/// The scoring strategies the benchmark can compare.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Engine {
    /// Constant scores, majority-class predictions: the floor.
    Majority,
    /// Static nested aggregation features + a trained MLP scorer.
    Relaggs,
    /// Jointly trained aggregation layers; factors and scorer grid-searched.
    NRelaggs,
    /// Trained aggregation layers with both width factors pinned to 1.
    FixNRelaggs,
}

impl Engine {
    pub fn name(&self) -> &'static str {
        match self {
            Engine::Majority => "majority",
            Engine::Relaggs => "relaggs",
            Engine::NRelaggs => "nrelaggs",
            Engine::FixNRelaggs => "fix-nrelaggs",
        }
    }
}

impl std::fmt::Display for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Engine {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "majority" => Ok(Engine::Majority),
            "relaggs" => Ok(Engine::Relaggs),
            "nrelaggs" => Ok(Engine::NRelaggs),
            "fix-nrelaggs" => Ok(Engine::FixNRelaggs),
            other => Err(format!(
                "unknown engine `{other}` (expected majority, relaggs, nrelaggs, or fix-nrelaggs)"
            )),
        }
    }
}

/// One point of a hyperparameter grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Candidate {
    pub name: String,
    pub config: ModelConfig,
}

const WIDTH_FACTORS: [f64; 3] = [0.5, 0.75, 1.0];
const PREDICTORS: [&[usize]; 3] = [&[50], &[100], &[100, 50]];

fn predictor_name(layers: &[usize]) -> String {
    layers.iter().map(ToString::to_string).collect::<Vec<_>>().join("x")
}

/// The hyperparameter grid of an engine. `base` supplies everything the grid
/// does not vary (epochs, patience, optimizer, batching).
pub fn config_grid(engine: Engine, base: &ModelConfig) -> Vec<Candidate> {
    let with = |g: f64, s: f64, layers: &[usize]| -> Candidate {
        Candidate {
            name: format!("g={g} s={s} mlp={}", predictor_name(layers)),
            config: ModelConfig {
                feature_generation_factor: g,
                feature_selection_factor: s,
                predictor_layers: layers.to_vec(),
                freeze_identity: false,
                ..base.clone()
            },
        }
    };
    match engine {
        Engine::Majority => vec![Candidate {
            name: "majority".into(),
            config: base.clone(),
        }],
        // the aggregation side is fixed; only the scorer varies
        Engine::Relaggs => PREDICTORS
            .iter()
            .map(|layers| Candidate {
                name: format!("mlp={}", predictor_name(layers)),
                ..with(1.0, 1.0, layers)
            })
            .collect(),
        Engine::FixNRelaggs => PREDICTORS.iter().map(|layers| with(1.0, 1.0, layers)).collect(),
        Engine::NRelaggs => {
            let mut grid = Vec::with_capacity(27);
            for g in WIDTH_FACTORS {
                for s in WIDTH_FACTORS {
                    for layers in PREDICTORS {
                        grid.push(with(g, s, layers));
                    }
                }
            }
            grid
        }
    }
}

/// Pick a candidate by inner cross-validation: each candidate is scored by
/// its mean validation AUROC over an inner stratified split of the training
/// fold, and the best mean wins (first on ties, so grid order is the
/// tiebreak). Returns the winning index and the per-candidate means.
///
/// `evaluate(candidate, inner_fold, train_idx, val_idx)` must fit the
/// candidate on `train_idx` and return its AUROC on `val_idx`; indices refer
/// to `labels`.
pub fn grid_search<E>(
    candidates: &[Candidate],
    labels: &[String],
    inner_folds: usize,
    seed: u64,
    mut evaluate: E,
) -> Result<(usize, Vec<f64>), EvalError>
where
    E: FnMut(usize, usize, &[usize], &[usize]) -> Result<f64, EvalError>,
{
    assert!(!candidates.is_empty(), "a grid always has at least one point");
    if candidates.len() == 1 {
        return Ok((0, vec![f64::NAN]));
    }
    let folds = stratified_kfold(labels, inner_folds, seed)?;
    let mut means = Vec::with_capacity(candidates.len());
    for c in 0..candidates.len() {
        let mut sum = 0.0;
        for f in 0..folds.len() {
            let train = complement(&folds, f);
            sum += evaluate(c, f, &train, &folds[f])?;
        }
        means.push(sum / folds.len() as f64);
    }
    let best = means
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| {
            // strictly-greater wins; ties keep the earlier index
            a.partial_cmp(b)
                .expect("finite AUROC")
                .then(ib.cmp(&ia))
        })
        .map(|(i, _)| i)
        .expect("non-empty grid");
    Ok((best, means))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn engine_names_round_trip() {
        for e in [Engine::Majority, Engine::Relaggs, Engine::NRelaggs, Engine::FixNRelaggs] {
            assert_eq!(e.name().parse::<Engine>().unwrap(), e);
        }
        assert!("svm".parse::<Engine>().is_err());
    }

    #[test]
    fn grid_sizes_match_the_protocol() {
        let base = ModelConfig::default();
        assert_eq!(config_grid(Engine::Majority, &base).len(), 1);
        assert_eq!(config_grid(Engine::Relaggs, &base).len(), 3);
        assert_eq!(config_grid(Engine::FixNRelaggs, &base).len(), 3);
        let full = config_grid(Engine::NRelaggs, &base);
        assert_eq!(full.len(), 27);
        // every point distinct, fixed variants pinned to factor 1
        let names: std::collections::BTreeSet<_> = full.iter().map(|c| c.name.clone()).collect();
        assert_eq!(names.len(), 27);
        for c in config_grid(Engine::FixNRelaggs, &base) {
            assert_eq!(c.config.feature_generation_factor, 1.0);
            assert_eq!(c.config.feature_selection_factor, 1.0);
            assert!(!c.config.freeze_identity, "fixed factors still train their weights");
        }
    }

    #[test]
    fn grid_inherits_base_settings() {
        let base = ModelConfig { epochs: 7, patience: 2, ..Default::default() };
        for c in config_grid(Engine::NRelaggs, &base) {
            assert_eq!(c.config.epochs, 7);
            assert_eq!(c.config.patience, 2);
        }
    }

    #[test]
    fn selection_maximizes_mean_auroc_with_first_tiebreak() {
        let base = ModelConfig::default();
        let candidates = config_grid(Engine::Relaggs, &base);
        let labels: Vec<String> = (0..12).map(|i| if i % 2 == 0 { "p".into() } else { "n".into() }).collect();
        // candidate 1 and 2 tie above candidate 0 → index 1 wins
        let fixed = [0.6, 0.9, 0.9];
        let (best, means) = grid_search(&candidates, &labels, 3, 0, |c, _, train, val| {
            assert!(!train.is_empty() && !val.is_empty());
            Ok(fixed[c])
        })
        .unwrap();
        assert_eq!(best, 1);
        assert_eq!(means, vec![0.6, 0.9, 0.9]);
    }

    #[test]
    fn single_candidate_skips_inner_training() {
        let base = ModelConfig::default();
        let candidates = config_grid(Engine::Majority, &base);
        let labels: Vec<String> = vec!["p".into(), "n".into()];
        let (best, _) = grid_search(&candidates, &labels, 3, 0, |_, _, _, _| {
            panic!("no training should happen for a singleton grid")
        })
        .unwrap();
        assert_eq!(best, 0);
    }
}
