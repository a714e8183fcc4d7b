//! Evaluation over the ten built-in context cases.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{embed_with_order, index_embedding, ContextEmbedding, Method};
use crate::env::{EnvConfig, SurrogateEnv};
use crate::error::{Error, Result};
use crate::policy::LinearPolicy;
use crate::rollout::run_episode;
use crate::terrain::{levels_to_params, PropertyLevel, PropertyLevels, TerrainParams};
use crate::translator::Translator;

use PropertyLevel::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextKind {
    LowLevel,
    HighLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCase {
    pub id: char,
    pub name: String,
    pub kind: ContextKind,
    pub description: String,
    pub ground_truth_levels: PropertyLevels,
    pub ground_truth_params: TerrainParams,
}

impl EvalCase {
    fn new(id: char, name: &str, kind: ContextKind, description: &str, levels: PropertyLevels) -> Self {
        Self {
            id,
            name: name.to_string(),
            kind,
            description: description.to_string(),
            ground_truth_levels: levels,
            ground_truth_params: levels_to_params(&levels),
        }
    }
}

/// Cases A–E (low-level) and F–J (high-level).
///
/// Ground-truth levels are the rule oracle's reading of each description,
/// recorded here rather than recomputed.
pub fn builtin_cases() -> Vec<EvalCase> {
    use ContextKind::*;
    let l = PropertyLevels::new;
    vec![
        EvalCase::new(
            'A',
            "Normal Terrain",
            LowLevel,
            "This environment has no restitution when collision, very high friction, and no damping.",
            l(VeryLow, VeryHigh, Medium, VeryLow),
        ),
        EvalCase::new(
            'B',
            "Low Friction",
            LowLevel,
            "This environment has no restitution when collision, very low friction, and no damping.",
            l(VeryLow, VeryLow, Medium, VeryLow),
        ),
        EvalCase::new(
            'C',
            "High Damping",
            LowLevel,
            "This environment has high restitution when collision, very high friction, and very high damping.",
            l(High, VeryHigh, Medium, VeryHigh),
        ),
        EvalCase::new(
            'D',
            "Medium Restitution and Very High Damping",
            LowLevel,
            "This environment has medium restitution when collision, low friction, and very high damping.",
            l(Medium, Low, Medium, VeryHigh),
        ),
        EvalCase::new(
            'E',
            "High Restitution and Low Stiffness",
            LowLevel,
            "This environment has high restitution when collision, very high friction, and low stiffness.",
            l(High, VeryHigh, Low, Medium),
        ),
        EvalCase::new(
            'F',
            "Moist Grassland",
            HighLevel,
            "The spot is walking on a grassland under a drizzle.",
            l(Medium, Low, Low, High),
        ),
        EvalCase::new(
            'G',
            "Snowy Mountain Road",
            HighLevel,
            "The spot is walking on a mountain road covered by ice. It's snowy now.",
            l(Low, VeryLow, VeryHigh, Medium),
        ),
        EvalCase::new(
            'H',
            "Sunny Beach",
            HighLevel,
            "The spot is walking on the beach near the sea under the sun.",
            l(Medium, High, VeryLow, VeryHigh),
        ),
        EvalCase::new(
            'I',
            "Rainy Concrete Road",
            HighLevel,
            "The spot is walking on a concrete road under heavy rain.",
            l(Medium, Medium, VeryHigh, High),
        ),
        EvalCase::new(
            'J',
            "Sunny Running Tracks",
            HighLevel,
            "The spot is walking on running tracks on a sunny day.",
            l(High, VeryHigh, High, Medium),
        ),
    ]
}

/// `all`, `low`, `high`, or a comma-separated list of case ids.
pub fn select_cases(selector: &str) -> Result<Vec<EvalCase>> {
    let cases = builtin_cases();
    match selector.trim().to_ascii_lowercase().as_str() {
        "all" => Ok(cases),
        "low" => Ok(cases.into_iter().filter(|c| c.kind == ContextKind::LowLevel).collect()),
        "high" => Ok(cases.into_iter().filter(|c| c.kind == ContextKind::HighLevel).collect()),
        list => {
            let mut out = Vec::new();
            for id in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let c = cases
                    .iter()
                    .find(|c| c.id.to_string().eq_ignore_ascii_case(id))
                    .ok_or_else(|| Error::Argument(format!("unknown case {id:?}")))?;
                out.push(c.clone());
            }
            if out.is_empty() {
                return Err(Error::Argument("no cases selected".into()));
            }
            Ok(out)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub n_episodes: usize,
    pub seed: u64,
    pub env: EnvConfig,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            n_episodes: 16,
            seed: 0,
            env: EnvConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub mean_reward: f64,
    pub std_reward: f64,
    pub episodes: Vec<f64>,
}

impl CellStats {
    pub fn from_episodes(episodes: Vec<f64>) -> Self {
        let n = episodes.len().max(1) as f64;
        let mean = episodes.iter().sum::<f64>() / n;
        let var = episodes.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean_reward: mean,
            std_reward: var.sqrt(),
            episodes,
        }
    }
}

/// Context a policy receives at evaluation time for `case`.
pub fn evaluation_context(
    policy: &LinearPolicy,
    case: &EvalCase,
    translator: &Translator,
) -> Result<ContextEmbedding> {
    match policy.embedding_mode() {
        Method::NoContext => Ok(ContextEmbedding::empty()),
        Method::Indexing => index_embedding(0, policy.embedding_dim(), false),
        Method::Embedding => {
            let levels = translator.translate(&case.description)?.levels;
            Ok(embed_with_order(&levels, policy.block_order()))
        }
    }
}

/// Episodes use seeds `seed, seed+1, …` on the case's ground-truth terrain.
pub fn evaluate(
    policy: &LinearPolicy,
    case: &EvalCase,
    translator: &Translator,
    settings: &EvalSettings,
) -> Result<CellStats> {
    evaluate_with_probe(policy, case, translator, settings, None::<fn(&[f64])>)
}

/// As [`evaluate`], sequentially, handing every policy input to `probe`.
pub fn evaluate_with_probe<P: FnMut(&[f64])>(
    policy: &LinearPolicy,
    case: &EvalCase,
    translator: &Translator,
    settings: &EvalSettings,
    probe: Option<P>,
) -> Result<CellStats> {
    let ctx = evaluation_context(policy, case, translator)?;
    let run = |i: usize, probe: Option<&mut dyn FnMut(&[f64])>| {
        let mut env = SurrogateEnv::new(case.ground_truth_params, settings.env);
        run_episode(
            &mut env,
            policy,
            &ctx,
            settings.seed + i as u64,
            settings.env.max_steps,
            probe,
        )
        .map(|r| r.reward)
    };
    let episodes: Vec<f64> = match probe {
        Some(mut p) => (0..settings.n_episodes)
            .map(|i| run(i, Some(&mut p)))
            .collect::<Result<_>>()?,
        None => (0..settings.n_episodes)
            .into_par_iter()
            .map(|i| run(i, None))
            .collect::<Result<_>>()?,
    };
    Ok(CellStats::from_episodes(episodes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub method: Method,
    pub case_id: char,
    pub case_name: String,
    pub backend: Option<String>,
    #[serde(flatten)]
    pub stats: Option<CellStats>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub policy_hashes: BTreeMap<Method, String>,
    pub translator_backend: String,
    pub seed: u64,
    pub n_episodes: usize,
    pub episode_cap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cells: Vec<ReportCell>,
    pub metadata: ReportMetadata,
}

impl EvalReport {
    pub fn cell(&self, method: Method, case_id: char) -> Option<&ReportCell> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.case_id == case_id)
    }

    /// Mean over every successful cell of `method`.
    pub fn grand_mean(&self, method: Method) -> Option<f64> {
        let means: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| c.method == method)
            .filter_map(|c| c.stats.as_ref().map(|s| s.mean_reward))
            .collect();
        (!means.is_empty()).then(|| means.iter().sum::<f64>() / means.len() as f64)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv_writer();
        w.write_record(["method", "case_id", "case_name", "mean_reward", "std_reward"])
            .map_err(csv_err)?;
        for c in &self.cells {
            let (mean, std) = match &c.stats {
                Some(s) => (s.mean_reward.to_string(), s.std_reward.to_string()),
                None => (String::new(), String::new()),
            };
            w.write_record([
                c.method.name(),
                &c.case_id.to_string(),
                &c.case_name,
                &mean,
                &std,
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Argument(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Writes `report.csv` and `report.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv_path = dir.join("report.csv");
        fs::write(&csv_path, self.to_csv()?).map_err(|e| Error::io(&csv_path, e))?;
        let json_path = dir.join("report.json");
        fs::write(&json_path, serde_json::to_string_pretty(self)? + "\n")
            .map_err(|e| Error::io(&json_path, e))
    }

    /// Text grid: one row per case, one column per method.
    pub fn grid(&self) -> String {
        let methods: Vec<Method> = Method::ALL
            .into_iter()
            .filter(|m| self.cells.iter().any(|c| c.method == *m))
            .collect();
        let mut ids: Vec<(char, String)> = Vec::new();
        for c in &self.cells {
            if !ids.iter().any(|(id, _)| *id == c.case_id) {
                ids.push((c.case_id, c.case_name.clone()));
            }
        }
        let mut out = format!("{:<4}{:<42}", "id", "case");
        for m in &methods {
            out.push_str(&format!("{:>16}", m.name()));
        }
        out.push('\n');
        for (id, name) in ids {
            out.push_str(&format!("{:<4}{:<42}", id, name));
            for m in &methods {
                let v = match self.cell(*m, id) {
                    Some(ReportCell { stats: Some(s), .. }) => format!("{:.3}", s.mean_reward),
                    Some(_) => "error".to_string(),
                    None => "-".to_string(),
                };
                out.push_str(&format!("{v:>16}"));
            }
            out.push('\n');
        }
        out
    }
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().from_writer(Vec::new())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Argument(e.to_string())
}

/// Every `(method, case)` cell. Cells run in parallel; a failed translation
/// marks its cell and the rest of the grid still runs.
pub fn run_study(
    policies: &BTreeMap<Method, LinearPolicy>,
    methods: &[Method],
    cases: &[EvalCase],
    translator: &Translator,
    settings: &EvalSettings,
) -> Result<EvalReport> {
    for m in methods {
        if !policies.contains_key(m) {
            return Err(Error::Config(format!("no policy provided for method {m}")));
        }
    }
    let backend = translator.backend_identity();
    let grid: Vec<(Method, &EvalCase)> = methods
        .iter()
        .flat_map(|&m| cases.iter().map(move |c| (m, c)))
        .collect();
    let cells: Vec<ReportCell> = grid
        .par_iter()
        .map(|&(method, case)| {
            let policy = &policies[&method];
            let result = evaluate(policy, case, translator, settings);
            let (stats, error) = match result {
                Ok(s) => (Some(s), None),
                Err(e) => (None, Some(e.to_string())),
            };
            ReportCell {
                method,
                case_id: case.id,
                case_name: case.name.clone(),
                backend: (method == Method::Embedding).then(|| backend.clone()),
                stats,
                error,
            }
        })
        .collect();
    Ok(EvalReport {
        cells,
        metadata: ReportMetadata {
            policy_hashes: methods
                .iter()
                .map(|m| (*m, policies[m].content_hash()))
                .collect(),
            translator_backend: backend,
            seed: settings.seed,
            n_episodes: settings.n_episodes,
            episode_cap: settings.env.max_steps,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{ACTION_DIM, OBS_DIM};
    use crate::translator::mock_translate;

    #[test]
    fn ten_cases_five_each() {
        let cases = builtin_cases();
        assert_eq!(cases.len(), 10);
        assert_eq!(cases.iter().filter(|c| c.kind == ContextKind::LowLevel).count(), 5);
        assert_eq!(cases[9].name, "Sunny Running Tracks");
        assert!(cases[1].description.contains("very low friction"));
    }

    #[test]
    fn recorded_levels_match_oracle() {
        for c in builtin_cases() {
            assert_eq!(mock_translate(&c.description), c.ground_truth_levels, "case {}", c.id);
            assert_eq!(c.ground_truth_params, levels_to_params(&c.ground_truth_levels));
        }
    }

    #[test]
    fn case_selection() {
        assert_eq!(select_cases("low").unwrap().len(), 5);
        assert_eq!(select_cases("HIGH").unwrap()[0].id, 'F');
        assert_eq!(select_cases("a, j").unwrap().len(), 2);
        assert!(select_cases("Z").is_err());
    }

    #[test]
    fn zero_policy_scores_zero() {
        let p = LinearPolicy::zeros(ACTION_DIM, OBS_DIM, Method::Indexing, 8);
        let settings = EvalSettings {
            n_episodes: 2,
            env: EnvConfig::default().with_max_steps(200),
            ..EvalSettings::default()
        };
        let s = evaluate(&p, &builtin_cases()[0], &Translator::mock(), &settings).unwrap();
        assert!(s.mean_reward.abs() < 1e-9);
        assert_eq!(s.episodes.len(), 2);
    }

    #[test]
    fn missing_policy_is_config_error() {
        let settings = EvalSettings::default();
        let err = run_study(&BTreeMap::new(), &[Method::Embedding], &builtin_cases(), &Translator::mock(), &settings)
            .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn cell_stats_mean_is_arithmetic_mean() {
        let s = CellStats::from_episodes(vec![1.0, 2.0, 6.0]);
        assert_eq!(s.mean_reward, 3.0);
        assert!((s.std_reward - (14.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }
}
