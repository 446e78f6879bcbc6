//! Run configuration: a single TOML file plus command-line overrides,
//! validated up front and echoed into the manifest of every run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use proxcite::corpus::CareerMode;
use proxcite::effects::{BootstrapSpec, EffectMode};
use proxcite::fsutil;
use proxcite::graph::MAX_CAP;
use proxcite::model::ModelSpec;
use proxcite::pairs::MAX_CUTPOINT;
use proxcite::synth::SynthConfig;

use crate::failure::{Failure, StageResult};

const GRID_AXES: [&str; 3] = ["similarity", "distance", "prestige"];

/// External corpus files consumed by `ingest`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    pub authors: PathBuf,
    pub documents: PathBuf,
    pub citations: PathBuf,
    pub embeddings: PathBuf,
    /// Expected embedding width; vectors of any other width are rejected.
    pub embedding_dim: usize,
    #[serde(default)]
    pub career_mode: CareerModeConfig,
}

/// Serializable mirror of [`CareerMode`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CareerModeConfig {
    /// Trust the counts in the authors file; all must be present.
    #[default]
    Provided,
    /// Recount citations received inside the ingested link table.
    InCorpus,
}

impl CareerModeConfig {
    pub fn to_mode(self) -> CareerMode {
        match self {
            CareerModeConfig::Provided => CareerMode::Provided,
            CareerModeConfig::InCorpus => CareerMode::InCorpus,
        }
    }
}

/// Focal-author restriction applied during ingest: keep the publications of
/// qualifying authors, their co-authors, and those co-authors' papers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Focal {
    /// Field label the thresholds refer to.
    pub field: String,
    #[serde(default = "default_min_papers")]
    pub min_papers: usize,
    /// Minimum share of an author's papers carrying the field label.
    #[serde(default = "default_min_field_share")]
    pub min_field_share: f64,
}

fn default_min_papers() -> usize {
    3
}

fn default_min_field_share() -> f64 {
    0.5
}

/// Pair extraction and negative sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairsConfig {
    /// Network-distance search bound; pairs at or beyond it fold into the
    /// reference bucket.
    pub cap: u32,
    /// Non-citing pairs to draw.
    pub negatives: u64,
    pub seed: u64,
    /// Restrict negatives' cited side to documents cited in the positives.
    pub matched: bool,
    /// Require the cited document strictly older, not merely no newer.
    pub strict_year: bool,
}

impl Default for PairsConfig {
    fn default() -> PairsConfig {
        PairsConfig {
            cap: 6,
            negatives: 100_000,
            seed: 17,
            matched: false,
            strict_year: false,
        }
    }
}

/// Model structure and solver budget shared by `fit` and `sweep`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub cutpoint: usize,
    /// Replace the distance-dummy block with one continuous covariate.
    pub continuous_distance: bool,
    pub interactions: bool,
    /// One intercept per cited article.
    pub group_effects: bool,
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Ridge penalty on group intercepts; zero drops single-label groups
    /// instead.
    pub group_ridge: f64,
}

impl Default for ModelConfig {
    fn default() -> ModelConfig {
        ModelConfig {
            cutpoint: 6,
            continuous_distance: false,
            interactions: true,
            group_effects: false,
            tolerance: 1e-8,
            max_iterations: 100,
            group_ridge: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            cutpoint: self.cutpoint,
            continuous_distance: self.continuous_distance,
            interactions: self.interactions,
            group_effects: self.group_effects,
        }
    }
}

/// Cut-point sweep request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub cutpoints: Vec<usize>,
    /// Also fit the continuous-distance baseline.
    pub continuous: bool,
}

impl Default for SweepConfig {
    fn default() -> SweepConfig {
        SweepConfig {
            cutpoints: vec![1, 2, 3, 4, 5, 6],
            continuous: true,
        }
    }
}

/// Marginal-effect and prediction-grid settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EffectsConfig {
    /// Evaluation modes: `at-means`, `sample-averaged`.
    pub modes: Vec<String>,
    /// Bootstrap replicates for interval estimates; zero disables.
    pub bootstrap_replicates: usize,
    pub bootstrap_seed: u64,
    pub grid_x: String,
    pub grid_y: String,
    pub grid_resolution: usize,
}

impl Default for EffectsConfig {
    fn default() -> EffectsConfig {
        EffectsConfig {
            modes: vec!["at-means".into(), "sample-averaged".into()],
            bootstrap_replicates: 0,
            bootstrap_seed: 1,
            grid_x: "similarity".into(),
            grid_y: "distance".into(),
            grid_resolution: 25,
        }
    }
}

impl EffectsConfig {
    pub fn parsed_modes(&self) -> StageResult<Vec<EffectMode>> {
        self.modes
            .iter()
            .map(|m| m.parse::<EffectMode>().map_err(Failure::from))
            .collect()
    }

    pub fn bootstrap(&self) -> Option<BootstrapSpec> {
        (self.bootstrap_replicates > 0).then_some(BootstrapSpec {
            replicates: self.bootstrap_replicates,
            seed: self.bootstrap_seed,
        })
    }
}

/// Report-stage settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    /// Similarity histogram bins in the joint-distribution table.
    pub similarity_bins: usize,
}

impl Default for ReportConfig {
    fn default() -> ReportConfig {
        ReportConfig {
            similarity_bins: proxcite::report::DEFAULT_SIMILARITY_BINS,
        }
    }
}

/// Which stage produces the corpus dump an `all` run starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Ingest,
    Synth,
}

/// Fully resolved run configuration. The serialized echo deliberately omits
/// the output directory, so identical analyses written to different
/// directories produce byte-identical artifacts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Output directory; settable here or via `--out`, never echoed.
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inputs: Option<Inputs>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub focal: Option<Focal>,
    pub pairs: PairsConfig,
    pub model: ModelConfig,
    pub sweep: SweepConfig,
    pub effects: EffectsConfig,
    pub report: ReportConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
}

/// Command-line values layered over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub cap: Option<u32>,
    pub negatives: Option<u64>,
    pub matched: bool,
    pub cutpoint: Option<usize>,
    pub continuous_distance: bool,
    pub no_interactions: bool,
    pub group_effects: bool,
}

impl RunConfig {
    /// Reads the TOML file, or starts from defaults when none is given.
    pub fn load(path: Option<&Path>) -> StageResult<RunConfig> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fsutil::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
    }

    /// Applies flag values on top of the file. `--seed` retargets both the
    /// negative sampler and the synthetic generator, so one flag reseeds
    /// whichever source the run uses.
    pub fn apply_overrides(&mut self, o: &Overrides) {
        if let Some(out) = &o.out {
            self.out = Some(out.clone());
        }
        if let Some(seed) = o.seed {
            self.pairs.seed = seed;
            if let Some(synth) = &mut self.synth {
                synth.seed = seed;
            }
        }
        if let Some(cap) = o.cap {
            self.pairs.cap = cap;
        }
        if let Some(n) = o.negatives {
            self.pairs.negatives = n;
        }
        if o.matched {
            self.pairs.matched = true;
        }
        if let Some(c) = o.cutpoint {
            self.model.cutpoint = c;
        }
        if o.continuous_distance {
            self.model.continuous_distance = true;
        }
        if o.no_interactions {
            self.model.interactions = false;
        }
        if o.group_effects {
            self.model.group_effects = true;
        }
    }

    /// Full validation pass, run before any stage touches data.
    pub fn validate(&self) -> StageResult<()> {
        let fail = |msg: String| Err(Failure::input(msg));
        if !(1..=MAX_CAP).contains(&self.pairs.cap) {
            return fail(format!(
                "pairs.cap {} outside 1..={MAX_CAP}",
                self.pairs.cap
            ));
        }
        if self.pairs.negatives < 1 {
            return fail("pairs.negatives must be positive".into());
        }
        if !(1..=MAX_CUTPOINT).contains(&self.model.cutpoint) {
            return fail(format!(
                "model.cutpoint {} outside 1..={MAX_CUTPOINT}",
                self.model.cutpoint
            ));
        }
        if self.model.tolerance <= 0.0 || self.model.tolerance.is_nan() {
            return fail("model.tolerance must be positive".into());
        }
        if self.model.max_iterations < 1 {
            return fail("model.max_iterations must be positive".into());
        }
        if self.model.group_ridge < 0.0 {
            return fail("model.group_ridge must be non-negative".into());
        }
        if let Some(inputs) = &self.inputs {
            if inputs.embedding_dim < 1 {
                return fail("inputs.embedding_dim must be positive".into());
            }
        }
        if let Some(focal) = &self.focal {
            if focal.min_papers < 1 {
                return fail("focal.min_papers must be at least 1".into());
            }
            if !(0.0..=1.0).contains(&focal.min_field_share) {
                return fail(format!(
                    "focal.min_field_share {} outside [0, 1]",
                    focal.min_field_share
                ));
            }
        }
        if self.sweep.cutpoints.is_empty() && !self.sweep.continuous {
            return fail("sweep requests no models".into());
        }
        for &c in &self.sweep.cutpoints {
            if !(1..=MAX_CUTPOINT).contains(&c) {
                return fail(format!("sweep cutpoint {c} outside 1..={MAX_CUTPOINT}"));
            }
        }
        if self.effects.modes.is_empty() {
            return fail("effects.modes is empty".into());
        }
        self.effects.parsed_modes()?;
        for axis in [&self.effects.grid_x, &self.effects.grid_y] {
            if !GRID_AXES.contains(&axis.as_str()) {
                return fail(format!(
                    "unknown grid axis {axis:?}; expected one of {GRID_AXES:?}"
                ));
            }
        }
        if self.effects.grid_x == self.effects.grid_y {
            return fail("grid axes must differ".into());
        }
        if self.effects.grid_resolution < 2 {
            return fail("effects.grid_resolution must be at least 2".into());
        }
        if self.effects.bootstrap_replicates == 1 {
            return fail("effects.bootstrap_replicates needs at least 2, or 0 to disable".into());
        }
        if self.report.similarity_bins < 1 {
            return fail("report.similarity_bins must be positive".into());
        }
        if let Some(synth) = &self.synth {
            synth.validate()?;
        }
        Ok(())
    }

    /// The corpus source an `all` run starts from. Explicit `ingest` and
    /// `synth` invocations disambiguate themselves; `all` needs exactly one
    /// section present.
    pub fn corpus_source(&self) -> StageResult<Source> {
        match (&self.inputs, &self.synth) {
            (Some(_), None) => Ok(Source::Ingest),
            (None, Some(_)) => Ok(Source::Synth),
            (Some(_), Some(_)) => Err(Failure::input(
                "config has both [inputs] and [synth]; `all` needs exactly one corpus source",
            )),
            (None, None) => Err(Failure::input(
                "config has neither [inputs] nor [synth]; nothing to run `all` on",
            )),
        }
    }

    /// Resolved TOML echo written as `run.toml`.
    pub fn resolved_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Dotted-key flattening of the resolved config for the manifest.
    pub fn manifest_echo(&self) -> BTreeMap<String, String> {
        let value = toml::Value::try_from(self).expect("config serializes");
        let mut map = BTreeMap::new();
        flatten("", &value, &mut map);
        map
    }
}

fn flatten(prefix: &str, value: &toml::Value, out: &mut BTreeMap<String, String>) {
    match value {
        toml::Value::Table(table) => {
            for (k, v) in table {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out);
            }
        }
        toml::Value::String(s) => {
            out.insert(prefix.to_owned(), s.clone());
        }
        other => {
            out.insert(prefix.to_owned(), other.to_string());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proxcite::synth::{CollabModel, EmbeddingModel};

    fn synth_section() -> SynthConfig {
        SynthConfig {
            n_authors: 50,
            n_docs: 80,
            authors_per_doc: (1, 3),
            collaboration: CollabModel::Community {
                communities: 5,
                crosslink: 0.1,
            },
            embedding: EmbeddingModel {
                clusters: 3,
                dim: 8,
                noise: 0.3,
            },
            model: ModelConfig::default().spec(),
            true_beta: vec![-4.0, 0.5, 2.0, 1.5, 1.1, 0.7, 0.4, 0.2, 0.3],
            citations_per_doc: None,
            seed: 7,
        }
    }

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn resolved_toml_round_trips() {
        let mut config = RunConfig {
            synth: Some(synth_section()),
            ..RunConfig::default()
        };
        config.model.interactions = false;
        let text = config.resolved_toml();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, config);
    }

    #[test]
    fn echo_omits_the_output_directory() {
        let config = RunConfig {
            out: Some(PathBuf::from("/tmp/run")),
            ..RunConfig::default()
        };
        assert!(!config.resolved_toml().contains("/tmp/run"));
        assert!(!config.manifest_echo().contains_key("out"));
    }

    #[test]
    fn echo_flattens_nested_keys() {
        let config = RunConfig {
            synth: Some(synth_section()),
            ..RunConfig::default()
        };
        let echo = config.manifest_echo();
        assert_eq!(echo["pairs.cap"], "6");
        assert_eq!(echo["model.interactions"], "true");
        assert_eq!(echo["effects.grid_x"], "similarity");
        assert_eq!(echo["synth.collaboration.community.communities"], "5");
        assert!(echo["synth.true_beta"].starts_with('['));
    }

    #[test]
    fn overrides_replace_file_values() {
        let mut config = RunConfig {
            synth: Some(synth_section()),
            ..RunConfig::default()
        };
        config.apply_overrides(&Overrides {
            out: Some(PathBuf::from("runs/a")),
            seed: Some(99),
            cap: Some(4),
            negatives: Some(5_000),
            matched: true,
            cutpoint: Some(3),
            continuous_distance: false,
            no_interactions: true,
            group_effects: true,
        });
        assert_eq!(config.out.as_deref(), Some(Path::new("runs/a")));
        assert_eq!(config.pairs.seed, 99);
        assert_eq!(config.synth.as_ref().unwrap().seed, 99);
        assert_eq!(config.pairs.cap, 4);
        assert_eq!(config.pairs.negatives, 5_000);
        assert!(config.pairs.matched);
        assert_eq!(config.model.cutpoint, 3);
        assert!(!config.model.interactions);
        assert!(config.model.group_effects);
    }

    #[test]
    fn absent_flags_leave_the_file_alone() {
        let mut config = RunConfig::default();
        config.pairs.matched = true;
        config.model.interactions = false;
        config.apply_overrides(&Overrides::default());
        assert!(config.pairs.matched);
        assert!(!config.model.interactions);
    }

    #[test]
    fn validation_rejects_bad_values() {
        type Mutation = Box<dyn Fn(&mut RunConfig)>;
        let cases: Vec<(&str, Mutation)> = vec![
            ("cap", Box::new(|c| c.pairs.cap = 0)),
            ("negatives", Box::new(|c| c.pairs.negatives = 0)),
            ("cutpoint", Box::new(|c| c.model.cutpoint = 7)),
            ("tolerance", Box::new(|c| c.model.tolerance = 0.0)),
            ("sweep cutpoint", Box::new(|c| c.sweep.cutpoints = vec![9])),
            (
                "empty sweep",
                Box::new(|c| {
                    c.sweep.cutpoints.clear();
                    c.sweep.continuous = false;
                }),
            ),
            ("mode", Box::new(|c| c.effects.modes = vec!["mean".into()])),
            ("no modes", Box::new(|c| c.effects.modes.clear())),
            ("axis", Box::new(|c| c.effects.grid_x = "degree".into())),
            (
                "same axes",
                Box::new(|c| c.effects.grid_y = c.effects.grid_x.clone()),
            ),
            ("resolution", Box::new(|c| c.effects.grid_resolution = 1)),
            (
                "bootstrap",
                Box::new(|c| c.effects.bootstrap_replicates = 1),
            ),
            (
                "share",
                Box::new(|c| {
                    c.focal = Some(Focal {
                        field: "econ".into(),
                        min_papers: 1,
                        min_field_share: 1.5,
                    })
                }),
            ),
        ];
        for (name, mutate) in cases {
            let mut config = RunConfig::default();
            mutate(&mut config);
            assert!(config.validate().is_err(), "{name} should fail validation");
        }
    }

    #[test]
    fn all_needs_exactly_one_source() {
        let neither = RunConfig::default();
        assert!(neither.corpus_source().is_err());
        let synth_only = RunConfig {
            synth: Some(synth_section()),
            ..RunConfig::default()
        };
        assert_eq!(synth_only.corpus_source().unwrap(), Source::Synth);
        let both = RunConfig {
            inputs: Some(Inputs {
                authors: "a.csv".into(),
                documents: "d.jsonl".into(),
                citations: "c.csv".into(),
                embeddings: "e.jsonl".into(),
                embedding_dim: 8,
                career_mode: CareerModeConfig::Provided,
            }),
            synth: Some(synth_section()),
            ..RunConfig::default()
        };
        assert!(both.corpus_source().is_err());
    }
}
