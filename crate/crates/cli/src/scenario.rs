//! Scenario files: versioned JSON, unknown fields rejected.

use std::fs;
use std::path::{Path, PathBuf};

use blockmf::meanfield::default_dt;
use blockmf::rates::rate_model_from_value;
use blockmf::{BlockGraph, BlockSize, GraphFamily, Measure, NodeClass, ProportionTargets, RateModel};
use serde::Deserialize;

use crate::CliError;

pub const SCHEMA: &str = "blockmf/1";
const DEFAULT_GRID: usize = 50;
const DEFAULT_REPLICAS: usize = 100;
const DEFAULT_PICARD_TOL: f64 = 1e-8;
const DEFAULT_PICARD_ITER: usize = 50;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    schema: String,
    seed: Option<u64>,
    graph: Option<GraphSpec>,
    family: Option<FamilySpec>,
    rates: serde_json::Value,
    targets: Option<ProportionTargets>,
    init: InitSpec,
    horizon: f64,
    dt: Option<f64>,
    grid: Option<usize>,
    replicas: Option<usize>,
    n_list: Option<Vec<usize>>,
    tagged: Option<Vec<(usize, ClassTag)>>,
    picard: Option<PicardSpec>,
    flow_csv: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum GraphSpec {
    Explicit {
        blocks: Vec<BlockSize>,
        peripheral_edges: Vec<[usize; 2]>,
    },
    File {
        path: PathBuf,
    },
    Complete {
        blocks: Vec<BlockSize>,
    },
    Regular {
        blocks: Vec<BlockSize>,
        fractions: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum FamilySpec {
    Complete {
        block_fractions: Vec<f64>,
        central_fractions: Vec<f64>,
    },
    Regular {
        block_fractions: Vec<f64>,
        central_fractions: Vec<f64>,
        fractions: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum InitSpec {
    PerComponent(Vec<Vec<f64>>),
    Shared(Vec<f64>),
}

#[derive(Debug, Clone, Copy, Deserialize)]
enum ClassTag {
    #[serde(rename = "c")]
    Central,
    #[serde(rename = "p")]
    Peripheral,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PicardSpec {
    tol: Option<f64>,
    max_iter: Option<usize>,
}

/// Values given on the command line that take precedence over the file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub grid: Option<usize>,
}

/// A checked scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub seed: u64,
    pub graph: Option<BlockGraph>,
    pub family: Option<GraphFamily>,
    pub model: RateModel,
    pub targets: ProportionTargets,
    pub explicit_targets: bool,
    pub init: Vec<Measure>,
    pub horizon: f64,
    pub dt: f64,
    pub grid: usize,
    pub replicas: usize,
    pub n_list: Vec<usize>,
    pub tagged: Vec<(usize, NodeClass)>,
    pub picard_tol: f64,
    pub picard_max_iter: usize,
    pub flow_csv: Option<PathBuf>,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

fn resolve(base: &Path, p: &Path) -> Result<PathBuf, CliError> {
    let full = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    if !full.is_file() {
        return Err(invalid(format!("referenced file {} does not exist", full.display())));
    }
    Ok(full)
}

impl Scenario {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base, overrides)
    }

    /// Parse scenario text; relative paths are taken from `base`.
    pub fn parse(text: &str, base: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let raw: ScenarioFile = serde_json::from_str(text).map_err(|e| invalid(format!("scenario: {e}")))?;
        if raw.schema != SCHEMA {
            return Err(invalid(format!("scenario: schema must be \"{SCHEMA}\", found \"{}\"", raw.schema)));
        }
        let seed = overrides
            .seed
            .or(raw.seed)
            .ok_or_else(|| invalid("scenario: field `seed` is required"))?;

        let graph = match raw.graph {
            None => None,
            Some(GraphSpec::Explicit { blocks, peripheral_edges }) => {
                let edges: Vec<(usize, usize)> = peripheral_edges.iter().map(|e| (e[0], e[1])).collect();
                Some(BlockGraph::from_edges(&blocks, &edges)?)
            }
            Some(GraphSpec::File { path }) => {
                let full = resolve(base, &path)?;
                let text = fs::read_to_string(&full).map_err(|e| invalid(format!("cannot read {}: {e}", full.display())))?;
                Some(BlockGraph::from_json(&text)?)
            }
            Some(GraphSpec::Complete { blocks }) => Some(BlockGraph::complete_peripheral(&blocks)?),
            Some(GraphSpec::Regular { blocks, fractions }) => Some(BlockGraph::regular_peripheral(&blocks, &fractions)?),
        };
        let family = raw.family.map(|f| match f {
            FamilySpec::Complete {
                block_fractions,
                central_fractions,
            } => GraphFamily::CompletePeripheral {
                block_fractions,
                central_fractions,
            },
            FamilySpec::Regular {
                block_fractions,
                central_fractions,
                fractions,
            } => GraphFamily::RegularPeripheral {
                block_fractions,
                central_fractions,
                fractions,
            },
        });
        let blocks = match (&graph, &family) {
            (Some(g), Some(f)) if g.block_count() != f.block_count() => {
                return Err(invalid(format!(
                    "scenario: graph has {} blocks, family has {}",
                    g.block_count(),
                    f.block_count()
                )))
            }
            (Some(g), _) => g.block_count(),
            (None, Some(f)) => f.block_count(),
            (None, None) => return Err(invalid("scenario: either `graph` or `family` is required")),
        };
        if let Some(f) = &family {
            let (alpha, p_c) = match f {
                GraphFamily::CompletePeripheral {
                    block_fractions,
                    central_fractions,
                }
                | GraphFamily::RegularPeripheral {
                    block_fractions,
                    central_fractions,
                    ..
                } => (block_fractions, central_fractions),
            };
            if alpha.len() != p_c.len() {
                return Err(invalid("family: block_fractions and central_fractions differ in length"));
            }
            if let GraphFamily::RegularPeripheral { fractions, .. } = f {
                if fractions.len() != blocks || fractions.iter().any(|row| row.len() != blocks) {
                    return Err(invalid(format!("family: fractions must be {blocks} x {blocks}")));
                }
            }
            f.limit_targets().validate()?;
        }

        let model: RateModel = rate_model_from_value(&raw.rates, blocks)?;
        let explicit_targets = raw.targets.is_some();
        let targets = match raw.targets {
            Some(t) => t,
            None => match (&family, &graph) {
                (Some(f), _) => f.limit_targets(),
                (None, Some(g)) => ProportionTargets::from_graph(g),
                (None, None) => unreachable!(),
            },
        };
        if targets.block_count() != blocks {
            return Err(invalid(format!(
                "targets: {} blocks given, scenario has {blocks}",
                targets.block_count()
            )));
        }
        targets.validate()?;

        let k = model.colors();
        let rows = match raw.init {
            InitSpec::Shared(m) => vec![m; 2 * blocks],
            InitSpec::PerComponent(rows) => rows,
        };
        if rows.len() != 2 * blocks {
            return Err(invalid(format!(
                "init: {} measures given, expected {} (central and peripheral per block)",
                rows.len(),
                2 * blocks
            )));
        }
        let mut init = Vec::with_capacity(rows.len());
        for (c, row) in rows.into_iter().enumerate() {
            let (j, class) = blockmf::component_of(c);
            if row.len() != k {
                return Err(invalid(format!("init: block {j} ({}) has {} colors, expected {k}", class.name(), row.len())));
            }
            init.push(
                Measure::probability(row)
                    .map_err(|e| invalid(format!("init: block {j} ({}): {e}", class.name())))?,
            );
        }

        if !(raw.horizon > 0.0 && raw.horizon.is_finite()) {
            return Err(invalid(format!("horizon: {} must be positive and finite", raw.horizon)));
        }
        let dt = raw.dt.unwrap_or_else(|| default_dt(&model));
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(invalid(format!("dt: {dt} must be positive and finite")));
        }
        let grid = overrides.grid.or(raw.grid).unwrap_or(DEFAULT_GRID);
        if grid == 0 {
            return Err(invalid("grid: must be at least 1"));
        }
        let replicas = raw.replicas.unwrap_or(DEFAULT_REPLICAS);
        if replicas == 0 {
            return Err(invalid("replicas: must be at least 1"));
        }
        let n_list = raw.n_list.unwrap_or_default();
        if n_list.windows(2).any(|w| w[1] <= w[0]) || n_list.contains(&0) {
            return Err(invalid("n_list: must be positive and strictly increasing"));
        }
        if let Some(f) = &family {
            for &n in &n_list {
                f.sizes(n)?;
            }
        }
        let tagged = match raw.tagged {
            Some(t) => t
                .into_iter()
                .map(|(j, c)| {
                    let class = match c {
                        ClassTag::Central => NodeClass::Central,
                        ClassTag::Peripheral => NodeClass::Peripheral,
                    };
                    if j >= blocks {
                        Err(invalid(format!("tagged: block {j} does not exist")))
                    } else {
                        Ok((j, class))
                    }
                })
                .collect::<Result<Vec<_>, _>>()?,
            None => vec![(0, NodeClass::Central), (blocks - 1, NodeClass::Peripheral)],
        };
        if tagged.is_empty() || tagged.len() > 3 {
            return Err(invalid("tagged: between 1 and 3 nodes"));
        }
        let (picard_tol, picard_max_iter) = match raw.picard {
            Some(p) => (
                p.tol.unwrap_or(DEFAULT_PICARD_TOL),
                p.max_iter.unwrap_or(DEFAULT_PICARD_ITER),
            ),
            None => (DEFAULT_PICARD_TOL, DEFAULT_PICARD_ITER),
        };
        if !(picard_tol > 0.0) || picard_max_iter == 0 {
            return Err(invalid("picard: tol must be positive and max_iter at least 1"));
        }
        let flow_csv = raw.flow_csv.map(|p| resolve(base, &p)).transpose()?;
        Ok(Self {
            seed,
            graph,
            family,
            model,
            targets,
            explicit_targets,
            init,
            horizon: raw.horizon,
            dt,
            grid,
            replicas,
            n_list,
            tagged,
            picard_tol,
            picard_max_iter,
            flow_csv,
        })
    }

    pub fn require_graph(&self) -> Result<&BlockGraph, CliError> {
        self.graph.as_ref().ok_or_else(|| invalid("scenario: this command needs a `graph`"))
    }

    pub fn require_family(&self) -> Result<&GraphFamily, CliError> {
        let f = self.family.as_ref().ok_or_else(|| invalid("scenario: this command needs a `family`"))?;
        if self.n_list.is_empty() {
            return Err(invalid("scenario: this command needs a non-empty `n_list`"));
        }
        Ok(f)
    }
}
