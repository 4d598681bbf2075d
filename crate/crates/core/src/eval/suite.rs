use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{generate_map_with_density, make_instance, Instance};
use crate::error::{Error, Result};

/// Map draws per case before a cell is declared infeasible.
const MAX_MAP_DRAWS: usize = 100;

/// Step budget for an `m`×`m` map: 256 at 40 and 386 at 80, linear in
/// between and beyond, scaled proportionally (rounded up) below 40.
pub fn step_limit_for(size: usize) -> usize {
    if size <= 40 {
        (256 * size).div_ceil(40)
    } else {
        256 + (130 * (size - 40)).div_ceil(40)
    }
}

/// Parameters that fully determine a suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteSpec {
    pub seed: u64,
    pub density: f64,
    pub cases_per_cell: usize,
    /// (map size, agent count) cells.
    pub cells: Vec<(usize, usize)>,
}

impl SuiteSpec {
    /// Sizes 10, 20, 40 with 1, 2, 4, 8 agents, plus 16 agents on 40×40.
    pub fn desk(seed: u64, cases_per_cell: usize) -> Self {
        let mut cells = Vec::new();
        for size in [10, 20, 40] {
            for agents in [1, 2, 4, 8] {
                cells.push((size, agents));
            }
        }
        cells.push((40, 16));
        Self {
            seed,
            density: 0.3,
            cases_per_cell,
            cells,
        }
    }

    pub fn grid(
        seed: u64,
        density: f64,
        cases_per_cell: usize,
        sizes: &[usize],
        agents: &[usize],
    ) -> Self {
        let cells = sizes
            .iter()
            .flat_map(|&s| agents.iter().map(move |&a| (s, a)))
            .collect();
        Self {
            seed,
            density,
            cases_per_cell,
            cells,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteCase {
    pub id: String,
    pub size: usize,
    pub agents: usize,
    pub step_limit: usize,
    pub instance: Instance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedCell {
    pub size: usize,
    pub agents: usize,
    pub reason: String,
}

/// A generated benchmark.
#[derive(Clone, Debug, PartialEq)]
pub struct Suite {
    pub spec: SuiteSpec,
    pub cases: Vec<SuiteCase>,
    pub skipped: Vec<SkippedCell>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestCase {
    id: String,
    size: usize,
    agents: usize,
    step_limit: usize,
    file: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    engine_version: String,
    suite_hash: String,
    spec: SuiteSpec,
    #[serde(default)]
    skipped: Vec<SkippedCell>,
    #[serde(default, rename = "case")]
    cases: Vec<ManifestCase>,
}

pub const MANIFEST: &str = "manifest.toml";

fn case_file(id: &str) -> String {
    format!("instances/{id}.txt")
}

/// Generates every cell; cells that cannot host their agents are skipped
/// and listed in `skipped`.
pub fn generate_suite(spec: &SuiteSpec) -> Suite {
    let mut cases = Vec::new();
    let mut skipped = Vec::new();
    for &(size, agents) in &spec.cells {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(((size as u64) << 32) | agents as u64);
        let mut cell = Vec::with_capacity(spec.cases_per_cell);
        let mut failure = None;
        'cases: for k in 0..spec.cases_per_cell {
            for _ in 0..MAX_MAP_DRAWS {
                let map = generate_map_with_density(size, spec.density, &mut rng);
                if let Ok(instance) = make_instance(&map, agents, &mut rng) {
                    cell.push(SuiteCase {
                        id: format!("{size:03}x{agents:03}-{k:04}"),
                        size,
                        agents,
                        step_limit: step_limit_for(size),
                        instance,
                    });
                    continue 'cases;
                }
            }
            failure = Some(format!(
                "no feasible instance after {MAX_MAP_DRAWS} map draws"
            ));
            break;
        }
        match failure {
            None => cases.extend(cell),
            Some(reason) => {
                log::warn!("skipping cell {size}x{size} with {agents} agents: {reason}");
                skipped.push(SkippedCell {
                    size,
                    agents,
                    reason,
                });
            }
        }
    }
    cases.sort_by(|a, b| a.id.cmp(&b.id));
    Suite {
        spec: spec.clone(),
        cases,
        skipped,
    }
}

fn digest(mut files: Vec<(String, String)>) -> String {
    files.sort();
    let mut h = Sha256::new();
    for (name, text) in files {
        h.update(name.as_bytes());
        h.update([0]);
        h.update(text.as_bytes());
        h.update([0]);
    }
    format!("{:x}", h.finalize())
}

impl Suite {
    /// Digest over the instance files sorted by name.
    pub fn hash(&self) -> String {
        digest(
            self.cases
                .iter()
                .map(|c| (case_file(&c.id), c.instance.to_text()))
                .collect(),
        )
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join("instances"))?;
        for c in &self.cases {
            fs::write(dir.join(case_file(&c.id)), c.instance.to_text())?;
        }
        let manifest = Manifest {
            engine_version: crate::training::ENGINE_VERSION.to_string(),
            suite_hash: self.hash(),
            spec: self.spec.clone(),
            skipped: self.skipped.clone(),
            cases: self
                .cases
                .iter()
                .map(|c| ManifestCase {
                    id: c.id.clone(),
                    size: c.size,
                    agents: c.agents,
                    step_limit: c.step_limit,
                    file: case_file(&c.id),
                })
                .collect(),
        };
        let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
        fs::write(dir.join(MANIFEST), text)?;
        Ok(())
    }

    /// Reads a suite directory and checks the instance files, byte for
    /// byte, against the recorded hash.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path)?;
        let manifest: Manifest = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e
                .span()
                .map_or(0, |s| text[..s.start].lines().count().max(1)),
            msg: e.message().to_string(),
        })?;
        let mut cases = Vec::with_capacity(manifest.cases.len());
        let mut files = Vec::with_capacity(manifest.cases.len());
        for c in manifest.cases {
            let file = dir.join(&c.file);
            let body = fs::read_to_string(&file)?;
            files.push((c.file.clone(), body.clone()));
            let instance = Instance::from_text(&body, &file.display().to_string())?;
            if instance.map().size() != c.size || instance.num_agents() != c.agents {
                return Err(Error::InvalidInstance(format!(
                    "{} does not match its manifest entry",
                    c.file
                )));
            }
            cases.push(SuiteCase {
                id: c.id,
                size: c.size,
                agents: c.agents,
                step_limit: c.step_limit,
                instance,
            });
        }
        let actual = digest(files);
        if actual != manifest.suite_hash {
            return Err(Error::SuiteHashMismatch(manifest.suite_hash, actual));
        }
        Ok(Suite {
            spec: manifest.spec,
            cases,
            skipped: manifest.skipped,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::flood_fill_reference;

    #[test]
    fn step_limits() {
        assert_eq!(step_limit_for(40), 256);
        assert_eq!(step_limit_for(80), 386);
        assert_eq!(step_limit_for(10), 64);
        assert_eq!(step_limit_for(15), 96);
        assert_eq!(step_limit_for(11), 71);
    }

    #[test]
    fn cell_arithmetic() {
        let spec = SuiteSpec::grid(1, 0.3, 200, &[10, 20], &[1, 2, 4]);
        assert_eq!(generate_suite(&spec).cases.len(), 1200);
    }

    #[test]
    fn deterministic_and_valid() {
        let spec = SuiteSpec::grid(5, 0.3, 10, &[10, 20], &[2, 8]);
        let a = generate_suite(&spec);
        assert_eq!(a, generate_suite(&spec));
        assert_eq!(a.hash(), generate_suite(&spec).hash());
        for c in &a.cases {
            let map = c.instance.map();
            for (s, g) in c.instance.starts().iter().zip(c.instance.goals()) {
                let d = flood_fill_reference(map.cells(), map.size(), (g.row, g.col));
                assert!(d[s.row * map.size() + s.col].is_some());
            }
        }
    }

    #[test]
    fn infeasible_cell_is_skipped() {
        let spec = SuiteSpec::grid(1, 0.3, 3, &[4], &[1, 9]);
        let s = generate_suite(&spec);
        assert_eq!(s.cases.len(), 3);
        assert_eq!(s.skipped.len(), 1);
        assert_eq!((s.skipped[0].size, s.skipped[0].agents), (4, 9));
    }

    #[test]
    fn write_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SuiteSpec::grid(2, 0.3, 4, &[10], &[1, 3]);
        let s = generate_suite(&spec);
        s.write(dir.path()).unwrap();
        assert_eq!(Suite::load(dir.path()).unwrap(), s);
        let first = dir.path().join(case_file(&s.cases[0].id));
        let mut text = fs::read_to_string(&first).unwrap();
        text = text.replacen("\n.", "\n#", 1);
        fs::write(&first, text).unwrap();
        assert!(matches!(
            Suite::load(dir.path()),
            Err(Error::SuiteHashMismatch(..)) | Err(Error::InvalidInstance(_))
        ));
    }
}
