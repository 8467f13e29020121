//! Seeded synthetic datasets with one planted length-2 rule
//! `signs(X, Z, T3) <= meets(X, Y, T1) & visits(Y, Z, T2)`, used by tests,
//! the acceptance suite and demos.
//!
//! Every instance places `meets` at time `4i` and `visits` at `4i + 1`; the
//! head follows at `4i + 2` with the firing probability. Training instances
//! go to train; held-out instances put their bodies in valid and their
//! (always present) heads in test, so test holds exactly the planted queries.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{splits_from_rows, CategorySource, Dataset, RowFormat};
use crate::error::Result;

pub const BODY_FIRST: &str = "meets";
pub const BODY_SECOND: &str = "visits";
pub const HEAD: &str = "signs";
pub const NOISE: &str = "mentions";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantedConfig {
    pub instances: usize,
    pub fire_probability: f64,
    pub test_instances: usize,
    /// Entities per role drawn from a shared pool of this size; `None` gives
    /// every instance fresh entities.
    pub pool: Option<usize>,
    /// Categories the third role is spread over.
    pub object_categories: usize,
    /// Random `mentions` facts among instance entities.
    pub noise_facts: usize,
    /// With a pool, the chance that an instance's place is drawn from the
    /// category its person prefers (`person index % object_categories`).
    pub category_affinity: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            instances: 200,
            fire_probability: 0.7,
            test_instances: 50,
            pool: None,
            object_categories: 1,
            noise_facts: 0,
            category_affinity: 0.0,
            seed: 1,
        }
    }
}

pub type Row = Vec<String>;

#[derive(Debug, Clone, PartialEq)]
pub struct Planted {
    pub train: Vec<Row>,
    pub valid: Vec<Row>,
    pub test: Vec<Row>,
    /// Training instances whose head was emitted.
    pub fired: usize,
}

struct Entity {
    name: String,
    category: String,
}

fn row(s: &Entity, r: &str, o: &Entity, t: usize) -> Row {
    vec![
        s.name.clone(),
        r.to_string(),
        o.name.clone(),
        t.to_string(),
        s.category.clone(),
        o.category.clone(),
    ]
}

pub fn generate(config: &PlantedConfig) -> Planted {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let object_categories = config.object_categories.max(1);
    let total = config.instances + config.test_instances;
    let entity = |role: &str, index: usize| -> Entity {
        let category = match role {
            "p" => "Person".to_string(),
            "o" => "Org".to_string(),
            _ => format!("Place{}", index % object_categories),
        };
        Entity {
            name: format!("{role}{index}"),
            category,
        }
    };
    let index = |i: usize, preferred: Option<usize>, rng: &mut ChaCha8Rng| -> usize {
        let Some(p) = config.pool else {
            return i;
        };
        let p = p.max(1);
        match preferred {
            Some(c)
                if c < p
                    && config.category_affinity > 0.0
                    && rng.random_bool(config.category_affinity) =>
            {
                let slots = p.div_ceil(object_categories);
                loop {
                    let j = rng.random_range(0..slots) * object_categories + c;
                    if j < p {
                        return j;
                    }
                }
            }
            _ => rng.random_range(0..p),
        }
    };
    let mut train = Vec::new();
    let mut valid = Vec::new();
    let mut test = Vec::new();
    let mut fired = 0;
    let mut seen: Vec<Entity> = Vec::new();
    for i in 0..total {
        let ai = index(i, None, &mut rng);
        let bi = index(i, None, &mut rng);
        let ci = index(i, Some(ai % object_categories), &mut rng);
        let (a, b, c) = (entity("p", ai), entity("o", bi), entity("l", ci));
        let t = 4 * i;
        if i < config.instances {
            train.push(row(&a, BODY_FIRST, &b, t));
            train.push(row(&b, BODY_SECOND, &c, t + 1));
            if rng.random_bool(config.fire_probability) {
                train.push(row(&a, HEAD, &c, t + 2));
                fired += 1;
            }
        } else {
            valid.push(row(&a, BODY_FIRST, &b, t));
            valid.push(row(&b, BODY_SECOND, &c, t + 1));
            test.push(row(&a, HEAD, &c, t + 2));
        }
        if i < config.instances {
            seen.extend([a, b, c]);
        }
    }
    let horizon = 4 * config.instances.max(1);
    for _ in 0..config.noise_facts {
        if seen.len() < 2 {
            break;
        }
        let s = rng.random_range(0..seen.len());
        let mut o = rng.random_range(0..seen.len() - 1);
        if o >= s {
            o += 1;
        }
        let t = rng.random_range(0..horizon);
        train.push(row(&seen[s], NOISE, &seen[o], t));
    }
    Planted {
        train,
        valid,
        test,
        fired,
    }
}

impl Planted {
    pub fn dataset(&self) -> Result<Dataset> {
        splits_from_rows(
            &self.train,
            &self.valid,
            &self.test,
            RowFormat::Sextuple,
            &CategorySource::Rows,
        )
    }

    /// Writes `train.txt`, `valid.txt` and `test.txt` as sextuple files.
    pub fn write(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        for (name, rows) in [
            ("train.txt", &self.train),
            ("valid.txt", &self.valid),
            ("test.txt", &self.test),
        ] {
            let mut out = io::BufWriter::new(fs::File::create(dir.join(name))?);
            for r in rows {
                writeln!(out, "{}", r.join("\t"))?;
            }
            out.flush()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_instances_have_the_planted_shape() {
        let p = generate(&PlantedConfig {
            instances: 20,
            test_instances: 5,
            ..PlantedConfig::default()
        });
        assert_eq!(p.train.len(), 40 + p.fired);
        assert_eq!(p.valid.len(), 10);
        assert_eq!(p.test.len(), 5);
        assert!(p.test.iter().all(|r| r[1] == HEAD));
        let ds = p.dataset().unwrap();
        assert_eq!(ds.vocab.categories.len(), 3);
        assert_eq!(ds.test.base_facts().len(), 5);
    }

    #[test]
    fn same_seed_same_rows() {
        let c = PlantedConfig {
            pool: Some(7),
            noise_facts: 30,
            object_categories: 3,
            ..PlantedConfig::default()
        };
        assert_eq!(generate(&c), generate(&c));
        assert_ne!(generate(&c), generate(&PlantedConfig { seed: 2, ..c }));
    }
}
