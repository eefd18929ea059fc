use std::collections::HashMap;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DecodeMode, GenerateError, GenerationConfig, GenerationRequest, Generator};
use crate::error::Error;
use crate::kg::QueryKey;
use crate::subgraph::query_rng;

/// Salt separating the corruption schedule from prompt sampling streams.
pub const CORRUPTION_SALT: u64 = 0x6d6f_636b_5f63_6f72;
const DRAW_SALT: u64 = 0x6d6f_636b_5f64_7277;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MockSpec {
    Perfect,
    /// Fraction of queries whose answers never include the gold entity.
    Corrupt(f64),
}

impl FromStr for MockSpec {
    type Err = Error;

    /// `perfect` or `corrupt:<rate>`.
    fn from_str(s: &str) -> Result<Self, Error> {
        match s.split_once(':') {
            None if s == "perfect" => Ok(MockSpec::Perfect),
            Some(("corrupt", rate)) => {
                let rate: f64 = rate
                    .parse()
                    .map_err(|_| Error::Config(format!("bad corruption rate `{rate}`")))?;
                if !(0.0..=1.0).contains(&rate) {
                    return Err(Error::Config(format!("corruption rate {rate} outside [0, 1]")));
                }
                Ok(MockSpec::Corrupt(rate))
            }
            _ => Err(Error::Config(format!(
                "unknown mock `{s}` (expected `perfect` or `corrupt:<rate>`)"
            ))),
        }
    }
}

/// Deterministic stand-in for a model: answers from a gold lookup, wrong on a
/// fixed pseudo-random subset of queries. Pure, so safe to call from any
/// number of threads.
#[derive(Debug, Clone)]
pub struct MockOracle {
    golds: HashMap<QueryKey, String>,
    pool: Vec<String>,
    spec: MockSpec,
    seed: u64,
}

impl MockOracle {
    /// `golds` maps queries to answers; the distinct answers double as the
    /// distractor pool.
    pub fn new(golds: HashMap<QueryKey, String>, spec: MockSpec, seed: u64) -> Self {
        let mut pool: Vec<String> = golds.values().cloned().collect();
        pool.sort();
        pool.dedup();
        MockOracle {
            golds,
            pool,
            spec,
            seed,
        }
    }

    pub fn is_corrupted(&self, key: QueryKey) -> bool {
        match self.spec {
            MockSpec::Perfect => false,
            MockSpec::Corrupt(rate) => {
                query_rng(self.seed ^ CORRUPTION_SALT, key).gen::<f64>() < rate
            }
        }
    }

    fn distractor(&self, rng: &mut ChaCha8Rng, gold: &str) -> String {
        let others = self.pool.iter().filter(|p| p.as_str() != gold).count();
        if others == 0 {
            return format!("not {gold}");
        }
        let pick = rng.gen_range(0..others);
        self.pool
            .iter()
            .filter(|p| p.as_str() != gold)
            .nth(pick)
            .cloned()
            .expect("index within filtered pool")
    }
}

impl Generator for MockOracle {
    fn generate(
        &self,
        req: &GenerationRequest<'_>,
        cfg: &GenerationConfig,
    ) -> Result<Vec<String>, GenerateError> {
        let gold = self
            .golds
            .get(&req.key)
            .ok_or_else(|| GenerateError::Malformed(format!("mock has no answer for {}", req.key)))?;
        let corrupted = self.is_corrupted(req.key);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ DRAW_SALT ^ u64::from(req.attempt));
        rng.set_stream(req.key.stream());

        let n = match cfg.mode {
            DecodeMode::Greedy => 1,
            DecodeMode::Sampled => cfg.num_return_sequences,
        };
        let out = (0..n)
            .map(|i| {
                let first = req.attempt == 0 && i == 0;
                if first && !corrupted {
                    gold.clone()
                } else {
                    self.distractor(&mut rng, gold)
                }
            })
            .collect();
        Ok(out)
    }

    fn describe(&self) -> String {
        match self.spec {
            MockSpec::Perfect => "mock:perfect".into(),
            MockSpec::Corrupt(rate) => format!("mock:corrupt:{rate}:seed={}", self.seed),
        }
    }
}
