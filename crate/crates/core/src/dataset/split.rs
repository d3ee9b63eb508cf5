use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Block-hold-out assignment of whole blocks to train/val/test.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    /// cultivar → [(block, split)]
    pub assignment: BTreeMap<String, Vec<(String, Split)>>,
    /// Blocks of cultivars with a single block; left out of every split.
    pub excluded: Vec<String>,
}

impl SplitManifest {
    pub fn split_of(&self, block: &str) -> Option<Split> {
        let has = |v: &Vec<String>| v.iter().any(|b| b == block);
        if has(&self.train) {
            Some(Split::Train)
        } else if has(&self.val) {
            Some(Split::Val)
        } else if has(&self.test) {
            Some(Split::Test)
        } else {
            None
        }
    }

    pub fn blocks(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

fn key_of(s: &str) -> u64 {
    // FNV-1a; only used to key per-cultivar RNG streams.
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Per cultivar with n blocks (shuffled by `seed`): the first ⌈n/3⌉ go to
/// train and the rest alternate val, test, val, … A cultivar with two
/// blocks gets one train and one test block; a single-block cultivar is
/// excluded.
pub fn split_bho(blocks: &[(String, String)], seed: u64) -> Result<SplitManifest> {
    let mut by_cultivar: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (block, cultivar) in blocks {
        let list = by_cultivar.entry(cultivar.as_str()).or_default();
        if list.contains(&block.as_str()) {
            return Err(param_err!("block `{block}` listed twice"));
        }
        list.push(block.as_str());
    }
    let mut m = SplitManifest::default();
    for (cultivar, mut list) in by_cultivar {
        list.sort_unstable();
        if list.len() < 2 {
            m.excluded.extend(list.iter().map(|s| s.to_string()));
            continue;
        }
        Rng::derive(seed, &[key_of(cultivar)]).shuffle(&mut list);
        let n = list.len();
        let n_train = n.div_ceil(3);
        let mut rows = Vec::with_capacity(n);
        for (i, b) in list.iter().enumerate() {
            let split = if i < n_train {
                Split::Train
            } else if n == 2 || (i - n_train) % 2 == 1 {
                Split::Test
            } else {
                Split::Val
            };
            match split {
                Split::Train => m.train.push(b.to_string()),
                Split::Val => m.val.push(b.to_string()),
                Split::Test => m.test.push(b.to_string()),
            }
            rows.push((b.to_string(), split));
        }
        m.assignment.insert(cultivar.to_string(), rows);
    }
    Ok(m)
}
