//! On-disk dataset layout:
//!
//! ```text
//! <dir>/manifest.json          generator config, seed, split, per-sample metadata
//! <dir>/samples/NNNNN.bin      CMAVIT1 archive with records image, climate, target
//! <dir>/context/<block>.txt    management text, one file per block
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, FieldSample, GenConfig, SplitManifest};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT: &str = "cmavit-dataset-1";

#[derive(Serialize, Deserialize)]
struct SampleEntry {
    file: String,
    block_id: String,
    cultivar: String,
    year: u32,
    crop_index: usize,
    days: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    seed: u64,
    gen_config: GenConfig,
    split: SplitManifest,
    samples: Vec<SampleEntry>,
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

pub fn save_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    mkdir(&dir.join("samples"))?;
    mkdir(&dir.join("context"))?;
    let mut contexts: BTreeMap<&str, &str> = BTreeMap::new();
    let mut entries = Vec::with_capacity(ds.samples.len());
    for (i, s) in ds.samples.iter().enumerate() {
        let file = format!("samples/{i:05}.bin");
        checkpoint::save(
            &dir.join(&file),
            [("image", &s.image), ("climate", &s.climate), ("target", &s.target)],
        )?;
        if let Some(prev) = contexts.insert(&s.block_id, &s.context_text) {
            if prev != s.context_text {
                return Err(Error::Data(format!("block {} has differing context texts", s.block_id)));
            }
        }
        entries.push(SampleEntry {
            file,
            block_id: s.block_id.clone(),
            cultivar: s.cultivar.clone(),
            year: s.year,
            crop_index: s.crop_index,
            days: s.days.clone(),
        });
    }
    for (block, text) in contexts {
        let p = dir.join("context").join(format!("{block}.txt"));
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        seed: ds.seed,
        gen_config: ds.config.clone(),
        split: ds.split.clone(),
        samples: entries,
    };
    let p = dir.join(MANIFEST_FILE);
    fs::write(&p, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&p, e))
}

fn take(records: &mut BTreeMap<String, Tensor>, name: &str, file: &str) -> Result<Tensor> {
    records
        .remove(name)
        .ok_or_else(|| Error::Data(format!("{file}: missing record `{name}`")))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let p = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let m: Manifest = serde_json::from_str(&text)?;
    if m.format != FORMAT {
        return Err(Error::Data(format!("unsupported dataset format `{}`", m.format)));
    }
    let mut contexts: BTreeMap<String, String> = BTreeMap::new();
    let mut samples = Vec::with_capacity(m.samples.len());
    for e in m.samples {
        let mut records: BTreeMap<String, Tensor> = checkpoint::load(&dir.join(&e.file))?.into_iter().collect();
        if !contexts.contains_key(&e.block_id) {
            let cp = dir.join("context").join(format!("{}.txt", e.block_id));
            let t = fs::read_to_string(&cp).map_err(|err| Error::io(&cp, err))?;
            contexts.insert(e.block_id.clone(), t);
        }
        let s = FieldSample {
            image: take(&mut records, "image", &e.file)?,
            climate: take(&mut records, "climate", &e.file)?,
            target: take(&mut records, "target", &e.file)?,
            context_text: contexts[&e.block_id].clone(),
            block_id: e.block_id,
            cultivar: e.cultivar,
            year: e.year,
            crop_index: e.crop_index,
            days: e.days,
        };
        s.validate(m.gen_config.timesteps)?;
        samples.push(s);
    }
    Ok(Dataset {
        seed: m.seed,
        config: m.gen_config,
        samples,
        split: m.split,
    })
}
