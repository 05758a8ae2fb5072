//! Phantom dataset directories: generation, loading and pool construction.
//!
//! Layout: `dataset.json` plus, per case, the VOL1 triples
//! `<id>_image`, `<id>_mask`, `<id>_labels` and the tree `<id>_tree.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wdunet_core::seed::derive_seed;
use wdunet_core::{
    extract_patches, generate_phantom, init_splits, load_volume, normalize, save_volume, Patch, PhantomSpec, Pool,
    SplitFractions, TreeGraph, Volume,
};

use crate::error::{AlError, Result};

pub const MANIFEST: &str = "dataset.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateConfig {
    /// Number of cases drawn from `phantom` when `cases` is empty.
    pub count: usize,
    pub seed: u64,
    /// Template for the generated grid; its `seed` is replaced per case.
    pub phantom: PhantomSpec,
    /// Explicit per-case specs; overrides `count` and `phantom`.
    pub cases: Vec<PhantomSpec>,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            count: 20,
            seed: 0,
            phantom: PhantomSpec::default(),
            cases: Vec::new(),
        }
    }
}

impl GenerateConfig {
    /// The concrete spec of every case.
    pub fn specs(&self) -> Vec<PhantomSpec> {
        if !self.cases.is_empty() {
            return self.cases.clone();
        }
        (0..self.count)
            .map(|i| PhantomSpec {
                seed: derive_seed(self.seed, "phantom", i as u64),
                ..self.phantom.clone()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub id: String,
    pub spec: PhantomSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub generator_seed: u64,
    pub cases: Vec<CaseRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub id: String,
    pub image: Volume,
    pub mask: Volume,
    pub labels: Volume,
    pub tree: TreeGraph,
}

pub fn case_id(index: usize) -> String {
    format!("case_{index:03}")
}

fn case_paths(dir: &Path, id: &str) -> [PathBuf; 4] {
    [
        dir.join(format!("{id}_image")),
        dir.join(format!("{id}_mask")),
        dir.join(format!("{id}_labels")),
        dir.join(format!("{id}_tree.json")),
    ]
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(AlError::json(path))?;
    text.push('\n');
    fs::write(path, text).map_err(AlError::io(path))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(AlError::io(path))?;
    serde_json::from_str(&text).map_err(AlError::json(path))
}

/// Writes every case of `config` into `dir` (which must exist). All specs
/// are validated first so a bad one fails before anything is written.
pub fn generate_dataset(config: &GenerateConfig, dir: &Path) -> Result<DatasetManifest> {
    let specs = config.specs();
    if specs.is_empty() {
        return Err(AlError::Config("generate: no cases requested".into()));
    }
    for (index, s) in specs.iter().enumerate() {
        s.validate().map_err(|source| AlError::Phantom { index, source })?;
    }
    let mut cases = Vec::with_capacity(specs.len());
    for (index, spec) in specs.into_iter().enumerate() {
        let ph = generate_phantom(&spec).map_err(|source| AlError::Phantom { index, source })?;
        let id = case_id(index);
        let [img, msk, lbl, tree] = case_paths(dir, &id);
        save_volume(&ph.image, &img)?;
        save_volume(&ph.mask, &msk)?;
        save_volume(&ph.branch_labels, &lbl)?;
        write_json(&tree, &ph.tree)?;
        cases.push(CaseRecord { id, spec });
    }
    let manifest = DatasetManifest {
        generator_seed: config.seed,
        cases,
    };
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST);
    if !path.is_file() {
        return Err(AlError::Data(format!("{} not found", path.display())));
    }
    let m: DatasetManifest = read_json(&path)?;
    if m.cases.is_empty() {
        return Err(AlError::Data(format!("{} lists no cases", path.display())));
    }
    Ok(m)
}

pub fn load_case(dir: &Path, id: &str) -> Result<Case> {
    let [img, msk, lbl, tree] = case_paths(dir, id);
    Ok(Case {
        id: id.to_string(),
        image: load_volume(&img)?,
        mask: load_volume(&msk)?,
        labels: load_volume(&lbl)?,
        tree: read_json(&tree)?,
    })
}

/// Every case listed in the manifest, in manifest order.
pub fn load_dataset(dir: &Path) -> Result<Vec<Case>> {
    load_manifest(dir)?.cases.iter().map(|c| load_case(dir, &c.id)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub dir: PathBuf,
    pub patch_shape: [usize; 3],
    pub stride: [usize; 3],
    pub initial_labeled: f64,
    pub unlabeled: f64,
    pub test: f64,
    /// Assign whole cases to one split.
    pub case_level: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("data"),
            patch_shape: [32, 32, 32],
            stride: [32, 32, 32],
            initial_labeled: 0.15,
            unlabeled: 0.55,
            test: 0.30,
            case_level: false,
        }
    }
}

impl DataConfig {
    pub fn fractions(&self) -> SplitFractions {
        SplitFractions {
            initial_labeled: self.initial_labeled,
            unlabeled: self.unlabeled,
            test: self.test,
        }
    }
}

/// Patches of every case with normalized images, in case then window order.
pub fn case_patches(cases: &[Case], config: &DataConfig) -> Result<Vec<Patch>> {
    let mut out = Vec::new();
    for c in cases {
        let patches = extract_patches(
            &c.id,
            &c.image,
            &c.mask,
            &c.labels,
            Some(&c.tree),
            config.patch_shape,
            config.stride,
        )?;
        out.extend(patches.into_iter().map(|mut p| {
            p.image = normalize(&p.image);
            p
        }));
    }
    Ok(out)
}

/// Seeded L0 / U / test pool over the patches of `cases`.
pub fn build_pool(cases: &[Case], config: &DataConfig, seed: u64) -> Result<Pool> {
    let patches = case_patches(cases, config)?;
    if patches.is_empty() {
        return Err(AlError::Data("dataset yields no patches".into()));
    }
    Ok(init_splits(patches, config.fractions(), seed, config.case_level)?)
}
