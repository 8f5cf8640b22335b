//! `--dataset` values: a synthetic spec or a directory of labeled clouds.
//!
//! ```text
//! synth                                   default spec, seed from --seed
//! synth:per_class=50,points=256,noise=0.02,seed=7
//! path/to/dir                             dir/train/<class>/*, dir/test/<class>/*
//! ```
//!
//! Directory classes are the sorted subdirectory names of `train/`; files
//! are read in name order and normalized to the unit sphere.

use std::fs;
use std::path::Path;

use odf_core::io::{generate_synthetic_dataset, read_point_cloud, CloudFormat, SyntheticDatasetSpec};
use odf_core::{normalize_to_unit_sphere, PointCloud};

use crate::error::{CliError, CliResult};

pub struct Dataset {
    pub name: String,
    pub classes: usize,
    pub train: Vec<PointCloud>,
    pub test: Vec<PointCloud>,
}

pub fn parse_synth_spec(text: &str, default_seed: u64) -> CliResult<SyntheticDatasetSpec> {
    let mut spec = SyntheticDatasetSpec {
        seed: default_seed,
        ..SyntheticDatasetSpec::default()
    };
    let Some(rest) = text.strip_prefix("synth").filter(|r| r.is_empty() || r.starts_with(':')) else {
        return Err(CliError::Validation(format!("not a synthetic spec: {text}")));
    };
    for pair in rest.trim_start_matches(':').split(',').filter(|p| !p.is_empty()) {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Validation(format!("dataset option {pair:?} is not key=value")))?;
        let bad = || CliError::Validation(format!("bad value for dataset option {key}: {value:?}"));
        match key {
            "per_class" => spec.samples_per_class = value.parse().map_err(|_| bad())?,
            "points" => spec.points_per_cloud = value.parse().map_err(|_| bad())?,
            "noise" => spec.noise_sigma = value.parse().map_err(|_| bad())?,
            "seed" => spec.seed = value.parse().map_err(|_| bad())?,
            _ => return Err(CliError::Validation(format!("unknown dataset option {key:?}"))),
        }
    }
    if spec.samples_per_class < 5 || spec.points_per_cloud < 33 {
        return Err(CliError::Validation(
            "synthetic dataset needs per_class >= 5 (one test cloud per class) and points >= 33".into(),
        ));
    }
    if !(spec.noise_sigma >= 0.0 && spec.noise_sigma.is_finite()) {
        return Err(CliError::Validation(format!("noise {} must be finite and >= 0", spec.noise_sigma)));
    }
    Ok(spec)
}

pub fn load_dataset(arg: &str, default_seed: u64) -> CliResult<Dataset> {
    if arg == "synth" || arg.starts_with("synth:") {
        let spec = parse_synth_spec(arg, default_seed)?;
        let ds = generate_synthetic_dataset(&spec);
        return Ok(Dataset {
            name: format!(
                "synth(per_class={},points={},noise={},seed={})",
                spec.samples_per_class, spec.points_per_cloud, spec.noise_sigma, spec.seed
            ),
            classes: ds.class_count(),
            train: ds.train,
            test: ds.test,
        });
    }
    let root = Path::new(arg);
    if !root.is_dir() {
        return Err(CliError::Validation(format!(
            "dataset {arg:?} is neither a synth spec nor a directory"
        )));
    }
    let classes = sorted_entries(&root.join("train"), true)?;
    if classes.len() < 2 {
        return Err(CliError::Validation(format!("{arg}/train needs at least two class directories")));
    }
    let names: Vec<String> = classes
        .iter()
        .map(|p| p.file_name().expect("entry").to_string_lossy().into_owned())
        .collect();
    let split = |part: &str| -> CliResult<Vec<PointCloud>> {
        let mut out = Vec::new();
        for (label, name) in names.iter().enumerate() {
            let dir = root.join(part).join(name);
            if !dir.is_dir() {
                continue;
            }
            for file in sorted_entries(&dir, false)? {
                let Some(format) = CloudFormat::from_path(&file) else {
                    continue;
                };
                let cloud = read_point_cloud(&file, format)?;
                out.push(normalize_to_unit_sphere(&cloud)?.with_label(label));
            }
        }
        if out.is_empty() {
            return Err(CliError::Validation(format!("{arg}/{part} contains no point clouds")));
        }
        Ok(out)
    };
    Ok(Dataset {
        name: arg.to_string(),
        classes: names.len(),
        train: split("train")?,
        test: split("test")?,
    })
}

fn sorted_entries(dir: &Path, dirs: bool) -> CliResult<Vec<std::path::PathBuf>> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .map_err(|e| CliError::Validation(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() == dirs)
        .collect();
    out.sort();
    Ok(out)
}
