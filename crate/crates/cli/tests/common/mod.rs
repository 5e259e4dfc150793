#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dualseg_cli::{main_with_args, ExperimentConfig};
use dualseg_core::phantom::PhantomConfig;

/// A cohort and network small enough for a full run in a couple of seconds.
pub fn tiny_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.phantom = PhantomConfig {
        n_patients: 6,
        dims: [12, 32, 32],
        lesions_per_patient: [1, 2],
        core_radius_vox: [2.0, 3.0],
        halo_radius_vox: [4.0, 5.0],
        bone_offset_vox: 1.0,
        pet_misalignment_vox: [1, 1, 1],
        ..PhantomConfig::default()
    };
    cfg.preprocess.size = 32;
    cfg.train.max_epochs = 2;
    cfg.train.batch_size = 4;
    cfg
}

pub fn write_config(dir: &Path, cfg: &ExperimentConfig) -> PathBuf {
    let path = dir.join("experiment.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    path
}

pub fn run(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("dualseg").chain(args.iter().copied()))
}

pub fn run_verb(verb: &str, config: &Path, out: &Path, extra: &[&str]) -> i32 {
    let (c, o) = (config.to_str().unwrap(), out.to_str().unwrap());
    let mut args = vec![verb, "--config", c, "--out", o];
    args.extend_from_slice(extra);
    run(&args)
}

/// `phantom`, `train`, `eval` in sequence; panics on the first failure.
pub fn run_pipeline(config: &Path, out: &Path, extra: &[&str]) {
    for verb in ["phantom", "train", "eval"] {
        assert_eq!(run_verb(verb, config, out, extra), 0, "{verb} failed");
    }
}

/// Relative path -> contents for every file below `root`.
pub fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, acc: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, acc);
            } else {
                acc.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    let mut acc = BTreeMap::new();
    walk(root, root, &mut acc);
    acc
}
