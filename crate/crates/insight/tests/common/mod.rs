#![allow(dead_code)]

pub mod corpora;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use insight::bench::{load_suite, SuiteItem};
use insight::dataset::{build_fixture_db, read_json, DB_FILE, SCHEMA_FILE};
use insight::pipeline::{Pipeline, QueryDefaults};
use insight::{local_pipeline, onboard_dir};
use insight_core::gateway::{FamilyCatalog, SimulatedModel, SimulatedModelConfig};
use insight_core::prompt::SchemaDescriptor;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

/// Copy of the sales dataset directory with a freshly built fixture.db.
pub fn sales_dir() -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    for entry in fs::read_dir(fixtures().join("sales")).unwrap() {
        let p = entry.unwrap().path();
        if p.file_name().unwrap() != DB_FILE {
            fs::copy(&p, tmp.path().join(p.file_name().unwrap())).unwrap();
        }
    }
    let schema: SchemaDescriptor = read_json(&tmp.path().join(SCHEMA_FILE)).unwrap();
    build_fixture_db(tmp.path(), &schema, &tmp.path().join(DB_FILE)).unwrap();
    tmp
}

pub fn catalog() -> FamilyCatalog {
    read_json(&fixtures().join("sales/families.json")).unwrap()
}

pub fn sim(competence: f64, zs_hit_rate: f64) -> SimulatedModel {
    sim_with(SimulatedModelConfig { competence, zs_hit_rate, ..Default::default() })
}

pub fn sim_with(config: SimulatedModelConfig) -> SimulatedModel {
    SimulatedModel::new("sim", config, catalog()).unwrap()
}

pub fn suite() -> Vec<SuiteItem> {
    load_suite(&fixtures().join("bench/suite.jsonl")).unwrap()
}

pub fn pool() -> PathBuf {
    fixtures().join("bench/pool.jsonl")
}

/// Sales dataset onboarded with either its own 12 examples or the 20-example bench pool.
pub fn sales_pipeline(model: SimulatedModel, bench_pool: bool) -> (tempfile::TempDir, Pipeline) {
    let dir = sales_dir();
    let p = local_pipeline(Arc::new(model), QueryDefaults::default());
    let pool = bench_pool.then(pool);
    onboard_dir(&p, dir.path(), pool.as_deref()).unwrap();
    (dir, p)
}

/// Rows of a CSV file as string fields, header dropped.
pub fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}
