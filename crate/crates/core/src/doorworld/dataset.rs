//! Dataset assembly and the on-disk format.
//!
//! A dataset directory holds `manifest.json` (schema version, generator
//! seed, per-door parameters, per-image angles and relative PNG paths),
//! the PNGs under `images/`, and for interaction datasets an
//! `interactions.csv` with columns `door_id, axis_x, radius, goal_deg,
//! reward`.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::door::{sample_action, sample_door, Action, DoorInstance, DoorSpec};
use super::execute::execute_action;
use super::render::render;
use crate::error::{Error, Result};
use crate::imageio::{read_png, write_png, Image};
use crate::seed::SeedStream;

pub const SCHEMA_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";
const INTERACTIONS: &str = "interactions.csv";
/// Best reward below which a door's action sample is redrawn.
const MIN_BEST_REWARD: f64 = 1e-6;
const MAX_ACTION_REDRAWS: usize = 1000;

/// One door and its rendered views; the unit consumed by set models.
#[derive(Debug, Clone, PartialEq)]
pub struct DoorSet {
    pub door: DoorSpec,
    pub angles: Vec<f64>,
    pub images: Vec<Image>,
}

impl DoorSet {
    pub fn render(door: DoorSpec, angles: Vec<f64>, size: usize) -> Result<Self> {
        let images = angles
            .iter()
            .map(|&angle_deg| {
                render(&DoorInstance { door, angle_deg }, size).map(|i| i.quantized())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            door,
            angles,
            images,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Imagery {
    /// Every view shows the closed door.
    Closed,
    /// Views at independent uniform angles.
    Open,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub door_id: usize,
    pub axis_x: f64,
    pub radius: f64,
    pub goal_deg: f64,
    pub reward: f64,
}

impl InteractionRecord {
    pub fn action(&self) -> Action {
        Action {
            axis_x: self.axis_x,
            radius: self.radius,
            goal_deg: self.goal_deg,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainDataset {
    pub seed: u64,
    pub image_size: usize,
    pub sets: Vec<DoorSet>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionDataset {
    pub seed: u64,
    pub image_size: usize,
    pub imagery: Imagery,
    pub n_actions: usize,
    pub sets: Vec<DoorSet>,
    /// Grouped by door, `n_actions` consecutive records per door.
    pub records: Vec<InteractionRecord>,
}

impl InteractionDataset {
    pub fn records_for(&self, door_id: usize) -> &[InteractionRecord] {
        &self.records[door_id * self.n_actions..(door_id + 1) * self.n_actions]
    }
}

fn uniform_angles<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| 180.0 * rng.random::<f64>()).collect()
}

pub fn generate_pretrain_dataset(
    n_doors: usize,
    samples_per_door: usize,
    seed: u64,
    image_size: usize,
) -> Result<PretrainDataset> {
    if n_doors == 0 || samples_per_door == 0 {
        return Err(Error::invalid("n_doors and samples_per_door must be >= 1"));
    }
    let stream = SeedStream::new(seed);
    let sets = (0..n_doors as u64)
        .map(|i| {
            let door = sample_door(&mut stream.rng("door", i));
            let angles = uniform_angles(&mut stream.rng("angles", i), samples_per_door);
            DoorSet::render(door, angles, image_size)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PretrainDataset {
        seed,
        image_size,
        sets,
    })
}

pub fn generate_interaction_dataset(
    n_doors: usize,
    n_actions: usize,
    samples_per_door: usize,
    seed: u64,
    imagery: Imagery,
    image_size: usize,
) -> Result<InteractionDataset> {
    if n_doors == 0 || n_actions == 0 || samples_per_door == 0 {
        return Err(Error::invalid(
            "n_doors, n_actions and samples_per_door must be >= 1",
        ));
    }
    let stream = SeedStream::new(seed);
    let mut sets = Vec::with_capacity(n_doors);
    let mut records = Vec::with_capacity(n_doors * n_actions);
    for i in 0..n_doors as u64 {
        let door = sample_door(&mut stream.rng("door", i));
        let angles = match imagery {
            Imagery::Closed => vec![0.0; samples_per_door],
            Imagery::Open => uniform_angles(&mut stream.rng("angles", i), samples_per_door),
        };
        sets.push(DoorSet::render(door, angles, image_size)?);

        let mut drawn = None;
        for attempt in 0..MAX_ACTION_REDRAWS {
            let mut rng = stream.rng(&format!("actions/{attempt}"), i);
            let batch: Vec<(Action, f64)> = (0..n_actions)
                .map(|_| {
                    let a = sample_action(&mut rng);
                    (a, execute_action(&door, &a))
                })
                .collect();
            if batch.iter().any(|(_, r)| *r >= MIN_BEST_REWARD) {
                drawn = Some(batch);
                break;
            }
        }
        let batch = drawn.ok_or_else(|| {
            Error::invalid(format!(
                "door {i}: no action sample reached a positive reward"
            ))
        })?;
        records.extend(batch.into_iter().map(|(a, reward)| InteractionRecord {
            door_id: i as usize,
            axis_x: a.axis_x,
            radius: a.radius,
            goal_deg: a.goal_deg,
            reward,
        }));
    }
    Ok(InteractionDataset {
        seed,
        image_size,
        imagery,
        n_actions,
        sets,
        records,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestImage {
    pub angle_deg: f64,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestDoor {
    pub id: usize,
    pub origin_x: f64,
    pub origin_y: f64,
    pub width: f64,
    pub height: f64,
    pub handle_offset: f64,
    pub flipped: bool,
    pub images: Vec<ManifestImage>,
}

impl ManifestDoor {
    pub fn spec(&self) -> DoorSpec {
        DoorSpec {
            origin_x: self.origin_x,
            origin_y: self.origin_y,
            width: self.width,
            height: self.height,
            handle_offset: self.handle_offset,
            flipped: self.flipped,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    /// `"pretrain"` or `"interaction"`.
    pub kind: String,
    pub seed: u64,
    pub image_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub imagery: Option<Imagery>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_actions: Option<usize>,
    pub doors: Vec<ManifestDoor>,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(&path, e))?;
        if m.schema_version != SCHEMA_VERSION {
            return Err(Error::format(
                &path,
                format!(
                    "schema version {} (expected {SCHEMA_VERSION})",
                    m.schema_version
                ),
            ));
        }
        Ok(m)
    }
}

fn write_sets(dir: &Path, sets: &[DoorSet]) -> Result<Vec<ManifestDoor>> {
    let img_dir = dir.join("images");
    fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    sets.iter()
        .enumerate()
        .map(|(id, set)| {
            let images = set
                .angles
                .iter()
                .zip(&set.images)
                .enumerate()
                .map(|(k, (&angle_deg, img))| {
                    let rel = format!("images/door{id:05}_{k}.png");
                    write_png(&dir.join(&rel), img)?;
                    Ok(ManifestImage {
                        angle_deg,
                        path: rel,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let d = set.door;
            Ok(ManifestDoor {
                id,
                origin_x: d.origin_x,
                origin_y: d.origin_y,
                width: d.width,
                height: d.height,
                handle_offset: d.handle_offset,
                flipped: d.flipped,
                images,
            })
        })
        .collect()
}

fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    let path = dir.join(MANIFEST);
    let mut text = serde_json::to_string_pretty(manifest).map_err(|e| Error::format(&path, e))?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn read_sets(dir: &Path, manifest: &Manifest) -> Result<Vec<DoorSet>> {
    manifest
        .doors
        .iter()
        .map(|d| {
            let images = d
                .images
                .iter()
                .map(|im| {
                    let img = read_png(&dir.join(&im.path))?;
                    if img.height != manifest.image_size || img.width != manifest.image_size {
                        return Err(Error::format(dir.join(&im.path), "unexpected image size"));
                    }
                    Ok(img)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(DoorSet {
                door: d.spec(),
                angles: d.images.iter().map(|im| im.angle_deg).collect(),
                images,
            })
        })
        .collect()
}

impl PretrainDataset {
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let doors = write_sets(dir, &self.sets)?;
        write_manifest(
            dir,
            &Manifest {
                schema_version: SCHEMA_VERSION,
                kind: "pretrain".into(),
                seed: self.seed,
                image_size: self.image_size,
                imagery: None,
                n_actions: None,
                doors,
            },
        )
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let m = Manifest::read(dir)?;
        let sets = read_sets(dir, &m)?;
        Ok(Self {
            seed: m.seed,
            image_size: m.image_size,
            sets,
        })
    }

    pub fn n_images(&self) -> usize {
        self.sets.iter().map(DoorSet::len).sum()
    }
}

impl InteractionDataset {
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let doors = write_sets(dir, &self.sets)?;
        write_manifest(
            dir,
            &Manifest {
                schema_version: SCHEMA_VERSION,
                kind: "interaction".into(),
                seed: self.seed,
                image_size: self.image_size,
                imagery: Some(self.imagery),
                n_actions: Some(self.n_actions),
                doors,
            },
        )?;
        let path = dir.join(INTERACTIONS);
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::format(&path, e))?;
        for r in &self.records {
            w.serialize(r).map_err(|e| Error::format(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let m = Manifest::read(dir)?;
        let manifest_path = dir.join(MANIFEST);
        let (imagery, n_actions) = match (m.kind.as_str(), m.imagery, m.n_actions) {
            ("interaction", Some(i), Some(n)) => (i, n),
            _ => {
                return Err(Error::format(
                    &manifest_path,
                    "not an interaction dataset manifest",
                ))
            }
        };
        let sets = read_sets(dir, &m)?;
        let path = dir.join(INTERACTIONS);
        let mut rdr = csv::Reader::from_path(&path).map_err(|e| Error::format(&path, e))?;
        let records = rdr
            .deserialize()
            .collect::<std::result::Result<Vec<InteractionRecord>, _>>()
            .map_err(|e| Error::format(&path, e))?;
        if records.len() != sets.len() * n_actions
            || records
                .iter()
                .enumerate()
                .any(|(k, r)| r.door_id != k / n_actions)
        {
            return Err(Error::format(&path, "records are not grouped by door"));
        }
        Ok(Self {
            seed: m.seed,
            image_size: m.image_size,
            imagery,
            n_actions,
            sets,
            records,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pretrain_counts_and_determinism() {
        let a = generate_pretrain_dataset(12, 5, 3, 32).unwrap();
        assert_eq!(a.sets.len(), 12);
        assert_eq!(a.n_images(), 60);
        assert_eq!(a, generate_pretrain_dataset(12, 5, 3, 32).unwrap());
        assert!(generate_pretrain_dataset(0, 5, 3, 32).is_err());
    }

    #[test]
    fn manifests_are_byte_identical_and_round_trip() {
        let ds = generate_pretrain_dataset(4, 3, 9, 16).unwrap();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        ds.write(d1.path()).unwrap();
        ds.write(d2.path()).unwrap();
        let m1 = fs::read(d1.path().join(MANIFEST)).unwrap();
        let m2 = fs::read(d2.path().join(MANIFEST)).unwrap();
        assert_eq!(m1, m2);
        let back = PretrainDataset::read(d1.path()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn interaction_dataset_layout() {
        let ds = generate_interaction_dataset(3, 10, 5, 1, Imagery::Closed, 16).unwrap();
        assert_eq!(ds.records.len(), 30);
        assert!(ds.sets.iter().all(|s| s.angles.iter().all(|&a| a == 0.0)));
        for door in 0..3 {
            assert!(ds.records_for(door).iter().any(|r| r.reward >= 1e-6));
        }
        let dir = tempfile::tempdir().unwrap();
        ds.write(dir.path()).unwrap();
        assert_eq!(InteractionDataset::read(dir.path()).unwrap(), ds);
    }

    #[test]
    fn unwritable_directory_reports_path() {
        let ds = generate_pretrain_dataset(1, 1, 0, 8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("blocker");
        fs::write(&file, b"x").unwrap();
        let err = ds.write(&file.join("sub")).unwrap_err();
        assert!(err.to_string().contains("blocker"), "{err}");
    }
}
