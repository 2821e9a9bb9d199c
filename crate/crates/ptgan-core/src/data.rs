//! Dataset records, filename conventions, the identity-level split protocol,
//! and manifest manipulation.

use crate::error::DataError;
use crate::seed::derive_seed;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRole {
    Train,
    Query,
    Gallery,
    Unassigned,
}

/// One labeled image: its path (relative to the manifest location), its
/// identity and camera, the split role, and an optional foreground mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonRecord {
    pub image_path: String,
    pub person_id: String,
    pub camera_id: u32,
    pub split_role: SplitRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<String>,
}

impl PersonRecord {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.person_id.is_empty() {
            return Err(DataError::InvalidRecord {
                path: self.image_path.clone(),
                reason: "empty person_id".into(),
            });
        }
        if self.camera_id < 1 {
            return Err(DataError::InvalidRecord {
                path: self.image_path.clone(),
                reason: "camera_id must be >= 1".into(),
            });
        }
        Ok(())
    }
}

/// An ordered inventory of records belonging to one style domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub domain_tag: String,
    pub records: Vec<PersonRecord>,
}

impl DatasetManifest {
    pub fn new(name: impl Into<String>, domain_tag: impl Into<String>, records: Vec<PersonRecord>) -> Self {
        DatasetManifest {
            name: name.into(),
            domain_tag: domain_tag.into(),
            records,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let mut seen = HashSet::new();
        for r in &self.records {
            r.validate()?;
            if !seen.insert(r.image_path.as_str()) {
                return Err(DataError::DuplicatePath {
                    path: r.image_path.clone(),
                });
            }
        }
        Ok(())
    }

    /// Distinct identities in first-appearance order.
    pub fn identities(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for r in &self.records {
            if seen.insert(r.person_id.as_str()) {
                out.push(r.person_id.clone());
            }
        }
        out
    }

    pub fn records_with_role(&self, role: SplitRole) -> impl Iterator<Item = &PersonRecord> {
        self.records.iter().filter(move |r| r.split_role == role)
    }

    /// Records used for transfer-model or embedder training: the `train`
    /// partition if one exists, or every record when the manifest is fully
    /// unsplit.
    pub fn training_records(&self) -> Vec<&PersonRecord> {
        let train: Vec<&PersonRecord> = self.records_with_role(SplitRole::Train).collect();
        if !train.is_empty() {
            return train;
        }
        if self.records.iter().all(|r| r.split_role == SplitRole::Unassigned) {
            return self.records.iter().collect();
        }
        Vec::new()
    }

    /// Query identities that have no gallery record at all; those queries are
    /// unanswerable under any protocol.
    pub fn unanswerable_query_ids(&self) -> Vec<String> {
        let gallery_ids: HashSet<&str> = self
            .records_with_role(SplitRole::Gallery)
            .map(|r| r.person_id.as_str())
            .collect();
        let mut out = Vec::new();
        let mut seen = HashSet::new();
        for r in self.records_with_role(SplitRole::Query) {
            if !gallery_ids.contains(r.person_id.as_str()) && seen.insert(r.person_id.as_str()) {
                out.push(r.person_id.clone());
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilenameConvention {
    /// `<pid>_c<cam>s<seq>_<frame>_<idx>.<ext>`
    MarketLike,
    /// `<pid>_<cam>_<anything>.<ext>`
    Generic,
}

impl FilenameConvention {
    fn name(&self) -> &'static str {
        match self {
            FilenameConvention::MarketLike => "market_like",
            FilenameConvention::Generic => "generic",
        }
    }
}

/// Parses identity and camera out of a file name. Pure and deterministic; a
/// mismatch signals the wrong convention or a corrupt dataset.
pub fn parse_reid_filename(
    filename: &str,
    convention: FilenameConvention,
) -> Result<(String, u32), DataError> {
    let err = || DataError::MalformedFilename {
        filename: filename.to_string(),
        convention: convention.name(),
    };
    let stem = filename.rsplit_once('.').map(|(s, _ext)| s).ok_or_else(err)?;
    match convention {
        FilenameConvention::MarketLike => {
            // <pid>_c<cam>s<seq>_<frame>_<idx>
            let mut parts = stem.split('_');
            let pid = parts.next().filter(|p| !p.is_empty()).ok_or_else(err)?;
            let camseq = parts.next().ok_or_else(err)?;
            let frame = parts.next().ok_or_else(err)?;
            let idx = parts.next().ok_or_else(err)?;
            if parts.next().is_some() {
                return Err(err());
            }
            if !frame.chars().all(|c| c.is_ascii_digit()) || frame.is_empty() {
                return Err(err());
            }
            if !idx.chars().all(|c| c.is_ascii_digit()) || idx.is_empty() {
                return Err(err());
            }
            let rest = camseq.strip_prefix('c').ok_or_else(err)?;
            let (cam, seq) = rest.split_once('s').ok_or_else(err)?;
            if !seq.chars().all(|c| c.is_ascii_digit()) || seq.is_empty() {
                return Err(err());
            }
            let camera: u32 = cam.parse().map_err(|_| err())?;
            if camera < 1 {
                return Err(err());
            }
            Ok((pid.to_string(), camera))
        }
        FilenameConvention::Generic => {
            let mut parts = stem.splitn(3, '_');
            let pid = parts.next().filter(|p| !p.is_empty()).ok_or_else(err)?;
            let cam = parts.next().ok_or_else(err)?;
            parts.next().ok_or_else(err)?;
            let camera: u32 = cam.parse().map_err(|_| err())?;
            if camera < 1 {
                return Err(err());
            }
            Ok((pid.to_string(), camera))
        }
    }
}

/// Number of train identities for `n` identities at `ratio`, rounding half
/// away from zero so exact ties go to the train side.
pub fn train_identity_count(n: usize, ratio: f64) -> usize {
    (ratio * n as f64).round() as usize
}

/// Partitions identities (never images) into train and test, then marks a
/// per-identity per-camera query fraction inside the test partition, keeping
/// at least one gallery image in every group that contributes a query. The
/// same (seed, manifest) pair always produces the identical split.
pub fn apply_split(
    manifest: &DatasetManifest,
    train_ratio: f64,
    query_fraction: f64,
    seed: u64,
) -> Result<DatasetManifest, DataError> {
    if !(0.0 < train_ratio && train_ratio < 1.0) {
        return Err(DataError::InvalidConfig {
            field: "train_ratio",
            reason: format!("{train_ratio} outside (0, 1)"),
        });
    }
    if !(0.0 < query_fraction && query_fraction < 1.0) {
        return Err(DataError::InvalidConfig {
            field: "query_fraction",
            reason: format!("{query_fraction} outside (0, 1)"),
        });
    }
    let mut ids = manifest.identities();
    let n = ids.len();
    let train_n = train_identity_count(n, train_ratio);
    if train_n == 0 || train_n >= n {
        return Err(DataError::TooFewIdentities {
            identities: n,
            needed: 2,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "identity-split"));
    ids.shuffle(&mut rng);
    let train_ids: HashSet<&str> = ids[..train_n].iter().map(String::as_str).collect();

    let mut out = manifest.clone();
    for r in &mut out.records {
        r.split_role = if train_ids.contains(r.person_id.as_str()) {
            SplitRole::Train
        } else {
            SplitRole::Gallery // refined below
        };
    }
    assign_queries_in_place(&mut out, query_fraction, seed);
    Ok(out)
}

/// Assigns query/gallery roles to every record of a manifest without a train
/// partition; used for evaluation-only pools.
pub fn assign_query_gallery(
    manifest: &DatasetManifest,
    query_fraction: f64,
    seed: u64,
) -> Result<DatasetManifest, DataError> {
    if !(0.0 < query_fraction && query_fraction < 1.0) {
        return Err(DataError::InvalidConfig {
            field: "query_fraction",
            reason: format!("{query_fraction} outside (0, 1)"),
        });
    }
    let mut out = manifest.clone();
    for r in &mut out.records {
        r.split_role = SplitRole::Gallery;
    }
    assign_queries_in_place(&mut out, query_fraction, seed);
    Ok(out)
}

/// Within each (identity, camera) group currently marked gallery, promotes a
/// seeded random `query_fraction` of images to query, always leaving at
/// least one gallery image in the group.
fn assign_queries_in_place(manifest: &mut DatasetManifest, query_fraction: f64, seed: u64) {
    let mut groups: BTreeMap<(String, u32), Vec<usize>> = BTreeMap::new();
    for (i, r) in manifest.records.iter().enumerate() {
        if r.split_role == SplitRole::Gallery {
            groups
                .entry((r.person_id.clone(), r.camera_id))
                .or_default()
                .push(i);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "query-selection"));
    for ((_, _), mut indices) in groups {
        let m = indices.len();
        if m < 2 {
            continue; // a singleton stays in the gallery
        }
        let q = ((query_fraction * m as f64).round() as usize).clamp(1, m - 1);
        indices.shuffle(&mut rng);
        for &i in indices.iter().take(q) {
            manifest.records[i].split_role = SplitRole::Query;
        }
    }
}

/// Concatenates manifests over a shared identity namespace. Rejects
/// duplicate image paths.
pub fn merge_manifests(manifests: &[DatasetManifest]) -> Result<DatasetManifest, DataError> {
    if manifests.is_empty() {
        return Err(DataError::InvalidConfig {
            field: "manifests",
            reason: "merge needs at least one input".into(),
        });
    }
    let mut records = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for m in manifests {
        for r in &m.records {
            if !seen.insert(r.image_path.clone()) {
                return Err(DataError::DuplicatePath {
                    path: r.image_path.clone(),
                });
            }
            records.push(r.clone());
        }
    }
    let name = manifests
        .iter()
        .map(|m| m.name.as_str())
        .collect::<Vec<_>>()
        .join("+");
    let tag = if manifests.windows(2).all(|w| w[0].domain_tag == w[1].domain_tag) {
        manifests[0].domain_tag.clone()
    } else {
        manifests
            .iter()
            .map(|m| m.domain_tag.as_str())
            .collect::<Vec<_>>()
            .join("+")
    };
    Ok(DatasetManifest::new(name, tag, records))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(path: &str, pid: &str, cam: u32) -> PersonRecord {
        PersonRecord {
            image_path: path.to_string(),
            person_id: pid.to_string(),
            camera_id: cam,
            split_role: SplitRole::Unassigned,
            mask_path: None,
        }
    }

    fn synthetic_manifest(ids: usize, cams: u32, per: usize) -> DatasetManifest {
        let mut records = Vec::new();
        for i in 0..ids {
            for c in 1..=cams {
                for k in 0..per {
                    records.push(record(&format!("imgs/{i:04}_c{c}s1_{k:06}_00.png"), &format!("{i:04}"), c));
                }
            }
        }
        DatasetManifest::new("synthetic", "test", records)
    }

    #[test]
    fn market_like_parses() {
        let (pid, cam) =
            parse_reid_filename("0001_c1s1_000151_00.jpg", FilenameConvention::MarketLike).unwrap();
        assert_eq!(pid, "0001");
        assert_eq!(cam, 1);
    }

    #[test]
    fn generic_parses() {
        let (pid, cam) = parse_reid_filename("42_3_front.png", FilenameConvention::Generic).unwrap();
        assert_eq!(pid, "42");
        assert_eq!(cam, 3);
    }

    #[test]
    fn malformed_names_are_rejected() {
        for name in ["readme.txt", "0001.jpg", "0001_x1s1_0_0.jpg", "0001_c0s1_0_0.jpg", "_c1s1_0_0.jpg"] {
            assert!(
                matches!(
                    parse_reid_filename(name, FilenameConvention::MarketLike),
                    Err(DataError::MalformedFilename { .. })
                ),
                "{name} should not parse"
            );
        }
        assert!(parse_reid_filename("noext", FilenameConvention::Generic).is_err());
        assert!(parse_reid_filename("a_b.png", FilenameConvention::Generic).is_err());
    }

    #[test]
    fn split_counts_match_rounding_oracle() {
        let m = synthetic_manifest(8, 2, 2);
        let split = apply_split(&m, 0.25, 0.34, 99).unwrap();
        let train_ids: HashSet<_> = split
            .records_with_role(SplitRole::Train)
            .map(|r| r.person_id.clone())
            .collect();
        assert_eq!(train_ids.len(), 2);
        let rerun = apply_split(&m, 0.25, 0.34, 99).unwrap();
        assert_eq!(split, rerun, "same seed must reproduce the split");
        let other = apply_split(&m, 0.25, 0.34, 100).unwrap();
        assert_ne!(split, other, "another seed should move the partition");
    }

    #[test]
    fn published_split_ratio_reproduces_identity_count() {
        // 4,101 identities at the published ratio round to exactly 1,041.
        assert_eq!(train_identity_count(4101, 1041.0 / 4101.0), 1041);
    }

    #[test]
    fn split_partitions_identities() {
        let m = synthetic_manifest(20, 2, 3);
        let split = apply_split(&m, 0.25, 0.34, 7).unwrap();
        let train: HashSet<_> = split
            .records_with_role(SplitRole::Train)
            .map(|r| r.person_id.clone())
            .collect();
        let test: HashSet<_> = split
            .records
            .iter()
            .filter(|r| matches!(r.split_role, SplitRole::Query | SplitRole::Gallery))
            .map(|r| r.person_id.clone())
            .collect();
        assert!(train.is_disjoint(&test));
        assert_eq!(train.len() + test.len(), 20);
        assert!(!split.records.iter().any(|r| r.split_role == SplitRole::Unassigned));
    }

    #[test]
    fn every_query_group_keeps_a_gallery_image() {
        let m = synthetic_manifest(12, 3, 3);
        let split = apply_split(&m, 0.25, 0.5, 3).unwrap();
        let mut galleries: BTreeMap<(String, u32), usize> = BTreeMap::new();
        let mut queries: BTreeMap<(String, u32), usize> = BTreeMap::new();
        for r in &split.records {
            let key = (r.person_id.clone(), r.camera_id);
            match r.split_role {
                SplitRole::Gallery => *galleries.entry(key).or_default() += 1,
                SplitRole::Query => *queries.entry(key).or_default() += 1,
                _ => {}
            }
        }
        for key in queries.keys() {
            assert!(galleries.get(key).copied().unwrap_or(0) >= 1, "{key:?} lost its gallery");
        }
        assert!(split.unanswerable_query_ids().is_empty());
    }

    #[test]
    fn too_small_partitions_are_rejected() {
        let m = synthetic_manifest(3, 1, 2);
        assert!(matches!(
            apply_split(&m, 0.05, 0.3, 1),
            Err(DataError::TooFewIdentities { .. })
        ));
        assert!(matches!(
            apply_split(&m, 0.99, 0.3, 1),
            Err(DataError::TooFewIdentities { .. })
        ));
    }

    #[test]
    fn merge_concatenates_and_rejects_duplicates() {
        let a = synthetic_manifest(2, 1, 2);
        let mut b = synthetic_manifest(2, 1, 2);
        for r in &mut b.records {
            r.image_path = format!("other/{}", r.image_path);
        }
        let merged = merge_manifests(&[a.clone(), b]).unwrap();
        assert_eq!(merged.records.len(), 8);
        assert_eq!(merged.identities().len(), 2);

        let single = merge_manifests(&[a.clone()]).unwrap();
        assert_eq!(single.records, a.records);

        assert!(matches!(
            merge_manifests(&[a.clone(), a]),
            Err(DataError::DuplicatePath { .. })
        ));
    }
}
