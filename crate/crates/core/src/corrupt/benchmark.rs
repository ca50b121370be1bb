//! Benchmark manifests: an ordered list of corruption domains built from one
//! clean cloud.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::generators::corrupt;
use super::table::{CorruptionKind, Profile};
use crate::cloud::{save_cloud, PointCloud};
use crate::rng::{seeded, split_seed};
use crate::{Error, Result};

/// File name of the manifest written next to the domain clouds.
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub kind: CorruptionKind,
    pub severity: u8,
    /// Cloud file, relative to the manifest's directory.
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkManifest {
    pub profile: Profile,
    /// Identifier of the clean source cloud.
    pub source: String,
    pub seed: u64,
    pub domains: Vec<DomainSpec>,
}

impl BenchmarkManifest {
    /// All seven kinds in benchmark order at one severity.
    pub fn standard(profile: Profile, source: impl Into<String>, seed: u64, severity: u8) -> Self {
        let domains = CorruptionKind::ALL
            .iter()
            .enumerate()
            .map(|(i, &kind)| DomainSpec {
                kind,
                severity,
                path: format!("{:02}_{kind}_s{severity}.xyzl", i + 1),
            })
            .collect();
        Self {
            profile,
            source: source.into(),
            seed,
            domains,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for d in &self.domains {
            if !(1..=5).contains(&d.severity) {
                return Err(Error::Validation(format!(
                    "domain `{}` has severity {} outside 1..=5",
                    d.path, d.severity
                )));
            }
            if d.path.is_empty() {
                return Err(Error::Validation("domain path is empty".into()));
            }
            if !seen.insert(d.path.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate domain path `{}`",
                    d.path
                )));
            }
        }
        Ok(())
    }

    /// Seed of domain `index`.
    pub fn domain_seed(&self, index: usize) -> u64 {
        split_seed(self.seed, index as u64)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io("reading manifest", path, e))?;
        Self::from_json(&text)
    }
}

/// Corrupt the clean cloud once per domain. Domains are independent, never
/// chained.
pub fn corrupt_domains(
    cloud: &PointCloud,
    manifest: &BenchmarkManifest,
) -> Result<Vec<PointCloud>> {
    manifest.validate()?;
    let table = manifest.profile.table();
    manifest
        .domains
        .iter()
        .enumerate()
        .map(|(i, d)| {
            corrupt(
                d.kind,
                cloud,
                d.severity,
                &table,
                &mut seeded(manifest.domain_seed(i)),
            )
        })
        .collect()
}

/// Build every domain, write the clouds and the manifest into `out_dir`.
pub fn build_benchmark(
    cloud: &PointCloud,
    manifest: &BenchmarkManifest,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<PointCloud>> {
    let out_dir = out_dir.as_ref();
    let clouds = corrupt_domains(cloud, manifest)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io("creating directory", out_dir, e))?;
    for (d, c) in manifest.domains.iter().zip(&clouds) {
        save_cloud(c, out_dir.join(&d.path))?;
    }
    let path = out_dir.join(MANIFEST_FILE);
    fs::write(&path, manifest.to_json()).map_err(|e| Error::io("writing manifest", &path, e))?;
    Ok(clouds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud() -> PointCloud {
        let n = 600;
        let positions = (0..n)
            .map(|i| {
                [
                    (i % 30) as f64,
                    (i / 30) as f64,
                    ((i * 7) % 11) as f64 * 0.3,
                ]
            })
            .collect();
        let labels = (0..n).map(|i| (i % 3) as u8).collect();
        PointCloud::new(positions, vec![0.5; n], 1, Some(labels), 3).unwrap()
    }

    #[test]
    fn standard_manifest_order() {
        let m = BenchmarkManifest::standard(Profile::Isprs, "clean", 7, 5);
        let kinds: Vec<&str> = m.domains.iter().map(|d| d.kind.name()).collect();
        assert_eq!(
            kinds,
            ["sunlight", "space", "uniform", "density", "cutout", "impulse", "gaussian"]
        );
        assert!(m.domains.iter().all(|d| d.severity == 5));
        m.validate().unwrap();
    }

    #[test]
    fn rejects_duplicates_and_bad_severity() {
        let mut m = BenchmarkManifest::standard(Profile::H3d, "clean", 1, 5);
        m.domains[1].path = m.domains[0].path.clone();
        assert!(matches!(m.validate(), Err(Error::Validation(_))));
        let mut m = BenchmarkManifest::standard(Profile::H3d, "clean", 1, 5);
        m.domains[2].severity = 0;
        assert!(m.validate().is_err());
        assert!(corrupt_domains(&cloud(), &m).is_err());
    }

    #[test]
    fn json_round_trip() {
        let m = BenchmarkManifest::standard(Profile::H3d, "scene", 42, 3);
        let text = m.to_json();
        assert!(text.contains("\"profile\": \"h3d\""));
        assert!(text.contains("\"kind\": \"sunlight\""));
        assert_eq!(BenchmarkManifest::from_json(&text).unwrap(), m);
    }

    #[test]
    fn domains_are_independent_of_each_other() {
        let c = cloud();
        let full = BenchmarkManifest::standard(Profile::Isprs, "clean", 9, 5);
        let all = corrupt_domains(&c, &full).unwrap();
        assert_eq!(all.len(), 7);
        // a domain's output depends only on its own index seed, not on earlier domains
        let mut one = full.clone();
        one.domains.truncate(3);
        let three = corrupt_domains(&c, &one).unwrap();
        assert_eq!(&all[..3], &three[..]);
    }

    #[test]
    fn build_writes_identical_bytes_for_identical_seeds() {
        let c = cloud();
        let m = BenchmarkManifest::standard(Profile::Isprs, "clean", 3, 5);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        build_benchmark(&c, &m, a.path()).unwrap();
        build_benchmark(&c, &m, b.path()).unwrap();
        let mut files: Vec<String> = fs::read_dir(a.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        files.sort();
        assert_eq!(files.len(), 8);
        for f in files {
            assert_eq!(
                fs::read(a.path().join(&f)).unwrap(),
                fs::read(b.path().join(&f)).unwrap(),
                "{f}"
            );
        }
        assert_eq!(
            BenchmarkManifest::load(a.path().join(MANIFEST_FILE)).unwrap(),
            m
        );
    }
}
