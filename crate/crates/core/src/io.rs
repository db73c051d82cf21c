//! Capture files and dataset manifests.
//!
//! A capture is a pair of files: `<stem>.cf32` holding interleaved
//! little-endian `f32` I/Q samples and `<stem>.json` holding the sidecar
//! header. A dataset is a `manifest.json` listing capture paths relative to
//! the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp::ReceiverConfig;
use crate::error::{Error, Result};
use crate::signal::{IqBuffer, ModulationKind, ModulationScheme};
use crate::synth::{Dataset, Label, NOMINAL_CARRIER_HZ};

pub const CAPTURE_EXTENSION: &str = "cf32";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

/// Sidecar header of one capture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptureMeta {
    pub sample_rate_hz: f64,
    pub nominal_carrier_hz: f64,
    pub modulation: ModulationKind,
    pub device_id: String,
    pub label: Label,
    pub seed: u64,
}

/// Sidecar path for a capture data path.
pub fn sidecar_path(data: &Path) -> PathBuf {
    data.with_extension("json")
}

/// Writes `sig` as `f32` samples plus its sidecar. Samples are rounded to
/// single precision; buffers already holding `f32` values round-trip
/// bit-exactly.
pub fn write_capture(path: &Path, sig: &IqBuffer, meta: &CaptureMeta) -> Result<()> {
    if (meta.sample_rate_hz - sig.sample_rate_hz()).abs() > 0.0 {
        return Err(Error::InvalidInput(format!(
            "sidecar rate {} disagrees with buffer rate {}",
            meta.sample_rate_hz,
            sig.sample_rate_hz()
        )));
    }
    let mut bytes = Vec::with_capacity(sig.len() * 8);
    for s in sig.samples() {
        bytes.extend_from_slice(&(s.re as f32).to_le_bytes());
        bytes.extend_from_slice(&(s.im as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(meta).expect("capture meta serializes");
    fs::write(&side, text).map_err(|e| Error::io(&side, e))
}

pub fn read_capture_meta(path: &Path) -> Result<CaptureMeta> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: CaptureMeta =
        serde_json::from_str(&text).map_err(|e| Error::parse(side.display().to_string(), e))?;
    if !(meta.sample_rate_hz > 0.0 && meta.sample_rate_hz.is_finite()) {
        return Err(Error::parse(
            side.display().to_string(),
            format!(
                "sample_rate_hz must be positive, got {}",
                meta.sample_rate_hz
            ),
        ));
    }
    Ok(meta)
}

pub fn read_capture(path: &Path) -> Result<(IqBuffer, CaptureMeta)> {
    let meta = read_capture_meta(path)?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::TruncatedFile {
            path: path.to_path_buf(),
            len: bytes.len() as u64,
        });
    }
    let samples = bytes
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            let im = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
            Complex64::new(re as f64, im as f64)
        })
        .collect();
    Ok((IqBuffer::new(samples, meta.sample_rate_hz)?, meta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub path: String,
    pub label: Label,
    #[serde(default)]
    pub scenario: String,
    #[serde(default)]
    pub params: serde_json::Value,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default = "manifest_version")]
    pub version: u32,
    /// Modulation and receiver the captures were made for. Absent fields
    /// fall back to the defaults for the sidecar's modulation kind.
    #[serde(default)]
    pub modulation: Option<ModulationScheme>,
    #[serde(default)]
    pub receiver: Option<ReceiverConfig>,
    pub entries: Vec<ManifestEntry>,
}

fn manifest_version() -> u32 {
    MANIFEST_VERSION
}

/// Writes every capture of `ds` under `dir` and returns the manifest path.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<PathBuf> {
    let captures = dir.join("captures");
    fs::create_dir_all(&captures).map_err(|e| Error::io(&captures, e))?;
    let mut entries = Vec::with_capacity(ds.captures.len());
    for (i, c) in ds.captures.iter().enumerate() {
        let rel = format!("captures/{:05}_{}.{CAPTURE_EXTENSION}", i, c.scenario);
        let meta = CaptureMeta {
            sample_rate_hz: c.iq.sample_rate_hz(),
            nominal_carrier_hz: NOMINAL_CARRIER_HZ,
            modulation: ds.modulation.kind,
            device_id: c.device_id.clone(),
            label: c.label,
            seed: c.seed,
        };
        write_capture(&dir.join(&rel), &c.iq, &meta)?;
        entries.push(ManifestEntry {
            path: rel,
            label: c.label,
            scenario: c.scenario.clone(),
            params: c.params.clone(),
            seed: c.seed,
        });
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        modulation: Some(ds.modulation),
        receiver: Some(ds.receiver),
        entries,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// A parsed manifest whose captures are read on demand.
#[derive(Debug, Clone)]
pub struct DatasetReader {
    pub root: PathBuf,
    pub manifest: Manifest,
}

/// Parses the manifest at `path` and checks every entry exists. Capture
/// data is not read until iteration.
pub fn load_dataset(path: &Path) -> Result<DatasetReader> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))?;
    let entries = raw
        .get("entries")
        .and_then(|e| e.as_array())
        .ok_or_else(|| Error::parse(path.display().to_string(), "missing 'entries' array"))?;
    // Entries are checked one by one so the error can name the culprit.
    for (index, e) in entries.iter().enumerate() {
        let p = e
            .get("path")
            .and_then(|p| p.as_str())
            .unwrap_or("<no path>")
            .to_string();
        if let Err(err) = serde_json::from_value::<ManifestEntry>(e.clone()) {
            return Err(Error::ManifestError {
                index,
                path: p,
                message: err.to_string(),
            });
        }
    }
    let manifest: Manifest =
        serde_json::from_value(raw).map_err(|e| Error::parse(path.display().to_string(), e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    for (index, e) in manifest.entries.iter().enumerate() {
        if !root.join(&e.path).is_file() {
            return Err(Error::ManifestError {
                index,
                path: e.path.clone(),
                message: "capture file does not exist".into(),
            });
        }
    }
    Ok(DatasetReader { root, manifest })
}

/// One manifest entry with its capture loaded.
#[derive(Debug, Clone)]
pub struct LoadedCapture {
    pub entry: ManifestEntry,
    pub iq: IqBuffer,
    pub meta: CaptureMeta,
}

impl DatasetReader {
    pub fn len(&self) -> usize {
        self.manifest.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.entries.is_empty()
    }

    pub fn load(&self, index: usize) -> Result<LoadedCapture> {
        let entry = self
            .manifest
            .entries
            .get(index)
            .ok_or_else(|| Error::InvalidInput(format!("no manifest entry {index}")))?;
        let (iq, meta) = read_capture(&self.root.join(&entry.path))?;
        if meta.label != entry.label {
            return Err(Error::ManifestError {
                index,
                path: entry.path.clone(),
                message: format!(
                    "manifest label {} disagrees with sidecar label {}",
                    entry.label, meta.label
                ),
            });
        }
        Ok(LoadedCapture {
            entry: entry.clone(),
            iq,
            meta,
        })
    }

    /// Captures in manifest order.
    pub fn iter(&self) -> impl Iterator<Item = Result<LoadedCapture>> + '_ {
        (0..self.len()).map(|i| self.load(i))
    }

    /// Modulation of the dataset: the manifest's, else the default for the
    /// first sidecar's kind.
    pub fn modulation(&self) -> Result<Option<ModulationScheme>> {
        if let Some(m) = self.manifest.modulation {
            return Ok(Some(m));
        }
        match self.manifest.entries.first() {
            Some(e) => Ok(Some(ModulationScheme::default_for(
                read_capture_meta(&self.root.join(&e.path))?.modulation,
            ))),
            None => Ok(None),
        }
    }

    pub fn receiver(&self) -> ReceiverConfig {
        self.manifest.receiver.unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::from_seed;
    use rand::Rng as _;

    fn meta(label: Label) -> CaptureMeta {
        CaptureMeta {
            sample_rate_hz: 5e6,
            nominal_carrier_hz: NOMINAL_CARRIER_HZ,
            modulation: ModulationKind::Fsk,
            device_id: "fob-a".into(),
            label,
            seed: 42,
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = from_seed(3);
        let mut samples: Vec<Complex64> = (0..4096)
            .map(|_| Complex64::new(rng.random::<f32>() as f64 - 0.5, rng.random::<f32>() as f64))
            .collect();
        samples[0] = Complex64::new(f32::from_bits(1) as f64, -(f32::MIN_POSITIVE as f64) / 2.0);
        samples[1] = Complex64::new(f32::MAX as f64, -0.0);
        let sig = IqBuffer::new(samples, 5e6).unwrap();
        let p = dir.path().join("a.cf32");
        write_capture(&p, &sig, &meta(Label::Playback)).unwrap();
        let (back, m) = read_capture(&p).unwrap();
        assert_eq!(m, meta(Label::Playback));
        for (a, b) in sig.samples().iter().zip(back.samples()) {
            assert_eq!(a.re.to_bits(), b.re.to_bits());
            assert_eq!(a.im.to_bits(), b.im.to_bits());
        }
    }

    #[test]
    fn odd_length_is_truncated() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.cf32");
        write_capture(&p, &IqBuffer::zeros(4, 5e6).unwrap(), &meta(Label::Legit)).unwrap();
        fs::write(&p, [0u8; 13]).unwrap();
        assert!(matches!(
            read_capture(&p),
            Err(Error::TruncatedFile { len: 13, .. })
        ));
    }

    #[test]
    fn missing_rate_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.cf32");
        write_capture(&p, &IqBuffer::zeros(4, 5e6).unwrap(), &meta(Label::Legit)).unwrap();
        let mut v: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(sidecar_path(&p)).unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("sample_rate_hz");
        fs::write(sidecar_path(&p), v.to_string()).unwrap();
        assert!(matches!(read_capture(&p), Err(Error::ParseError { .. })));
    }

    fn manifest_with(dir: &Path, entries: serde_json::Value) -> PathBuf {
        let p = dir.join(MANIFEST_FILE);
        fs::write(&p, serde_json::json!({ "entries": entries }).to_string()).unwrap();
        p
    }

    #[test]
    fn manifest_iterates_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let mut entries = Vec::new();
        for i in 0..200u64 {
            let label = if i < 100 {
                Label::Legit
            } else {
                Label::DigitalRelay
            };
            let rel = format!("c{i}.cf32");
            write_capture(
                &dir.path().join(&rel),
                &IqBuffer::zeros(2, 5e6).unwrap(),
                &CaptureMeta {
                    seed: i,
                    ..meta(label)
                },
            )
            .unwrap();
            entries.push(serde_json::json!({ "path": rel, "label": label, "seed": i }));
        }
        let ds = load_dataset(&manifest_with(dir.path(), entries.into())).unwrap();
        let seeds: Vec<u64> = ds.iter().map(|c| c.unwrap().meta.seed).collect();
        assert_eq!(seeds, (0..200).collect::<Vec<_>>());
    }

    #[test]
    fn empty_manifest_is_fine() {
        let dir = tempfile::tempdir().unwrap();
        let ds = load_dataset(&manifest_with(dir.path(), serde_json::json!([]))).unwrap();
        assert!(ds.is_empty());
        assert_eq!(ds.iter().count(), 0);
        assert_eq!(ds.modulation().unwrap(), None);
    }

    #[test]
    fn bad_entries_name_themselves() {
        let dir = tempfile::tempdir().unwrap();
        write_capture(
            &dir.path().join("ok.cf32"),
            &IqBuffer::zeros(2, 5e6).unwrap(),
            &meta(Label::Legit),
        )
        .unwrap();
        let p = manifest_with(
            dir.path(),
            serde_json::json!([{ "path": "ok.cf32", "label": "legit", "seed": 1 }, { "path": "ok.cf32", "label": "jamming", "seed": 2 }]),
        );
        assert!(matches!(
            load_dataset(&p),
            Err(Error::ManifestError { index: 1, .. })
        ));
        let p = manifest_with(
            dir.path(),
            serde_json::json!([{ "path": "gone.cf32", "label": "legit", "seed": 1 }]),
        );
        match load_dataset(&p) {
            Err(Error::ManifestError { index: 0, path, .. }) => assert_eq!(path, "gone.cf32"),
            other => panic!("expected ManifestError, got {other:?}"),
        }
    }

    #[test]
    fn synthetic_dataset_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = crate::synth::ScenarioConfig::new(ModulationKind::Fsk, 5, 2);
        cfg.receiver.guard_samples = 12_000;
        let cfg = cfg.with_scenario(crate::synth::AttackScenario::new(
            "sbr",
            crate::synth::AttackChain::single_band_relay(10.0),
            1,
        ));
        let ds = crate::synth::generate_dataset(&cfg).unwrap();
        let reader = load_dataset(&write_dataset(&ds, dir.path()).unwrap()).unwrap();
        assert_eq!(reader.len(), 3);
        assert_eq!(reader.modulation().unwrap(), Some(ds.modulation));
        for (c, orig) in reader.iter().zip(&ds.captures) {
            let c = c.unwrap();
            assert_eq!(c.entry.label, orig.label);
            assert_eq!(c.meta.seed, orig.seed);
            let err =
                c.iq.samples()
                    .iter()
                    .zip(orig.iq.samples())
                    .map(|(a, b)| (a - b).norm())
                    .fold(0.0, f64::max);
            assert!(err < 1e-6, "{err}");
        }
    }
}
