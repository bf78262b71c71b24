//! Corpus and prediction files.
//!
//! Corpus manifest: `{behavior_id: {"speaker": path, "listeners": [path, ...]}}`.
//! Prediction manifest: `{behavior_id: path}` where the file holds every
//! generated clip for that behaviour. Paths are relative to the manifest.
//! Clip files are JSON Lines, one clip per line.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use regnn_core::{Behavior, ReactionClip};

use crate::error::{CliError, Result};

pub const MANIFEST: &str = "manifest.json";
const CLIP_DIR: &str = "clips";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub speaker: String,
    pub listeners: Vec<String>,
}

pub type Manifest = BTreeMap<String, ManifestEntry>;
pub type PredictionManifest = BTreeMap<String, String>;

fn base_dir(manifest: &Path) -> &Path {
    manifest.parent().unwrap_or(Path::new("."))
}

fn check_id(id: &str, path: &Path) -> Result<()> {
    if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || "_-.".contains(c)) {
        return Err(CliError::input(path, format!("behaviour id {id:?} must be non-empty [A-Za-z0-9_.-]")));
    }
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write_clips(path: &Path, clips: &[ReactionClip]) -> Result<()> {
    let text: String = clips.iter().map(|c| c.to_json_line() + "\n").collect();
    write_text(path, &text)
}

/// Reads every non-blank line as one clip.
pub fn read_clips(path: &Path) -> Result<Vec<ReactionClip>> {
    read_text(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            ReactionClip::from_json_line(l).map_err(|e| CliError::input(path, format!("line {}: {e}", n + 1)))
        })
        .collect()
}

pub fn read_single_clip(path: &Path) -> Result<ReactionClip> {
    let mut clips = read_clips(path)?;
    if clips.len() != 1 {
        return Err(CliError::input(path, format!("expected exactly one clip, found {}", clips.len())));
    }
    Ok(clips.remove(0))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::input(path, e.to_string()))
}

/// Writes `dir/manifest.json` plus one file per clip under `dir/clips`.
pub fn write_corpus(dir: &Path, corpus: &[Behavior]) -> Result<PathBuf> {
    let mut manifest = Manifest::new();
    for b in corpus {
        check_id(&b.id, dir)?;
        let speaker = format!("{CLIP_DIR}/{}_speaker.jsonl", b.id);
        write_clips(&dir.join(&speaker), std::slice::from_ref(&b.speaker))?;
        let listeners = b
            .listeners
            .iter()
            .enumerate()
            .map(|(m, c)| {
                let rel = format!("{CLIP_DIR}/{}_listener_{m}.jsonl", b.id);
                write_clips(&dir.join(&rel), std::slice::from_ref(c))?;
                Ok(rel)
            })
            .collect::<Result<Vec<_>>>()?;
        if manifest
            .insert(b.id.clone(), ManifestEntry { speaker, listeners })
            .is_some()
        {
            return Err(CliError::input(dir, format!("duplicate behaviour id {}", b.id)));
        }
    }
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialisation cannot fail");
    write_text(&path, &(text + "\n"))?;
    Ok(path)
}

/// Loads a corpus in behaviour-id order. All clips must share one shape.
pub fn read_corpus(manifest_path: &Path) -> Result<Vec<Behavior>> {
    let manifest: Manifest = read_json(manifest_path)?;
    if manifest.is_empty() {
        return Err(CliError::input(manifest_path, "manifest lists no behaviours"));
    }
    let base = base_dir(manifest_path);
    let mut shape = None;
    let mut check = |c: &ReactionClip, path: &Path| {
        let s = (c.attributes(), c.frames());
        match shape {
            None => {
                shape = Some(s);
                Ok(())
            }
            Some(expected) if expected == s => Ok(()),
            Some((i, t)) => Err(CliError::input(
                path,
                format!("clip {} is {}×{}, corpus clips are {i}×{t}", c.clip_id, s.0, s.1),
            )),
        }
    };
    let mut out = Vec::with_capacity(manifest.len());
    for (id, entry) in manifest {
        check_id(&id, manifest_path)?;
        if entry.listeners.len() < 2 {
            return Err(CliError::input(manifest_path, format!("behaviour {id} needs at least 2 listener clips")));
        }
        let speaker_path = base.join(&entry.speaker);
        let speaker = read_single_clip(&speaker_path)?;
        check(&speaker, &speaker_path)?;
        let listeners = entry
            .listeners
            .iter()
            .map(|rel| {
                let p = base.join(rel);
                let c = read_single_clip(&p)?;
                check(&c, &p)?;
                Ok(c)
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(Behavior {
            id,
            speaker,
            listeners,
        });
    }
    Ok(out)
}

/// Writes `dir/manifest.json` mapping each behaviour to `dir/clips/{id}.jsonl`.
pub fn write_predictions(dir: &Path, predictions: &BTreeMap<String, Vec<ReactionClip>>) -> Result<PathBuf> {
    let mut manifest = PredictionManifest::new();
    for (id, clips) in predictions {
        check_id(id, dir)?;
        let rel = format!("{CLIP_DIR}/{id}.jsonl");
        write_clips(&dir.join(&rel), clips)?;
        manifest.insert(id.clone(), rel);
    }
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialisation cannot fail");
    write_text(&path, &(text + "\n"))?;
    Ok(path)
}

pub fn read_predictions(manifest_path: &Path) -> Result<BTreeMap<String, Vec<ReactionClip>>> {
    let manifest: PredictionManifest = read_json(manifest_path)?;
    let base = base_dir(manifest_path);
    manifest
        .into_iter()
        .map(|(id, rel)| {
            check_id(&id, manifest_path)?;
            let p = base.join(&rel);
            let clips = read_clips(&p)?;
            if clips.is_empty() {
                return Err(CliError::input(p, "no clips"));
            }
            Ok((id, clips))
        })
        .collect()
}
