//! Loading example sets from disk and turning media into text.
//!
//! Text files are read as UTF-8 and NFC-normalized with CRLF folded to LF;
//! no other rewriting happens, so evidence offsets index what the model saw.
//! Images, videos and audio are described through the gateway.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::error::StageError;
use crate::gateway::{Attachment, AttachmentKind, ChatRequest, Gateway};
use crate::model::{new_example_set, Example, ExampleId, ExampleSet, Modality};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IngestError {
    #[error("file not found: {0}")]
    FileNotFound(String),
    #[error("cannot decode {path}: {reason}")]
    DecodeError { path: String, reason: String },
    #[error("invalid manifest: {0}")]
    BadManifest(String),
    #[error("no examples to load")]
    NoExamples,
    #[error("a goal is required")]
    MissingGoal,
    #[error("describing {entry} failed: {reason}")]
    DescriptionFailed { entry: String, reason: String },
    #[error("unsupported media in {0}")]
    UnsupportedCodec(String),
    #[error("description of {0} is empty")]
    EmptyDescription(String),
    #[error("{0} is a text entry; only media entries are described")]
    TextEntry(String),
    #[error("media entry {0} needs a model gateway")]
    NoGateway(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub modality: Modality,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_context: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestManifest {
    pub goal: String,
    pub entries: Vec<ManifestEntry>,
    /// Directory that relative entry paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Deserialize)]
struct Sidecar {
    #[serde(default)]
    input_context: Option<String>,
}

impl IngestManifest {
    /// Reads a JSON manifest; entry paths are relative to its directory.
    pub fn from_file(path: &Path) -> Result<Self, IngestError> {
        let text = fs::read_to_string(path).map_err(|_| IngestError::FileNotFound(path.display().to_string()))?;
        let mut manifest: IngestManifest =
            serde_json::from_str(&text).map_err(|e| IngestError::BadManifest(e.to_string()))?;
        manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(manifest)
    }

    /// Builds a manifest from the `.txt` files of `dir`, sorted by name.
    /// `<stem>.meta.json` next to a file may carry its `input_context`.
    pub fn from_dir(dir: &Path, goal: &str) -> Result<Self, IngestError> {
        let listing = fs::read_dir(dir).map_err(|_| IngestError::FileNotFound(dir.display().to_string()))?;
        let mut names: Vec<String> = listing
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n.ends_with(".txt"))
            .collect();
        names.sort();
        let mut entries = Vec::with_capacity(names.len());
        for name in names {
            let stem = name.trim_end_matches(".txt");
            let sidecar = dir.join(format!("{stem}.meta.json"));
            let input_context = if sidecar.exists() {
                let raw = fs::read_to_string(&sidecar).map_err(|e| IngestError::DecodeError {
                    path: sidecar.display().to_string(),
                    reason: e.to_string(),
                })?;
                let meta: Sidecar = serde_json::from_str(&raw).map_err(|e| IngestError::DecodeError {
                    path: sidecar.display().to_string(),
                    reason: e.to_string(),
                })?;
                meta.input_context
            } else {
                None
            };
            entries.push(ManifestEntry {
                path: name,
                modality: Modality::Text,
                input_context,
            });
        }
        Ok(IngestManifest {
            goal: goal.to_string(),
            entries,
            base_dir: dir.to_path_buf(),
        })
    }

    /// A directory or a manifest file. A non-empty `goal` overrides the
    /// manifest's own goal and is required for directories.
    pub fn load(path: &Path, goal: Option<&str>) -> Result<Self, IngestError> {
        let goal = goal.filter(|g| !g.trim().is_empty());
        if path.is_dir() {
            let goal = goal.ok_or(IngestError::MissingGoal)?;
            return Self::from_dir(path, goal);
        }
        let mut manifest = Self::from_file(path)?;
        if let Some(g) = goal {
            manifest.goal = g.to_string();
        }
        if manifest.goal.trim().is_empty() {
            return Err(IngestError::MissingGoal);
        }
        Ok(manifest)
    }

    fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        let p = Path::new(&entry.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

/// NFC plus CRLF → LF.
pub fn normalize_text(raw: &str) -> String {
    raw.replace("\r\n", "\n").nfc().collect()
}

/// Decoded pieces of a video file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VideoParts {
    /// JPEG frames in time order.
    pub frames: Vec<Vec<u8>>,
    /// Mono WAV of the audio track, if there is one.
    pub audio: Option<Vec<u8>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FramePolicy {
    pub seconds_per_frame: f64,
    pub max_frames: usize,
}

impl Default for FramePolicy {
    fn default() -> Self {
        FramePolicy {
            seconds_per_frame: 5.0,
            max_frames: 20,
        }
    }
}

pub trait MediaDecoder: Send + Sync {
    fn decode_video(&self, path: &Path, policy: &FramePolicy) -> Result<VideoParts, IngestError>;
}

/// Decodes with the `ffmpeg` executable found on `PATH`.
#[derive(Debug, Clone, Default)]
pub struct FfmpegDecoder;

impl MediaDecoder for FfmpegDecoder {
    fn decode_video(&self, path: &Path, policy: &FramePolicy) -> Result<VideoParts, IngestError> {
        let unsupported = || IngestError::UnsupportedCodec(path.display().to_string());
        let dir = tempfile::tempdir().map_err(|e| IngestError::DecodeError {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let frames_ok = Command::new("ffmpeg")
            .args(["-loglevel", "error", "-i"])
            .arg(path)
            .args(["-vf", &format!("fps=1/{}", policy.seconds_per_frame)])
            .args(["-frames:v", &policy.max_frames.to_string()])
            .arg(dir.path().join("frame%03d.jpg"))
            .status()
            .map_err(|_| unsupported())?
            .success();
        if !frames_ok {
            return Err(unsupported());
        }
        let mut names: Vec<PathBuf> = fs::read_dir(dir.path())
            .map_err(|_| unsupported())?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jpg"))
            .collect();
        names.sort();
        let frames = names.iter().filter_map(|p| fs::read(p).ok()).collect::<Vec<_>>();
        let wav = dir.path().join("audio.wav");
        let audio_ok = Command::new("ffmpeg")
            .args(["-loglevel", "error", "-i"])
            .arg(path)
            .args(["-vn", "-ac", "1", "-ar", "16000"])
            .arg(&wav)
            .status()
            .map(|s| s.success())
            .unwrap_or(false);
        let audio = if audio_ok { fs::read(&wav).ok() } else { None };
        Ok(VideoParts { frames, audio })
    }
}

const DESCRIBE_IMAGE: &str = "Describe this image in detail so that it can be analyzed as text: its subject, composition, layout, visible text, colors and style.";
const DESCRIBE_FRAMES: &str = "These are frames sampled in order from one video. Describe the video's visual content in detail so that it can be analyzed as text: scenes, shot sequence, on-screen text, composition and style.";
const TRANSCRIBE: &str = "Transcribe the speech in this audio verbatim.";

fn media_type(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        Some("mp3") => "audio/mpeg",
        Some("wav") => "audio/wav",
        Some("m4a") => "audio/mp4",
        Some("ogg") => "audio/ogg",
        Some("flac") => "audio/flac",
        _ => "application/octet-stream",
    }
}

fn call(
    gateway: &Gateway,
    entry: &str,
    tag: &str,
    prompt: &str,
    attachments: Vec<Attachment>,
) -> Result<String, StageError> {
    let request = ChatRequest {
        tag: tag.to_string(),
        prompt: prompt.to_string(),
        attachments,
        params: gateway.params().clone(),
    };
    let text = gateway.send(&request)?;
    let text = normalize_text(text.trim());
    if text.is_empty() {
        return Err(IngestError::EmptyDescription(entry.to_string()).into());
    }
    Ok(text)
}

/// Converts one media entry to text. Images take one description call;
/// video takes one call for the sampled frames and one transcription of
/// the audio track, joined under `VISUAL:` and `TRANSCRIPT:`; audio is
/// transcribed only.
pub fn describe_media(
    entry: &ManifestEntry,
    path: &Path,
    gateway: &Gateway,
    decoder: &dyn MediaDecoder,
    policy: &FramePolicy,
) -> Result<String, StageError> {
    let name = entry.path.as_str();
    let read = || fs::read(path).map_err(|_| IngestError::FileNotFound(path.display().to_string()));
    match entry.modality {
        Modality::Text => Err(IngestError::TextEntry(name.to_string()).into()),
        Modality::Image => {
            let data = read()?;
            let att = Attachment {
                kind: AttachmentKind::Image,
                media_type: media_type(path).to_string(),
                data,
            };
            call(gateway, name, "describe_image", DESCRIBE_IMAGE, vec![att])
        }
        Modality::Audio => {
            let data = read()?;
            let att = Attachment {
                kind: AttachmentKind::Audio,
                media_type: media_type(path).to_string(),
                data,
            };
            call(gateway, name, "transcribe_audio", TRANSCRIBE, vec![att])
        }
        Modality::Video => {
            if !path.exists() {
                return Err(IngestError::FileNotFound(path.display().to_string()).into());
            }
            let parts = decoder.decode_video(path, policy)?;
            if parts.frames.is_empty() {
                return Err(IngestError::UnsupportedCodec(name.to_string()).into());
            }
            let frames = parts
                .frames
                .into_iter()
                .take(policy.max_frames)
                .map(|data| Attachment {
                    kind: AttachmentKind::Image,
                    media_type: "image/jpeg".to_string(),
                    data,
                })
                .collect();
            let visual = call(gateway, name, "describe_video", DESCRIBE_FRAMES, frames)?;
            let transcript = match parts.audio {
                Some(data) => {
                    let att = Attachment {
                        kind: AttachmentKind::Audio,
                        media_type: "audio/wav".to_string(),
                        data,
                    };
                    call(gateway, name, "transcribe_audio", TRANSCRIBE, vec![att])?
                }
                None => "(no audio track)".to_string(),
            };
            Ok(format!("VISUAL:\n{visual}\n\nTRANSCRIPT:\n{transcript}"))
        }
    }
}

/// Options for [`load_examples`].
pub struct IngestOptions<'a> {
    pub gateway: Option<&'a Gateway>,
    pub decoder: &'a dyn MediaDecoder,
    pub frame_policy: FramePolicy,
}

impl Default for IngestOptions<'_> {
    fn default() -> Self {
        IngestOptions {
            gateway: None,
            decoder: &FfmpegDecoder,
            frame_policy: FramePolicy::default(),
        }
    }
}

/// Reads every entry and assigns ids `e1..en` in manifest order. Media
/// entries are described concurrently; assembly follows manifest order.
pub fn load_examples(manifest: &IngestManifest, options: &IngestOptions<'_>) -> Result<ExampleSet, StageError> {
    if manifest.entries.is_empty() {
        return Err(IngestError::NoExamples.into());
    }
    let contents: Vec<Result<(String, bool), StageError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = manifest
            .entries
            .iter()
            .map(|entry| {
                let path = manifest.resolve(entry);
                scope.spawn(move || read_entry(entry, &path, options))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("ingest worker panicked"))
            .collect()
    });
    let mut examples = Vec::with_capacity(contents.len());
    for (i, (entry, content)) in manifest.entries.iter().zip(contents).enumerate() {
        let (content, derived) = content?;
        if content.trim().is_empty() {
            return Err(IngestError::DecodeError {
                path: entry.path.clone(),
                reason: "file is empty".to_string(),
            }
            .into());
        }
        examples.push(Example {
            id: ExampleId(format!("e{}", i + 1)),
            content,
            input_context: entry
                .input_context
                .as_deref()
                .map(normalize_text)
                .filter(|c| !c.trim().is_empty()),
            modality: entry.modality,
            source_uri: derived.then(|| entry.path.clone()),
            derived,
        });
    }
    Ok(new_example_set(manifest.goal.clone(), examples)?)
}

fn read_entry(entry: &ManifestEntry, path: &Path, options: &IngestOptions<'_>) -> Result<(String, bool), StageError> {
    if entry.modality == Modality::Text {
        let bytes = fs::read(path).map_err(|_| IngestError::FileNotFound(path.display().to_string()))?;
        let text = String::from_utf8(bytes).map_err(|e| IngestError::DecodeError {
            path: entry.path.clone(),
            reason: e.to_string(),
        })?;
        return Ok((normalize_text(&text), false));
    }
    let gateway = options
        .gateway
        .ok_or_else(|| IngestError::NoGateway(entry.path.clone()))?;
    let text = describe_media(entry, path, gateway, options.decoder, &options.frame_policy).map_err(|e| match e {
        StageError::Ingest(i) => StageError::Ingest(i),
        other if other.is_transport() => other,
        other => IngestError::DescriptionFailed {
            entry: entry.path.clone(),
            reason: other.to_string(),
        }
        .into(),
    })?;
    Ok((text, true))
}
