//! Out-of-process surrogate adapter.
//!
//! The adapter is any executable speaking line-delimited JSON on
//! stdin/stdout. Each request carries an `op` field; replies carry
//! `ok: true` plus the payload, or `ok: false` with an `error` string.
//! Pixel buffers use the in-memory layout: channel-major, row-major within
//! a channel, values in `[0, 1]`.
//!
//! Ops: `hello` -> `{image_dim, text_dim}`; `embed_image {height, width,
//! pixels}` -> `{values}`; `embed_text {tokens}` -> `{values}`;
//! `propose_regions {height, width, pixels, max_regions}` -> `{boxes}`
//! (`[top, left, height, width]` each); `mask_candidates {tokens,
//! position, max}` -> `{words}`. The adapter must be deterministic; it is
//! spawned once per run and exits when stdin closes.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use cmbd_core::image::ImageSample;
use cmbd_core::rng::fnv1a;
use cmbd_core::surrogate::{
    CandidateOracle, CandidateSet, Embedding, ImageEmbedder, RegionProposal, RegionProposer,
    TextEmbedder,
};
use cmbd_core::text::TextSample;
use cmbd_core::Error as CoreError;
use serde::Deserialize;
use serde_json::json;

use crate::errors::{CliError, Result};

pub const COMMAND_ENV: &str = "CMBD_SURROGATE_CMD";

#[derive(Debug, Deserialize)]
struct Reply {
    ok: bool,
    #[serde(default)]
    error: Option<String>,
    #[serde(default)]
    image_dim: Option<usize>,
    #[serde(default)]
    text_dim: Option<usize>,
    #[serde(default)]
    values: Option<Vec<f64>>,
    #[serde(default)]
    boxes: Option<Vec<[usize; 4]>>,
    #[serde(default)]
    words: Option<Vec<String>>,
}

struct Pipe {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

pub struct ExternalSurrogate {
    pipe: Mutex<Pipe>,
    command: String,
    image_dim: usize,
    text_dim: usize,
}

fn backend_err(msg: impl Into<String>) -> CliError {
    CliError::Core(CoreError::Backend(msg.into()))
}

impl ExternalSurrogate {
    /// Spawns `command` (whitespace-split into program and arguments) and
    /// performs the `hello` handshake.
    pub fn spawn(command: &str) -> Result<ExternalSurrogate> {
        let mut parts = command.split_whitespace();
        let program = parts
            .next()
            .ok_or_else(|| backend_err("surrogate command is empty"))?;
        let mut child = Command::new(program)
            .args(parts)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| backend_err(format!("spawning surrogate {command:?}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        let mut pipe = Pipe {
            child,
            stdin,
            stdout,
        };
        let hello = call(&mut pipe, &json!({"op": "hello"}))?;
        let image_dim = hello
            .image_dim
            .ok_or_else(|| backend_err("hello reply lacks image_dim"))?;
        let text_dim = hello
            .text_dim
            .ok_or_else(|| backend_err("hello reply lacks text_dim"))?;
        if image_dim == 0 || text_dim == 0 {
            return Err(backend_err("surrogate declared zero-width embeddings"));
        }
        Ok(ExternalSurrogate {
            pipe: Mutex::new(pipe),
            command: command.to_string(),
            image_dim,
            text_dim,
        })
    }

    fn call(&self, request: &serde_json::Value) -> Result<Reply> {
        let mut pipe = self.pipe.lock().expect("surrogate pipe lock");
        call(&mut pipe, request)
    }
}

fn call(pipe: &mut Pipe, request: &serde_json::Value) -> Result<Reply> {
    let line = serde_json::to_string(request).expect("requests serialize");
    pipe.stdin
        .write_all(line.as_bytes())
        .and_then(|_| pipe.stdin.write_all(b"\n"))
        .and_then(|_| pipe.stdin.flush())
        .map_err(|e| backend_err(format!("writing to surrogate: {e}")))?;
    let mut reply_line = String::new();
    let n = pipe
        .stdout
        .read_line(&mut reply_line)
        .map_err(|e| backend_err(format!("reading from surrogate: {e}")))?;
    if n == 0 {
        return Err(backend_err("surrogate closed its output"));
    }
    let reply: Reply = serde_json::from_str(reply_line.trim_end())
        .map_err(|e| backend_err(format!("bad surrogate reply: {e}")))?;
    if !reply.ok {
        return Err(backend_err(format!(
            "surrogate refused request: {}",
            reply.error.as_deref().unwrap_or("no error message")
        )));
    }
    Ok(reply)
}

impl Drop for ExternalSurrogate {
    fn drop(&mut self) {
        if let Ok(pipe) = self.pipe.get_mut() {
            // Closing stdin lets the adapter exit; reap it so no zombie
            // outlives the run.
            let _ = pipe.stdin.flush();
        }
        if let Ok(pipe) = self.pipe.get_mut() {
            let _ = pipe.child.kill();
            let _ = pipe.child.wait();
        }
    }
}

fn values_of(reply: Reply, dim: usize, what: &str) -> cmbd_core::Result<Embedding> {
    let values = reply
        .values
        .ok_or_else(|| CoreError::Backend(format!("{what} reply lacks values")))?;
    if values.len() != dim {
        return Err(CoreError::Backend(format!(
            "{what} reply has {} values, surrogate declared {dim}",
            values.len()
        )));
    }
    Embedding::checked(values)
}

fn to_core(err: CliError) -> CoreError {
    match err {
        CliError::Core(e) => e,
        other => CoreError::Backend(other.to_string()),
    }
}

impl ImageEmbedder for ExternalSurrogate {
    fn dim(&self) -> usize {
        self.image_dim
    }

    fn embed_image(&self, image: &ImageSample) -> cmbd_core::Result<Embedding> {
        let reply = self
            .call(&json!({
                "op": "embed_image",
                "height": image.height(),
                "width": image.width(),
                "pixels": image.data(),
            }))
            .map_err(to_core)?;
        values_of(reply, self.image_dim, "embed_image")
    }

    fn fingerprint(&self) -> u64 {
        fnv1a(self.command.as_bytes()) ^ (self.image_dim as u64) << 32 ^ self.text_dim as u64
    }
}

impl TextEmbedder for ExternalSurrogate {
    fn dim(&self) -> usize {
        self.text_dim
    }

    fn embed_text(&self, text: &TextSample) -> cmbd_core::Result<Embedding> {
        let reply = self
            .call(&json!({"op": "embed_text", "tokens": text.tokens()}))
            .map_err(to_core)?;
        values_of(reply, self.text_dim, "embed_text")
    }

    fn fingerprint(&self) -> u64 {
        fnv1a(self.command.as_bytes()).rotate_left(17) ^ self.text_dim as u64
    }
}

impl RegionProposer for ExternalSurrogate {
    fn propose_regions(
        &self,
        image: &ImageSample,
        max_regions: usize,
    ) -> cmbd_core::Result<Vec<RegionProposal>> {
        let reply = self
            .call(&json!({
                "op": "propose_regions",
                "height": image.height(),
                "width": image.width(),
                "pixels": image.data(),
                "max_regions": max_regions,
            }))
            .map_err(to_core)?;
        let boxes = reply
            .boxes
            .ok_or_else(|| CoreError::Backend("propose_regions reply lacks boxes".into()))?;
        let mut out = Vec::with_capacity(boxes.len());
        for [top, left, height, width] in boxes {
            let region = RegionProposal {
                top,
                left,
                height,
                width,
            };
            if !region.fits(image.height(), image.width()) {
                return Err(CoreError::Backend(format!(
                    "surrogate proposed out-of-bounds region {region:?}"
                )));
            }
            out.push(region);
        }
        if out.len() > max_regions {
            out.truncate(max_regions);
        }
        Ok(out)
    }
}

impl CandidateOracle for ExternalSurrogate {
    fn mask_candidates(
        &self,
        text: &TextSample,
        position: usize,
        max_candidates: usize,
    ) -> cmbd_core::Result<CandidateSet> {
        if position >= text.len() {
            return Err(CoreError::Validation(format!(
                "candidate position {position} out of range for {} tokens",
                text.len()
            )));
        }
        let reply = self
            .call(&json!({
                "op": "mask_candidates",
                "tokens": text.tokens(),
                "position": position,
                "max": max_candidates,
            }))
            .map_err(to_core)?;
        let words = reply
            .words
            .ok_or_else(|| CoreError::Backend("mask_candidates reply lacks words".into()))?;
        Ok(CandidateSet::build(
            position,
            &text.tokens()[position],
            words.iter().map(|w| w.as_str()),
            max_candidates,
        ))
    }
}
