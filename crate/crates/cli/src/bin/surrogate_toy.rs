//! Reference surrogate server: serves the toy embedders over the external
//! surrogate protocol (one JSON request per line on stdin, one JSON reply
//! per line on stdout). Exists so the adapter has something to talk to in
//! tests, and as a template for wrapping a real model behind the protocol.

use std::io::{self, BufRead, Write};
use std::process::ExitCode;

use clap::Parser;
use serde::Deserialize;
use serde_json::json;

use cmbd_core::surrogate::{
    CandidateOracle, ImageEmbedder, LexiconOracle, RegionProposer, TextEmbedder, ToyImageEmbedder,
    ToyRegionProposer, ToyTextEmbedder,
};
use cmbd_core::{ImageSample, TextSample};

#[derive(Parser)]
#[command(name = "cmbd-surrogate-toy", version)]
struct Args {
    /// Seed for the image embedder's random projection.
    #[arg(long, default_value_t = 5)]
    image_seed: u64,

    /// Seed for the text embedder's hashed projection.
    #[arg(long, default_value_t = 7)]
    text_seed: u64,
}

#[derive(Deserialize)]
struct Request {
    op: String,
    #[serde(default)]
    height: usize,
    #[serde(default)]
    width: usize,
    #[serde(default)]
    pixels: Vec<f64>,
    #[serde(default)]
    tokens: Vec<String>,
    #[serde(default)]
    max_regions: usize,
    #[serde(default)]
    position: usize,
    #[serde(default)]
    max: usize,
}

struct Server {
    image: ToyImageEmbedder,
    text: ToyTextEmbedder,
    proposer: ToyRegionProposer,
    oracle: LexiconOracle,
}

impl Server {
    fn handle(&self, line: &str) -> serde_json::Value {
        let request: Request = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => return json!({"ok": false, "error": format!("bad request: {e}")}),
        };
        match self.dispatch(&request) {
            Ok(payload) => payload,
            Err(e) => json!({"ok": false, "error": e.to_string()}),
        }
    }

    fn dispatch(&self, request: &Request) -> cmbd_core::Result<serde_json::Value> {
        match request.op.as_str() {
            "hello" => Ok(json!({
                "ok": true,
                "image_dim": ImageEmbedder::dim(&self.image),
                "text_dim": TextEmbedder::dim(&self.text),
            })),
            "embed_image" => {
                let image = image_of(request)?;
                let embedding = self.image.embed_image(&image)?;
                Ok(json!({"ok": true, "values": embedding.values()}))
            }
            "embed_text" => {
                let text = text_of(request);
                let embedding = self.text.embed_text(&text)?;
                Ok(json!({"ok": true, "values": embedding.values()}))
            }
            "propose_regions" => {
                let image = image_of(request)?;
                let regions = self.proposer.propose_regions(&image, request.max_regions)?;
                let boxes: Vec<[usize; 4]> = regions
                    .iter()
                    .map(|r| [r.top, r.left, r.height, r.width])
                    .collect();
                Ok(json!({"ok": true, "boxes": boxes}))
            }
            "mask_candidates" => {
                let text = text_of(request);
                let set = self
                    .oracle
                    .mask_candidates(&text, request.position, request.max)?;
                Ok(json!({"ok": true, "words": set.words}))
            }
            other => Err(cmbd_core::Error::Validation(format!(
                "unknown op {other:?}"
            ))),
        }
    }
}

fn image_of(request: &Request) -> cmbd_core::Result<ImageSample> {
    ImageSample::from_data(request.height, request.width, request.pixels.clone())
}

fn text_of(request: &Request) -> TextSample {
    TextSample::from_tokens_for_analysis(request.tokens.clone())
}

fn main() -> ExitCode {
    let args = Args::parse();
    let server = Server {
        image: ToyImageEmbedder::new(args.image_seed),
        text: ToyTextEmbedder::new(args.text_seed),
        proposer: ToyRegionProposer,
        oracle: LexiconOracle,
    };
    let stdin = io::stdin();
    let mut stdout = io::stdout();
    for line in stdin.lock().lines() {
        let line = match line {
            Ok(line) => line,
            Err(_) => break,
        };
        if line.trim().is_empty() {
            continue;
        }
        let reply = server.handle(&line);
        if writeln!(stdout, "{reply}").and_then(|()| stdout.flush()).is_err() {
            break;
        }
    }
    ExitCode::SUCCESS
}
