//! Black-box checks of a generation service against the wire protocol.

use std::time::Duration;

use image::{GrayImage, Luma, Rgba, RgbaImage};
use serde::Serialize;

use super::wire::{decode_png, WireError, WireRequest, WireResponse, GENERATE_PATH};
use super::{GenMode, GenRequest, ViewAngles};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConformanceCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConformanceReport {
    pub base_url: String,
    pub checks: Vec<ConformanceCheck>,
}

impl ConformanceReport {
    pub fn failures(&self) -> usize {
        self.checks.iter().filter(|c| !c.passed).count()
    }

    pub fn passed(&self) -> bool {
        self.failures() == 0
    }
}

// Non-square on purpose so swapped axes are caught.
const W: u32 = 48;
const H: u32 = 40;

fn sample_request(mode: GenMode) -> GenRequest {
    GenRequest {
        mode,
        reference: RgbaImage::from_fn(W, H, |x, y| Rgba([(x * 5) as u8, (y * 6) as u8, 90, 255])),
        depth: GrayImage::from_fn(W, H, |x, y| {
            let inside = (8..40).contains(&x) && (6..34).contains(&y);
            Luma([if inside { 60 + x as u8 * 3 } else { 0 }])
        }),
        mask: (mode == GenMode::Inpaint).then(|| GrayImage::from_fn(W, H, |x, _| Luma([if (20..28).contains(&x) { 255 } else { 0 }]))),
        prompt: "a person, side view, full body, plain background".into(),
        seed: 1234,
        view: ViewAngles {
            azimuth_deg: 90.0,
            elevation_deg: 0.0,
        },
    }
}

struct Reply {
    status: u16,
    body: String,
}

fn post(agent: &ureq::Agent, url: &str, body: &str) -> Result<Reply, String> {
    match agent.post(url).set("Content-Type", "application/json").send_string(body) {
        Ok(r) => Ok(Reply {
            status: r.status(),
            body: r.into_string().map_err(|e| e.to_string())?,
        }),
        Err(ureq::Error::Status(status, r)) => Ok(Reply {
            status,
            body: r.into_string().unwrap_or_default(),
        }),
        Err(e) => Err(e.to_string()),
    }
}

fn wire(req: &GenRequest) -> String {
    serde_json::to_string(&WireRequest::from_request(req).expect("sample encodes")).expect("serializable")
}

type Outcome = Result<(), String>;

fn decode_ok(reply: &Reply) -> Result<RgbaImage, String> {
    if reply.status != 200 {
        return Err(format!("status {}: {}", reply.status, reply.body));
    }
    let v: serde_json::Value = serde_json::from_str(&reply.body).map_err(|e| format!("body is not JSON: {e}"))?;
    for key in ["image_png_b64", "model_id"] {
        if !v.get(key).is_some_and(|x| x.is_string()) {
            return Err(format!("missing string field {key}"));
        }
    }
    let resp: WireResponse = serde_json::from_value(v).map_err(|e| e.to_string())?;
    Ok(decode_png(&resp.image_png_b64).map_err(|e| e.to_string())?.to_rgba8())
}

fn expect_error(reply: &Reply, status: u16) -> Outcome {
    if reply.status != status {
        return Err(format!("expected {status}, got {}", reply.status));
    }
    serde_json::from_str::<WireError>(&reply.body)
        .map(|_| ())
        .map_err(|e| format!("error body lacks {{error}}: {e}"))
}

/// Runs every check against `base_url`; transport errors fail the affected
/// check rather than aborting the run.
pub fn run_conformance(base_url: &str) -> ConformanceReport {
    let base = base_url.trim_end_matches('/').to_string();
    let url = format!("{base}{GENERATE_PATH}");
    let agent = ureq::AgentBuilder::new().timeout(Duration::from_secs(120)).build();
    let gen = sample_request(GenMode::Generate);
    let inp = sample_request(GenMode::Inpaint);
    let mut checks = Vec::new();
    let mut record = |name: &'static str, r: Outcome| {
        checks.push(ConformanceCheck {
            name,
            passed: r.is_ok(),
            detail: r.err().unwrap_or_default(),
        });
    };

    let first = post(&agent, &url, &wire(&gen));
    record("generate_schema", first.as_ref().map_err(Clone::clone).and_then(|r| decode_ok(r).map(|_| ())));
    record(
        "dimension_contract",
        first.as_ref().map_err(Clone::clone).and_then(|r| {
            let img = decode_ok(r)?;
            if img.dimensions() == (W, H) {
                Ok(())
            } else {
                Err(format!("got {:?}, requested {:?}", img.dimensions(), (W, H)))
            }
        }),
    );
    record(
        "deterministic_under_fixed_seed",
        first.as_ref().map_err(Clone::clone).and_then(|r| {
            let a = decode_ok(r)?;
            let b = decode_ok(&post(&agent, &url, &wire(&gen))?)?;
            if a == b {
                Ok(())
            } else {
                Err("two identical requests produced different images".into())
            }
        }),
    );
    record(
        "inpaint_with_mask",
        post(&agent, &url, &wire(&inp)).and_then(|r| {
            let img = decode_ok(&r)?;
            if img.dimensions() == (W, H) {
                Ok(())
            } else {
                Err(format!("got {:?}", img.dimensions()))
            }
        }),
    );
    let mut no_mask = serde_json::to_value(WireRequest::from_request(&inp).expect("encodes")).expect("serializable");
    no_mask.as_object_mut().expect("object").remove("mask_png_b64");
    record(
        "inpaint_requires_mask",
        post(&agent, &url, &no_mask.to_string()).and_then(|r| expect_error(&r, 400)),
    );
    record(
        "malformed_request",
        post(&agent, &url, "{\"mode\": \"generate\"").and_then(|r| expect_error(&r, 400)),
    );
    ConformanceReport { base_url: base, checks }
}
