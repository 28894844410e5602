use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use log::warn;
use serde::{Deserialize, Serialize};

use super::DenoiseError;
use crate::imagebuf::{ColorImage, DepthImage};

/// Environment variable that overrides the configured endpoint.
pub const ENDPOINT_ENV: &str = "TEXOPT_DENOISER_URL";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub timeout_ms: u64,
    /// Extra attempts after the first failure.
    pub retries: u32,
    /// Delay before the first retry; doubled for each further one.
    pub backoff_ms: u64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            endpoint: "http://127.0.0.1:8765/generate".into(),
            timeout_ms: 60_000,
            retries: 3,
            backoff_ms: 200,
        }
    }
}

impl RemoteConfig {
    /// Replaces the endpoint with the environment override when it is set and non-empty.
    pub fn with_env_override(mut self) -> Self {
        if let Ok(url) = std::env::var(ENDPOINT_ENV) {
            if !url.trim().is_empty() {
                self.endpoint = url.trim().to_string();
            }
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerateMode {
    /// Generate a view from depth alone.
    Init,
    /// Restore `init_image`, which sits at `noise_level`.
    Refine,
}

/// Wire format of a generation request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub prompt: String,
    pub mode: GenerateMode,
    pub depth_png_b64: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_image_png_b64: Option<String>,
    pub noise_level: usize,
    pub seed: u64,
    pub size: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub image_png_b64: String,
}

fn codec_error(e: impl std::fmt::Display) -> DenoiseError {
    DenoiseError::ShapeMismatch(format!("cannot encode request image: {e}"))
}

impl GenerateRequest {
    pub fn new(
        prompt: &str,
        mode: GenerateMode,
        depth: &DepthImage,
        init: Option<&ColorImage>,
        noise_level: usize,
        seed: u64,
    ) -> Result<Self, DenoiseError> {
        let init_image_png_b64 = match init {
            Some(img) => Some(B64.encode(img.encode_png().map_err(codec_error)?)),
            None => None,
        };
        Ok(GenerateRequest {
            prompt: prompt.to_string(),
            mode,
            depth_png_b64: B64.encode(depth.encode_png16().map_err(codec_error)?),
            init_image_png_b64,
            noise_level,
            seed,
            size: depth.width(),
        })
    }
}

enum Failure {
    Retryable(String),
    Fatal(String),
}

fn attempt(agent: &ureq::Agent, cfg: &RemoteConfig, body: &[u8], size: u32) -> Result<ColorImage, Failure> {
    let mut resp = agent
        .post(&cfg.endpoint)
        .header("content-type", "application/json")
        .send(body)
        .map_err(|e| Failure::Retryable(e.to_string()))?;
    let status = resp.status().as_u16();
    let text = resp
        .body_mut()
        .with_config()
        .limit(256 * 1024 * 1024)
        .read_to_string()
        .map_err(|e| Failure::Retryable(format!("reading response: {e}")))?;
    if status >= 500 {
        return Err(Failure::Retryable(format!("HTTP {status}: {}", text.chars().take(200).collect::<String>())));
    }
    if !(200..300).contains(&status) {
        return Err(Failure::Fatal(format!("HTTP {status}: {}", text.chars().take(200).collect::<String>())));
    }
    let parsed: GenerateResponse = serde_json::from_str(&text).map_err(|e| Failure::Fatal(format!("invalid JSON: {e}")))?;
    let bytes = B64
        .decode(parsed.image_png_b64.as_bytes())
        .map_err(|e| Failure::Fatal(format!("invalid base64: {e}")))?;
    let img = ColorImage::decode_png(&bytes).map_err(|e| Failure::Fatal(format!("undecodable image: {e}")))?;
    if img.dims() != (size, size) {
        return Err(Failure::Fatal(format!(
            "image is {}x{}, expected {size}x{size}",
            img.width(),
            img.height()
        )));
    }
    Ok(img)
}

/// Sends `req` to the configured endpoint. Transport failures, timeouts and 5xx answers
/// are retried with exponential backoff; other failures are reported at once.
/// Returns the image and the number of retries it took.
pub fn remote_generate(cfg: &RemoteConfig, req: &GenerateRequest) -> Result<(ColorImage, usize), DenoiseError> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
        .http_status_as_error(false)
        .build()
        .into();
    let body = serde_json::to_vec(req).expect("request serializes");
    let max_retries = cfg.retries as usize;
    let mut retries = 0;
    loop {
        match attempt(&agent, cfg, &body, req.size) {
            Ok(img) => return Ok((img, retries)),
            Err(Failure::Fatal(message)) => {
                return Err(DenoiseError::RemoteBadResponse {
                    endpoint: cfg.endpoint.clone(),
                    attempts: retries + 1,
                    retries,
                    message,
                })
            }
            Err(Failure::Retryable(message)) => {
                if retries >= max_retries {
                    return Err(DenoiseError::RemoteUnavailable {
                        endpoint: cfg.endpoint.clone(),
                        attempts: retries + 1,
                        retries,
                        message,
                    });
                }
                let delay = cfg.backoff_ms.saturating_mul(1 << retries.min(16));
                warn!(
                    "remote denoiser attempt {} failed ({message}); retry {} of {max_retries} in {delay} ms",
                    retries + 1,
                    retries + 1
                );
                std::thread::sleep(Duration::from_millis(delay));
                retries += 1;
            }
        }
    }
}
