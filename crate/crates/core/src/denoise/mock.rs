//! A local HTTP server speaking the remote denoiser protocol, for tests and demos.
//!
//! `refine` requests get their `init_image_png_b64` back unchanged. `init` requests get
//! a deterministic shading of the depth map tinted by the seed.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use tiny_http::{Header, Response, Server};

use super::{GenerateMode, GenerateRequest, GenerateResponse};
use crate::imagebuf::{ColorImage, DepthImage};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MockOptions {
    /// Answer this many requests with HTTP 500 before behaving normally.
    pub fail_first: usize,
    /// Answer with an image one pixel larger than requested.
    pub wrong_size: bool,
}

#[derive(Debug, Default)]
struct Counters {
    requests: AtomicUsize,
    failures: AtomicUsize,
}

pub struct MockServer {
    server: Arc<Server>,
    url: String,
    counters: Arc<Counters>,
    thread: Option<JoinHandle<()>>,
}

impl MockServer {
    /// Starts serving on `127.0.0.1:port` (0 picks a free port) in a background thread.
    pub fn start(port: u16, opts: MockOptions) -> std::io::Result<MockServer> {
        let server = Arc::new(Server::http(("127.0.0.1", port)).map_err(std::io::Error::other)?);
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("mock server has no IP address"))?;
        let counters = Arc::new(Counters::default());
        let thread = {
            let (server, counters) = (server.clone(), counters.clone());
            std::thread::spawn(move || serve(&server, opts, &counters))
        };
        Ok(MockServer {
            server,
            url: format!("http://{addr}/generate"),
            counters,
            thread: Some(thread),
        })
    }

    /// Endpoint URL for [`super::RemoteConfig::endpoint`].
    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn request_count(&self) -> usize {
        self.counters.requests.load(Ordering::SeqCst)
    }

    pub fn failures_served(&self) -> usize {
        self.counters.failures.load(Ordering::SeqCst)
    }

    /// Serves until the process exits.
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn serve(server: &Server, opts: MockOptions, counters: &Counters) {
    for mut request in server.incoming_requests() {
        let n = counters.requests.fetch_add(1, Ordering::SeqCst);
        let json = Header::from_bytes("content-type", "application/json").expect("static header");
        if n < opts.fail_first {
            counters.failures.fetch_add(1, Ordering::SeqCst);
            let _ = request.respond(Response::from_string("{\"error\":\"injected failure\"}").with_status_code(500));
            continue;
        }
        let mut body = String::new();
        let reply = match request.as_reader().read_to_string(&mut body) {
            Ok(_) => respond(&body, opts),
            Err(e) => Err(e.to_string()),
        };
        let _ = match reply {
            Ok(r) => request.respond(Response::from_string(r).with_header(json)),
            Err(e) => request.respond(Response::from_string(format!("{{\"error\":{e:?}}}")).with_status_code(400)),
        };
    }
}

fn respond(body: &str, opts: MockOptions) -> Result<String, String> {
    let req: GenerateRequest = serde_json::from_str(body).map_err(|e| e.to_string())?;
    let image_png_b64 = match (req.mode, &req.init_image_png_b64, opts.wrong_size) {
        (GenerateMode::Refine, Some(init), false) => init.clone(),
        (GenerateMode::Refine, None, _) => return Err("refine request without init image".into()),
        _ => {
            let depth_png = B64.decode(req.depth_png_b64.as_bytes()).map_err(|e| e.to_string())?;
            let depth = DepthImage::decode_png16(&depth_png).map_err(|e| e.to_string())?;
            let size = if opts.wrong_size { req.size + 1 } else { req.size };
            let img = shade_depth(&depth, size, req.seed);
            B64.encode(img.encode_png().map_err(|e| e.to_string())?)
        }
    };
    serde_json::to_string(&GenerateResponse { image_png_b64 }).map_err(|e| e.to_string())
}

fn shade_depth(depth: &DepthImage, size: u32, seed: u64) -> ColorImage {
    let tint = [(seed % 7) as f32 / 7.0, (seed % 11) as f32 / 11.0, (seed % 13) as f32 / 13.0];
    ColorImage::from_fn(size, size, |x, y| {
        let d = if x < depth.width() && y < depth.height() { depth.get(x, y) } else { 0.0 };
        std::array::from_fn(|k| 0.6 * d + 0.4 * tint[k] * d)
    })
}

#[cfg(test)]
mod tests {
    use super::super::{remote_generate, RemoteConfig};
    use super::*;
    use crate::denoise::DenoiseError;

    fn config(url: &str) -> RemoteConfig {
        RemoteConfig {
            endpoint: url.to_string(),
            timeout_ms: 5_000,
            retries: 3,
            backoff_ms: 1,
        }
    }

    fn request(mode: GenerateMode, init: Option<&ColorImage>) -> GenerateRequest {
        let depth = DepthImage::from_values(8, 8, (0..64).map(|i| i as f32 / 63.0).collect());
        GenerateRequest::new("a ball", mode, &depth, init, 5, 3).unwrap()
    }

    #[test]
    fn refine_echoes_the_init_image_exactly() {
        let server = MockServer::start(0, MockOptions::default()).unwrap();
        let img = ColorImage::from_fn(8, 8, |x, y| [x as f32 / 255.0, y as f32 / 255.0, 1.0]);
        let (back, retries) = remote_generate(&config(server.url()), &request(GenerateMode::Refine, Some(&img))).unwrap();
        assert_eq!(back, img);
        assert_eq!(retries, 0);
    }

    #[test]
    fn init_is_deterministic() {
        let server = MockServer::start(0, MockOptions::default()).unwrap();
        let cfg = config(server.url());
        let a = remote_generate(&cfg, &request(GenerateMode::Init, None)).unwrap();
        let b = remote_generate(&cfg, &request(GenerateMode::Init, None)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.0.dims(), (8, 8));
    }

    #[test]
    fn two_failures_are_retried() {
        let server = MockServer::start(
            0,
            MockOptions {
                fail_first: 2,
                ..MockOptions::default()
            },
        )
        .unwrap();
        let (_, retries) = remote_generate(&config(server.url()), &request(GenerateMode::Init, None)).unwrap();
        assert_eq!(retries, 2);
        assert_eq!(server.request_count(), 3);
        assert_eq!(server.failures_served(), 2);
    }

    #[test]
    fn persistent_failure_exhausts_retries() {
        let server = MockServer::start(
            0,
            MockOptions {
                fail_first: 100,
                ..MockOptions::default()
            },
        )
        .unwrap();
        let err = remote_generate(&config(server.url()), &request(GenerateMode::Init, None)).unwrap_err();
        match err {
            DenoiseError::RemoteUnavailable { attempts, retries, .. } => {
                assert_eq!((attempts, retries), (4, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(server.request_count(), 4);
    }

    #[test]
    fn wrong_size_is_a_bad_response() {
        let server = MockServer::start(
            0,
            MockOptions {
                wrong_size: true,
                ..MockOptions::default()
            },
        )
        .unwrap();
        let err = remote_generate(&config(server.url()), &request(GenerateMode::Init, None)).unwrap_err();
        assert!(matches!(err, DenoiseError::RemoteBadResponse { .. }), "{err:?}");
        assert_eq!(server.request_count(), 1);
    }

    #[test]
    fn dead_endpoint_is_unavailable() {
        // bind and drop to find a port with nothing listening
        let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let mut cfg = config(&format!("http://127.0.0.1:{port}/generate"));
        cfg.retries = 1;
        let err = remote_generate(&cfg, &request(GenerateMode::Init, None)).unwrap_err();
        assert!(matches!(err, DenoiseError::RemoteUnavailable { attempts: 2, .. }), "{err:?}");
    }
}
