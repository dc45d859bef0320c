//! A minimal in-process server speaking the generation wire protocol, backed
//! by [`MockBackend`]. Intended for tests and local dry runs.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use image::{imageops, DynamicImage};

use super::wire::{encode_png, WireError, WireRequest, WireResponse, GENERATE_PATH};
use super::{Backend, GenError, MockBackend};

#[derive(Debug, Clone, Default)]
pub struct StubOptions {
    /// Answer with images of this size instead of the requested one.
    pub force_size: Option<(u32, u32)>,
    /// Answer the first N requests with HTTP 503.
    pub fail_first: usize,
}

pub struct StubServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    requests: Arc<AtomicUsize>,
    handle: Option<JoinHandle<()>>,
}

impl StubServer {
    /// Binds an ephemeral localhost port and serves until dropped.
    pub fn start(options: StubOptions) -> io::Result<StubServer> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let requests = Arc::new(AtomicUsize::new(0));
        let (s, r) = (stop.clone(), requests.clone());
        let handle = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if s.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let n = r.fetch_add(1, Ordering::SeqCst);
                if let Err(e) = serve(stream, &options, n) {
                    log::debug!("stub connection error: {e}");
                }
            }
        });
        Ok(StubServer {
            addr,
            stop,
            requests,
            handle: Some(handle),
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Connections accepted so far.
    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn respond(stream: &mut TcpStream, status: u16, body: &str) -> io::Result<()> {
    let reason = match status {
        200 => "OK",
        400 => "Bad Request",
        404 => "Not Found",
        405 => "Method Not Allowed",
        422 => "Unprocessable Entity",
        503 => "Service Unavailable",
        _ => "Internal Server Error",
    };
    write!(
        stream,
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )?;
    stream.flush()
}

fn error(stream: &mut TcpStream, status: u16, msg: impl Into<String>) -> io::Result<()> {
    let body = serde_json::to_string(&WireError { error: msg.into() }).expect("serializable");
    respond(stream, status, &body)
}

fn serve(mut stream: TcpStream, options: &StubOptions, index: usize) -> io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let mut parts = line.split_whitespace();
    let (method, path) = (parts.next().unwrap_or(""), parts.next().unwrap_or(""));
    let mut length = 0usize;
    loop {
        let mut h = String::new();
        if reader.read_line(&mut h)? == 0 || h == "\r\n" || h == "\n" {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            if k.trim().eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; length];
    reader.read_exact(&mut body)?;
    if method.is_empty() {
        return Ok(());
    }
    if path != GENERATE_PATH {
        return error(&mut stream, 404, format!("no route {path}"));
    }
    if method != "POST" {
        return error(&mut stream, 405, "use POST");
    }
    if index < options.fail_first {
        return error(&mut stream, 503, "warming up");
    }
    let wire: WireRequest = match serde_json::from_slice(&body) {
        Ok(w) => w,
        Err(e) => return error(&mut stream, 400, format!("malformed request: {e}")),
    };
    let req = match wire.into_request() {
        Ok(r) => r,
        Err(e @ GenError::DimensionMismatch { .. }) => return error(&mut stream, 422, e.to_string()),
        Err(e) => return error(&mut stream, 400, e.to_string()),
    };
    let img = match MockBackend.generate(&req) {
        Ok(i) => i.pixels,
        Err(e) => return error(&mut stream, 500, e.to_string()),
    };
    let img = match options.force_size {
        Some((w, h)) => imageops::resize(&img, w, h, imageops::FilterType::Nearest),
        None => img,
    };
    let png = match encode_png(&DynamicImage::ImageRgba8(img)) {
        Ok(p) => p,
        Err(e) => return error(&mut stream, 500, e.to_string()),
    };
    let body = serde_json::to_string(&WireResponse {
        image_png_b64: png,
        model_id: "stub-mock".into(),
    })
    .expect("serializable");
    respond(&mut stream, 200, &body)
}
