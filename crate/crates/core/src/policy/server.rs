//! Loopback chat-completions server with scripted replies, used to exercise
//! the HTTP client end to end without network access.

use super::vlm::ScriptedResponder;
use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

/// One scripted reaction to an incoming request.
#[derive(Clone, Debug)]
pub enum Reply {
    /// 200 with a chat-completions body carrying this content.
    Content(String),
    /// Arbitrary status with a raw body.
    Status(u16, String),
    /// Close the connection without responding.
    Drop,
    /// Sleep before answering with this content.
    Delay(Duration, String),
}

#[derive(Clone, Debug)]
pub struct RecordedRequest {
    pub method: String,
    pub path: String,
    /// Header names are lowercased.
    pub headers: Vec<(String, String)>,
    pub body: serde_json::Value,
}

impl RecordedRequest {
    pub fn header(&self, name: &str) -> Option<&str> {
        let name = name.to_ascii_lowercase();
        self.headers.iter().find(|(k, _)| *k == name).map(|(_, v)| v.as_str())
    }
}

struct Shared {
    queue: Mutex<VecDeque<Reply>>,
    requests: Mutex<Vec<RecordedRequest>>,
    responder: ScriptedResponder,
    stop: AtomicBool,
}

/// Serves until dropped. Replies come from the queue first, then from the
/// responder's rules.
pub struct ScriptedServer {
    addr: std::net::SocketAddr,
    shared: Arc<Shared>,
    handle: Option<JoinHandle<()>>,
}

impl ScriptedServer {
    pub fn start(responder: ScriptedResponder) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let shared = Arc::new(Shared {
            queue: Mutex::new(VecDeque::new()),
            requests: Mutex::new(Vec::new()),
            responder,
            stop: AtomicBool::new(false),
        });
        let s = Arc::clone(&shared);
        let handle = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if s.stop.load(Ordering::SeqCst) {
                    break;
                }
                if let Ok(stream) = stream {
                    let s = Arc::clone(&s);
                    std::thread::spawn(move || handle_connection(stream, &s));
                }
            }
        });
        Ok(Self {
            addr,
            shared,
            handle: Some(handle),
        })
    }

    /// Base URL suitable for `RemoteVlmConfig::endpoint`.
    pub fn endpoint(&self) -> String {
        format!("http://{}/v1", self.addr)
    }

    pub fn push(&self, reply: Reply) {
        self.shared.queue.lock().unwrap().push_back(reply);
    }

    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.shared.requests.lock().unwrap().clone()
    }
}

impl Drop for ScriptedServer {
    fn drop(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        // wake the accept loop
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn handle_connection(stream: TcpStream, shared: &Shared) -> std::io::Result<()> {
    stream.set_read_timeout(Some(Duration::from_secs(5)))?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut line = String::new();
    if reader.read_line(&mut line)? == 0 {
        return Ok(());
    }
    let mut parts = line.split_whitespace();
    let method = parts.next().unwrap_or_default().to_string();
    let path = parts.next().unwrap_or_default().to_string();
    let mut headers = Vec::new();
    let mut content_length = 0usize;
    loop {
        let mut h = String::new();
        if reader.read_line(&mut h)? == 0 {
            break;
        }
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            let k = k.trim().to_ascii_lowercase();
            let v = v.trim().to_string();
            if k == "content-length" {
                content_length = v.parse().unwrap_or(0);
            }
            headers.push((k, v));
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;
    let json: serde_json::Value = serde_json::from_slice(&body).unwrap_or(serde_json::Value::Null);
    let text = request_text(&json);
    shared.requests.lock().unwrap().push(RecordedRequest {
        method,
        path,
        headers,
        body: json,
    });
    if shared.stop.load(Ordering::SeqCst) {
        return Ok(());
    }

    let reply = shared
        .queue
        .lock()
        .unwrap()
        .pop_front()
        .unwrap_or_else(|| Reply::Content(shared.responder.reply_for(&text)));
    let mut out = stream;
    match reply {
        Reply::Drop => Ok(()),
        Reply::Content(c) => write_response(&mut out, 200, &completion_body(&c)),
        Reply::Status(code, body) => write_response(&mut out, code, &body),
        Reply::Delay(d, c) => {
            std::thread::sleep(d);
            write_response(&mut out, 200, &completion_body(&c))
        }
    }
}

fn request_text(json: &serde_json::Value) -> String {
    let mut out = Vec::new();
    if let Some(msgs) = json["messages"].as_array() {
        for m in msgs {
            if let Some(parts) = m["content"].as_array() {
                out.extend(parts.iter().filter_map(|p| p["text"].as_str()));
            }
        }
    }
    out.join("\n")
}

fn completion_body(content: &str) -> String {
    serde_json::json!({
        "id": "scripted",
        "object": "chat.completion",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}]
    })
    .to_string()
}

fn write_response(out: &mut TcpStream, code: u16, body: &str) -> std::io::Result<()> {
    let reason = match code {
        200 => "OK",
        400 => "Bad Request",
        401 => "Unauthorized",
        429 => "Too Many Requests",
        500 => "Internal Server Error",
        503 => "Service Unavailable",
        _ => "Status",
    };
    write!(
        out,
        "HTTP/1.1 {code} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )?;
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::super::vlm::{HttpTransport, RemoteVlmConfig, VlmClient};
    use super::*;
    use crate::prompting::ContentPart;

    fn client(server: &ScriptedServer, retries: u32, timeout: f64) -> VlmClient {
        let cfg = RemoteVlmConfig {
            endpoint: server.endpoint(),
            max_retries: retries,
            timeout_secs: timeout,
            ..Default::default()
        };
        let t = Arc::new(HttpTransport::with_token(&cfg, Some("secret".into())));
        VlmClient::new(cfg, t).unwrap()
    }

    fn text(s: &str) -> Vec<ContentPart> {
        vec![ContentPart::Text { text: s.into() }]
    }

    #[test]
    fn request_schema_and_auth() {
        let server = ScriptedServer::start(ScriptedResponder::builtin()).unwrap();
        let c = client(&server, 0, 5.0);
        assert_eq!(c.complete(text("hello")).unwrap().as_deref(), Some("ANSWER: 1"));
        let reqs = server.requests();
        assert_eq!(reqs.len(), 1);
        assert_eq!(reqs[0].method, "POST");
        assert_eq!(reqs[0].path, "/v1/chat/completions");
        assert_eq!(reqs[0].header("authorization"), Some("Bearer secret"));
        assert_eq!(reqs[0].body["messages"][0]["role"], "user");
        assert_eq!(reqs[0].body["messages"][0]["content"][0]["type"], "text");
    }

    #[test]
    fn retries_after_server_error_and_drop() {
        let server = ScriptedServer::start(ScriptedResponder::builtin()).unwrap();
        server.push(Reply::Status(503, "busy".into()));
        server.push(Reply::Drop);
        server.push(Reply::Content("ANSWER: 2".into()));
        let c = client(&server, 2, 5.0);
        assert_eq!(c.complete(text("x")).unwrap().as_deref(), Some("ANSWER: 2"));
        assert_eq!(server.requests().len(), 3);
    }

    #[test]
    fn timeout_counts_as_attempt() {
        let server = ScriptedServer::start(ScriptedResponder::builtin()).unwrap();
        server.push(Reply::Delay(Duration::from_millis(800), "late".into()));
        let c = client(&server, 1, 0.3);
        assert_eq!(c.complete(text("x")).unwrap().as_deref(), Some("ANSWER: 1"));
        assert_eq!(c.calls(), 2);
    }
}
