//! Minimal HTTP/1.1 server on loopback that replays canned responses.

#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

pub struct MockServer {
    pub base_url: String,
    requests: Arc<Mutex<Vec<String>>>,
}

impl MockServer {
    /// Serves `responses` in order, repeating the last one once exhausted.
    pub fn start(responses: Vec<(u16, String)>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind loopback");
        let addr = listener.local_addr().unwrap();
        let requests = Arc::new(Mutex::new(Vec::new()));
        let seen = Arc::clone(&requests);
        thread::spawn(move || {
            for (served, stream) in listener.incoming().enumerate() {
                let Ok(mut stream) = stream else { break };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut content_length = 0usize;
                let mut line = String::new();
                loop {
                    line.clear();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        break;
                    }
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        content_length = v.trim().parse().unwrap_or(0);
                    }
                    if line == "\r\n" {
                        break;
                    }
                }
                let mut body = vec![0u8; content_length];
                let _ = reader.read_exact(&mut body);
                seen.lock().unwrap().push(String::from_utf8_lossy(&body).into_owned());

                let (status, payload) = responses[served.min(responses.len() - 1)].clone();
                let reply = format!(
                    "HTTP/1.1 {status} Mock\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                    payload.len()
                );
                let _ = stream.write_all(reply.as_bytes());
                let _ = stream.flush();
            }
        });
        Self {
            base_url: format!("http://{addr}/v1"),
            requests,
        }
    }

    pub fn requests(&self) -> Vec<String> {
        self.requests.lock().unwrap().clone()
    }
}

/// A chat-completions body with one choice per `(content, logprobs)` pair.
pub fn chat_response(choices: &[(&str, &[f64])]) -> String {
    let choices: Vec<serde_json::Value> = choices
        .iter()
        .enumerate()
        .map(|(i, (content, lps))| {
            let tokens: Vec<serde_json::Value> = lps
                .iter()
                .map(|lp| serde_json::json!({"token": "t", "logprob": lp, "top_logprobs": []}))
                .collect();
            serde_json::json!({
                "index": i,
                "message": {"role": "assistant", "content": content},
                "logprobs": {"content": tokens},
                "finish_reason": "stop"
            })
        })
        .collect();
    serde_json::json!({"id": "mock", "object": "chat.completion", "choices": choices}).to_string()
}
