//! Shared fixtures for integration and acceptance tests: seeded random
//! graph/trace generators, brute-force reachability oracles kept independent
//! of the library's query implementations, and a scripted local HTTP stub
//! standing in for a chat-completion provider.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cotdag::chunk::{split_cot, RawTrace, TriggerSet, DEFAULT_TRIGGERS};
use cotdag::graph::{Edge, Node, NodeId, NodeType, ReasoningGraph, TERMINAL_SUMMARY};
use cotdag::ChunkedTrace;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// Random valid graphs
// ---------------------------------------------------------------------------

const SUMMARY_JUNK: &[&str] = &[
    "solve for x",
    "apply the bound",
    "with \"quotes\"",
    "pipes | and & amps",
    "multi\nline note",
    "κλ unicode",
    "maps x --> y",
    "restate the goal",
];

const LABEL_JUNK: &[&str] = &["", "uses", "checks", "a|b", "amp & pipe", "line\nbreak", "[\"odd\"]"];

/// A random graph that passes `validate()` with zero violations: ids in
/// insertion order, forward edges only, unique (from, to) pairs, and a
/// properly named out-degree-0 terminal as the last node. Node `i` carries
/// chunk index `i`.
pub fn random_valid_graph(rng: &mut ChaCha8Rng, max_nodes: usize) -> ReasoningGraph {
    let n = rng.random_range(1..=max_nodes.max(1));
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    for i in 0..n {
        let id = NodeId::from_index(i);
        let is_terminal = i == n - 1;
        let node_type = if rng.random_bool(if is_terminal { 0.1 } else { 0.4 }) {
            NodeType::Review
        } else {
            NodeType::Progress
        };
        let summary = if is_terminal {
            TERMINAL_SUMMARY.to_string()
        } else {
            format!(
                "step {i}: {}",
                SUMMARY_JUNK[rng.random_range(0..SUMMARY_JUNK.len())]
            )
        };
        nodes.push(Node::new(id.clone(), summary, node_type).with_chunk(i));

        if i == 0 {
            continue;
        }
        // Occasional extra sources, but the terminal is always wired in.
        if !is_terminal && rng.random_bool(0.15) {
            continue;
        }
        let max_preds = i.min(3);
        let pred_count = rng.random_range(1..=max_preds);
        let mut preds: BTreeSet<usize> = BTreeSet::new();
        while preds.len() < pred_count {
            preds.insert(rng.random_range(0..i));
        }
        for p in preds {
            edges.push(Edge::new(
                NodeId::from_index(p),
                id.clone(),
                LABEL_JUNK[rng.random_range(0..LABEL_JUNK.len())],
            ));
        }
    }
    let terminal = NodeId::from_index(n - 1);
    let graph = ReasoningGraph::from_parts(nodes, edges, Some(terminal)).unwrap();
    assert!(
        graph.validate().is_empty(),
        "generator must produce valid graphs"
    );
    graph
}

// ---------------------------------------------------------------------------
// Brute-force oracles (path enumeration, independent of the library)
// ---------------------------------------------------------------------------

/// Directed edges as index pairs, via the bijective id encoding.
pub fn index_edges(graph: &ReasoningGraph) -> Vec<(usize, usize)> {
    graph
        .edges()
        .iter()
        .map(|e| (e.from.index(), e.to.index()))
        .collect()
}

pub fn index_nodes(graph: &ReasoningGraph) -> Vec<usize> {
    graph.nodes().map(|n| n.id.index()).collect()
}

/// Descendants of `v` by literally walking every outgoing edge path.
pub fn brute_descendants(edges: &[(usize, usize)], v: usize) -> BTreeSet<usize> {
    fn walk(edges: &[(usize, usize)], u: usize, out: &mut BTreeSet<usize>) {
        for &(a, b) in edges {
            if a == u {
                out.insert(b);
                walk(edges, b, out);
            }
        }
    }
    let mut out = BTreeSet::new();
    walk(edges, v, &mut out);
    out
}

/// Shortest path length from any in-degree-0 source to `v`, by enumerating
/// every path from every source. `None` when `v` is unreachable.
pub fn brute_depth(nodes: &[usize], edges: &[(usize, usize)], v: usize) -> Option<usize> {
    fn paths(edges: &[(usize, usize)], u: usize, v: usize, len: usize, best: &mut Option<usize>) {
        if u == v {
            *best = Some(best.map_or(len, |b| b.min(len)));
            // Longer paths through v cannot shorten the answer, but keep
            // walking anyway: this oracle stays deliberately naive.
        }
        for &(a, b) in edges {
            if a == u {
                paths(edges, b, v, len + 1, best);
            }
        }
    }
    let targets: BTreeSet<usize> = edges.iter().map(|&(_, b)| b).collect();
    let mut best = None;
    for &s in nodes.iter().filter(|n| !targets.contains(n)) {
        paths(edges, s, v, 0, &mut best);
    }
    best
}

// ---------------------------------------------------------------------------
// Synthetic traces
// ---------------------------------------------------------------------------

const FILLER_WORDS: &[&str] = &[
    "the", "sum", "equals", "x", "we", "substitute", "both", "sides", "giving", "42", "α",
    "terms", "cancel", "neatly", "so", "waiting", "computed",
];

fn filler_phrase(rng: &mut ChaCha8Rng) -> String {
    let words = rng.random_range(1..=8);
    let mut phrase = (0..words)
        .map(|_| FILLER_WORDS[rng.random_range(0..FILLER_WORDS.len())])
        .collect::<Vec<_>>()
        .join(" ");
    phrase.push_str([". ", ", ", "; ", " "][rng.random_range(0..4)]);
    phrase
}

/// Random interleaving of split triggers and filler text.
pub fn random_cot(rng: &mut ChaCha8Rng) -> String {
    let mut out = String::new();
    if rng.random_bool(0.5) {
        out.push_str(&filler_phrase(rng));
    }
    for _ in 0..rng.random_range(0..12) {
        out.push_str(DEFAULT_TRIGGERS[rng.random_range(0..DEFAULT_TRIGGERS.len())]);
        out.push_str(", ");
        out.push_str(&filler_phrase(rng));
    }
    out
}

/// A chain of progress-flavored steps followed by 1-3 trailing reflective
/// steps, so the default pruning thresholds always find something to remove.
pub fn reflective_tail_cot(rng: &mut ChaCha8Rng) -> String {
    let mut out = String::new();
    for _ in 0..rng.random_range(2..8) {
        out.push_str(["Then", "Therefore", "Compute", "Now"][rng.random_range(0..4)]);
        out.push_str(", ");
        out.push_str(&filler_phrase(rng));
    }
    for _ in 0..rng.random_range(1..=3) {
        out.push_str(["Wait", "Hmm", "Let me double-check"][rng.random_range(0..3)]);
        out.push_str(", ");
        out.push_str(&filler_phrase(rng));
    }
    out
}

pub fn trace_with_cot(trace_id: &str, cot: String) -> ChunkedTrace {
    ChunkedTrace::new(
        RawTrace {
            trace_id: trace_id.to_string(),
            question: format!("question for {trace_id}"),
            cot,
            answer: "42".to_string(),
            correct: Some(true),
        },
        &TriggerSet::default(),
    )
}

/// Sanity helper mirroring the chunker for assertions.
pub fn rechunk(cot: &str) -> usize {
    split_cot(cot, &TriggerSet::default()).len()
}

// ---------------------------------------------------------------------------
// Scripted HTTP stub
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct StubResponse {
    pub status: u16,
    pub body: String,
    pub delay: Duration,
}

impl StubResponse {
    pub fn ok(body: impl Into<String>) -> Self {
        Self {
            status: 200,
            body: body.into(),
            delay: Duration::ZERO,
        }
    }

    pub fn status(status: u16, body: impl Into<String>) -> Self {
        Self {
            status,
            body: body.into(),
            delay: Duration::ZERO,
        }
    }

    pub fn slow(body: impl Into<String>, delay: Duration) -> Self {
        Self {
            status: 200,
            body: body.into(),
            delay,
        }
    }
}

/// Chat-completion response body without provider usage.
pub fn chat_body(content: &str) -> String {
    serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": content}}],
    })
    .to_string()
}

/// Chat-completion response body with provider-reported usage.
pub fn chat_body_with_usage(content: &str, prompt_tokens: u64, completion_tokens: u64) -> String {
    serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": content}}],
        "usage": {"prompt_tokens": prompt_tokens, "completion_tokens": completion_tokens},
    })
    .to_string()
}

/// Minimal scripted HTTP/1.1 server on a loopback port. Responses are served
/// in arrival order from the script; when the script runs dry a plain 200
/// chat body is served. Tracks total hits and the maximum number of requests
/// simultaneously being served.
pub struct StubServer {
    addr: std::net::SocketAddr,
    script: Arc<Mutex<std::collections::VecDeque<StubResponse>>>,
    hits: Arc<AtomicUsize>,
    in_flight: Arc<AtomicUsize>,
    max_in_flight: Arc<AtomicUsize>,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl StubServer {
    pub fn start(script: Vec<StubResponse>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind loopback");
        let addr = listener.local_addr().expect("local addr");
        let script = Arc::new(Mutex::new(script.into_iter().collect()));
        let hits = Arc::new(AtomicUsize::new(0));
        let in_flight = Arc::new(AtomicUsize::new(0));
        let max_in_flight = Arc::new(AtomicUsize::new(0));
        let stop = Arc::new(AtomicBool::new(false));

        let handle = {
            let script = Arc::clone(&script);
            let hits = Arc::clone(&hits);
            let in_flight = Arc::clone(&in_flight);
            let max_in_flight = Arc::clone(&max_in_flight);
            let stop = Arc::clone(&stop);
            std::thread::spawn(move || {
                let mut workers = Vec::new();
                for stream in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = stream else { continue };
                    let script = Arc::clone(&script);
                    let hits = Arc::clone(&hits);
                    let in_flight = Arc::clone(&in_flight);
                    let max_in_flight = Arc::clone(&max_in_flight);
                    workers.push(std::thread::spawn(move || {
                        serve_one(stream, &script, &hits, &in_flight, &max_in_flight);
                    }));
                }
                for w in workers {
                    let _ = w.join();
                }
            })
        };

        Self {
            addr,
            script,
            hits,
            in_flight,
            max_in_flight,
            stop,
            handle: Some(handle),
        }
    }

    pub fn url(&self) -> String {
        format!("http://{}/v1/chat/completions", self.addr)
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }

    pub fn remaining_script(&self) -> usize {
        self.script.lock().unwrap().len()
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

fn serve_one(
    stream: TcpStream,
    script: &Mutex<std::collections::VecDeque<StubResponse>>,
    hits: &AtomicUsize,
    in_flight: &AtomicUsize,
    max_in_flight: &AtomicUsize,
) {
    let mut reader = BufReader::new(stream.try_clone().expect("clone stream"));
    if read_request(&mut reader).is_none() {
        return;
    }
    hits.fetch_add(1, Ordering::SeqCst);
    let current = in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    max_in_flight.fetch_max(current, Ordering::SeqCst);

    let response = script
        .lock()
        .unwrap()
        .pop_front()
        .unwrap_or_else(|| StubResponse::ok(chat_body("stub default")));
    if !response.delay.is_zero() {
        std::thread::sleep(response.delay);
    }
    in_flight.fetch_sub(1, Ordering::SeqCst);

    let reason = match response.status {
        200 => "OK",
        429 => "Too Many Requests",
        500 => "Internal Server Error",
        503 => "Service Unavailable",
        _ => "Status",
    };
    let mut stream = stream;
    let _ = write!(
        stream,
        "HTTP/1.1 {} {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        response.status,
        reason,
        response.body.len(),
        response.body
    );
    let _ = stream.flush();
}

/// Read one HTTP request (headers + content-length body). Returns the body.
fn read_request(reader: &mut BufReader<TcpStream>) -> Option<String> {
    let mut content_length = 0usize;
    let mut saw_request_line = false;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).ok()? == 0 {
            return None;
        }
        let trimmed = line.trim_end();
        if !saw_request_line {
            if trimmed.is_empty() {
                continue;
            }
            saw_request_line = true;
            continue;
        }
        if trimmed.is_empty() {
            break;
        }
        let lower = trimmed.to_ascii_lowercase();
        if let Some(value) = lower.strip_prefix("content-length:") {
            content_length = value.trim().parse().ok()?;
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body).ok()?;
    Some(String::from_utf8_lossy(&body).into_owned())
}
