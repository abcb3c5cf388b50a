//! Frame transports. Agents never talk to a transport directly; the driver
//! moves frames between agent inboxes and the transport.

use std::collections::{BTreeMap, VecDeque};
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::{Condvar, Mutex};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum TransportError {
    #[error("endpoint unreachable: {0}")]
    Unreachable(String),
    #[error("io: {0}")]
    Io(String),
}

pub trait Transport: Send + Sync {
    /// Create an inbox for `name` and return its endpoint address.
    fn register(&self, name: &str) -> Result<String, TransportError>;
    fn send(&self, to: &str, frame: &[u8]) -> Result<(), TransportError>;
    fn try_recv(&self, endpoint: &str) -> Option<Vec<u8>>;
    fn recv_timeout(&self, endpoint: &str, timeout: Duration) -> Option<Vec<u8>>;
    fn pending(&self, endpoint: &str) -> usize;
}

#[derive(Default)]
struct Inbox {
    frames: Mutex<VecDeque<Vec<u8>>>,
    ready: Condvar,
}

impl Inbox {
    fn push(&self, frame: Vec<u8>) {
        self.frames.lock().push_back(frame);
        self.ready.notify_one();
    }

    fn pop_timeout(&self, timeout: Duration) -> Option<Vec<u8>> {
        let mut frames = self.frames.lock();
        if frames.is_empty() {
            self.ready.wait_for(&mut frames, timeout);
        }
        frames.pop_front()
    }
}

#[derive(Default)]
struct Inboxes(Mutex<BTreeMap<String, Arc<Inbox>>>);

impl Inboxes {
    fn create(&self, endpoint: &str) -> Arc<Inbox> {
        self.0.lock().entry(endpoint.to_string()).or_default().clone()
    }

    fn get(&self, endpoint: &str) -> Option<Arc<Inbox>> {
        self.0.lock().get(endpoint).cloned()
    }
}

/// In-process FIFO inboxes. Every sent frame is also captured, so tests can
/// audit exactly what crossed the wire.
#[derive(Default)]
pub struct MemoryTransport {
    inboxes: Inboxes,
    captured: Mutex<Vec<(String, Vec<u8>)>>,
}

impl MemoryTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn captured(&self) -> Vec<(String, Vec<u8>)> {
        self.captured.lock().clone()
    }
}

impl Transport for MemoryTransport {
    fn register(&self, name: &str) -> Result<String, TransportError> {
        let endpoint = format!("mem:{name}");
        self.inboxes.create(&endpoint);
        Ok(endpoint)
    }

    fn send(&self, to: &str, frame: &[u8]) -> Result<(), TransportError> {
        let inbox = self.inboxes.get(to).ok_or_else(|| TransportError::Unreachable(to.to_string()))?;
        self.captured.lock().push((to.to_string(), frame.to_vec()));
        inbox.push(frame.to_vec());
        Ok(())
    }

    fn try_recv(&self, endpoint: &str) -> Option<Vec<u8>> {
        self.inboxes.get(endpoint)?.frames.lock().pop_front()
    }

    fn recv_timeout(&self, endpoint: &str, timeout: Duration) -> Option<Vec<u8>> {
        self.inboxes.get(endpoint)?.pop_timeout(timeout)
    }

    fn pending(&self, endpoint: &str) -> usize {
        self.inboxes.get(endpoint).map_or(0, |i| i.frames.lock().len())
    }
}

/// Loopback TCP: each registered endpoint gets its own listener on
/// 127.0.0.1; frames are length-prefixed (u32 big-endian).
#[derive(Default)]
pub struct TcpTransport {
    inboxes: Arc<Inboxes>,
    streams: Mutex<BTreeMap<String, TcpStream>>,
}

impl TcpTransport {
    pub fn new() -> Self {
        Self::default()
    }
}

fn io_err(e: std::io::Error) -> TransportError {
    TransportError::Io(e.to_string())
}

fn read_frames(mut stream: TcpStream, inbox: Arc<Inbox>) {
    let mut len = [0u8; 4];
    while stream.read_exact(&mut len).is_ok() {
        let mut frame = vec![0u8; u32::from_be_bytes(len) as usize];
        if stream.read_exact(&mut frame).is_err() {
            return;
        }
        inbox.push(frame);
    }
}

impl Transport for TcpTransport {
    fn register(&self, _name: &str) -> Result<String, TransportError> {
        let listener = TcpListener::bind("127.0.0.1:0").map_err(io_err)?;
        let endpoint = format!("tcp:{}", listener.local_addr().map_err(io_err)?);
        let inbox = self.inboxes.create(&endpoint);
        std::thread::Builder::new()
            .name(format!("listen-{endpoint}"))
            .spawn(move || {
                for stream in listener.incoming().flatten() {
                    let _ = stream.set_nodelay(true);
                    let inbox = inbox.clone();
                    std::thread::spawn(move || read_frames(stream, inbox));
                }
            })
            .map_err(io_err)?;
        Ok(endpoint)
    }

    fn send(&self, to: &str, frame: &[u8]) -> Result<(), TransportError> {
        let addr = to.strip_prefix("tcp:").ok_or_else(|| TransportError::Unreachable(to.to_string()))?;
        let mut streams = self.streams.lock();
        if !streams.contains_key(to) {
            let stream = TcpStream::connect(addr).map_err(|_| TransportError::Unreachable(to.to_string()))?;
            stream.set_nodelay(true).map_err(io_err)?;
            streams.insert(to.to_string(), stream);
        }
        let stream = streams.get_mut(to).expect("inserted above");
        let mut buf = Vec::with_capacity(frame.len() + 4);
        buf.extend_from_slice(&(frame.len() as u32).to_be_bytes());
        buf.extend_from_slice(frame);
        stream.write_all(&buf).map_err(io_err)
    }

    fn try_recv(&self, endpoint: &str) -> Option<Vec<u8>> {
        self.inboxes.get(endpoint)?.frames.lock().pop_front()
    }

    fn recv_timeout(&self, endpoint: &str, timeout: Duration) -> Option<Vec<u8>> {
        self.inboxes.get(endpoint)?.pop_timeout(timeout)
    }

    fn pending(&self, endpoint: &str) -> usize {
        self.inboxes.get(endpoint).map_or(0, |i| i.frames.lock().len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn memory_fifo_and_capture() {
        let t = MemoryTransport::new();
        let a = t.register("a").unwrap();
        t.send(&a, b"one").unwrap();
        t.send(&a, b"two").unwrap();
        assert_eq!(t.pending(&a), 2);
        assert_eq!(t.try_recv(&a).unwrap(), b"one");
        assert_eq!(t.try_recv(&a).unwrap(), b"two");
        assert!(t.try_recv(&a).is_none());
        assert_eq!(t.captured().len(), 2);
        assert_eq!(t.send("mem:nobody", b"x"), Err(TransportError::Unreachable("mem:nobody".into())));
    }

    #[test]
    fn tcp_loopback_delivers_in_order() {
        let t = TcpTransport::new();
        let a = t.register("a").unwrap();
        for i in 0..20u8 {
            t.send(&a, &[i; 100]).unwrap();
        }
        for i in 0..20u8 {
            assert_eq!(t.recv_timeout(&a, Duration::from_secs(5)).unwrap(), vec![i; 100]);
        }
    }
}
