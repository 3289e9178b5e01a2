use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use super::wire::{frame_array_names, read_frame, write_frame};
use crate::error::{Error, Result};

/// One frame seen by the server, in either direction.
#[derive(Clone, Debug, PartialEq)]
pub struct WireRecord {
    pub to_server: bool,
    pub message_type: u8,
    pub round: u64,
    pub bytes: usize,
    pub arrays: Vec<String>,
}

/// Shared record of all server traffic.
#[derive(Clone, Debug, Default)]
pub struct WireLog(Arc<Mutex<Vec<WireRecord>>>);

impl WireLog {
    fn record(&self, frame: &[u8], to_server: bool) {
        let rec = WireRecord {
            to_server,
            message_type: frame.get(4).copied().unwrap_or(0),
            round: frame
                .get(5..13)
                .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
                .unwrap_or(0),
            bytes: frame.len(),
            arrays: frame_array_names(frame).unwrap_or_default(),
        };
        self.0.lock().expect("wire log lock").push(rec);
    }

    pub fn records(&self) -> Vec<WireRecord> {
        self.0.lock().expect("wire log lock").clone()
    }
}

/// Server end: one broadcast to every site, reports from any site.
pub trait ServerLink {
    fn broadcast(&mut self, frame: &[u8]) -> Result<()>;
    /// Next frame from any site.
    fn recv(&mut self, timeout: Duration) -> Result<Vec<u8>>;
    fn log(&self) -> &WireLog;
}

/// Site end.
pub trait ClientLink: Send {
    /// `None` once the server has gone away.
    fn recv(&mut self) -> Result<Option<Vec<u8>>>;
    fn send(&mut self, frame: &[u8]) -> Result<()>;
}

enum Event {
    Frame(Vec<u8>),
    Closed(usize, String),
}

fn next_event(rx: &Receiver<Event>, timeout: Duration) -> Result<Vec<u8>> {
    match rx.recv_timeout(timeout) {
        Ok(Event::Frame(f)) => Ok(f),
        Ok(Event::Closed(i, why)) => Err(Error::Protocol(format!("connection {i} closed: {why}"))),
        Err(RecvTimeoutError::Timeout) => Err(Error::Protocol(format!("no report within {timeout:?}"))),
        Err(RecvTimeoutError::Disconnected) => Err(Error::Protocol("all sites disconnected".into())),
    }
}

pub struct InprocServer {
    to_sites: Vec<Sender<Vec<u8>>>,
    from_sites: Receiver<Event>,
    log: WireLog,
}

pub struct InprocClient {
    index: usize,
    rx: Receiver<Vec<u8>>,
    tx: Sender<Event>,
}

impl Drop for InprocClient {
    fn drop(&mut self) {
        let _ = self.tx.send(Event::Closed(self.index, "site finished".into()));
    }
}

/// Channel pairs for `n` sites in one process.
pub fn inproc(n: usize) -> (InprocServer, Vec<InprocClient>) {
    let (tx, from_sites) = channel();
    let mut to_sites = Vec::with_capacity(n);
    let mut clients = Vec::with_capacity(n);
    for index in 0..n {
        let (stx, srx) = channel();
        to_sites.push(stx);
        clients.push(InprocClient {
            index,
            rx: srx,
            tx: tx.clone(),
        });
    }
    (
        InprocServer {
            to_sites,
            from_sites,
            log: WireLog::default(),
        },
        clients,
    )
}

impl ServerLink for InprocServer {
    fn broadcast(&mut self, frame: &[u8]) -> Result<()> {
        for (i, s) in self.to_sites.iter().enumerate() {
            self.log.record(frame, false);
            s.send(frame.to_vec())
                .map_err(|_| Error::Protocol(format!("site link {i} is closed")))?;
        }
        Ok(())
    }

    fn recv(&mut self, timeout: Duration) -> Result<Vec<u8>> {
        let f = next_event(&self.from_sites, timeout)?;
        self.log.record(&f, true);
        Ok(f)
    }

    fn log(&self) -> &WireLog {
        &self.log
    }
}

impl ClientLink for InprocClient {
    fn recv(&mut self) -> Result<Option<Vec<u8>>> {
        Ok(self.rx.recv().ok())
    }

    fn send(&mut self, frame: &[u8]) -> Result<()> {
        self.tx
            .send(Event::Frame(frame.to_vec()))
            .map_err(|_| Error::Protocol("server link is closed".into()))
    }
}

/// Server end over TCP: one stream per site, each drained by a reader
/// thread into a single mailbox.
pub struct TcpServer {
    streams: Vec<TcpStream>,
    mailbox: Receiver<Event>,
    log: WireLog,
}

impl TcpServer {
    /// Accepts exactly `n` connections on `listener` within `timeout`.
    pub fn accept(listener: &TcpListener, n: usize, timeout: Duration) -> Result<Self> {
        listener.set_nonblocking(true)?;
        let deadline = Instant::now() + timeout;
        let (tx, mailbox) = channel();
        let mut streams = Vec::with_capacity(n);
        while streams.len() < n {
            match listener.accept() {
                Ok((s, _)) => {
                    s.set_nonblocking(false)?;
                    s.set_nodelay(true)?;
                    let index = streams.len();
                    let mut reader = s.try_clone()?;
                    let tx: Sender<Event> = tx.clone();
                    std::thread::spawn(move || loop {
                        match read_frame(&mut reader) {
                            Ok(Some(f)) => {
                                if tx.send(Event::Frame(f)).is_err() {
                                    return;
                                }
                            }
                            Ok(None) => {
                                let _ = tx.send(Event::Closed(index, "end of stream".into()));
                                return;
                            }
                            Err(e) => {
                                let _ = tx.send(Event::Closed(index, e.to_string()));
                                return;
                            }
                        }
                    });
                    streams.push(s);
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    if Instant::now() >= deadline {
                        return Err(Error::Protocol(format!(
                            "only {} of {n} sites connected within {timeout:?}",
                            streams.len()
                        )));
                    }
                    std::thread::sleep(Duration::from_millis(5));
                }
                Err(e) => return Err(e.into()),
            }
        }
        Ok(TcpServer {
            streams,
            mailbox,
            log: WireLog::default(),
        })
    }
}

impl ServerLink for TcpServer {
    fn broadcast(&mut self, frame: &[u8]) -> Result<()> {
        for s in &mut self.streams {
            self.log.record(frame, false);
            write_frame(s, frame)?;
        }
        Ok(())
    }

    fn recv(&mut self, timeout: Duration) -> Result<Vec<u8>> {
        let f = next_event(&self.mailbox, timeout)?;
        self.log.record(&f, true);
        Ok(f)
    }

    fn log(&self) -> &WireLog {
        &self.log
    }
}

impl Drop for TcpServer {
    fn drop(&mut self) {
        for s in &self.streams {
            let _ = s.shutdown(std::net::Shutdown::Both);
        }
    }
}

pub struct TcpClient {
    stream: TcpStream,
}

impl TcpClient {
    pub fn connect(addr: SocketAddr) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(TcpClient { stream })
    }
}

impl ClientLink for TcpClient {
    fn recv(&mut self) -> Result<Option<Vec<u8>>> {
        read_frame(&mut self.stream)
    }

    fn send(&mut self, frame: &[u8]) -> Result<()> {
        write_frame(&mut self.stream, frame)
    }
}
