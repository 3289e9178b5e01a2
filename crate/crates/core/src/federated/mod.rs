//! Synchronous federated training of the shared shape and material
//! generators. Sites keep their data, latents and enhancer; only generator
//! parameters go out and only generator gradients come back.

mod client;
mod server;
mod transport;
mod wire;

use std::net::{SocketAddr, TcpListener};
use std::time::Duration;

pub use client::{client_round, cross_site_render, ClientPhase, Site};
pub use server::{ServerOptimizer, ServerState};
pub use transport::{inproc, ClientLink, InprocClient, InprocServer, ServerLink, TcpClient, TcpServer, WireLog, WireRecord};
pub use wire::{frame_array_names, read_frame, write_frame, RoundMessage, FRAME_HEADER_LEN, FRAME_MAGIC};

use crate::error::{Error, Result};

/// How sites reach the server.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Transport {
    Inproc,
    /// Loopback TCP; port 0 picks a free port.
    Tcp(SocketAddr),
}

/// Runs `rounds` synchronous rounds, then tells every site to stop.
pub fn serve(server: &mut ServerState, link: &mut dyn ServerLink, rounds: u64, timeout: Duration) -> Result<()> {
    for _ in 0..rounds {
        link.broadcast(&server.broadcast().encode())?;
        while !server.missing().is_empty() {
            let frame = link.recv(timeout).map_err(|e| {
                Error::Protocol(format!("round {}: waiting on sites {:?}: {e}", server.round, server.missing()))
            })?;
            server.receive(RoundMessage::decode(&frame)?)?;
        }
        server.finish_round()?;
    }
    link.broadcast(&RoundMessage::Shutdown { round: server.round }.encode())
}

/// Answers broadcasts until shutdown.
pub fn run_client(site: &mut Site, link: &mut dyn ClientLink) -> Result<()> {
    loop {
        let Some(frame) = link.recv()? else {
            return Err(Error::Protocol(format!("site {}: server went away before shutdown", site.id)));
        };
        match RoundMessage::decode(&frame)? {
            RoundMessage::Shutdown { .. } => return Ok(()),
            msg => {
                let report = client_round(site, &msg)?;
                link.send(&report.encode())?;
            }
        }
    }
}

/// One site thread per entry of `sites`, the server on the calling thread.
/// Returns the traffic the server saw. A server error takes precedence over
/// the site errors it caused.
pub fn run_federation(
    server: &mut ServerState,
    sites: &mut [Site],
    rounds: u64,
    transport: &Transport,
    timeout: Duration,
) -> Result<WireLog> {
    let n = sites.len();
    std::thread::scope(|scope| {
        let (mut link, handles): (Box<dyn ServerLink>, Vec<_>) = match transport {
            Transport::Inproc => {
                let (srv, clients) = inproc(n);
                let handles = sites
                    .iter_mut()
                    .zip(clients)
                    .map(|(site, mut c)| scope.spawn(move || run_client(site, &mut c)))
                    .collect();
                (Box::new(srv), handles)
            }
            Transport::Tcp(addr) => {
                let listener = TcpListener::bind(addr)?;
                let addr = listener.local_addr()?;
                let handles: Vec<_> = sites
                    .iter_mut()
                    .map(|site| {
                        scope.spawn(move || {
                            let mut c = TcpClient::connect(addr)?;
                            run_client(site, &mut c)
                        })
                    })
                    .collect();
                (Box::new(TcpServer::accept(&listener, n, timeout)?), handles)
            }
        };
        let served = serve(server, link.as_mut(), rounds, timeout);
        let log = link.log().clone();
        drop(link);
        let site_results: Vec<Result<()>> = handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Protocol("site thread panicked".into()))))
            .collect();
        served?;
        site_results.into_iter().collect::<Result<Vec<()>>>()?;
        Ok(log)
    })
}
