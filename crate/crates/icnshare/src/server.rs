//! Threaded TCP front end for a node service: accepts connections and
//! runs each one through the service until it closes.

use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use crate::proto::{NodeService, ProtoError, TcpTransport};

/// A listening node. Connections are handled on their own threads; the
/// service's lock keeps the tables consistent across them.
pub struct NodeServer {
    local_addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept_thread: Option<JoinHandle<()>>,
}

impl NodeServer {
    /// Bind `addr` (use port 0 for an ephemeral port) and start
    /// accepting.
    pub fn start(service: Arc<NodeService>, addr: &str) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let local_addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let accept_stop = Arc::clone(&stop);

        let accept_thread = thread::spawn(move || {
            for stream in listener.incoming() {
                if accept_stop.load(Ordering::SeqCst) {
                    break;
                }
                match stream {
                    Ok(stream) => {
                        let service = Arc::clone(&service);
                        thread::spawn(move || serve_one(&service, stream));
                    }
                    Err(e) => {
                        eprintln!("accept failed: {e}");
                    }
                }
            }
        });

        Ok(NodeServer { local_addr, stop, accept_thread: Some(accept_thread) })
    }

    /// The bound address (useful with port 0).
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    /// Stop accepting and wait for the accept loop to exit. Connections
    /// already in flight finish on their own threads.
    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // The accept loop only observes the flag on its next wakeup, so
        // poke it with a throwaway connection.
        let _ = TcpStream::connect(self.local_addr);
        if let Some(handle) = self.accept_thread.take() {
            let _ = handle.join();
        }
    }

    /// Block until the accept loop exits (it normally never does; this is
    /// the daemon's forever-wait).
    pub fn join(mut self) {
        if let Some(handle) = self.accept_thread.take() {
            let _ = handle.join();
        }
    }
}

fn serve_one(service: &NodeService, stream: TcpStream) {
    let peer = stream.peer_addr().ok();
    let mut transport = TcpTransport::new(stream);
    match service.handle_connection(&mut transport) {
        Ok(()) | Err(ProtoError::Closed) => {}
        Err(e) => match peer {
            Some(addr) => eprintln!("connection from {addr} failed: {e}"),
            None => eprintln!("connection failed: {e}"),
        },
    }
}
