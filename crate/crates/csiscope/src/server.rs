//! WebSocket front end. One thread owns the [`Session`]; each client gets a
//! thread that forwards its commands in and drains its outbox out.
//!
//! Clients connect to `/ws`; `/ws?every=k` asks for every k-th frame only.

use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use tungstenite::handshake::server::{ErrorResponse, Request, Response};
use tungstenite::http::StatusCode;
use tungstenite::{Message as WsMessage, WebSocket};

use crate::session::{ClientId, Outbox, Session, Step};

const POLL: Duration = Duration::from_millis(10);

pub enum SessionMsg {
    Connect {
        every: u64,
        reply: Sender<(ClientId, Arc<Outbox>)>,
    },
    Disconnect(ClientId),
    Control(ClientId, String),
    Shutdown,
}

/// Drives `session` until a `Shutdown` arrives or every sender is gone.
pub fn run_session(mut session: Session, rx: Receiver<SessionMsg>) -> Session {
    loop {
        loop {
            match rx.try_recv() {
                Ok(SessionMsg::Shutdown) | Err(mpsc::TryRecvError::Disconnected) => {
                    session.shutdown();
                    return session;
                }
                Ok(msg) => handle(&mut session, msg),
                Err(mpsc::TryRecvError::Empty) => break,
            }
        }
        match session.step(POLL) {
            Step::Frame | Step::Idle => {}
            Step::EndOfStream | Step::NoSource => match rx.recv_timeout(POLL) {
                Ok(SessionMsg::Shutdown) | Err(RecvTimeoutError::Disconnected) => {
                    session.shutdown();
                    return session;
                }
                Ok(msg) => handle(&mut session, msg),
                Err(RecvTimeoutError::Timeout) => {}
            },
        }
    }
}

fn handle(session: &mut Session, msg: SessionMsg) {
    match msg {
        SessionMsg::Connect { every, reply } => {
            let _ = reply.send(session.connect(every));
        }
        SessionMsg::Disconnect(id) => session.disconnect(id),
        SessionMsg::Control(id, text) => {
            let _ = session.handle_control(id, &text);
        }
        SessionMsg::Shutdown => {}
    }
}

pub struct Server {
    addr: SocketAddr,
    tx: Sender<SessionMsg>,
    stop: Arc<AtomicBool>,
    session: Option<JoinHandle<Session>>,
    acceptor: Option<JoinHandle<()>>,
}

impl Server {
    /// Binds `listen` and starts serving `session`.
    pub fn start(listen: SocketAddr, session: Session) -> io::Result<Server> {
        let listener = TcpListener::bind(listen)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let (tx, rx) = mpsc::channel();
        let stop = Arc::new(AtomicBool::new(false));
        let session = thread::Builder::new()
            .name("session".into())
            .spawn(move || run_session(session, rx))?;
        let acceptor = {
            let tx = tx.clone();
            let stop = stop.clone();
            thread::Builder::new()
                .name("accept".into())
                .spawn(move || accept_loop(listener, tx, stop))?
        };
        Ok(Server {
            addr,
            tx,
            stop,
            session: Some(session),
            acceptor: Some(acceptor),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Sends a control message as if from a client with no connection.
    pub fn control(&self, text: &str) {
        let _ = self.tx.send(SessionMsg::Control(0, text.into()));
    }

    /// Stops accepting, shuts the session down and returns it.
    pub fn shutdown(mut self) -> Option<Session> {
        self.stop_threads()
    }

    fn stop_threads(&mut self) -> Option<Session> {
        self.stop.store(true, Ordering::Relaxed);
        let _ = self.tx.send(SessionMsg::Shutdown);
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
        self.session.take().and_then(|s| s.join().ok())
    }

    /// Blocks until the session ends on its own.
    pub fn wait(mut self) -> Option<Session> {
        let s = self.session.take().and_then(|s| s.join().ok());
        self.stop.store(true, Ordering::Relaxed);
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
        s
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.stop_threads();
    }
}

fn accept_loop(listener: TcpListener, tx: Sender<SessionMsg>, stop: Arc<AtomicBool>) {
    while !stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, _)) => {
                let tx = tx.clone();
                let stop = stop.clone();
                let _ = thread::Builder::new()
                    .name("client".into())
                    .spawn(move || serve_client(stream, tx, stop));
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(POLL),
            Err(_) => thread::sleep(POLL),
        }
    }
}

fn parse_every(query: Option<&str>) -> u64 {
    query
        .into_iter()
        .flat_map(|q| q.split('&'))
        .filter_map(|kv| kv.strip_prefix("every="))
        .find_map(|v| v.parse::<u64>().ok())
        .unwrap_or(1)
        .max(1)
}

#[allow(clippy::result_large_err)]
fn serve_client(stream: TcpStream, tx: Sender<SessionMsg>, stop: Arc<AtomicBool>) {
    if stream.set_nonblocking(false).is_err() {
        return;
    }
    let mut every = 1;
    let callback = |req: &Request, resp: Response| -> Result<Response, ErrorResponse> {
        if req.uri().path() != "/ws" {
            let mut err = ErrorResponse::new(Some("not found".into()));
            *err.status_mut() = StatusCode::NOT_FOUND;
            return Err(err);
        }
        every = parse_every(req.uri().query());
        Ok(resp)
    };
    let Ok(mut ws) = tungstenite::accept_hdr(stream, callback) else {
        return;
    };
    let (reply_tx, reply_rx) = mpsc::channel();
    if tx.send(SessionMsg::Connect { every, reply: reply_tx }).is_err() {
        return;
    }
    let Ok((id, outbox)) = reply_rx.recv() else {
        return;
    };
    let _ = ws.get_ref().set_read_timeout(Some(POLL));
    client_loop(&mut ws, id, &outbox, &tx, &stop);
    let _ = tx.send(SessionMsg::Disconnect(id));
    let _ = ws.close(None);
    let _ = ws.flush();
}

fn client_loop(
    ws: &mut WebSocket<TcpStream>,
    id: ClientId,
    outbox: &Outbox,
    tx: &Sender<SessionMsg>,
    stop: &AtomicBool,
) {
    loop {
        match ws.read() {
            Ok(WsMessage::Text(t)) => {
                if tx.send(SessionMsg::Control(id, t.as_str().to_owned())).is_err() {
                    return;
                }
            }
            Ok(WsMessage::Close(_)) => return,
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
            Err(_) => return,
        }
        for m in outbox.drain() {
            if ws.send(WsMessage::text(m.to_json())).is_err() {
                return;
            }
        }
        if outbox.is_closed() || stop.load(Ordering::Relaxed) {
            return;
        }
    }
}
