use std::collections::BTreeMap;
use std::io::ErrorKind;
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use tungstenite::{Message, WebSocket};

use super::state::{ConnId, Out, Session};
use crate::{Error, Result};

const POLL: Duration = Duration::from_millis(5);
const IDLE: Duration = Duration::from_millis(50);
const CLOSE_GRACE: Duration = Duration::from_secs(1);

enum Event {
    Connected(ConnId, Sender<Command>),
    Text(ConnId, String),
    Closed(ConnId),
}

enum Command {
    Text(String),
    Close,
}

/// Serves `session` on `listener` until every episode has finished, then
/// closes the connection and returns the session. Each socket gets an IO
/// thread; their frames reach the session through one ordered queue.
pub fn serve(listener: TcpListener, mut session: Session) -> Result<Session> {
    let addr = listener.local_addr().ok();
    listener
        .set_nonblocking(true)
        .map_err(|e| Error::Session(format!("listener {addr:?}: {e}")))?;
    let (tx, rx) = mpsc::channel();
    let stop = Arc::new(AtomicBool::new(false));
    let acceptor = {
        let stop = Arc::clone(&stop);
        thread::spawn(move || accept_loop(listener, tx, stop))
    };
    let result = event_loop(&rx, &mut session);
    stop.store(true, Ordering::SeqCst);
    let workers = acceptor.join().unwrap_or_default();
    for w in workers {
        let _ = w.join();
    }
    result.map(|()| session)
}

fn event_loop(rx: &Receiver<Event>, session: &mut Session) -> Result<()> {
    let mut conns: BTreeMap<ConnId, Sender<Command>> = BTreeMap::new();
    while !session.is_done() {
        let wait = session
            .next_deadline()
            .map_or(IDLE, |d| d.saturating_duration_since(Instant::now()).min(IDLE));
        let outs = match rx.recv_timeout(wait) {
            Ok(Event::Connected(id, cmd)) => {
                conns.insert(id, cmd);
                Vec::new()
            }
            Ok(Event::Text(id, text)) => session.message(id, &text),
            Ok(Event::Closed(id)) => {
                conns.remove(&id);
                session.disconnect(id)
            }
            Err(RecvTimeoutError::Timeout) => Vec::new(),
            Err(RecvTimeoutError::Disconnected) => return Err(Error::Session("acceptor stopped".into())),
        };
        let outs = outs.into_iter().chain(session.tick(Instant::now()));
        for out in outs {
            match out {
                Out::Send(id, msg) => {
                    if let Some(c) = conns.get(&id) {
                        let _ = c.send(Command::Text(msg.to_json()));
                    }
                }
                Out::Close(id) => {
                    if let Some(c) = conns.remove(&id) {
                        let _ = c.send(Command::Close);
                    }
                }
            }
        }
    }
    for c in conns.values() {
        let _ = c.send(Command::Close);
    }
    Ok(())
}

fn accept_loop(listener: TcpListener, tx: Sender<Event>, stop: Arc<AtomicBool>) -> Vec<JoinHandle<()>> {
    let mut workers = Vec::new();
    let mut next: ConnId = 0;
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                next += 1;
                let (id, tx) = (next, tx.clone());
                workers.push(thread::spawn(move || connection(id, stream, &tx)));
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(POLL),
            Err(_) => thread::sleep(POLL),
        }
    }
    workers
}

fn connection(id: ConnId, stream: TcpStream, events: &Sender<Event>) {
    if stream.set_nonblocking(false).and_then(|()| stream.set_nodelay(true)).is_err() {
        return;
    }
    let Ok(mut ws) = tungstenite::accept(stream) else {
        return;
    };
    if ws.get_ref().set_read_timeout(Some(POLL)).is_err() {
        return;
    }
    let (cmd_tx, cmd_rx) = mpsc::channel();
    if events.send(Event::Connected(id, cmd_tx)).is_err() {
        return;
    }
    loop {
        while let Ok(cmd) = cmd_rx.try_recv() {
            match cmd {
                Command::Text(t) => {
                    if ws.send(Message::text(t)).is_err() {
                        let _ = events.send(Event::Closed(id));
                        return;
                    }
                }
                Command::Close => {
                    close(&mut ws);
                    let _ = events.send(Event::Closed(id));
                    return;
                }
            }
        }
        match ws.read() {
            Ok(Message::Text(t)) => {
                if events.send(Event::Text(id, t.as_str().to_owned())).is_err() {
                    return;
                }
            }
            Ok(Message::Close(_)) => {
                let _ = ws.flush();
                let _ = events.send(Event::Closed(id));
                return;
            }
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(_) => {
                let _ = events.send(Event::Closed(id));
                return;
            }
        }
    }
}

/// Starts the closing handshake and waits briefly for the peer's reply.
fn close(ws: &mut WebSocket<TcpStream>) {
    let _ = ws.close(None);
    let deadline = Instant::now() + CLOSE_GRACE;
    while Instant::now() < deadline {
        match ws.read() {
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(_) => return,
            Ok(_) => {}
        }
    }
}
