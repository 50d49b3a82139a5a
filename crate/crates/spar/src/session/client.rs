use std::net::TcpStream;

use tungstenite::stream::MaybeTlsStream;
use tungstenite::{Message, WebSocket};

use super::schema::{Body, Hello, SessionMessage};
use crate::{Error, Result};

/// Blocking operator client, for scripts and tests.
pub struct SessionClient {
    ws: WebSocket<MaybeTlsStream<TcpStream>>,
    session_id: String,
    next_seq: u64,
}

impl SessionClient {
    /// Connects and says hello. `session_id` resumes an existing session;
    /// `next_seq` must exceed every seq this operator sent before.
    pub fn connect(url: &str, session_id: Option<&str>, token: Option<&str>, next_seq: u64) -> Result<Self> {
        let (ws, _) = tungstenite::connect(url).map_err(|e| Error::Session(format!("connect {url}: {e}")))?;
        if let MaybeTlsStream::Plain(s) = ws.get_ref() {
            s.set_nodelay(true).map_err(|e| Error::Session(format!("connect {url}: {e}")))?;
        }
        let mut client = Self {
            ws,
            session_id: session_id.unwrap_or_default().to_owned(),
            next_seq,
        };
        client.send(Body::Hello(Hello {
            token: token.map(str::to_owned),
            ..Hello::default()
        }))?;
        Ok(client)
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    /// Sends `body` and returns its seq.
    pub fn send(&mut self, body: Body) -> Result<u64> {
        let seq = self.next_seq;
        self.next_seq += 1;
        let msg = SessionMessage::new(self.session_id.clone(), seq, body);
        self.send_raw(&msg.to_json())?;
        Ok(seq)
    }

    pub fn send_raw(&mut self, text: &str) -> Result<()> {
        self.ws
            .send(Message::text(text))
            .map_err(|e| Error::Session(format!("send: {e}")))
    }

    /// Next server message. Adopts the session id from the server's hello.
    pub fn recv(&mut self) -> Result<SessionMessage> {
        loop {
            match self.ws.read().map_err(|e| Error::Session(format!("read: {e}")))? {
                Message::Text(t) => {
                    let msg = SessionMessage::from_json(t.as_str())
                        .map_err(|e| Error::Session(format!("bad server frame: {e}")))?;
                    if matches!(msg.body, Body::Hello(_)) {
                        self.session_id.clone_from(&msg.session_id);
                    }
                    return Ok(msg);
                }
                Message::Close(_) => return Err(Error::Session("closed by server".into())),
                _ => {}
            }
        }
    }

    /// Drops the socket without a closing handshake, as a lost link would.
    pub fn drop_link(self) {}

    pub fn close(mut self) {
        let _ = self.ws.close(None);
        while self.ws.read().is_ok() {}
    }
}
