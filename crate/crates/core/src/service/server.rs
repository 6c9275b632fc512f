//! TCP front end: one thread per connection, each running its own
//! [`Connection`] over a line-delimited JSON stream.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use super::connection::{Connection, ServerContext};
use super::wire::{WireBody, WireMessage};

/// Longest accepted input line. Anything longer is discarded as malformed.
pub const MAX_LINE_BYTES: usize = 1 << 20;

pub struct Server {
    listener: TcpListener,
    ctx: Arc<ServerContext>,
    log_dir: Option<PathBuf>,
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs, ctx: ServerContext) -> io::Result<Self> {
        Ok(Self { listener: TcpListener::bind(addr)?, ctx: Arc::new(ctx), log_dir: None })
    }

    /// Writes each session's alerts to `<dir>/<session_id>.alerts.ndjson`.
    pub fn with_log_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.log_dir = Some(dir.into());
        self
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Accepts connections until the listener fails.
    pub fn run(self) -> io::Result<()> {
        if let Some(dir) = &self.log_dir {
            fs::create_dir_all(dir)?;
        }
        log::info!("listening on {}", self.listener.local_addr()?);
        for stream in self.listener.incoming() {
            let stream = match stream {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("accept failed: {e}");
                    continue;
                }
            };
            let ctx = Arc::clone(&self.ctx);
            let log_dir = self.log_dir.clone();
            thread::spawn(move || {
                let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
                if let Err(e) = handle_stream(stream, ctx, log_dir.as_deref()) {
                    log::warn!("connection {peer}: {e}");
                }
            });
        }
        Ok(())
    }

    /// Runs the accept loop on a background thread.
    pub fn spawn(self) -> JoinHandle<io::Result<()>> {
        thread::spawn(move || self.run())
    }
}

/// Reads one line of at most `MAX_LINE_BYTES`. Returns `None` at end of
/// input; an overlong line is drained and reported as empty-but-invalid.
fn read_line(reader: &mut impl BufRead, buf: &mut Vec<u8>) -> io::Result<Option<bool>> {
    buf.clear();
    let n = reader.by_ref().take(MAX_LINE_BYTES as u64 + 1).read_until(b'\n', buf)?;
    if n == 0 {
        return Ok(None);
    }
    if buf.len() > MAX_LINE_BYTES && buf.last() != Some(&b'\n') {
        let mut sink = Vec::new();
        reader.read_until(b'\n', &mut sink)?;
        return Ok(Some(false));
    }
    Ok(Some(true))
}

fn safe_file_stem(session_id: &str) -> String {
    let s: String =
        session_id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect();
    if s.is_empty() {
        "session".into()
    } else {
        s
    }
}

struct AlertLog {
    dir: PathBuf,
    file: Option<BufWriter<File>>,
}

impl AlertLog {
    fn record(&mut self, msg: &WireMessage) -> io::Result<()> {
        let WireBody::Alert(alert) = &msg.body else { return Ok(()) };
        if self.file.is_none() {
            let path = self.dir.join(format!("{}.alerts.ndjson", safe_file_stem(&msg.session_id)));
            self.file = Some(BufWriter::new(File::create(path)?));
        }
        let f = self.file.as_mut().expect("opened above");
        writeln!(f, "{}", alert.to_ndjson())?;
        f.flush()
    }
}

/// Serves one client until it disconnects or is closed for protocol
/// violations. Remaining windows are flushed when the client half-closes.
pub fn handle_stream(stream: TcpStream, ctx: Arc<ServerContext>, log_dir: Option<&Path>) -> io::Result<()> {
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    let mut conn = Connection::new(ctx);
    let mut log = log_dir.map(|d| AlertLog { dir: d.to_path_buf(), file: None });
    let mut send = |writer: &mut BufWriter<TcpStream>, msgs: &[WireMessage]| -> io::Result<()> {
        for m in msgs {
            if let Some(l) = log.as_mut() {
                l.record(m)?;
            }
            writer.write_all(m.to_line().as_bytes())?;
            writer.write_all(b"\n")?;
        }
        writer.flush()
    };
    let mut buf = Vec::new();
    loop {
        let line = match read_line(&mut reader, &mut buf)? {
            None => break,
            Some(true) => String::from_utf8_lossy(&buf).into_owned(),
            Some(false) => "\u{0}overlong".to_string(),
        };
        let reply = conn.handle_line(&line);
        send(&mut writer, &reply.messages)?;
        if reply.close {
            return Ok(());
        }
    }
    let rest = conn.finish();
    send(&mut writer, &rest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlong_line_is_drained() {
        let mut data = vec![b'x'; MAX_LINE_BYTES + 10];
        data.extend_from_slice(b"\n{}\n");
        let mut r = io::Cursor::new(data);
        let mut buf = Vec::new();
        assert_eq!(read_line(&mut r, &mut buf).unwrap(), Some(false));
        assert_eq!(read_line(&mut r, &mut buf).unwrap(), Some(true));
        assert_eq!(buf, b"{}\n");
        assert_eq!(read_line(&mut r, &mut buf).unwrap(), None);
    }

    #[test]
    fn file_stems_are_sanitised() {
        assert_eq!(safe_file_stem("../etc/passwd"), "___etc_passwd");
        assert_eq!(safe_file_stem(""), "session");
    }
}
