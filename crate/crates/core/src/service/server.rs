use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;

use log::{info, warn};

use crate::error::Result;
use crate::eval::Models;
use crate::optimizer::OptimizerConfig;

use super::handler::Handler;

type Queue = Arc<(Mutex<VecDeque<Option<String>>>, Condvar)>;

/// Runs one connection to completion: lines are read on a separate thread
/// and queued, then handled strictly in order.
pub fn serve_connection<R, W>(reader: R, mut writer: W, mut handler: Handler) -> Result<()>
where
    R: Read + Send + 'static,
    W: Write,
{
    let queue: Queue = Arc::new((Mutex::new(VecDeque::new()), Condvar::new()));
    let q = queue.clone();
    thread::spawn(move || {
        let push = |item| {
            let (lock, cv) = &*q;
            lock.lock().expect("queue lock").push_back(item);
            cv.notify_one();
        };
        for line in BufReader::new(reader).lines() {
            match line {
                Ok(l) if l.trim().is_empty() => {}
                Ok(l) => push(Some(l)),
                Err(_) => break,
            }
        }
        push(None);
    });
    loop {
        let (item, queued) = {
            let (lock, cv) = &*queue;
            let mut q = cv.wait_while(lock.lock().expect("queue lock"), |q| q.is_empty()).expect("queue lock");
            let item = q.pop_front().expect("non-empty queue");
            (item, q.iter().filter(|i| i.is_some()).count())
        };
        let Some(line) = item else { break };
        for env in handler.handle_line(&line, queued) {
            writer.write_all(env.to_line()?.as_bytes())?;
            writer.write_all(b"\n")?;
        }
        writer.flush()?;
        if handler.is_closed() {
            break;
        }
    }
    Ok(())
}

/// TCP front end: one independent session per connection, sharing the
/// loaded models.
pub struct Server {
    listener: TcpListener,
    models: Models,
    vae_hash: String,
    config: OptimizerConfig,
}

impl Server {
    pub fn bind(addr: &str, models: Models, config: OptimizerConfig) -> Result<Server> {
        models.check()?;
        config.validate()?;
        let vae_hash = models.vae.to_checkpoint()?.hash()?;
        Ok(Server {
            listener: TcpListener::bind(addr)?,
            models,
            vae_hash,
            config,
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    fn handle(&self, stream: TcpStream) {
        let peer = stream.peer_addr().ok();
        let handler = Handler::new(self.models.clone(), self.vae_hash.clone(), self.config.clone());
        let reader = match stream.try_clone() {
            Ok(r) => r,
            Err(e) => {
                warn!("cannot clone stream for {peer:?}: {e}");
                return;
            }
        };
        thread::spawn(move || {
            info!("session opened for {peer:?}");
            if let Err(e) = serve_connection(reader, &stream, handler) {
                warn!("session for {peer:?} ended with error: {e}");
            }
            let _ = stream.shutdown(std::net::Shutdown::Both);
            info!("session closed for {peer:?}");
        });
    }

    /// Accepts connections forever.
    pub fn run(&self) -> Result<()> {
        for stream in self.listener.incoming() {
            match stream {
                Ok(s) => self.handle(s),
                Err(e) => warn!("accept failed: {e}"),
            }
        }
        Ok(())
    }
}

/// Binds `addr` and serves sessions until the process exits.
pub fn serve_session(addr: &str, models: Models, config: OptimizerConfig) -> Result<()> {
    let server = Server::bind(addr, models, config)?;
    info!("listening on {}", server.local_addr()?);
    server.run()
}
