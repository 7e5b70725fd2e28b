use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::eval::Models;
use crate::kinematics::forward_kinematics;
use crate::optimizer::{OptimizerConfig, Session};
use crate::pose::{Pose, RootState, SparseInput, SparseSignal};
use crate::skeleton::{SensorRole, Skeleton};

use super::protocol::{Envelope, Message, PoseFrame, PROTOCOL_VERSION};

/// Rest pose standing on the ground plane, or placed at `root` when given.
pub fn default_seed(sk: &Skeleton, root: Option<RootState>) -> Result<(Pose, RootState)> {
    let pose = Pose::identity(sk.joint_count());
    let root = match root {
        Some(r) => r,
        None => {
            let low = forward_kinematics(&pose, sk)?.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
            RootState::new(crate::math::Quat::IDENTITY, crate::math::Vec3::new(0.0, -low, 0.0))
        }
    };
    Ok((pose, root))
}

/// Reconstructs a recorded sparse stream from the default seed, exactly as a
/// live session fed the same frames would.
pub fn reconstruct_stream(models: &Models, config: &OptimizerConfig, root: Option<RootState>, frames: &[SparseInput]) -> Result<Vec<PoseFrame>> {
    models.check()?;
    let (pose, root) = default_seed(&models.vae.skeleton, root)?;
    let mut session = Session::from_vae(models.vae.clone(), models.temporal.clone(), config.clone(), &pose, root)?;
    frames
        .iter()
        .map(|f| {
            let (pose, report) = session.optimize_frame(f)?;
            Ok(PoseFrame::new(&pose, session.root(), &report))
        })
        .collect()
}

/// Protocol state of one connection, independent of the transport.
pub struct Handler {
    models: Models,
    vae_hash: String,
    config: OptimizerConfig,
    session: Option<Session>,
    out_seq: u64,
    in_seq: Option<u64>,
    disabled: BTreeSet<SensorRole>,
    last_signals: Vec<SparseSignal>,
    closed: bool,
}

impl Handler {
    /// `vae_hash` is the checkpoint hash of `models.vae`.
    pub fn new(models: Models, vae_hash: String, config: OptimizerConfig) -> Self {
        Handler {
            models,
            vae_hash,
            config,
            session: None,
            out_seq: 0,
            in_seq: None,
            disabled: BTreeSet::new(),
            last_signals: Vec::new(),
            closed: false,
        }
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    fn send(&mut self, out: &mut Vec<Envelope>, message: Message) {
        self.out_seq += 1;
        out.push(Envelope { seq: self.out_seq, message });
    }

    fn error(&mut self, out: &mut Vec<Envelope>, e: impl std::fmt::Display) {
        self.send(out, Message::Error { message: e.to_string() });
    }

    /// Replies to one raw line. `queued` is the number of messages waiting
    /// behind it.
    pub fn handle_line(&mut self, line: &str, queued: usize) -> Vec<Envelope> {
        match Envelope::parse(line) {
            Ok(env) => self.handle(env, queued),
            Err(e) => {
                let mut out = Vec::new();
                self.error(&mut out, e);
                out
            }
        }
    }

    pub fn handle(&mut self, env: Envelope, queued: usize) -> Vec<Envelope> {
        let mut out = Vec::new();
        if self.closed {
            return out;
        }
        if let Some(prev) = self.in_seq {
            if env.seq != prev + 1 {
                self.error(&mut out, format!("sequence gap: expected {}, got {}", prev + 1, env.seq));
            }
        }
        self.in_seq = Some(env.seq);
        match env.message {
            Message::Hello {
                protocol,
                vae_hash,
                mode,
                root,
            } => {
                if protocol != PROTOCOL_VERSION {
                    self.bye(&mut out, format!("unsupported protocol `{protocol}`, expected `{PROTOCOL_VERSION}`"));
                } else if vae_hash.as_ref().is_some_and(|h| *h != self.vae_hash) {
                    self.bye(&mut out, format!("checkpoint mismatch: service runs autoencoder {}", self.vae_hash));
                } else if self.session.is_some() {
                    self.error(&mut out, "session already started");
                } else {
                    if let Some(m) = mode {
                        self.config.max_iterations = m.max_iterations();
                    }
                    match self.start(root.as_ref().map(RootState::from)) {
                        Ok(()) => {
                            let hash = Some(self.vae_hash.clone());
                            self.send(
                                &mut out,
                                Message::Hello {
                                    protocol: PROTOCOL_VERSION.into(),
                                    vae_hash: hash,
                                    mode,
                                    root: None,
                                },
                            );
                            let sk = Message::skeleton(&self.models.vae.skeleton);
                            self.send(&mut out, sk);
                        }
                        Err(e) => self.bye(&mut out, e.to_string()),
                    }
                }
            }
            Message::SparseFrame { signals } => {
                if self.session.is_none() {
                    self.error(&mut out, "handshake required before frames");
                } else {
                    self.last_signals = signals;
                    self.frame(&mut out, queued);
                }
            }
            Message::ConstraintEdit {
                add,
                remove,
                enable_sensors,
                disable_sensors,
                config,
            } => {
                if self.session.is_none() {
                    self.error(&mut out, "handshake required before edits");
                } else if let Err(e) = self.edit(add, remove, enable_sensors, disable_sensors, config) {
                    self.error(&mut out, e);
                } else {
                    self.frame(&mut out, queued);
                }
            }
            Message::Bye { .. } => self.bye(&mut out, "client closed".into()),
            other => self.error(&mut out, format!("unexpected `{}` message from client", other.kind())),
        }
        out
    }

    fn bye(&mut self, out: &mut Vec<Envelope>, reason: String) {
        self.send(out, Message::Bye { reason: Some(reason) });
        self.closed = true;
    }

    fn start(&mut self, root: Option<RootState>) -> Result<()> {
        let (pose, root) = default_seed(&self.models.vae.skeleton, root)?;
        self.session = Some(Session::from_vae(
            self.models.vae.clone(),
            self.models.temporal.clone(),
            self.config.clone(),
            &pose,
            root,
        )?);
        Ok(())
    }

    fn edit(
        &mut self,
        add: Vec<crate::optimizer::Constraint>,
        remove: Vec<String>,
        enable: Vec<SensorRole>,
        disable: Vec<SensorRole>,
        patch: Option<super::ConfigPatch>,
    ) -> Result<()> {
        let session = self.session.as_mut().ok_or_else(|| Error::Protocol("no session".into()))?;
        let mut sensors = Vec::new();
        let mut ids = Vec::new();
        for id in remove {
            match id.strip_prefix("sensor.").and_then(|r| r.split('.').next()) {
                Some(role) => sensors.push(role.parse::<SensorRole>()?),
                None => ids.push(id),
            }
        }
        if let Some(p) = &patch {
            let c = p.apply(session.config());
            c.validate()?;
            session.edit_constraints(add, &ids)?;
            session.set_config(c)?;
        } else {
            session.edit_constraints(add, &ids)?;
        }
        self.disabled.extend(sensors);
        self.disabled.extend(disable);
        for r in enable {
            self.disabled.remove(&r);
        }
        Ok(())
    }

    fn frame(&mut self, out: &mut Vec<Envelope>, queued: usize) {
        let mut input = SparseInput {
            signals: self.last_signals.clone(),
        };
        for s in &mut input.signals {
            if self.disabled.contains(&s.role) {
                s.valid = false;
            }
        }
        let session = self.session.as_mut().expect("session started");
        match session.optimize_frame(&input) {
            Ok((pose, report)) => {
                let pf = PoseFrame::new(&pose, session.root(), &report);
                self.send(out, Message::PoseFrame(pf));
                self.send(
                    out,
                    Message::Residuals {
                        frame: report.frame,
                        residuals: report.residuals,
                        converged: report.converged,
                        diagnostics: report.diagnostics,
                        queue: queued,
                    },
                );
            }
            Err(e) => self.error(out, e),
        }
    }
}
