use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::path::PathBuf;
use std::sync::Arc;

use posedrag::eval::Models;
use posedrag::motion::{default_roles, make_sparse, synth_motion, MotionKind};
use posedrag::optimizer::{Constraint, ConstraintKind, OptimizerConfig};
use posedrag::service::*;
use posedrag::vae::{PoseVae, VaeConfig};
use posedrag::*;
use serde_json::{json, Value};

fn models() -> Models {
    let mut vae = PoseVae::new(
        Skeleton::standard(),
        VaeConfig {
            latent_dim: 24,
            hidden: [32, 32],
        },
        7,
    )
    .unwrap();
    let clip = synth_motion(MotionKind::WalkCycle, 1.0, 1).unwrap();
    vae.fit_standardization(&clip.frames).unwrap();
    Models::new(Arc::new(vae), None)
}

fn handler() -> Handler {
    let m = models();
    let hash = m.vae.to_checkpoint().unwrap().hash().unwrap();
    Handler::new(m, hash, OptimizerConfig::default())
}

fn sparse_frames(count: usize) -> Vec<SparseInput> {
    let clip = synth_motion(MotionKind::ArmWave, 1.0, 5).unwrap();
    make_sparse(&clip, &default_roles(6).unwrap(), Dof::PosRot).unwrap().frames[1..=count].to_vec()
}

fn line(seq: u64, message: Message) -> String {
    Envelope { seq, message }.to_line().unwrap()
}

fn hello(seq: u64) -> String {
    line(
        seq,
        Message::Hello {
            protocol: PROTOCOL_VERSION.into(),
            vae_hash: None,
            mode: None,
            root: None,
        },
    )
}

fn frame(seq: u64, input: &SparseInput) -> String {
    line(
        seq,
        Message::SparseFrame {
            signals: input.signals.clone(),
        },
    )
}

fn kinds(out: &[Envelope]) -> Vec<&'static str> {
    out.iter().map(|e| e.message.kind()).collect()
}

#[test]
fn handshake_sends_skeleton() {
    let mut h = handler();
    let out = h.handle_line(&hello(1), 0);
    assert_eq!(kinds(&out), ["hello", "skeleton"]);
    assert_eq!(out[0].seq, 1);
    assert_eq!(out[1].seq, 2);
    let sk = Skeleton::standard();
    match &out[1].message {
        Message::Skeleton { joints, roles } => {
            assert_eq!(joints.len(), sk.joint_count());
            for (info, j) in joints.iter().zip(sk.joints()) {
                assert_eq!(info.name, j.name);
                assert_eq!(info.parent, j.parent);
                assert_eq!(info.offset, j.offset);
            }
            assert_eq!(roles[&SensorRole::Head], 15);
        }
        m => panic!("{m:?}"),
    }
}

#[test]
fn handshake_refusals() {
    let mut h = handler();
    let out = h.handle_line(r#"{"seq":1,"type":"hello","protocol":"posedrag/0"}"#, 0);
    assert_eq!(kinds(&out), ["bye"]);
    assert!(h.is_closed());
    let mut h = handler();
    let out = h.handle_line(r#"{"seq":1,"type":"hello","protocol":"posedrag/1","vae_hash":"abc"}"#, 0);
    assert_eq!(kinds(&out), ["bye"]);
    match &out[0].message {
        Message::Bye { reason: Some(r) } => assert!(r.contains("checkpoint mismatch")),
        m => panic!("{m:?}"),
    }
}

#[test]
fn malformed_and_out_of_order_messages_get_errors() {
    let mut h = handler();
    let f = sparse_frames(1);
    assert_eq!(kinds(&h.handle_line(&frame(1, &f[0]), 0)), ["error"]);
    assert_eq!(kinds(&h.handle_line("{not json", 0)), ["error"]);
    assert!(!h.is_closed());
    assert_eq!(kinds(&h.handle_line(&hello(2), 0)), ["hello", "skeleton"]);
    // Unknown fields are ignored.
    let mut v: Value = serde_json::from_str(&frame(3, &f[0])).unwrap();
    v["extra"] = json!({"anything": [1, 2]});
    assert_eq!(kinds(&h.handle_line(&v.to_string(), 0)), ["pose_frame", "residuals"]);
    // A gap is reported and the frame still runs.
    assert_eq!(kinds(&h.handle_line(&frame(9, &f[0]), 0)), ["error", "pose_frame", "residuals"]);
    assert_eq!(kinds(&h.handle_line(r#"{"seq":10,"type":"pose_frame"}"#, 0)), ["error"]);
}

#[test]
fn removing_a_sensor_drops_its_residuals() {
    let mut h = handler();
    let f = sparse_frames(4);
    h.handle_line(&hello(1), 0);
    let residual_ids = |out: &[Envelope]| -> Vec<String> {
        out.iter()
            .find_map(|e| match &e.message {
                Message::Residuals { residuals, .. } => Some(residuals.iter().map(|r| r.id.clone()).collect()),
                _ => None,
            })
            .unwrap()
    };
    let out = h.handle_line(&frame(2, &f[0]), 0);
    assert!(residual_ids(&out).contains(&"sensor.right_foot.position".to_string()));
    let edit = line(
        3,
        Message::ConstraintEdit {
            add: vec![],
            remove: vec!["sensor.right_foot.position".into()],
            enable_sensors: vec![],
            disable_sensors: vec![],
            config: None,
        },
    );
    let out = h.handle_line(&edit, 0);
    assert_eq!(kinds(&out), ["pose_frame", "residuals"]);
    assert!(!residual_ids(&out).iter().any(|id| id.starts_with("sensor.right_foot")));
    let out = h.handle_line(&frame(4, &f[1]), 0);
    let ids = residual_ids(&out);
    assert!(!ids.iter().any(|id| id.starts_with("sensor.right_foot")));
    assert!(ids.contains(&"sensor.left_foot.rotation".to_string()));
    let enable = line(
        5,
        Message::ConstraintEdit {
            add: vec![],
            remove: vec![],
            enable_sensors: vec![SensorRole::RightFoot],
            disable_sensors: vec![],
            config: None,
        },
    );
    h.handle_line(&enable, 0);
    let out = h.handle_line(&frame(6, &f[2]), 0);
    assert!(residual_ids(&out).contains(&"sensor.right_foot.position".to_string()));
}

#[test]
fn edits_add_constraints_and_reject_duplicates() {
    let mut h = handler();
    h.handle_line(&hello(1), 0);
    let drag = Constraint::new(
        "drag.left_hand",
        1.0,
        ConstraintKind::EndEffectorPosition {
            joint: "left_hand".into(),
            target: Vec3::new(0.3, 1.4, 0.2),
        },
    );
    let edit = |seq, add: Vec<Constraint>| {
        line(
            seq,
            Message::ConstraintEdit {
                add,
                remove: vec![],
                enable_sensors: vec![],
                disable_sensors: vec![],
                config: Some(ConfigPatch {
                    mode: Some(optimizer::Mode::Offline),
                    ..ConfigPatch::default()
                }),
            },
        )
    };
    let out = h.handle_line(&edit(2, vec![drag.clone()]), 0);
    assert_eq!(kinds(&out), ["pose_frame", "residuals"]);
    match &out[1].message {
        Message::Residuals { residuals, .. } => assert_eq!(residuals[0].id, "drag.left_hand"),
        m => panic!("{m:?}"),
    }
    let out = h.handle_line(&edit(3, vec![drag]), 0);
    assert_eq!(kinds(&out), ["error"]);
}

#[test]
fn bye_closes() {
    let mut h = handler();
    h.handle_line(&hello(1), 0);
    let out = h.handle_line(r#"{"seq":2,"type":"bye"}"#, 0);
    assert_eq!(kinds(&out), ["bye"]);
    assert!(h.is_closed());
    assert!(h.handle_line(&hello(3), 0).is_empty());
}

#[test]
fn tcp_replay_matches_offline_reconstruction() {
    let m = models();
    let server = Server::bind("127.0.0.1:0", m.clone(), OptimizerConfig::default()).unwrap();
    let addr = server.local_addr().unwrap();
    std::thread::spawn(move || server.run());
    let frames = sparse_frames(30);

    let mut stream = TcpStream::connect(addr).unwrap();
    // Everything is written up front so frames queue behind each other.
    let mut script = hello(1) + "\n";
    for (k, f) in frames.iter().enumerate() {
        script += &frame(k as u64 + 2, f);
        script.push('\n');
    }
    script += &line(frames.len() as u64 + 2, Message::Bye { reason: None });
    script.push('\n');
    stream.write_all(script.as_bytes()).unwrap();
    let replies: Vec<Envelope> = BufReader::new(stream)
        .lines()
        .map(|l| Envelope::parse(&l.unwrap()).unwrap())
        .collect();
    assert_eq!(replies.last().unwrap().message.kind(), "bye");
    for (k, e) in replies.iter().enumerate() {
        assert_eq!(e.seq, k as u64 + 1);
    }
    let online: Vec<String> = replies
        .iter()
        .filter_map(|e| match &e.message {
            Message::PoseFrame(p) => Some(serde_json::to_string(p).unwrap()),
            _ => None,
        })
        .collect();
    let queues: Vec<usize> = replies
        .iter()
        .filter_map(|e| match &e.message {
            Message::Residuals { queue, .. } => Some(*queue),
            _ => None,
        })
        .collect();
    assert!(queues.iter().all(|&q| q <= frames.len()));
    let offline: Vec<String> = reconstruct_stream(&m, &OptimizerConfig::default(), None, &frames)
        .unwrap()
        .iter()
        .map(|p| serde_json::to_string(p).unwrap())
        .collect();
    assert_eq!(online.len(), frames.len());
    assert_eq!(online, offline);
}

fn transcripts() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../docs/transcripts")
}

fn same_json(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap(), y.as_f64().unwrap());
            (x - y).abs() <= 1e-9 * (1.0 + x.abs().max(y.abs()))
        }
        (Value::Array(x), Value::Array(y)) => x.len() == y.len() && x.iter().zip(y).all(|(p, q)| same_json(p, q)),
        (Value::Object(x), Value::Object(y)) => {
            x.len() == y.len() && x.iter().all(|(k, v)| y.get(k).is_some_and(|w| same_json(v, w)))
        }
        _ => a == b,
    }
}

/// Replays the client lines (`>`) of each golden transcript and compares
/// the replies against the recorded server lines (`<`). Set
/// `POSEDRAG_BLESS=1` to rewrite the transcripts from the current build.
#[test]
fn golden_transcripts() {
    let bless = std::env::var("POSEDRAG_BLESS").is_ok();
    for name in ["session.jsonl", "errors.jsonl"] {
        let path = transcripts().join(name);
        let text = std::fs::read_to_string(&path).unwrap();
        let mut h = handler();
        let mut expected = Vec::new();
        let mut actual = Vec::new();
        let mut blessed = String::new();
        for l in text.lines() {
            if let Some(c) = l.strip_prefix("> ") {
                blessed += l;
                blessed.push('\n');
                for e in h.handle_line(c, 0) {
                    let s = e.to_line().unwrap();
                    blessed += &format!("< {s}\n");
                    actual.push(s);
                }
            } else if let Some(s) = l.strip_prefix("< ") {
                expected.push(s.to_string());
            }
        }
        if bless {
            std::fs::write(&path, blessed).unwrap();
            continue;
        }
        assert_eq!(actual.len(), expected.len(), "{name}: reply count");
        for (a, e) in actual.iter().zip(&expected) {
            let (a, e): (Value, Value) = (serde_json::from_str(a).unwrap(), serde_json::from_str(e).unwrap());
            assert!(same_json(&a, &e), "{name}:\n got {a}\nwant {e}");
        }
    }
}
