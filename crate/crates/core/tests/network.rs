//! Cloud server protocol behaviour over real loopback sockets.

use std::collections::BTreeMap;
use std::io::Write;
use std::net::{SocketAddr, TcpStream};
use std::thread;

use hcg::cloud::{CloudServer, CloudHandle, UNKNOWN_IMAGE};
use hcg::detect::finalize;
use hcg::edge::{run_edge, EdgeConfig};
use hcg::synth::{generate, SynthConfig};
use hcg::wire::{read_frame, write_frame, DetectRequest, Frame, Message, MsgType, MAGIC};
use hcg::{DetectionRecord, ThresholdSet, REPORT_CUTOFF};

fn traces() -> BTreeMap<String, DetectionRecord> {
    generate(&SynthConfig { image_count: 30, ..SynthConfig::default() }).unwrap().big
}

fn serve(big: &BTreeMap<String, DetectionRecord>) -> CloudHandle {
    CloudServer::bind("127.0.0.1:0", big, REPORT_CUTOFF).unwrap().spawn().unwrap()
}

fn ask(stream: &mut TcpStream, msg: &Message) -> Option<Message> {
    write_frame(stream, &msg.to_frame()).unwrap();
    read_frame(stream).unwrap().map(|f| Message::from_frame(&f).unwrap())
}

fn connect(addr: SocketAddr) -> TcpStream {
    TcpStream::connect(addr).unwrap()
}

#[test]
fn ping_gets_empty_pong() {
    let server = serve(&traces());
    let mut s = connect(server.addr());
    write_frame(&mut s, &Message::Ping.to_frame()).unwrap();
    let f = read_frame(&mut s).unwrap().unwrap();
    assert_eq!(f, Frame { msg_type: MsgType::Pong, payload: vec![] });
}

#[test]
fn responses_replay_finalized_traces() {
    let big = traces();
    let server = serve(&big);
    let mut s = connect(server.addr());
    for (id, rec) in &big {
        match ask(&mut s, &Message::DetectRequest(DetectRequest::new(id.clone(), 17))) {
            Some(Message::DetectResponse(r)) => {
                assert_eq!(&r.image_id, id);
                assert_eq!(r.detections, finalize(rec, REPORT_CUTOFF));
            }
            other => panic!("unexpected reply {other:?}"),
        }
    }
}

#[test]
fn unknown_image_keeps_connection_open() {
    let server = serve(&traces());
    let mut s = connect(server.addr());
    match ask(&mut s, &Message::DetectRequest(DetectRequest::new("nope", 0))) {
        Some(Message::Error(e)) => {
            assert_eq!(e.reason, UNKNOWN_IMAGE);
            assert_eq!(e.image_id.as_deref(), Some("nope"));
        }
        other => panic!("unexpected reply {other:?}"),
    }
    assert_eq!(ask(&mut s, &Message::Ping), Some(Message::Pong));
}

#[test]
fn malformed_frames_get_an_error_then_close() {
    let server = serve(&traces());
    let cases: Vec<Vec<u8>> = vec![
        b"XXXX\x04\x00\x00\x00\x00".to_vec(),
        [&MAGIC[..], &[9u8, 0, 0, 0, 0]].concat(),
        [&MAGIC[..], &[1u8, 0xff, 0xff, 0xff, 0xff]].concat(),
        [&MAGIC[..], &[1u8, 0, 0, 0, 3], b"{{{"].concat(),
        Message::Pong.to_frame().encode().unwrap(),
    ];
    for bytes in cases {
        let mut s = connect(server.addr());
        s.write_all(&bytes).unwrap();
        let reply = read_frame(&mut s).unwrap().expect("error frame before close");
        assert_eq!(reply.msg_type, MsgType::Error, "for {bytes:?}");
        assert!(read_frame(&mut s).map(|f| f.is_none()).unwrap_or(true), "connection should close");
    }
}

#[test]
fn responses_independent_of_order_and_connection() {
    let big = traces();
    let server = serve(&big);
    let ids: Vec<String> = big.keys().cloned().collect();
    let addr = server.addr();
    let workers: Vec<_> = (0..4)
        .map(|w| {
            let mut order = ids.clone();
            order.rotate_left(w * 7);
            if w % 2 == 1 {
                order.reverse();
            }
            thread::spawn(move || {
                let mut s = connect(addr);
                order
                    .into_iter()
                    .map(|id| {
                        let reply = ask(&mut s, &Message::DetectRequest(DetectRequest::new(id.clone(), 0)));
                        (id, serde_json::to_string(&reply.map(|m| m.to_frame().payload)).unwrap())
                    })
                    .collect::<BTreeMap<_, _>>()
            })
        })
        .collect();
    let results: Vec<_> = workers.into_iter().map(|h| h.join().unwrap()).collect();
    for r in &results[1..] {
        assert_eq!(r, &results[0]);
    }
}

#[test]
fn all_easy_dataset_sends_nothing() {
    let mut ds = generate(&SynthConfig { image_count: 20, ..SynthConfig::default() }).unwrap();
    for r in ds.small.values_mut() {
        r.raw.clear();
    }
    let server = serve(&ds.big);
    let cfg = EdgeConfig::new(ThresholdSet::new(0.1, 0, 0.5).unwrap(), Some(server.addr().to_string()));
    let rep = run_edge(&ds, &cfg).unwrap();
    assert_eq!(rep.frames_sent, 0);
    assert_eq!(rep.wire_bytes_sent, 0);
    assert_eq!(rep.metrics.difficult_count, 0);
}

#[test]
fn server_survives_client_disconnects() {
    let big = traces();
    let server = serve(&big);
    {
        let mut s = connect(server.addr());
        // half a header, then hang up
        s.write_all(&MAGIC).unwrap();
    }
    let mut s = connect(server.addr());
    assert_eq!(ask(&mut s, &Message::Ping), Some(Message::Pong));
}
