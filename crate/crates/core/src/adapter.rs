//! Line-delimited JSON protocol for attaching external detector/segmenter processes.
//!
//! Each request and response is one JSON object on one line. Rasters travel as
//! base64 PNG (frames RGB, masks 8-bit 0/255).
//!
//! ```text
//! {"op":"detect","image":<png>,"input_size":680}     -> {"detections":[{"box":[x0,y0,x1,y1],"conf":f,"cls":0}]}
//! {"op":"segment","image":<png>,"boxes":[[..]]}      -> {"masks":[<png>,..]}
//! {"op":"video_init","frames":[<png>..],"direction":"forward"} -> {"ok":true}
//! {"op":"video_prompt","frame":i,"obj":k,"box":[..]} -> {"ok":true}
//! {"op":"video_propagate"}                           -> {"frame":i,"obj":k,"mask":<png>}* then {"done":true}
//! ```
//!
//! Anything malformed is answered with `{"error":<string>}`. An adapter wrapping
//! a multi-mask segmenter picks the highest-scoring mask per box before replying.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use serde_json::{json, Value};

use crate::backends::{
    detect, open_session, Detection, DetectorSpec, Direction, MockKind, PromptRecord, PropagatedMask, Segmenter,
    SegmenterSession,
};
use crate::error::{Error, Result};
use crate::geometry::{BBox, BinaryMask, Frame};
use crate::raster::{frame_from_b64_png, frame_to_b64_png, mask_from_b64_png, mask_to_b64_png};

/// Bidirectional line channel.
pub trait Transport: Send {
    fn send_line(&mut self, line: &str) -> std::io::Result<()>;
    /// `None` on end of stream.
    fn recv_line(&mut self) -> std::io::Result<Option<String>>;
}

pub struct LineTransport<R, W> {
    reader: R,
    writer: W,
}

impl<R: BufRead + Send, W: Write + Send> LineTransport<R, W> {
    pub fn new(reader: R, writer: W) -> Self {
        LineTransport { reader, writer }
    }
}

impl<R: BufRead + Send, W: Write + Send> Transport for LineTransport<R, W> {
    fn send_line(&mut self, line: &str) -> std::io::Result<()> {
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()
    }

    fn recv_line(&mut self) -> std::io::Result<Option<String>> {
        let mut buf = String::new();
        if self.reader.read_line(&mut buf)? == 0 {
            return Ok(None);
        }
        Ok(Some(buf.trim_end_matches(['\r', '\n']).to_string()))
    }
}

pub struct AdapterClient {
    transport: Box<dyn Transport>,
    child: Option<Child>,
}

impl Drop for AdapterClient {
    fn drop(&mut self) {
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

impl AdapterClient {
    pub fn new(transport: Box<dyn Transport>) -> Self {
        AdapterClient {
            transport,
            child: None,
        }
    }

    /// `stdio:<command> [args..]` spawns a child speaking the protocol on its
    /// stdin/stdout; anything else (optionally prefixed `tcp://`) is a TCP address.
    pub fn connect(addr: &str) -> Result<Self> {
        if let Some(cmdline) = addr.strip_prefix("stdio:") {
            let mut parts = cmdline.split_whitespace();
            let program = parts
                .next()
                .ok_or_else(|| Error::backend("empty stdio adapter command"))?;
            let mut child = Command::new(program)
                .args(parts)
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .spawn()
                .map_err(|e| Error::backend(format!("cannot spawn adapter '{cmdline}': {e}")))?;
            let stdin: ChildStdin = child.stdin.take().expect("piped stdin");
            let stdout: ChildStdout = child.stdout.take().expect("piped stdout");
            let mut client = AdapterClient::new(Box::new(LineTransport::new(BufReader::new(stdout), stdin)));
            client.child = Some(child);
            return Ok(client);
        }
        let host = addr.strip_prefix("tcp://").unwrap_or(addr);
        let stream =
            TcpStream::connect(host).map_err(|e| Error::backend(format!("cannot reach adapter at {host}: {e}")))?;
        let reader = BufReader::new(
            stream
                .try_clone()
                .map_err(|e| Error::backend(format!("socket clone failed: {e}")))?,
        );
        Ok(AdapterClient::new(Box::new(LineTransport::new(reader, stream))))
    }

    fn send(&mut self, req: &Value) -> Result<()> {
        self.transport
            .send_line(&req.to_string())
            .map_err(|e| Error::backend(format!("adapter write failed: {e}")))
    }

    fn recv(&mut self) -> Result<Value> {
        let line = self
            .transport
            .recv_line()
            .map_err(|e| Error::backend(format!("adapter read failed: {e}")))?
            .ok_or_else(|| Error::backend("adapter closed the connection"))?;
        let v: Value =
            serde_json::from_str(&line).map_err(|e| Error::backend(format!("adapter sent invalid JSON: {e}")))?;
        if let Some(err) = v.get("error") {
            let msg = err.as_str().map(str::to_string).unwrap_or_else(|| err.to_string());
            return Err(Error::backend(format!("adapter reported: {msg}")));
        }
        Ok(v)
    }

    fn call(&mut self, req: &Value) -> Result<Value> {
        self.send(req)?;
        self.recv()
    }

    fn expect_ok(&mut self, req: &Value) -> Result<()> {
        let v = self.call(req)?;
        match v.get("ok") {
            Some(Value::Bool(true)) => Ok(()),
            _ => Err(Error::backend(format!("expected {{\"ok\":true}}, got {v}"))),
        }
    }

    pub fn detect(&mut self, frame: &Frame, input_size: u32) -> Result<Vec<Detection>> {
        let v = self.call(&json!({
            "op": "detect",
            "image": frame_to_b64_png(frame),
            "input_size": input_size,
        }))?;
        let dets = v
            .get("detections")
            .cloned()
            .ok_or_else(|| Error::backend(format!("detect reply lacks 'detections': {v}")))?;
        serde_json::from_value(dets).map_err(|e| Error::backend(format!("malformed detections: {e}")))
    }

    pub fn segment(&mut self, frame: &Frame, boxes: &[BBox]) -> Result<Vec<BinaryMask>> {
        let v = self.call(&json!({
            "op": "segment",
            "image": frame_to_b64_png(frame),
            "boxes": boxes,
        }))?;
        let masks = v
            .get("masks")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::backend(format!("segment reply lacks 'masks': {v}")))?;
        masks
            .iter()
            .map(|m| {
                m.as_str()
                    .ok_or_else(|| Error::backend("mask entry is not a string"))
                    .and_then(mask_from_b64_png)
            })
            .collect()
    }

    pub fn video_init(&mut self, frames: &[Frame], direction: Direction) -> Result<()> {
        let encoded: Vec<String> = frames.iter().map(frame_to_b64_png).collect();
        self.expect_ok(&json!({
            "op": "video_init",
            "frames": encoded,
            "direction": direction,
        }))
    }

    pub fn video_prompt(&mut self, frame: usize, object_id: u32, bbox: &BBox) -> Result<()> {
        self.expect_ok(&json!({
            "op": "video_prompt",
            "frame": frame,
            "obj": object_id,
            "box": bbox,
        }))
    }

    pub fn video_propagate(&mut self) -> Result<Vec<PropagatedMask>> {
        self.send(&json!({"op": "video_propagate"}))?;
        let mut out = Vec::new();
        loop {
            let v = self.recv()?;
            if v.get("done").and_then(Value::as_bool) == Some(true) {
                return Ok(out);
            }
            let frame = v.get("frame").and_then(Value::as_u64);
            let obj = v.get("obj").and_then(Value::as_u64);
            let mask = v.get("mask").and_then(Value::as_str);
            match (frame, obj, mask) {
                (Some(frame), Some(obj), Some(mask)) => out.push(PropagatedMask {
                    frame: frame as usize,
                    object_id: u32::try_from(obj).map_err(|_| Error::backend("object id out of range"))?,
                    mask: mask_from_b64_png(mask)?,
                }),
                _ => return Err(Error::backend(format!("malformed propagate record: {v}"))),
            }
        }
    }
}

/// Server-side behaviour of an adapter process.
pub trait AdapterHandler {
    fn detect(&mut self, frame: &Frame, input_size: u32) -> Result<Vec<Detection>>;
    fn segment(&mut self, frame: &Frame, boxes: &[BBox]) -> Result<Vec<BinaryMask>>;
    fn video_init(&mut self, frames: Vec<Frame>, direction: Direction) -> Result<()>;
    fn video_prompt(&mut self, prompt: PromptRecord) -> Result<()>;
    fn video_propagate(&mut self) -> Result<Vec<PropagatedMask>>;
}

fn field<'a>(req: &'a Value, name: &str) -> Result<&'a Value> {
    req.get(name)
        .ok_or_else(|| Error::InvalidArgument(format!("missing field '{name}'")))
}

fn str_field<'a>(req: &'a Value, name: &str) -> Result<&'a str> {
    field(req, name)?
        .as_str()
        .ok_or_else(|| Error::InvalidArgument(format!("field '{name}' must be a string")))
}

fn uint_field(req: &Value, name: &str) -> Result<u64> {
    field(req, name)?
        .as_u64()
        .ok_or_else(|| Error::InvalidArgument(format!("field '{name}' must be a nonnegative integer")))
}

fn handle_request<H: AdapterHandler>(handler: &mut H, req: &Value) -> Result<Vec<Value>> {
    let op = str_field(req, "op")?;
    Ok(match op {
        "detect" => {
            let frame = frame_from_b64_png(str_field(req, "image")?, 0)?;
            let input_size = req.get("input_size").and_then(Value::as_u64).unwrap_or(680) as u32;
            vec![json!({"detections": handler.detect(&frame, input_size)?})]
        }
        "segment" => {
            let frame = frame_from_b64_png(str_field(req, "image")?, 0)?;
            let boxes: Vec<BBox> = serde_json::from_value(field(req, "boxes")?.clone())
                .map_err(|e| Error::InvalidArgument(format!("bad boxes: {e}")))?;
            let masks: Vec<String> = handler.segment(&frame, &boxes)?.iter().map(mask_to_b64_png).collect();
            vec![json!({ "masks": masks })]
        }
        "video_init" => {
            let frames = field(req, "frames")?
                .as_array()
                .ok_or_else(|| Error::InvalidArgument("'frames' must be an array".into()))?
                .iter()
                .enumerate()
                .map(|(i, f)| {
                    f.as_str()
                        .ok_or_else(|| Error::InvalidArgument("frame entry is not a string".into()))
                        .and_then(|s| frame_from_b64_png(s, i))
                })
                .collect::<Result<Vec<_>>>()?;
            let direction = match req.get("direction").and_then(Value::as_str) {
                Some(d) => d.parse()?,
                None => Direction::Forward,
            };
            handler.video_init(frames, direction)?;
            vec![json!({"ok": true})]
        }
        "video_prompt" => {
            let bbox: BBox = serde_json::from_value(field(req, "box")?.clone())
                .map_err(|e| Error::InvalidArgument(format!("bad box: {e}")))?;
            let object_id = u32::try_from(uint_field(req, "obj")?)
                .map_err(|_| Error::InvalidArgument("object id out of range".into()))?;
            handler.video_prompt(PromptRecord {
                frame: uint_field(req, "frame")? as usize,
                object_id,
                bbox,
            })?;
            vec![json!({"ok": true})]
        }
        "video_propagate" => {
            let mut out: Vec<Value> = handler
                .video_propagate()?
                .into_iter()
                .map(|r| json!({"frame": r.frame, "obj": r.object_id, "mask": mask_to_b64_png(&r.mask)}))
                .collect();
            out.push(json!({"done": true}));
            out
        }
        other => return Err(Error::InvalidArgument(format!("unknown op '{other}'"))),
    })
}

/// Serves requests until the reader is exhausted. Handler failures and
/// malformed input become `{"error":..}` replies; only I/O errors end the loop.
pub fn serve<R: BufRead, W: Write, H: AdapterHandler>(reader: R, mut writer: W, handler: &mut H) -> std::io::Result<()> {
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let replies = match serde_json::from_str::<Value>(&line) {
            Ok(req) => handle_request(handler, &req).unwrap_or_else(|e| vec![json!({"error": e.to_string()})]),
            Err(e) => vec![json!({"error": format!("invalid JSON: {e}")})],
        };
        for r in replies {
            writeln!(writer, "{r}")?;
        }
        writer.flush()?;
    }
    Ok(())
}

/// Protocol-speaking stand-in for a real model server, driven by the mock backends.
///
/// Ground truth is registered per frame content so that the mock can answer
/// requests that carry only pixels.
pub struct MockAdapter {
    detector: DetectorSpec,
    segmenter: MockKind,
    truth: HashMap<u64, BinaryMask>,
    video: Option<(SegmenterSession, Vec<Frame>)>,
}

impl MockAdapter {
    pub fn new(detector: DetectorSpec, segmenter: MockKind) -> Self {
        let detector = DetectorSpec {
            kind: crate::backends::DetectorKind::Oracle,
            address: None,
            ..detector
        };
        MockAdapter {
            detector,
            segmenter,
            truth: HashMap::new(),
            video: None,
        }
    }

    pub fn register_truth(&mut self, frame: &Frame, gt: BinaryMask) {
        self.truth.insert(frame.content_hash(), gt);
    }

    fn truth_for(&self, frame: &Frame) -> Result<&BinaryMask> {
        self.truth
            .get(&frame.content_hash())
            .ok_or_else(|| Error::backend("mock adapter has no ground truth for this frame"))
    }
}

impl AdapterHandler for MockAdapter {
    fn detect(&mut self, frame: &Frame, _input_size: u32) -> Result<Vec<Detection>> {
        let gt = self.truth_for(frame)?;
        detect(frame, &self.detector, Some(gt), None)
    }

    fn segment(&mut self, frame: &Frame, boxes: &[BBox]) -> Result<Vec<BinaryMask>> {
        let gt = self.truth_for(frame).ok();
        crate::backends::segment_image(frame, boxes, &Segmenter::mock(self.segmenter), gt)
    }

    fn video_init(&mut self, frames: Vec<Frame>, direction: Direction) -> Result<()> {
        let session = open_session("adapter", &frames, &Segmenter::mock(self.segmenter), direction)?;
        self.video = Some((session, frames));
        Ok(())
    }

    fn video_prompt(&mut self, p: PromptRecord) -> Result<()> {
        let (session, _) = self
            .video
            .as_mut()
            .ok_or_else(|| Error::Contract("video_prompt before video_init".into()))?;
        session.add_box_prompt(p.frame, p.object_id, p.bbox)
    }

    fn video_propagate(&mut self) -> Result<Vec<PropagatedMask>> {
        let (session, frames) = self
            .video
            .as_mut()
            .ok_or_else(|| Error::Contract("video_propagate before video_init".into()))?;
        let gt: Option<Vec<BinaryMask>> = frames.iter().map(|f| self.truth.get(&f.content_hash()).cloned()).collect();
        session.propagate(gt.as_deref())
    }
}
