use std::cell::Cell;
use std::io::{Read, Write};
use std::rc::Rc;

use iam_core::cell::{memory_footprint_bytes, CellConfig, IamModel};
use iam_core::datagen::{FeatureFile, FEATURE_HEADER_BYTES};
use iam_core::numerics::Rng;
use iam_core::stream::{run_stream, stream_header};

fn model(features: usize, classes: usize) -> IamModel<f32> {
    IamModel::new(CellConfig::small(32, classes, features, 6, 2), &mut Rng::seed(3)).unwrap()
}

fn random_file(frames: usize, features: usize) -> FeatureFile {
    let mut rng = Rng::seed(8);
    FeatureFile::new(features, 1.0, (0..frames * features).map(|_| rng.normal() as f32).collect()).unwrap()
}

#[test]
fn memory_holds_at_the_bound() {
    let m = model(4, 7);
    let file = random_file(1000, 4);
    let mut out = Vec::new();
    let stats = run_stream(&m, file.to_bytes().as_slice(), &mut out).unwrap();
    assert_eq!(stats.frames, 1000);
    assert_eq!(stats.state_bound_bytes, memory_footprint_bytes(m.config(), 4));
    assert_eq!(stats.peak_state_bytes, stats.state_bound_bytes);
    let text = String::from_utf8(out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), stream_header(7));
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first.len(), 11);
    assert_eq!(first[0], "0");
    assert_eq!(text.lines().count(), 1001);
}

#[test]
fn output_matches_offline_steps() {
    let m = model(4, 3);
    let file = random_file(20, 4);
    let mut out = Vec::new();
    run_stream(&m, file.to_bytes().as_slice(), &mut out).unwrap();
    let mut state = m.new_state();
    let mut rng = Rng::seed(0);
    for (t, line) in String::from_utf8(out).unwrap().lines().skip(1).enumerate() {
        let p = m.step(&mut state, file.frame(t), &mut rng, false).unwrap().prediction;
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 1 + 2 * 3);
        let top: usize = fields[1].parse().unwrap();
        assert_eq!(top, p.argmax());
        assert_eq!(fields[2].parse::<f32>().unwrap(), p.probs()[top]);
    }
}

/// Counts bytes handed out by the reader.
struct Counting<R> {
    inner: R,
    read: Rc<Cell<usize>>,
}

impl<R: Read> Read for Counting<R> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.read.set(self.read.get() + n);
        Ok(n)
    }
}

/// Records, at each flush, how many input bytes had been consumed.
struct Probe {
    read: Rc<Cell<usize>>,
    pending: Vec<u8>,
    at_line: Vec<usize>,
}

impl Write for Probe {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.pending.extend_from_slice(buf);
        Ok(buf.len())
    }
    fn flush(&mut self) -> std::io::Result<()> {
        let lines = self.pending.iter().filter(|b| **b == b'\n').count();
        self.at_line.extend(std::iter::repeat_n(self.read.get(), lines));
        self.pending.clear();
        Ok(())
    }
}

#[test]
fn each_line_is_flushed_before_the_next_frame_is_read() {
    let m = model(4, 5);
    let file = random_file(12, 4);
    let bytes = file.to_bytes();
    let read = Rc::new(Cell::new(0));
    let input = Counting {
        inner: bytes.as_slice(),
        read: read.clone(),
    };
    let mut probe = Probe {
        read,
        pending: Vec::new(),
        at_line: Vec::new(),
    };
    run_stream(&m, input, &mut probe).unwrap();
    let frame_bytes = 4 * 4;
    assert_eq!(probe.at_line.len(), 13);
    assert_eq!(probe.at_line[0], FEATURE_HEADER_BYTES);
    for t in 0..12 {
        assert_eq!(probe.at_line[t + 1], FEATURE_HEADER_BYTES + (t + 1) * frame_bytes, "frame {t}");
    }
}

#[test]
fn wrong_width_stream_is_rejected() {
    let m = model(4, 5);
    let file = random_file(3, 6);
    let err = run_stream(&m, file.to_bytes().as_slice(), Vec::new()).unwrap_err().to_string();
    assert!(err.contains("F=4") && err.contains("F=6"), "{err}");
}
