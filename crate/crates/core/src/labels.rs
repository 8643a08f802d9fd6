//! Bowing/fingering taxonomy and frame-level label streams.
//!
//! Four streams describe what the player does at every frame: bow
//! direction (3 classes), played string (5), finger number (6) and hand
//! position (13). In every stream the last class means silence, and a frame
//! is silent in all four streams or in none.
//!
//! Classes are 1-based at the API surface ([`one_hot`], [`decode_class`],
//! annotation files) and 0-based in storage ([`LabelSequence`]).

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the four label streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feature {
    Bow,
    Str,
    Fing,
    Pos,
}

impl Feature {
    pub const ALL: [Feature; 4] = [Feature::Bow, Feature::Str, Feature::Fing, Feature::Pos];

    /// Class count including the trailing silence class.
    pub fn n_classes(self) -> usize {
        match self {
            Feature::Bow => 3,
            Feature::Str => 5,
            Feature::Fing => 6,
            Feature::Pos => 13,
        }
    }

    /// 0-based index of the silence class.
    pub fn silence(self) -> usize {
        self.n_classes() - 1
    }

    /// First column of this stream inside the 27-wide concatenation.
    pub fn offset(self) -> usize {
        match self {
            Feature::Bow => 0,
            Feature::Str => 3,
            Feature::Fing => 8,
            Feature::Pos => 14,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Feature::Bow => "bow",
            Feature::Str => "str",
            Feature::Fing => "fing",
            Feature::Pos => "pos",
        }
    }

    pub fn parse(s: &str) -> Option<Feature> {
        Feature::ALL.into_iter().find(|f| f.name() == s)
    }
}

/// Width of the concatenated bowing/fingering matrix.
pub const BF_WIDTH: usize = 27;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bow {
    Up,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ViolinString {
    E,
    A,
    D,
    G,
}

/// A sounding note with its bowing and fingering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoteEvent {
    pub onset_s: f64,
    pub offset_s: f64,
    pub bow: Bow,
    pub string: ViolinString,
    /// 1 = open string, 2..=5 = index..pinky.
    pub finger: u8,
    /// 1..=12.
    pub position: u8,
}

impl NoteEvent {
    /// 0-based class index of this note in each stream, in [`Feature::ALL`] order.
    pub fn classes(&self) -> [usize; 4] {
        [
            self.bow as usize,
            self.string as usize,
            self.finger as usize - 1,
            self.position as usize - 1,
        ]
    }

    fn validate(&self) -> Result<()> {
        if !(self.onset_s.is_finite() && self.offset_s.is_finite()) || self.onset_s < 0.0 {
            return Err(Error::Range(format!(
                "event times must be finite and non-negative, got [{}, {})",
                self.onset_s, self.offset_s
            )));
        }
        if self.onset_s >= self.offset_s {
            return Err(Error::Range(format!(
                "onset {} is not before offset {}",
                self.onset_s, self.offset_s
            )));
        }
        if !(1..=5).contains(&self.finger) {
            return Err(Error::Range(format!("finger {} outside 1..=5", self.finger)));
        }
        if !(1..=12).contains(&self.position) {
            return Err(Error::Range(format!("position {} outside 1..=12", self.position)));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct RawEvent {
    onset_s: f64,
    offset_s: f64,
    bow: String,
    string: String,
    finger: i64,
    position: i64,
}

#[derive(Serialize, Deserialize)]
struct RawAnnotation {
    piece_id: String,
    events: Vec<RawEvent>,
}

/// Parsed annotation file: one piece's note events, sorted by onset.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub piece_id: String,
    pub events: Vec<NoteEvent>,
}

fn small_int(v: i64, what: &str) -> Result<u8> {
    u8::try_from(v).map_err(|_| Error::Range(format!("{what} {v} out of range")))
}

/// Parses an annotation JSON document. Events come back sorted by onset;
/// overlapping events are rejected.
pub fn parse_annotation(json: &str) -> Result<Annotation> {
    let raw: RawAnnotation = serde_json::from_str(json).map_err(|e| Error::Schema(e.to_string()))?;
    let mut events = raw
        .events
        .iter()
        .map(|r| {
            let bow = match r.bow.as_str() {
                "up" => Bow::Up,
                "down" => Bow::Down,
                other => return Err(Error::Schema(format!("unknown bow direction `{other}`"))),
            };
            let string = match r.string.as_str() {
                "E" => ViolinString::E,
                "A" => ViolinString::A,
                "D" => ViolinString::D,
                "G" => ViolinString::G,
                other => return Err(Error::Schema(format!("unknown string `{other}`"))),
            };
            let ev = NoteEvent {
                onset_s: r.onset_s,
                offset_s: r.offset_s,
                bow,
                string,
                finger: small_int(r.finger, "finger")?,
                position: small_int(r.position, "position")?,
            };
            ev.validate()?;
            Ok(ev)
        })
        .collect::<Result<Vec<_>>>()?;
    sort_and_check(&mut events)?;
    Ok(Annotation {
        piece_id: raw.piece_id,
        events,
    })
}

/// Sorts events by onset and rejects any overlap.
pub fn sort_and_check(events: &mut [NoteEvent]) -> Result<()> {
    events.sort_by(|a, b| a.onset_s.total_cmp(&b.onset_s));
    for w in events.windows(2) {
        if w[1].onset_s < w[0].offset_s {
            return Err(Error::Overlap {
                first_onset_s: w[0].onset_s,
                second_onset_s: w[1].onset_s,
            });
        }
    }
    Ok(())
}

/// Serializes an annotation in the same schema [`parse_annotation`] reads.
pub fn annotation_to_json(annotation: &Annotation) -> String {
    let raw = RawAnnotation {
        piece_id: annotation.piece_id.clone(),
        events: annotation
            .events
            .iter()
            .map(|e| RawEvent {
                onset_s: e.onset_s,
                offset_s: e.offset_s,
                bow: match e.bow {
                    Bow::Up => "up",
                    Bow::Down => "down",
                }
                .into(),
                string: format!("{:?}", e.string),
                finger: e.finger as i64,
                position: e.position as i64,
            })
            .collect(),
    };
    serde_json::to_string_pretty(&raw).expect("plain data serializes")
}

/// Frame-level class indices (0-based) for the four streams.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSequence {
    pub bow: Vec<usize>,
    pub str: Vec<usize>,
    pub fing: Vec<usize>,
    pub pos: Vec<usize>,
}

impl LabelSequence {
    /// All-silence sequence of length `t`.
    pub fn silence(t: usize) -> Self {
        LabelSequence {
            bow: vec![Feature::Bow.silence(); t],
            str: vec![Feature::Str.silence(); t],
            fing: vec![Feature::Fing.silence(); t],
            pos: vec![Feature::Pos.silence(); t],
        }
    }

    /// Builds a sequence from 0-based classes, checking ranges, lengths and
    /// silence coherence.
    pub fn from_classes(bow: Vec<usize>, str: Vec<usize>, fing: Vec<usize>, pos: Vec<usize>) -> Result<Self> {
        let seq = LabelSequence { bow, str, fing, pos };
        let t = seq.len();
        for f in Feature::ALL {
            let s = seq.stream(f);
            if s.len() != t {
                return Err(Error::DimensionMismatch(format!(
                    "stream {} has {} frames, expected {t}",
                    f.name(),
                    s.len()
                )));
            }
            if let Some(&bad) = s.iter().find(|&&c| c >= f.n_classes()) {
                return Err(Error::Range(format!("class {bad} outside stream {}", f.name())));
            }
        }
        for i in 0..t {
            let silent: Vec<bool> = Feature::ALL.iter().map(|&f| seq.stream(f)[i] == f.silence()).collect();
            if silent.iter().any(|&s| s) && !silent.iter().all(|&s| s) {
                return Err(Error::Range(format!("frame {i} is silent in some streams only")));
            }
        }
        Ok(seq)
    }

    pub fn len(&self) -> usize {
        self.bow.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bow.is_empty()
    }

    pub fn stream(&self, f: Feature) -> &[usize] {
        match f {
            Feature::Bow => &self.bow,
            Feature::Str => &self.str,
            Feature::Fing => &self.fing,
            Feature::Pos => &self.pos,
        }
    }

    pub fn stream_mut(&mut self, f: Feature) -> &mut Vec<usize> {
        match f {
            Feature::Bow => &mut self.bow,
            Feature::Str => &mut self.str,
            Feature::Fing => &mut self.fing,
            Feature::Pos => &mut self.pos,
        }
    }

    pub fn is_silent(&self, t: usize) -> bool {
        self.bow[t] == Feature::Bow.silence()
    }

    /// `T x n` one-hot matrix for one stream.
    pub fn one_hot(&self, f: Feature) -> Array2<f64> {
        let s = self.stream(f);
        let mut m = Array2::zeros((s.len(), f.n_classes()));
        for (t, &c) in s.iter().enumerate() {
            m[[t, c]] = 1.0;
        }
        m
    }

    pub fn truncate(&mut self, t: usize) {
        for f in Feature::ALL {
            self.stream_mut(f).truncate(t);
        }
    }

    pub fn slice(&self, start: usize, end: usize) -> LabelSequence {
        LabelSequence {
            bow: self.bow[start..end].to_vec(),
            str: self.str[start..end].to_vec(),
            fing: self.fing[start..end].to_vec(),
            pos: self.pos[start..end].to_vec(),
        }
    }
}

/// Rasterizes note events onto `t` frames. Frame `i` spans
/// `[i/rate, (i+1)/rate)` and takes the label of the event containing its
/// center; uncovered frames are silence.
pub fn events_to_frames(events: &[NoteEvent], frame_rate: f64, t: usize) -> LabelSequence {
    let mut seq = LabelSequence::silence(t);
    for ev in events {
        let first = ((ev.onset_s * frame_rate - 0.5).ceil().max(0.0) as usize).saturating_sub(1);
        let classes = ev.classes();
        for i in first..t {
            let center = (i as f64 + 0.5) / frame_rate;
            if center >= ev.offset_s {
                break;
            }
            if center >= ev.onset_s {
                for (f, &c) in Feature::ALL.iter().zip(&classes) {
                    seq.stream_mut(*f)[i] = c;
                }
            }
        }
    }
    seq
}

/// Recovers note segments from frame labels: each maximal run of identical
/// non-silent class tuples becomes one event spanning its frames.
pub fn frames_to_events(seq: &LabelSequence, frame_rate: f64) -> Vec<NoteEvent> {
    let tuple = |i: usize| [seq.bow[i], seq.str[i], seq.fing[i], seq.pos[i]];
    let mut events = Vec::new();
    let mut i = 0;
    while i < seq.len() {
        if seq.is_silent(i) {
            i += 1;
            continue;
        }
        let start = i;
        while i < seq.len() && tuple(i) == tuple(start) {
            i += 1;
        }
        let [b, s, f, p] = tuple(start);
        events.push(NoteEvent {
            onset_s: start as f64 / frame_rate,
            offset_s: i as f64 / frame_rate,
            bow: [Bow::Up, Bow::Down][b],
            string: [ViolinString::E, ViolinString::A, ViolinString::D, ViolinString::G][s],
            finger: (f + 1) as u8,
            position: (p + 1) as u8,
        });
    }
    events
}

/// One-hot vector for a 1-based class.
pub fn one_hot(class_index: usize, n: usize) -> Result<Array1<f64>> {
    if class_index == 0 || class_index > n {
        return Err(Error::Range(format!("class {class_index} outside 1..={n}")));
    }
    let mut v = Array1::zeros(n);
    v[class_index - 1] = 1.0;
    Ok(v)
}

/// 1-based index of the largest entry; ties go to the lowest index.
pub fn decode_class(row: ArrayView1<f64>) -> usize {
    argmax(row) + 1
}

/// 0-based argmax with lowest-index tie breaking.
pub fn argmax(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Concatenates the four one-hot streams as bow | str | fing | pos (`T x 27`).
pub fn concat_bf(seq: &LabelSequence) -> Result<Array2<f64>> {
    concat_bf_without(seq, &[])
}

/// Like [`concat_bf`] but with the columns of `dropped` streams removed.
pub fn concat_bf_without(seq: &LabelSequence, dropped: &[Feature]) -> Result<Array2<f64>> {
    let t = seq.len();
    for f in Feature::ALL {
        if seq.stream(f).len() != t {
            return Err(Error::DimensionMismatch(format!(
                "stream {} has {} frames, expected {t}",
                f.name(),
                seq.stream(f).len()
            )));
        }
    }
    let kept: Vec<Feature> = Feature::ALL.into_iter().filter(|f| !dropped.contains(f)).collect();
    let width: usize = kept.iter().map(|f| f.n_classes()).sum();
    let mut m = Array2::zeros((t, width));
    let mut col = 0;
    for f in kept {
        for (i, &c) in seq.stream(f).iter().enumerate() {
            m[[i, col + c]] = 1.0;
        }
        col += f.n_classes();
    }
    Ok(m)
}

/// Column width of the bowing/fingering input once `dropped` streams are removed.
pub fn bf_width_without(dropped: &[Feature]) -> usize {
    Feature::ALL
        .into_iter()
        .filter(|f| !dropped.contains(f))
        .map(Feature::n_classes)
        .sum()
}

/// Fraction of frames whose argmax classes agree.
pub fn frame_accuracy(pred: ArrayView2<f64>, gt: ArrayView2<f64>) -> Result<f64> {
    if pred.dim() != gt.dim() {
        return Err(Error::DimensionMismatch(format!(
            "prediction {:?} vs ground truth {:?}",
            pred.dim(),
            gt.dim()
        )));
    }
    if pred.nrows() == 0 {
        return Ok(1.0);
    }
    let hits = pred
        .rows()
        .into_iter()
        .zip(gt.rows())
        .filter(|(p, g)| argmax(p.view()) == argmax(g.view()))
        .count();
    Ok(hits as f64 / pred.nrows() as f64)
}

/// Frame accuracy over 0-based class index streams.
pub fn class_accuracy(pred: &[usize], gt: &[usize]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {} frames", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Ok(1.0);
    }
    Ok(pred.iter().zip(gt).filter(|(a, b)| a == b).count() as f64 / pred.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn note(onset: f64, offset: f64) -> NoteEvent {
        NoteEvent {
            onset_s: onset,
            offset_s: offset,
            bow: Bow::Up,
            string: ViolinString::A,
            finger: 2,
            position: 1,
        }
    }

    #[test]
    fn parses_and_sorts_events() {
        let json = r#"{"piece_id": "p1", "events": [
            {"onset_s": 1.0, "offset_s": 1.5, "bow": "down", "string": "G", "finger": 1, "position": 3},
            {"onset_s": 0.0, "offset_s": 0.5, "bow": "up", "string": "A", "finger": 2, "position": 1}
        ]}"#;
        let a = parse_annotation(json).unwrap();
        assert_eq!(a.piece_id, "p1");
        assert_eq!(a.events.len(), 2);
        assert_eq!(a.events[0].onset_s, 0.0);
        assert_eq!(a.events[1].string, ViolinString::G);
        assert_eq!(parse_annotation(&annotation_to_json(&a)).unwrap(), a);
    }

    #[test]
    fn rejects_overlap() {
        let json = r#"{"piece_id": "p", "events": [
            {"onset_s": 0.0, "offset_s": 1.0, "bow": "up", "string": "A", "finger": 2, "position": 1},
            {"onset_s": 0.5, "offset_s": 1.5, "bow": "up", "string": "A", "finger": 2, "position": 1}
        ]}"#;
        assert!(matches!(parse_annotation(json), Err(Error::Overlap { .. })));
    }

    #[test]
    fn rejects_out_of_range_values() {
        let finger = r#"{"piece_id": "p", "events": [
            {"onset_s": 0.0, "offset_s": 1.0, "bow": "up", "string": "A", "finger": 7, "position": 1}]}"#;
        assert!(matches!(parse_annotation(finger), Err(Error::Range(_))));
        let position = r#"{"piece_id": "p", "events": [
            {"onset_s": 0.0, "offset_s": 1.0, "bow": "up", "string": "A", "finger": 1, "position": 13}]}"#;
        assert!(matches!(parse_annotation(position), Err(Error::Range(_))));
        let bow = r#"{"piece_id": "p", "events": [
            {"onset_s": 0.0, "offset_s": 1.0, "bow": "sideways", "string": "A", "finger": 1, "position": 1}]}"#;
        assert!(matches!(parse_annotation(bow), Err(Error::Schema(_))));
        assert!(matches!(parse_annotation("{}"), Err(Error::Schema(_))));
    }

    #[test]
    fn one_second_event_fills_every_frame() {
        let seq = events_to_frames(&[note(0.0, 1.0)], 30.0, 30);
        assert!(seq.bow.iter().all(|&c| c == 0));
        assert!(seq.str.iter().all(|&c| c == 1));
        assert!(seq.fing.iter().all(|&c| c == 1));
        assert!(seq.pos.iter().all(|&c| c == 0));
    }

    #[test]
    fn no_events_is_all_silence() {
        let seq = events_to_frames(&[], 30.0, 10);
        assert_eq!(seq, LabelSequence::silence(10));
        assert!(seq.bow.iter().all(|&c| c == 2));
        assert!(seq.str.iter().all(|&c| c == 4));
        assert!(seq.fing.iter().all(|&c| c == 5));
        assert!(seq.pos.iter().all(|&c| c == 12));
    }

    #[test]
    fn frame_center_rule_at_half_second() {
        let seq = events_to_frames(&[note(0.0, 0.5)], 30.0, 30);
        assert!((0..15).all(|i| !seq.is_silent(i)));
        assert!((15..30).all(|i| seq.is_silent(i)));
    }

    #[test]
    fn one_hot_and_decode() {
        assert_eq!(one_hot(2, 3).unwrap(), array![0.0, 1.0, 0.0]);
        assert_eq!(decode_class(array![0.0, 0.0, 1.0].view()), 3);
        assert!(matches!(one_hot(4, 3), Err(Error::Range(_))));
        assert!(matches!(one_hot(0, 3), Err(Error::Range(_))));
        for n in 1..6 {
            for c in 1..=n {
                assert_eq!(decode_class(one_hot(c, n).unwrap().view()), c);
            }
        }
    }

    #[test]
    fn concat_column_positions() {
        let silent = concat_bf(&LabelSequence::silence(1)).unwrap();
        let ones: Vec<usize> = silent.row(0).iter().enumerate().filter(|(_, &v)| v == 1.0).map(|(i, _)| i + 1).collect();
        assert_eq!(ones, vec![3, 8, 14, 27]);

        let labeled = concat_bf(&events_to_frames(&[note(0.0, 1.0)], 30.0, 1)).unwrap();
        let ones: Vec<usize> = labeled.row(0).iter().enumerate().filter(|(_, &v)| v == 1.0).map(|(i, _)| i + 1).collect();
        assert_eq!(ones, vec![1, 5, 10, 15]);

        assert_eq!(concat_bf(&LabelSequence::silence(0)).unwrap().dim(), (0, 27));
    }

    #[test]
    fn concat_rejects_ragged_streams() {
        let mut seq = LabelSequence::silence(3);
        seq.pos.pop();
        assert!(matches!(concat_bf(&seq), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn dropping_string_leaves_22_columns() {
        let seq = LabelSequence::silence(4);
        assert_eq!(concat_bf_without(&seq, &[Feature::Str]).unwrap().ncols(), 22);
        assert_eq!(bf_width_without(&[Feature::Str]), 22);
    }

    #[test]
    fn accuracy_counts_matching_frames() {
        let gt = array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]];
        assert_eq!(frame_accuracy(gt.view(), gt.view()).unwrap(), 1.0);
        let mut pred = gt.clone();
        pred.row_mut(2).assign(&array![0.0, 1.0]);
        assert_eq!(frame_accuracy(pred.view(), gt.view()).unwrap(), 0.75);
        assert!(frame_accuracy(pred.view(), gt.t()).is_err());
    }

    #[test]
    fn from_classes_checks_silence_coherence() {
        assert!(LabelSequence::from_classes(vec![2], vec![4], vec![5], vec![12]).is_ok());
        assert!(LabelSequence::from_classes(vec![2], vec![1], vec![5], vec![12]).is_err());
        assert!(LabelSequence::from_classes(vec![3], vec![1], vec![1], vec![1]).is_err());
    }

    fn arb_events() -> impl Strategy<Value = Vec<NoteEvent>> {
        prop::collection::vec((0.0f64..0.5, 0.07f64..1.0, 0usize..2, 0usize..4, 1u8..=5, 1u8..=12), 0..12).prop_map(
            |parts| {
                let mut t = 0.0;
                parts
                    .into_iter()
                    .map(|(gap, dur, b, s, f, p)| {
                        let onset = t + gap;
                        t = onset + dur;
                        NoteEvent {
                            onset_s: onset,
                            offset_s: t,
                            bow: [Bow::Up, Bow::Down][b],
                            string: [ViolinString::E, ViolinString::A, ViolinString::D, ViolinString::G][s],
                            finger: f,
                            position: p,
                        }
                    })
                    .collect()
            },
        )
    }

    proptest! {
        #[test]
        fn rasterized_rows_are_one_hot(events in arb_events(), t in 1usize..200) {
            let seq = events_to_frames(&events, 30.0, t);
            for f in Feature::ALL {
                let m = seq.one_hot(f);
                for row in m.rows() {
                    prop_assert_eq!(row.sum(), 1.0);
                }
            }
            let bf = concat_bf(&seq).unwrap();
            for row in bf.rows() {
                prop_assert_eq!(row.sum(), 4.0);
            }
            let masks: Vec<Vec<bool>> = Feature::ALL
                .iter()
                .map(|&f| seq.stream(f).iter().map(|&c| c == f.silence()).collect())
                .collect();
            prop_assert!(masks.iter().all(|m| m == &masks[0]));
        }

        #[test]
        fn segmenting_recovers_boundaries(events in arb_events()) {
            let rate = 30.0;
            // Distinct neighbours and at least two frames per note and per gap.
            let mut evs: Vec<NoteEvent> = Vec::new();
            for (k, mut e) in events.into_iter().enumerate() {
                e.onset_s = (e.onset_s * rate).round() / rate;
                e.offset_s = (e.offset_s * rate).round() / rate;
                if let Some(prev) = evs.last() {
                    e.onset_s = e.onset_s.max(prev.offset_s + 2.0 / rate);
                    e.offset_s = e.offset_s.max(e.onset_s);
                }
                if e.offset_s - e.onset_s < 2.0 / rate {
                    e.offset_s = e.onset_s + 2.0 / rate;
                }
                e.position = (k % 12 + 1) as u8;
                evs.push(e);
            }
            let t = evs.last().map(|e| (e.offset_s * rate).ceil() as usize + 2).unwrap_or(5);
            let seq = events_to_frames(&evs, rate, t);
            let back = frames_to_events(&seq, rate);
            prop_assert_eq!(back.len(), evs.len());
            for (a, b) in back.iter().zip(&evs) {
                prop_assert!((a.onset_s - b.onset_s).abs() <= 1.0 / rate + 1e-9);
                prop_assert!((a.offset_s - b.offset_s).abs() <= 1.0 / rate + 1e-9);
                prop_assert_eq!(a.classes(), b.classes());
            }
        }
    }
}
