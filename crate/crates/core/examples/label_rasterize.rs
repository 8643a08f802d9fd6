//! Turns a note annotation into frame-level bowing/fingering labels and back.
//!
//! `cargo run --release --example label_rasterize`

use violin_motion::labels::{concat_bf, events_to_frames, frames_to_events, parse_annotation, Feature};

const ANNOTATION: &str = r#"{
  "piece_id": "scale",
  "events": [
    {"onset_s": 0.00, "offset_s": 0.40, "bow": "down", "string": "G", "finger": 1, "position": 1},
    {"onset_s": 0.40, "offset_s": 0.80, "bow": "up",   "string": "G", "finger": 2, "position": 1},
    {"onset_s": 0.90, "offset_s": 1.30, "bow": "down", "string": "D", "finger": 3, "position": 3}
  ]
}"#;

fn main() -> violin_motion::Result<()> {
    let annotation = parse_annotation(ANNOTATION)?;
    let frames = events_to_frames(&annotation.events, 30.0, 45);
    println!("frame  bow str fing pos");
    for t in (0..frames.len()).step_by(4) {
        println!(
            "{t:>5} {:>4} {:>3} {:>4} {:>3}",
            frames.bow[t], frames.str[t], frames.fing[t], frames.pos[t]
        );
    }
    let bf = concat_bf(&frames)?;
    println!("concatenated one-hot matrix: {} x {}", bf.nrows(), bf.ncols());
    for f in Feature::ALL {
        println!("  {:<4} {} classes, silence index {}", f.name(), f.n_classes(), f.silence());
    }
    let events = frames_to_events(&frames, 30.0);
    println!("decoded back into {} notes:", events.len());
    for e in events {
        println!(
            "  {:.3}-{:.3} s  {:?} bow, {:?} string, finger {}, position {}",
            e.onset_s, e.offset_s, e.bow, e.string, e.finger, e.position
        );
    }
    Ok(())
}
