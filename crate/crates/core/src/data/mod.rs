//! Trajectory data: the on-disk CSV format, window slicing, and per-window
//! coordinate normalization. The synthetic scenario generator lives in
//! [`generate`].

mod generate;

pub use generate::{generate_scenario, ScenarioKind, ScenarioSpec, SPEED_BANDS};

use crate::graph::{AgentObservation, Category, FrameObservation};
use crate::{Error, Result};
use std::collections::BTreeMap;
use std::io::{BufWriter, Write};
use std::path::Path;

pub const TRAJECTORY_HEADER: &str = "frame,agent_id,category,x,y";

/// One row of a trajectory file.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub frame: u64,
    pub agent_id: u64,
    pub category: Category,
    pub x: f64,
    pub y: f64,
}

/// Loads and validates a trajectory CSV; rows come back sorted by
/// `(frame, agent_id)`.
pub fn load_trajectories(path: &Path) -> Result<Vec<TrajectoryRecord>> {
    let text = std::fs::read_to_string(path)?;
    parse_trajectories(&text)
}

fn parse_trajectories(text: &str) -> Result<Vec<TrajectoryRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end() == TRAJECTORY_HEADER => {}
        Some((_, header)) => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("header {header:?}, expected {TRAJECTORY_HEADER:?}"),
            })
        }
        None => return Err(Error::Parse { line: 1, msg: "empty file".into() }),
    }

    let mut records = Vec::new();
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim_end();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 5 comma-separated fields, got {}", fields.len()),
            });
        }
        let frame: u64 = fields[0]
            .trim()
            .parse()
            .map_err(|_| bad_field(line_no, "frame", fields[0]))?;
        let agent_id: u64 = fields[1]
            .trim()
            .parse()
            .map_err(|_| bad_field(line_no, "agent_id", fields[1]))?;
        let code: u8 = fields[2]
            .trim()
            .parse()
            .map_err(|_| bad_field(line_no, "category", fields[2]))?;
        let category = Category::from_code(code)
            .map_err(|_| bad_field(line_no, "category", fields[2]))?;
        let x: f64 = fields[3].trim().parse().map_err(|_| bad_field(line_no, "x", fields[3]))?;
        let y: f64 = fields[4].trim().parse().map_err(|_| bad_field(line_no, "y", fields[4]))?;
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::Parse { line: line_no, msg: "non-finite coordinate".into() });
        }
        records.push(TrajectoryRecord { frame, agent_id, category, x, y });
    }

    records.sort_by_key(|r| (r.frame, r.agent_id));
    for pair in records.windows(2) {
        if pair[0].frame == pair[1].frame && pair[0].agent_id == pair[1].agent_id {
            return Err(Error::Validation(format!(
                "agent {} appears twice in frame {}",
                pair[0].agent_id, pair[0].frame
            )));
        }
    }
    // An agent keeps one category for its whole life.
    let mut seen: BTreeMap<u64, Category> = BTreeMap::new();
    for r in &records {
        match seen.get(&r.agent_id) {
            Some(cat) if *cat != r.category => {
                return Err(Error::Validation(format!(
                    "agent {} changes category from {} to {}",
                    r.agent_id,
                    cat.name(),
                    r.category.name()
                )))
            }
            Some(_) => {}
            None => {
                seen.insert(r.agent_id, r.category);
            }
        }
    }
    Ok(records)
}

fn bad_field(line: usize, name: &str, value: &str) -> Error {
    Error::Parse { line, msg: format!("bad {name} value {value:?}") }
}

/// Writes records in the given order. `f64` formatting is shortest
/// round-trip, so save followed by load reproduces values exactly.
pub fn save_trajectories(path: &Path, records: &[TrajectoryRecord]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{TRAJECTORY_HEADER}")?;
    for r in records {
        writeln!(w, "{},{},{},{},{}", r.frame, r.agent_id, r.category.code(), r.x, r.y)?;
    }
    w.flush()?;
    Ok(())
}

/// Groups records by frame, preserving original frame numbers.
pub fn records_to_frames(records: &[TrajectoryRecord]) -> Result<Vec<FrameObservation>> {
    let mut by_frame: BTreeMap<u64, Vec<AgentObservation>> = BTreeMap::new();
    for r in records {
        by_frame.entry(r.frame).or_default().push(AgentObservation {
            agent_id: r.agent_id,
            category: r.category,
            x: r.x,
            y: r.y,
        });
    }
    by_frame
        .into_iter()
        .map(|(frame, agents)| FrameObservation::new(frame as usize, agents))
        .collect()
}

/// Similarity transform applied to raw coordinates: translate by the window
/// centroid, then scale uniformly.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormTransform {
    pub center_x: f64,
    pub center_y: f64,
    pub scale: f64,
}

impl NormTransform {
    pub fn identity() -> Self {
        NormTransform { center_x: 0.0, center_y: 0.0, scale: 1.0 }
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        ((x - self.center_x) * self.scale, (y - self.center_y) * self.scale)
    }

    pub fn invert(&self, x: f64, y: f64) -> (f64, f64) {
        (x / self.scale + self.center_x, y / self.scale + self.center_y)
    }
}

/// Centers a window on its centroid and scales the longest coordinate span
/// to length 2; positions end up within `[-2, 2]^2` (the centroid need not
/// sit mid-span). A degenerate window (single point) keeps scale 1.
pub fn normalize_frames(frames: &[FrameObservation]) -> Result<(Vec<FrameObservation>, NormTransform)> {
    let mut count = 0usize;
    let (mut sx, mut sy) = (0.0, 0.0);
    let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for f in frames {
        for a in f.agents() {
            count += 1;
            sx += a.x;
            sy += a.y;
            min_x = min_x.min(a.x);
            max_x = max_x.max(a.x);
            min_y = min_y.min(a.y);
            max_y = max_y.max(a.y);
        }
    }
    if count == 0 {
        return Err(Error::Usage("cannot normalize a window with no observations".into()));
    }
    let center_x = sx / count as f64;
    let center_y = sy / count as f64;
    let span = (max_x - min_x).max(max_y - min_y);
    let scale = if span > 0.0 { 2.0 / span } else { 1.0 };
    let transform = NormTransform { center_x, center_y, scale };

    let mut out = Vec::with_capacity(frames.len());
    for f in frames {
        let agents = f
            .agents()
            .iter()
            .map(|a| {
                let (x, y) = transform.apply(a.x, a.y);
                AgentObservation { x, y, ..*a }
            })
            .collect();
        out.push(FrameObservation::new(f.frame_index(), agents)?);
    }
    Ok((out, transform))
}

/// A fixed-length run of consecutive frames in model coordinates.
#[derive(Clone, Debug)]
pub struct SceneWindow {
    /// Original frame number of offset 0.
    pub start_frame: u64,
    /// Frames re-indexed to offsets `0..len`, coordinates normalized.
    pub frames: Vec<FrameObservation>,
    pub transform: NormTransform,
}

/// Cuts `records` into windows of `window_len` consecutive frames, starting
/// every `stride` frames. Returns the windows plus the number of candidate
/// starts dropped because a frame in their range was missing.
pub fn slice_windows(
    records: &[TrajectoryRecord],
    window_len: usize,
    stride: usize,
) -> Result<(Vec<SceneWindow>, usize)> {
    if window_len == 0 {
        return Err(Error::Usage("window length must be at least 1".into()));
    }
    if stride == 0 {
        return Err(Error::Usage("stride must be at least 1".into()));
    }
    let mut by_frame: BTreeMap<u64, Vec<AgentObservation>> = BTreeMap::new();
    for r in records {
        by_frame.entry(r.frame).or_default().push(AgentObservation {
            agent_id: r.agent_id,
            category: r.category,
            x: r.x,
            y: r.y,
        });
    }
    let Some((&first, _)) = by_frame.iter().next() else {
        return Ok((Vec::new(), 0));
    };
    let &last = by_frame.keys().next_back().expect("non-empty map");

    let mut windows = Vec::new();
    let mut skipped = 0usize;
    let mut start = first;
    while start + window_len as u64 - 1 <= last {
        let mut frames = Vec::with_capacity(window_len);
        let mut complete = true;
        for offset in 0..window_len {
            match by_frame.get(&(start + offset as u64)) {
                Some(agents) => frames.push(FrameObservation::new(offset, agents.clone())?),
                None => {
                    complete = false;
                    break;
                }
            }
        }
        if complete {
            let (frames, transform) = normalize_frames(&frames)?;
            windows.push(SceneWindow { start_frame: start, frames, transform });
        } else {
            skipped += 1;
        }
        start += stride as u64;
    }
    Ok((windows, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rec(frame: u64, agent_id: u64, cat: Category, x: f64, y: f64) -> TrajectoryRecord {
        TrajectoryRecord { frame, agent_id, category: cat, x, y }
    }

    #[test]
    fn header_only_file_yields_no_records() {
        assert_eq!(parse_trajectories("frame,agent_id,category,x,y\n").unwrap(), vec![]);
    }

    #[test]
    fn wrong_header_is_line_one_error() {
        let err = parse_trajectories("time,id,cat,x,y\n1,1,1,0,0\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_rows_carry_their_line_number() {
        let text = "frame,agent_id,category,x,y\n0,1,1,0.0,0.0\n1,1,9,0.0,0.0\n";
        match parse_trajectories(text).unwrap_err() {
            Error::Parse { line, msg } => {
                assert_eq!(line, 3);
                assert!(msg.contains("category"));
            }
            other => panic!("unexpected {other:?}"),
        }

        let text = "frame,agent_id,category,x,y\n0,1,1,zero,0.0\n";
        match parse_trajectories(text).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }

        let text = "frame,agent_id,category,x,y\n0,1,1,0.0\n";
        assert!(matches!(parse_trajectories(text), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn duplicate_frame_agent_pair_is_rejected() {
        let text = "frame,agent_id,category,x,y\n0,1,1,0.0,0.0\n0,1,1,1.0,1.0\n";
        assert!(matches!(parse_trajectories(text), Err(Error::Validation(_))));
    }

    #[test]
    fn category_change_is_rejected() {
        let text = "frame,agent_id,category,x,y\n0,1,1,0.0,0.0\n1,1,2,1.0,1.0\n";
        assert!(matches!(parse_trajectories(text), Err(Error::Validation(_))));
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let records: Vec<TrajectoryRecord> = (0..200)
            .map(|i| {
                rec(
                    i / 10,
                    i % 10,
                    Category::ALL[(i % 10 % 3) as usize],
                    rng.gen_range(-100.0..100.0),
                    rng.gen_range(-100.0..100.0),
                )
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.csv");
        save_trajectories(&path, &records).unwrap();
        let back = load_trajectories(&path).unwrap();
        assert_eq!(back.len(), records.len());
        let mut sorted = records.clone();
        sorted.sort_by_key(|r| (r.frame, r.agent_id));
        for (a, b) in back.iter().zip(&sorted) {
            assert_eq!(a.frame, b.frame);
            assert_eq!(a.agent_id, b.agent_id);
            assert_eq!(a.category, b.category);
            assert_eq!(a.x.to_bits(), b.x.to_bits());
            assert_eq!(a.y.to_bits(), b.y.to_bits());
        }
    }

    #[test]
    fn normalize_static_single_agent_to_origin() {
        let frames = vec![
            FrameObservation::new(
                0,
                vec![AgentObservation { agent_id: 1, category: Category::Pedestrian, x: 7.0, y: -3.0 }],
            )
            .unwrap(),
            FrameObservation::new(
                1,
                vec![AgentObservation { agent_id: 1, category: Category::Pedestrian, x: 7.0, y: -3.0 }],
            )
            .unwrap(),
        ];
        let (norm, t) = normalize_frames(&frames).unwrap();
        assert_eq!(t.scale, 1.0);
        for f in &norm {
            let a = &f.agents()[0];
            assert_eq!((a.x, a.y), (0.0, 0.0));
        }
    }

    #[test]
    fn normalize_two_point_window_hits_unit_extremes() {
        let frames = vec![FrameObservation::new(
            0,
            vec![
                AgentObservation { agent_id: 1, category: Category::Pedestrian, x: 0.0, y: 0.0 },
                AgentObservation { agent_id: 2, category: Category::Pedestrian, x: 0.0, y: 5.0 },
            ],
        )
        .unwrap()];
        let (norm, t) = normalize_frames(&frames).unwrap();
        assert_eq!(t.scale, 0.4);
        let a = &norm[0].agents()[0];
        let b = &norm[0].agents()[1];
        assert_eq!((a.x, a.y), (0.0, -1.0));
        assert_eq!((b.x, b.y), (0.0, 1.0));
    }

    #[test]
    fn normalization_round_trips_and_preserves_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let n = rng.gen_range(2..6);
            let agents: Vec<AgentObservation> = (0..n)
                .map(|id| AgentObservation {
                    agent_id: id,
                    category: Category::ALL[rng.gen_range(0..3)],
                    x: rng.gen_range(-200.0..200.0),
                    y: rng.gen_range(-200.0..200.0),
                })
                .collect();
            let frames = vec![FrameObservation::new(0, agents.clone()).unwrap()];
            let (norm, t) = normalize_frames(&frames).unwrap();

            // The wider coordinate span maps to exactly 2.
            let span = |f: fn(&AgentObservation) -> f64| {
                let lo = norm[0].agents().iter().map(f).fold(f64::INFINITY, f64::min);
                let hi = norm[0].agents().iter().map(f).fold(f64::NEG_INFINITY, f64::max);
                hi - lo
            };
            let wide = span(|a| a.x).max(span(|a| a.y));
            assert!((wide - 2.0).abs() <= 1e-9, "normalized span {wide}");

            for (orig, now) in agents.iter().zip(norm[0].agents()) {
                // Centering keeps every point within a span of the centroid.
                assert!(now.x.abs() <= 2.0 + 1e-12 && now.y.abs() <= 2.0 + 1e-12);
                // Inverse transform returns the raw position.
                let (rx, ry) = t.invert(now.x, now.y);
                assert!((rx - orig.x).abs() <= 1e-12 * orig.x.abs().max(1.0));
                assert!((ry - orig.y).abs() <= 1e-12 * orig.y.abs().max(1.0));
            }
            // Pairwise distances scale uniformly.
            for i in 0..agents.len() {
                for j in (i + 1)..agents.len() {
                    let d_raw = (agents[i].x - agents[j].x).hypot(agents[i].y - agents[j].y);
                    let (ni, nj) = (&norm[0].agents()[i], &norm[0].agents()[j]);
                    let d_norm = (ni.x - nj.x).hypot(ni.y - nj.y);
                    assert!((d_norm - d_raw * t.scale).abs() <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn window_starts_follow_stride() {
        let records: Vec<TrajectoryRecord> =
            (0..10).map(|f| rec(f, 1, Category::Pedestrian, f as f64, 0.0)).collect();
        let (windows, skipped) = slice_windows(&records, 8, 2).unwrap();
        assert_eq!(skipped, 0);
        let starts: Vec<u64> = windows.iter().map(|w| w.start_frame).collect();
        assert_eq!(starts, vec![0, 2]);
        for w in &windows {
            assert_eq!(w.frames.len(), 8);
            for (offset, f) in w.frames.iter().enumerate() {
                assert_eq!(f.frame_index(), offset);
            }
        }
    }

    #[test]
    fn stride_equal_to_length_gives_disjoint_windows() {
        let records: Vec<TrajectoryRecord> =
            (0..100).map(|f| rec(f, 1, Category::Pedestrian, f as f64, 0.0)).collect();
        let (windows, _) = slice_windows(&records, 13, 13).unwrap();
        assert_eq!(windows.len(), 7);
        for pair in windows.windows(2) {
            assert!(pair[0].start_frame + 13 <= pair[1].start_frame);
        }
    }

    #[test]
    fn gaps_skip_windows_and_are_counted() {
        let records: Vec<TrajectoryRecord> = (0..10)
            .filter(|f| *f != 5)
            .map(|f| rec(f, 1, Category::Pedestrian, f as f64, 0.0))
            .collect();
        let (windows, skipped) = slice_windows(&records, 4, 1).unwrap();
        // Starts 2..=5 would all cover the missing frame 5.
        let starts: Vec<u64> = windows.iter().map(|w| w.start_frame).collect();
        assert_eq!(starts, vec![0, 1, 6]);
        assert_eq!(skipped, 4);
    }

    #[test]
    fn unit_stride_windows_reconstruct_the_records() {
        let records: Vec<TrajectoryRecord> = (0..12u64)
            .flat_map(|f| {
                (0..3u64).map(move |id| {
                    rec(
                        f,
                        id,
                        Category::ALL[(id % 3) as usize],
                        (f * 3 + id) as f64 * 0.7,
                        (f + id) as f64 * -0.3,
                    )
                })
            })
            .collect();
        let (windows, skipped) = slice_windows(&records, 5, 1).unwrap();
        assert_eq!(skipped, 0);

        let mut rebuilt: BTreeMap<(u64, u64), (f64, f64)> = BTreeMap::new();
        for w in &windows {
            for f in &w.frames {
                for a in f.agents() {
                    let (x, y) = w.transform.invert(a.x, a.y);
                    rebuilt.insert((w.start_frame + f.frame_index() as u64, a.agent_id), (x, y));
                }
            }
        }
        assert_eq!(rebuilt.len(), records.len());
        for r in &records {
            let (x, y) = rebuilt[&(r.frame, r.agent_id)];
            assert!((x - r.x).abs() <= 1e-9);
            assert!((y - r.y).abs() <= 1e-9);
        }
    }

    #[test]
    fn zero_window_or_stride_is_a_usage_error() {
        assert!(matches!(slice_windows(&[], 0, 1), Err(Error::Usage(_))));
        assert!(matches!(slice_windows(&[], 5, 0), Err(Error::Usage(_))));
        // No records: no windows, no error.
        let (w, s) = slice_windows(&[], 5, 1).unwrap();
        assert!(w.is_empty());
        assert_eq!(s, 0);
    }
}
