//! PNG rendering: line plots of result CSVs and bird's-eye snapshots of traces.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use lhpf_core::geometry::Vec2;
use lhpf_core::scenario::ScenarioWorld;
use lhpf_core::sim::collision::OrientedBox;
use lhpf_core::sim::Trace;
use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult};

const W: u32 = 800;
const H: u32 = 500;
const MARGIN: f64 = 40.0;
const BG: Rgb<u8> = Rgb([255, 255, 255]);
const AXIS: Rgb<u8> = Rgb([60, 60, 60]);
const PALETTE: [Rgb<u8>; 6] = [Rgb([31, 119, 180]), Rgb([255, 127, 14]), Rgb([44, 160, 44]), Rgb([214, 39, 40]), Rgb([148, 103, 189]), Rgb([140, 86, 75])];

/// A scenario with one simulated episode, as written by `simulate --traces`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceFile {
    pub scenario: ScenarioWorld,
    pub trace: Trace,
}

struct Canvas {
    img: RgbImage,
}

impl Canvas {
    fn new(w: u32, h: u32) -> Self {
        Canvas { img: RgbImage::from_pixel(w, h, BG) }
    }

    fn dot(&mut self, x: f64, y: f64, r: i64, c: Rgb<u8>) {
        let (cx, cy) = (x.round() as i64, y.round() as i64);
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy <= r * r {
                    self.put(cx + dx, cy + dy, c);
                }
            }
        }
    }

    fn put(&mut self, x: i64, y: i64, c: Rgb<u8>) {
        if x >= 0 && y >= 0 && (x as u32) < self.img.width() && (y as u32) < self.img.height() {
            self.img.put_pixel(x as u32, y as u32, c);
        }
    }

    fn line(&mut self, a: (f64, f64), b: (f64, f64), c: Rgb<u8>) {
        let n = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
        for i in 0..=n {
            let t = i as f64 / n as f64;
            let (x, y) = (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1));
            self.put(x.round() as i64, y.round() as i64, c);
        }
    }

    fn polygon(&mut self, pts: &[(f64, f64)], c: Rgb<u8>) {
        for i in 0..pts.len() {
            self.line(pts[i], pts[(i + 1) % pts.len()], c);
        }
    }

    fn save(&self, path: &Path) -> CliResult<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        self.img.save(path).map_err(|e| CliError::io(path, std::io::Error::other(e)))
    }
}

/// Maps data coordinates onto the plot area.
struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    w: f64,
    h: f64,
}

impl Frame {
    fn fit<I: IntoIterator<Item = (f64, f64)>>(pts: I, w: u32, h: u32, equal: bool) -> Self {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for (x, y) in pts {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if x1 - x0 < 1e-9 {
            x1 = x0 + 1.0;
        }
        if y1 - y0 < 1e-9 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        let (w, h) = (w as f64, h as f64);
        if equal {
            let sx = (w - 2.0 * MARGIN) / (x1 - x0);
            let sy = (h - 2.0 * MARGIN) / (y1 - y0);
            let s = sx.min(sy);
            let (cx, cy) = (0.5 * (x0 + x1), 0.5 * (y0 + y1));
            let (hw, hh) = ((w - 2.0 * MARGIN) / s / 2.0, (h - 2.0 * MARGIN) / s / 2.0);
            (x0, x1, y0, y1) = (cx - hw, cx + hw, cy - hh, cy + hh);
        }
        Frame { x0, x1, y0, y1, w, h }
    }

    fn px(&self, x: f64, y: f64) -> (f64, f64) {
        let u = MARGIN + (x - self.x0) / (self.x1 - self.x0) * (self.w - 2.0 * MARGIN);
        let v = self.h - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (self.h - 2.0 * MARGIN);
        (u, v)
    }

    fn axes(&self, c: &mut Canvas) {
        let (l, b) = (MARGIN, self.h - MARGIN);
        c.line((l, b), (self.w - MARGIN, b), AXIS);
        c.line((l, b), (l, MARGIN), AXIS);
    }
}

fn read_csv(path: &Path) -> CliResult<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.map(|r| r.iter().map(String::from).collect())).collect::<Result<_, _>>().map_err(|e| csv_err(path, e))?;
    Ok((header, rows))
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    if let csv::ErrorKind::Io(io) = e.kind() {
        if io.kind() == std::io::ErrorKind::NotFound {
            return CliError::missing(path, std::io::Error::new(io.kind(), io.to_string()));
        }
    }
    CliError { code: 3, kind: "input", field: None, message: format!("{}: {e}", path.display()) }
}

fn column(header: &[String], name: &str, path: &Path) -> CliResult<usize> {
    header.iter().position(|h| h == name).ok_or_else(|| CliError {
        code: 3,
        kind: "input",
        field: Some(name.to_string()),
        message: format!("{} has no {name:?} column", path.display()),
    })
}

fn num(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// One series per metric column against the row index (sweep value order).
fn line_plot(series: &[Vec<Option<f64>>], out: &Path) -> CliResult<()> {
    let n = series.iter().map(Vec::len).max().unwrap_or(0);
    let pts = series.iter().flat_map(|s| s.iter().enumerate().filter_map(|(i, v)| v.map(|v| (i as f64, v))));
    let frame = Frame::fit(pts.chain([(0.0, 0.0), ((n.max(2) - 1) as f64, 0.0)]), W, H, false);
    let mut c = Canvas::new(W, H);
    frame.axes(&mut c);
    for (k, s) in series.iter().enumerate() {
        let col = PALETTE[k % PALETTE.len()];
        let mut prev: Option<(f64, f64)> = None;
        for (i, v) in s.iter().enumerate() {
            match v {
                Some(v) => {
                    let p = frame.px(i as f64, *v);
                    c.dot(p.0, p.1, 3, col);
                    if let Some(q) = prev {
                        c.line(q, p, col);
                    }
                    prev = Some(p);
                }
                None => prev = None,
            }
        }
    }
    c.save(out)
}

fn plot_sweep(header: &[String], rows: &[Vec<String>], path: &Path, out: &Path) -> CliResult<()> {
    let cols = ["composite_score", "consistency"];
    let mut series: Vec<Vec<Option<f64>>> = Vec::new();
    for name in cols {
        let i = column(header, name, path)?;
        series.push(rows.iter().map(|r| r.get(i).and_then(|s| num(s))).collect());
    }
    // composite is on a 0..100 scale; plot each series normalized to its own maximum
    for s in series.iter_mut() {
        let m = s.iter().flatten().fold(0.0f64, |a: f64, b| a.max(b.abs()));
        if m > 0.0 {
            s.iter_mut().flatten().for_each(|v| *v /= m);
        }
    }
    line_plot(&series, out)
}

fn plot_sim(header: &[String], rows: &[Vec<String>], path: &Path, out: &Path) -> CliResult<()> {
    let name = column(header, "scenario", path)?;
    let episodes: Vec<&Vec<String>> = rows.iter().filter(|r| r.get(name).map(String::as_str) != Some("summary")).collect();
    let mut series: Vec<Vec<Option<f64>>> = Vec::new();
    for m in ["composite_score", "progress_ratio", "comfort_ok"] {
        let i = column(header, m, path)?;
        let scale = if m == "composite_score" { 0.01 } else { 1.0 };
        series.push(episodes.iter().map(|r| r.get(i).and_then(|s| num(s)).map(|v| v * scale)).collect());
    }
    line_plot(&series, out)
}

fn box_px(frame: &Frame, b: &OrientedBox) -> Vec<(f64, f64)> {
    b.corners().iter().map(|p| frame.px(p.x, p.y)).collect()
}

/// Bird's-eye view at one trace step: lanes, obstacles, agents, ego, the executed path and the plan.
fn snapshot(tf: &TraceFile, step: usize, out: &Path) -> CliResult<()> {
    let w = &tf.scenario;
    let t = &tf.trace;
    let ego = t.ego[step];
    let radius = 60.0;
    let frame = Frame::fit([(ego.position.x - radius, ego.position.y - radius), (ego.position.x + radius, ego.position.y + radius)], H, H, true);
    let mut c = Canvas::new(H, H);
    for (_, lane) in w.lanes() {
        for side in [&lane.left_boundary, &lane.right_boundary] {
            for s in side.windows(2) {
                c.line(frame.px(s[0].x, s[0].y), frame.px(s[1].x, s[1].y), Rgb([180, 180, 180]));
            }
        }
        for s in lane.points.windows(2) {
            c.line(frame.px(s[0].x, s[0].y), frame.px(s[1].x, s[1].y), Rgb([225, 225, 225]));
        }
    }
    for o in &w.obstacles {
        c.polygon(&box_px(&frame, &OrientedBox::from_obstacle(o)), Rgb([0, 0, 0]));
    }
    for a in t.agents[step].iter().filter(|a| a.observed) {
        c.polygon(&box_px(&frame, &OrientedBox::from_agent(a)), PALETTE[0]);
    }
    for s in t.ego[..=step].windows(2) {
        c.line(frame.px(s[0].position.x, s[0].position.y), frame.px(s[1].position.x, s[1].position.y), PALETTE[2]);
    }
    if let Some(p) = t.plans.get(step) {
        let pts: Vec<Vec2> = p.world.iter().map(|q| Vec2::new(q[0], q[1])).collect();
        for s in pts.windows(2) {
            c.line(frame.px(s[0].x, s[0].y), frame.px(s[1].x, s[1].y), PALETTE[3]);
        }
    }
    c.polygon(&box_px(&frame, &OrientedBox::from_agent(&ego)), PALETTE[1]);
    c.save(out)
}

fn plot_trace(path: &Path, out: &Path, frames: &[usize]) -> CliResult<()> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::missing(path, e))?;
    let tf: TraceFile = serde_json::from_str(&text).map_err(|e| CliError { code: 3, kind: "input", field: None, message: format!("{}: {e}", path.display()) })?;
    let n = tf.trace.ego.len();
    let frames: Vec<usize> = if frames.is_empty() { vec![0, n / 2, n.saturating_sub(1)] } else { frames.to_vec() };
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    for &f in &frames {
        if f >= n {
            return Err(CliError::usage(format!("frame {f} is past the trace end ({} steps)", n - 1)));
        }
        snapshot(&tf, f, &out.join(format!("step_{f:03}.png")))?;
    }
    Ok(())
}

/// Dispatches on the input: `.json` traces give snapshots into `out` (a directory),
/// sweep or simulation CSVs give a single PNG at `out`.
pub fn plot(input: &Path, out: &Path, frames: &[usize]) -> CliResult<()> {
    if !input.exists() {
        return Err(CliError::missing(input, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file")));
    }
    if input.extension().is_some_and(|e| e == "json") {
        return plot_trace(input, out, frames);
    }
    let (header, rows) = read_csv(input)?;
    let out: PathBuf = if out.extension().is_some() { out.to_path_buf() } else { out.with_extension("png") };
    if header.first().map(String::as_str) == Some("axis") {
        plot_sweep(&header, &rows, input, &out)
    } else {
        plot_sim(&header, &rows, input, &out)
    }
}
