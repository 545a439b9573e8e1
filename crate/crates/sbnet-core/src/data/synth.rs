//! Deterministic synthetic corpus: top-down road scenes with one described
//! target vehicle and a few distractors, plus templated descriptions. The
//! whole corpus (pixels and text) is a pure function of the seed.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::TensorBase;
use crate::text::{AttributeLexicon, Vocab};

use super::images::save_rgb_png;
use super::tracks::{save_tracks, Track};

/// Scenes are designed on a 96-unit square and scaled to the requested
/// image size, so geometry stays proportionate at any resolution.
const DESIGN: f64 = 96.0;
/// Largest vehicle footprint after rotation plus per-frame drift; one lane
/// must fit it.
const LANE_NEED: f64 = 28.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Motion {
    Straight,
    LeftTurn,
    RightTurn,
    Stop,
}

impl Motion {
    pub const ALL: [Motion; 4] = [
        Motion::Straight,
        Motion::LeftTurn,
        Motion::RightTurn,
        Motion::Stop,
    ];

    /// Three paraphrases, one per description template.
    fn phrases(self) -> [&'static str; 3] {
        match self {
            Motion::Straight => [
                "keeps straight",
                "is driving straight ahead",
                "continues straight down the road",
            ],
            Motion::LeftTurn => [
                "turns left",
                "is making a left turn",
                "takes a left at the intersection",
            ],
            Motion::RightTurn => [
                "turns right",
                "is making a right turn",
                "takes a right at the intersection",
            ],
            Motion::Stop => [
                "stops",
                "is stopped at the intersection",
                "comes to a stop",
            ],
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Motion::Straight => "straight",
            Motion::LeftTurn => "left-turn",
            Motion::RightTurn => "right-turn",
            Motion::Stop => "stop",
        }
    }

    /// Per-frame horizontal/vertical velocity and body rotation, in design
    /// units and radians.
    fn kinematics(self) -> (f64, f64, f64) {
        match self {
            Motion::Straight => (5.0, 0.0, 0.0),
            Motion::LeftTurn => (4.0, -1.0, -0.35),
            Motion::RightTurn => (4.0, 1.0, 0.35),
            Motion::Stop => (0.0, 0.0, 0.0),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub num_tracks: usize,
    pub frames_per_track: usize,
    pub image_size: usize,
    /// Canonical color names; must exist in the lexicon and the renderer.
    pub palette: Vec<String>,
    /// Canonical vehicle type names; must exist in the lexicon and renderer.
    pub shapes: Vec<String>,
    pub motions: Vec<Motion>,
    pub distractors: usize,
    /// Per-track probability that one description gets the wrong color.
    pub p_noise: f64,
    pub train_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let lex = AttributeLexicon::builtin();
        SynthConfig {
            seed: 42,
            num_tracks: 30,
            frames_per_track: 6,
            image_size: 96,
            palette: (0..lex.num_colors()).map(|i| lex.color_name(i).to_owned()).collect(),
            shapes: (0..lex.num_types()).map(|i| lex.type_name(i).to_owned()).collect(),
            motions: Motion::ALL.to_vec(),
            distractors: 2,
            p_noise: 0.1,
            train_fraction: 0.8,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self, lexicon: &AttributeLexicon) -> Result<()> {
        if self.num_tracks == 0 {
            return Err(Error::config("num_tracks must be at least 1"));
        }
        if self.frames_per_track == 0 {
            return Err(Error::config("frames_per_track must be at least 1"));
        }
        if self.image_size < 32 {
            return Err(Error::config("image_size below 32 leaves no room for a scene"));
        }
        if self.palette.is_empty() || self.shapes.is_empty() || self.motions.is_empty() {
            return Err(Error::config("palette, shapes, and motions must be non-empty"));
        }
        for c in &self.palette {
            if lexicon.color_id(c).is_none() {
                return Err(Error::config(format!("palette color '{c}' not in lexicon")));
            }
            if color_rgb(c).is_none() {
                return Err(Error::config(format!("no renderer for color '{c}'")));
            }
        }
        for s in &self.shapes {
            if lexicon.type_id(s).is_none() {
                return Err(Error::config(format!("shape '{s}' not in lexicon")));
            }
            if style_of(s).is_none() {
                return Err(Error::config(format!("no renderer for vehicle type '{s}'")));
            }
        }
        let capacity = self.palette.len() * self.shapes.len() * self.motions.len();
        if self.num_tracks > capacity {
            return Err(Error::config(format!(
                "{} tracks need unique color/type/motion triples but only {capacity} exist",
                self.num_tracks
            )));
        }
        if self.distractors > 0 && self.palette.len() * self.shapes.len() < 2 {
            return Err(Error::config(
                "distractors need at least two distinct color/type combinations",
            ));
        }
        let lanes = self.distractors + 1;
        if DESIGN / lanes as f64 / LANE_NEED < 1.0 {
            return Err(Error::config(format!(
                "{lanes} lanes do not fit; at most {} vehicles per scene",
                (DESIGN / LANE_NEED) as usize
            )));
        }
        if !(0.0..=1.0).contains(&self.p_noise) {
            return Err(Error::config("p_noise must lie in [0, 1]"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::config("train_fraction must lie strictly between 0 and 1"));
        }
        Ok(())
    }
}

/// Generation record for one track, kept for corpus audits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrackMeta {
    pub track_id: String,
    pub color: String,
    pub vtype: String,
    pub motion: Motion,
    /// Index of the description whose color was corrupted, if any.
    pub noised: Option<usize>,
    pub split: String,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub train: Vec<Track>,
    pub test: Vec<Track>,
    /// Relative frame path → rendered (3, H, W) image in [0, 1].
    pub frames: Vec<(String, TensorBase<f32>)>,
    /// query_id → three descriptions (copied from the test tracks).
    pub queries: BTreeMap<String, Vec<String>>,
    /// query_id → true track_id.
    pub truth: BTreeMap<String, String>,
    pub meta: Vec<TrackMeta>,
}

// ---------------------------------------------------------------------------
// Vehicle styling

#[derive(Clone, Copy)]
enum Shade {
    /// Fixed dark glass/trim color.
    Dark,
    /// Body color scaled down (truck beds, skirts).
    Dim,
}

/// A marking rectangle in body-fraction coordinates, u along the length
/// (+u = front), v across (−v = roof side); both in [−0.5, 0.5].
#[derive(Clone, Copy)]
struct Mark(f64, f64, f64, f64, Shade);

struct Style {
    w: f64,
    h: f64,
    marks: &'static [Mark],
}

static SEDAN: &[Mark] = &[
    Mark(0.08, 0.30, -0.45, -0.05, Shade::Dark),
    Mark(-0.30, -0.12, -0.45, -0.05, Shade::Dark),
];
static SUV: &[Mark] = &[
    Mark(-0.25, 0.30, -0.45, -0.10, Shade::Dark),
    Mark(-0.50, 0.50, 0.35, 0.50, Shade::Dim),
];
static VAN: &[Mark] = &[Mark(0.25, 0.45, -0.40, 0.00, Shade::Dark)];
static PICKUP: &[Mark] = &[
    Mark(-0.50, -0.15, -0.50, 0.50, Shade::Dim),
    Mark(0.05, 0.25, -0.45, -0.05, Shade::Dark),
];
static TRUCK: &[Mark] = &[
    Mark(0.18, 0.24, -0.50, 0.50, Shade::Dark),
    Mark(0.30, 0.45, -0.40, -0.05, Shade::Dark),
];
static BUS: &[Mark] = &[
    Mark(-0.40, -0.28, -0.40, -0.10, Shade::Dark),
    Mark(-0.15, -0.03, -0.40, -0.10, Shade::Dark),
    Mark(0.10, 0.22, -0.40, -0.10, Shade::Dark),
    Mark(0.30, 0.42, -0.40, -0.10, Shade::Dark),
];
static HATCHBACK: &[Mark] = &[Mark(-0.05, 0.35, -0.45, -0.05, Shade::Dark)];
static WAGON: &[Mark] = &[
    Mark(-0.50, 0.50, -0.50, -0.38, Shade::Dark),
    Mark(-0.42, -0.25, -0.38, 0.00, Shade::Dark),
];
static COUPE: &[Mark] = &[Mark(-0.10, 0.18, -0.45, -0.05, Shade::Dark)];
static CAR: &[Mark] = &[Mark(0.00, 0.30, -0.45, -0.05, Shade::Dark)];

static WHEELS: &[Mark] = &[
    Mark(-0.38, -0.22, 0.30, 0.50, Shade::Dark),
    Mark(0.22, 0.38, 0.30, 0.50, Shade::Dark),
];

fn style_of(vtype: &str) -> Option<Style> {
    let (w, h, marks): (f64, f64, &'static [Mark]) = match vtype {
        "sedan" => (18.0, 8.0, SEDAN),
        "suv" => (18.0, 10.0, SUV),
        "van" => (20.0, 11.0, VAN),
        "pickup" => (20.0, 9.0, PICKUP),
        "truck" => (26.0, 12.0, TRUCK),
        "bus" => (30.0, 11.0, BUS),
        "hatchback" => (14.0, 8.0, HATCHBACK),
        "wagon" => (22.0, 8.0, WAGON),
        "coupe" => (16.0, 7.0, COUPE),
        "car" => (13.0, 7.0, CAR),
        _ => return None,
    };
    Some(Style { w, h, marks })
}

fn color_rgb(color: &str) -> Option<[f32; 3]> {
    Some(match color {
        "black" => [0.10, 0.10, 0.11],
        "white" => [0.95, 0.95, 0.94],
        "gray" => [0.52, 0.52, 0.54],
        "silver" => [0.76, 0.76, 0.80],
        "red" => [0.80, 0.10, 0.10],
        "blue" => [0.12, 0.25, 0.80],
        "green" => [0.10, 0.60, 0.25],
        "yellow" => [0.92, 0.88, 0.15],
        "orange" => [0.95, 0.55, 0.10],
        "brown" => [0.55, 0.35, 0.18],
        "purple" => [0.55, 0.15, 0.65],
        "gold" => [0.83, 0.69, 0.21],
        _ => return None,
    })
}

const GLASS: [f32; 3] = [0.15, 0.16, 0.19];
const ROAD: [f32; 3] = [0.26, 0.26, 0.28];
const LANE_LINE: [f32; 3] = [0.58, 0.58, 0.58];
const BRAKE: [f32; 3] = [1.00, 0.20, 0.18];

// ---------------------------------------------------------------------------
// Scene assembly

/// One vehicle's fixed appearance and trajectory within a scene.
struct Placement {
    color: [f32; 3],
    style: Style,
    /// Body center at frame 0, design units.
    cx0: f64,
    cy0: f64,
    dx: f64,
    dy: f64,
    theta: f64,
    brake: bool,
}

impl Placement {
    fn center_at(&self, frame: usize) -> (f64, f64) {
        (self.cx0 + self.dx * frame as f64, self.cy0 + self.dy * frame as f64)
    }

    /// Axis-aligned bounds of the rotated body at `frame`, design units.
    fn aabb(&self, frame: usize) -> (f64, f64, f64, f64) {
        let (cx, cy) = self.center_at(frame);
        let (ew, eh) = rotated_extent(&self.style, self.theta);
        (cx - ew / 2.0, cy - eh / 2.0, cx + ew / 2.0, cy + eh / 2.0)
    }
}

fn rotated_extent(style: &Style, theta: f64) -> (f64, f64) {
    let (sin, cos) = (theta.sin().abs(), theta.cos().abs());
    (style.w * cos + style.h * sin, style.w * sin + style.h * cos)
}

/// Draws `p` onto `img` at `frame`; `scale` maps design units to pixels.
fn draw_vehicle(img: &mut TensorBase<f32>, p: &Placement, frame: usize, scale: f64) {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let (cx, cy) = p.center_at(frame);
    let (x0, y0, x1, y1) = p.aabb(frame);
    let px0 = ((x0 * scale).floor().max(0.0)) as usize;
    let py0 = ((y0 * scale).floor().max(0.0)) as usize;
    let px1 = ((x1 * scale).ceil() as usize).min(w);
    let py1 = ((y1 * scale).ceil() as usize).min(h);
    let (sin, cos) = (p.theta.sin(), p.theta.cos());
    let (hw, hh) = (p.style.w / 2.0, p.style.h / 2.0);
    for py in py0..py1 {
        for px in px0..px1 {
            // Pixel center in design units, then into the body frame.
            let gx = (px as f64 + 0.5) / scale - cx;
            let gy = (py as f64 + 0.5) / scale - cy;
            let u = gx * cos + gy * sin;
            let v = -gx * sin + gy * cos;
            if u.abs() > hw || v.abs() > hh {
                continue;
            }
            let (uf, vf) = (u / p.style.w, v / p.style.h);
            let mut rgb = p.color;
            for &Mark(u0, u1, v0, v1, shade) in p.style.marks.iter().chain(WHEELS) {
                if uf >= u0 && uf <= u1 && vf >= v0 && vf <= v1 {
                    rgb = match shade {
                        Shade::Dark => GLASS,
                        Shade::Dim => [rgb[0] * 0.55, rgb[1] * 0.55, rgb[2] * 0.55],
                    };
                }
            }
            if p.brake && uf <= -0.44 {
                rgb = BRAKE;
            }
            for ch in 0..3 {
                img.set3(ch, py, px, rgb[ch]);
            }
        }
    }
}

fn draw_background(img: &mut TensorBase<f32>, lanes: usize, scale: f64) {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    for ch in 0..3 {
        for y in 0..h {
            for x in 0..w {
                img.set3(ch, y, x, ROAD[ch]);
            }
        }
    }
    // Dashed separators between lanes.
    for k in 1..lanes {
        let y = ((k as f64 * DESIGN / lanes as f64) * scale).round() as usize;
        if y >= h {
            continue;
        }
        let mut x = 0usize;
        let dash = (4.0 * scale).max(1.0) as usize;
        while x < w {
            for xx in x..(x + dash).min(w) {
                for ch in 0..3 {
                    img.set3(ch, y, xx, LANE_LINE[ch]);
                }
            }
            x += dash * 2;
        }
    }
}

/// Integer pixel box [x, y, w, h] of the target body at `frame`.
fn target_box(p: &Placement, frame: usize, scale: f64, size: usize) -> [i64; 4] {
    let (x0, y0, x1, y1) = p.aabb(frame);
    let lim = size as i64;
    let bx0 = ((x0 * scale).floor() as i64).clamp(0, lim - 1);
    let by0 = ((y0 * scale).floor() as i64).clamp(0, lim - 1);
    let bx1 = ((x1 * scale).ceil() as i64).clamp(bx0 + 1, lim);
    let by1 = ((y1 * scale).ceil() as i64).clamp(by0 + 1, lim);
    [bx0, by0, bx1 - bx0, by1 - by0]
}

/// Places a vehicle inside its lane so every frame stays in bounds. Velocity
/// is trimmed if the configured frame count would otherwise march the body
/// off the scene.
fn place_vehicle(
    color: [f32; 3],
    style: Style,
    motion: Motion,
    lane: usize,
    lanes: usize,
    frames: usize,
    rng: &mut ChaCha8Rng,
) -> Placement {
    const MARGIN: f64 = 2.0;
    let (mut dx, mut dy, theta) = motion.kinematics();
    let steps = frames.saturating_sub(1) as f64;
    let (ew, eh) = rotated_extent(&style, theta);

    let x_lo = MARGIN + ew / 2.0;
    let x_hi = DESIGN - MARGIN - ew / 2.0;
    if steps > 0.0 && dx.abs() * steps > x_hi - x_lo {
        dx = dx.signum() * (x_hi - x_lo) / steps;
    }
    // Travel to the right: start in the left part of the free range.
    let (cx_lo, cx_hi) = if dx >= 0.0 {
        (x_lo, x_hi - dx * steps)
    } else {
        (x_lo - dx * steps, x_hi)
    };
    let cx0 = if cx_hi > cx_lo { rng.gen_range(cx_lo..cx_hi) } else { (x_lo + x_hi) / 2.0 };

    let band = DESIGN / lanes as f64;
    let y_lo = lane as f64 * band + eh / 2.0 + 1.0;
    let y_hi = (lane + 1) as f64 * band - eh / 2.0 - 1.0;
    if steps > 0.0 && dy.abs() * steps > (y_hi - y_lo).max(0.0) {
        dy = dy.signum() * (y_hi - y_lo).max(0.0) / steps;
    }
    let (cy_lo, cy_hi) = if dy >= 0.0 {
        (y_lo, y_hi - dy * steps)
    } else {
        (y_lo - dy * steps, y_hi)
    };
    let cy0 = if cy_hi > cy_lo { rng.gen_range(cy_lo..cy_hi) } else { (y_lo + y_hi) / 2.0 };

    Placement {
        color,
        style,
        cx0,
        cy0,
        dx,
        dy,
        theta,
        brake: matches!(motion, Motion::Stop),
    }
}

fn describe(color: &str, vtype: &str, motion: Motion) -> Vec<String> {
    let [p1, p2, p3] = motion.phrases();
    vec![
        format!("A {color} {vtype} {p1}."),
        format!("The {color} {vtype} {p2}."),
        format!("One {color} {vtype} {p3}."),
    ]
}

/// Everything about one generated track before the train/test split.
struct Generated {
    track_id: String,
    descriptions: Vec<String>,
    frames: Vec<(String, TensorBase<f32>)>,
    boxes: Vec<[i64; 4]>,
    meta: TrackMeta,
}

fn generate_track(
    idx: usize,
    triple: (usize, usize, Motion),
    config: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> Generated {
    let (color_i, type_i, motion) = triple;
    let color = config.palette[color_i].clone();
    let vtype = config.shapes[type_i].clone();
    let track_id = format!("t{idx:04}");

    let mut descriptions = describe(&color, &vtype, motion);
    let mut noised = None;
    if rng.gen_bool(config.p_noise) && config.palette.len() > 1 {
        let di = rng.gen_range(0..3usize);
        let mut wrong = rng.gen_range(0..config.palette.len());
        while wrong == color_i {
            wrong = rng.gen_range(0..config.palette.len());
        }
        let wrong_color = &config.palette[wrong];
        let [p1, p2, p3] = motion.phrases();
        let phrase = [p1, p2, p3][di];
        let lead = ["A", "The", "One"][di];
        descriptions[di] = format!("{lead} {wrong_color} {vtype} {phrase}.");
        noised = Some(di);
    }

    // Lane order and distractor looks.
    let lanes = config.distractors + 1;
    let mut lane_order: Vec<usize> = (0..lanes).collect();
    lane_order.shuffle(rng);

    let mut placements = Vec::with_capacity(lanes);
    let target = place_vehicle(
        color_rgb(&color).expect("validated palette"),
        style_of(&vtype).expect("validated shape"),
        motion,
        lane_order[0],
        lanes,
        config.frames_per_track,
        rng,
    );
    for d in 0..config.distractors {
        let (dc, dt, dm) = loop {
            let dc = rng.gen_range(0..config.palette.len());
            let dt = rng.gen_range(0..config.shapes.len());
            let dm = config.motions[rng.gen_range(0..config.motions.len())];
            // Distractors must look different from the target, not just move
            // differently.
            if dc != color_i || dt != type_i {
                break (dc, dt, dm);
            }
        };
        placements.push(place_vehicle(
            color_rgb(&config.palette[dc]).expect("validated palette"),
            style_of(&config.shapes[dt]).expect("validated shape"),
            dm,
            lane_order[1 + d],
            lanes,
            config.frames_per_track,
            rng,
        ));
    }

    let scale = config.image_size as f64 / DESIGN;
    let mut frames = Vec::with_capacity(config.frames_per_track);
    let mut boxes = Vec::with_capacity(config.frames_per_track);
    for f in 0..config.frames_per_track {
        let mut img = TensorBase::<f32>::zeros(&[3, config.image_size, config.image_size]);
        draw_background(&mut img, lanes, scale);
        for p in &placements {
            draw_vehicle(&mut img, p, f, scale);
        }
        draw_vehicle(&mut img, &target, f, scale);
        boxes.push(target_box(&target, f, scale, config.image_size));
        frames.push((format!("frames/{track_id}_f{f:02}.png"), img));
    }

    Generated {
        track_id: track_id.clone(),
        descriptions,
        frames,
        boxes,
        meta: TrackMeta {
            track_id,
            color,
            vtype,
            motion,
            noised,
            split: String::new(),
        },
    }
}

/// Builds the full corpus for `config`. Every track gets a unique
/// (color, type, motion) triple so descriptions identify tracks; queries are
/// the held-out tracks' own descriptions.
pub fn generate_corpus(config: &SynthConfig, lexicon: &AttributeLexicon) -> Result<SynthCorpus> {
    config.validate(lexicon)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut triples = Vec::new();
    for c in 0..config.palette.len() {
        for t in 0..config.shapes.len() {
            for &m in &config.motions {
                triples.push((c, t, m));
            }
        }
    }
    triples.shuffle(&mut rng);
    triples.truncate(config.num_tracks);

    let mut generated: Vec<Generated> = triples
        .iter()
        .enumerate()
        .map(|(i, &triple)| generate_track(i, triple, config, &mut rng))
        .collect();

    let mut order: Vec<usize> = (0..generated.len()).collect();
    order.shuffle(&mut rng);
    let n_train = ((generated.len() as f64 * config.train_fraction).round() as usize)
        .clamp(1, generated.len().max(2) - 1)
        .min(generated.len());
    let train_set: std::collections::HashSet<usize> = order[..n_train].iter().copied().collect();

    let mut corpus = SynthCorpus {
        train: Vec::new(),
        test: Vec::new(),
        frames: Vec::new(),
        queries: BTreeMap::new(),
        truth: BTreeMap::new(),
        meta: Vec::new(),
    };
    for (i, g) in generated.iter_mut().enumerate() {
        let track = Track {
            track_id: g.track_id.clone(),
            frames: g.frames.iter().map(|(p, _)| p.clone()).collect(),
            boxes: g.boxes.clone(),
            nl: g.descriptions.clone(),
        };
        corpus.frames.append(&mut g.frames);
        if train_set.contains(&i) {
            g.meta.split = "train".into();
            corpus.train.push(track);
        } else {
            g.meta.split = "test".into();
            let qid = format!("q{:04}", corpus.test.len());
            corpus.queries.insert(qid.clone(), track.nl.clone());
            corpus.truth.insert(qid, track.track_id.clone());
            corpus.test.push(track);
        }
        corpus.meta.push(g.meta.clone());
    }
    Ok(corpus)
}

#[derive(Serialize)]
struct QueryOut<'a> {
    nl: &'a [String],
}

#[derive(Serialize)]
struct GenMeta<'a> {
    config: &'a SynthConfig,
    tracks: &'a [TrackMeta],
}

/// Writes the corpus directory: frame PNGs, track/query/truth JSON, the
/// lexicon, and a vocabulary built from every description.
pub fn write_corpus(
    corpus: &SynthCorpus,
    config: &SynthConfig,
    lexicon: &AttributeLexicon,
    out_dir: &Path,
) -> Result<()> {
    fs::create_dir_all(out_dir.join("frames"))?;
    for (rel, img) in &corpus.frames {
        save_rgb_png(&out_dir.join(rel), img)?;
    }
    save_tracks(&corpus.train, &out_dir.join("train_tracks.json"))?;
    save_tracks(&corpus.test, &out_dir.join("test_tracks.json"))?;

    let queries: BTreeMap<&str, QueryOut> = corpus
        .queries
        .iter()
        .map(|(k, v)| (k.as_str(), QueryOut { nl: v }))
        .collect();
    fs::write(
        out_dir.join("queries.json"),
        serde_json::to_string_pretty(&queries)? + "\n",
    )?;
    fs::write(
        out_dir.join("truth.json"),
        serde_json::to_string_pretty(&corpus.truth)? + "\n",
    )?;

    lexicon.save(&out_dir.join("lexicon.txt"))?;
    let all_text: Vec<&str> = corpus
        .train
        .iter()
        .chain(&corpus.test)
        .flat_map(|t| t.nl.iter().map(String::as_str))
        .collect();
    Vocab::from_corpus(all_text).save(&out_dir.join("vocab.txt"))?;

    fs::write(
        out_dir.join("gen_meta.json"),
        serde_json::to_string_pretty(&GenMeta {
            config,
            tracks: &corpus.meta,
        })? + "\n",
    )?;
    Ok(())
}
