//! Synthetic multi-angle gesture recordings.
//!
//! Coordinates are body-centred: `x` to the participant's right, `y`
//! towards the 0° radar, `z` up, origin at the chest. Each gesture class is
//! a parametric hand trajectory over normalised time `t ∈ [0, 1]`, rendered
//! together with a static Gaussian torso blob. The view of the radar at
//! angle `a` is the canonical cloud rotated by `-a` about `z`, after
//! angle-dependent shadowing.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::io::{sample_dir, write_sample};
use super::{angle_slot, rotate_view, DatasetManifest, MotionPointCloud, MultiAngleSample, Point};
use super::{SampleEntry, Split, ANGLES};
use crate::error::{Error, Result};
use crate::rng::mix_seed;

type Vec3 = [f64; 3];

/// Hand positions at normalised time `t`, for an arm of length `arm`.
type Trajectory = fn(t: f64, arm: f64) -> Vec<Vec3>;

const SHOULDER_R: Vec3 = [0.2, 0.0, 0.25];
const TORSO_SIGMA: Vec3 = [0.12, 0.06, 0.2];
const TORSO_HALF_WIDTH: f64 = 0.2;
const HAND_SIZE: f64 = 0.03;

fn ease(t: f64) -> f64 {
    0.5 - 0.5 * (PI * t).cos()
}

fn bump(t: f64) -> f64 {
    (PI * t).sin()
}

fn lerp(a: Vec3, b: Vec3, s: f64) -> Vec3 {
    [
        a[0] + (b[0] - a[0]) * s,
        a[1] + (b[1] - a[1]) * s,
        a[2] + (b[2] - a[2]) * s,
    ]
}

fn mirror(p: Vec3) -> Vec3 {
    [-p[0], p[1], p[2]]
}

fn raise_side(t: f64, arm: f64) -> Vec3 {
    let th = bump(t) * FRAC_PI_2;
    [
        SHOULDER_R[0] + arm * th.sin(),
        0.05,
        SHOULDER_R[2] - arm * th.cos(),
    ]
}

fn side_to_front(t: f64, arm: f64) -> Vec3 {
    let th = ease(t) * FRAC_PI_2;
    [
        SHOULDER_R[0] + arm * th.cos(),
        arm * th.sin(),
        SHOULDER_R[2],
    ]
}

fn push_out(t: f64, arm: f64) -> Vec3 {
    [0.2, 0.15 + 0.7 * arm * bump(t), 0.1]
}

fn pull_in(t: f64, arm: f64) -> Vec3 {
    [0.2, 0.15 + 0.75 * arm * (1.0 - ease(t)), 0.15]
}

fn frontal_circle(t: f64, radius: f64, centre: Vec3, clockwise: bool) -> Vec3 {
    let th = if clockwise { -TAU * t } else { TAU * t };
    [
        centre[0] + radius * th.cos(),
        centre[1],
        centre[2] + radius * th.sin(),
    ]
}

fn sagittal_circle(t: f64, radius: f64, centre: Vec3, forward: bool) -> Vec3 {
    let th = if forward { TAU * t } else { -TAU * t };
    [
        centre[0],
        centre[1] + radius * th.cos(),
        centre[2] + radius * th.sin(),
    ]
}

fn throw_arc(t: f64, arm: f64) -> Vec3 {
    let s = t * t;
    lerp([0.25, -0.3, 0.4], [0.25, arm, 0.3], s)
}

/// Gesture primitives in generation order. The first entries are the most
/// mutually distinct so that small class counts stay separable.
const PRIMITIVES: [(&str, Trajectory); 21] = [
    ("swipe_right", |t, arm| {
        vec![[-0.3 + 0.7 * ease(t), 0.6 * arm, 0.1]]
    }),
    ("push", |t, arm| vec![push_out(t, arm)]),
    ("lateral_raise", |t, arm| vec![raise_side(t, arm)]),
    ("right_arm_circle", |t, arm| {
        vec![frontal_circle(t, 0.35 * arm, [0.35, 0.3, 0.15], true)]
    }),
    ("two_hand_push", |t, arm| {
        let p = push_out(t, arm);
        vec![p, mirror(p)]
    }),
    ("lift", |t, arm| {
        vec![lerp([0.15, 0.5 * arm, -0.3], [0.15, 0.5 * arm, 0.45], ease(t))]
    }),
    ("swipe_left", |t, arm| {
        vec![[0.4 - 0.7 * ease(t), 0.6 * arm, 0.1]]
    }),
    ("two_hand_lateral_raise", |t, arm| {
        let p = raise_side(t, arm);
        vec![p, mirror(p)]
    }),
    ("pull", |t, arm| vec![pull_in(t, arm)]),
    ("left_arm_circle", |t, arm| {
        vec![mirror(frontal_circle(t, 0.35 * arm, [0.35, 0.3, 0.15], true))]
    }),
    ("circle_clockwise", |t, arm| {
        vec![frontal_circle(t, 0.2 * arm, [0.1, 0.55 * arm, 0.2], true)]
    }),
    ("circle_counter_clockwise", |t, arm| {
        vec![frontal_circle(t, 0.2 * arm, [0.1, 0.55 * arm, 0.2], false)]
    }),
    ("push_down", |t, arm| {
        vec![[0.2, 0.45 * arm, 0.2 - 0.6 * bump(t)]]
    }),
    ("lateral_to_front", |t, arm| vec![side_to_front(t, arm)]),
    ("two_hand_lateral_to_front", |t, arm| {
        let p = side_to_front(t, arm);
        vec![p, mirror(p)]
    }),
    ("two_hand_inward_circles", |t, arm| {
        let p = sagittal_circle(t, 0.25 * arm, [0.35, 0.3, 0.1], false);
        vec![p, mirror(p)]
    }),
    ("two_hand_outward_circles", |t, arm| {
        let p = sagittal_circle(t, 0.25 * arm, [0.35, 0.3, 0.1], true);
        vec![p, mirror(p)]
    }),
    ("two_hand_pull", |t, arm| {
        let p = pull_in(t, arm);
        vec![p, mirror(p)]
    }),
    ("throw", |t, arm| vec![throw_arc(t, arm)]),
    ("two_hand_throw", |t, arm| {
        let p = throw_arc(t, arm);
        vec![[0.15, p[1], p[2] + 0.1], [-0.15, p[1], p[2] + 0.1]]
    }),
    ("arms_swing", |t, arm| {
        let swing = 0.6 * arm * (TAU * t).sin();
        vec![
            [0.3, swing, -0.25 + 0.1 * swing.abs()],
            [-0.3, -swing, -0.25 + 0.1 * swing.abs()],
        ]
    }),
];

/// Names of the available gesture primitives, in class-id order.
pub fn gesture_names() -> Vec<&'static str> {
    PRIMITIVES.iter().map(|(n, _)| *n).collect()
}

/// Optional explicit subject split. When absent the last subject is the
/// test subject, the second to last is validation, the rest train.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub train: Vec<u32>,
    #[serde(default)]
    pub val: Vec<u32>,
    pub test: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub classes: usize,
    pub subjects: u32,
    pub reps: u32,
    pub angles: Vec<u16>,
    pub seed: u64,
    /// Raw frames per recording (3 s at 10 frames/s by default).
    pub frames: u32,
    pub torso_points_per_frame: usize,
    pub hand_points_per_frame: usize,
    /// Measurement noise on every coordinate, meters.
    pub position_noise: f64,
    /// Relative spread of per-subject body size and tempo.
    pub subject_variation: f64,
    /// Drop probability for points facing away from, or hidden from, a radar.
    pub p_shadow: f64,
    /// If set, hand points are only rendered for these angles.
    pub hand_visible_angles: Option<Vec<u16>>,
    pub split: Option<SplitConfig>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            classes: 5,
            subjects: 6,
            reps: 10,
            angles: ANGLES.to_vec(),
            seed: 7,
            frames: 30,
            torso_points_per_frame: 6,
            hand_points_per_frame: 4,
            position_noise: 0.01,
            subject_variation: 0.1,
            p_shadow: 0.5,
            hand_visible_angles: None,
            split: None,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config("generator needs at least 2 classes".into()));
        }
        if self.classes > PRIMITIVES.len() {
            return Err(Error::Config(format!(
                "{} classes requested but only {} gesture primitives exist",
                self.classes,
                PRIMITIVES.len()
            )));
        }
        if self.angles.is_empty() {
            return Err(Error::Config("angle set is empty".into()));
        }
        let mut seen = Vec::new();
        for a in &self.angles {
            if angle_slot(*a).is_none() {
                return Err(Error::Config(format!(
                    "angle {a} is not a multiple of 45 in [0, 315]"
                )));
            }
            if seen.contains(a) {
                return Err(Error::Config(format!("angle {a} listed twice")));
            }
            seen.push(*a);
        }
        if self.subjects == 0 || self.reps == 0 || self.frames == 0 {
            return Err(Error::Config(
                "subjects, reps and frames must be positive".into(),
            ));
        }
        if self.torso_points_per_frame + self.hand_points_per_frame == 0 {
            return Err(Error::Config("no points per frame".into()));
        }
        if !(0.0..=1.0).contains(&self.p_shadow) {
            return Err(Error::Config("p_shadow must lie in [0, 1]".into()));
        }
        if self.position_noise < 0.0 || self.subject_variation < 0.0 {
            return Err(Error::Config("noise levels must be non-negative".into()));
        }
        Ok(())
    }

    fn split(&self) -> Split {
        if let Some(s) = &self.split {
            return Split {
                train: s.train.clone(),
                val: s.val.clone(),
                test: s.test.clone(),
            };
        }
        let ids: Vec<u32> = (0..self.subjects).collect();
        match ids.len() {
            1 => Split {
                train: ids,
                ..Split::default()
            },
            2 => Split {
                train: vec![0],
                val: vec![],
                test: vec![1],
            },
            n => Split {
                train: ids[..n - 2].to_vec(),
                val: vec![ids[n - 2]],
                test: vec![ids[n - 1]],
            },
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct SubjectBody {
    scale: f64,
    arm: f64,
    tempo: f64,
    offset: Vec3,
}

fn subject_body(cfg: &GeneratorConfig, subject: u32) -> SubjectBody {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, 0x5b, subject as u64]));
    let v = cfg.subject_variation;
    let spread = |rng: &mut ChaCha8Rng| 1.0 + v * rng.gen_range(-1.0..=1.0);
    let scale = spread(&mut rng);
    let arm = 0.6 * spread(&mut rng);
    let tempo = spread(&mut rng);
    let offset = [
        0.05 * v * rng.gen_range(-1.0..=1.0),
        0.05 * v * rng.gen_range(-1.0..=1.0),
        0.1 * v * rng.gen_range(-1.0..=1.0),
    ];
    SubjectBody {
        scale,
        arm,
        tempo,
        offset,
    }
}

/// A canonical point with its outward surface normal (horizontal) and
/// whether it belongs to a hand.
#[derive(Debug, Clone, Copy)]
struct Surfel {
    point: Point,
    normal: [f64; 2],
    hand: bool,
}

fn horizontal_unit(x: f64, y: f64) -> [f64; 2] {
    let n = x.hypot(y);
    if n < 1e-12 {
        [0.0, 1.0]
    } else {
        [x / n, y / n]
    }
}

fn render_surfels(
    cfg: &GeneratorConfig,
    class: usize,
    body: SubjectBody,
    rng: &mut ChaCha8Rng,
) -> Vec<Surfel> {
    let trajectory = PRIMITIVES[class].1;
    let noise = Normal::new(0.0, cfg.position_noise.max(0.0)).expect("valid sigma");
    let hand_spread = Normal::new(0.0, HAND_SIZE).expect("valid sigma");
    let std_normal = Normal::new(0.0, 1.0).expect("valid sigma");
    let amp = 1.0 + 0.05 * rng.gen_range(-1.0..=1.0);
    let phase = 0.03 * rng.gen_range(-1.0..=1.0);
    let mut out = Vec::new();
    for f in 0..cfg.frames {
        let u = if cfg.frames == 1 {
            0.0
        } else {
            f as f64 / (cfg.frames - 1) as f64
        };
        let t = (u.powf(body.tempo) + phase).clamp(0.0, 1.0);
        for _ in 0..cfg.torso_points_per_frame {
            let local = [
                TORSO_SIGMA[0] * body.scale * std_normal.sample(rng),
                TORSO_SIGMA[1] * body.scale * std_normal.sample(rng),
                TORSO_SIGMA[2] * body.scale * std_normal.sample(rng),
            ];
            out.push(Surfel {
                point: Point::new(
                    local[0] + body.offset[0] + noise.sample(rng),
                    local[1] + body.offset[1] + noise.sample(rng),
                    local[2] + body.offset[2] + noise.sample(rng),
                    f,
                ),
                normal: horizontal_unit(local[0], local[1]),
                hand: false,
            });
        }
        let hands = trajectory(t, body.arm * amp);
        for h in 0..cfg.hand_points_per_frame {
            let hand = hands[h % hands.len()];
            let centre = [
                hand[0] * body.scale + body.offset[0],
                hand[1] * body.scale + body.offset[1],
                hand[2] * body.scale + body.offset[2],
            ];
            let p = [
                centre[0] + hand_spread.sample(rng) + noise.sample(rng),
                centre[1] + hand_spread.sample(rng) + noise.sample(rng),
                centre[2] + hand_spread.sample(rng) + noise.sample(rng),
            ];
            out.push(Surfel {
                point: Point::new(p[0], p[1], p[2], f),
                normal: horizontal_unit(centre[0], centre[1]),
                hand: true,
            });
        }
    }
    out
}

/// The unshadowed canonical cloud of one repetition (angle id 0).
pub fn render_canonical(
    cfg: &GeneratorConfig,
    subject: u32,
    class: usize,
    rep: u32,
) -> Result<MotionPointCloud> {
    cfg.validate()?;
    let body = subject_body(cfg, subject);
    let mut rng = sample_rng(cfg, subject, class, rep);
    let surfels = render_surfels(cfg, class, body, &mut rng);
    MotionPointCloud::new(surfels.iter().map(|s| s.point).collect(), 0, cfg.frames)
}

fn sample_rng(cfg: &GeneratorConfig, subject: u32, class: usize, rep: u32) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, subject as u64, class as u64, rep as u64]))
}

fn is_hidden(s: &Surfel, radar_dir: [f64; 2]) -> bool {
    let facing = s.normal[0] * radar_dir[0] + s.normal[1] * radar_dir[1];
    if facing < 0.0 {
        return true;
    }
    // Behind the torso as seen from the radar.
    let depth = s.point.x * radar_dir[0] + s.point.y * radar_dir[1];
    let lateral = (s.point.x * radar_dir[1] - s.point.y * radar_dir[0]).abs();
    s.hand && depth < -TORSO_SIGMA[1] && lateral < TORSO_HALF_WIDTH && s.point.z.abs() < 0.4
}

fn view_of(
    cfg: &GeneratorConfig,
    surfels: &[Surfel],
    angle: u16,
    rng: &mut ChaCha8Rng,
) -> Result<MotionPointCloud> {
    let rad = (angle as f64).to_radians();
    let radar_dir = [-rad.sin(), rad.cos()];
    let hands_on = cfg
        .hand_visible_angles
        .as_ref()
        .is_none_or(|v| v.contains(&angle));
    let mut kept = Vec::with_capacity(surfels.len());
    for s in surfels {
        if s.hand && !hands_on {
            continue;
        }
        let hidden = is_hidden(s, radar_dir);
        // Draw for every point so the stream does not depend on geometry.
        let roll: f64 = rng.gen();
        if hidden && roll < cfg.p_shadow {
            continue;
        }
        kept.push(s.point);
    }
    if kept.is_empty() {
        return Err(Error::Data(format!("view at {angle}° lost every point")));
    }
    let canonical = MotionPointCloud {
        points: kept,
        angle_id: angle,
        frame_count: cfg.frames,
    };
    let mut view = rotate_view(&canonical, -(angle as f64));
    view.angle_id = angle;
    Ok(view)
}

/// The view of a canonical cloud from the radar at `angle`, with shadowing.
pub fn render_view(
    cfg: &GeneratorConfig,
    subject: u32,
    class: usize,
    rep: u32,
    angle: u16,
) -> Result<MotionPointCloud> {
    let sample = render_sample(cfg, subject, class, rep)?;
    sample
        .clouds
        .get(&angle)
        .cloned()
        .ok_or_else(|| Error::Config(format!("angle {angle} not in generator angle set")))
}

/// Renders every configured angle of one repetition. Deterministic in
/// `(seed, subject, class, rep)` alone.
pub fn render_sample(
    cfg: &GeneratorConfig,
    subject: u32,
    class: usize,
    rep: u32,
) -> Result<MultiAngleSample> {
    cfg.validate()?;
    let body = subject_body(cfg, subject);
    let mut rng = sample_rng(cfg, subject, class, rep);
    let surfels = render_surfels(cfg, class, body, &mut rng);
    let mut clouds = std::collections::BTreeMap::new();
    for &angle in &cfg.angles {
        let mut view_rng = ChaCha8Rng::seed_from_u64(mix_seed(&[
            cfg.seed,
            subject as u64,
            class as u64,
            rep as u64,
            0xa9 + angle as u64,
        ]));
        clouds.insert(angle, view_of(cfg, &surfels, angle, &mut view_rng)?);
    }
    Ok(MultiAngleSample {
        clouds,
        label: class,
        subject_id: subject,
    })
}

/// Renders the whole dataset into memory, in manifest order.
pub(crate) fn render_all(cfg: &GeneratorConfig) -> Result<Vec<(u32, MultiAngleSample)>> {
    cfg.validate()?;
    let mut keys = Vec::new();
    for subject in 0..cfg.subjects {
        for class in 0..cfg.classes {
            for rep in 0..cfg.reps {
                keys.push((subject, class, rep));
            }
        }
    }
    keys.par_iter()
        .map(|&(s, c, r)| render_sample(cfg, s, c, r).map(|x| (r, x)))
        .collect()
}

/// Samples of a dataset partitioned by subject.
#[derive(Debug, Clone, Default)]
pub struct SampleSplit {
    pub train: Vec<MultiAngleSample>,
    pub val: Vec<MultiAngleSample>,
    pub test: Vec<MultiAngleSample>,
}

/// Renders a synthetic dataset in memory, partitioned by the configured
/// split. Equivalent to generating to disk and loading it back.
pub fn generate_split(cfg: &GeneratorConfig) -> Result<SampleSplit> {
    let split = cfg.split();
    split.validate()?;
    let mut out = SampleSplit::default();
    for (_, sample) in render_all(cfg)? {
        let s = sample.subject_id;
        if split.train.contains(&s) {
            out.train.push(sample);
        } else if split.val.contains(&s) {
            out.val.push(sample);
        } else if split.test.contains(&s) {
            out.test.push(sample);
        }
    }
    Ok(out)
}

/// Writes a synthetic dataset under `root` and returns its manifest.
pub fn generate_synthetic_dataset(cfg: &GeneratorConfig, root: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    let split = cfg.split();
    split.validate()?;
    for s in split.train.iter().chain(&split.val).chain(&split.test) {
        if *s >= cfg.subjects {
            return Err(Error::Config(format!("split names unknown subject {s}")));
        }
    }
    let samples = render_all(cfg)?;
    let mut entries = Vec::with_capacity(samples.len());
    for (rep, sample) in &samples {
        let files = write_sample(root, sample, *rep)?;
        entries.push(SampleEntry {
            subject: sample.subject_id,
            class: sample.label,
            rep: *rep,
            dir: sample_dir(sample.subject_id, sample.label, *rep),
            files,
        });
    }
    let mut angles = cfg.angles.clone();
    angles.sort_unstable();
    let manifest = DatasetManifest::new(
        PRIMITIVES[..cfg.classes]
            .iter()
            .map(|(n, _)| n.to_string())
            .collect(),
        (0..cfg.subjects).collect(),
        angles,
        entries,
        split,
    );
    manifest.save(root)?;
    Ok(manifest)
}
