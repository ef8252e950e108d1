//! Deterministic synthetic typing sessions.
//!
//! A kinematic toy: both hands rest on the home row of a QWERTY keyboard in
//! image-plane coordinates. For each scheduled key the assigned fingertip eases
//! from rest to the key center, dips in z while the key is down, and eases
//! back. Every point gets Gaussian jitter and both hands share a random-walk
//! drift standing in for head motion.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use libm::round;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::labels::{Edge, KeyClass, KeyEdge, NUM_CLASSES};
use crate::landmarks::{FrameLandmarks, Hand, HandLandmarks, Point3, POINTS_PER_HAND};
use crate::{Error, Result};

pub const DEFAULT_FPS: f64 = 30.0;
pub const DEFAULT_PRESS_MS: u64 = 100;
/// Idle time before the first and after the last key.
pub const LEAD_MS: u64 = 500;
/// A 19 mm key in image-plane units.
pub const KEY_PITCH: f64 = 0.05;

/// Short pangrams used as the built-in text corpus.
pub const PANGRAMS: [&str; 27] = [
    "the quick brown fox jumps over the lazy dog",
    "pack my box with five dozen liquor jugs",
    "how vexingly quick daft zebras jump",
    "the five boxing wizards jump quickly",
    "sphinx of black quartz judge my vow",
    "jackdaws love my big sphinx of quartz",
    "the jay pig fox zebra and my wolves quack",
    "quick zephyrs blow vexing daft jim",
    "two driven jocks help fax my big quiz",
    "five quacking zephyrs jolt my wax bed",
    "the quick onyx goblin jumps over the lazy dwarf",
    "waltz bad nymph for quick jigs vex",
    "glib jocks quiz nymph to vex dwarf",
    "bright vixens jump dozy fowl quack",
    "jived fox nymph grabs quick waltz",
    "how quickly daft jumping zebras vex",
    "quick fox jumps nightly above wizard",
    "a quick movement of the enemy will jeopardize six gunboats",
    "all questions asked by five watched experts amaze the judge",
    "crazy frederick bought many very exquisite opal jewels",
    "we promptly judged antique ivory buckles for the next prize",
    "sixty zippers were quickly picked from the woven jute bag",
    "jump by vow of quick lazy strength in oxford",
    "the wizard quickly jinxed the gnomes before they vaporized",
    "mr jock tv quiz phd bags few lynx",
    "big fjords vex quick waltz nymph",
    "public junk dwarves hug my quartz fox",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Finger {
    Thumb,
    Index,
    Middle,
    Ring,
    Pinky,
}

impl Finger {
    pub const ALL: [Finger; 5] = [Finger::Thumb, Finger::Index, Finger::Middle, Finger::Ring, Finger::Pinky];

    /// Landmark indices from the finger base to the tip.
    pub fn joints(self) -> [usize; 4] {
        let first = 1 + 4 * self as usize;
        [first, first + 1, first + 2, first + 3]
    }

    pub fn tip(self) -> usize {
        self.joints()[3]
    }
}

/// Standard touch-typing zones; space goes to the right thumb.
pub fn finger_for_key(key: KeyClass) -> Option<(Hand, Finger)> {
    use Finger::*;
    use Hand::*;
    if key == KeyClass::SPACE {
        return Some((Right, Thumb));
    }
    Some(match key.to_char()? {
        'q' | 'a' | 'z' => (Left, Pinky),
        'w' | 's' | 'x' => (Left, Ring),
        'e' | 'd' | 'c' => (Left, Middle),
        'r' | 'f' | 'v' | 't' | 'g' | 'b' => (Left, Index),
        'y' | 'h' | 'n' | 'u' | 'j' | 'm' => (Right, Index),
        'i' | 'k' => (Right, Middle),
        'o' | 'l' => (Right, Ring),
        'p' => (Right, Pinky),
        _ => return None,
    })
}

/// Key centers on the keyboard plane, indexed by class code.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyboardLayout {
    pub pitch: f64,
    centers: [[f64; 2]; NUM_CLASSES],
}

impl KeyboardLayout {
    pub fn qwerty() -> Self {
        let p = KEY_PITCH;
        let rows: [(&str, f64, f64); 3] = [
            ("qwertyuiop", 0.45, 0.25 + 0.5 * p),
            ("asdfghjkl", 0.50, 0.25 + 0.75 * p),
            ("zxcvbnm", 0.55, 0.25 + 1.25 * p),
        ];
        let mut centers = [[0.0; 2]; NUM_CLASSES];
        for (keys, y, x0) in rows {
            for (i, c) in keys.chars().enumerate() {
                let k = KeyClass::from_char(c).expect("layout letter");
                centers[k.code()] = [x0 + i as f64 * p, y];
            }
        }
        centers[KeyClass::SPACE.code()] = [0.52, 0.60];
        Self { pitch: p, centers }
    }

    pub fn center(&self, key: KeyClass) -> Option<[f64; 2]> {
        (!key.is_idle()).then(|| self.centers[key.code()])
    }
}

impl Default for KeyboardLayout {
    fn default() -> Self {
        Self::qwerty()
    }
}

/// What to type and how fast.
#[derive(Debug, Clone, PartialEq)]
pub struct TypingScript {
    pub text: String,
    pub wpm: f64,
    pub fps: f64,
    pub press_ms: u64,
    pub seed: u64,
    /// Type for this long, cycling the text, instead of typing it once.
    pub duration_ms: Option<u64>,
}

impl TypingScript {
    pub fn new(text: &str, wpm: f64, seed: u64) -> Self {
        Self {
            text: String::from(text),
            wpm,
            fps: DEFAULT_FPS,
            press_ms: DEFAULT_PRESS_MS,
            seed,
            duration_ms: None,
        }
    }

    /// Milliseconds between key downs at five characters per word.
    pub fn interval_ms(&self) -> f64 {
        60_000.0 / (self.wpm * 5.0)
    }

    fn keys(&self) -> Result<Vec<KeyClass>> {
        let keys = self
            .text
            .chars()
            .map(|c| match c {
                'a'..='z' | ' ' => Ok(KeyClass::from_char(c).expect("supported char")),
                other => Err(Error::UnsupportedCharacter(other)),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(match self.duration_ms {
            Some(ms) if !keys.is_empty() => {
                let count = expected_event_count(ms, self.wpm) as usize;
                keys.iter().cycle().take(count).copied().collect()
            }
            _ => keys,
        })
    }
}

/// Events that fit in `duration_ms` at `wpm`: `floor(duration * wpm * 5 / 60000)`.
pub fn expected_event_count(duration_ms: u64, wpm: f64) -> u64 {
    (duration_ms as f64 * wpm * 5.0 / 60_000.0 + 1e-9) as u64
}

/// Motion and noise parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandKinematicModel {
    /// z displacement of the fingertip while a key is held.
    pub dip_depth: f64,
    pub max_travel_ms: f64,
    /// Per-coordinate Gaussian jitter.
    pub noise_std: f64,
    /// Per-frame step of the shared x/y random walk.
    pub drift_std: f64,
}

impl Default for HandKinematicModel {
    fn default() -> Self {
        Self {
            dip_depth: 0.03,
            max_travel_ms: 150.0,
            noise_std: 0.0015,
            drift_std: 0.0005,
        }
    }
}

impl HandKinematicModel {
    pub fn noiseless() -> Self {
        Self {
            noise_std: 0.0,
            drift_std: 0.0,
            ..Self::default()
        }
    }
}

const JOINT_FRACTIONS: [f64; 4] = [0.0, 0.45, 0.75, 1.0];

fn wrist_rest(hand: Hand) -> Point3 {
    match hand {
        Hand::Left => [0.34, 0.76, 0.0],
        Hand::Right => [0.64, 0.76, 0.0],
    }
}

fn rest_tip(hand: Hand, finger: Finger) -> [f64; 2] {
    let layout = KeyboardLayout::qwerty();
    let key = |c| layout.center(KeyClass::from_char(c).expect("letter")).expect("letter key");
    match (hand, finger) {
        (Hand::Left, Finger::Thumb) => [0.45, 0.60],
        (Hand::Left, Finger::Index) => key('f'),
        (Hand::Left, Finger::Middle) => key('d'),
        (Hand::Left, Finger::Ring) => key('s'),
        (Hand::Left, Finger::Pinky) => key('a'),
        (Hand::Right, Finger::Thumb) => [0.55, 0.60],
        (Hand::Right, Finger::Index) => key('j'),
        (Hand::Right, Finger::Middle) => key('k'),
        (Hand::Right, Finger::Ring) => key('l'),
        (Hand::Right, Finger::Pinky) => [key('l')[0] + KEY_PITCH, 0.50],
    }
}

fn finger_base(hand: Hand, finger: Finger) -> Point3 {
    let w = wrist_rest(hand);
    if finger == Finger::Thumb {
        let side = if hand == Hand::Left { 1.0 } else { -1.0 };
        return [w[0] + side * 0.05, w[1] - 0.04, -0.01];
    }
    let tip = rest_tip(hand, finger);
    let reach = if finger == Finger::Pinky { 0.09 } else { 0.10 };
    [tip[0] + 0.25 * (w[0] - tip[0]), tip[1] + reach, -0.02]
}

fn place_finger(points: &mut [Point3; POINTS_PER_HAND], hand: Hand, finger: Finger, tip: [f64; 2], dip: f64) {
    let base = finger_base(hand, finger);
    for (&j, &f) in finger.joints().iter().zip(&JOINT_FRACTIONS) {
        points[j] = [
            base[0] + f * (tip[0] - base[0]),
            base[1] + f * (tip[1] - base[1]),
            base[2] * (1.0 - f) + dip * f,
        ];
    }
}

/// Both hands' resting landmarks.
pub fn rest_pose(hand: Hand) -> HandLandmarks {
    let mut points = [[0.0; 3]; POINTS_PER_HAND];
    points[0] = wrist_rest(hand);
    for finger in Finger::ALL {
        place_finger(&mut points, hand, finger, rest_tip(hand, finger), 0.0);
    }
    HandLandmarks::new(points)
}

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

/// One scheduled key press.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Press {
    pub key: KeyClass,
    pub down_ms: u64,
    pub up_ms: u64,
}

/// A generated session: landmarks, keylog and per-frame ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSession {
    pub frames: Vec<FrameLandmarks>,
    pub keylog: Vec<KeyEdge>,
    pub labels: Vec<KeyClass>,
    pub presses: Vec<Press>,
}

impl SynthSession {
    pub fn class_counts(&self) -> [u64; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for l in &self.labels {
            counts[l.code()] += 1;
        }
        counts
    }
}

/// Synthesizes landmarks and a keylog for `script`.
pub fn generate_session(
    script: &TypingScript,
    model: &HandKinematicModel,
    layout: &KeyboardLayout,
) -> Result<SynthSession> {
    if !(script.wpm > 0.0 && script.wpm.is_finite()) {
        return Err(Error::InvalidConfig(format!("wpm must be positive, got {}", script.wpm)));
    }
    if !(script.fps > 0.0 && script.fps.is_finite()) {
        return Err(Error::InvalidConfig(format!("fps must be positive, got {}", script.fps)));
    }
    let keys = script.keys()?;
    let interval = script.interval_ms();
    if interval <= script.press_ms as f64 {
        return Err(Error::InvalidConfig(format!(
            "key interval {interval} ms at {} wpm leaves no room for a {} ms press",
            script.wpm, script.press_ms
        )));
    }
    let travel = model.max_travel_ms.min((interval - script.press_ms as f64) / 2.0);

    let presses: Vec<Press> = keys
        .iter()
        .enumerate()
        .map(|(i, &key)| {
            let down_ms = LEAD_MS + round(i as f64 * interval) as u64;
            Press {
                key,
                down_ms,
                up_ms: down_ms + script.press_ms,
            }
        })
        .collect();
    let keylog = presses
        .iter()
        .flat_map(|p| {
            [
                KeyEdge {
                    timestamp_ms: p.down_ms,
                    key: p.key,
                    edge: Some(Edge::Down),
                },
                KeyEdge {
                    timestamp_ms: p.up_ms,
                    key: p.key,
                    edge: Some(Edge::Up),
                },
            ]
        })
        .collect();

    let end_ms = LEAD_MS + round(keys.len() as f64 * interval) as u64 + LEAD_MS;
    let mut rng = ChaCha8Rng::seed_from_u64(script.seed);
    let jitter = (model.noise_std > 0.0).then(|| Normal::new(0.0, model.noise_std).expect("finite std"));
    let step = (model.drift_std > 0.0).then(|| Normal::new(0.0, model.drift_std).expect("finite std"));
    let rest = [rest_pose(Hand::Left), rest_pose(Hand::Right)];
    let mut drift = [0.0f64; 2];
    let mut frames = Vec::new();
    let mut labels = Vec::new();
    // index of the first press that may still affect the current frame
    let mut first_live = 0;

    for i in 0u64.. {
        let ts = round(i as f64 * 1000.0 / script.fps) as u64;
        if ts > end_ms {
            break;
        }
        let t = ts as f64;
        let mut hands = rest;
        let mut label = KeyClass::IDLE;
        while first_live < presses.len() && presses[first_live].up_ms as f64 + travel < t {
            first_live += 1;
        }
        for p in &presses[first_live..] {
            let (down, up) = (p.down_ms as f64, p.up_ms as f64);
            if down - travel > t {
                break;
            }
            let (hand, finger) = finger_for_key(p.key).expect("typed keys have fingers");
            let home = rest_tip(hand, finger);
            let target = layout.center(p.key).expect("typed keys have centers");
            let (reach, dip) = if t < down {
                (if travel > 0.0 { smoothstep((t - (down - travel)) / travel) } else { 1.0 }, 0.0)
            } else if t <= up {
                label = p.key;
                (1.0, model.dip_depth)
            } else if travel > 0.0 {
                (1.0 - smoothstep((t - up) / travel), 0.0)
            } else {
                (0.0, 0.0)
            };
            let tip = [
                home[0] + reach * (target[0] - home[0]),
                home[1] + reach * (target[1] - home[1]),
            ];
            let h = hand as usize;
            place_finger(&mut hands[h].points, hand, finger, tip, dip);
        }

        if let Some(step) = &step {
            drift[0] += step.sample(&mut rng);
            drift[1] += step.sample(&mut rng);
        }
        for hand in hands.iter_mut() {
            for p in hand.points.iter_mut() {
                p[0] += drift[0];
                p[1] += drift[1];
                if let Some(j) = &jitter {
                    for v in p.iter_mut() {
                        *v += j.sample(&mut rng);
                    }
                }
            }
        }
        let [left, right] = hands;
        frames.push(FrameLandmarks::new(i, ts, Some(left), Some(right)));
        labels.push(label);
    }
    Ok(SynthSession {
        frames,
        keylog,
        labels,
        presses,
    })
}

/// One session of a generated corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSession {
    pub id: String,
    pub text: String,
    pub wpm: f64,
    pub seed: u64,
    pub session: SynthSession,
}

/// Corpus-wide generation settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusOptions {
    pub fps: f64,
    pub press_ms: u64,
    /// Cycle each text for this long instead of typing it once.
    pub duration_ms: Option<u64>,
    pub model: HandKinematicModel,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        Self {
            fps: DEFAULT_FPS,
            press_ms: DEFAULT_PRESS_MS,
            duration_ms: None,
            model: HandKinematicModel::default(),
        }
    }
}

/// Noise seed of one (text, wpm, seed) cell, so cells never share noise.
pub fn session_seed(text_index: usize, wpm: f64, seed: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let salt: u64 = rng.random();
    salt ^ (text_index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ wpm.to_bits().rotate_left(17)
}

pub fn session_id(text_index: usize, wpm: f64, seed: u64) -> String {
    format!("t{text_index:03}-w{wpm}-s{seed}")
}

/// One session per (text, wpm, seed) triple, in that nesting order.
pub fn generate_corpus(
    texts: &[String],
    wpms: &[f64],
    seeds: &[u64],
    options: &CorpusOptions,
    layout: &KeyboardLayout,
) -> Result<Vec<CorpusSession>> {
    if texts.is_empty() || wpms.is_empty() || seeds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut out = Vec::with_capacity(texts.len() * wpms.len() * seeds.len());
    for (ti, text) in texts.iter().enumerate() {
        for &wpm in wpms {
            for &seed in seeds {
                let script = TypingScript {
                    fps: options.fps,
                    press_ms: options.press_ms,
                    duration_ms: options.duration_ms,
                    ..TypingScript::new(text, wpm, session_seed(ti, wpm, seed))
                };
                out.push(CorpusSession {
                    id: session_id(ti, wpm, seed),
                    text: text.clone(),
                    wpm,
                    seed,
                    session: generate_session(&script, &options.model, layout)?,
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::align_ground_truth;

    fn k(c: char) -> KeyClass {
        KeyClass::from_char(c).unwrap()
    }

    #[test]
    fn home_row_anchors() {
        assert_eq!(finger_for_key(k('f')), Some((Hand::Left, Finger::Index)));
        assert_eq!(finger_for_key(k('j')), Some((Hand::Right, Finger::Index)));
        assert_eq!(finger_for_key(KeyClass::SPACE), Some((Hand::Right, Finger::Thumb)));
        assert_eq!(finger_for_key(KeyClass::IDLE), None);
        for key in KeyClass::all().skip(1) {
            assert!(finger_for_key(key).is_some(), "{key}");
        }
    }

    #[test]
    fn layout_centers_are_distinct() {
        let l = KeyboardLayout::qwerty();
        let keys: Vec<KeyClass> = KeyClass::all().skip(1).collect();
        for (i, a) in keys.iter().enumerate() {
            for b in &keys[i + 1..] {
                let (p, q) = (l.center(*a).unwrap(), l.center(*b).unwrap());
                assert!((p[0] - q[0]).abs() + (p[1] - q[1]).abs() > 1e-6, "{a} {b}");
            }
        }
    }

    #[test]
    fn pangrams_cover_every_letter() {
        for p in PANGRAMS {
            for c in 'a'..='z' {
                assert!(p.contains(c), "{p:?} lacks {c}");
            }
            assert!(p.chars().all(|c| c == ' ' || c.is_ascii_lowercase()));
        }
    }

    #[test]
    fn sixty_seconds_at_forty_wpm() {
        let script = TypingScript {
            duration_ms: Some(60_000),
            ..TypingScript::new("the quick brown fox", 40.0, 1)
        };
        let s = generate_session(&script, &HandKinematicModel::default(), &KeyboardLayout::qwerty()).unwrap();
        assert_eq!(s.presses.len(), 200);
        assert_eq!(s.keylog.len(), 400);
    }

    #[test]
    fn empty_text_is_rest_pose() {
        let script = TypingScript::new("", 40.0, 1);
        let s = generate_session(&script, &HandKinematicModel::noiseless(), &KeyboardLayout::qwerty()).unwrap();
        assert!(!s.frames.is_empty());
        for f in &s.frames {
            assert_eq!(f.left, Some(rest_pose(Hand::Left)));
            assert_eq!(f.right, Some(rest_pose(Hand::Right)));
        }
    }

    #[test]
    fn keylog_reproduces_labels() {
        let script = TypingScript::new(PANGRAMS[0], 50.0, 3);
        let s = generate_session(&script, &HandKinematicModel::default(), &KeyboardLayout::qwerty()).unwrap();
        let ts: Vec<u64> = s.frames.iter().map(|f| f.timestamp_ms).collect();
        assert_eq!(align_ground_truth(&s.keylog, &ts).unwrap(), s.labels);
    }

    #[test]
    fn rejects_bad_scripts() {
        let layout = KeyboardLayout::qwerty();
        let m = HandKinematicModel::default();
        assert_eq!(
            generate_session(&TypingScript::new("hi!", 40.0, 1), &m, &layout),
            Err(Error::UnsupportedCharacter('!'))
        );
        assert!(generate_session(&TypingScript::new("hi", 0.0, 1), &m, &layout).is_err());
        assert!(generate_session(&TypingScript::new("hi", 120.0, 1), &m, &layout).is_err());
    }

    #[test]
    fn corpus_is_a_cartesian_product() {
        let texts = [String::from("abc"), String::from("xyz")];
        let c = generate_corpus(&texts, &[20.0, 40.0], &[7], &CorpusOptions::default(), &KeyboardLayout::qwerty())
            .unwrap();
        assert_eq!(c.len(), 4);
        for s in &c {
            assert_eq!(s.session.class_counts().iter().sum::<u64>(), s.session.frames.len() as u64);
        }
    }
}
