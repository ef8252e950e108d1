//! Two-hand landmark representation and stage-one normalization.
//!
//! A frame carries up to two hands of 21 keypoints each. Normalization shifts
//! every present point by a reference point (the midpoint of the two wrists)
//! and divides by a hand scale (wrist to middle-finger root). Both quantities
//! are averaged over a trailing window to suppress head-motion jitter.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use libm::{cos, sin, sqrt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

pub const POINTS_PER_HAND: usize = 21;
/// Flattened length of one frame: 2 hands x 21 points x 3 coordinates.
pub const FRAME_LEN: usize = 2 * POINTS_PER_HAND * 3;
pub const WRIST: usize = 0;
/// Root (MCP joint) of the middle finger.
pub const MIDDLE_FINGER_ROOT: usize = 9;

pub const DEFAULT_JITTER_WINDOW: usize = 15;
pub const DEFAULT_SCALE_EPSILON: f64 = 1e-6;

pub type Point3 = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hand {
    Left = 0,
    Right = 1,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandLandmarks {
    pub points: [Point3; POINTS_PER_HAND],
}

impl HandLandmarks {
    /// The all-zero sentinel used for an absent hand.
    pub const ZERO: HandLandmarks = HandLandmarks {
        points: [[0.0; 3]; POINTS_PER_HAND],
    };

    pub fn new(points: [Point3; POINTS_PER_HAND]) -> Self {
        Self { points }
    }

    pub fn wrist(&self) -> Point3 {
        self.points[WRIST]
    }

    /// Euclidean wrist to middle-finger-root distance over all three axes.
    pub fn span(&self) -> f64 {
        let [a, b] = [self.points[WRIST], self.points[MIDDLE_FINGER_ROOT]];
        let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
        sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
    }

    fn map(&self, f: impl Fn(Point3) -> Point3) -> Self {
        let mut out = *self;
        for p in out.points.iter_mut() {
            *p = f(*p);
        }
        out
    }
}

/// One frame of landmarks. A hand that was not detected is `None`; it
/// serializes as the all-zero sentinel with its presence flag cleared.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameLandmarks {
    pub frame_index: u64,
    pub timestamp_ms: u64,
    pub left: Option<HandLandmarks>,
    pub right: Option<HandLandmarks>,
}

impl FrameLandmarks {
    pub fn new(
        frame_index: u64,
        timestamp_ms: u64,
        left: Option<HandLandmarks>,
        right: Option<HandLandmarks>,
    ) -> Self {
        Self {
            frame_index,
            timestamp_ms,
            left,
            right,
        }
    }

    /// A frame with neither hand present.
    pub fn empty(frame_index: u64, timestamp_ms: u64) -> Self {
        Self::new(frame_index, timestamp_ms, None, None)
    }

    pub fn hand(&self, hand: Hand) -> Option<&HandLandmarks> {
        match hand {
            Hand::Left => self.left.as_ref(),
            Hand::Right => self.right.as_ref(),
        }
    }

    pub fn left_present(&self) -> bool {
        self.left.is_some()
    }

    pub fn right_present(&self) -> bool {
        self.right.is_some()
    }

    pub fn any_present(&self) -> bool {
        self.left.is_some() || self.right.is_some()
    }

    fn present_hands(&self) -> impl Iterator<Item = &HandLandmarks> {
        self.left.iter().chain(self.right.iter())
    }

    /// Left block first, then right, each 21x3 row-major. Absent hands are zeros.
    pub fn to_flat(&self) -> [f64; FRAME_LEN] {
        let mut out = [0.0; FRAME_LEN];
        for (block, hand) in out
            .chunks_exact_mut(FRAME_LEN / 2)
            .zip([&self.left, &self.right])
        {
            if let Some(h) = hand {
                for (dst, p) in block.chunks_exact_mut(3).zip(h.points.iter()) {
                    dst.copy_from_slice(p);
                }
            }
        }
        out
    }

    /// Inverse of [`to_flat`](Self::to_flat); presence comes from the flags.
    pub fn from_flat(
        frame_index: u64,
        timestamp_ms: u64,
        left_present: bool,
        right_present: bool,
        flat: &[f64; FRAME_LEN],
    ) -> Self {
        let block = |offset: usize| {
            let mut points = [[0.0; 3]; POINTS_PER_HAND];
            for (i, p) in points.iter_mut().enumerate() {
                p.copy_from_slice(&flat[offset + 3 * i..offset + 3 * i + 3]);
            }
            HandLandmarks { points }
        };
        Self {
            frame_index,
            timestamp_ms,
            left: left_present.then(|| block(0)),
            right: right_present.then(|| block(FRAME_LEN / 2)),
        }
    }

    fn map_hands(&self, f: impl Fn(Point3) -> Point3) -> Self {
        Self {
            left: self.left.map(|h| h.map(&f)),
            right: self.right.map(|h| h.map(&f)),
            ..*self
        }
    }
}

/// Midpoint of the two wrists, or the single present wrist.
pub fn reference_point(frame: &FrameLandmarks) -> Result<Point3> {
    match (&frame.left, &frame.right) {
        (Some(l), Some(r)) => {
            let (a, b) = (l.wrist(), r.wrist());
            Ok([
                (a[0] + b[0]) / 2.0,
                (a[1] + b[1]) / 2.0,
                (a[2] + b[2]) / 2.0,
            ])
        }
        (Some(h), None) | (None, Some(h)) => Ok(h.wrist()),
        (None, None) => Err(Error::NoHandsPresent),
    }
}

/// Mean wrist to middle-finger-root distance over the present hands.
pub fn scale_factor(frame: &FrameLandmarks, epsilon: f64) -> Result<f64> {
    let (sum, count) = frame
        .present_hands()
        .fold((0.0, 0usize), |(s, c), h| (s + h.span(), c + 1));
    if count == 0 {
        return Err(Error::NoHandsPresent);
    }
    let scale = sum / count as f64;
    if scale < epsilon {
        return Err(Error::DegenerateScale(scale));
    }
    Ok(scale)
}

/// `(p - reference) / scale` for every point of every present hand.
pub fn normalize(
    frame: &FrameLandmarks,
    reference: Point3,
    scale: f64,
    epsilon: f64,
) -> Result<FrameLandmarks> {
    if !(scale >= epsilon) {
        return Err(Error::DegenerateScale(scale));
    }
    Ok(frame.map_hands(|p| {
        [
            (p[0] - reference[0]) / scale,
            (p[1] - reference[1]) / scale,
            (p[2] - reference[2]) / scale,
        ]
    }))
}

/// Trailing window of per-frame (reference point, scale) pairs.
#[derive(Debug, Clone)]
pub struct NormalizationState {
    window: usize,
    epsilon: f64,
    history: VecDeque<(Point3, f64)>,
}

impl Default for NormalizationState {
    fn default() -> Self {
        Self::new(DEFAULT_JITTER_WINDOW, DEFAULT_SCALE_EPSILON)
    }
}

impl NormalizationState {
    pub fn new(window: usize, epsilon: f64) -> Self {
        assert!(window >= 1, "jitter window must hold at least one frame");
        Self {
            window,
            epsilon,
            history: VecDeque::with_capacity(window),
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    /// Records this frame's reference and scale, then returns the means over
    /// the stored window. A frame that fails either computation leaves the
    /// buffer untouched.
    pub fn update_and_smooth(&mut self, frame: &FrameLandmarks) -> Result<(Point3, f64)> {
        let reference = reference_point(frame)?;
        let scale = scale_factor(frame, self.epsilon)?;
        if self.history.len() == self.window {
            self.history.pop_front();
        }
        self.history.push_back((reference, scale));

        let n = self.history.len() as f64;
        let mut mean_ref = [0.0; 3];
        let mut mean_scale = 0.0;
        for (r, s) in &self.history {
            for (m, v) in mean_ref.iter_mut().zip(r) {
                *m += v;
            }
            mean_scale += s;
        }
        for m in mean_ref.iter_mut() {
            *m /= n;
        }
        Ok((mean_ref, mean_scale / n))
    }

    /// Smooths and normalizes one frame. Frames without a usable hand come out
    /// as an empty frame (both hands absent, same index and timestamp).
    pub fn process(&mut self, frame: &FrameLandmarks) -> FrameLandmarks {
        match self.update_and_smooth(frame) {
            Ok((reference, scale)) => normalize(frame, reference, scale, self.epsilon)
                .unwrap_or_else(|_| FrameLandmarks::empty(frame.frame_index, frame.timestamp_ms)),
            Err(_) => FrameLandmarks::empty(frame.frame_index, frame.timestamp_ms),
        }
    }
}

/// Normalizes a whole recording causally with a fresh jitter buffer.
pub fn normalize_sequence(frames: &[FrameLandmarks], window: usize) -> Vec<FrameLandmarks> {
    let mut state = NormalizationState::new(window, DEFAULT_SCALE_EPSILON);
    frames.iter().map(|f| state.process(f)).collect()
}

pub const MAX_AUGMENT_ANGLE_DEG: f64 = 15.0;
pub const AUGMENT_SCALE_RANGE: (f64, f64) = (0.8, 1.25);
pub const MAX_AUGMENT_SHEAR: f64 = 0.1;
pub const MAX_AUGMENT_TRANSLATION: f64 = 0.05;

/// A 2D affine map on the image plane: scale * rotate * shear about a pivot,
/// then translate. z is never touched.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine2 {
    pub angle_deg: f64,
    pub scale: f64,
    pub shear: f64,
    pub translation: [f64; 2],
    pub pivot: [f64; 2],
}

impl Affine2 {
    pub const IDENTITY: Affine2 = Affine2 {
        angle_deg: 0.0,
        scale: 1.0,
        shear: 0.0,
        translation: [0.0, 0.0],
        pivot: [0.0, 0.0],
    };

    fn matrix(&self) -> [[f64; 2]; 2] {
        let theta = self.angle_deg.to_radians();
        let (s, c) = (sin(theta), cos(theta));
        // R * Sh with Sh = [[1, shear], [0, 1]]
        [
            [self.scale * c, self.scale * (c * self.shear - s)],
            [self.scale * s, self.scale * (s * self.shear + c)],
        ]
    }

    pub fn apply(&self, p: Point3) -> Point3 {
        let m = self.matrix();
        let x = p[0] - self.pivot[0];
        let y = p[1] - self.pivot[1];
        [
            m[0][0] * x + m[0][1] * y + self.pivot[0] + self.translation[0],
            m[1][0] * x + m[1][1] * y + self.pivot[1] + self.translation[1],
            p[2],
        ]
    }

    /// The same map with every parameter clamped to the augmentation bounds.
    pub fn clamped(&self) -> Self {
        let t = MAX_AUGMENT_TRANSLATION;
        Self {
            angle_deg: self.angle_deg.clamp(-MAX_AUGMENT_ANGLE_DEG, MAX_AUGMENT_ANGLE_DEG),
            scale: self.scale.clamp(AUGMENT_SCALE_RANGE.0, AUGMENT_SCALE_RANGE.1),
            shear: self.shear.clamp(-MAX_AUGMENT_SHEAR, MAX_AUGMENT_SHEAR),
            translation: [
                self.translation[0].clamp(-t, t),
                self.translation[1].clamp(-t, t),
            ],
            pivot: self.pivot,
        }
    }

    /// Draws a map uniformly inside the augmentation bounds, pivoting on the
    /// image center.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = MAX_AUGMENT_TRANSLATION;
        Self {
            angle_deg: rng.random_range(-MAX_AUGMENT_ANGLE_DEG..=MAX_AUGMENT_ANGLE_DEG),
            scale: rng.random_range(AUGMENT_SCALE_RANGE.0..=AUGMENT_SCALE_RANGE.1),
            shear: rng.random_range(-MAX_AUGMENT_SHEAR..=MAX_AUGMENT_SHEAR),
            translation: [rng.random_range(-t..=t), rng.random_range(-t..=t)],
            pivot: [0.5, 0.5],
        }
    }
}

/// Applies one clamped affine map to every present point of every frame.
pub fn augment_landmarks(seq: &[FrameLandmarks], transform: &Affine2) -> Vec<FrameLandmarks> {
    let t = transform.clamped();
    seq.iter().map(|f| f.map_hands(|p| t.apply(p))).collect()
}

/// Convenience wrapper drawing the transform from `seed`.
pub fn augment_landmarks_seeded(seq: &[FrameLandmarks], seed: u64) -> Vec<FrameLandmarks> {
    augment_landmarks(seq, &Affine2::random(seed))
}
