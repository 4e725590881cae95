//! Input encoders: direct replication, time-to-first-spike, and a simulated
//! event camera driven by sub-pixel image motion.
//!
//! All encoders map one image [C×H×W] with intensities in [0,1] to a
//! time-major tensor [T×C×H×W] (the event camera emits [T×2×H×W]: ON and OFF
//! polarity channels). Direct output is real-valued; the other two are binary.

use crate::error::{D2eError, Result};
use crate::tensor::Tensor;

/// Log-intensity floor of the simulated event camera (1/255).
pub const DVS_EPS_L: f64 = 1.0 / 255.0;

/// Default log-intensity contrast threshold of the simulated event camera.
pub const DVS_DEFAULT_THRESHOLD: f64 = 0.15;

/// Binary spike tensor, time-major [T×C×H×W].
#[derive(Debug, Clone)]
pub struct SpikeTrain(pub Tensor);

impl SpikeTrain {
    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn is_binary(&self) -> bool {
        self.0.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// True when no pixel position fires more than once across time.
    pub fn at_most_one_spike_per_pixel(&self) -> bool {
        let t = self.0.shape[0];
        let per_frame: usize = self.0.shape[1..].iter().product();
        (0..per_frame).all(|i| {
            let count: f64 = (0..t).map(|k| self.0.data[k * per_frame + i]).sum();
            count <= 1.0
        })
    }
}

/// Motion path of the simulated event camera, in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MotionPath {
    /// Closed triangular loop with the given edge amplitude; the default.
    Triangle { amplitude: f64 },
    /// Constant per-step displacement.
    Linear { dx: f64, dy: f64 },
    /// No motion (useful to isolate thresholding behavior).
    Zero,
}

impl Default for MotionPath {
    fn default() -> Self {
        MotionPath::Triangle { amplitude: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DvsParams {
    /// Contrast threshold on the log-intensity difference.
    pub c_log: f64,
    pub path: MotionPath,
}

impl Default for DvsParams {
    fn default() -> Self {
        DvsParams {
            c_log: DVS_DEFAULT_THRESHOLD,
            path: MotionPath::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Encoder {
    Direct,
    /// Direct code with the luminance copied into both polarity channels, so
    /// a network built for DVS input can also run on static frames.
    DirectDual,
    Ttfs,
    Dvs(DvsParams),
}

impl Encoder {
    pub fn name(&self) -> &'static str {
        match self {
            Encoder::Direct => "direct",
            Encoder::DirectDual => "direct-dual",
            Encoder::Ttfs => "ttfs",
            Encoder::Dvs(_) => "dvs",
        }
    }

    /// True when the encoder output is binary (event-coded).
    pub fn is_event(&self) -> bool {
        matches!(self, Encoder::Ttfs | Encoder::Dvs(_))
    }

    /// The real-valued code with the same tensor layout as this encoder's
    /// output: plain replication for TTFS, polarity-duplicated replication
    /// for DVS. A pretrained net and its event-fed twin share one shape.
    pub fn direct_twin(&self) -> Encoder {
        match self {
            Encoder::Dvs(_) => Encoder::DirectDual,
            Encoder::DirectDual => Encoder::DirectDual,
            _ => Encoder::Direct,
        }
    }

    pub fn encode(&self, img: &Tensor, t_steps: usize) -> Result<Tensor> {
        match self {
            Encoder::Direct => encode_direct(img, t_steps),
            Encoder::DirectDual => encode_direct_dual(img, t_steps),
            Encoder::Ttfs => Ok(encode_ttfs(img, t_steps)?.into_tensor()),
            Encoder::Dvs(p) => Ok(encode_dvs(img, t_steps, p)?.into_tensor()),
        }
    }

    /// Channel count the network sees for a C-channel image.
    pub fn channels_out(&self, c_in: usize) -> usize {
        match self {
            Encoder::Dvs(_) | Encoder::DirectDual => 2,
            _ => c_in,
        }
    }
}

fn check_image(img: &Tensor, t_steps: usize) -> Result<()> {
    if img.ndim() != 3 {
        return Err(D2eError::Dimension(format!(
            "encoder expects [C,H,W] image, got {:?}",
            img.shape
        )));
    }
    if t_steps == 0 {
        return Err(D2eError::Contract("encoder needs at least one timestep".into()));
    }
    if let Some(&bad) = img.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(D2eError::Contract(format!(
            "pixel intensity {} outside [0,1]",
            bad
        )));
    }
    Ok(())
}

/// Repeats the image at every timestep: the real-valued baseline code.
pub fn encode_direct(img: &Tensor, t_steps: usize) -> Result<Tensor> {
    check_image(img, t_steps)?;
    let mut shape = vec![t_steps];
    shape.extend_from_slice(&img.shape);
    let mut data = Vec::with_capacity(t_steps * img.numel());
    for _ in 0..t_steps {
        data.extend_from_slice(&img.data);
    }
    Tensor::new(shape, data)
}

/// Repeats the image's luminance (mean over channels) in both polarity
/// channels at every timestep: [T×2×H×W]. The real-valued counterpart of the
/// DVS code.
pub fn encode_direct_dual(img: &Tensor, t_steps: usize) -> Result<Tensor> {
    check_image(img, t_steps)?;
    let (c, h, w) = (img.shape[0], img.shape[1], img.shape[2]);
    let lum: Vec<f64> = (0..h * w)
        .map(|i| (0..c).map(|ci| img.data[ci * h * w + i]).sum::<f64>() / c as f64)
        .collect();
    let mut data = Vec::with_capacity(t_steps * 2 * h * w);
    for _ in 0..t_steps {
        data.extend_from_slice(&lum);
        data.extend_from_slice(&lum);
    }
    Tensor::new(vec![t_steps, 2, h, w], data)
}

/// First-spike time for intensity x > 0: brighter pixels fire earlier.
/// Rounding is half away from zero. x = 0 never fires.
pub fn ttfs_time(x: f64, t_steps: usize) -> Option<usize> {
    if x <= 0.0 {
        return None;
    }
    Some(((1.0 - x) * (t_steps as f64 - 1.0)).round() as usize)
}

/// Time-to-first-spike code: exactly one spike per pixel with x > 0, none for
/// x = 0, so each pixel uses an alphabet of T+1 codewords.
pub fn encode_ttfs(img: &Tensor, t_steps: usize) -> Result<SpikeTrain> {
    check_image(img, t_steps)?;
    let mut shape = vec![t_steps];
    shape.extend_from_slice(&img.shape);
    let per_frame = img.numel();
    let mut data = vec![0.0; t_steps * per_frame];
    for (i, &x) in img.data.iter().enumerate() {
        if let Some(t) = ttfs_time(x, t_steps) {
            data[t * per_frame + i] = 1.0;
        }
    }
    Ok(SpikeTrain(Tensor::new(shape, data)?))
}

/// Inverse of the first-spike map: x_hat = 1 - t*/(T-1); pixels that never
/// fired decode to 0. Recovers x within 1/(2(T-1)) for T >= 2.
pub fn ttfs_decode(train: &SpikeTrain) -> Result<Tensor> {
    let t_steps = train.0.shape[0];
    let per_frame: usize = train.0.shape[1..].iter().product();
    let mut out = Tensor::zeros(&train.0.shape[1..]);
    for i in 0..per_frame {
        for t in 0..t_steps {
            if train.0.data[t * per_frame + i] != 0.0 {
                out.data[i] = if t_steps == 1 {
                    1.0
                } else {
                    1.0 - t as f64 / (t_steps as f64 - 1.0)
                };
                break;
            }
        }
    }
    Ok(out)
}

/// Codewords one pixel can take under the first-spike code: T spike times
/// plus the silent word.
pub fn ttfs_alphabet_size(t_steps: usize) -> usize {
    t_steps + 1
}

// ── simulated event camera ──

/// Bilinear sample of channel plane `plane` (h x w) at real coordinates,
/// clamped at the edges.
fn bilinear(plane: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let yc = y.clamp(0.0, (h - 1) as f64);
    let xc = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (yc.floor() as usize, xc.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (yc - y0 as f64, xc - x0 as f64);
    let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
    let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
    top * (1.0 - fy) + bot * fy
}

/// Image translated by (dx, dy) pixels: out(y, x) = img(y - dy, x - dx).
fn translate(img: &Tensor, dx: f64, dy: f64) -> Tensor {
    let (c, h, w) = (img.shape[0], img.shape[1], img.shape[2]);
    let mut out = Tensor::zeros(&img.shape);
    for ci in 0..c {
        let plane = &img.data[ci * h * w..(ci + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                out.data[(ci * h + y) * w + x] =
                    bilinear(plane, h, w, y as f64 - dy, x as f64 - dx);
            }
        }
    }
    out
}

/// Camera offsets for frames 0..=T along the configured path.
fn path_offsets(path: &MotionPath, t_steps: usize) -> Vec<(f64, f64)> {
    match path {
        MotionPath::Zero => vec![(0.0, 0.0); t_steps + 1],
        MotionPath::Linear { dx, dy } => {
            (0..=t_steps).map(|k| (dx * k as f64, dy * k as f64)).collect()
        }
        MotionPath::Triangle { amplitude } => {
            let a = *amplitude;
            let verts = [(0.0, 0.0), (a, 0.0), (a / 2.0, a), (0.0, 0.0)];
            (0..=t_steps)
                .map(|k| {
                    let u = k as f64 / t_steps as f64 * 3.0;
                    let seg = (u.floor() as usize).min(2);
                    let f = u - seg as f64;
                    let (x0, y0) = verts[seg];
                    let (x1, y1) = verts[seg + 1];
                    (x0 + (x1 - x0) * f, y0 + (y1 - y0) * f)
                })
                .collect()
        }
    }
}

/// Renders T+1 sub-pixel translated frames of the image along the motion
/// path and thresholds log-intensity differences into ON (channel 0) and OFF
/// (channel 1) events: [T×2×H×W].
pub fn encode_dvs(img: &Tensor, t_steps: usize, params: &DvsParams) -> Result<SpikeTrain> {
    check_image(img, t_steps)?;
    let (c, h, w) = (img.shape[0], img.shape[1], img.shape[2]);
    let offsets = path_offsets(&params.path, t_steps);

    // luminance: mean over channels
    let frame = |k: usize| -> Vec<f64> {
        let (dx, dy) = offsets[k];
        let shifted = translate(img, dx, dy);
        (0..h * w)
            .map(|i| {
                let mut acc = 0.0;
                for ci in 0..c {
                    acc += shifted.data[ci * h * w + i];
                }
                acc / c as f64
            })
            .collect()
    };

    let mut prev = frame(0);
    let mut data = vec![0.0; t_steps * 2 * h * w];
    for t in 1..=t_steps {
        let cur = frame(t);
        for i in 0..h * w {
            let delta = (cur[i] + DVS_EPS_L).ln() - (prev[i] + DVS_EPS_L).ln();
            if delta > params.c_log {
                data[((t - 1) * 2) * h * w + i] = 1.0;
            } else if delta < -params.c_log {
                data[((t - 1) * 2 + 1) * h * w + i] = 1.0;
            }
        }
        prev = cur;
    }
    Ok(SpikeTrain(Tensor::new(vec![t_steps, 2, h, w], data)?))
}
