use std::f64::consts::TAU;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::defect::{flat_profile_unchecked, DefectKind, Side, WheelDefect};
use super::irregularity::{gen_track_irregularity, IrregularityConfig, TrackProfile};
use super::train::{LoadScheme, TrainKind, TrainType};
use crate::rng::{derive, stage_rng};
use crate::{Error, Result};

pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 2000.0;
pub const DEFAULT_SNR_DB: f64 = 20.0;

fn default_sample_rate() -> f64 {
    DEFAULT_SAMPLE_RATE_HZ
}

fn default_snr() -> Option<f64> {
    Some(DEFAULT_SNR_DB)
}

/// Full description of one train passage over the measurement point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PassageSpec {
    pub train_type: TrainKind,
    pub speed_kmh: f64,
    pub load_scheme: LoadScheme,
    #[serde(default)]
    pub defects: Vec<WheelDefect>,
    /// Seeds the track irregularity profile and the sensor noise.
    pub seed: u64,
    #[serde(default = "default_sample_rate")]
    pub sample_rate_hz: f64,
    /// Signal-to-noise ratio per channel; `None` or infinity is noise-free.
    #[serde(default = "default_snr")]
    pub snr_db: Option<f64>,
    /// Distance to a second, downstream strain sensor, if simulated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub second_sensor_gap_m: Option<f64>,
}

impl PassageSpec {
    pub fn new(train_type: TrainKind, speed_kmh: f64, load_scheme: LoadScheme, seed: u64) -> Self {
        PassageSpec {
            train_type,
            speed_kmh,
            load_scheme,
            defects: Vec::new(),
            seed,
            sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
            snr_db: Some(DEFAULT_SNR_DB),
            second_sensor_gap_m: None,
        }
    }

    pub fn noise_free(mut self) -> Self {
        self.snr_db = None;
        self
    }

    pub fn with_defects(mut self, defects: Vec<WheelDefect>) -> Self {
        self.defects = defects;
        self
    }

    pub fn train(&self) -> TrainType {
        self.train_type.train_type()
    }

    pub fn is_anomalous(&self) -> bool {
        !self.defects.is_empty()
    }

    pub fn speed_mps(&self) -> f64 {
        self.speed_kmh / 3.6
    }

    pub fn has_kind(&self, kind: DefectKind) -> bool {
        self.defects.iter().any(|d| d.kind == kind)
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.train_type.speed_range_kmh();
        if !(self.speed_kmh >= lo && self.speed_kmh <= hi) {
            return Err(Error::config(format!(
                "{} speed {} km/h outside [{lo}, {hi}]",
                self.train_type.name(),
                self.speed_kmh
            )));
        }
        if !(self.sample_rate_hz > 0.0) || !self.sample_rate_hz.is_finite() {
            return Err(Error::config("sample rate must be positive"));
        }
        if let Some(snr) = self.snr_db {
            if snr.is_nan() {
                return Err(Error::config("snr_db is NaN"));
            }
        }
        if let Some(gap) = self.second_sensor_gap_m {
            if !(gap > 0.0) {
                return Err(Error::config("second sensor gap must be positive"));
            }
        }
        let train = self.train();
        for d in &self.defects {
            if train.axle_index(d.wagon_index, d.wheel_position.axle_in_wagon).is_none() {
                return Err(Error::config(format!(
                    "defect on wagon {} but {} has {} wagons",
                    d.wagon_index,
                    self.train_type.name(),
                    train.wagon_count
                )));
            }
        }
        Ok(())
    }
}

/// Two synchronized channels plus the passage ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaysideRecording {
    /// Rail strain, µm/m.
    pub strain: Vec<f64>,
    /// Rail acceleration, m/s².
    pub accel: Vec<f64>,
    /// Strain at the optional second sensor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strain_secondary: Option<Vec<f64>>,
    pub sample_rate_hz: f64,
    pub truth: PassageSpec,
    /// Time each axle passes the (first) sensor, seconds.
    pub wheel_pass_times: Vec<f64>,
}

impl WaysideRecording {
    pub fn len(&self) -> usize {
        self.strain.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strain.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.strain.len() as f64 / self.sample_rate_hz
    }
}

/// Constants of the analytical wayside response.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateModel {
    /// Peak strain per tonne of wheel load, µm/m.
    pub strain_per_tonne: f64,
    /// Standard deviation of the strain influence line, m.
    pub influence_sigma_m: f64,
    /// Free track before the head and after the tail of the train, m.
    pub lead_m: f64,
    /// Exponential decay length of accelerations along the rail, m.
    pub accel_decay_m: f64,
    pub irregularity_gain: f64,
    /// Static rail deflection under the wheel, mm per tonne of wheel load.
    pub deflection_mm_per_tonne: f64,
    /// Standard deviation of the deflection basin, m.
    pub deflection_sigma_m: f64,
    /// Half-width of the uniform per-wagon payload scatter, relative.
    pub payload_jitter: f64,
    pub flat_gain: f64,
    pub poly_gain: f64,
    /// Rail/sleeper mode excited by flat impacts.
    pub resonance_hz: f64,
    pub damping_ratio: f64,
    /// Transfer factor for defects on the wheel on the far rail.
    pub far_side_coupling: f64,
    /// Dynamic overload of a flat wheel at 100 km/h per sqrt(D / 0.1 mm).
    pub flat_overload: f64,
    /// Dynamic overload of a polygonal wheel at 100 km/h per mm amplitude.
    pub poly_overload: f64,
    pub oversample: usize,
    /// Corner frequency of the sensor noise, Hz.
    pub noise_corner_hz: f64,
    pub sensor_position_m: f64,
    pub irregularity: IrregularityConfig,
}

impl Default for SurrogateModel {
    fn default() -> Self {
        SurrogateModel {
            strain_per_tonne: 5.0,
            influence_sigma_m: 0.35,
            lead_m: 8.0,
            accel_decay_m: 1.5,
            irregularity_gain: 1.0,
            deflection_mm_per_tonne: 1.0,
            deflection_sigma_m: 0.6,
            payload_jitter: 0.15,
            flat_gain: 0.003,
            poly_gain: 0.005,
            resonance_hz: 90.0,
            damping_ratio: 0.2,
            far_side_coupling: 0.7,
            flat_overload: 0.3,
            poly_overload: 0.4,
            oversample: 16,
            noise_corner_hz: 250.0,
            sensor_position_m: 50.0,
            irregularity: IrregularityConfig::default(),
        }
    }
}

/// Render a passage with the default surrogate model.
pub fn synthesize_passage(spec: &PassageSpec) -> Result<WaysideRecording> {
    synthesize_with(spec, &SurrogateModel::default())
}

struct WheelState<'a> {
    pass_time: f64,
    /// Static wheel load in tonnes.
    load_t: f64,
    overload: f64,
    defects: Vec<&'a WheelDefect>,
}

pub fn synthesize_with(spec: &PassageSpec, model: &SurrogateModel) -> Result<WaysideRecording> {
    spec.validate()?;
    let train = spec.train();
    let v = spec.speed_mps();
    let fs = spec.sample_rate_hz;

    let gap_samples = train.min_axle_gap_m() / v * fs;
    let sigma_samples = model.influence_sigma_m / v * fs;
    if gap_samples < 8.0 || sigma_samples < 2.0 {
        return Err(Error::config(format!(
            "sample rate {fs} Hz cannot resolve the closest axle pair at {} km/h \
             ({gap_samples:.1} samples apart, pulse sigma {sigma_samples:.1} samples)",
            spec.speed_kmh
        )));
    }

    let extra = spec.second_sensor_gap_m.unwrap_or(0.0);
    let duration = (2.0 * model.lead_m + train.length_m() + extra) / v;
    let n = (duration * fs).ceil() as usize + 1;

    let tare_per_axle = train.tare_per_wagon_t / train.axles_per_wagon as f64;
    let mut jitter_rng = stage_rng(spec.seed, "payload", 0);
    let wagon_factor: Vec<f64> = (0..train.wagon_count)
        .map(|_| 1.0 + model.payload_jitter * jitter_rng.random_range(-1.0..=1.0))
        .collect();
    let axle_loads: Vec<f64> = train
        .axle_loads_t(spec.load_scheme)
        .iter()
        .zip(&train.axle_wagon)
        .map(|(&l, &w)| tare_per_axle + (l - tare_per_axle) * wagon_factor[w])
        .collect();
    let mut wheels: Vec<WheelState> = train
        .axle_positions
        .iter()
        .zip(&axle_loads)
        .map(|(&p, &load)| WheelState {
            pass_time: (model.lead_m + p) / v,
            load_t: load / 2.0,
            overload: 0.0,
            defects: Vec::new(),
        })
        .collect();
    for d in &spec.defects {
        let axle = train
            .axle_index(d.wagon_index, d.wheel_position.axle_in_wagon)
            .expect("validated");
        let coupling = side_coupling(d.wheel_position.side, model);
        wheels[axle].overload += coupling * overload(d, spec.speed_kmh, model);
        wheels[axle].defects.push(d);
    }

    let strain = render_strain(&wheels, 0.0, n, v, fs, model);
    let strain_secondary = spec
        .second_sensor_gap_m
        .map(|gap| render_strain(&wheels, gap / v, n, v, fs, model));

    let profile = gen_track_irregularity(derive(spec.seed, "irregularity", 0), &model.irregularity)?;
    let accel = render_accel(&wheels, &profile, n, v, fs, model);

    let mut rec = WaysideRecording {
        strain,
        accel,
        strain_secondary,
        sample_rate_hz: fs,
        truth: spec.clone(),
        wheel_pass_times: wheels.iter().map(|w| w.pass_time).collect(),
    };

    if let Some(snr) = spec.snr_db.filter(|s| s.is_finite()) {
        add_noise(&mut rec.strain, snr, fs, model, spec.seed, 0);
        add_noise(&mut rec.accel, snr, fs, model, spec.seed, 1);
        if let Some(s) = rec.strain_secondary.as_mut() {
            add_noise(s, snr, fs, model, spec.seed, 2);
        }
    }
    Ok(rec)
}

fn side_coupling(side: Side, model: &SurrogateModel) -> f64 {
    match side {
        Side::Left => 1.0,
        Side::Right => model.far_side_coupling,
    }
}

/// Relative dynamic overload a defect adds to the wheel load seen by the
/// strain sensor.
fn overload(d: &WheelDefect, speed_kmh: f64, model: &SurrogateModel) -> f64 {
    let speed = speed_kmh / 100.0;
    match d.kind {
        DefectKind::Flat => {
            // Stronger when an impact lands close to the sensor.
            let c = d.circumference_mm() * 1e-3;
            let centre = c - d.flat_length_mm * 1e-3 / 2.0 - d.roll_offset_mm * 1e-3;
            let mut dist = (model.sensor_position_m - centre).rem_euclid(c);
            if dist > c / 2.0 {
                dist = c - dist;
            }
            let proximity = 0.35 + 0.65 * (-dist * dist / (2.0 * 0.5 * 0.5)).exp();
            model.flat_overload * (d.flat_depth_mm / 0.1).sqrt() * speed * proximity
        }
        DefectKind::Polygonization => model.poly_overload * d.poly_peak_mm() * speed * speed,
    }
}

fn render_strain(wheels: &[WheelState], delay: f64, n: usize, v: f64, fs: f64, model: &SurrogateModel) -> Vec<f64> {
    let mut out = vec![0.0; n];
    let sigma = model.influence_sigma_m;
    let reach = 8.0 * sigma / v;
    for w in wheels {
        let amp = model.strain_per_tonne * w.load_t * (1.0 + w.overload);
        let t0 = w.pass_time + delay;
        let first = ((t0 - reach) * fs).floor().max(0.0) as usize;
        let last = (((t0 + reach) * fs).ceil() as usize).min(n.saturating_sub(1));
        for (i, slot) in out.iter_mut().enumerate().take(last + 1).skip(first) {
            let d = v * (i as f64 / fs - t0);
            *slot += amp * (-d * d / (2.0 * sigma * sigma)).exp();
        }
    }
    out
}

fn render_accel(
    wheels: &[WheelState],
    profile: &TrackProfile,
    n: usize,
    v: f64,
    fs: f64,
    model: &SurrogateModel,
) -> Vec<f64> {
    let mut out = vec![0.0; n];
    let curvature = profile.curvature_per_m();
    let xs = model.sensor_position_m;
    let d0 = model.accel_decay_m;
    let reach = (6.0 * d0).max(6.0 * model.deflection_sigma_m);
    let v2 = v * v;
    let ds2 = model.deflection_sigma_m * model.deflection_sigma_m;
    let os = model.oversample.max(1);
    let has_flats = wheels.iter().any(|w| w.defects.iter().any(|d| d.kind == DefectKind::Flat));
    let mut excitation = if has_flats { vec![0.0; n * os] } else { Vec::new() };

    for w in wheels {
        let t_lo = w.pass_time - reach / v;
        let t_hi = w.pass_time + reach / v;
        let first = (t_lo * fs).floor().max(0.0) as usize;
        let last = ((t_hi * fs).ceil() as usize).min(n - 1);
        let load_factor = w.load_t / 10.0;
        // Second time derivative of the moving deflection basin.
        let basin = model.deflection_mm_per_tonne * 1e-3 * w.load_t * (1.0 + w.overload) * v2 / ds2;
        for (i, slot) in out.iter_mut().enumerate().take(last + 1).skip(first) {
            let t = i as f64 / fs;
            let x = xs + v * (t - w.pass_time);
            let r2 = (x - xs) * (x - xs) / ds2;
            *slot += basin * (r2 - 1.0) * (-0.5 * r2).exp();
            let att = (-(x - xs).abs() / d0).exp();
            let mut a = model.irregularity_gain * v2 * interp(&curvature, profile.dx_m, x) * load_factor;
            for d in w.defects.iter().filter(|d| d.kind == DefectKind::Polygonization) {
                let rho = (x * 1e3 + d.roll_offset_mm).rem_euclid(d.circumference_mm());
                a += model.poly_gain * side_coupling(d.wheel_position.side, model) * v2 * d.poly_curvature_per_m(rho);
            }
            *slot += att * a;
        }
        if has_flats {
            for d in w.defects.iter().filter(|d| d.kind == DefectKind::Flat) {
                let c = d.circumference_mm();
                let half = d.flat_length_mm / 2.0;
                // Peak curvature-driven acceleration of the wheel following the flat, m/s².
                let peak = model.flat_gain * v2 * d.flat_depth_mm / (half * half) * 1e3;
                let coupling = side_coupling(d.wheel_position.side, model);
                for j in first * os..((last + 1) * os).min(n * os) {
                    let t = j as f64 / (fs * os as f64);
                    let x = xs + v * (t - w.pass_time);
                    let rho = (x * 1e3 + d.roll_offset_mm).rem_euclid(c);
                    let shape = -flat_profile_unchecked(rho, d.flat_length_mm, d.flat_depth_mm, c) / d.flat_depth_mm;
                    if shape > 0.0 {
                        let att = (-(x - xs).abs() / d0).exp();
                        excitation[j] += coupling * att * peak * shape;
                    }
                }
            }
        }
    }

    if has_flats {
        let response = resonate(&excitation, fs * os as f64, model.resonance_hz, model.damping_ratio);
        for (i, slot) in out.iter_mut().enumerate() {
            let block = &response[i * os..(i + 1) * os];
            *slot += block.iter().sum::<f64>() / os as f64;
        }
    }
    out
}

fn interp(values: &[f64], dx: f64, x: f64) -> f64 {
    let pos = x / dx;
    if pos <= 0.0 {
        return values[0];
    }
    let i = pos.floor() as usize;
    if i + 1 >= values.len() {
        return *values.last().unwrap();
    }
    let frac = pos - i as f64;
    values[i] * (1.0 - frac) + values[i + 1] * frac
}

/// Single-mode rail response y'' + 2ζω y' + ω² y = ω² e, integrated with
/// semi-implicit Euler; returns y.
fn resonate(excitation: &[f64], fs: f64, f_hz: f64, zeta: f64) -> Vec<f64> {
    let dt = 1.0 / fs;
    let w = TAU * f_hz;
    let (mut y, mut dy) = (0.0f64, 0.0f64);
    excitation
        .iter()
        .map(|&e| {
            let ddy = w * w * (e - y) - 2.0 * zeta * w * dy;
            dy += ddy * dt;
            y += dy * dt;
            y
        })
        .collect()
}

fn add_noise(signal: &mut [f64], snr_db: f64, fs: f64, model: &SurrogateModel, seed: u64, channel: u64) {
    let power = signal.iter().map(|x| x * x).sum::<f64>() / signal.len().max(1) as f64;
    if power == 0.0 {
        return;
    }
    let mut rng = stage_rng(seed, "noise", channel);
    let alpha = 1.0 - (-TAU * model.noise_corner_hz / fs).exp();
    let mut state = 0.0;
    let noise: Vec<f64> = signal
        .iter()
        .map(|_| {
            let w: f64 = rng.sample(StandardNormal);
            state += alpha * (w - state);
            state
        })
        .collect();
    let var = noise.iter().map(|x| x * x).sum::<f64>() / noise.len() as f64;
    let scale = (power / 10f64.powf(snr_db / 10.0) / var).sqrt();
    for (s, e) in signal.iter_mut().zip(noise) {
        *s += scale * e;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::defect::{sample_defect_at, DefectSite, FLAT_L2};
    use crate::rng::rng_from;

    fn local_maxima(x: &[f64]) -> Vec<usize> {
        (1..x.len() - 1).filter(|&i| x[i] > x[i - 1] && x[i] > x[i + 1]).collect()
    }

    #[test]
    fn clean_laagrss_has_ten_strain_maxima() {
        let spec = PassageSpec::new(TrainKind::Laagrss, 80.0, LoadScheme::Full, 1).noise_free();
        let rec = synthesize_passage(&spec).unwrap();
        assert_eq!(local_maxima(&rec.strain).len(), 10);
        assert_eq!(rec.strain.len(), rec.accel.len());
    }

    #[test]
    fn clean_peak_count_over_grid() {
        for kind in TrainKind::ALL {
            let (lo, hi) = kind.speed_range_kmh();
            for load in LoadScheme::ALL {
                for k in 0..4 {
                    let speed = lo + (hi - lo) * k as f64 / 3.0;
                    let spec = PassageSpec::new(kind, speed, load, 3).noise_free();
                    let rec = synthesize_passage(&spec).unwrap();
                    assert_eq!(
                        local_maxima(&rec.strain).len(),
                        kind.train_type().expected_wheel_count,
                        "{kind:?} {load:?} {speed}"
                    );
                }
            }
        }
    }

    #[test]
    fn doubling_speed_halves_gaps() {
        let slow = synthesize_passage(&PassageSpec::new(TrainKind::Alfa, 60.0, LoadScheme::Half, 2)).unwrap();
        let fast = synthesize_passage(&PassageSpec::new(TrainKind::Alfa, 120.0, LoadScheme::Half, 2)).unwrap();
        for (a, b) in slow.wheel_pass_times.windows(2).zip(fast.wheel_pass_times.windows(2)) {
            assert!(((a[1] - a[0]) / 2.0 - (b[1] - b[0])).abs() < 1e-12);
        }
    }

    #[test]
    fn flat_raises_accel_rms() {
        let base = PassageSpec::new(TrainKind::Laagrss, 90.0, LoadScheme::Full, 8).noise_free();
        let mut rng = rng_from(4);
        let flat = sample_defect_at(DefectKind::Flat, FLAT_L2, DefectSite::FLAT_FIRST, 460.0, &mut rng).unwrap();
        let defective = base.clone().with_defects(vec![flat]);
        let rms = |x: &[f64]| (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
        let a = synthesize_passage(&base).unwrap();
        let b = synthesize_passage(&defective).unwrap();
        assert!(rms(&b.accel) > rms(&a.accel));
    }

    #[test]
    fn synthesis_is_deterministic() {
        let spec = PassageSpec::new(TrainKind::Alfa, 150.0, LoadScheme::Unbalance2, 42);
        let a = synthesize_passage(&spec).unwrap();
        let b = synthesize_passage(&spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn heavy_side_pulses_are_taller() {
        for kind in TrainKind::ALL {
            let train = kind.train_type();
            for load in [LoadScheme::Unbalance1, LoadScheme::Unbalance2, LoadScheme::Unbalance3] {
                let rec = synthesize_passage(&PassageSpec::new(kind, 70.0, load, 5).noise_free()).unwrap();
                let peak_at = |t: f64| rec.strain[(t * rec.sample_rate_hz).round() as usize];
                let (mut heavy, mut light) = (f64::INFINITY, f64::NEG_INFINITY);
                for (axle, &t) in rec.wheel_pass_times.iter().enumerate() {
                    if train.is_front_half(axle) {
                        heavy = heavy.min(peak_at(t));
                    } else {
                        light = light.max(peak_at(t));
                    }
                }
                assert!(heavy > light, "{kind:?} {load:?}");
            }
        }
    }

    #[test]
    fn low_sample_rate_is_rejected() {
        let mut spec = PassageSpec::new(TrainKind::Alfa, 220.0, LoadScheme::Full, 1);
        spec.sample_rate_hz = 100.0;
        assert!(matches!(synthesize_passage(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn speed_outside_range_is_rejected() {
        let spec = PassageSpec::new(TrainKind::Laagrss, 150.0, LoadScheme::Full, 1);
        assert!(synthesize_passage(&spec).is_err());
    }

    #[test]
    fn snr_is_respected() {
        let clean = synthesize_passage(&PassageSpec::new(TrainKind::Laagrss, 80.0, LoadScheme::Full, 6).noise_free()).unwrap();
        let noisy = synthesize_passage(&PassageSpec::new(TrainKind::Laagrss, 80.0, LoadScheme::Full, 6)).unwrap();
        let p = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let noise: Vec<f64> = noisy.strain.iter().zip(&clean.strain).map(|(a, b)| a - b).collect();
        let snr = 10.0 * (p(&clean.strain) / p(&noise)).log10();
        assert!((snr - 20.0).abs() < 1e-6);
    }
}
