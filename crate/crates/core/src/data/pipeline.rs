use super::{map_label, DataError, DatasetDescriptor, FiveClass, LabelScheme, PairedWindow, Recording, SiteChannels, Units};
use crate::numerics::Tensor;

/// Common sampling rate after resampling.
pub const TARGET_RATE_HZ: f64 = 30.0;
/// Samples per window.
pub const WINDOW_LEN: usize = 100;

const RATE_TOLERANCE: f64 = 1e-9;

/// Linearly fills interior gaps of at most `max_gap` consecutive missing
/// samples. Leading, trailing and longer gaps are left missing.
pub fn interpolate_missing(recording: &Recording, max_gap: usize) -> Recording {
    let mut out = recording.clone();
    for chan in out.source.iter_mut().chain(out.target.iter_mut()) {
        fill_gaps(chan, max_gap);
    }
    out
}

fn fill_gaps(chan: &mut [Option<f32>], max_gap: usize) {
    let n = chan.len();
    let mut i = 0;
    while i < n {
        if chan[i].is_some() {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && chan[i].is_none() {
            i += 1;
        }
        let len = i - start;
        if start == 0 || i == n || len > max_gap {
            continue;
        }
        let (a, b) = (chan[start - 1].unwrap() as f64, chan[i].unwrap() as f64);
        let span = (len + 1) as f64;
        for (offset, v) in chan[start..i].iter_mut().enumerate() {
            let frac = (offset + 1) as f64 / span;
            *v = Some((a + (b - a) * frac) as f32);
        }
    }
}

/// Multiplies every channel by its descriptor scale factor. Converting a
/// recording twice is an error.
pub fn convert_units(recording: &Recording, descriptor: &DatasetDescriptor) -> Result<Recording, DataError> {
    if recording.units == Units::Canonical {
        return Err(DataError::AlreadyConverted);
    }
    if recording.source.len() != descriptor.source.channels.len() || recording.target.len() != descriptor.target.channels.len() {
        return Err(DataError::Invalid("recording channel count differs from descriptor".into()));
    }
    let mut out = recording.clone();
    let scale = |site: &mut SiteChannels, specs: &[super::ChannelSpec]| {
        for (chan, spec) in site.iter_mut().zip(specs) {
            for v in chan.iter_mut().flatten() {
                *v = (*v as f64 * spec.scale) as f32;
            }
        }
    };
    scale(&mut out.source, &descriptor.source.channels);
    scale(&mut out.target, &descriptor.target.channels);
    out.units = Units::Canonical;
    Ok(out)
}

/// Linear interpolation onto a uniform grid at `target_rate` spanning the
/// original time range; labels take the nearest sample (earlier on ties).
/// A recording already at `target_rate` is returned unchanged.
pub fn resample(recording: &Recording, target_rate: f64) -> Result<Recording, DataError> {
    if recording.rate_hz + RATE_TOLERANCE < target_rate {
        return Err(DataError::Upsample {
            native: recording.rate_hz,
            target: target_rate,
        });
    }
    if (recording.rate_hz - target_rate).abs() <= RATE_TOLERANCE || recording.is_empty() {
        return Ok(recording.clone());
    }
    let ts = &recording.timestamps;
    let t0 = ts[0];
    let duration = ts[ts.len() - 1] - t0;
    let count = (duration * target_rate + 1e-9).floor() as usize + 1;
    let grid: Vec<f64> = (0..count).map(|k| t0 + k as f64 / target_rate).collect();

    // bracketing index and weight for each grid point
    let mut brackets = Vec::with_capacity(count);
    let mut i = 0;
    for &t in &grid {
        while i + 1 < ts.len() && ts[i + 1] <= t {
            i += 1;
        }
        let w = if i + 1 < ts.len() { (t - ts[i]) / (ts[i + 1] - ts[i]) } else { 0.0 };
        brackets.push((i, w));
    }
    let interp = |chan: &Vec<Option<f32>>| -> Vec<Option<f32>> {
        brackets
            .iter()
            .map(|&(i, w)| {
                if w == 0.0 {
                    return chan[i];
                }
                match (chan[i], chan[i + 1]) {
                    (Some(a), Some(b)) => Some((a as f64 + (b as f64 - a as f64) * w) as f32),
                    _ => None,
                }
            })
            .collect()
    };
    let labels = brackets
        .iter()
        .map(|&(i, w)| if w > 0.5 { recording.labels[i + 1] } else { recording.labels[i] })
        .collect();
    Ok(Recording {
        subject: recording.subject,
        rate_hz: target_rate,
        timestamps: grid,
        source: recording.source.iter().map(interp).collect(),
        target: recording.target.iter().map(interp).collect(),
        labels,
        classes: recording.classes.clone(),
        units: recording.units,
    })
}

/// Maps per-sample activity indices (descriptor order) to class indices of
/// `scheme`.
pub fn relabel(recording: &Recording, descriptor: &DatasetDescriptor, scheme: &LabelScheme) -> Result<Recording, DataError> {
    let table: Vec<u16> = descriptor
        .activities
        .iter()
        .map(|a| {
            let idx = match (scheme, &a.five_class) {
                (LabelScheme::FiveClass, Some(bucket)) => FiveClass::parse(bucket)
                    .map(|c| c as usize)
                    .ok_or_else(|| DataError::UnknownClass(bucket.clone()))?,
                _ => map_label(&a.name, scheme)?,
            };
            Ok(idx as u16)
        })
        .collect::<Result<_, DataError>>()?;
    let mut out = recording.clone();
    out.labels = recording
        .labels
        .iter()
        .map(|&l| {
            table
                .get(l as usize)
                .copied()
                .ok_or_else(|| DataError::Invalid(format!("activity index {} outside descriptor", l)))
        })
        .collect::<Result<_, _>>()?;
    out.classes = scheme.class_names();
    Ok(out)
}

/// Cuts a 30 Hz canonical recording into consecutive non-overlapping
/// 100-sample window pairs. The trailing remainder is dropped, as is any
/// window with a missing value at either site. Window label is the
/// majority class, ties going to the smaller index. Pair ids count from 0.
pub fn windowize(recording: &Recording) -> Result<Vec<PairedWindow>, DataError> {
    if (recording.rate_hz - TARGET_RATE_HZ).abs() > RATE_TOLERANCE {
        return Err(DataError::Invalid(format!("windowize needs {} Hz, got {}", TARGET_RATE_HZ, recording.rate_hz)));
    }
    if recording.units != Units::Canonical {
        return Err(DataError::Invalid("windowize needs canonical units".into()));
    }
    let num_classes = recording.classes.len().max(1);
    let mut out = Vec::new();
    for w in 0..recording.len() / WINDOW_LEN {
        let range = w * WINDOW_LEN..(w + 1) * WINDOW_LEN;
        let (Some(source), Some(target)) = (site_block(&recording.source, range.clone()), site_block(&recording.target, range.clone())) else {
            continue;
        };
        let mut votes = vec![0usize; num_classes];
        for &l in &recording.labels[range.clone()] {
            if (l as usize) >= votes.len() {
                votes.resize(l as usize + 1, 0);
            }
            votes[l as usize] += 1;
        }
        let mut label = 0;
        for (k, &v) in votes.iter().enumerate() {
            if v > votes[label] {
                label = k;
            }
        }
        out.push(PairedWindow {
            pair_id: out.len() as u64,
            subject: recording.subject,
            start_time: recording.timestamps[range.start],
            source,
            target,
            label: Some(label),
        });
    }
    Ok(out)
}

fn site_block(site: &SiteChannels, range: std::ops::Range<usize>) -> Option<Tensor> {
    let mut data = Vec::with_capacity(site.len() * range.len());
    for chan in site {
        for v in &chan[range.clone()] {
            data.push((*v)?);
        }
    }
    Tensor::new(vec![site.len(), range.len()], data).ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recording(rate: f64, source: Vec<Vec<Option<f32>>>, labels: Vec<u16>) -> Recording {
        let n = labels.len();
        Recording {
            subject: 1,
            rate_hz: rate,
            timestamps: (0..n).map(|i| i as f64 / rate).collect(),
            target: source.clone(),
            source,
            labels,
            classes: FiveClass::names(),
            units: Units::Canonical,
        }
    }

    #[test]
    fn midpoint_gap_is_filled() {
        let mut c = vec![Some(1.0), None, Some(3.0)];
        fill_gaps(&mut c, 1);
        assert_eq!(c, vec![Some(1.0), Some(2.0), Some(3.0)]);
    }

    #[test]
    fn gap_longer_than_max_untouched() {
        let mut c = vec![Some(1.0), None, None, Some(4.0)];
        fill_gaps(&mut c, 1);
        assert_eq!(c, vec![Some(1.0), None, None, Some(4.0)]);
        fill_gaps(&mut c, 2);
        assert_eq!(c, vec![Some(1.0), Some(2.0), Some(3.0), Some(4.0)]);
    }

    #[test]
    fn leading_and_trailing_runs_untouched() {
        let mut c = vec![None, Some(1.0), Some(2.0), None];
        fill_gaps(&mut c, 5);
        assert_eq!(c, vec![None, Some(1.0), Some(2.0), None]);
    }

    #[test]
    fn conversion_applies_scale_and_refuses_twice() {
        let d = DatasetDescriptor::from_toml(super::super::descriptor::tests::FIXTURE).unwrap();
        let mut r = recording(30.0, vec![vec![Some(1000.0)], vec![Some(2.0)]], vec![0]);
        r.units = Units::Native;
        let c = convert_units(&r, &d).unwrap();
        assert!((c.source[0][0].unwrap() - 9.80665).abs() < 1e-5);
        assert_eq!(c.target[1][0], Some(2.0));
        assert!(matches!(convert_units(&c, &d), Err(DataError::AlreadyConverted)));
    }

    #[test]
    fn resample_at_target_rate_is_identity() {
        let r = recording(30.0, vec![(0..50).map(|i| Some(i as f32 * 0.37)).collect()], vec![0; 50]);
        let out = resample(&r, 30.0).unwrap();
        assert_eq!(out, r);
    }

    #[test]
    fn ramp_at_100hz() {
        let r = recording(100.0, vec![(0..101).map(|i| Some(i as f32 / 100.0)).collect()], vec![0; 101]);
        let out = resample(&r, 30.0).unwrap();
        assert_eq!(out.len(), 31);
        assert!((out.source[0][1].unwrap() as f64 - 1.0 / 30.0).abs() < 1e-6);
        assert!((out.timestamps[1] - 1.0 / 30.0).abs() < 1e-12);
    }

    #[test]
    fn fifty_hz_output_length() {
        // 50 Hz, 437 samples → duration 8.72 s
        let n = 437;
        let r = recording(50.0, vec![(0..n).map(|i| Some((i as f32 * 0.1).sin())).collect()], vec![1; n]);
        let out = resample(&r, 30.0).unwrap();
        let duration = (n - 1) as f64 / 50.0;
        assert_eq!(out.len(), (duration * 30.0).floor() as usize + 1);
        assert_eq!(out.len(), 262);
    }

    #[test]
    fn upsampling_refused() {
        let r = recording(20.0, vec![vec![Some(0.0); 4]], vec![0; 4]);
        assert!(matches!(resample(&r, 30.0), Err(DataError::Upsample { .. })));
    }

    #[test]
    fn resample_labels_nearest_neighbour() {
        let labels: Vec<u16> = (0..100).map(|i| if i < 50 { 1 } else { 3 }).collect();
        let r = recording(100.0, vec![vec![Some(0.0); 100]], labels);
        let out = resample(&r, 30.0).unwrap();
        // t = 15/30 = 0.5 s lands exactly on sample 50
        assert_eq!(out.labels[14], 1);
        assert_eq!(out.labels[15], 3);
    }

    #[test]
    fn missing_neighbour_propagates_through_resample() {
        let mut chan: Vec<Option<f32>> = (0..10).map(|i| Some(i as f32)).collect();
        chan[2] = None;
        let r = recording(60.0, vec![chan], vec![0; 10]);
        let out = resample(&r, 30.0).unwrap();
        assert_eq!(out.source[0][1], None);
        assert_eq!(out.source[0][2], Some(4.0));
    }

    #[test]
    fn window_count_drops_remainder() {
        let r = recording(30.0, vec![vec![Some(0.5); 330]], vec![2; 330]);
        let w = windowize(&r).unwrap();
        assert_eq!(w.len(), 3);
        assert_eq!(w[2].start_time, 200.0 / 30.0);
        assert!(w.iter().all(|p| p.source.shape() == [1, 100] && p.label == Some(2)));
    }

    #[test]
    fn majority_and_tie_break() {
        let mut labels = vec![4u16; 60];
        labels.extend(vec![2u16; 40]);
        let r = recording(30.0, vec![vec![Some(0.0); 100]], labels);
        assert_eq!(windowize(&r).unwrap()[0].label, Some(4));

        let mut labels = vec![3u16; 50];
        labels.extend(vec![1u16; 50]);
        let r = recording(30.0, vec![vec![Some(0.0); 100]], labels);
        assert_eq!(windowize(&r).unwrap()[0].label, Some(1));
    }

    #[test]
    fn windows_with_missing_values_dropped() {
        let mut chan = vec![Some(1.0); 200];
        chan[150] = None;
        let r = recording(30.0, vec![chan], vec![0; 200]);
        let w = windowize(&r).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].start_time, 0.0);
    }

    #[test]
    fn unit_conversion_commutes_with_resampling() {
        let d = DatasetDescriptor::from_toml(super::super::descriptor::tests::FIXTURE).unwrap();
        let n = 250;
        let chan = |phase: f32| (0..n).map(|i| Some(((i as f32) * 0.05 + phase).sin() * 800.0)).collect::<Vec<_>>();
        let mut r = recording(100.0, vec![chan(0.0), chan(1.0)], vec![0; n]);
        r.target = vec![chan(2.0), chan(3.0)];
        r.units = Units::Native;
        let a = resample(&convert_units(&r, &d).unwrap(), 30.0).unwrap();
        let b = convert_units(&resample(&r, 30.0).unwrap(), &d).unwrap();
        for (ca, cb) in a.source.iter().chain(&a.target).zip(b.source.iter().chain(&b.target)) {
            for (x, y) in ca.iter().zip(cb) {
                let (x, y) = (x.unwrap() as f64, y.unwrap() as f64);
                assert!((x - y).abs() <= 1e-6 * x.abs().max(1.0), "{} vs {}", x, y);
            }
        }
    }
}
