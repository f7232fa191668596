use std::collections::HashMap;
use std::path::Path;

use super::{DataError, DatasetDescriptor, Delimiter, Recording, SiteChannels, SiteSpec, Units};

/// Reads one raw dataset file into a native-rate, native-unit recording.
///
/// The subject id is the first run of digits in the file name (`0` when
/// there is none).
pub fn parse_recording(path: impl AsRef<Path>, descriptor: &DatasetDescriptor) -> Result<Recording, DataError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let subject = subject_from_name(&name);
    parse_recording_str(&text, &name, subject, descriptor)
}

fn subject_from_name(name: &str) -> u32 {
    let digits: String = name
        .chars()
        .skip_while(|c| !c.is_ascii_digit())
        .take_while(|c| c.is_ascii_digit())
        .collect();
    digits.parse().unwrap_or(0)
}

/// Integer-valued codes compare equal regardless of formatting (`"4"`, `"4.0"`).
fn normalize_code(token: &str) -> String {
    match token.parse::<f64>() {
        Ok(v) if v.fract() == 0.0 && v.is_finite() => format!("{}", v as i64),
        _ => token.to_string(),
    }
}

pub fn parse_recording_str(text: &str, file: &str, subject: u32, descriptor: &DatasetDescriptor) -> Result<Recording, DataError> {
    descriptor.validate()?;
    let codes: HashMap<String, u16> = descriptor
        .activities
        .iter()
        .enumerate()
        .map(|(i, a)| (normalize_code(&a.code), i as u16))
        .collect();
    let new_site = |site: &SiteSpec| -> SiteChannels { vec![Vec::new(); site.channels.len()] };
    let mut source = new_site(&descriptor.source);
    let mut target = new_site(&descriptor.target);
    let mut timestamps = Vec::new();
    let mut labels = Vec::new();
    let err = |line: usize, message: String| DataError::Parse {
        file: file.to_string(),
        line,
        message,
    };

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = match descriptor.delimiter {
            Delimiter::Whitespace => line.split_whitespace().collect(),
            Delimiter::Comma => line.split(',').map(str::trim).collect(),
            Delimiter::Tab => line.split('\t').map(str::trim).collect(),
        };
        if fields.len() < descriptor.columns {
            return Err(err(
                line_no,
                format!("expected {} columns, found {}", descriptor.columns, fields.len()),
            ));
        }
        let value = |col: usize| -> Result<Option<f32>, DataError> {
            let token = fields[col];
            if descriptor.missing.iter().any(|m| m == token) {
                return Ok(None);
            }
            let v: f32 = token
                .parse()
                .map_err(|_| err(line_no, format!("column {}: cannot parse {:?} as a number", col, token)))?;
            if !v.is_finite() {
                return Ok(None);
            }
            Ok(Some(v))
        };
        let t = match descriptor.timestamp_column {
            Some(col) => match value(col)? {
                Some(v) => v as f64 * descriptor.timestamp_scale,
                None => return Err(err(line_no, "missing timestamp".into())),
            },
            None => timestamps.len() as f64 / descriptor.sample_rate_hz,
        };
        if let Some(&prev) = timestamps.last() {
            if t <= prev {
                return Err(err(line_no, format!("timestamp {} does not increase", t)));
            }
        }
        let label_token = fields[descriptor.label_column];
        let label = *codes.get(&normalize_code(label_token)).ok_or_else(|| DataError::UnknownLabel {
            file: file.to_string(),
            line: line_no,
            label: label_token.to_string(),
        })?;
        for (chan, spec) in source.iter_mut().zip(&descriptor.source.channels) {
            chan.push(value(spec.column)?);
        }
        for (chan, spec) in target.iter_mut().zip(&descriptor.target.channels) {
            chan.push(value(spec.column)?);
        }
        timestamps.push(t);
        labels.push(label);
    }
    Ok(Recording {
        subject,
        rate_hz: descriptor.sample_rate_hz,
        timestamps,
        source,
        target,
        labels,
        classes: descriptor.activity_names(),
        units: Units::Native,
    })
}

#[cfg(test)]
mod tests {
    use super::super::descriptor::tests::FIXTURE;
    use super::*;

    fn descriptor() -> DatasetDescriptor {
        DatasetDescriptor::from_toml(FIXTURE).unwrap()
    }

    #[test]
    fn well_formed_three_lines() {
        let text = "0 1000 0 1.0 2.0 1\n33 1000 10 1.5 2.5 1\n67 990 20 1.7 2.7 2\n";
        let r = parse_recording_str(text, "S1.dat", 1, &descriptor()).unwrap();
        assert_eq!(r.len(), 3);
        assert_eq!(r.source.len(), 2);
        assert!(r.source.iter().chain(&r.target).all(|c| c.len() == 3));
        assert_eq!(r.source[0][2], Some(990.0));
        assert!((r.timestamps[1] - 0.033).abs() < 1e-12);
        assert_eq!(r.labels, vec![1, 1, 2]);
        assert_eq!(r.units, Units::Native);
    }

    #[test]
    fn sentinel_marks_only_that_sample_missing() {
        let text = "0 1 2 3 4 0\n33 NaN 2 3 4 0\n";
        let r = parse_recording_str(text, "f", 0, &descriptor()).unwrap();
        assert_eq!(r.source[0], vec![Some(1.0), None]);
        assert_eq!(r.source[1], vec![Some(2.0), Some(2.0)]);
        assert_eq!(r.target[0], vec![Some(3.0), Some(3.0)]);
    }

    #[test]
    fn short_row_cites_line() {
        let text = "0 1 2 3 4 0\n33 1 2 3\n";
        match parse_recording_str(text, "f.dat", 0, &descriptor()).unwrap_err() {
            DataError::Parse { line, message, file } => {
                assert_eq!(line, 2);
                assert_eq!(file, "f.dat");
                assert!(message.contains("expected 6 columns, found 4"), "{}", message);
            }
            other => panic!("{:?}", other),
        }
    }

    #[test]
    fn unparseable_number_cites_line() {
        let text = "0 1 2 3 4 0\n33 1 x 3 4 0\n";
        assert!(matches!(
            parse_recording_str(text, "f", 0, &descriptor()),
            Err(DataError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn unknown_label_is_named() {
        let text = "0 1 2 3 4 7\n";
        match parse_recording_str(text, "f", 0, &descriptor()).unwrap_err() {
            DataError::UnknownLabel { label, line, .. } => {
                assert_eq!(label, "7");
                assert_eq!(line, 1);
            }
            other => panic!("{:?}", other),
        }
    }

    #[test]
    fn float_formatted_codes_match() {
        let text = "0 1 2 3 4 2.0\n";
        let r = parse_recording_str(text, "f", 0, &descriptor()).unwrap();
        assert_eq!(r.labels, vec![2]);
    }

    #[test]
    fn subject_from_file_name() {
        assert_eq!(subject_from_name("S3-ADL1.dat"), 3);
        assert_eq!(subject_from_name("subject108.dat"), 108);
        assert_eq!(subject_from_name("mHealth_subject10.log"), 10);
        assert_eq!(subject_from_name("none.txt"), 0);
    }
}
