//! Tab-separated text formats. UTF-8, one record per `\n`-terminated line.

use std::fmt::Write as _;

use crate::calibration::CalibrationModel;
use crate::error::{Error, Result};
use crate::face::BoundingBox;
use crate::scalar::Real;
use crate::trials::{Label, ScoreSet, Trial, TrialKey, TrialList};

/// Splits `text` into lines, checking line endings and field counts.
fn records<'a>(text: &'a str, source: &str, fields: usize) -> Result<Vec<(usize, Vec<&'a str>)>> {
    if text.is_empty() {
        return Ok(Vec::new());
    }
    let body = text
        .strip_suffix('\n')
        .ok_or_else(|| Error::parse(source, text.lines().count(), "missing final newline"))?;
    body.split('\n')
        .enumerate()
        .map(|(i, line)| {
            let n = i + 1;
            if line.contains('\r') {
                return Err(Error::parse(source, n, "carriage return in line"));
            }
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != fields {
                return Err(Error::parse(
                    source,
                    n,
                    format!("expected {fields} tab-separated fields, found {}", parts.len()),
                ));
            }
            if let Some(pos) = parts.iter().position(|p| p.is_empty()) {
                return Err(Error::parse(source, n, format!("field {} is empty", pos + 1)));
            }
            Ok((n, parts))
        })
        .collect()
}

fn check_id(id: &str, what: &str) -> Result<()> {
    if id.is_empty() || id.contains(['\t', '\n', '\r']) {
        return Err(Error::Format(format!("{what} {id:?} cannot be written to a TSV file")));
    }
    Ok(())
}

/// Strict decimal: optional `-`, digits, optional `.digits`.
fn parse_decimal(s: &str) -> Option<f64> {
    let digits = s.strip_prefix('-').unwrap_or(s);
    let (int, frac) = match digits.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (digits, None),
    };
    let all_digits = |p: &str| !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit());
    if !all_digits(int) || frac.is_some_and(|f| !all_digits(f)) {
        return None;
    }
    s.parse().ok()
}

/// Fixed 6-digit decimal as used in score files.
pub fn format_score(v: f64) -> String {
    format!("{v:.6}")
}

pub fn parse_trials(text: &str, source: &str) -> Result<TrialList> {
    let mut trials = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (n, f) in records(text, source, 2)? {
        let t = Trial::new(f[0], f[1]);
        if !seen.insert(t.clone()) {
            return Err(Error::parse(source, n, format!("duplicate trial {t}")));
        }
        trials.push(t);
    }
    if trials.is_empty() {
        return Err(Error::parse(source, 0, "no trials"));
    }
    TrialList::new(trials)
}

pub fn format_trials(list: &TrialList) -> Result<String> {
    let mut out = String::new();
    for t in list.trials() {
        check_id(&t.model, "model id")?;
        check_id(&t.segment, "segment id")?;
        let _ = writeln!(out, "{}\t{}", t.model, t.segment);
    }
    Ok(out)
}

pub fn parse_key(text: &str, source: &str) -> Result<TrialKey> {
    let mut entries = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (n, f) in records(text, source, 3)? {
        let label = Label::parse(f[2])
            .ok_or_else(|| Error::parse(source, n, format!("label must be `target` or `nontarget`, got {:?}", f[2])))?;
        let t = Trial::new(f[0], f[1]);
        if !seen.insert(t.clone()) {
            return Err(Error::parse(source, n, format!("duplicate trial {t}")));
        }
        entries.push((t, label));
    }
    if entries.is_empty() {
        return Err(Error::parse(source, 0, "no trials"));
    }
    TrialKey::new(entries)
}

pub fn format_key(key: &TrialKey) -> Result<String> {
    let mut out = String::new();
    for (t, l) in key.entries() {
        check_id(&t.model, "model id")?;
        check_id(&t.segment, "segment id")?;
        let _ = writeln!(out, "{}\t{}\t{}", t.model, t.segment, l.as_str());
    }
    Ok(out)
}

pub fn parse_scores<T: Real>(text: &str, source: &str, system_id: &str) -> Result<ScoreSet<T>> {
    let mut entries = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (n, f) in records(text, source, 3)? {
        let v = parse_decimal(f[2]).ok_or_else(|| Error::parse(source, n, format!("invalid score {:?}", f[2])))?;
        let t = Trial::new(f[0], f[1]);
        if !seen.insert(t.clone()) {
            return Err(Error::parse(source, n, format!("duplicate trial {t}")));
        }
        entries.push((t, T::lit(v)));
    }
    ScoreSet::new(system_id, entries)
}

pub fn format_scores<T: Real>(scores: &ScoreSet<T>) -> Result<String> {
    let mut out = String::new();
    for (t, s) in scores.entries() {
        check_id(&t.model, "model id")?;
        check_id(&t.segment, "segment id")?;
        let _ = writeln!(out, "{}\t{}\t{}", t.model, t.segment, format_score(s.to_f64_lossy()));
    }
    Ok(out)
}

/// Two-column id map (`utt2spk`, enrollment segment → model). Keys are unique.
pub fn parse_pairs(text: &str, source: &str) -> Result<Vec<(String, String)>> {
    let mut seen = std::collections::HashSet::new();
    records(text, source, 2)?
        .into_iter()
        .map(|(n, f)| {
            if !seen.insert(f[0]) {
                return Err(Error::parse(source, n, format!("duplicate key {:?}", f[0])));
            }
            Ok((f[0].to_string(), f[1].to_string()))
        })
        .collect()
}

pub fn format_pairs(pairs: &[(String, String)]) -> Result<String> {
    let mut out = String::new();
    for (a, b) in pairs {
        check_id(a, "id")?;
        check_id(b, "id")?;
        let _ = writeln!(out, "{a}\t{b}");
    }
    Ok(out)
}

/// One line of a detection file: `video frame x y w h embedding_ref`.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord<T: Real> {
    pub video: String,
    pub frame: usize,
    pub bbox: BoundingBox<T>,
    pub embedding_ref: String,
}

/// One line of a given-box file: `video frame x y w h`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxRecord<T: Real> {
    pub video: String,
    pub frame: usize,
    pub bbox: BoundingBox<T>,
}

fn parse_box<T: Real>(f: &[&str], source: &str, n: usize) -> Result<BoundingBox<T>> {
    let mut v = [0.0; 4];
    for (slot, s) in v.iter_mut().zip(f) {
        *slot = parse_decimal(s).ok_or_else(|| Error::parse(source, n, format!("invalid coordinate {s:?}")))?;
    }
    BoundingBox::new(T::lit(v[0]), T::lit(v[1]), T::lit(v[2]), T::lit(v[3]))
        .map_err(|e| Error::parse(source, n, e.to_string()))
}

fn parse_frame(s: &str, source: &str, n: usize) -> Result<usize> {
    if !s.bytes().all(|b| b.is_ascii_digit()) {
        return Err(Error::parse(source, n, format!("invalid frame index {s:?}")));
    }
    s.parse().map_err(|_| Error::parse(source, n, format!("invalid frame index {s:?}")))
}

fn format_coord<T: Real>(v: T) -> String {
    // Shortest round-trip form; never exponent notation for pixel values.
    let f = v.to_f64_lossy();
    if f.fract() == 0.0 && f.abs() < 1e15 {
        format!("{f:.0}")
    } else {
        format!("{f}")
    }
}

pub fn parse_detections<T: Real>(text: &str, source: &str) -> Result<Vec<DetectionRecord<T>>> {
    records(text, source, 7)?
        .into_iter()
        .map(|(n, f)| {
            Ok(DetectionRecord {
                video: f[0].to_string(),
                frame: parse_frame(f[1], source, n)?,
                bbox: parse_box(&f[2..6], source, n)?,
                embedding_ref: f[6].to_string(),
            })
        })
        .collect()
}

pub fn format_detections<T: Real>(records: &[DetectionRecord<T>]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        check_id(&r.video, "video id")?;
        check_id(&r.embedding_ref, "embedding id")?;
        let b = &r.bbox;
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.video,
            r.frame,
            format_coord(b.x),
            format_coord(b.y),
            format_coord(b.w),
            format_coord(b.h),
            r.embedding_ref
        );
    }
    Ok(out)
}

pub fn parse_boxes<T: Real>(text: &str, source: &str) -> Result<Vec<BoxRecord<T>>> {
    records(text, source, 6)?
        .into_iter()
        .map(|(n, f)| {
            Ok(BoxRecord {
                video: f[0].to_string(),
                frame: parse_frame(f[1], source, n)?,
                bbox: parse_box(&f[2..6], source, n)?,
            })
        })
        .collect()
}

pub fn format_boxes<T: Real>(records: &[BoxRecord<T>]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        check_id(&r.video, "video id")?;
        let b = &r.bbox;
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.video,
            r.frame,
            format_coord(b.x),
            format_coord(b.y),
            format_coord(b.w),
            format_coord(b.h)
        );
    }
    Ok(out)
}

/// Calibration model:
///
/// ```text
/// weight<TAB>system_id<TAB>w     (one per system, in input order)
/// bias<TAB>b
/// prior<TAB>p
/// ```
///
/// Numbers use the shortest representation that round-trips an `f64`.
pub fn format_calibration<T: Real>(model: &CalibrationModel<T>) -> Result<String> {
    let mut out = String::new();
    for (id, w) in model.system_ids.iter().zip(&model.weights) {
        check_id(id, "system id")?;
        let _ = writeln!(out, "weight\t{id}\t{:?}", w.to_f64_lossy());
    }
    let _ = writeln!(out, "bias\t{:?}", model.bias.to_f64_lossy());
    let _ = writeln!(out, "prior\t{:?}", model.prior.to_f64_lossy());
    Ok(out)
}

pub fn parse_calibration<T: Real>(text: &str, source: &str) -> Result<CalibrationModel<T>> {
    if !text.ends_with('\n') {
        return Err(Error::parse(source, text.lines().count(), "missing final newline"));
    }
    let (mut ids, mut weights) = (Vec::new(), Vec::new());
    let (mut bias, mut prior) = (None, None);
    let number = |s: &str, n: usize| -> Result<T> {
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(T::lit)
            .ok_or_else(|| Error::parse(source, n, format!("invalid number {s:?}")))
    };
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let f: Vec<&str> = line.split('\t').collect();
        match f.as_slice() {
            ["weight", id, w] if !id.is_empty() => {
                ids.push(id.to_string());
                weights.push(number(w, n)?);
            }
            ["bias", b] if bias.is_none() => bias = Some(number(b, n)?),
            ["prior", p] if prior.is_none() => prior = Some(number(p, n)?),
            _ => return Err(Error::parse(source, n, format!("unexpected line {line:?}"))),
        }
    }
    let bias = bias.ok_or_else(|| Error::parse(source, 0, "missing bias line"))?;
    let prior = prior.ok_or_else(|| Error::parse(source, 0, "missing prior line"))?;
    CalibrationModel::new(ids, weights, bias, prior)
}

/// DET points as `probit(p_fa)<TAB>probit(p_miss)`.
pub fn format_det(points: &[(f64, f64)]) -> String {
    let mut out = String::new();
    for (x, y) in points {
        let _ = writeln!(out, "{}\t{}", format_score(*x), format_score(*y));
    }
    out
}
