//! XYZL text format.
//!
//! ```text
//! # xyzl C=<class_count> F=<feature_count> labels=<0|1>
//! x y z f1 ... fF [label]
//! ```
//!
//! The header is optional. Without it every row must carry a trailing label
//! column, the feature count is inferred from the column count and the class
//! count is `max(label) + 1`.

use std::fmt::Write as _;
use std::path::Path;

use super::{PointCloud, IGNORE};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
struct Header {
    classes: Option<usize>,
    features: Option<usize>,
    labelled: bool,
}

fn parse_header(line: &str, path: &str, lineno: usize) -> Result<Header> {
    let mut header = Header {
        classes: None,
        features: None,
        labelled: true,
    };
    let bad = |msg: String| Error::Parse {
        path: path.to_string(),
        line: lineno,
        msg,
    };
    for tok in line.trim_start_matches('#').split_whitespace().skip(1) {
        let (key, value) = tok
            .split_once('=')
            .ok_or_else(|| bad(format!("malformed header token `{tok}`")))?;
        let value: usize = value
            .parse()
            .map_err(|_| bad(format!("header value `{value}` is not an integer")))?;
        match key {
            "C" => header.classes = Some(value),
            "F" => header.features = Some(value),
            "labels" if value <= 1 => header.labelled = value == 1,
            _ => return Err(bad(format!("unknown header entry `{tok}`"))),
        }
    }
    Ok(header)
}

/// Parse XYZL text. `path` is only used in error messages.
pub fn parse_cloud(text: &str, path: &str) -> Result<PointCloud> {
    let mut header: Option<Header> = None;
    let mut positions = Vec::new();
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut feature_count: Option<usize> = None;

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('#') {
            if positions.is_empty()
                && header.is_none()
                && line
                    .strip_prefix('#')
                    .is_some_and(|r| r.trim_start().starts_with("xyzl"))
            {
                header = Some(parse_header(line, path, lineno)?);
            }
            continue;
        }
        let bad = |msg: String| Error::Parse {
            path: path.to_string(),
            line: lineno,
            msg,
        };
        let cols: Vec<&str> = line.split_whitespace().collect();
        let labelled = header.is_none_or(|h| h.labelled);
        let label_cols = usize::from(labelled);
        let f = match (header.and_then(|h| h.features), feature_count) {
            (Some(f), _) => f,
            (None, Some(f)) => f,
            (None, None) => {
                if cols.len() < 4 + label_cols {
                    return Err(bad(format!(
                        "expected at least {} columns, found {}",
                        4 + label_cols,
                        cols.len()
                    )));
                }
                cols.len() - 3 - label_cols
            }
        };
        feature_count = Some(f);
        if cols.len() != 3 + f + label_cols {
            return Err(bad(format!(
                "expected {} columns, found {}",
                3 + f + label_cols,
                cols.len()
            )));
        }
        let mut vals = [0.0; 3];
        for (a, v) in vals.iter_mut().enumerate() {
            *v = parse_real(cols[a]).map_err(bad)?;
        }
        positions.push(vals);
        for c in &cols[3..3 + f] {
            features.push(parse_real(c).map_err(bad)?);
        }
        if labelled {
            let l: u8 = cols[3 + f].parse().map_err(|_| {
                bad(format!(
                    "label `{}` is not an integer in [0, 255]",
                    cols[3 + f]
                ))
            })?;
            labels.push(l);
        }
    }

    if positions.is_empty() {
        return Err(Error::NoPoints);
    }
    let labelled = header.is_none_or(|h| h.labelled);
    let class_count = match header.and_then(|h| h.classes) {
        Some(c) => c,
        None => labels
            .iter()
            .filter(|&&l| l != IGNORE)
            .map(|&l| l as usize + 1)
            .max()
            .unwrap_or(2)
            .max(2),
    };
    PointCloud::new(
        positions,
        features,
        feature_count.unwrap_or(1),
        labelled.then_some(labels),
        class_count,
    )
}

fn parse_real(tok: &str) -> std::result::Result<f64, String> {
    match tok.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) => Err(format!("non-finite value `{tok}`")),
        Err(_) => Err(format!("`{tok}` is not a number")),
    }
}

pub fn load_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io("reading cloud", path, e))?;
    parse_cloud(&text, &path.display().to_string())
}

/// Render a cloud as XYZL text (always with a header). Values use the shortest
/// representation that round-trips exactly.
pub fn write_cloud(cloud: &PointCloud) -> String {
    let labels = cloud.labels();
    let mut out = String::with_capacity(cloud.len() * 48);
    let _ = writeln!(
        out,
        "# xyzl C={} F={} labels={}",
        cloud.class_count(),
        cloud.feature_count(),
        u8::from(labels.is_some())
    );
    for (i, p) in cloud.positions().iter().enumerate() {
        let _ = write!(out, "{} {} {}", p[0], p[1], p[2]);
        for f in cloud.feature_row(i) {
            let _ = write!(out, " {f}");
        }
        if let Some(l) = labels {
            let _ = write!(out, " {}", l[i]);
        }
        out.push('\n');
    }
    out
}

pub fn save_cloud(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_cloud(cloud)).map_err(|e| Error::io("writing cloud", path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_row_file() {
        let c = parse_cloud("0 0 0 1.0 0\n1 0 0 0.5 1\n0 1 0 0.2 0\n", "t").unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.feature_count(), 1);
        assert_eq!(c.class_count(), 2);
        assert_eq!(c.labels(), Some(&[0u8, 1, 0][..]));
        assert_eq!(c.features(), &[1.0, 0.5, 0.2]);
    }

    #[test]
    fn nan_row_names_line() {
        let err = parse_cloud("0 0 0 1 0\n0 0 nan 1.0 0\n", "t").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn empty_file_has_no_points() {
        let err = parse_cloud("", "t").unwrap_err();
        assert_eq!(err.to_string(), "no points");
        assert!(matches!(
            parse_cloud("# xyzl C=3 F=1 labels=1\n", "t"),
            Err(Error::NoPoints)
        ));
    }

    #[test]
    fn header_class_count_is_enforced() {
        let err = parse_cloud("# xyzl C=2 F=1 labels=1\n0 0 0 1 2\n", "t").unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        let c = parse_cloud("# xyzl C=9 F=1 labels=1\n0 0 0 1 2\n", "t").unwrap();
        assert_eq!(c.class_count(), 9);
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let err = parse_cloud("0 0 0 1 0\n0 0 0 1 1 0\n", "t").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn unlabelled_cloud_omits_label_column() {
        let c = PointCloud::new(vec![[1.5, 2.0, -3.25]], vec![0.5, 7.0], 2, None, 4).unwrap();
        let text = write_cloud(&c);
        assert!(text.starts_with("# xyzl C=4 F=2 labels=0\n"));
        assert_eq!(text.lines().nth(1).unwrap().split_whitespace().count(), 5);
        assert_eq!(parse_cloud(&text, "t").unwrap(), c);
    }

    #[test]
    fn ignore_label_survives() {
        let c = PointCloud::new(
            vec![[0.0; 3], [1.0; 3]],
            vec![0.0, 1.0],
            1,
            Some(vec![IGNORE, 1]),
            3,
        )
        .unwrap();
        let back = parse_cloud(&write_cloud(&c), "t").unwrap();
        assert_eq!(back.labels(), Some(&[IGNORE, 1][..]));
    }
}
