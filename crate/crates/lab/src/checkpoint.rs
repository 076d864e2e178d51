//! Plain-text model checkpoints.
//!
//! ```text
//! icgps-checkpoint 1
//! bins <K>
//! latent_bound <L>
//! demand_bound <B>
//! widths <w0> <w1> ... <wn>
//! input_mean <w0 values>
//! input_std <w0 values>
//! params <count>
//! <one parameter per line, layer by layer: weights row-major by input, then biases>
//! ```
//!
//! Numbers use the shortest decimal form that parses back to the same `f64`.

use std::fmt::Write as _;
use std::path::Path;

use icgps_core::flow::{CompletionModel, FlowShape, HyperNetwork};

use crate::error::{LabError, Result};

const MAGIC: &str = "icgps-checkpoint 1";

fn join(v: &[f64]) -> String {
    let mut s = String::new();
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{x:?}").unwrap();
    }
    s
}

pub fn to_text(model: &CompletionModel) -> String {
    let net = &model.net;
    let mut s = String::new();
    writeln!(s, "{MAGIC}").unwrap();
    writeln!(s, "bins {}", model.shape.bins).unwrap();
    writeln!(s, "latent_bound {:?}", model.shape.latent_bound).unwrap();
    writeln!(s, "demand_bound {:?}", model.shape.demand_bound).unwrap();
    let widths: Vec<String> = net.widths().iter().map(|w| w.to_string()).collect();
    writeln!(s, "widths {}", widths.join(" ")).unwrap();
    writeln!(s, "input_mean {}", join(net.input_mean())).unwrap();
    writeln!(s, "input_std {}", join(net.input_std())).unwrap();
    writeln!(s, "params {}", net.params().len()).unwrap();
    for p in net.params() {
        writeln!(s, "{p:?}").unwrap();
    }
    s
}

pub fn from_text(text: &str) -> std::result::Result<CompletionModel, String> {
    let mut lines = text.lines();
    let mut next = |what: &str| lines.next().ok_or_else(|| format!("truncated before {what}"));
    if next("header")?.trim() != MAGIC {
        return Err("not an icgps checkpoint (bad header)".into());
    }
    fn field<'a>(line: &'a str, key: &str) -> std::result::Result<&'a str, String> {
        line.strip_prefix(key)
            .and_then(|r| r.strip_prefix(' ').or(if r.is_empty() { Some("") } else { None }))
            .ok_or_else(|| format!("expected `{key}`, found `{line}`"))
    }
    fn num<T: std::str::FromStr>(s: &str) -> std::result::Result<T, String> {
        s.trim().parse().map_err(|_| format!("bad number `{s}`"))
    }
    fn nums(s: &str) -> std::result::Result<Vec<f64>, String> {
        s.split_whitespace().map(num).collect()
    }
    let bins: usize = num(field(next("bins")?, "bins")?)?;
    let latent: f64 = num(field(next("latent_bound")?, "latent_bound")?)?;
    let bound: f64 = num(field(next("demand_bound")?, "demand_bound")?)?;
    let widths: Vec<usize> = field(next("widths")?, "widths")?
        .split_whitespace()
        .map(num)
        .collect::<std::result::Result<_, _>>()?;
    let mean = nums(field(next("input_mean")?, "input_mean")?)?;
    let std = nums(field(next("input_std")?, "input_std")?)?;
    let count: usize = num(field(next("params")?, "params")?)?;
    let mut params = Vec::with_capacity(count);
    for i in 0..count {
        params.push(num(next(&format!("parameter {i}"))?)?);
    }
    let shape = FlowShape::new(bins, latent, bound).map_err(|e| e.to_string())?;
    let net = HyperNetwork::from_parts(widths, params, mean, std).map_err(|e| e.to_string())?;
    CompletionModel::from_parts(shape, net).map_err(|e| e.to_string())
}

pub fn load(path: &Path) -> Result<CompletionModel> {
    let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    from_text(&text).map_err(|msg| LabError::BadArtifact {
        path: path.to_path_buf(),
        msg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use icgps_core::rng::from_seed;

    #[test]
    fn round_trip_is_exact() {
        let shape = FlowShape::new(6, 4.0, 7.5).unwrap();
        let mut rng = from_seed(4);
        let mut m = CompletionModel::new(shape, 25, &[8, 5], &mut rng).unwrap();
        m.net.set_normalization(&[0.1; 25], &[1.0 / 3.0; 25]).unwrap();
        let text = to_text(&m);
        let back = from_text(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(to_text(&back), text);
    }

    #[test]
    fn truncation_and_garbage_are_reported() {
        let shape = FlowShape::new(4, 4.0, 5.0).unwrap();
        let m = CompletionModel::new(shape, 25, &[3], &mut from_seed(1)).unwrap();
        let text = to_text(&m);
        let cut: String = text.lines().take(12).map(|l| format!("{l}\n")).collect();
        assert!(from_text(&cut).unwrap_err().contains("truncated"));
        assert!(from_text("hello").is_err());
        let bad = text.replacen("bins 4", "bins x", 1);
        assert!(from_text(&bad).is_err());
    }
}
