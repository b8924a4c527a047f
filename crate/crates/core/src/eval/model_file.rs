//! Versioned plain-text model files.
//!
//! ```text
//! krsml-model 1
//! learner KR_SML
//! input_dim <d>
//! dim <p>
//! sigma <f64>
//! k_neighbors <usize>
//! means <d>
//! <d values>
//! scales <d>
//! <d values>
//! pca_basis none            | pca_basis <d> <p>  followed by d rows of p values
//! metric <p*p>
//! <p rows of p values, row-major>
//! training <n> <p>
//! <n rows: p feature values then the target>
//! end
//! ```
//!
//! Floats are written in Rust's shortest round-trip form, so a loaded model
//! predicts bit-for-bit like the saved one.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::data::Standardizer;
use crate::dataset::Dataset;
use crate::engine::KernelConfig;
use crate::error::{Error, Result};
use crate::learners::{Learner, Model};
use crate::metric::MetricMatrix;

pub const MODEL_FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "krsml-model";

fn push_row(out: &mut String, values: impl IntoIterator<Item = f64>) {
    let line: Vec<String> = values.into_iter().map(|v| v.to_string()).collect();
    out.push_str(&line.join(" "));
    out.push('\n');
}

/// Serializes `model` to the text format.
pub fn write_model(model: &Model) -> String {
    let mut out = String::new();
    let d = model.input_dim();
    let p = model.metric().dim();
    let _ = writeln!(out, "{MAGIC} {MODEL_FORMAT_VERSION}");
    let _ = writeln!(out, "learner {}", model.learner().tag());
    let _ = writeln!(out, "input_dim {d}");
    let _ = writeln!(out, "dim {p}");
    let _ = writeln!(out, "sigma {}", model.kernel().sigma);
    let _ = writeln!(out, "k_neighbors {}", model.kernel().k_neighbors);
    let _ = writeln!(out, "means {d}");
    push_row(&mut out, model.standardizer().means.iter().copied());
    let _ = writeln!(out, "scales {d}");
    push_row(&mut out, model.standardizer().scales.iter().copied());
    match model.pca_basis() {
        None => out.push_str("pca_basis none\n"),
        Some(b) => {
            let _ = writeln!(out, "pca_basis {} {}", b.nrows(), b.ncols());
            for r in 0..b.nrows() {
                push_row(&mut out, b.row(r).iter().copied());
            }
        }
    }
    let m = model.metric().entries();
    let _ = writeln!(out, "metric {}", p * p);
    for r in 0..p {
        push_row(&mut out, m.row(r).iter().copied());
    }
    let train = model.training_data();
    let _ = writeln!(out, "training {} {p}", train.len());
    for (row, y) in train.rows().zip(train.targets()) {
        push_row(&mut out, row.iter().copied().chain(std::iter::once(*y)));
    }
    out.push_str("end\n");
    out
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    read_model(&text)
}

struct Tokens<'a> {
    items: Vec<&'a str>,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            items: text.split_whitespace().collect(),
            pos: 0,
        }
    }

    fn next(&mut self, what: &str) -> Result<&'a str> {
        let tok = self
            .items
            .get(self.pos)
            .ok_or_else(|| Error::Format(format!("unexpected end of file, expected {what}")))?;
        self.pos += 1;
        Ok(tok)
    }

    fn keyword(&mut self, kw: &str) -> Result<()> {
        let tok = self.next(kw)?;
        if tok != kw {
            return Err(Error::Format(format!("expected '{kw}', found '{tok}'")));
        }
        Ok(())
    }

    fn number<T: std::str::FromStr>(&mut self, what: &str) -> Result<T> {
        let tok = self.next(what)?;
        tok.parse()
            .map_err(|_| Error::Format(format!("cannot parse '{tok}' as {what}")))
    }

    /// Exactly `count` numbers, followed by a non-numeric token or EOF.
    fn block(&mut self, section: &str, count: usize) -> Result<Vec<f64>> {
        let mut values = Vec::with_capacity(count);
        while let Some(v) = self.items.get(self.pos).and_then(|t| t.parse::<f64>().ok()) {
            values.push(v);
            self.pos += 1;
        }
        if values.len() != count {
            return Err(Error::EntryCount {
                section: section.into(),
                expected: count,
                found: values.len(),
            });
        }
        Ok(values)
    }
}

/// Parses the text format. Any truncation or count mismatch is an error; no
/// partial model is returned.
pub fn read_model(text: &str) -> Result<Model> {
    let mut t = Tokens::new(text);
    t.keyword(MAGIC)?;
    let version = t.next("format version")?;
    if version.parse::<u32>().ok() != Some(MODEL_FORMAT_VERSION) {
        return Err(Error::Version {
            expected: MODEL_FORMAT_VERSION,
            found: version.to_string(),
        });
    }
    t.keyword("learner")?;
    let learner: Learner = t.next("learner tag")?.parse()?;
    t.keyword("input_dim")?;
    let d: usize = t.number("input_dim")?;
    t.keyword("dim")?;
    let p: usize = t.number("dim")?;
    t.keyword("sigma")?;
    let sigma: f64 = t.number("sigma")?;
    t.keyword("k_neighbors")?;
    let k: usize = t.number("k_neighbors")?;
    let kernel = KernelConfig::new(k, sigma)?;

    t.keyword("means")?;
    let nm: usize = t.number("means count")?;
    if nm != d {
        return Err(Error::EntryCount {
            section: "means".into(),
            expected: d,
            found: nm,
        });
    }
    let means = t.block("means", d)?;
    t.keyword("scales")?;
    let ns: usize = t.number("scales count")?;
    if ns != d {
        return Err(Error::EntryCount {
            section: "scales".into(),
            expected: d,
            found: ns,
        });
    }
    let scales = t.block("scales", d)?;

    t.keyword("pca_basis")?;
    let pca_basis = if t.items.get(t.pos) == Some(&"none") {
        t.pos += 1;
        None
    } else {
        let rows: usize = t.number("pca rows")?;
        let cols: usize = t.number("pca columns")?;
        let values = t.block("pca_basis", rows * cols)?;
        Some(DMatrix::from_row_slice(rows, cols, &values))
    };

    t.keyword("metric")?;
    let count: usize = t.number("metric entry count")?;
    if count != p * p {
        return Err(Error::EntryCount {
            section: "metric".into(),
            expected: p * p,
            found: count,
        });
    }
    let entries = t.block("metric", p * p)?;
    let metric = MetricMatrix::from_psd(DMatrix::from_row_slice(p, p, &entries))?;

    t.keyword("training")?;
    let n: usize = t.number("training row count")?;
    let tp: usize = t.number("training dimension")?;
    if tp != p {
        return Err(Error::Format(format!(
            "training dimension {tp} differs from metric dimension {p}"
        )));
    }
    let values = t.block("training", n * (p + 1))?;
    t.keyword("end")?;
    if t.pos != t.items.len() {
        return Err(Error::Format("trailing content after 'end'".into()));
    }

    let mut features = Vec::with_capacity(n * p);
    let mut targets = Vec::with_capacity(n);
    for row in values.chunks_exact(p + 1) {
        features.extend_from_slice(&row[..p]);
        targets.push(row[p]);
    }
    let training = Dataset::new(features, targets, p)?;
    let standardizer = Standardizer { means, scales };
    if standardizer.scales.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::Format("standardizer scales must be positive".into()));
    }
    Model::assemble(metric, training, kernel, standardizer, learner, pca_basis)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{kr_model, krpca_train, TrainConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample_dataset(seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..25)
            .map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let targets = rows.iter().map(|r| r[0].sin() + 0.1 * r[1]).collect();
        Dataset::from_rows(&rows, targets).unwrap()
    }

    #[test]
    fn round_trip_predicts_identically() {
        let ds = sample_dataset(1);
        let cfg = TrainConfig {
            kernel: KernelConfig::new(4, 0.6).unwrap(),
            ..TrainConfig::default()
        };
        for model in [
            kr_model(&ds, &cfg.kernel).unwrap(),
            krpca_train(&ds, &cfg, 0.8).unwrap(),
        ] {
            let back = read_model(&write_model(&model)).unwrap();
            assert_eq!(back, model);
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            for _ in 0..10 {
                let q: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
                assert_eq!(back.predict_row(&q).unwrap(), model.predict_row(&q).unwrap());
            }
        }
    }

    #[test]
    fn truncated_file_fails_closed() {
        let ds = sample_dataset(3);
        let text = write_model(&kr_model(&ds, &KernelConfig::default()).unwrap());
        let cut = &text[..text.len() * 3 / 4];
        let cut = &cut[..cut.rfind('\n').unwrap()];
        assert!(matches!(read_model(cut), Err(Error::EntryCount { .. })));
        let no_end = text.trim_end().trim_end_matches("end");
        assert!(read_model(no_end).is_err());
    }

    #[test]
    fn version_is_checked() {
        let ds = sample_dataset(4);
        let text = write_model(&kr_model(&ds, &KernelConfig::default()).unwrap());
        let bumped = text.replacen("krsml-model 1", "krsml-model 2", 1);
        assert!(matches!(read_model(&bumped), Err(Error::Version { .. })));
    }

    #[test]
    fn hand_written_identity_model() {
        let text = "krsml-model 1\nlearner KR\ninput_dim 2\ndim 2\nsigma 0.5\nk_neighbors 2\n\
                    means 2\n0 0\nscales 2\n1 1\npca_basis none\nmetric 4\n1 0\n0 1\n\
                    training 3 2\n0 0 1\n1 0 2\n0 2 5\nend\n";
        let model = read_model(text).unwrap();
        let ds = Dataset::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 2.0]], vec![1.0, 2.0, 5.0])
            .unwrap();
        let direct = crate::engine::predict_one(
            &[0.4, 0.3],
            &ds,
            &MetricMatrix::identity(2),
            &KernelConfig::new(2, 0.5).unwrap(),
            None,
        )
        .unwrap();
        assert_eq!(model.predict_row(&[0.4, 0.3]).unwrap(), direct);

        let short = text.replace("metric 4\n1 0\n0 1\n", "metric 4\n1 0\n0\n");
        assert!(matches!(read_model(&short), Err(Error::EntryCount { .. })));
    }
}
