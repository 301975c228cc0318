//! Bound tightening on random networks under shrinking output boxes
//! `E_p = [-p/100, p/100]`.

use serde::{Deserialize, Serialize};

use crate::bt::{tighten, BtKind, BtParams, BtScheme};
use crate::error::ExperimentError;
use crate::net::he_initialize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub dims: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Output box half-widths in percent.
    pub levels: Vec<u32>,
    /// Scheme strings such as `"no-r"` or `"semi-rr(5)"`.
    pub schemes: Vec<String>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            dims: vec![3, 10, 10, 5, 1],
            seeds: (0..5).collect(),
            levels: vec![100, 75, 50, 25, 0],
            schemes: BtKind::ALL.iter().map(|k| k.name().to_lowercase()).collect(),
        }
    }
}

impl StudyConfig {
    pub fn parsed_schemes(&self) -> Result<Vec<BtScheme>, ExperimentError> {
        self.schemes
            .iter()
            .map(|s| s.parse::<BtScheme>().map_err(ExperimentError::from))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyRow {
    pub scheme: String,
    pub level: u32,
    pub mad: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyReport {
    pub rows: Vec<StudyRow>,
}

impl StudyReport {
    pub fn row(&self, scheme: &str, level: u32) -> Option<&StudyRow> {
        self.rows.iter().find(|r| r.scheme == scheme && r.level == level)
    }

    /// `100 * MAD_0 / MAD_100` per scheme, for schemes that ran both levels.
    pub fn ratios(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        for r in &self.rows {
            if r.level != 100 {
                continue;
            }
            if let Some(zero) = self.row(&r.scheme, 0) {
                let ratio = if r.mad == 0.0 { 100.0 } else { 100.0 * zero.mad / r.mad };
                out.push((r.scheme.clone(), ratio));
            }
        }
        out
    }

    /// Average MAD per scheme and level; identical seeds give identical bytes.
    pub fn mad_csv(&self) -> Result<String, ExperimentError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["scheme", "level", "mad"])?;
        for r in &self.rows {
            w.write_record([r.scheme.clone(), r.level.to_string(), format!("{:.10}", r.mad)])?;
        }
        finish(w)
    }

    pub fn ratio_csv(&self) -> Result<String, ExperimentError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["scheme", "mad_100", "mad_0", "ratio"])?;
        for (s, ratio) in self.ratios() {
            let hi = self.row(&s, 100).map_or(f64::NAN, |r| r.mad);
            let lo = self.row(&s, 0).map_or(f64::NAN, |r| r.mad);
            w.write_record([s, format!("{hi:.5}"), format!("{lo:.5}"), format!("{ratio:.2}")])?;
        }
        finish(w)
    }

    pub fn timing_csv(&self) -> Result<String, ExperimentError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["scheme", "level", "seconds"])?;
        for r in &self.rows {
            w.write_record([r.scheme.clone(), r.level.to_string(), format!("{:.6}", r.seconds)])?;
        }
        finish(w)
    }
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String, ExperimentError> {
    let bytes = w.into_inner().map_err(|e| ExperimentError::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// He-initialized networks, one per seed, tightened over `[-1, 1]^n` for
/// every scheme and output level. MAD and time are averaged over seeds.
pub fn run_output_bound_study(config: &StudyConfig) -> Result<StudyReport, ExperimentError> {
    if config.seeds.is_empty() {
        return Err(ExperimentError::Config("the study needs at least one seed".into()));
    }
    if config.levels.iter().any(|&p| p > 100) {
        return Err(ExperimentError::Config("output levels are percentages up to 100".into()));
    }
    let schemes = config.parsed_schemes()?;
    let nets = config
        .seeds
        .iter()
        .map(|&s| he_initialize(&config.dims, s))
        .collect::<Result<Vec<_>, _>>()?;
    let params = BtParams::default();
    let mut rows = Vec::new();
    for scheme in &schemes {
        for &level in &config.levels {
            let half = f64::from(level) / 100.0;
            let (mut mad, mut seconds) = (0.0, 0.0);
            for net in &nets {
                let input = vec![(-1.0, 1.0); net.input_dim()];
                let output = vec![(-half, half); net.output_dim()];
                let r = tighten(net, &input, Some(&output), scheme, &params)?;
                mad += r.mad;
                seconds += r.total_time;
            }
            let n = nets.len() as f64;
            rows.push(StudyRow {
                scheme: scheme.to_string(),
                level,
                mad: mad / n,
                seconds: seconds / n,
            });
        }
    }
    Ok(StudyReport { rows })
}
