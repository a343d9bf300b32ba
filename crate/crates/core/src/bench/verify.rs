//! Re-checks every stored adversarial example against the persisted models.

use std::collections::BTreeMap;
use std::path::Path;

use super::records::{read_manifest, read_records, MODELS_DIR, RECORDS_FILE};
use super::{BenchError, Result};
use crate::autodiff::argmax;
use crate::norm::{apply, in_box};
use crate::zoo::{load_model, Sample};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerifyReport {
    /// Succeeded records that were re-checked.
    pub checked: usize,
    /// One message per record that failed a check.
    pub failures: Vec<String>,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

/// For every succeeded record: `x + δ` is in the box, misclassified by a
/// fresh forward pass, and `‖δ‖_p` equals the recorded distance.
pub fn verify_run(dir: &Path) -> Result<VerifyReport> {
    let manifest = read_manifest(dir)?;
    let mut samples: BTreeMap<String, (crate::autodiff::MlpModel, Vec<Sample>)> = BTreeMap::new();
    for m in &manifest.models {
        let entry = load_model(&dir.join(MODELS_DIR).join(format!("{}.json", m.id)))?;
        let held_out = entry.held_out()?;
        samples.insert(m.id.clone(), (entry.model, held_out));
    }
    let mut report = VerifyReport::default();
    for r in read_records(&dir.join(RECORDS_FILE))? {
        if !r.succeeded {
            if r.best_distance.is_finite() || r.delta.is_some() {
                report
                    .failures
                    .push(format!("{}/{}/{}: unbroken record carries a perturbation", r.attack, r.model, r.sample_id));
            }
            continue;
        }
        let (model, held_out) = samples
            .get(&r.model)
            .ok_or_else(|| BenchError::MalformedRecordFile(format!("record for unknown model {}", r.model)))?;
        let at = format!("{}/{}/{}", r.attack, r.model, r.sample_id);
        let Some(sample) = usize::try_from(r.sample_id).ok().and_then(|i| held_out.get(i)) else {
            report.failures.push(format!("{at}: sample id out of range"));
            continue;
        };
        let Some(delta) = &r.delta else {
            report.failures.push(format!("{at}: succeeded without a perturbation"));
            continue;
        };
        report.checked += 1;
        if delta.len() != sample.x.len() {
            report.failures.push(format!("{at}: perturbation has the wrong dimension"));
            continue;
        }
        let candidate = apply(&sample.x, delta);
        if !in_box(&candidate) {
            report.failures.push(format!("{at}: x + delta leaves the box"));
        }
        match model.forward(&candidate) {
            Ok(z) if argmax(&z) != sample.y => {}
            Ok(_) => report.failures.push(format!("{at}: x + delta is classified correctly")),
            Err(e) => report.failures.push(format!("{at}: {e}")),
        }
        let norm = r.norm.length(delta);
        if norm != r.best_distance {
            report.failures.push(format!("{at}: |delta| = {norm}, recorded {}", r.best_distance));
        }
    }
    Ok(report)
}
