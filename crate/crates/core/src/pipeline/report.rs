use std::fmt::Write as _;

/// Cross-validated or single-split accuracy with per-fold detail.
///
/// [`Metrics::to_csv`] is a pure function of the run, so two runs with the same
/// configuration and seed give identical bytes. Wall-clock time is kept apart
/// in [`Metrics::timings`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Metrics {
    pub fold_accuracies: Vec<f64>,
    /// Mean training loss per epoch, one list per fold.
    pub loss_history: Vec<Vec<f64>>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    /// Seconds spent per named phase.
    pub timings: Vec<(String, f64)>,
}

impl Metrics {
    pub fn from_folds(fold_accuracies: Vec<f64>, loss_history: Vec<Vec<f64>>) -> Self {
        let n = fold_accuracies.len().max(1) as f64;
        let mean = fold_accuracies.iter().sum::<f64>() / n;
        let var = fold_accuracies.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
        Self {
            fold_accuracies,
            loss_history,
            mean_accuracy: mean,
            std_accuracy: var.sqrt(),
            timings: Vec::new(),
        }
    }

    /// `fold,accuracy,final_loss` per fold, then `mean` and `std` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fold,accuracy,final_loss\n");
        for (i, acc) in self.fold_accuracies.iter().enumerate() {
            let last = self
                .loss_history
                .get(i)
                .and_then(|h| h.last())
                .map_or_else(String::new, |l| l.to_string());
            let _ = writeln!(out, "{i},{acc},{last}");
        }
        let _ = writeln!(out, "mean,{},", self.mean_accuracy);
        let _ = writeln!(out, "std,{},", self.std_accuracy);
        out
    }

    /// `fold,epoch,loss` rows.
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("fold,epoch,loss\n");
        for (fold, history) in self.loss_history.iter().enumerate() {
            for (epoch, loss) in history.iter().enumerate() {
                let _ = writeln!(out, "{fold},{epoch},{loss}");
            }
        }
        out
    }

    /// `phase,seconds` rows.
    pub fn timing_csv(&self) -> String {
        let mut out = String::from("phase,seconds\n");
        for (phase, secs) in &self.timings {
            let _ = writeln!(out, "{phase},{secs:.6}");
        }
        out
    }
}

/// Mean attention mass per view over test graphs, one row per dataset.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AttentionReport {
    pub rows: Vec<(String, [f64; 3])>,
}

impl AttentionReport {
    pub fn push(&mut self, dataset: impl Into<String>, weights: [f64; 3]) {
        self.rows.push((dataset.into(), weights));
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("dataset,structural,topo,dos\n");
        for (name, w) in &self.rows {
            let _ = writeln!(out, "{name},{:.9},{:.9},{:.9}", w[0], w[1], w[2]);
        }
        out
    }

    /// Parses the CSV written by [`AttentionReport::to_csv`].
    pub fn from_csv(text: &str) -> Option<Self> {
        let mut lines = text.lines();
        if lines.next()? != "dataset,structural,topo,dos" {
            return None;
        }
        let mut report = Self::default();
        for line in lines.filter(|l| !l.is_empty()) {
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 4 {
                return None;
            }
            let w: Vec<f64> = parts[1..].iter().map(|p| p.parse().ok()).collect::<Option<_>>()?;
            report.push(parts[0], [w[0], w[1], w[2]]);
        }
        Some(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_summary() {
        let m = Metrics::from_folds(vec![1.0, 0.5], vec![vec![0.7, 0.4], vec![0.9, 0.6]]);
        assert_eq!(m.mean_accuracy, 0.75);
        assert_eq!(m.std_accuracy, 0.25);
        assert_eq!(m.to_csv(), "fold,accuracy,final_loss\n0,1,0.4\n1,0.5,0.6\nmean,0.75,\nstd,0.25,\n");
        assert_eq!(m.loss_csv().lines().count(), 5);
    }

    #[test]
    fn attention_report_golden() {
        let mut r = AttentionReport::default();
        r.push("synthetic", [0.5, 0.3, 0.2]);
        let golden = "dataset,structural,topo,dos\nsynthetic,0.500000000,0.300000000,0.200000000\n";
        assert_eq!(r.to_csv(), golden);
        assert_eq!(AttentionReport::from_csv(golden), Some(r));
        assert_eq!(AttentionReport::from_csv("a,b\n"), None);
    }
}
