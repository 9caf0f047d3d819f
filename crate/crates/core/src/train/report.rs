use std::fmt::Write;

use super::{EpochLog, Metric, MetricsReport, Summary};

/// Four decimals, or `undefined`.
pub fn format_metric(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.4}"))
}

/// `fold,recall,specificity,precision,f1,accuracy` with one row per fold,
/// then `mean`, `std` and `micro` rows.
pub fn metrics_csv(summary: &Summary) -> String {
    let mut s = String::from("fold");
    for m in Metric::ALL {
        s.push(',');
        s.push_str(m.name());
    }
    s.push('\n');
    let named = summary
        .folds
        .iter()
        .enumerate()
        .map(|(i, r)| (i.to_string(), r))
        .chain([
            ("mean".to_string(), &summary.mean),
            ("std".to_string(), &summary.std),
            ("micro".to_string(), &summary.micro),
        ]);
    for (name, r) in named {
        s.push_str(&name);
        for m in Metric::ALL {
            s.push(',');
            s.push_str(&format_metric(r.get(m)));
        }
        s.push('\n');
    }
    s
}

/// Fixed-width table, one row per model, metrics as percentages.
pub fn text_table(rows: &[(String, MetricsReport)]) -> String {
    let name_w = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(5);
    let mut s = format!("{:<name_w$}", "Model");
    for m in Metric::ALL {
        let _ = write!(s, "  {:>11}", m.title());
    }
    s.push('\n');
    for (name, r) in rows {
        let _ = write!(s, "{name:<name_w$}");
        for m in Metric::ALL {
            let cell = r
                .get(m)
                .map_or_else(|| "undefined".to_string(), |v| format!("{:.2}%", 100.0 * v));
            let _ = write!(s, "  {cell:>11}");
        }
        s.push('\n');
    }
    s
}

pub fn epoch_log_csv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,lr,mean_loss,train_accuracy\n");
    for e in log {
        let _ = writeln!(s, "{},{:e},{:.6},{:.4}", e.epoch, e.lr, e.mean_loss, e.train_accuracy);
    }
    s
}
