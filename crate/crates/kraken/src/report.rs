//! Machine-readable and rendered views of metric and tuning reports.

use std::fmt::Write as _;

use serde_json::{json, Map, Value};

use kraken_core::metrics::{DirectionBucket, MetricReport};
use kraken_core::synth::TuningReport;
use kraken_core::{AgentType, Horizon};

/// Flat JSON object; per-cell keys are `"<type>.<horizon>.<field>"` and
/// per-bucket AP keys `"<type>.<horizon>.ap.<bucket>"`. Absent cells and
/// buckets are omitted.
pub fn metric_json(r: &MetricReport) -> Value {
    let mut m = Map::new();
    m.insert("map".into(), json!(r.map));
    m.insert("min_ade".into(), json!(r.min_ade));
    m.insert("min_fde".into(), json!(r.min_fde));
    m.insert("miss_rate".into(), json!(r.miss_rate));
    for t in AgentType::ALL {
        for h in Horizon::ALL {
            let Some(c) = r.cell(t, h) else { continue };
            let key = |f: &str| format!("{}.{}.{f}", t.as_str(), h.as_str());
            m.insert(key("count"), json!(c.count));
            m.insert(key("map"), json!(c.map));
            m.insert(key("min_ade"), json!(c.min_ade));
            m.insert(key("min_fde"), json!(c.min_fde));
            m.insert(key("miss_rate"), json!(c.miss_rate));
            for b in DirectionBucket::ALL {
                if let Some(ap) = c.bucket_ap[b.index()] {
                    m.insert(key(&format!("ap.{}", b.as_str())), json!(ap));
                }
            }
        }
    }
    Value::Object(m)
}

/// Pretty-printed [`metric_json`] with a trailing newline.
pub fn metric_json_string(r: &MetricReport) -> String {
    serde_json::to_string_pretty(&metric_json(r)).expect("report serializes") + "\n"
}

/// Aligned text table, one row per present type and horizon.
pub fn metric_table(r: &MetricReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<11} {:>7} {:>6} {:>8} {:>8} {:>8} {:>9}",
        "type", "horizon", "count", "mAP", "minADE", "minFDE", "miss_rate"
    );
    for t in AgentType::ALL {
        for h in Horizon::ALL {
            if let Some(c) = r.cell(t, h) {
                let _ = writeln!(
                    s,
                    "{:<11} {:>7} {:>6} {:>8.4} {:>8.4} {:>8.4} {:>9.4}",
                    t.as_str(),
                    h.as_str(),
                    c.count,
                    c.map,
                    c.min_ade,
                    c.min_fde,
                    c.miss_rate
                );
            }
        }
    }
    let _ = writeln!(
        s,
        "{:<11} {:>7} {:>6} {:>8.4} {:>8.4} {:>8.4} {:>9.4}",
        "all", "avg", "", r.map, r.min_ade, r.min_fde, r.miss_rate
    );
    s
}

pub fn tuning_json(r: &TuningReport) -> Value {
    let per_type = |t: AgentType| {
        let i = t.index();
        json!({
            "map": r.metric.iter().map(|m| m[i]).collect::<Vec<_>>(),
            "argmax": r.argmax[i],
            "best": r.best(t).map(|g| g.label.clone()),
            "count": r.counts[i],
        })
    };
    let mut types = Map::new();
    for t in AgentType::ALL {
        types.insert(t.as_str().into(), per_type(t));
    }
    json!({
        "parameter": r.parameter,
        "grid": r.grid.iter().map(|g| json!({"label": g.label, "value": g.value})).collect::<Vec<_>>(),
        "types": types,
    })
}

const COLORS: [&str; 3] = ["#1f77b4", "#d62728", "#2ca02c"];

/// Line plot of per-type mAP against grid position.
pub fn tuning_svg(r: &TuningReport) -> String {
    let (w, h, pad) = (640.0, 400.0, 60.0);
    let n = r.grid.len().max(1);
    let x_at = |i: usize| {
        if n == 1 {
            w / 2.0
        } else {
            pad + (w - 2.0 * pad) * i as f64 / (n - 1) as f64
        }
    };
    let top = r
        .metric
        .iter()
        .flat_map(|m| m.iter().flatten().copied())
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let y_at = |v: f64| h - pad - (h - 2.0 * pad) * v / top;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<line x1="{pad}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/><line x1="{pad}" y1="{pad}" x2="{pad}" y2="{y0}" stroke="black"/>"#,
        y0 = h - pad,
        x1 = w - pad
    );
    for (i, g) in r.grid.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{}</text>"#,
            x_at(i),
            h - pad + 18.0,
            g.label
        );
    }
    for frac in [0.0, 0.5, 1.0] {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{:.3}</text>"#,
            pad - 6.0,
            y_at(frac * top) + 4.0,
            frac * top
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">{}</text>"#,
        w / 2.0,
        h - 12.0,
        r.parameter
    );
    for t in AgentType::ALL {
        let i = t.index();
        let pts: Vec<String> = r
            .metric
            .iter()
            .enumerate()
            .filter_map(|(k, m)| m[i].map(|v| format!("{:.1},{:.1}", x_at(k), y_at(v))))
            .collect();
        if pts.is_empty() {
            continue;
        }
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{}" stroke-width="2" points="{}"/>"#,
            COLORS[i],
            pts.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="12" fill="{}">{}</text>"#,
            w - pad + 4.0,
            pad + 16.0 * i as f64,
            COLORS[i],
            t.as_str()
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use kraken_core::synth::GridPoint;

    fn toy_tuning() -> TuningReport {
        TuningReport {
            parameter: "sigma".into(),
            grid: vec![
                GridPoint {
                    label: "0.5".into(),
                    value: Some(0.5),
                },
                GridPoint {
                    label: "1".into(),
                    value: Some(1.0),
                },
            ],
            metric: vec![[Some(0.2), None, Some(0.4)], [Some(0.3), None, Some(0.1)]],
            argmax: [Some(1), None, Some(0)],
            counts: [4, 0, 2],
        }
    }

    #[test]
    fn tuning_json_lists_best_labels() {
        let v = tuning_json(&toy_tuning());
        assert_eq!(v["types"]["vehicle"]["best"], "1");
        assert_eq!(v["types"]["cyclist"]["best"], "0.5");
        assert!(v["types"]["pedestrian"]["best"].is_null());
    }

    #[test]
    fn svg_has_one_line_per_present_type() {
        let svg = tuning_svg(&toy_tuning());
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.starts_with("<svg"));
    }
}
