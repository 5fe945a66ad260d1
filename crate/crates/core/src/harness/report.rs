use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::HarnessError;

/// One scene under one condition. Field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    #[serde(rename = "scene-id")]
    pub scene_id: String,
    pub category: String,
    pub condition: String,
    #[serde(rename = "mIoU")]
    pub miou: f64,
    #[serde(rename = "AP75")]
    pub ap75: f64,
    pub acc: f64,
    #[serde(rename = "rot-deg")]
    pub rot_deg: f64,
    #[serde(rename = "tran-cm")]
    pub tran_cm: f64,
}

/// Means over the scenes of one category (or "overall") under one
/// condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub category: String,
    pub condition: String,
    pub scenes: usize,
    #[serde(rename = "mIoU")]
    pub miou: f64,
    #[serde(rename = "AP75")]
    pub ap75: f64,
    pub acc: f64,
    #[serde(rename = "rot-deg")]
    pub rot_deg: f64,
    #[serde(rename = "tran-cm")]
    pub tran_cm: f64,
}

impl SummaryRow {
    fn fold(category: &str, condition: &str, rows: &[(usize, [f64; 5])]) -> Self {
        let n: usize = rows.iter().map(|r| r.0).sum();
        let mut m = [0.0; 5];
        for (w, v) in rows {
            for i in 0..5 {
                m[i] += *w as f64 * v[i];
            }
        }
        let m = m.map(|x| if n == 0 { 0.0 } else { x / n as f64 });
        SummaryRow {
            category: category.into(),
            condition: condition.into(),
            scenes: n,
            miou: m[0],
            ap75: m[1],
            acc: m[2],
            rot_deg: m[3],
            tran_cm: m[4],
        }
    }

    fn values(&self) -> [f64; 5] {
        [self.miou, self.ap75, self.acc, self.rot_deg, self.tran_cm]
    }
}

/// Per-category means for every condition, then an "overall" row per
/// condition weighting each category mean by its scene count. Categories
/// and conditions come out sorted by name.
pub fn aggregate(rows: &[MetricRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(&str, &str), Vec<(usize, [f64; 5])>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.condition.as_str(), r.category.as_str()))
            .or_default()
            .push((1, [r.miou, r.ap75, r.acc, r.rot_deg, r.tran_cm]));
    }
    let mut out = Vec::new();
    let mut by_cond: BTreeMap<&str, Vec<(usize, [f64; 5])>> = BTreeMap::new();
    for ((cond, cat), v) in &groups {
        let s = SummaryRow::fold(cat, cond, v);
        by_cond.entry(cond).or_default().push((s.scenes, s.values()));
        out.push(s);
    }
    for (cond, v) in by_cond {
        out.push(SummaryRow::fold("overall", cond, &v));
    }
    out
}

pub fn write_csv<T: Serialize, W: Write>(rows: &[T], w: W) -> Result<(), HarnessError> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r).map_err(|e| HarnessError::Io(e.to_string()))?;
    }
    wr.flush().map_err(|e| HarnessError::Io(e.to_string()))
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(bytes: &[u8]) -> Result<Vec<T>, HarnessError> {
    csv::Reader::from_reader(bytes)
        .deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| HarnessError::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(id: &str, cat: &str, cond: &str, x: f64) -> MetricRow {
        MetricRow {
            scene_id: id.into(),
            category: cat.into(),
            condition: cond.into(),
            miou: x,
            ap75: x,
            acc: x,
            rot_deg: 10.0 * x,
            tran_cm: 100.0 * x,
        }
    }

    #[test]
    fn csv_header_order_and_round_trip() {
        let rows = vec![row("door-000", "door", "init", 0.5)];
        let mut bytes = Vec::new();
        write_csv(&rows, &mut bytes).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with("scene-id,category,condition,mIoU,AP75,acc,rot-deg,tran-cm\n"), "{text}");
        assert_eq!(read_csv::<MetricRow>(&bytes).unwrap(), rows);
    }

    #[test]
    fn overall_weights_categories_by_scene_count() {
        let rows = vec![
            row("a-0", "a", "opt", 0.0),
            row("a-1", "a", "opt", 0.0),
            row("a-2", "a", "opt", 0.0),
            row("b-0", "b", "opt", 1.0),
        ];
        let s = aggregate(&rows);
        let overall = s.iter().find(|r| r.category == "overall").unwrap();
        assert_eq!(overall.scenes, 4);
        assert!((overall.miou - 0.25).abs() < 1e-15);
        assert!((overall.tran_cm - 25.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn overall_is_the_scene_mean(xs in proptest::collection::vec((0usize..4, 0.0f64..1.0), 1..40)) {
            let rows: Vec<MetricRow> = xs
                .iter()
                .enumerate()
                .map(|(i, (c, x))| row(&format!("s{i}"), &format!("c{c}"), "opt", *x))
                .collect();
            let s = aggregate(&rows);
            let overall = s.iter().find(|r| r.category == "overall").unwrap();
            let mean = xs.iter().map(|p| p.1).sum::<f64>() / xs.len() as f64;
            prop_assert!((overall.miou - mean).abs() < 1e-12);
            let weighted: f64 = s
                .iter()
                .filter(|r| r.category != "overall")
                .map(|r| r.scenes as f64 * r.acc)
                .sum::<f64>()
                / xs.len() as f64;
            prop_assert!((overall.acc - weighted).abs() < 1e-12);
        }
    }
}
