use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::PerceptionError;
use crate::scene::{ArticulatedModel, LinkId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
    pub frame_time: u64,
    /// Ground-truth link id per point, for evaluation only.
    pub labels: Option<Vec<LinkId>>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>, frame_time: u64, labels: Option<Vec<LinkId>>) -> Result<Self, PerceptionError> {
        if let Some(l) = &labels {
            if l.len() != points.len() {
                return Err(PerceptionError::SizeMismatch(format!(
                    "{} labels for {} points",
                    l.len(),
                    points.len()
                )));
            }
        }
        if points.iter().flatten().any(|x| !x.is_finite()) {
            return Err(PerceptionError::NonFinite);
        }
        Ok(PointCloud {
            points,
            frame_time,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Little-endian record: u64 count, then count × 3 f64, then optionally
    /// count × i32 labels.
    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(&(self.points.len() as u64).to_le_bytes())?;
        for p in &self.points {
            for x in p {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        if let Some(labels) = &self.labels {
            for &l in labels {
                w.write_all(&(l as i32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self, PerceptionError> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf).map_err(|e| PerceptionError::Io(e.to_string()))?;
        if buf.len() < 8 {
            return Err(PerceptionError::Format("truncated header".into()));
        }
        let n = u64::from_le_bytes(buf[..8].try_into().unwrap()) as usize;
        let body = &buf[8..];
        let pts_bytes = n
            .checked_mul(24)
            .ok_or_else(|| PerceptionError::Format("count overflow".into()))?;
        let labels = if body.len() == pts_bytes {
            None
        } else if body.len() == pts_bytes + 4 * n {
            Some(
                body[pts_bytes..]
                    .chunks_exact(4)
                    .map(|c| {
                        let v = i32::from_le_bytes(c.try_into().unwrap());
                        usize::try_from(v).map_err(|_| PerceptionError::Format(format!("negative label {v}")))
                    })
                    .collect::<Result<Vec<_>, _>>()?,
            )
        } else {
            return Err(PerceptionError::Format(format!(
                "{} body bytes do not fit {n} points",
                body.len()
            )));
        };
        let points = body[..pts_bytes]
            .chunks_exact(24)
            .map(|c| [0, 1, 2].map(|k| f64::from_le_bytes(c[8 * k..8 * k + 8].try_into().unwrap())))
            .collect();
        PointCloud::new(points, 0, labels)
    }
}

/// Per-point motion, parallel to a source cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFlow {
    pub flow: Vec<[f64; 3]>,
}

/// The true scene standing in for the real world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthScene {
    pub model: ArticulatedModel,
    /// Joint values in model joint order.
    pub q: Vec<f64>,
    pub seed: u64,
}

impl GroundTruthScene {
    pub fn at_rest(model: ArticulatedModel, seed: u64) -> Self {
        let q = vec![0.0; model.joints.len()];
        GroundTruthScene { model, q, seed }
    }

    /// Move the joint into `link` by `delta`, clamped to its limits. Returns
    /// the displacement actually applied.
    pub fn actuate(&mut self, link: LinkId, delta: f64) -> Option<f64> {
        let i = self.model.joint_index(link)?;
        let j = &self.model.joints[i];
        let before = self.q[i];
        self.q[i] = j.clamp(before + delta);
        Some(self.q[i] - before)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_round_trip_with_and_without_labels() {
        let pts = vec![[0.5, -1.25, 3.0], [1e-9, 2.0, -0.0]];
        for labels in [None, Some(vec![1, 2])] {
            let c = PointCloud::new(pts.clone(), 0, labels).unwrap();
            let mut bytes = Vec::new();
            c.write_binary(&mut bytes).unwrap();
            assert_eq!(bytes.len(), 8 + 48 + if c.labels.is_some() { 8 } else { 0 });
            assert_eq!(PointCloud::read_binary(&bytes[..]).unwrap(), c);
        }
    }

    #[test]
    fn rejects_bad_records() {
        assert!(PointCloud::read_binary(&[1u8, 0, 0][..]).is_err());
        let mut bytes = 2u64.to_le_bytes().to_vec();
        bytes.extend([0u8; 30]);
        assert!(PointCloud::read_binary(&bytes[..]).is_err());
        assert!(PointCloud::new(vec![[f64::NAN, 0.0, 0.0]], 0, None).is_err());
    }
}
