//! Little-endian binary layout shared by client updates, broadcasts and the
//! model file:
//!
//! ```text
//! "F3GS" | version u32 | client_id u32 | round u32 | M u64 | sh_degree u32
//! f32 log_scale[M*3] | f32 quat[M*4] | f32 logit_opacity[M] | f32 sh[M*3*(L+1)^2]
//! u32 visibility[M]          (client updates only)
//! u32 crc32 of every preceding byte
//! ```
//!
//! SH coefficients are stored per Gaussian, channel-major: `[i][channel][k]`.

use crate::error::{Error, Result, WireError};
use crate::types::{sh_coeff_count, Gaussian, GaussianCloud, MAX_SH_DEGREE};

pub const MAGIC: [u8; 4] = *b"F3GS";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 28;
/// `client_id` used for server-originated records (broadcasts, model files).
pub const SERVER_ID: u32 = u32::MAX;

/// Appearance tensors of one client (or the server) at wire precision.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientUpdate {
    pub client_id: u32,
    pub round: u32,
    pub sh_degree: u32,
    pub log_scale: Vec<[f32; 3]>,
    pub quat: Vec<[f32; 4]>,
    pub logit_opacity: Vec<f32>,
    /// Flat `[i][channel][k]`, length `M * 3 * (L+1)^2`.
    pub sh: Vec<f32>,
    pub visibility: Vec<u32>,
}

impl ClientUpdate {
    /// Rounds the appearance of `cloud` to wire precision.
    pub fn from_cloud(
        client_id: u32,
        round: u32,
        cloud: &GaussianCloud,
        visibility: Vec<u32>,
    ) -> Self {
        let n = cloud.coeffs_per_channel();
        let mut sh = Vec::with_capacity(cloud.len() * 3 * n);
        for g in &cloud.gaussians {
            for ch in 0..3 {
                sh.extend(g.sh.iter().map(|c| c[ch] as f32));
            }
        }
        Self {
            client_id,
            round,
            sh_degree: cloud.sh_degree,
            log_scale: cloud
                .gaussians
                .iter()
                .map(|g| g.log_scale.map(|v| v as f32))
                .collect(),
            quat: cloud
                .gaussians
                .iter()
                .map(|g| g.quat.map(|v| v as f32))
                .collect(),
            logit_opacity: cloud
                .gaussians
                .iter()
                .map(|g| g.logit_opacity as f32)
                .collect(),
            sh,
            visibility,
        }
    }

    pub fn len(&self) -> usize {
        self.log_scale.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_scale.is_empty()
    }

    pub fn coeffs_per_channel(&self) -> usize {
        sh_coeff_count(self.sh_degree)
    }

    pub fn sh_at(&self, i: usize, k: usize, ch: usize) -> f32 {
        let n = self.coeffs_per_channel();
        self.sh[(i * 3 + ch) * n + k]
    }

    /// Checks that every tensor has length `M` (visibility may be empty for
    /// model records).
    pub fn check_shapes(&self, expect_visibility: bool) -> Result<()> {
        let m = self.len();
        let mismatch = |found: usize, expected: usize| Error::ShapeMismatch { expected, found };
        if self.sh_degree > MAX_SH_DEGREE {
            return Err(WireError::BadShDegree(self.sh_degree).into());
        }
        if self.quat.len() != m {
            return Err(mismatch(self.quat.len(), m));
        }
        if self.logit_opacity.len() != m {
            return Err(mismatch(self.logit_opacity.len(), m));
        }
        if self.sh.len() != m * 3 * self.coeffs_per_channel() {
            return Err(mismatch(self.sh.len(), m * 3 * self.coeffs_per_channel()));
        }
        let vis = if expect_visibility { m } else { 0 };
        if self.visibility.len() != vis {
            return Err(mismatch(self.visibility.len(), vis));
        }
        Ok(())
    }

    /// Rebuilds a cloud taking positions from `geometry`.
    pub fn to_cloud(&self, geometry: &GaussianCloud) -> Result<GaussianCloud> {
        if geometry.len() != self.len() {
            return Err(Error::ShapeMismatch {
                expected: geometry.len(),
                found: self.len(),
            });
        }
        let n = self.coeffs_per_channel();
        let gaussians = geometry
            .gaussians
            .iter()
            .enumerate()
            .map(|(i, g)| Gaussian {
                mu: g.mu,
                log_scale: self.log_scale[i].map(f64::from),
                quat: self.quat[i].map(f64::from),
                logit_opacity: f64::from(self.logit_opacity[i]),
                sh: (0..n)
                    .map(|k| std::array::from_fn(|ch| f64::from(self.sh_at(i, k, ch))))
                    .collect(),
            })
            .collect();
        GaussianCloud::new(gaussians, self.sh_degree)
    }

    fn write(&self, with_visibility: bool) -> Vec<u8> {
        let m = self.len();
        let n_floats = m * 8 + self.sh.len();
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * (n_floats + m + 1));
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.client_id.to_le_bytes());
        out.extend_from_slice(&self.round.to_le_bytes());
        out.extend_from_slice(&(m as u64).to_le_bytes());
        out.extend_from_slice(&self.sh_degree.to_le_bytes());
        let floats = self
            .log_scale
            .iter()
            .flatten()
            .chain(self.quat.iter().flatten())
            .chain(&self.logit_opacity)
            .chain(&self.sh);
        for v in floats {
            out.extend_from_slice(&v.to_le_bytes());
        }
        if with_visibility {
            for v in &self.visibility {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Client update record (with visibility).
    pub fn encode(&self) -> Vec<u8> {
        self.write(true)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        read(bytes, true)
    }

    /// Model record: same layout without the visibility section.
    pub fn encode_model(&self) -> Vec<u8> {
        self.write(false)
    }

    pub fn decode_model(bytes: &[u8]) -> Result<Self, WireError> {
        read(bytes, false)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let out: [u8; N] = self.bytes[self.pos..self.pos + N].try_into().unwrap();
        self.pos += N;
        out
    }

    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take())
    }

    fn f32(&mut self) -> f32 {
        f32::from_le_bytes(self.take())
    }
}

fn read(bytes: &[u8], with_visibility: bool) -> Result<ClientUpdate, WireError> {
    if bytes.len() < HEADER_LEN + 4 {
        return Err(WireError::Truncated {
            needed: HEADER_LEN + 4,
            available: bytes.len(),
        });
    }
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take();
    if magic != MAGIC {
        return Err(WireError::BadMagic(magic));
    }
    let version = r.u32();
    if version != FORMAT_VERSION {
        return Err(WireError::BadVersion(version));
    }
    let body_end = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[body_end..].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(WireError::BadCrc { stored, computed });
    }
    let client_id = r.u32();
    let round = r.u32();
    let m = u64::from_le_bytes(r.take());
    let sh_degree = r.u32();
    if sh_degree > MAX_SH_DEGREE {
        return Err(WireError::BadShDegree(sh_degree));
    }
    let n_sh = sh_coeff_count(sh_degree);
    let per_gaussian = 8 + 3 * n_sh + usize::from(with_visibility);
    let needed = usize::try_from(m)
        .ok()
        .and_then(|m| m.checked_mul(per_gaussian * 4))
        .and_then(|b| b.checked_add(HEADER_LEN + 4))
        .unwrap_or(usize::MAX);
    if needed > bytes.len() {
        return Err(WireError::Truncated {
            needed,
            available: bytes.len(),
        });
    }
    if needed < bytes.len() {
        return Err(WireError::TrailingBytes(bytes.len() - needed));
    }
    let m = m as usize;
    let log_scale = (0..m).map(|_| std::array::from_fn(|_| r.f32())).collect();
    let quat = (0..m).map(|_| std::array::from_fn(|_| r.f32())).collect();
    let logit_opacity = (0..m).map(|_| r.f32()).collect();
    let sh = (0..m * 3 * n_sh).map(|_| r.f32()).collect();
    let visibility = if with_visibility {
        (0..m).map(|_| r.u32()).collect()
    } else {
        Vec::new()
    };
    Ok(ClientUpdate {
        client_id,
        round,
        sh_degree,
        log_scale,
        quat,
        logit_opacity,
        sh,
        visibility,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(m: usize, degree: u32) -> ClientUpdate {
        let n = sh_coeff_count(degree);
        ClientUpdate {
            client_id: 3,
            round: 7,
            sh_degree: degree,
            log_scale: (0..m).map(|i| [i as f32, -1.5, 0.25]).collect(),
            quat: (0..m).map(|_| [1.0, 0.0, 0.0, 0.0]).collect(),
            logit_opacity: (0..m).map(|i| -(i as f32)).collect(),
            sh: (0..m * 3 * n).map(|i| i as f32 * 0.5).collect(),
            visibility: (0..m as u32).collect(),
        }
    }

    #[test]
    fn header_layout() {
        let bytes = sample(2, 1).encode();
        assert_eq!(&bytes[..4], b"F3GS");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 7);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[24..28].try_into().unwrap()), 1);
        assert_eq!(bytes.len(), 28 + 2 * (3 + 4 + 1 + 12 + 1) * 4 + 4);
        // First float is log_scale[0][0].
        assert_eq!(f32::from_le_bytes(bytes[28..32].try_into().unwrap()), 0.0);
    }

    #[test]
    fn sh_layout_is_channel_major() {
        let u = sample(2, 1);
        assert_eq!(u.sh_at(1, 2, 0), u.sh[3 * 4 + 2]);
        assert_eq!(u.sh_at(0, 0, 2), u.sh[8]);
    }

    #[test]
    fn model_record_has_no_visibility() {
        let mut u = sample(3, 0);
        let with = u.encode().len();
        u.visibility.clear();
        let model = u.encode_model();
        assert_eq!(with - model.len(), 3 * 4);
        assert_eq!(ClientUpdate::decode_model(&model).unwrap(), u);
        assert!(ClientUpdate::decode(&model).is_err());
    }

    #[test]
    fn truncated_and_trailing() {
        let bytes = sample(2, 0).encode();
        assert!(matches!(
            ClientUpdate::decode(&bytes[..10]),
            Err(WireError::Truncated { .. })
        ));
        let mut extra = bytes[..bytes.len() - 4].to_vec();
        extra.extend_from_slice(&[0; 4]);
        let crc = crc32fast::hash(&extra);
        extra.extend_from_slice(&crc.to_le_bytes());
        assert!(matches!(
            ClientUpdate::decode(&extra),
            Err(WireError::TrailingBytes(4))
        ));
    }

    #[test]
    fn cloud_round_trip_keeps_positions() {
        let g = Gaussian {
            mu: [0.1, 0.2, 0.3],
            log_scale: [-2.0; 3],
            quat: [1.0, 0.0, 0.0, 0.0],
            logit_opacity: 0.5,
            sh: vec![[0.1, 0.2, 0.3]; 4],
        };
        let cloud = GaussianCloud::new(vec![g; 3], 1).unwrap();
        let u = ClientUpdate::from_cloud(0, 0, &cloud, vec![1; 3]);
        let back = ClientUpdate::decode(&u.encode())
            .unwrap()
            .to_cloud(&cloud)
            .unwrap();
        assert_eq!(back.gaussians[2].mu, [0.1, 0.2, 0.3]);
        assert!((back.gaussians[0].sh[3][2] - 0.3).abs() < 1e-7);
        assert_eq!(back.gaussians[0].logit_opacity, 0.5);
    }
}
