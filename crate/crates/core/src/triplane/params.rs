use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::TriplaneConfig;
use super::grid::{Plane, PlaneKind, TriplaneGrid};
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::tensor_file::{read_tensors, take, write_tensors, Tensor};

/// Raw decoder outputs: 3 offsets, 3 scales, 4 quaternion, 1 opacity.
pub const DECODER_OUT: usize = 11;

/// Dense `out x in` map with an optional bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub out_dim: usize,
    pub in_dim: usize,
    pub weight: Vec<f32>,
    pub bias: Option<Vec<f32>>,
}

impl Linear {
    pub fn zeros(out_dim: usize, in_dim: usize, bias: bool) -> Self {
        Self {
            out_dim,
            in_dim,
            weight: vec![0.0; out_dim * in_dim],
            bias: bias.then(|| vec![0.0; out_dim]),
        }
    }

    /// Uniform Glorot initialization; biases start at zero.
    pub fn seeded(out_dim: usize, in_dim: usize, bias: bool, rng: &mut ChaCha8Rng) -> Self {
        let a = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weight = (0..out_dim * in_dim)
            .map(|_| rng.random_range(-a..a) as f32)
            .collect();
        Self {
            out_dim,
            in_dim,
            weight,
            bias: bias.then(|| vec![0.0; out_dim]),
        }
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.in_dim);
        for (o, slot) in out.iter_mut().enumerate().take(self.out_dim) {
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.bias.as_ref().map_or(0.0, |b| b[o] as f64);
            for (w, v) in row.iter().zip(x) {
                acc += *w as f64 * v;
            }
            *slot = acc;
        }
    }

    /// `Wᵀ y`.
    pub fn apply_transpose(&self, y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (o, yo) in y.iter().enumerate().take(self.out_dim) {
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            for (slot, w) in out.iter_mut().zip(row) {
                *slot += *w as f64 * yo;
            }
        }
    }

    fn to_tensors(&self, name: &str) -> Vec<Tensor> {
        let mut v = vec![Tensor {
            name: format!("{name}.weight"),
            shape: vec![self.out_dim, self.in_dim],
            data: self.weight.clone(),
        }];
        if let Some(b) = &self.bias {
            v.push(Tensor {
                name: format!("{name}.bias"),
                shape: vec![self.out_dim],
                data: b.clone(),
            });
        }
        v
    }

    fn from_tensors(t: &[Tensor], name: &str, out_dim: usize, in_dim: usize, bias: bool) -> Result<Self> {
        let weight = take(t, &format!("{name}.weight"), &[out_dim, in_dim])?.data.clone();
        let bias = if bias {
            Some(take(t, &format!("{name}.bias"), &[out_dim])?.data.clone())
        } else {
            None
        };
        Ok(Self {
            out_dim,
            in_dim,
            weight,
            bias,
        })
    }
}

/// Single-head dot-product attention maps. Queries come from plane
/// features (`feature_dim`); keys and values from `key_dim`-vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

impl AttentionParams {
    pub fn seeded(feature_dim: usize, key_dim: usize, attn_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            query: Linear::seeded(attn_dim, feature_dim, false, rng),
            key: Linear::seeded(attn_dim, key_dim, false, rng),
            value: Linear::seeded(attn_dim, key_dim, false, rng),
            output: Linear::seeded(feature_dim, attn_dim, false, rng),
        }
    }

    pub fn attn_dim(&self) -> usize {
        self.query.out_dim
    }

    pub fn key_dim(&self) -> usize {
        self.key.in_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.query.in_dim
    }

    pub fn check(&self, feature_dim: usize, key_dim: usize) -> Result<()> {
        let a = self.attn_dim();
        let ok = self.query.in_dim == feature_dim
            && self.key.in_dim == key_dim
            && self.value.in_dim == key_dim
            && self.key.out_dim == a
            && self.value.out_dim == a
            && self.output.in_dim == a
            && self.output.out_dim == feature_dim;
        if !ok {
            return Err(Error::ShapeMismatch(format!(
                "attention maps do not fit feature dim {feature_dim} / key dim {key_dim}"
            )));
        }
        Ok(())
    }

    fn to_tensors(&self, name: &str) -> Vec<Tensor> {
        [
            self.query.to_tensors(&format!("{name}.query")),
            self.key.to_tensors(&format!("{name}.key")),
            self.value.to_tensors(&format!("{name}.value")),
            self.output.to_tensors(&format!("{name}.output")),
        ]
        .concat()
    }

    fn from_tensors(t: &[Tensor], name: &str, feature_dim: usize, key_dim: usize, attn_dim: usize) -> Result<Self> {
        Ok(Self {
            query: Linear::from_tensors(t, &format!("{name}.query"), attn_dim, feature_dim, false)?,
            key: Linear::from_tensors(t, &format!("{name}.key"), attn_dim, key_dim, false)?,
            value: Linear::from_tensors(t, &format!("{name}.value"), attn_dim, key_dim, false)?,
            output: Linear::from_tensors(t, &format!("{name}.output"), feature_dim, attn_dim, false)?,
        })
    }
}

/// Two-layer ReLU perceptron producing the raw Gaussian parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderParams {
    pub hidden: Linear,
    pub out: Linear,
}

impl DecoderParams {
    pub fn seeded(feature_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            hidden: Linear::seeded(hidden, feature_dim, true, rng),
            out: Linear::seeded(DECODER_OUT, hidden, true, rng),
        }
    }

    pub fn check(&self, feature_dim: usize) -> Result<()> {
        if self.hidden.in_dim != feature_dim || self.out.in_dim != self.hidden.out_dim || self.out.out_dim != DECODER_OUT
        {
            return Err(Error::ShapeMismatch(format!(
                "decoder {}->{}->{} does not fit feature dim {feature_dim}",
                self.hidden.in_dim, self.hidden.out_dim, self.out.out_dim
            )));
        }
        Ok(())
    }

    pub fn forward(&self, f: &[f64]) -> [f64; DECODER_OUT] {
        let mut h = vec![0.0; self.hidden.out_dim];
        self.hidden.apply(f, &mut h);
        h.iter_mut().for_each(|v| *v = v.max(0.0));
        let mut out = [0.0; DECODER_OUT];
        self.out.apply(&h, &mut out);
        out
    }
}

/// Per-plane learnable grid embeddings that initialization starts from.
#[derive(Clone, Debug, PartialEq)]
pub struct BaseEmbedding {
    pub theta_z: Plane,
    pub z_r: Plane,
    pub r_theta: Plane,
}

impl BaseEmbedding {
    pub fn zeros(cfg: &TriplaneConfig) -> Self {
        let g = TriplaneGrid::zeros(cfg, Pose::identity());
        Self {
            theta_z: g.theta_z,
            z_r: g.z_r,
            r_theta: g.r_theta,
        }
    }

    pub fn seeded(cfg: &TriplaneConfig, std: f64, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0, std).expect("finite std");
        let mut b = Self::zeros(cfg);
        for p in [&mut b.theta_z, &mut b.z_r, &mut b.r_theta] {
            p.data.iter_mut().for_each(|v| *v = normal.sample(rng) as f32);
        }
        b
    }

    pub fn plane(&self, kind: PlaneKind) -> &Plane {
        match kind {
            PlaneKind::ThetaZ => &self.theta_z,
            PlaneKind::ZR => &self.z_r,
            PlaneKind::RTheta => &self.r_theta,
        }
    }

    pub fn into_grid(self, cfg: &TriplaneConfig, origin: Pose) -> TriplaneGrid {
        TriplaneGrid {
            config: cfg.clone(),
            origin,
            theta_z: self.theta_z,
            z_r: self.z_r,
            r_theta: self.r_theta,
        }
    }
}

/// Shapes of the volume-branch parameter set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamShapes {
    pub layers: usize,
    pub attn_dim: usize,
    /// Channels of the panoramic feature maps.
    pub image_dim: usize,
    pub decoder_hidden: usize,
}

/// All weights of the volume branch.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumeParams {
    pub shapes: ParamShapes,
    pub base: BaseEmbedding,
    pub cross: Vec<AttentionParams>,
    pub image: Vec<AttentionParams>,
    pub decoder: DecoderParams,
    /// `seed:<n>` for generated weights, or the file they came from.
    pub provenance: String,
}

impl VolumeParams {
    pub fn seeded(cfg: &TriplaneConfig, shapes: ParamShapes, seed: u64) -> Result<Self> {
        cfg.validate()?;
        check_shapes(&shapes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.feature_dim;
        let base = BaseEmbedding::seeded(cfg, 0.02, &mut rng);
        let cross = (0..shapes.layers)
            .map(|_| AttentionParams::seeded(d, d, shapes.attn_dim, &mut rng))
            .collect();
        let image = (0..shapes.layers)
            .map(|_| AttentionParams::seeded(d, shapes.image_dim, shapes.attn_dim, &mut rng))
            .collect();
        let decoder = DecoderParams::seeded(d, shapes.decoder_hidden, &mut rng);
        Ok(Self {
            shapes,
            base,
            cross,
            image,
            decoder,
            provenance: format!("seed:{seed}"),
        })
    }

    pub fn to_tensors(&self) -> Vec<Tensor> {
        let base = TriplaneGrid {
            config: TriplaneConfig::default(),
            origin: Pose::identity(),
            theta_z: self.base.theta_z.clone(),
            z_r: self.base.z_r.clone(),
            r_theta: self.base.r_theta.clone(),
        };
        let mut t = base.to_tensors("base.");
        for (i, p) in self.cross.iter().enumerate() {
            t.extend(p.to_tensors(&format!("cross.{i}")));
        }
        for (i, p) in self.image.iter().enumerate() {
            t.extend(p.to_tensors(&format!("image.{i}")));
        }
        t.extend(self.decoder.hidden.to_tensors("decoder.hidden"));
        t.extend(self.decoder.out.to_tensors("decoder.out"));
        t
    }

    pub fn save(&self, bin: &Path) -> Result<()> {
        write_tensors(bin, &self.provenance, &self.to_tensors())
    }

    pub fn load(bin: &Path, cfg: &TriplaneConfig, shapes: ParamShapes) -> Result<Self> {
        cfg.validate()?;
        check_shapes(&shapes)?;
        let (_, t) = read_tensors(bin)?;
        let d = cfg.feature_dim;
        let g = TriplaneGrid::from_tensors(cfg, Pose::identity(), &t, "base.")?;
        let base = BaseEmbedding {
            theta_z: g.theta_z,
            z_r: g.z_r,
            r_theta: g.r_theta,
        };
        let cross = (0..shapes.layers)
            .map(|i| AttentionParams::from_tensors(&t, &format!("cross.{i}"), d, d, shapes.attn_dim))
            .collect::<Result<_>>()?;
        let image = (0..shapes.layers)
            .map(|i| AttentionParams::from_tensors(&t, &format!("image.{i}"), d, shapes.image_dim, shapes.attn_dim))
            .collect::<Result<_>>()?;
        let decoder = DecoderParams {
            hidden: Linear::from_tensors(&t, "decoder.hidden", shapes.decoder_hidden, d, true)?,
            out: Linear::from_tensors(&t, "decoder.out", DECODER_OUT, shapes.decoder_hidden, true)?,
        };
        Ok(Self {
            shapes,
            base,
            cross,
            image,
            decoder,
            provenance: format!("file:{}", bin.display()),
        })
    }
}

fn check_shapes(s: &ParamShapes) -> Result<()> {
    if s.layers == 0 || s.attn_dim == 0 || s.image_dim == 0 || s.decoder_hidden == 0 {
        return Err(Error::Config(format!("parameter shapes must be positive: {s:?}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::triplane::config::GridRes;

    fn cfg() -> TriplaneConfig {
        TriplaneConfig {
            coarse: GridRes::new(3, 4, 6),
            fine: GridRes::new(2, 2, 4),
            feature_dim: 4,
            ..Default::default()
        }
    }

    fn shapes() -> ParamShapes {
        ParamShapes {
            layers: 2,
            attn_dim: 5,
            image_dim: 3,
            decoder_hidden: 7,
        }
    }

    #[test]
    fn seeded_is_deterministic() {
        let a = VolumeParams::seeded(&cfg(), shapes(), 11).unwrap();
        let b = VolumeParams::seeded(&cfg(), shapes(), 11).unwrap();
        let c = VolumeParams::seeded(&cfg(), shapes(), 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.provenance, "seed:11");
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let bin = dir.path().join("p.bin");
        let a = VolumeParams::seeded(&cfg(), shapes(), 3).unwrap();
        a.save(&bin).unwrap();
        let b = VolumeParams::load(&bin, &cfg(), shapes()).unwrap();
        assert_eq!(a.to_tensors(), b.to_tensors());
        assert!(b.provenance.starts_with("file:"));
        let wrong = ParamShapes {
            attn_dim: 6,
            ..shapes()
        };
        assert!(VolumeParams::load(&bin, &cfg(), wrong).is_err());
    }

    #[test]
    fn linear_transpose_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l = Linear::seeded(3, 4, false, &mut rng);
        let x = [0.3, -1.0, 2.0, 0.5];
        let y = [1.0, -0.25, 0.75];
        let mut lx = [0.0; 3];
        let mut lty = [0.0; 4];
        l.apply(&x, &mut lx);
        l.apply_transpose(&y, &mut lty);
        let a: f64 = lx.iter().zip(&y).map(|(p, q)| p * q).sum();
        let b: f64 = lty.iter().zip(&x).map(|(p, q)| p * q).sum();
        assert!((a - b).abs() < 1e-12);
    }
}
