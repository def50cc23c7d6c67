//! Point encoder, dense convolution stage, Gaussian decoder heads and the
//! feature projection head.

use nalgebra::{Vector3, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::conv::{conv3d, dilate, mask_rows, Conv3d};
use super::layers::{Mlp, MlpVars};
use super::ops::{
    activate, add, concat_cols, gather_rows, inverse_softplus, normalize_rows, scale, scatter_mean,
    Activation,
};
use super::tape::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::GaussianPrimitive;
use crate::voxelizer::{voxel_index, GridSpec, PointCloud, ATTR_WIDTH};

const INPUT_WIDTH: usize = 3 + ATTR_WIDTH;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub grid: GridSpec,
    /// Encoder output width.
    pub d_s: usize,
    /// Dense-volume (anchor) feature width.
    pub d_o: usize,
    /// Per-Gaussian embedding width.
    pub d_f: usize,
    /// Width of the target feature maps.
    pub d_star: usize,
    pub enc_hidden: usize,
    pub conv_hidden: usize,
    pub head_hidden: usize,
    /// Maximum offset magnitude per axis.
    pub offset_cap: f64,
    /// Opacity pruning threshold.
    pub prune_threshold: f64,
}

impl ModelConfig {
    /// Default widths; the offset cap is one voxel edge.
    pub fn new(grid: GridSpec) -> Self {
        Self {
            grid,
            d_s: 32,
            d_o: 32,
            d_f: 16,
            d_star: 64,
            enc_hidden: 32,
            conv_hidden: 32,
            head_hidden: 32,
            offset_cap: grid.voxel_edge(),
            prune_threshold: 0.3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let widths = [
            self.d_s,
            self.d_o,
            self.d_f,
            self.d_star,
            self.enc_hidden,
            self.conv_hidden,
            self.head_hidden,
        ];
        if widths.contains(&0) {
            return Err(Error::invalid("all network widths must be at least 1"));
        }
        if self.d_f > self.d_star {
            return Err(Error::invalid(format!(
                "embedding width {} exceeds target width {}",
                self.d_f, self.d_star
            )));
        }
        if !(self.offset_cap > 0.0) || !self.offset_cap.is_finite() {
            return Err(Error::invalid("offset cap must be positive"));
        }
        if !(0.0..1.0).contains(&self.prune_threshold) {
            return Err(Error::invalid("prune threshold must lie in [0,1)"));
        }
        Ok(())
    }
}

/// Per-point MLP with one voxel-mean context hop.
#[derive(Debug, Clone, PartialEq)]
pub struct PointEncoder {
    pub first: Mlp,
    pub second: Mlp,
}

/// Two 3×3×3 convolutions.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseStage {
    pub conv1: Conv3d,
    pub conv2: Conv3d,
}

/// The six per-anchor heads.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderSet {
    pub rotation: Mlp,
    pub scale: Mlp,
    pub color: Mlp,
    pub opacity: Mlp,
    pub offset: Mlp,
    pub feature: Mlp,
}

impl DecoderSet {
    fn heads(&self) -> [&Mlp; 6] {
        [
            &self.rotation,
            &self.scale,
            &self.color,
            &self.opacity,
            &self.offset,
            &self.feature,
        ]
    }

    fn heads_mut(&mut self) -> [&mut Mlp; 6] {
        [
            &mut self.rotation,
            &mut self.scale,
            &mut self.color,
            &mut self.opacity,
            &mut self.offset,
            &mut self.feature,
        ]
    }
}

const HEAD_NAMES: [&str; 6] = ["head_q", "head_s", "head_c", "head_o", "head_d", "head_f"];

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub encoder: PointEncoder,
    pub dense: DenseStage,
    pub decoder: DecoderSet,
    /// Lifts rendered `d_f` maps to `d_star`.
    pub projection: Mlp,
}

fn set_last_bias(mlp: &mut Mlp, values: &[f64]) {
    let last = mlp.layers.last_mut().expect("non-empty MLP");
    last.bias.data.copy_from_slice(values);
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let relu = Activation::Relu;
        let encoder = PointEncoder {
            first: Mlp::new(
                &[INPUT_WIDTH, c.enc_hidden, c.enc_hidden],
                relu,
                relu,
                &mut rng,
            ),
            second: Mlp::new(
                &[2 * c.enc_hidden, c.enc_hidden, c.d_s],
                relu,
                Activation::Identity,
                &mut rng,
            ),
        };
        let dense = DenseStage {
            conv1: Conv3d::new(c.d_s, c.conv_hidden, relu, &mut rng),
            conv2: Conv3d::new(c.conv_hidden, c.d_o, relu, &mut rng),
        };
        let head = |out: usize, act: Activation, rng: &mut ChaCha8Rng| {
            Mlp::new(&[c.d_o, c.head_hidden, out], relu, act, rng)
        };
        let mut decoder = DecoderSet {
            rotation: head(4, Activation::Identity, &mut rng),
            scale: head(3, Activation::Softplus, &mut rng),
            color: head(3, Activation::Sigmoid, &mut rng),
            opacity: head(1, Activation::Sigmoid, &mut rng),
            offset: head(3, Activation::Tanh, &mut rng),
            feature: head(c.d_f, Activation::Identity, &mut rng),
        };
        set_last_bias(&mut decoder.rotation, &[1.0, 0.0, 0.0, 0.0]);
        set_last_bias(
            &mut decoder.scale,
            &[inverse_softplus(0.5 * c.grid.voxel_edge()); 3],
        );
        set_last_bias(&mut decoder.opacity, &[0.5]);
        let projection = Mlp::new(&[c.d_f, c.d_star], relu, Activation::Identity, &mut rng);
        Ok(Self {
            config,
            encoder,
            dense,
            decoder,
            projection,
        })
    }

    /// Named parameters in canonical order.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        fn push_mlp<'a>(prefix: &str, mlp: &'a Mlp, out: &mut Vec<(String, &'a Tensor)>) {
            for (i, l) in mlp.layers.iter().enumerate() {
                out.push((format!("{prefix}.{i}.weight"), &l.weight));
                out.push((format!("{prefix}.{i}.bias"), &l.bias));
            }
        }
        let mut out = Vec::new();
        push_mlp("enc1", &self.encoder.first, &mut out);
        push_mlp("enc2", &self.encoder.second, &mut out);
        for (name, conv) in [("conv1", &self.dense.conv1), ("conv2", &self.dense.conv2)] {
            out.push((format!("{name}.kernel"), &conv.kernel));
            out.push((format!("{name}.bias"), &conv.bias));
        }
        for (name, mlp) in HEAD_NAMES.iter().zip(self.decoder.heads()) {
            push_mlp(name, mlp, &mut out);
        }
        push_mlp("proj", &self.projection, &mut out);
        out
    }

    /// Parameters in the same order as [`Model::named_params`].
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        out.extend(self.encoder.first.params_mut());
        out.extend(self.encoder.second.params_mut());
        for conv in [&mut self.dense.conv1, &mut self.dense.conv2] {
            out.push(&mut conv.kernel);
            out.push(&mut conv.bias);
        }
        for mlp in self.decoder.heads_mut() {
            out.extend(mlp.params_mut());
        }
        out.extend(self.projection.params_mut());
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn bind(&self, tape: &mut Tape) -> ModelVars {
        let bind_conv = |conv: &Conv3d, tape: &mut Tape| {
            (
                tape.leaf(conv.kernel.clone()),
                tape.leaf(conv.bias.clone()),
                conv.activation,
            )
        };
        let enc1 = self.encoder.first.bind(tape);
        let enc2 = self.encoder.second.bind(tape);
        let conv1 = bind_conv(&self.dense.conv1, tape);
        let conv2 = bind_conv(&self.dense.conv2, tape);
        let heads = self.decoder.heads().map(|m| m.bind(tape));
        let proj = self.projection.bind(tape);
        ModelVars {
            config: self.config.clone(),
            enc1,
            enc2,
            conv1,
            conv2,
            heads,
            proj,
        }
    }

    /// Decoded, pruned Gaussians for a normalized cloud.
    pub fn gaussians(&self, pc: &PointCloud) -> Result<Vec<GaussianPrimitive>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let out = vars.forward(&mut tape, pc)?;
        Ok(out.gaussians.primitives(&tape))
    }
}

/// Tape handles of every [`Model`] parameter.
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub config: ModelConfig,
    pub enc1: MlpVars,
    pub enc2: MlpVars,
    pub conv1: (Var, Var, Activation),
    pub conv2: (Var, Var, Activation),
    pub heads: [MlpVars; 6],
    pub proj: MlpVars,
}

/// Retained Gaussians as tape nodes, one row each.
#[derive(Debug, Clone)]
pub struct DecodedGaussians {
    pub mean: Var,
    pub quat: Var,
    pub scale: Var,
    pub color: Var,
    pub opacity: Var,
    pub feature: Var,
    /// Grid cell of the anchor each retained Gaussian came from.
    pub cells: Vec<usize>,
    pub anchor_count: usize,
}

impl DecodedGaussians {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn primitives(&self, tape: &Tape) -> Vec<GaussianPrimitive> {
        let d_f = tape.value(self.feature).cols();
        let (m, q, s, c, o, f) = (
            &tape.value(self.mean).data,
            &tape.value(self.quat).data,
            &tape.value(self.scale).data,
            &tape.value(self.color).data,
            &tape.value(self.opacity).data,
            &tape.value(self.feature).data,
        );
        (0..self.len())
            .map(|i| GaussianPrimitive {
                mean: Vector3::from_column_slice(&m[3 * i..3 * i + 3]),
                quat: Vector4::from_column_slice(&q[4 * i..4 * i + 4]),
                scale: Vector3::from_column_slice(&s[3 * i..3 * i + 3]),
                color: Vector3::from_column_slice(&c[3 * i..3 * i + 3]),
                opacity: o[i],
                feature: f[d_f * i..d_f * (i + 1)].to_vec(),
            })
            .collect()
    }
}

/// Everything the forward chain produces for one cloud.
#[derive(Debug, Clone)]
pub struct SceneForward {
    pub gaussians: DecodedGaussians,
    /// `[cells, d_o]`, zero at unoccupied cells.
    pub dense: Var,
    pub occupied: Vec<bool>,
    /// Voxel id of every input point.
    pub point_cells: Vec<usize>,
}

impl ModelVars {
    /// Per-point features `[m, d_s]`; also returns each point's voxel id.
    pub fn encode_points(&self, tape: &mut Tape, pc: &PointCloud) -> Result<(Var, Vec<usize>)> {
        pc.validate()?;
        let grid = self.config.grid;
        let ids = voxel_index(&pc.coords, &grid)?;
        let mut input = Vec::with_capacity(pc.len() * INPUT_WIDTH);
        for (c, a) in pc.coords.iter().zip(&pc.attrs) {
            input.extend_from_slice(c);
            input.extend_from_slice(a);
        }
        let x = tape.constant(Tensor::matrix(pc.len(), INPUT_WIDTH, input)?);
        let h = self.enc1.forward(tape, x)?;
        let (pooled, _) = scatter_mean(tape, h, &ids, grid.cells())?;
        let ctx = gather_rows(tape, pooled, ids.clone())?;
        let joined = concat_cols(tape, h, ctx)?;
        Ok((self.enc2.forward(tape, joined)?, ids))
    }

    /// Two convolutions; rows outside `occupied` stay zero.
    pub fn densify(&self, tape: &mut Tape, volume: Var, occupied: &[bool]) -> Result<Var> {
        let grid = self.config.grid;
        let (k1, b1, a1) = self.conv1;
        let (k2, b2, a2) = self.conv2;
        let h = conv3d(tape, volume, k1, b1, grid, Some(dilate(&grid, occupied)))?;
        let h = activate(tape, h, a1);
        let h = conv3d(tape, h, k2, b2, grid, Some(occupied.to_vec()))?;
        let h = activate(tape, h, a2);
        if a2.apply(0.0) == 0.0 {
            Ok(h)
        } else {
            mask_rows(tape, h, occupied.to_vec())
        }
    }

    /// Runs the six heads on anchor features `[k, d_o]` and prunes by opacity.
    pub fn decode_gaussians(
        &self,
        tape: &mut Tape,
        features: Var,
        centers: &[[f64; 3]],
        cells: &[usize],
    ) -> Result<DecodedGaussians> {
        let k = centers.len();
        if tape.value(features).rows() != k || cells.len() != k {
            return Err(Error::invalid(
                "anchor features, centers and cells disagree in count",
            ));
        }
        let cfg = &self.config;
        let [hq, hs, hc, ho, hd, hf] = &self.heads;
        let raw_q = hq.forward(tape, features)?;
        let quat = normalize_rows(tape, raw_q)?;
        let scale_v = hs.forward(tape, features)?;
        let color = hc.forward(tape, features)?;
        let opacity = ho.forward(tape, features)?;
        let offset = hd.forward(tape, features)?;
        let offset = scale(tape, offset, cfg.offset_cap);
        let feature = hf.forward(tape, features)?;
        let nu = tape.constant(Tensor::matrix(k, 3, centers.concat())?);
        let mean = add(tape, nu, offset)?;

        let keep: Vec<usize> = tape
            .value(opacity)
            .data
            .iter()
            .enumerate()
            .filter(|(_, &o)| o > cfg.prune_threshold)
            .map(|(i, _)| i)
            .collect();
        let pattern: Vec<f64> = tape
            .value(opacity)
            .data
            .iter()
            .map(|&o| if o > cfg.prune_threshold { 1.0 } else { 0.0 })
            .collect();
        super::ops::mark_signs(tape, &pattern);
        let pick = |tape: &mut Tape, v: Var| gather_rows(tape, v, keep.clone());
        Ok(DecodedGaussians {
            mean: pick(tape, mean)?,
            quat: pick(tape, quat)?,
            scale: pick(tape, scale_v)?,
            color: pick(tape, color)?,
            opacity: pick(tape, opacity)?,
            feature: pick(tape, feature)?,
            cells: keep.iter().map(|&i| cells[i]).collect(),
            anchor_count: k,
        })
    }

    /// Lifts a `[pixels, d_f]` feature map to `[pixels, d_star]`.
    pub fn project_features(&self, tape: &mut Tape, fmap: Var) -> Result<Var> {
        self.proj.forward(tape, fmap)
    }

    /// encode → scatter → densify → anchors → decode → prune.
    pub fn forward(&self, tape: &mut Tape, pc: &PointCloud) -> Result<SceneForward> {
        let grid = self.config.grid;
        let (point_feats, ids) = self.encode_points(tape, pc)?;
        let (volume, counts) = scatter_mean(tape, point_feats, &ids, grid.cells())?;
        let occupied: Vec<bool> = counts.iter().map(|&c| c > 0).collect();
        let dense = self.densify(tape, volume, &occupied)?;
        let anchor_cells: Vec<usize> = (0..grid.cells()).filter(|&i| occupied[i]).collect();
        let centers: Vec<[f64; 3]> = anchor_cells.iter().map(|&i| grid.center(i)).collect();
        let anchor_feats = gather_rows(tape, dense, anchor_cells.clone())?;
        let gaussians = self.decode_gaussians(tape, anchor_feats, &centers, &anchor_cells)?;
        Ok(SceneForward {
            gaussians,
            dense,
            occupied,
            point_cells: ids,
        })
    }

    /// Parameter handles in [`Model::named_params`] order.
    pub fn vars(&self) -> Vec<Var> {
        let mut out = self.enc1.vars();
        out.extend(self.enc2.vars());
        out.extend([self.conv1.0, self.conv1.1, self.conv2.0, self.conv2.1]);
        for h in &self.heads {
            out.extend(h.vars());
        }
        out.extend(self.proj.vars());
        out
    }

    /// Same architecture with every handle replaced (`with` in
    /// [`ModelVars::vars`] order).
    pub fn with_vars(&self, with: &[Var]) -> Result<ModelVars> {
        if with.len() != self.vars().len() {
            return Err(Error::invalid(format!(
                "expected {} parameter handles, got {}",
                self.vars().len(),
                with.len()
            )));
        }
        let mut rest = with;
        let mut take = |n: usize| {
            let (head, tail) = rest.split_at(n);
            rest = tail;
            head
        };
        let enc1 = self.enc1.with_vars(take(self.enc1.vars().len()));
        let enc2 = self.enc2.with_vars(take(self.enc2.vars().len()));
        let c = take(4);
        let conv1 = (c[0], c[1], self.conv1.2);
        let conv2 = (c[2], c[3], self.conv2.2);
        let heads = std::array::from_fn(|i| {
            let n = self.heads[i].vars().len();
            self.heads[i].with_vars(take(n))
        });
        let proj = self.proj.with_vars(take(self.proj.vars().len()));
        Ok(ModelVars {
            config: self.config.clone(),
            enc1,
            enc2,
            conv1,
            conv2,
            heads,
            proj,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_gradients, GradcheckConfig};
    use crate::nets::ops::sum;
    use proptest::prelude::*;
    use rand::Rng;

    fn small_config(grid: GridSpec) -> ModelConfig {
        ModelConfig {
            d_s: 4,
            d_o: 4,
            d_f: 3,
            d_star: 5,
            enc_hidden: 5,
            conv_hidden: 4,
            head_hidden: 5,
            ..ModelConfig::new(grid)
        }
    }

    fn cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coords = (0..n)
            .map(|_| {
                [
                    rng.random_range(0.1..0.9),
                    rng.random_range(0.1..0.9),
                    rng.random_range(0.1..0.9),
                ]
            })
            .collect();
        let attrs = (0..n)
            .map(|_| {
                let v = Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    1.0,
                )
                .normalize();
                [rng.random(), rng.random(), rng.random(), v.x, v.y, v.z]
            })
            .collect();
        PointCloud::new(coords, attrs).unwrap()
    }

    #[test]
    fn single_point_context_is_its_own_feature() {
        let model = Model::new(small_config(GridSpec::cube(4).unwrap()), 1).unwrap();
        let pc = cloud(1, 2);
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape);
        let (f, _) = vars.encode_points(&mut tape, &pc).unwrap();
        let mut t2 = Tape::new();
        let v2 = model.bind(&mut t2);
        let x: Vec<f64> = pc.coords[0].iter().chain(&pc.attrs[0]).copied().collect();
        let x = t2.constant(Tensor::matrix(1, 9, x).unwrap());
        let h = v2.enc1.forward(&mut t2, x).unwrap();
        let hh = concat_cols(&mut t2, h, h).unwrap();
        let y = v2.enc2.forward(&mut t2, hh).unwrap();
        assert_eq!(tape.value(f).data, t2.value(y).data);
    }

    #[test]
    fn identical_points_identical_features() {
        let model = Model::new(small_config(GridSpec::cube(4).unwrap()), 1).unwrap();
        let mut pc = cloud(3, 5);
        pc.coords[2] = pc.coords[0];
        pc.attrs[2] = pc.attrs[0];
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape);
        let (f, _) = vars.encode_points(&mut tape, &pc).unwrap();
        let t = tape.value(f);
        assert_eq!(t.row(0), t.row(2));
    }

    #[test]
    fn unnormalized_cloud_rejected() {
        let model = Model::new(small_config(GridSpec::cube(4).unwrap()), 1).unwrap();
        let mut pc = cloud(3, 5);
        pc.coords[1][0] = 1.5;
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape);
        assert!(vars.encode_points(&mut tape, &pc).is_err());
    }

    #[test]
    fn zero_offset_weights_keep_anchor_centers() {
        let mut model = Model::new(small_config(GridSpec::cube(4).unwrap()), 3).unwrap();
        for p in model.decoder.offset.params_mut() {
            p.data.fill(0.0);
        }
        model.config.prune_threshold = 0.0;
        let pc = cloud(20, 4);
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape);
        let out = vars.forward(&mut tape, &pc).unwrap();
        let grid = model.config.grid;
        for (g, &cell) in out
            .gaussians
            .primitives(&tape)
            .iter()
            .zip(&out.gaussians.cells)
        {
            assert_eq!(<[f64; 3]>::from(g.mean), grid.center(cell));
        }
    }

    #[test]
    fn zero_opacity_logit_prunes_by_threshold() {
        let mut model = Model::new(small_config(GridSpec::cube(4).unwrap()), 3).unwrap();
        for p in model.decoder.opacity.params_mut() {
            p.data.fill(0.0);
        }
        let pc = cloud(20, 4);
        for (tau, expect_all) in [(0.3, true), (0.5, false), (0.49, true)] {
            model.config.prune_threshold = tau;
            let mut tape = Tape::new();
            let vars = model.bind(&mut tape);
            let out = vars.forward(&mut tape, &pc).unwrap();
            let n = out.gaussians.len();
            assert_eq!(n == out.gaussians.anchor_count, expect_all);
            assert!(expect_all || n == 0);
        }
    }

    #[test]
    fn identity_projection_is_identity() {
        let mut model = Model::new(
            ModelConfig {
                d_f: 4,
                d_star: 4,
                ..small_config(GridSpec::cube(2).unwrap())
            },
            0,
        )
        .unwrap();
        let l = &mut model.projection.layers[0];
        l.weight.data = vec![
            1., 0., 0., 0., 0., 1., 0., 0., 0., 0., 1., 0., 0., 0., 0., 1.,
        ];
        l.bias.data.fill(0.0);
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape);
        let data: Vec<f64> = (0..12).map(|i| i as f64 * 0.3 - 1.0).collect();
        let x = tape.constant(Tensor::matrix(3, 4, data.clone()).unwrap());
        let y = vars.project_features(&mut tape, x).unwrap();
        assert_eq!(tape.value(y).data, data);
    }

    #[test]
    fn constant_map_projects_to_constant_map() {
        let model = Model::new(small_config(GridSpec::cube(2).unwrap()), 0).unwrap();
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape);
        let x = tape.constant(Tensor::matrix(16, 3, [0.2, -0.5, 0.9].repeat(16)).unwrap());
        let y = vars.project_features(&mut tape, x).unwrap();
        let t = tape.value(y);
        assert!((1..16).all(|r| t.row(r) == t.row(0)));
    }

    #[test]
    fn densify_zero_volume_gives_activated_bias() {
        let grid = GridSpec::cube(3).unwrap();
        let mut model = Model::new(small_config(grid), 0).unwrap();
        model.dense.conv2.bias.data = vec![0.5, -0.5, 1.5, 0.0];
        model.dense.conv1.bias.data.fill(0.0);
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape);
        let x = tape.constant(Tensor::zeros(vec![grid.cells(), 4]));
        let y = vars
            .densify(&mut tape, x, &vec![true; grid.cells()])
            .unwrap();
        let t = tape.value(y);
        assert!((0..grid.cells()).all(|r| t.row(r) == [0.5, 0.0, 1.5, 0.0]));
    }

    #[test]
    fn encoder_gradcheck_on_eight_points() {
        let grid = GridSpec::cube(2).unwrap();
        let model = Model::new(small_config(grid), 7).unwrap();
        let pc = cloud(8, 9);
        let params: Vec<Tensor> = model
            .named_params()
            .into_iter()
            .map(|(_, t)| t.clone())
            .collect();
        let n_enc = model.encoder.first.params().len() + model.encoder.second.params().len();
        let n1 = model.encoder.first.params().len();
        let report = check_gradients(&params[..n_enc], &GradcheckConfig::default(), |tape, v| {
            let mut vars = model.bind(tape);
            vars.enc1 = vars.enc1.with_vars(&v[..n1]);
            vars.enc2 = vars.enc2.with_vars(&v[n1..]);
            let (f, _) = vars.encode_points(tape, &pc)?;
            let s = activate(tape, f, Activation::Tanh);
            Ok(sum(tape, s))
        })
        .unwrap();
        assert!(report.passed(1e-4), "{report:?}");
    }

    #[test]
    fn densify_gradcheck_on_small_volume() {
        let grid = GridSpec::cube(4).unwrap();
        let model = Model::new(
            ModelConfig {
                d_s: 2,
                d_o: 2,
                conv_hidden: 3,
                ..small_config(grid)
            },
            7,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let occupied: Vec<bool> = (0..grid.cells()).map(|_| rng.random_bool(0.4)).collect();
        let data: Vec<f64> = occupied
            .iter()
            .flat_map(|&o| {
                let v = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                if o {
                    v
                } else {
                    [0.0, 0.0]
                }
            })
            .collect();
        let inputs = vec![
            Tensor::matrix(grid.cells(), 2, data).unwrap(),
            model.dense.conv1.kernel.clone(),
            model.dense.conv1.bias.clone(),
            model.dense.conv2.kernel.clone(),
            model.dense.conv2.bias.clone(),
        ];
        let report = check_gradients(&inputs, &GradcheckConfig::default(), |tape, v| {
            let mut vars = model.bind(tape);
            vars.conv1 = (v[1], v[2], Activation::Relu);
            vars.conv2 = (v[3], v[4], Activation::Relu);
            let y = vars.densify(tape, v[0], &occupied)?;
            let y = activate(tape, y, Activation::Sigmoid);
            Ok(sum(tape, y))
        })
        .unwrap();
        assert!(report.passed(1e-4), "{report:?}");
        assert!(report.checked() > report.skipped());
    }

    #[test]
    fn projection_gradcheck_on_four_by_four_map() {
        let model = Model::new(
            ModelConfig {
                d_f: 8,
                d_star: 10,
                ..small_config(GridSpec::cube(2).unwrap())
            },
            2,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let map = Tensor::matrix(
            16,
            8,
            (0..128).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let inputs = vec![
            map,
            model.projection.layers[0].weight.clone(),
            model.projection.layers[0].bias.clone(),
        ];
        let report = check_gradients(&inputs, &GradcheckConfig::default(), |tape, v| {
            let mut vars = model.bind(tape);
            vars.proj = vars.proj.with_vars(&v[1..]);
            let y = vars.project_features(tape, v[0])?;
            let y = activate(tape, y, Activation::Tanh);
            Ok(sum(tape, y))
        })
        .unwrap();
        assert!(report.passed(1e-4), "{report:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn decoded_attributes_stay_in_range(seed in 0u64..10_000, gain in 0.1f64..20.0) {
            let mut model = Model::new(small_config(GridSpec::cube(3).unwrap()), seed).unwrap();
            for p in model.params_mut() {
                p.data.iter_mut().for_each(|v| *v *= gain);
            }
            model.config.prune_threshold = 0.0;
            let pc = cloud(30, seed + 1);
            let gs = model.gaussians(&pc).unwrap();
            let cap = model.config.offset_cap;
            let grid = model.config.grid;
            let mut tape = Tape::new();
            let vars = model.bind(&mut tape);
            let out = vars.forward(&mut tape, &pc).unwrap();
            for (g, &cell) in gs.iter().zip(&out.gaussians.cells) {
                prop_assert!((g.quat.norm() - 1.0).abs() < 1e-9);
                prop_assert!(g.scale.iter().all(|s| *s > 0.0));
                prop_assert!(g.color.iter().all(|c| (0.0..=1.0).contains(c)));
                prop_assert!((0.0..=1.0).contains(&g.opacity));
                let nu = grid.center(cell);
                for k in 0..3 {
                    prop_assert!((g.mean[k] - nu[k]).abs() <= cap * (1.0 + 1e-12));
                }
            }
        }

        #[test]
        fn pruning_is_monotone(seed in 0u64..10_000, t1 in 0.0f64..0.99, t2 in 0.0f64..0.99) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let mut model = Model::new(small_config(GridSpec::cube(3).unwrap()), seed).unwrap();
            for p in model.decoder.opacity.params_mut() {
                p.data.iter_mut().for_each(|v| *v *= 4.0);
            }
            let pc = cloud(30, seed);
            let cells_at = |tau: f64| {
                let mut m = model.clone();
                m.config.prune_threshold = tau;
                let mut tape = Tape::new();
                let vars = m.bind(&mut tape);
                vars.forward(&mut tape, &pc).unwrap().gaussians.cells
            };
            let (a, b) = (cells_at(lo), cells_at(hi));
            prop_assert!(b.iter().all(|c| a.contains(c)));
        }
    }
}
