//! The classifier: ODFBlock, edge blocks, final block, max-pool and head.
//!
//! Per point `i` with neighbors `j`:
//!
//! ```text
//! A[i,l]  = ODFDir(odf[i,l,:])                 shared over directions l
//! M[i]    = max_l A[i,l]   (or concat_l)
//! G[i]    = ODFGlob(M[i])
//! H0[i]   = [G[i], geo[i]]
//! Hb[i]   = relu(max_j ([H(b-1)[i], H(b-1)[j], edge_geo[i,j]] · Wb + bb))
//! U[i]    = relu([H1[i], .., HB[i], geo[i]] · Wf + bf)
//! g       = max_i U[i]
//! logits  = Head(g)
//! ```
//!
//! Edge blocks split `Wb` into the rows that multiply `H[i]`, `H[j]` and the
//! edge geometry, so the per-edge product is `P[i] + Q[j] + E[i,j]`.
//! Every max keeps the first maximum (lowest direction, neighbor slot or
//! point index).

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{NetError, Result};
use crate::features::{NetMode, SampleInput, EDGE_NEIGHBORS};
use crate::mlp::{Activation, Dense, Mlp, MlpCache};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DirAggregation {
    Max,
    Concat,
}

impl DirAggregation {
    pub fn code(self) -> u8 {
        match self {
            DirAggregation::Max => 0,
            DirAggregation::Concat => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DirAggregation::Max),
            1 => Some(DirAggregation::Concat),
            _ => None,
        }
    }
}

impl fmt::Display for DirAggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DirAggregation::Max => "max",
            DirAggregation::Concat => "concat",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub mode: NetMode,
    pub aggregation: DirAggregation,
    pub n_directions: usize,
    pub n_scales: usize,
    /// Neighbors per point in the edge blocks.
    pub k: usize,
    pub classes: usize,
    /// ODFDir layer widths after the scale input.
    pub dir_widths: Vec<usize>,
    /// ODFGlob layer widths.
    pub glob_widths: Vec<usize>,
    /// One entry per edge block.
    pub edge_widths: Vec<usize>,
    /// Width of the block before the global max-pool.
    pub final_width: usize,
    /// Hidden widths of the head; its last layer outputs `classes`.
    pub head_widths: Vec<usize>,
}

impl NetConfig {
    /// The default widths: ODFDir 8→32→32, ODFGlob 32→64, edge blocks
    /// 64/128, final block 256, head 256→128→64→c.
    pub fn desk(mode: NetMode, classes: usize) -> Self {
        Self {
            mode,
            aggregation: DirAggregation::Max,
            n_directions: 42,
            n_scales: 8,
            k: EDGE_NEIGHBORS,
            classes,
            dir_widths: vec![32, 32],
            glob_widths: vec![64],
            edge_widths: vec![64, 128],
            final_width: 256,
            head_widths: vec![128, 64],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: &[usize]| {
            if v.is_empty() || v.contains(&0) {
                Err(NetError::Config(format!("{name} must be non-empty and positive")))
            } else {
                Ok(())
            }
        };
        positive("dir widths", &self.dir_widths)?;
        positive("glob widths", &self.glob_widths)?;
        positive("edge widths", &self.edge_widths)?;
        positive("counts", &[self.n_directions, self.n_scales, self.k, self.final_width])?;
        if self.head_widths.contains(&0) {
            return Err(NetError::Config("head widths must be positive".into()));
        }
        if self.classes < 2 {
            return Err(NetError::Config(format!("need at least 2 classes, got {}", self.classes)));
        }
        Ok(())
    }

    fn glob_input(&self) -> usize {
        let a = *self.dir_widths.last().expect("validated");
        match self.aggregation {
            DirAggregation::Max => a,
            DirAggregation::Concat => a.saturating_mul(self.n_directions),
        }
    }

    fn point_width(&self) -> usize {
        self.glob_widths.last().expect("validated") + self.mode.point_geo_dim()
    }

    fn final_input(&self) -> usize {
        self.edge_widths.iter().sum::<usize>() + self.mode.point_geo_dim()
    }

    /// `(group, input, output, activation)` of every layer, in storage order.
    pub(crate) fn layer_shapes(&self) -> Vec<(LayerGroup, usize, usize, Activation)> {
        let mut out = Vec::new();
        let chain = |group: LayerGroup, dims: &[usize], last: Activation, out: &mut Vec<_>| {
            for (i, w) in dims.windows(2).enumerate() {
                let act = if i + 2 == dims.len() { last } else { Activation::Relu };
                out.push((group, w[0], w[1], act));
            }
        };
        let dir: Vec<usize> = std::iter::once(self.n_scales).chain(self.dir_widths.iter().copied()).collect();
        chain(LayerGroup::OdfDir, &dir, Activation::Relu, &mut out);
        let glob: Vec<usize> = std::iter::once(self.glob_input()).chain(self.glob_widths.iter().copied()).collect();
        chain(LayerGroup::OdfGlob, &glob, Activation::Relu, &mut out);
        let mut d = self.point_width();
        for &w in &self.edge_widths {
            out.push((LayerGroup::Edge, 2 * d + self.mode.edge_geo_dim(), w, Activation::Relu));
            d = w;
        }
        out.push((LayerGroup::Final, self.final_input(), self.final_width, Activation::Relu));
        let head: Vec<usize> = std::iter::once(self.final_width)
            .chain(self.head_widths.iter().copied())
            .chain(std::iter::once(self.classes))
            .collect();
        chain(LayerGroup::Head, &head, Activation::Identity, &mut out);
        out
    }
}

/// Layer groups, in parameter order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerGroup {
    OdfDir,
    OdfGlob,
    Edge,
    Final,
    Head,
}

impl LayerGroup {
    pub fn code(self) -> u8 {
        match self {
            LayerGroup::OdfDir => 0,
            LayerGroup::OdfGlob => 1,
            LayerGroup::Edge => 2,
            LayerGroup::Final => 3,
            LayerGroup::Head => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        [
            LayerGroup::OdfDir,
            LayerGroup::OdfGlob,
            LayerGroup::Edge,
            LayerGroup::Final,
            LayerGroup::Head,
        ]
        .get(code as usize)
        .copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiniOdfNet {
    pub config: NetConfig,
    pub odf_dir: Mlp,
    pub odf_glob: Mlp,
    pub edge_blocks: Vec<Dense>,
    pub final_block: Dense,
    pub head: Mlp,
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    dir: MlpCache,
    /// Winning direction per (point, channel) under max aggregation.
    dir_arg: Vec<u32>,
    glob: MlpCache,
    /// `h[0]` is `H0`; `h[b + 1]` is the output of edge block `b`.
    h: Vec<Array2<f64>>,
    /// Winning neighbor slot per (point, channel), per edge block.
    edge_arg: Vec<Vec<u32>>,
    /// Points whose features enter the final block.
    final_rows: Vec<usize>,
    final_in: Array2<f64>,
    final_out: Array2<f64>,
    /// Winning row of `final_out` per global channel.
    pool_arg: Vec<usize>,
    head: MlpCache,
}

impl ForwardCache {
    pub fn logits(&self) -> Vec<f64> {
        self.head.output().row(0).to_vec()
    }

    /// Point features: `H0` for `b = 0`, else the output of edge block `b - 1`.
    pub fn hidden(&self, b: usize) -> &Array2<f64> {
        &self.h[b]
    }

    /// Global feature vector (max-pool output).
    pub fn global_feature(&self) -> Vec<f64> {
        self.head.activations[0].row(0).to_vec()
    }

    /// Point index credited with each global channel.
    pub fn pool_points(&self) -> Vec<usize> {
        self.pool_arg.iter().map(|&r| self.final_rows[r]).collect()
    }

    /// Features entering the global max-pool, one row per pooled point.
    pub fn pre_pool(&self) -> (&[usize], &Array2<f64>) {
        (&self.final_rows, &self.final_out)
    }

    /// Hash of every ReLU on/off pattern and max winner. Two parameter
    /// vectors with equal signatures lie in the same linear piece.
    pub fn activation_signature(&self) -> u64 {
        let mut hasher = DefaultHasher::new();
        let mask = |a: &Array2<f64>, h: &mut DefaultHasher| {
            for v in a.iter() {
                (*v > 0.0).hash(h);
            }
        };
        for a in self.dir.activations.iter().skip(1) {
            mask(a, &mut hasher);
        }
        self.dir_arg.hash(&mut hasher);
        for a in self.glob.activations.iter().skip(1) {
            mask(a, &mut hasher);
        }
        for (h, arg) in self.h.iter().skip(1).zip(&self.edge_arg) {
            mask(h, &mut hasher);
            arg.hash(&mut hasher);
        }
        mask(&self.final_out, &mut hasher);
        self.pool_arg.hash(&mut hasher);
        for a in self.head.activations.iter().skip(1) {
            mask(a, &mut hasher);
        }
        hasher.finish()
    }
}

impl MiniOdfNet {
    pub fn new(config: NetConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut dir = vec![config.n_scales];
        dir.extend(&config.dir_widths);
        let odf_dir = Mlp::init(&dir, false, rng);
        let mut glob = vec![config.glob_input()];
        glob.extend(&config.glob_widths);
        let odf_glob = Mlp::init(&glob, false, rng);
        let ge = config.mode.edge_geo_dim();
        let mut d = config.point_width();
        let mut edge_blocks = Vec::new();
        for &w in &config.edge_widths {
            edge_blocks.push(Dense::init(2 * d + ge, w, Activation::Relu, rng));
            d = w;
        }
        let final_block = Dense::init(config.final_input(), config.final_width, Activation::Relu, rng);
        let mut head_dims = vec![config.final_width];
        head_dims.extend(&config.head_widths);
        head_dims.push(config.classes);
        let mut head = Mlp::init(&head_dims, true, rng);
        // Small output layer so the initial logits are near zero.
        head.layers.last_mut().expect("non-empty").weight *= 0.01;
        Ok(Self {
            config,
            odf_dir,
            odf_glob,
            edge_blocks,
            final_block,
            head,
        })
    }

    /// Rebuilds a network from its layers, checking that the shapes chain.
    pub fn from_layers(config: NetConfig, layers: Vec<(LayerGroup, Dense)>) -> Result<Self> {
        config.validate()?;
        let mut groups: [Vec<Dense>; 5] = Default::default();
        let mut last = 0u8;
        for (g, l) in layers {
            if g.code() < last {
                return Err(NetError::Shape("layer groups out of order".into()));
            }
            last = g.code();
            groups[g.code() as usize].push(l);
        }
        let [dir, glob, edge, fin, head] = groups;
        let mut fin = fin;
        if fin.len() != 1 {
            return Err(NetError::Shape(format!("expected 1 final layer, got {}", fin.len())));
        }
        let net = Self {
            odf_dir: Mlp { layers: dir },
            odf_glob: Mlp { layers: glob },
            edge_blocks: edge,
            final_block: fin.pop().expect("one"),
            head: Mlp { layers: head },
            config,
        };
        let expected = net.config.layer_shapes();
        if expected != net.layer_shapes() {
            return Err(NetError::Shape(format!(
                "layer shapes {:?} do not match configuration {:?}",
                net.layer_shapes(),
                expected
            )));
        }
        Ok(net)
    }

    /// Same shapes, all parameters zero; used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let zero = |l: &Dense| Dense::zeros(l.input_dim(), l.output_dim(), l.activation);
        Self {
            config: self.config.clone(),
            odf_dir: self.odf_dir.zeros_like(),
            odf_glob: self.odf_glob.zeros_like(),
            edge_blocks: self.edge_blocks.iter().map(zero).collect(),
            final_block: zero(&self.final_block),
            head: self.head.zeros_like(),
        }
    }

    /// Every layer with its group, in parameter order.
    pub fn layers(&self) -> Vec<(LayerGroup, &Dense)> {
        let mut out: Vec<(LayerGroup, &Dense)> = Vec::new();
        out.extend(self.odf_dir.layers.iter().map(|l| (LayerGroup::OdfDir, l)));
        out.extend(self.odf_glob.layers.iter().map(|l| (LayerGroup::OdfGlob, l)));
        out.extend(self.edge_blocks.iter().map(|l| (LayerGroup::Edge, l)));
        out.push((LayerGroup::Final, &self.final_block));
        out.extend(self.head.layers.iter().map(|l| (LayerGroup::Head, l)));
        out
    }

    pub fn layers_mut(&mut self) -> Vec<&mut Dense> {
        let mut out: Vec<&mut Dense> = Vec::new();
        out.extend(self.odf_dir.layers.iter_mut());
        out.extend(self.odf_glob.layers.iter_mut());
        out.extend(self.edge_blocks.iter_mut());
        out.push(&mut self.final_block);
        out.extend(self.head.layers.iter_mut());
        out
    }

    /// `(group, input, output, activation)` of every layer `config` implies.
    fn layer_shapes(&self) -> Vec<(LayerGroup, usize, usize, Activation)> {
        self.layers()
            .into_iter()
            .map(|(g, l)| (g, l.input_dim(), l.output_dim(), l.activation))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|(_, l)| l.param_count()).sum()
    }

    /// All parameters flattened: per layer, weights row-major then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (_, l) in self.layers() {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(NetError::Shape(format!(
                "{} values for {} parameters",
                values.len(),
                self.param_count()
            )));
        }
        let mut it = values.iter();
        for l in self.layers_mut() {
            for (w, v) in l.weight.iter_mut().zip(&mut it) {
                *w = *v;
            }
            for (b, v) in l.bias.iter_mut().zip(&mut it) {
                *b = *v;
            }
        }
        Ok(())
    }

    /// `self += scale * other`, layer by layer.
    pub fn add_scaled(&mut self, other: &MiniOdfNet, scale: f64) {
        for (a, (_, b)) in self.layers_mut().into_iter().zip(other.layers()) {
            a.weight.scaled_add(scale, &b.weight);
            a.bias.scaled_add(scale, &b.bias);
        }
    }

    /// Width of the global feature vector.
    pub fn global_width(&self) -> usize {
        self.config.final_width
    }

    fn check_input(&self, s: &SampleInput) -> Result<()> {
        let c = &self.config;
        let ok = s.n_directions == c.n_directions
            && s.n_scales == c.n_scales
            && s.k == c.k
            && s.odf.dim() == (s.n_points * c.n_directions, c.n_scales)
            && s.point_geo.dim() == (s.n_points, c.mode.point_geo_dim())
            && s.edge_geo.dim() == (s.n_points * c.k, c.mode.edge_geo_dim())
            && s.neighbors.len() == s.n_points * c.k;
        if !ok {
            return Err(NetError::Shape(format!(
                "sample ({} points, {} directions, {} scales, k {}, point geo {}, edge geo {}) \
                 does not fit net ({} directions, {} scales, k {}, mode {})",
                s.n_points,
                s.n_directions,
                s.n_scales,
                s.k,
                s.point_geo.ncols(),
                s.edge_geo.ncols(),
                c.n_directions,
                c.n_scales,
                c.k,
                c.mode
            )));
        }
        if let Some(keep) = &s.keep {
            if keep.is_empty() || keep.iter().any(|&i| i >= s.n_points) {
                return Err(NetError::Shape("keep mask is empty or out of range".into()));
            }
        }
        Ok(())
    }

    /// Per-point ODFBlock output `G` together with its caches.
    fn odf_block(&self, odf: &Array2<f64>, n: usize) -> (MlpCache, Vec<u32>, MlpCache) {
        let d = self.config.n_directions;
        let dir = self.odf_dir.forward(odf.clone());
        let a = dir.output();
        let width = a.ncols();
        let (m, arg) = match self.config.aggregation {
            DirAggregation::Max => {
                let a = a.as_slice().expect("fresh product");
                let mut m = Array2::zeros((n, width));
                let mut arg = vec![0u32; n * width];
                for i in 0..n {
                    let mut best = a[i * d * width..(i * d + 1) * width].to_vec();
                    let arg_i = &mut arg[i * width..(i + 1) * width];
                    for l in 1..d {
                        let row = &a[(i * d + l) * width..(i * d + l + 1) * width];
                        for c in 0..width {
                            if row[c] > best[c] {
                                best[c] = row[c];
                                arg_i[c] = l as u32;
                            }
                        }
                    }
                    m.row_mut(i).assign(&ndarray::ArrayView1::from(&best));
                }
                (m, arg)
            }
            DirAggregation::Concat => {
                let m = a
                    .as_standard_layout()
                    .into_owned()
                    .into_shape_with_order((n, d * width))
                    .expect("contiguous");
                (m, Vec::new())
            }
        };
        let glob = self.odf_glob.forward(m);
        (dir, arg, glob)
    }

    /// ODFBlock forward for a single point's `directions × scales` slice.
    pub fn odf_block_forward(&self, odf_slice: ArrayView2<f64>) -> Result<Vec<f64>> {
        if odf_slice.dim() != (self.config.n_directions, self.config.n_scales) {
            return Err(NetError::Shape(format!(
                "ODF slice is {:?}, expected ({}, {})",
                odf_slice.dim(),
                self.config.n_directions,
                self.config.n_scales
            )));
        }
        let (_, _, glob) = self.odf_block(&odf_slice.to_owned(), 1);
        Ok(glob.output().row(0).to_vec())
    }

    /// Edge block `b`: returns `relu(max over neighbors)` and the winning slots.
    fn edge_forward(&self, b: usize, h: &Array2<f64>, s: &SampleInput) -> (Array2<f64>, Vec<u32>) {
        let layer = &self.edge_blocks[b];
        let d = h.ncols();
        let w = &layer.weight;
        let mut p = h.dot(&w.slice(s![0..d, ..]));
        p += &layer.bias;
        let q = h.dot(&w.slice(s![d..2 * d, ..]));
        let wc = w.slice(s![2 * d.., ..]).to_owned();
        let (n, k, o) = (s.n_points, s.k, layer.output_dim());
        let ge = wc.nrows();
        let (p, q, wc) = (
            p.as_slice().expect("fresh product"),
            q.as_slice().expect("fresh product"),
            wc.as_slice().expect("owned"),
        );
        let geo = s.edge_geo.as_standard_layout();
        let geo = geo.as_slice().expect("standard layout");
        let mut out = Array2::zeros((n, o));
        let mut arg = vec![0u32; n * o];
        let mut best = vec![0.0f64; o];
        let mut z = vec![0.0f64; o];
        for i in 0..n {
            let pi = &p[i * o..(i + 1) * o];
            let arg_i = &mut arg[i * o..(i + 1) * o];
            for (t, &j) in s.neighbors_of(i).iter().enumerate() {
                let qj = &q[j * o..(j + 1) * o];
                for c in 0..o {
                    z[c] = pi[c] + qj[c];
                }
                let g = &geo[(i * k + t) * ge..(i * k + t + 1) * ge];
                for (a, &ga) in g.iter().enumerate() {
                    let row = &wc[a * o..(a + 1) * o];
                    for c in 0..o {
                        z[c] += ga * row[c];
                    }
                }
                if t == 0 {
                    best.copy_from_slice(&z);
                    continue;
                }
                let tt = t as u32;
                for c in 0..o {
                    let gt = z[c] > best[c];
                    best[c] = if gt { z[c] } else { best[c] };
                    arg_i[c] = if gt { tt } else { arg_i[c] };
                }
            }
            for (dst, &v) in out.row_mut(i).iter_mut().zip(&best) {
                *dst = v.max(0.0);
            }
        }
        (out, arg)
    }

    pub fn forward(&self, s: &SampleInput) -> Result<ForwardCache> {
        self.check_input(s)?;
        let n = s.n_points;
        let (dir, dir_arg, glob) = self.odf_block(&s.odf, n);
        let h0 = ndarray::concatenate(Axis(1), &[glob.output().view(), s.point_geo.view()])
            .expect("same row count");
        let mut h = vec![h0];
        let mut edge_arg = Vec::new();
        for b in 0..self.edge_blocks.len() {
            let (next, arg) = self.edge_forward(b, &h[b], s);
            h.push(next);
            edge_arg.push(arg);
        }
        let final_rows: Vec<usize> = match &s.keep {
            Some(keep) => keep.clone(),
            None => (0..n).collect(),
        };
        let mut parts: Vec<ArrayView2<f64>> = h[1..].iter().map(|a| a.view()).collect();
        parts.push(s.point_geo.view());
        let full = ndarray::concatenate(Axis(1), &parts).expect("same row count");
        let final_in = if s.keep.is_some() {
            full.select(Axis(0), &final_rows)
        } else {
            full
        };
        let final_out = self.final_block.forward(&final_in);
        let width = final_out.ncols();
        let mut pool_arg = vec![0usize; width];
        let mut global = Array2::zeros((1, width));
        for c in 0..width {
            let col = final_out.column(c);
            let mut best = col[0];
            for (r, &v) in col.iter().enumerate().skip(1) {
                if v > best {
                    best = v;
                    pool_arg[c] = r;
                }
            }
            global[[0, c]] = best;
        }
        let head = self.head.forward(global);
        Ok(ForwardCache {
            dir,
            dir_arg,
            glob,
            h,
            edge_arg,
            final_rows,
            final_in,
            final_out,
            pool_arg,
            head,
        })
    }

    /// Class logits for a prepared sample.
    pub fn logits(&self, s: &SampleInput) -> Result<Vec<f64>> {
        Ok(self.forward(s)?.logits())
    }

    /// Accumulates `d(loss)/d(params)` into `grad` given `d(loss)/d(logits)`.
    pub fn backward(&self, s: &SampleInput, cache: &ForwardCache, d_logits: &[f64], grad: &mut MiniOdfNet) {
        let n = s.n_points;
        let d_logits = Array2::from_shape_vec((1, d_logits.len()), d_logits.to_vec()).expect("row");
        let d_global = self
            .head
            .backward(&cache.head, d_logits, &mut grad.head, true)
            .expect("requested");

        let mut d_u = Array2::zeros(cache.final_out.dim());
        for (c, &r) in cache.pool_arg.iter().enumerate() {
            d_u[[r, c]] = d_global[[0, c]];
        }
        let d_final_in = self
            .final_block
            .backward(&cache.final_in, &cache.final_out, d_u, &mut grad.final_block, true)
            .expect("requested");

        let blocks = self.edge_blocks.len();
        let mut d_h: Vec<Array2<f64>> = cache.h.iter().map(|a| Array2::zeros(a.dim())).collect();
        let mut offset = 0;
        for b in 0..blocks {
            let w = cache.h[b + 1].ncols();
            for (r, &i) in cache.final_rows.iter().enumerate() {
                let src = d_final_in.slice(s![r, offset..offset + w]);
                let mut dst = d_h[b + 1].row_mut(i);
                dst += &src;
            }
            offset += w;
        }

        for b in (0..blocks).rev() {
            let layer = &self.edge_blocks[b];
            let g = &mut grad.edge_blocks[b];
            let h_in = &cache.h[b];
            let out = &cache.h[b + 1];
            let arg = &cache.edge_arg[b];
            let d = h_in.ncols();
            let o = layer.output_dim();
            let k = s.k;
            let ge = s.edge_geo.ncols();
            let mut d_z = d_h[b + 1].clone();
            d_z.zip_mut_with(out, |g, &v| {
                if v <= 0.0 {
                    *g = 0.0;
                }
            });
            let mut d_q = Array2::zeros((n, o));
            let mut d_wc = Array2::zeros((ge, o));
            for i in 0..n {
                let nb = s.neighbors_of(i);
                for c in 0..o {
                    let dz = d_z[[i, c]];
                    if dz == 0.0 {
                        continue;
                    }
                    let t = arg[i * o + c] as usize;
                    d_q[[nb[t], c]] += dz;
                    let row = s.edge_geo.row(i * k + t);
                    for a in 0..ge {
                        d_wc[[a, c]] += row[a] * dz;
                    }
                }
            }
            {
                let mut gw = g.weight.slice_mut(s![0..d, ..]);
                gw += &h_in.t().dot(&d_z);
            }
            {
                let mut gw = g.weight.slice_mut(s![d..2 * d, ..]);
                gw += &h_in.t().dot(&d_q);
            }
            {
                let mut gw = g.weight.slice_mut(s![2 * d.., ..]);
                gw += &d_wc;
            }
            g.bias += &d_z.sum_axis(Axis(0));
            let w = &layer.weight;
            let d_in = d_z.dot(&w.slice(s![0..d, ..]).t()) + d_q.dot(&w.slice(s![d..2 * d, ..]).t());
            d_h[b] += &d_in;
        }

        let glob_w = cache.glob.output().ncols();
        let d_glob = d_h[0].slice(s![.., 0..glob_w]).to_owned();
        let d_m = self
            .odf_glob
            .backward(&cache.glob, d_glob, &mut grad.odf_glob, true)
            .expect("requested");
        let dirs = self.config.n_directions;
        let width = cache.dir.output().ncols();
        let d_a = match self.config.aggregation {
            DirAggregation::Max => {
                let mut d_a = Array2::zeros((n * dirs, width));
                for i in 0..n {
                    for c in 0..width {
                        let l = cache.dir_arg[i * width + c] as usize;
                        d_a[[i * dirs + l, c]] = d_m[[i, c]];
                    }
                }
                d_a
            }
            DirAggregation::Concat => d_m
                .as_standard_layout()
                .into_owned()
                .into_shape_with_order((n * dirs, width))
                .expect("contiguous"),
        };
        self.odf_dir.backward(&cache.dir, d_a, &mut grad.odf_dir, false);
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let sum: f64 = e.iter().sum();
    e.into_iter().map(|v| v / sum).collect()
}

/// Cross-entropy `-log softmax(logits)[label]` and its gradient.
pub fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&z| (z - m).exp()).sum::<f64>().ln();
    let loss = lse - logits[label];
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    (loss, grad)
}
