//! Forward and backward passes.

use super::ops::gemm;
use super::{AffineRef, Block, Network};
use crate::cloud::{knn, NeighborIndex, SubCloudBatch};
use crate::{Error, Result};

/// Which moments the BN layers normalise with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Moments of the current batch (training and every adaptation pass).
    BatchStats,
    /// Stored running moments (plain inference of the source model).
    RunningStats,
}

#[derive(Debug, Clone)]
pub(crate) struct BlockTrace {
    pub input: Vec<f64>,
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub output: Vec<f64>,
}

/// Everything [`Network::backward`] needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    mode: BnMode,
    points: usize,
    input: Vec<f64>,
    encoder: Vec<BlockTrace>,
    pool_argmax: Vec<u32>,
    decoder: Vec<BlockTrace>,
}

impl ForwardTrace {
    pub fn mode(&self) -> BnMode {
        self.mode
    }

    pub fn points(&self) -> usize {
        self.points
    }

    /// Network input rows `[Δx Δy Δz f..]`.
    pub fn input(&self) -> &[f64] {
        &self.input
    }

    /// Normalised pre-affine activations `x̂` of BN layer `i` (encoder first).
    pub fn bn_normalized(&self, i: usize) -> &[f64] {
        let e = self.encoder.len();
        if i < e {
            &self.encoder[i].xhat
        } else {
            &self.decoder[i - e].xhat
        }
    }

    pub fn bn_count(&self) -> usize {
        self.encoder.len() + self.decoder.len()
    }

    /// True when both passes took the same branch at every ReLU and every
    /// max-pool slot, i.e. the network is the same smooth function around both.
    pub fn same_activation_pattern(&self, other: &ForwardTrace) -> bool {
        self.points == other.points
            && self.pool_argmax == other.pool_argmax
            && self.blocks().count() == other.blocks().count()
            && self.blocks().zip(other.blocks()).all(|(a, b)| {
                a.output.len() == b.output.len()
                    && a.output
                        .iter()
                        .zip(&b.output)
                        .all(|(x, y)| (*x > 0.0) == (*y > 0.0))
            })
    }

    pub(crate) fn blocks(&self) -> impl Iterator<Item = &BlockTrace> {
        self.encoder.iter().chain(&self.decoder)
    }
}

fn affine_forward(net: &Network, a: &AffineRef, input: &[f64], points: usize) -> Vec<f64> {
    let w = &net.params[a.w].values;
    let b = &net.params[a.b].values;
    let mut out = vec![0.0; points * a.fan_out];
    for row in out.chunks_exact_mut(a.fan_out) {
        row.copy_from_slice(b);
    }
    gemm(
        points, a.fan_in, a.fan_out, input, a.fan_in, 1, w, a.fan_out, 1, &mut out, true,
    );
    out
}

fn check_finite(values: &[f64], layer: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            layer: layer.to_string(),
        })
    }
}

impl Network {
    /// Forward pass with neighbourhoods computed from the batch positions.
    /// Returns per-point logits (`points × classes`, row-major) and the trace.
    pub fn forward(&self, batch: &SubCloudBatch, mode: BnMode) -> Result<(Vec<f64>, ForwardTrace)> {
        let neighbors = self.neighbors(batch)?;
        self.forward_with_neighbors(batch, &neighbors, mode)
    }

    /// k-NN tables of every sub-cloud for this network's neighbourhood size.
    pub fn neighbors(&self, batch: &SubCloudBatch) -> Result<Vec<NeighborIndex>> {
        batch
            .clouds
            .iter()
            .map(|c| knn(&c.positions, self.spec.k))
            .collect()
    }

    pub fn forward_with_neighbors(
        &self,
        batch: &SubCloudBatch,
        neighbors: &[NeighborIndex],
        mode: BnMode,
    ) -> Result<(Vec<f64>, ForwardTrace)> {
        self.forward_resumed(batch, neighbors, mode, None)
    }

    /// Forward pass that copies every stage before `layer` from `trace`
    /// instead of recomputing it. Valid when `trace` was recorded on the same
    /// batch and only parameters of `layer` or later layers changed since;
    /// the result is then bit-identical to a full pass.
    pub fn forward_from(
        &self,
        batch: &SubCloudBatch,
        neighbors: &[NeighborIndex],
        trace: &ForwardTrace,
        layer: usize,
    ) -> Result<(Vec<f64>, ForwardTrace)> {
        if layer >= self.layer_count() {
            return Err(Error::Shape(format!(
                "layer {layer} out of range for {} layers",
                self.layer_count()
            )));
        }
        if trace.points != batch.total_points()
            || trace.encoder.len() != self.spec.encoder.len()
            || trace.decoder.len() != self.spec.decoder.len()
        {
            return Err(Error::Shape(
                "trace does not match batch and network".into(),
            ));
        }
        self.forward_resumed(batch, neighbors, trace.mode, Some((trace, layer)))
    }

    fn forward_resumed(
        &self,
        batch: &SubCloudBatch,
        neighbors: &[NeighborIndex],
        mode: BnMode,
        resume: Option<(&ForwardTrace, usize)>,
    ) -> Result<(Vec<f64>, ForwardTrace)> {
        let spec = &self.spec;
        if batch.feature_count != spec.features {
            return Err(Error::Shape(format!(
                "batch carries {} features, network expects {}",
                batch.feature_count, spec.features
            )));
        }
        if neighbors.len() != batch.batch_size() {
            return Err(Error::Shape(
                "one neighbour table per sub-cloud is required".into(),
            ));
        }
        let n = batch.points_per_cloud();
        let points = batch.total_points();
        let d = spec.input_width();

        let mut input = Vec::with_capacity(points * d);
        for c in &batch.clouds {
            for (p, f) in c
                .positions
                .iter()
                .zip(c.features.chunks_exact(spec.features))
            {
                input.extend_from_slice(p);
                input.extend_from_slice(f);
            }
        }
        check_finite(&input, "input")?;

        let layout = self.layout();
        // Stages kept from `resume`: encoder blocks own layers 2i and 2i + 1,
        // the pool projection 2E, decoder block j layers 2E + 1 + 2j and the
        // one after it.
        let (enc_len, dec_len) = (layout.encoder.len(), layout.decoder.len());
        let first = resume.map_or(0, |(_, layer)| layer);
        let keep_enc = (first / 2).min(enc_len);
        let keep_pool = first > 2 * enc_len;
        let keep_dec = (first.saturating_sub(2 * enc_len + 1) / 2).min(dec_len);

        let mut x = input.clone();
        let mut encoder = Vec::with_capacity(enc_len);
        for (i, blk) in layout.encoder.iter().enumerate() {
            let t = match resume {
                Some((trace, _)) if i < keep_enc => trace.encoder[i].clone(),
                _ => self.block_forward(blk, x, points, mode, &format!("enc{i}"))?,
            };
            x = t.output.clone();
            encoder.push(t);
        }

        let (concat, pool_argmax) = match resume {
            Some((trace, _)) if keep_pool => {
                (trace.decoder[0].input.clone(), trace.pool_argmax.clone())
            }
            _ => self.pool_forward(&layout, &x, neighbors, n, points)?,
        };

        let mut x = concat;
        let mut decoder = Vec::with_capacity(dec_len);
        for (i, blk) in layout.decoder.iter().enumerate() {
            let t = match resume {
                Some((trace, _)) if i < keep_dec => trace.decoder[i].clone(),
                _ => self.block_forward(blk, x, points, mode, &format!("dec{i}"))?,
            };
            x = t.output.clone();
            decoder.push(t);
        }
        let logits = affine_forward(self, &layout.head, &x, points);
        check_finite(&logits, "head")?;

        Ok((
            logits,
            ForwardTrace {
                mode,
                points,
                input,
                encoder,
                pool_argmax,
                decoder,
            },
        ))
    }

    /// Projected neighbourhood max-pool concatenated onto each point:
    /// returns `[h ‖ m]` rows and the winning neighbour of every slot.
    fn pool_forward(
        &self,
        layout: &super::Layout,
        x: &[f64],
        neighbors: &[NeighborIndex],
        n: usize,
        points: usize,
    ) -> Result<(Vec<f64>, Vec<u32>)> {
        let e = self.spec.embed_width();
        let k = self.spec.k;
        let projected = affine_forward(self, &layout.pool, x, points);
        check_finite(&projected, "pool.affine")?;
        let mut pooled = vec![f64::NEG_INFINITY; points * e];
        let mut pool_argmax = vec![0u32; points * e];
        for (ci, table) in neighbors.iter().enumerate() {
            if table.len() != n || table.k() != k {
                return Err(Error::Shape(format!(
                    "neighbour table {ci} is {}×{}, expected {n}×{k}",
                    table.len(),
                    table.k()
                )));
            }
            let offset = ci * n;
            for local in 0..n {
                let i = offset + local;
                let dst = &mut pooled[i * e..(i + 1) * e];
                let arg = &mut pool_argmax[i * e..(i + 1) * e];
                for &j in table.row(local) {
                    let j = offset + j as usize;
                    let src = &projected[j * e..(j + 1) * e];
                    for c in 0..e {
                        // strict `>` keeps the nearest neighbour on ties
                        if src[c] > dst[c] {
                            dst[c] = src[c];
                            arg[c] = j as u32;
                        }
                    }
                }
            }
        }
        let mut concat = Vec::with_capacity(points * 2 * e);
        for i in 0..points {
            concat.extend_from_slice(&x[i * e..(i + 1) * e]);
            concat.extend_from_slice(&pooled[i * e..(i + 1) * e]);
        }
        Ok((concat, pool_argmax))
    }

    fn block_forward(
        &self,
        blk: &Block,
        input: Vec<f64>,
        points: usize,
        mode: BnMode,
        name: &str,
    ) -> Result<BlockTrace> {
        let ch = blk.affine.fan_out;
        let z = affine_forward(self, &blk.affine, &input, points);
        check_finite(&z, &format!("{name}.affine"))?;
        let state = &self.bn[blk.bn.state];
        let (mean, var) = match mode {
            BnMode::BatchStats => {
                let inv_p = 1.0 / points as f64;
                let mut mean = vec![0.0; ch];
                for row in z.chunks_exact(ch) {
                    mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
                }
                mean.iter_mut().for_each(|m| *m *= inv_p);
                let mut var = vec![0.0; ch];
                for row in z.chunks_exact(ch) {
                    for c in 0..ch {
                        let d = row[c] - mean[c];
                        var[c] += d * d;
                    }
                }
                var.iter_mut().for_each(|v| *v *= inv_p);
                (mean, var)
            }
            BnMode::RunningStats => (state.running_mean.clone(), state.running_var.clone()),
        };
        let inv_std: Vec<f64> = var
            .iter()
            .map(|v| 1.0 / (v + state.epsilon).sqrt())
            .collect();
        let gamma = &self.params[blk.bn.gamma].values;
        let beta = &self.params[blk.bn.beta].values;
        let mut xhat = z;
        let mut output = vec![0.0; points * ch];
        for (xr, or) in xhat.chunks_exact_mut(ch).zip(output.chunks_exact_mut(ch)) {
            for c in 0..ch {
                xr[c] = (xr[c] - mean[c]) * inv_std[c];
                or[c] = (gamma[c] * xr[c] + beta[c]).max(0.0);
            }
        }
        check_finite(&output, &format!("{name}.bn"))?;
        Ok(BlockTrace {
            input,
            xhat,
            inv_std,
            mean,
            var,
            output,
        })
    }

    /// Backpropagate `dL/dlogits` through the pass recorded in `trace`,
    /// overwriting the gradient of every parameter.
    pub fn backward(&mut self, trace: &ForwardTrace, dlogits: &[f64]) -> Result<()> {
        let points = trace.points;
        let classes = self.spec.classes;
        let layout = self.layout();
        if dlogits.len() != points * classes
            || trace.encoder.len() != layout.encoder.len()
            || trace.decoder.len() != layout.decoder.len()
            || trace.input.len() != points * self.spec.input_width()
        {
            return Err(Error::Shape(
                "trace or logit gradient does not match the network".into(),
            ));
        }
        let e = self.spec.embed_width();

        let head_in = &trace.decoder.last().expect("decoder is non-empty").output;
        let mut d = self.affine_backward(&layout.head, head_in, dlogits, points);
        for (blk, t) in layout.decoder.iter().zip(&trace.decoder).rev() {
            d = self.block_backward(blk, t, &d, points, trace.mode);
        }

        // split [h ‖ m]
        let mut dh = vec![0.0; points * e];
        let mut du = vec![0.0; points * e];
        for i in 0..points {
            dh[i * e..(i + 1) * e].copy_from_slice(&d[i * 2 * e..i * 2 * e + e]);
            let dm = &d[i * 2 * e + e..(i + 1) * 2 * e];
            let arg = &trace.pool_argmax[i * e..(i + 1) * e];
            for c in 0..e {
                du[arg[c] as usize * e + c] += dm[c];
            }
        }
        let h = &trace.encoder.last().expect("encoder is non-empty").output;
        let dh_pool = self.affine_backward(&layout.pool, h, &du, points);
        dh.iter_mut().zip(&dh_pool).for_each(|(a, b)| *a += b);

        let mut d = dh;
        for (blk, t) in layout.encoder.iter().zip(&trace.encoder).rev() {
            d = self.block_backward(blk, t, &d, points, trace.mode);
        }
        Ok(())
    }

    /// Writes weight/bias gradients and returns dL/dinput.
    fn affine_backward(
        &mut self,
        a: &AffineRef,
        input: &[f64],
        dout: &[f64],
        points: usize,
    ) -> Vec<f64> {
        let (fi, fo) = (a.fan_in, a.fan_out);
        let mut dw = vec![0.0; fi * fo];
        gemm(fi, points, fo, input, 1, fi, dout, fo, 1, &mut dw, false);
        let mut db = vec![0.0; fo];
        for row in dout.chunks_exact(fo) {
            db.iter_mut().zip(row).for_each(|(g, v)| *g += v);
        }
        let mut dinput = vec![0.0; points * fi];
        gemm(
            points,
            fo,
            fi,
            dout,
            fo,
            1,
            &self.params[a.w].values,
            1,
            fo,
            &mut dinput,
            false,
        );
        self.params[a.w].grad = dw;
        self.params[a.b].grad = db;
        dinput
    }

    fn block_backward(
        &mut self,
        blk: &Block,
        t: &BlockTrace,
        dout: &[f64],
        points: usize,
        mode: BnMode,
    ) -> Vec<f64> {
        let ch = blk.affine.fan_out;
        let gamma = self.params[blk.bn.gamma].values.clone();
        let mut dgamma = vec![0.0; ch];
        let mut dbeta = vec![0.0; ch];
        // dxhat, computed in place over dy
        let mut dxhat = vec![0.0; points * ch];
        for ((dx, g), (o, xh)) in dxhat
            .chunks_exact_mut(ch)
            .zip(dout.chunks_exact(ch))
            .zip(t.output.chunks_exact(ch).zip(t.xhat.chunks_exact(ch)))
        {
            for c in 0..ch {
                let dy = if o[c] > 0.0 { g[c] } else { 0.0 };
                dgamma[c] += dy * xh[c];
                dbeta[c] += dy;
                dx[c] = dy * gamma[c];
            }
        }
        let mut dz = dxhat;
        match mode {
            BnMode::BatchStats => {
                let mut sum = vec![0.0; ch];
                let mut sum_x = vec![0.0; ch];
                for (dx, xh) in dz.chunks_exact(ch).zip(t.xhat.chunks_exact(ch)) {
                    for c in 0..ch {
                        sum[c] += dx[c];
                        sum_x[c] += dx[c] * xh[c];
                    }
                }
                let inv_p = 1.0 / points as f64;
                for (dx, xh) in dz.chunks_exact_mut(ch).zip(t.xhat.chunks_exact(ch)) {
                    for c in 0..ch {
                        dx[c] = t.inv_std[c] * (dx[c] - inv_p * (sum[c] + xh[c] * sum_x[c]));
                    }
                }
            }
            BnMode::RunningStats => {
                for dx in dz.chunks_exact_mut(ch) {
                    dx.iter_mut().zip(&t.inv_std).for_each(|(v, s)| *v *= s);
                }
            }
        }
        self.params[blk.bn.gamma].grad = dgamma;
        self.params[blk.bn.beta].grad = dbeta;
        self.affine_backward(&blk.affine, &t.input, &dz, points)
    }

    /// Blend the batch moments recorded in `trace` into the running moments:
    /// `running ← momentum·running + (1 − momentum)·batch` (unbiased variance).
    pub fn update_running_stats(&mut self, trace: &ForwardTrace, momentum: f64) -> Result<()> {
        if trace.mode != BnMode::BatchStats {
            return Err(Error::Validation(
                "running statistics need a batch-statistics trace".into(),
            ));
        }
        let p = trace.points as f64;
        let correction = if p > 1.0 { p / (p - 1.0) } else { 1.0 };
        for (state, t) in self.bn.iter_mut().zip(trace.blocks()) {
            for c in 0..state.channels() {
                state.running_mean[c] =
                    momentum * state.running_mean[c] + (1.0 - momentum) * t.mean[c];
                state.running_var[c] =
                    momentum * state.running_var[c] + (1.0 - momentum) * t.var[c] * correction;
            }
        }
        Ok(())
    }
}
