//! Unidirectional recurrent encoder with max pooling over time between layers.

use crate::attention::{FrameSource, SourceError};
use crate::numeric::{Real, Tensor};

use super::lstm::{lstm_step, lstm_step_backward, LstmCache, LstmState};
use super::{ModelConfig, ModelError, ModelParams};

/// Elementwise max over consecutive windows of `width` rows; the last window
/// may be partial. Returns the pooled rows and, per output cell, the source
/// row that won.
pub fn max_pool_time<T: Real>(states: &Tensor<T>, width: usize) -> Result<(Tensor<T>, Vec<usize>), ModelError> {
    if width < 1 {
        return Err(ModelError::Config("pooling width must be at least 1".into()));
    }
    let (t, d) = (states.rows(), states.cols());
    let out_rows = t.div_ceil(width);
    let mut out = Tensor::zeros(&[out_rows, d]);
    let mut arg = vec![0; out_rows * d];
    for r in 0..out_rows {
        let start = r * width;
        let end = (start + width).min(t);
        for c in 0..d {
            let mut best = states.get2(start, c);
            let mut at = start;
            for src in start + 1..end {
                let v = states.get2(src, c);
                if v > best {
                    best = v;
                    at = src;
                }
            }
            out.set2(r, c, best);
            arg[r * d + c] = at;
        }
    }
    Ok((out, arg))
}

pub fn max_pool_time_backward<T: Real>(rows: usize, g_out: &Tensor<T>, arg: &[usize]) -> Tensor<T> {
    let d = g_out.cols();
    let mut g = Tensor::zeros(&[rows, d]);
    for (idx, &src) in arg.iter().enumerate() {
        let c = idx % d;
        let v = g.get2(src, c) + g_out.data()[idx];
        g.set2(src, c, v);
    }
    g
}

pub struct LayerCache<T> {
    steps: Vec<LstmCache<T>>,
    pooled_from: Option<(usize, Vec<usize>)>,
}

pub struct EncoderCache<T> {
    layers: Vec<LayerCache<T>>,
    input_rows: usize,
}

/// Runs every layer over the whole sequence.
pub fn encode<T: Real>(
    cfg: &ModelConfig,
    params: &ModelParams<T>,
    feats: &Tensor<T>,
) -> Result<(Tensor<T>, EncoderCache<T>), ModelError> {
    if feats.rank() != 2 || feats.cols() != cfg.feature_dim {
        return Err(ModelError::Config(format!(
            "features {:?} do not match feature_dim {}",
            feats.dims(),
            cfg.feature_dim
        )));
    }
    if feats.rows() < cfg.subsampling() {
        return Err(ModelError::TooShort { frames: feats.rows(), required: cfg.subsampling() });
    }
    let mut x = feats.clone();
    let mut layers = Vec::with_capacity(params.encoder.len());
    for (l, p) in params.encoder.iter().enumerate() {
        let mut state = LstmState::zeros(p.hidden());
        let mut out = Tensor::zeros(&[x.rows(), p.hidden()]);
        let mut steps = Vec::with_capacity(x.rows());
        for t in 0..x.rows() {
            let (next, cache) = lstm_step(p, x.row(t), &state);
            out.row_mut(t).copy_from_slice(&next.h);
            steps.push(cache);
            state = next;
        }
        let pooled_from = if cfg.pools_after(l) {
            let rows = out.rows();
            let (pooled, arg) = max_pool_time(&out, cfg.pool_width)?;
            out = pooled;
            Some((rows, arg))
        } else {
            None
        };
        layers.push(LayerCache { steps, pooled_from });
        x = out;
    }
    Ok((x, EncoderCache { layers, input_rows: feats.rows() }))
}

/// Accumulates parameter gradients and returns the input-feature gradient.
pub fn encode_backward<T: Real>(
    params: &ModelParams<T>,
    cache: &EncoderCache<T>,
    g_out: &Tensor<T>,
    grads: &mut ModelParams<T>,
) -> Tensor<T> {
    let mut g = g_out.clone();
    for (l, layer) in cache.layers.iter().enumerate().rev() {
        if let Some((rows, arg)) = &layer.pooled_from {
            g = max_pool_time_backward(*rows, &g, arg);
        }
        let p = &params.encoder[l];
        let input_dim = p.input();
        let mut g_in = Tensor::zeros(&[layer.steps.len(), input_dim]);
        let mut carry = LstmState::zeros(p.hidden());
        for t in (0..layer.steps.len()).rev() {
            for (a, &b) in carry.h.iter_mut().zip(g.row(t)) {
                *a += b;
            }
            carry = lstm_step_backward(p, &layer.steps[t], &carry, &mut grads.encoder[l], g_in.row_mut(t));
        }
        g = g_in;
    }
    debug_assert_eq!(g.rows(), cache.input_rows);
    g
}

/// Pull interface over input feature frames.
pub trait InputSource<T> {
    fn next_frame(&mut self) -> Result<Option<Vec<T>>, SourceError>;
}

/// Serves the rows of a feature matrix in order.
pub struct FeatureSource<'a, T> {
    feats: &'a Tensor<T>,
    next: usize,
}

impl<'a, T: Real> FeatureSource<'a, T> {
    pub fn new(feats: &'a Tensor<T>) -> Self {
        Self { feats, next: 0 }
    }
}

impl<T: Real> InputSource<T> for FeatureSource<'_, T> {
    fn next_frame(&mut self) -> Result<Option<Vec<T>>, SourceError> {
        if self.next >= self.feats.rows() {
            return Ok(None);
        }
        self.next += 1;
        Ok(Some(self.feats.row(self.next - 1).to_vec()))
    }
}

/// Serves feature rows but faults on any read of a frame at index `limit` or
/// beyond, while still reporting the end of input normally.
pub struct HorizonGuard<'a, T> {
    feats: &'a Tensor<T>,
    limit: usize,
    next: usize,
}

impl<'a, T: Real> HorizonGuard<'a, T> {
    pub fn new(feats: &'a Tensor<T>, limit: usize) -> Self {
        Self { feats, limit, next: 0 }
    }
}

impl<T: Real> InputSource<T> for HorizonGuard<'_, T> {
    fn next_frame(&mut self) -> Result<Option<Vec<T>>, SourceError> {
        if self.next >= self.feats.rows() {
            return Ok(None);
        }
        if self.next >= self.limit {
            return Err(SourceError::Horizon { index: self.next, limit: self.limit });
        }
        self.next += 1;
        Ok(Some(self.feats.row(self.next - 1).to_vec()))
    }
}

struct PoolBuffer<T> {
    max: Vec<T>,
    count: usize,
}

/// Encoder frames computed incrementally as input frames are pulled. Produces
/// exactly the rows [`encode`] would, in the same floating point order.
pub struct StreamingEncoder<'a, T, S> {
    cfg: &'a ModelConfig,
    params: &'a ModelParams<T>,
    source: S,
    states: Vec<LstmState<T>>,
    pools: Vec<Option<PoolBuffer<T>>>,
    produced: Vec<Vec<T>>,
    input_read: usize,
    exhausted: bool,
}

impl<'a, T: Real, S: InputSource<T>> StreamingEncoder<'a, T, S> {
    pub fn new(cfg: &'a ModelConfig, params: &'a ModelParams<T>, source: S) -> Self {
        let states = params.encoder.iter().map(|p| LstmState::zeros(p.hidden())).collect();
        let pools = (0..params.encoder.len())
            .map(|l| cfg.pools_after(l).then(|| PoolBuffer { max: Vec::new(), count: 0 }))
            .collect();
        Self { cfg, params, source, states, pools, produced: Vec::new(), input_read: 0, exhausted: false }
    }

    /// Number of input frames pulled so far.
    pub fn input_read(&self) -> usize {
        self.input_read
    }

    pub fn available(&self) -> usize {
        self.produced.len()
    }

    pub fn exhausted(&self) -> bool {
        self.exhausted
    }

    /// Pulls until the input ends and returns the total encoder length.
    pub fn drain(&mut self) -> Result<usize, SourceError> {
        while !self.exhausted {
            self.pull()?;
        }
        Ok(self.produced.len())
    }

    fn pull(&mut self) -> Result<(), SourceError> {
        match self.source.next_frame()? {
            Some(frame) => {
                if frame.len() != self.cfg.feature_dim {
                    return Err(SourceError::Other(format!(
                        "frame width {} vs feature_dim {}",
                        frame.len(),
                        self.cfg.feature_dim
                    )));
                }
                self.input_read += 1;
                self.feed(0, frame);
            }
            None => {
                self.exhausted = true;
                for l in 0..self.states.len() {
                    if let Some(buf) = self.pools[l].as_mut() {
                        if buf.count > 0 {
                            buf.count = 0;
                            let pooled = std::mem::take(&mut buf.max);
                            self.emit(l, pooled);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn feed(&mut self, layer: usize, x: Vec<T>) {
        let (next, _) = lstm_step(&self.params.encoder[layer], &x, &self.states[layer]);
        let out = next.h.clone();
        self.states[layer] = next;
        match self.pools[layer].as_mut() {
            None => self.emit(layer, out),
            Some(buf) => {
                if buf.count == 0 {
                    buf.max = out;
                } else {
                    for (m, &v) in buf.max.iter_mut().zip(&out) {
                        if v > *m {
                            *m = v;
                        }
                    }
                }
                buf.count += 1;
                if buf.count == self.cfg.pool_width {
                    buf.count = 0;
                    let pooled = std::mem::take(&mut buf.max);
                    self.emit(layer, pooled);
                }
            }
        }
    }

    fn emit(&mut self, layer: usize, frame: Vec<T>) {
        if layer + 1 == self.states.len() {
            self.produced.push(frame);
        } else {
            self.feed(layer + 1, frame);
        }
    }
}

impl<T: Real, S: InputSource<T>> FrameSource<T> for StreamingEncoder<'_, T, S> {
    fn frame(&mut self, j: usize) -> Result<Option<&[T]>, SourceError> {
        while self.produced.len() <= j && !self.exhausted {
            self.pull()?;
        }
        Ok(self.produced.get(j).map(Vec::as_slice))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_width_two() {
        let x = Tensor::from_rows(&[vec![1.0_f64], vec![3.0], vec![2.0], vec![5.0]]).unwrap();
        let (y, arg) = max_pool_time(&x, 2).unwrap();
        assert_eq!(y.data(), &[3.0, 5.0]);
        assert_eq!(arg, vec![1, 3]);
    }

    #[test]
    fn pool_partial_window_and_constant() {
        let x = Tensor::from_rows(&vec![vec![2.0_f64, -1.0]; 5]).unwrap();
        let (y, _) = max_pool_time(&x, 2).unwrap();
        assert_eq!(y.dims(), &[3, 2]);
        assert!(y.data().chunks(2).all(|r| r == [2.0, -1.0]));
    }

    #[test]
    fn pool_rejects_zero_width() {
        let x = Tensor::<f64>::zeros(&[4, 1]);
        assert!(max_pool_time(&x, 0).is_err());
    }

    #[test]
    fn pool_backward_routes_to_winner() {
        let x = Tensor::from_rows(&[vec![1.0_f64], vec![3.0], vec![2.0]]).unwrap();
        let (_, arg) = max_pool_time(&x, 2).unwrap();
        let g = max_pool_time_backward(3, &Tensor::from_rows(&[vec![10.0], vec![20.0]]).unwrap(), &arg);
        assert_eq!(g.data(), &[0.0, 10.0, 20.0]);
    }
}
