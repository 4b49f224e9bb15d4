//! Roughness-translation network: a small fully convolutional net mapping
//! (roughness, depth) to screen-space roughness.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// One convolution with weights laid out `[out][in][kh][kw]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl ConvLayer {
    pub fn zeros(in_ch: usize, out_ch: usize, kernel: usize) -> Self {
        ConvLayer {
            in_ch,
            out_ch,
            kernel,
            weights: vec![0.0; out_ch * in_ch * kernel * kernel],
            bias: vec![0.0; out_ch],
        }
    }

    fn forward(&self, input: &Image, relu: bool) -> Image {
        let (w, h) = (input.width, input.height);
        let r = (self.kernel / 2) as isize;
        let k = self.kernel;
        Image::from_fn(w, h, self.out_ch, |x, y, o| {
            let mut acc = self.bias[o] as f64;
            for i in 0..self.in_ch {
                for ky in 0..k {
                    let sy = y as isize + ky as isize - r;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let sx = x as isize + kx as isize - r;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let wt = self.weights[((o * self.in_ch + i) * k + ky) * k + kx] as f64;
                        acc += wt * input.get(sx as usize, sy as usize, i);
                    }
                }
            }
            if relu {
                acc.max(0.0)
            } else {
                acc
            }
        })
    }
}

#[derive(Serialize, Deserialize)]
struct LayerShape {
    #[serde(rename = "in")]
    in_ch: usize,
    out: usize,
    kernel: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    dtype: String,
    activation: String,
    layers: Vec<LayerShape>,
}

/// Input layer (2→8, 1×1), six hidden 3×3 layers with ReLU, output layer
/// (8→1, 1×1); output clamped to [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct ConvNet {
    pub layers: Vec<ConvLayer>,
}

const ARCH: [(usize, usize, usize); 8] = [
    (2, 8, 1),
    (8, 8, 3),
    (8, 8, 3),
    (8, 8, 3),
    (8, 8, 3),
    (8, 8, 3),
    (8, 8, 3),
    (8, 1, 1),
];

impl ConvNet {
    /// The fixed architecture with all weights and biases zero.
    pub fn zeros() -> Self {
        ConvNet {
            layers: ARCH.iter().map(|&(i, o, k)| ConvLayer::zeros(i, o, k)).collect(),
        }
    }

    fn check(&self) -> Result<()> {
        if self.layers.len() != ARCH.len() {
            return Err(Error::Network(format!("expected {} layers, found {}", ARCH.len(), self.layers.len())));
        }
        for (n, (l, &(i, o, k))) in self.layers.iter().zip(&ARCH).enumerate() {
            if (l.in_ch, l.out_ch, l.kernel) != (i, o, k) {
                return Err(Error::Network(format!(
                    "layer {n} is {}→{} k{}, expected {i}→{o} k{k}",
                    l.in_ch, l.out_ch, l.kernel
                )));
            }
            if l.weights.len() != o * i * k * k || l.bias.len() != o {
                return Err(Error::Network(format!("layer {n} parameter count mismatch")));
            }
        }
        Ok(())
    }

    /// Reads `net.json` and `net.bin` from `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join("net.json");
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Network(format!("net.json: {e}")))?;
        if manifest.dtype != "f32le" {
            return Err(Error::Network(format!("unsupported dtype {}", manifest.dtype)));
        }
        let bpath = dir.join("net.bin");
        let bytes = fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;
        if bytes.len() % 4 != 0 {
            return Err(Error::Network("net.bin length is not a multiple of 4".into()));
        }
        let floats: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let expected: usize = manifest.layers.iter().map(|l| l.out * l.in_ch * l.kernel * l.kernel + l.out).sum();
        if floats.len() != expected {
            return Err(Error::Network(format!("manifest describes {expected} floats, net.bin holds {}", floats.len())));
        }
        let mut off = 0;
        let mut layers = Vec::new();
        for l in &manifest.layers {
            let nw = l.out * l.in_ch * l.kernel * l.kernel;
            layers.push(ConvLayer {
                in_ch: l.in_ch,
                out_ch: l.out,
                kernel: l.kernel,
                weights: floats[off..off + nw].to_vec(),
                bias: floats[off + nw..off + nw + l.out].to_vec(),
            });
            off += nw + l.out;
        }
        let net = ConvNet { layers };
        net.check()?;
        Ok(net)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.check()?;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = Manifest {
            dtype: "f32le".into(),
            activation: "relu after hidden layers".into(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerShape {
                    in_ch: l.in_ch,
                    out: l.out_ch,
                    kernel: l.kernel,
                })
                .collect(),
        };
        let mpath = dir.join("net.json");
        fs::write(&mpath, serde_json::to_string_pretty(&manifest).expect("json")).map_err(|e| Error::io(&mpath, e))?;
        let bytes: Vec<u8> = self
            .layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias))
            .flat_map(|v| v.to_le_bytes())
            .collect();
        let bpath = dir.join("net.bin");
        fs::write(&bpath, bytes).map_err(|e| Error::io(&bpath, e))
    }

    /// Screen-space roughness for a roughness image and a depth image.
    pub fn infer(&self, r: &Image, depth: &Image) -> Result<Image> {
        self.check()?;
        let (w, h) = (r.width, r.height);
        let mut x = Image::from_fn(w, h, 2, |px, py, c| if c == 0 { r.get(px, py, 0) } else { depth.get(px, py, 0) });
        let last = self.layers.len() - 1;
        for (n, layer) in self.layers.iter().enumerate() {
            x = layer.forward(&x, n != 0 && n != last);
        }
        x.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_net_outputs_clamped_bias() {
        let mut net = ConvNet::zeros();
        net.layers[7].bias[0] = 0.3;
        let out = net.infer(&Image::filled(5, 4, 1, 0.8), &Image::filled(5, 4, 1, 2.0)).unwrap();
        assert!(out.data.iter().all(|v| (v - 0.3f32 as f64).abs() < 1e-12));
        net.layers[7].bias[0] = 1.7;
        let out = net.infer(&Image::filled(5, 4, 1, 0.8), &Image::filled(5, 4, 1, 2.0)).unwrap();
        assert!(out.data.iter().all(|v| *v == 1.0));
    }

    #[test]
    fn save_load_round_trip_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let mut net = ConvNet::zeros();
        for (i, l) in net.layers.iter_mut().enumerate() {
            l.weights.iter_mut().enumerate().for_each(|(k, w)| *w = ((i * 31 + k) % 7) as f32 * 0.01 - 0.03);
        }
        net.save(dir.path()).unwrap();
        assert_eq!(ConvNet::load(dir.path()).unwrap(), net);
        let b = dir.path().join("net.bin");
        let mut bytes = fs::read(&b).unwrap();
        bytes.truncate(bytes.len() - 4);
        fs::write(&b, bytes).unwrap();
        assert!(matches!(ConvNet::load(dir.path()), Err(Error::Network(_))));
    }

    #[test]
    fn inference_is_deterministic_and_local() {
        let mut net = ConvNet::zeros();
        net.layers[0].weights[0] = 1.0; // r → channel 0
        for l in 1..7 {
            net.layers[l].weights[4] = 1.0; // centre tap, channel 0 → 0
        }
        net.layers[7].weights[0] = 0.5;
        let r = Image::from_fn(6, 6, 1, |x, y, _| (x + y) as f64 / 10.0);
        let d = Image::new(6, 6, 1);
        let a = net.infer(&r, &d).unwrap();
        assert_eq!(a, net.infer(&r, &d).unwrap());
        for (o, i) in a.data.iter().zip(&r.data) {
            assert!((o - 0.5 * i).abs() < 1e-12);
        }
    }
}
