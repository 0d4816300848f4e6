use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::container::{read_container, write_container, Container, Tensor};
use crate::error::{Error, Result};
use crate::featurize::CHANNELS;

/// One set-abstraction level; `centroids == None` pools the whole set.
#[derive(Debug, Clone, PartialEq)]
pub struct SaLayerSpec {
    pub centroids: Option<usize>,
    pub radius: f64,
    pub mlp: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Arch {
    PointNetPP {
        sa: Vec<SaLayerSpec>,
        /// Hidden widths with their dropout rates.
        fc: Vec<(usize, f64)>,
        /// Points per ball region.
        max_n: usize,
    },
    PointNet {
        mlp: Vec<usize>,
        fc: Vec<usize>,
    },
}

/// Architecture plus the featurizer channels it consumes, in order.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchSpec {
    pub arch: Arch,
    pub inputs: Vec<String>,
}

fn all_channels() -> Vec<String> {
    CHANNELS.iter().map(|s| s.to_string()).collect()
}

fn widths(s: &str) -> Result<Vec<usize>> {
    s.split('-')
        .map(|w| w.parse::<usize>().ok().filter(|&w| w > 0))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::Container(format!("bad width list `{s}`")))
}

fn join(w: &[usize]) -> String {
    w.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("-")
}

impl ArchSpec {
    /// SA(128, 0.2, [16, 32]) → SA(16, 0.5, [32, 64]) → SA([64, 128]) →
    /// FC(64, 0.4) → FC(16, 0.4) → FC(1).
    pub fn pointnetpp() -> Self {
        Self {
            arch: Arch::PointNetPP {
                sa: vec![
                    SaLayerSpec { centroids: Some(128), radius: 0.2, mlp: vec![16, 32] },
                    SaLayerSpec { centroids: Some(16), radius: 0.5, mlp: vec![32, 64] },
                    SaLayerSpec { centroids: None, radius: 0.0, mlp: vec![64, 128] },
                ],
                fc: vec![(64, 0.4), (16, 0.4)],
                max_n: 32,
            },
            inputs: all_channels(),
        }
    }

    /// Shared 16-16-16 point MLP, max-pool bottleneck of 16, then 64-64-1.
    pub fn pointnet() -> Self {
        Self {
            arch: Arch::PointNet {
                mlp: vec![16, 16, 16],
                fc: vec![64, 64],
            },
            inputs: all_channels(),
        }
    }

    pub fn by_kind(kind: &str) -> Result<Self> {
        match kind {
            "pointnetpp" => Ok(Self::pointnetpp()),
            "pointnet" => Ok(Self::pointnet()),
            k => Err(Error::InvalidInput(format!("unknown architecture `{k}`"))),
        }
    }

    pub fn with_inputs(mut self, inputs: &[&str]) -> Result<Self> {
        self.inputs = inputs.iter().map(|s| s.to_string()).collect();
        self.validate()?;
        Ok(self)
    }

    pub fn kind(&self) -> &'static str {
        match self.arch {
            Arch::PointNetPP { .. } => "pointnetpp",
            Arch::PointNet { .. } => "pointnet",
        }
    }

    /// Positions of `u` and `v` among the inputs.
    pub fn coord_columns(&self) -> Option<[usize; 2]> {
        let u = self.inputs.iter().position(|c| c == "u")?;
        let v = self.inputs.iter().position(|c| c == "v")?;
        Some([u, v])
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.is_empty() {
            return Err(Error::InvalidInput("architecture has no input channels".into()));
        }
        for (i, c) in self.inputs.iter().enumerate() {
            if !CHANNELS.contains(&c.as_str()) {
                return Err(Error::UnknownChannel(c.clone()));
            }
            if self.inputs[..i].contains(c) {
                return Err(Error::InvalidInput(format!("input channel `{c}` repeated")));
            }
        }
        match &self.arch {
            Arch::PointNetPP { sa, fc, max_n } => {
                if self.coord_columns().is_none() {
                    return Err(Error::InvalidInput("pointnetpp groups on `u` and `v`; both must be inputs".into()));
                }
                let ok = !sa.is_empty()
                    && *max_n > 0
                    && sa.iter().all(|l| !l.mlp.is_empty() && l.centroids.is_none_or(|k| k > 0 && l.radius > 0.0))
                    && sa.last().is_some_and(|l| l.centroids.is_none())
                    && sa[..sa.len() - 1].iter().all(|l| l.centroids.is_some())
                    && fc.iter().all(|(w, p)| *w > 0 && (0.0..1.0).contains(p));
                if !ok {
                    return Err(Error::InvalidInput("malformed pointnetpp layout".into()));
                }
            }
            Arch::PointNet { mlp, fc } => {
                if mlp.is_empty() {
                    return Err(Error::InvalidInput("pointnet needs a point mlp".into()));
                }
                let _ = fc;
            }
        }
        Ok(())
    }

    pub fn tag(&self) -> String {
        let mut s = format!("{};in={}", self.kind(), self.inputs.join(","));
        match &self.arch {
            Arch::PointNetPP { sa, fc, max_n } => {
                let sa: Vec<String> = sa
                    .iter()
                    .map(|l| match l.centroids {
                        Some(k) => format!("{k}/{}/{}", l.radius, join(&l.mlp)),
                        None => format!("g/{}", join(&l.mlp)),
                    })
                    .collect();
                let fc: Vec<String> = fc.iter().map(|(w, p)| format!("{w}/{p}")).collect();
                s.push_str(&format!(";n={max_n};sa={};fc={}", sa.join(","), fc.join(",")));
            }
            Arch::PointNet { mlp, fc } => {
                s.push_str(&format!(";mlp={};fc={}", join(mlp), join(fc)));
            }
        }
        s
    }

    pub fn parse(tag: &str) -> Result<Self> {
        let bad = |m: &str| Error::Container(format!("architecture tag `{tag}`: {m}"));
        let mut parts = tag.split(';');
        let kind = parts.next().unwrap_or("");
        let mut fields = std::collections::HashMap::new();
        for p in parts {
            let (k, v) = p.split_once('=').ok_or_else(|| bad("expected key=value"))?;
            fields.insert(k, v);
        }
        let get = |k: &str| fields.get(k).copied().ok_or_else(|| bad(&format!("missing `{k}`")));
        let inputs: Vec<String> = get("in")?.split(',').map(str::to_string).collect();
        let arch = match kind {
            "pointnetpp" => {
                let max_n = get("n")?.parse().map_err(|_| bad("bad n"))?;
                let sa = get("sa")?
                    .split(',')
                    .map(|l| {
                        let f: Vec<&str> = l.split('/').collect();
                        match f.as_slice() {
                            ["g", w] => Ok(SaLayerSpec { centroids: None, radius: 0.0, mlp: widths(w)? }),
                            [k, r, w] => Ok(SaLayerSpec {
                                centroids: Some(k.parse().map_err(|_| bad("bad centroid count"))?),
                                radius: r.parse().map_err(|_| bad("bad radius"))?,
                                mlp: widths(w)?,
                            }),
                            _ => Err(bad("bad sa level")),
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                let fc_s = get("fc")?;
                let fc = if fc_s.is_empty() {
                    Vec::new()
                } else {
                    fc_s.split(',')
                        .map(|l| {
                            let (w, p) = l.split_once('/').ok_or_else(|| bad("bad fc"))?;
                            Ok((w.parse().map_err(|_| bad("bad fc width"))?, p.parse().map_err(|_| bad("bad dropout"))?))
                        })
                        .collect::<Result<Vec<_>>>()?
                };
                Arch::PointNetPP { sa, fc, max_n }
            }
            "pointnet" => {
                let fc_s = get("fc")?;
                Arch::PointNet {
                    mlp: widths(get("mlp")?)?,
                    fc: if fc_s.is_empty() { Vec::new() } else { widths(fc_s)? },
                }
            }
            k => return Err(bad(&format!("unknown architecture `{k}`"))),
        };
        let spec = Self { arch, inputs };
        spec.validate()?;
        Ok(spec)
    }

    /// Parameter names and shapes in storage order.
    pub fn param_layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let block = |out: &mut Vec<(String, Vec<usize>)>, prefix: String, fan_in: usize, width: usize, bn: bool| {
            out.push((format!("{prefix}.weight"), vec![width, fan_in]));
            out.push((format!("{prefix}.bias"), vec![width]));
            if bn {
                for s in ["gamma", "beta", "running_mean", "running_var"] {
                    out.push((format!("{prefix}.bn.{s}"), vec![width]));
                }
            }
        };
        let mut c = self.inputs.len();
        match &self.arch {
            Arch::PointNetPP { sa, fc, .. } => {
                for (l, level) in sa.iter().enumerate() {
                    let mut fan_in = c + 2;
                    for (j, &w) in level.mlp.iter().enumerate() {
                        block(&mut out, format!("sa{}.mlp{}", l + 1, j + 1), fan_in, w, true);
                        fan_in = w;
                    }
                    c = fan_in;
                }
                for (j, &(w, _)) in fc.iter().enumerate() {
                    block(&mut out, format!("fc{}", j + 1), c, w, true);
                    c = w;
                }
            }
            Arch::PointNet { mlp, fc } => {
                for (j, &w) in mlp.iter().enumerate() {
                    block(&mut out, format!("mlp{}", j + 1), c, w, true);
                    c = w;
                }
                for (j, &w) in fc.iter().enumerate() {
                    block(&mut out, format!("fc{}", j + 1), c, w, true);
                    c = w;
                }
            }
        }
        block(&mut out, "out".into(), c, 1, false);
        out
    }
}

pub(crate) fn is_trainable(name: &str) -> bool {
    !(name.ends_with(".running_mean") || name.ends_with(".running_var"))
}

/// Named parameter tensors of a scorer, in layout order.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights {
    pub spec: ArchSpec,
    pub tensors: Vec<(String, Tensor)>,
}

impl NetworkWeights {
    /// Kaiming-uniform linear weights, zero biases, unit batch-norm scale.
    pub fn init(spec: ArchSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = spec
            .param_layout()
            .into_iter()
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                let data = if name.ends_with(".weight") {
                    let bound = (6.0 / shape[1] as f64).sqrt();
                    (0..n).map(|_| rng.random_range(-bound..bound) as f32).collect()
                } else if name.ends_with(".gamma") || name.ends_with(".running_var") {
                    vec![1.0; n]
                } else {
                    vec![0.0; n]
                };
                (name, Tensor { shape, data })
            })
            .collect();
        Ok(Self { spec, tensors })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_container(&self) -> Container {
        Container {
            tag: self.spec.tag(),
            tensors: self.tensors.clone(),
        }
    }

    pub fn from_container(c: Container) -> Result<Self> {
        let spec = ArchSpec::parse(&c.tag)?;
        let layout = spec.param_layout();
        if layout.len() != c.tensors.len() {
            let missing: Vec<&str> = layout
                .iter()
                .filter(|(n, _)| c.get(n).is_none())
                .map(|(n, _)| n.as_str())
                .collect();
            return Err(Error::Container(format!(
                "expected {} tensors, found {}; missing {:?}",
                layout.len(),
                c.tensors.len(),
                missing
            )));
        }
        for ((name, shape), (found, t)) in layout.iter().zip(&c.tensors) {
            if name != found {
                return Err(Error::Container(format!("expected tensor `{name}`, found `{found}`")));
            }
            if *shape != t.shape {
                return Err(Error::Container(format!(
                    "tensor `{name}` has shape {:?}, expected {shape:?}",
                    t.shape
                )));
            }
        }
        Ok(Self { spec, tensors: c.tensors })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        write_container(&self.to_container())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_container(read_container(bytes)?)
    }

    /// Loads and checks the architecture kind.
    pub fn from_bytes_expecting(bytes: &[u8], kind: &str) -> Result<Self> {
        let c = read_container(bytes)?;
        let found = c.tag.split(';').next().unwrap_or("").to_string();
        if found != kind {
            return Err(Error::ArchitectureMismatch {
                expected: kind.to_string(),
                found,
            });
        }
        Self::from_container(c)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
