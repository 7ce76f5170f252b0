//! Noise-prediction U-Net: residual blocks with group norm and SiLU, a
//! sinusoidal time embedding injected into every block, strided
//! downsampling, nearest-neighbour upsampling and skip concatenation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ddpm::NoiseModel;
use crate::error::{invalid, Error, Result};
use crate::tensor::{ParamStore, Tape, Tensor, Var};

const GN_EPS: f32 = 1e-5;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub base_width: usize,
    pub multipliers: Vec<usize>,
    pub blocks_per_level: usize,
    pub groups: usize,
    pub time_dim: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            in_channels: 6,
            base_width: 32,
            multipliers: vec![1, 2, 4],
            blocks_per_level: 2,
            groups: 8,
            time_dim: 32,
        }
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.base_width == 0 || self.groups == 0 {
            return Err(invalid("U-Net channel counts and groups must be positive"));
        }
        if self.multipliers.is_empty() || self.multipliers.contains(&0) {
            return Err(invalid(format!(
                "channel multipliers must be non-empty and positive, got {:?}",
                self.multipliers
            )));
        }
        if self.blocks_per_level == 0 {
            return Err(invalid("need at least one residual block per level"));
        }
        if self.time_dim < 2 || self.time_dim % 2 != 0 {
            return Err(invalid(format!(
                "time embedding dimension must be even and >= 2, got {}",
                self.time_dim
            )));
        }
        Ok(())
    }

    pub fn levels(&self) -> usize {
        self.multipliers.len()
    }

    /// Spatial size must be divisible by this.
    pub fn size_divisor(&self) -> usize {
        1 << (self.levels() - 1)
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let &[_, c, h, w] = shape else {
            return Err(Error::Shape {
                op: "unet",
                detail: format!("expected [N, C, H, W], got {shape:?}"),
            });
        };
        if c != self.in_channels {
            return Err(Error::Shape {
                op: "unet",
                detail: format!(
                    "expected {} input channels, got {c} (input {shape:?})",
                    self.in_channels
                ),
            });
        }
        let d = self.size_divisor();
        if h != w || h % d != 0 || h == 0 {
            return Err(Error::Shape {
                op: "unet",
                detail: format!("expected a square input with side divisible by {d}, got {h}x{w}"),
            });
        }
        Ok(())
    }

    fn width(&self, level: usize) -> usize {
        self.base_width * self.multipliers[level]
    }

    fn groups_for(&self, channels: usize) -> usize {
        gcd(self.groups, channels)
    }
}

/// Structural description shared by initialization, counting and the
/// forward pass.
enum Layer {
    Conv {
        name: String,
        cin: usize,
        cout: usize,
        k: usize,
    },
    Norm {
        name: String,
        ch: usize,
    },
    Linear {
        name: String,
        fin: usize,
        fout: usize,
    },
}

struct ResSpec {
    prefix: String,
    cin: usize,
    cout: usize,
}

impl ResSpec {
    fn layers(&self, time_dim: usize) -> Vec<Layer> {
        let p = &self.prefix;
        let mut out = vec![
            Layer::Norm {
                name: format!("{p}.norm1"),
                ch: self.cin,
            },
            Layer::Conv {
                name: format!("{p}.conv1"),
                cin: self.cin,
                cout: self.cout,
                k: 3,
            },
            Layer::Linear {
                name: format!("{p}.time"),
                fin: time_dim,
                fout: self.cout,
            },
            Layer::Norm {
                name: format!("{p}.norm2"),
                ch: self.cout,
            },
            Layer::Conv {
                name: format!("{p}.conv2"),
                cin: self.cout,
                cout: self.cout,
                k: 3,
            },
        ];
        if self.cin != self.cout {
            out.push(Layer::Conv {
                name: format!("{p}.skip"),
                cin: self.cin,
                cout: self.cout,
                k: 1,
            });
        }
        out
    }
}

enum Stage {
    Res(ResSpec),
    Down {
        name: String,
        ch: usize,
    },
    /// Residual block preceded by concatenation with the latest skip.
    UpRes(ResSpec),
    Up {
        name: String,
        ch: usize,
    },
}

struct Plan {
    down: Vec<Stage>,
    mid: [ResSpec; 2],
    up: Vec<Stage>,
    top: usize,
}

fn plan(cfg: &UNetConfig) -> Plan {
    let mut down = Vec::new();
    let mut skips = vec![cfg.base_width];
    let mut ch = cfg.base_width;
    for level in 0..cfg.levels() {
        let out = cfg.width(level);
        for b in 0..cfg.blocks_per_level {
            down.push(Stage::Res(ResSpec {
                prefix: format!("down{level}.res{b}"),
                cin: ch,
                cout: out,
            }));
            ch = out;
            skips.push(ch);
        }
        if level + 1 < cfg.levels() {
            down.push(Stage::Down {
                name: format!("down{level}.downsample"),
                ch,
            });
            skips.push(ch);
        }
    }
    let mid = [
        ResSpec {
            prefix: "mid.res0".into(),
            cin: ch,
            cout: ch,
        },
        ResSpec {
            prefix: "mid.res1".into(),
            cin: ch,
            cout: ch,
        },
    ];
    let mut up = Vec::new();
    for level in (0..cfg.levels()).rev() {
        let out = cfg.width(level);
        for b in 0..=cfg.blocks_per_level {
            let skip = skips.pop().expect("one skip per up block");
            up.push(Stage::UpRes(ResSpec {
                prefix: format!("up{level}.res{b}"),
                cin: ch + skip,
                cout: out,
            }));
            ch = out;
        }
        if level > 0 {
            up.push(Stage::Up {
                name: format!("up{level}.upsample"),
                ch,
            });
        }
    }
    Plan {
        down,
        mid,
        up,
        top: ch,
    }
}

fn layers(cfg: &UNetConfig) -> Vec<Layer> {
    let p = plan(cfg);
    let td = cfg.time_dim;
    let mut out = vec![
        Layer::Linear {
            name: "time.fc1".into(),
            fin: td,
            fout: td,
        },
        Layer::Linear {
            name: "time.fc2".into(),
            fin: td,
            fout: td,
        },
        Layer::Conv {
            name: "conv_in".into(),
            cin: cfg.in_channels,
            cout: cfg.base_width,
            k: 3,
        },
    ];
    let stage_layers = |stage: &Stage| match stage {
        Stage::Res(r) | Stage::UpRes(r) => r.layers(td),
        Stage::Down { name, ch } | Stage::Up { name, ch } => {
            vec![Layer::Conv {
                name: name.clone(),
                cin: *ch,
                cout: *ch,
                k: 3,
            }]
        }
    };
    out.extend(p.down.iter().flat_map(stage_layers));
    out.extend(p.mid.iter().flat_map(|r| r.layers(td)));
    out.extend(p.up.iter().flat_map(stage_layers));
    out.push(Layer::Norm {
        name: "out.norm".into(),
        ch: p.top,
    });
    out.push(Layer::Conv {
        name: "out.conv".into(),
        cin: p.top,
        cout: 1,
        k: 3,
    });
    out
}

/// Every parameter name with its shape and initial standard deviation
/// (`None` for constant-initialized entries).
fn param_table(cfg: &UNetConfig) -> Vec<(String, Vec<usize>, Init)> {
    let mut out = Vec::new();
    for layer in layers(cfg) {
        match layer {
            Layer::Conv { name, cin, cout, k } => {
                let std = 1.0 / ((cin * k * k) as f32).sqrt();
                out.push((
                    format!("{name}.w"),
                    vec![cout, cin, k, k],
                    Init::Normal(std),
                ));
                out.push((format!("{name}.b"), vec![cout], Init::Const(0.0)));
            }
            Layer::Norm { name, ch } => {
                out.push((format!("{name}.scale"), vec![ch], Init::Const(1.0)));
                out.push((format!("{name}.shift"), vec![ch], Init::Const(0.0)));
            }
            Layer::Linear { name, fin, fout } => {
                out.push((
                    format!("{name}.w"),
                    vec![fout, fin],
                    Init::Normal(1.0 / (fin as f32).sqrt()),
                ));
                out.push((format!("{name}.b"), vec![fout], Init::Const(0.0)));
            }
        }
    }
    out
}

enum Init {
    Normal(f32),
    Const(f32),
}

/// Exact number of trainable scalars.
pub fn count_params(cfg: &UNetConfig) -> usize {
    layers(cfg)
        .iter()
        .map(|l| match l {
            Layer::Conv { cin, cout, k, .. } => cout * cin * k * k + cout,
            Layer::Norm { ch, .. } => 2 * ch,
            Layer::Linear { fin, fout, .. } => fout * fin + fout,
        })
        .sum()
}

/// `[N, dim]` sinusoidal features of the diffusion step.
pub fn sinusoidal_embedding(t: &[usize], dim: usize) -> Tensor {
    let half = dim / 2;
    let mut data = Vec::with_capacity(t.len() * dim);
    for &ts in t {
        let freqs: Vec<f64> = (0..half)
            .map(|i| (-(10000f64.ln()) * i as f64 / half as f64).exp())
            .collect();
        data.extend(freqs.iter().map(|f| (ts as f64 * f).sin() as f32));
        data.extend(freqs.iter().map(|f| (ts as f64 * f).cos() as f32));
    }
    Tensor::new([t.len(), dim], data).expect("embedding shape")
}

#[derive(Clone, Debug)]
pub struct UNet {
    pub config: UNetConfig,
    pub params: ParamStore,
}

impl UNet {
    /// Weights drawn from `N(0, 1/fan_in)`, biases and norm shifts zero,
    /// norm scales one.
    pub fn new(config: UNetConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        for (name, shape, init) in param_table(&config) {
            let t = match init {
                Init::Normal(std) => Tensor::randn(shape, std, rng),
                Init::Const(v) => Tensor::full(shape, v),
            };
            params.insert(name, t);
        }
        Ok(Self { config, params })
    }

    /// Wraps an existing parameter store, checking it against the layout.
    pub fn from_params(config: UNetConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        for (name, shape, _) in param_table(&config) {
            match params.get(&name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(Error::Shape {
                        op: "unet",
                        detail: format!(
                            "parameter {name}: expected {shape:?}, found {:?}",
                            t.shape()
                        ),
                    })
                }
                None => return Err(invalid(format!("checkpoint lacks parameter {name}"))),
            }
        }
        Ok(Self { config, params })
    }

    fn conv(&self, tape: &mut Tape, name: &str, x: Var, stride: usize) -> Result<Var> {
        let w = tape.param(&self.params, &format!("{name}.w"))?;
        let b = tape.param(&self.params, &format!("{name}.b"))?;
        let k = tape.value(w).shape()[2];
        let y = tape.conv2d(x, w, stride, k / 2)?;
        tape.add_bias(y, b)
    }

    fn norm_act(&self, tape: &mut Tape, name: &str, x: Var) -> Result<Var> {
        let ch = tape.value(x).shape()[1];
        let scale = tape.param(&self.params, &format!("{name}.scale"))?;
        let shift = tape.param(&self.params, &format!("{name}.shift"))?;
        let y = tape.group_norm(x, self.config.groups_for(ch), scale, shift, GN_EPS)?;
        Ok(tape.silu(y))
    }

    fn linear(&self, tape: &mut Tape, name: &str, x: Var) -> Result<Var> {
        let w = tape.param(&self.params, &format!("{name}.w"))?;
        let b = tape.param(&self.params, &format!("{name}.b"))?;
        tape.linear(x, w, b)
    }

    fn res_block(&self, tape: &mut Tape, spec: &ResSpec, x: Var, temb: Var) -> Result<Var> {
        let p = &spec.prefix;
        let h = self.norm_act(tape, &format!("{p}.norm1"), x)?;
        let h = self.conv(tape, &format!("{p}.conv1"), h, 1)?;
        let t = self.linear(tape, &format!("{p}.time"), temb)?;
        let h = tape.add_channels(h, t)?;
        let h = self.norm_act(tape, &format!("{p}.norm2"), h)?;
        let h = self.conv(tape, &format!("{p}.conv2"), h, 1)?;
        let skip = if spec.cin != spec.cout {
            self.conv(tape, &format!("{p}.skip"), x, 1)?
        } else {
            x
        };
        tape.add(h, skip)
    }
}

impl NoiseModel for UNet {
    fn forward(&self, tape: &mut Tape, input: Var, t: &[usize]) -> Result<Var> {
        self.config.check_input(tape.value(input).shape())?;
        if t.len() != tape.value(input).shape()[0] {
            return Err(invalid(format!(
                "{} steps for a batch of {}",
                t.len(),
                tape.value(input).shape()[0]
            )));
        }
        let emb = tape.leaf(sinusoidal_embedding(t, self.config.time_dim));
        let temb = self.linear(tape, "time.fc1", emb)?;
        let temb = tape.silu(temb);
        let temb = self.linear(tape, "time.fc2", temb)?;
        let temb = tape.silu(temb);

        let p = plan(&self.config);
        let mut h = self.conv(tape, "conv_in", input, 1)?;
        let mut skips = vec![h];
        for stage in &p.down {
            h = match stage {
                Stage::Res(spec) => self.res_block(tape, spec, h, temb)?,
                Stage::Down { name, .. } => self.conv(tape, name, h, 2)?,
                _ => unreachable!("encoder holds only residual and downsampling stages"),
            };
            skips.push(h);
        }
        for spec in &p.mid {
            h = self.res_block(tape, spec, h, temb)?;
        }
        for stage in &p.up {
            h = match stage {
                Stage::UpRes(spec) => {
                    let skip = skips.pop().expect("skip available");
                    let cat = tape.concat(&[h, skip])?;
                    self.res_block(tape, spec, cat, temb)?
                }
                Stage::Up { name, .. } => {
                    let up = tape.upsample2x(h)?;
                    self.conv(tape, name, up, 1)?
                }
                _ => unreachable!("decoder holds only residual and upsampling stages"),
            };
        }
        let h = self.norm_act(tape, "out.norm", h)?;
        self.conv(tape, "out.conv", h, 1)
    }
}
