//! Parameter layout and storage.
//!
//! A [`ParamSet`] is a flat list of tensors plus a [`ParamLayout`] that names
//! each one and records where it sits in the model. The layout tree stores
//! indices into the flat list; [`ParamTree::map`] turns it into a tree of
//! tensor references or tape variables.

use crate::config::{ModelConfig, SublayerKind};
use crate::error::{Error, Result};
use crate::rng::PrngState;
use crate::tensor::Tensor;

/// Standard deviation of the normal initialiser for weights.
pub const INIT_STD: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct NormParams<T> {
    pub gain: T,
    pub bias: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FfnParams<T> {
    pub w1: T,
    pub b1: T,
    pub w2: T,
    pub b2: T,
}

/// Per-head query/key/value projections (`d x h` each) and the shared output projection.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams<T> {
    pub query: Vec<T>,
    pub key: Vec<T>,
    pub value: Vec<T>,
    pub out: T,
}

/// `ext` stacks one `d x d` matrix per lag: shape `[l, d, d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SheParams<T> {
    pub ext: T,
    pub adj: T,
    pub out: T,
}

/// `ext` stacks one length-`d` vector per lag: shape `[l, d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeParams<T> {
    pub ext: T,
    pub in_ext: T,
    pub adj: T,
    pub out: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeParams<T> {
    pub ext: T,
    pub adj: T,
    pub out: T,
}

/// One scalar per lag: shape `[l]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeParams<T> {
    pub ext: T,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MixerParams<T> {
    Attention(AttentionParams<T>),
    She(SheParams<T>),
    He(HeParams<T>),
    We(WeParams<T>),
    Me(MeParams<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub norm1: NormParams<T>,
    pub mixer: MixerParams<T>,
    pub norm2: NormParams<T>,
    pub ffn: FfnParams<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamTree<T> {
    pub tok_emb: T,
    pub pos_emb: T,
    pub layers: Vec<LayerParams<T>>,
    pub final_norm: NormParams<T>,
    pub head_w: T,
    pub head_b: T,
}

impl<T> NormParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> NormParams<U> {
        NormParams {
            gain: f(&self.gain),
            bias: f(&self.bias),
        }
    }
}

impl<T> FfnParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> FfnParams<U> {
        FfnParams {
            w1: f(&self.w1),
            b1: f(&self.b1),
            w2: f(&self.w2),
            b2: f(&self.b2),
        }
    }
}

impl<T> MixerParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> MixerParams<U> {
        match self {
            MixerParams::Attention(p) => MixerParams::Attention(AttentionParams {
                query: p.query.iter().map(&mut *f).collect(),
                key: p.key.iter().map(&mut *f).collect(),
                value: p.value.iter().map(&mut *f).collect(),
                out: f(&p.out),
            }),
            MixerParams::She(p) => MixerParams::She(SheParams {
                ext: f(&p.ext),
                adj: f(&p.adj),
                out: f(&p.out),
            }),
            MixerParams::He(p) => MixerParams::He(HeParams {
                ext: f(&p.ext),
                in_ext: f(&p.in_ext),
                adj: f(&p.adj),
                out: f(&p.out),
            }),
            MixerParams::We(p) => MixerParams::We(WeParams {
                ext: f(&p.ext),
                adj: f(&p.adj),
                out: f(&p.out),
            }),
            MixerParams::Me(p) => MixerParams::Me(MeParams { ext: f(&p.ext) }),
        }
    }

    pub fn kind(&self) -> SublayerKind {
        match self {
            MixerParams::Attention(_) => SublayerKind::Attention,
            MixerParams::She(_) => SublayerKind::She,
            MixerParams::He(_) => SublayerKind::He,
            MixerParams::We(_) => SublayerKind::We,
            MixerParams::Me(_) => SublayerKind::Me,
        }
    }

    /// Every tensor slot of the sublayer, in layout order.
    pub fn items(&self) -> Vec<&T> {
        match self {
            MixerParams::Attention(p) => p
                .query
                .iter()
                .chain(&p.key)
                .chain(&p.value)
                .chain(std::iter::once(&p.out))
                .collect(),
            MixerParams::She(p) => vec![&p.ext, &p.adj, &p.out],
            MixerParams::He(p) => vec![&p.ext, &p.in_ext, &p.adj, &p.out],
            MixerParams::We(p) => vec![&p.ext, &p.adj, &p.out],
            MixerParams::Me(p) => vec![&p.ext],
        }
    }
}

impl<T> LayerParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> LayerParams<U> {
        LayerParams {
            norm1: self.norm1.map(f),
            mixer: self.mixer.map(f),
            norm2: self.norm2.map(f),
            ffn: self.ffn.map(f),
        }
    }
}

impl<T> ParamTree<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> ParamTree<U> {
        ParamTree {
            tok_emb: f(&self.tok_emb),
            pos_emb: f(&self.pos_emb),
            layers: self.layers.iter().map(|l| l.map(&mut f)).collect(),
            final_norm: self.final_norm.map(&mut f),
            head_w: f(&self.head_w),
            head_b: f(&self.head_b),
        }
    }
}

/// How a slot is filled by [`ParamSet::init`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Normal,
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Slot {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub tree: ParamTree<usize>,
    pub slots: Vec<Slot>,
}

struct Builder {
    slots: Vec<Slot>,
}

impl Builder {
    fn add(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.slots.push(Slot { name, shape, init });
        self.slots.len() - 1
    }

    fn norm(&mut self, prefix: &str, d: usize) -> NormParams<usize> {
        NormParams {
            gain: self.add(format!("{prefix}.gain"), vec![1, d], Init::Ones),
            bias: self.add(format!("{prefix}.bias"), vec![1, d], Init::Zeros),
        }
    }

    fn mixer(&mut self, prefix: &str, cfg: &ModelConfig) -> MixerParams<usize> {
        let (d, l) = (cfg.model_dim, cfg.context_len);
        let w = |b: &mut Self, name: &str, shape: Vec<usize>| {
            b.add(format!("{prefix}.{name}"), shape, Init::Normal)
        };
        match cfg.sublayer {
            SublayerKind::Attention => {
                let h = cfg.head_dim();
                let per_head = |b: &mut Self, name: &str| -> Vec<usize> {
                    (0..cfg.heads)
                        .map(|j| w(b, &format!("{name}.{j}"), vec![d, h]))
                        .collect()
                };
                let query = per_head(self, "attention.query");
                let key = per_head(self, "attention.key");
                let value = per_head(self, "attention.value");
                MixerParams::Attention(AttentionParams {
                    query,
                    key,
                    value,
                    out: w(self, "attention.out", vec![d, d]),
                })
            }
            SublayerKind::She => MixerParams::She(SheParams {
                ext: w(self, "she.ext", vec![l, d, d]),
                adj: w(self, "she.adj", vec![d, d]),
                out: w(self, "she.out", vec![d, d]),
            }),
            SublayerKind::He => MixerParams::He(HeParams {
                ext: w(self, "he.ext", vec![l, d]),
                in_ext: w(self, "he.in_ext", vec![d, d]),
                adj: w(self, "he.adj", vec![d, d]),
                out: w(self, "he.out", vec![d, d]),
            }),
            SublayerKind::We => MixerParams::We(WeParams {
                ext: w(self, "we.ext", vec![l, d]),
                adj: w(self, "we.adj", vec![d, d]),
                out: w(self, "we.out", vec![d, d]),
            }),
            SublayerKind::Me => MixerParams::Me(MeParams {
                ext: w(self, "me.ext", vec![l]),
            }),
        }
    }
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let (u, l, d, c) = (cfg.vocab_size, cfg.context_len, cfg.model_dim, cfg.ffn_dim);
        let mut b = Builder { slots: Vec::new() };
        let tok_emb = b.add("tok_emb".into(), vec![u, d], Init::Normal);
        let pos_emb = b.add("pos_emb".into(), vec![l, d], Init::Normal);
        let layers = (0..cfg.layers)
            .map(|i| {
                let p = format!("layers.{i}");
                LayerParams {
                    norm1: b.norm(&format!("{p}.norm1"), d),
                    mixer: b.mixer(&p, cfg),
                    norm2: b.norm(&format!("{p}.norm2"), d),
                    ffn: FfnParams {
                        w1: b.add(format!("{p}.ffn.w1"), vec![d, c], Init::Normal),
                        b1: b.add(format!("{p}.ffn.b1"), vec![1, c], Init::Zeros),
                        w2: b.add(format!("{p}.ffn.w2"), vec![c, d], Init::Normal),
                        b2: b.add(format!("{p}.ffn.b2"), vec![1, d], Init::Zeros),
                    },
                }
            })
            .collect();
        let final_norm = b.norm("final_norm", d);
        let head_w = b.add("head.w".into(), vec![d, u], Init::Normal);
        let head_b = b.add("head.b".into(), vec![1, u], Init::Zeros);
        Ok(Self {
            tree: ParamTree {
                tok_emb,
                pos_emb,
                layers,
                final_norm,
                head_w,
                head_b,
            },
            slots: b.slots,
        })
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.slots.iter().position(|s| s.name == name)
    }
}

/// Every trainable tensor of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    layout: ParamLayout,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        let layout = ParamLayout::new(cfg)?;
        let tensors = layout.slots.iter().map(|s| Tensor::zeros(&s.shape)).collect();
        Ok(Self { layout, tensors })
    }

    /// Weights from `N(0, INIT_STD^2)`, biases zero, layer-norm gains one.
    /// Slots are filled in layout order from `rng`.
    pub fn init(cfg: &ModelConfig, rng: &mut PrngState) -> Result<Self> {
        let layout = ParamLayout::new(cfg)?;
        let tensors = layout
            .slots
            .iter()
            .map(|s| match s.init {
                Init::Zeros => Tensor::zeros(&s.shape),
                Init::Ones => Tensor::filled(&s.shape, 1.0),
                Init::Normal => {
                    let n = s.shape.iter().product();
                    let data = (0..n).map(|_| rng.normal(INIT_STD)).collect();
                    Tensor::new(s.shape.clone(), data).expect("slot shape")
                }
            })
            .collect();
        Ok(Self { layout, tensors })
    }

    /// Assemble from named tensors, in any order. Every slot must be present exactly once.
    pub fn from_named(cfg: &ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        let layout = ParamLayout::new(cfg)?;
        let mut slots: Vec<Option<Tensor>> = vec![None; layout.len()];
        for (name, t) in named {
            let i = layout
                .index_of(&name)
                .ok_or_else(|| Error::Data(format!("unexpected parameter `{name}`")))?;
            if slots[i].replace(t).is_some() {
                return Err(Error::Data(format!("duplicate parameter `{name}`")));
            }
        }
        let tensors = slots
            .into_iter()
            .zip(&layout.slots)
            .map(|(t, s)| t.ok_or_else(|| Error::Data(format!("missing parameter `{}`", s.name))))
            .collect::<Result<Vec<_>>>()?;
        let set = Self { layout, tensors };
        set.audit()?;
        Ok(set)
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.layout.slots.iter().map(|s| s.name.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.layout.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.layout.index_of(name).map(move |i| &mut self.tensors[i])
    }

    /// Tree of references into this set.
    pub fn view(&self) -> ParamTree<&Tensor> {
        self.layout.tree.map(|&i| &self.tensors[i])
    }

    /// Check that every tensor has the shape its slot demands.
    pub fn audit(&self) -> Result<()> {
        for (s, t) in self.layout.slots.iter().zip(&self.tensors) {
            if t.shape() != s.shape.as_slice() {
                return Err(Error::Dimension {
                    op: "parameter audit",
                    lhs: s.shape.clone(),
                    rhs: t.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Scalar count of the token-mixing sublayer of one layer.
    pub fn mixer_params(&self, layer: usize) -> usize {
        self.layout.tree.layers[layer]
            .mixer
            .items()
            .into_iter()
            .map(|&i| self.tensors[i].numel())
            .sum()
    }
}
