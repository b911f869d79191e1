//! The full cross-domain model: embeddings, history attention, interest
//! attention, bi-interaction, DNN, then the adversarial head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::data::{pad_history, Domain, Instance, ItemField};
use crate::error::{Error, Result};
use crate::model::head::{AdversarialHead, Forward, ForwardOutputs, Targets};
use crate::model::layers::{self, AttentionVars, InterestVars};
use crate::model::{InterestConcat, ModelConfig, SequenceAggregation};
use crate::params::{init_embedding, init_weight, Bound, ParamId, ParamStore, Partition};
use crate::tensor::Tensor;

/// A categorical field and its vocabulary size (including the reserved
/// padding and unknown ids).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub vocab_size: usize,
}

impl FieldSpec {
    pub fn new(name: impl Into<String>, vocab_size: usize) -> Self {
        Self {
            name: name.into(),
            vocab_size,
        }
    }
}

/// Categorical fields of the three embedded groups. The first item field of
/// each domain is the item id, which history sequences also index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub profile: Vec<FieldSpec>,
    pub target_item: Vec<FieldSpec>,
    pub source_item: Vec<FieldSpec>,
}

impl FeatureLayout {
    fn validate(&self) -> Result<()> {
        for (group, fields) in [
            ("profile", &self.profile),
            ("target item", &self.target_item),
            ("source item", &self.source_item),
        ] {
            if fields.is_empty() {
                return Err(Error::Config(format!("{group} group needs at least one field")));
            }
            if let Some(f) = fields.iter().find(|f| f.vocab_size < 2) {
                return Err(Error::Config(format!(
                    "field `{}` needs room for the reserved ids",
                    f.name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Ids {
    profile: Vec<ParamId>,
    target_item: Vec<ParamId>,
    source_item: Vec<ParamId>,
    att_target: (ParamId, ParamId),
    att_source: (ParamId, ParamId),
    /// `[u, s, t]` triples of `(V, g, b)`.
    interest: [(ParamId, ParamId, ParamId); 3],
    bi_coeffs: ParamId,
    dnn: Vec<(ParamId, ParamId)>,
    head: AdversarialHead,
}

/// The DADIN model with its parameters.
#[derive(Clone, Debug)]
pub struct Dadin {
    config: ModelConfig,
    layout: FeatureLayout,
    params: ParamStore,
    ids: Ids,
}

impl Dadin {
    /// Builds and initialises a model from `seed`.
    pub fn new(config: ModelConfig, layout: FeatureLayout, seed: u64) -> Result<Self> {
        config.validate()?;
        layout.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.embed_dim;
        let mut store = ParamStore::new();
        let mut tables = |group: &str, fields: &[FieldSpec], store: &mut ParamStore| {
            fields
                .iter()
                .map(|f| {
                    store.add(
                        format!("emb.{group}.{}", f.name),
                        Partition::Feature,
                        init_embedding(&mut rng, f.vocab_size, d),
                    )
                })
                .collect::<Vec<_>>()
        };
        let profile = tables("profile", &layout.profile, &mut store);
        let target_item = tables("target", &layout.target_item, &mut store);
        let source_item = tables("source", &layout.source_item, &mut store);

        let mut attention = |name: &str, store: &mut ParamStore| {
            let w = store.add(
                format!("att.{name}.w"),
                Partition::Feature,
                init_weight(&mut rng, d, 4 * d),
            );
            let h = init_weight(&mut rng, 1, d).reshape(vec![d]).expect("same size");
            let h = store.add(format!("att.{name}.h"), Partition::Feature, h);
            (w, h)
        };
        let att_target = attention("target", &mut store);
        let att_source = attention("source", &mut store);

        let interest = ["u", "s", "t"].map(|k| {
            let v = store.add(
                format!("interest.{k}.v"),
                Partition::Feature,
                init_weight(&mut rng, d, 4 * d),
            );
            let g = init_weight(&mut rng, 1, d).reshape(vec![d]).expect("same size");
            let g = store.add(format!("interest.{k}.g"), Partition::Feature, g);
            let b = store.add(format!("interest.{k}.b"), Partition::Feature, Tensor::zeros(vec![1]));
            (v, g, b)
        });
        let bi_coeffs = store.add("bi.c", Partition::Feature, Tensor::ones(vec![4]));

        let variant = config.variant;
        let crossed = if variant.use_bi_interaction { d } else { 4 * d };
        let mut dnn = Vec::new();
        if variant.use_dnn {
            let mut fan_in = crossed;
            for (i, &width) in config.dnn_hidden.iter().chain(std::iter::once(&d)).enumerate() {
                let w = store.add(
                    format!("dnn.{i}.w"),
                    Partition::Feature,
                    init_weight(&mut rng, width, fan_in),
                );
                let b = store.add(format!("dnn.{i}.b"), Partition::Feature, Tensor::zeros(vec![width]));
                dnn.push((w, b));
                fan_in = width;
            }
        }
        let rep_width = if variant.use_dnn { d } else { crossed };
        let head = AdversarialHead::register(&mut store, &mut rng, rep_width, config.predictor_hidden);

        Ok(Self {
            config,
            layout,
            params: store,
            ids: Ids {
                profile,
                target_item,
                source_item,
                att_target,
                att_source,
                interest,
                bi_coeffs,
                dnn,
                head,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &FeatureLayout {
        &self.layout
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Width of `h_spec` and `h_DA`.
    pub fn representation_width(&self) -> usize {
        let v = self.config.variant;
        if v.use_dnn || v.use_bi_interaction {
            self.config.embed_dim
        } else {
            4 * self.config.embed_dim
        }
    }

    /// Replaces all parameter values, checking names and shapes.
    pub fn load_params(&mut self, other: &ParamStore) -> Result<()> {
        if other.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} tensors, model expects {}",
                other.len(),
                self.params.len()
            )));
        }
        for p in other.iter() {
            let mine = self.params.by_name_mut(&p.name).ok_or_else(|| {
                Error::Checkpoint(format!("unexpected parameter `{}`", p.name))
            })?;
            if mine.value.shape() != p.value.shape() || mine.partition != p.partition {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}` is {:?}/{} in the checkpoint but {:?}/{} in the model",
                    p.name,
                    p.value.shape(),
                    p.partition,
                    mine.value.shape(),
                    mine.partition
                )));
            }
            mine.value = p.value.clone();
        }
        Ok(())
    }

    fn check_instance(&self, index: usize, inst: &Instance) -> Result<()> {
        let fail = |reason: String| Error::Data { index, reason };
        let (fields, ids) = match (&inst.item, inst.domain) {
            (ItemField::Target(ids), Domain::Target) => (&self.layout.target_item, ids),
            (ItemField::Source(ids), Domain::Source) => (&self.layout.source_item, ids),
            _ => return Err(fail("item field does not match the domain label".into())),
        };
        if ids.len() != fields.len() {
            return Err(fail(format!(
                "expected {} item ids, found {}",
                fields.len(),
                ids.len()
            )));
        }
        if inst.profile.len() != self.layout.profile.len() {
            return Err(fail(format!(
                "expected {} profile ids, found {}",
                self.layout.profile.len(),
                inst.profile.len()
            )));
        }
        let check = |field: &FieldSpec, id: usize| {
            if id >= field.vocab_size {
                Err(Error::Lookup {
                    table: field.name.clone(),
                    id,
                    vocab_size: field.vocab_size,
                })
            } else {
                Ok(())
            }
        };
        for (f, &id) in self.layout.profile.iter().zip(&inst.profile) {
            check(f, id)?;
        }
        for (f, &id) in fields.iter().zip(ids) {
            check(f, id)?;
        }
        for &id in &inst.target_history {
            check(&self.layout.target_item[0], id)?;
            if id == 0 {
                return Err(fail("padding id inside target history".into()));
            }
        }
        for &id in &inst.source_history {
            check(&self.layout.source_item[0], id)?;
            if id == 0 {
                return Err(fail("padding id inside source history".into()));
            }
        }
        Ok(())
    }

    /// Padded history ids (`B·L`) and their mask, keeping the most recent
    /// `seqlen` entries.
    fn pad_histories(&self, batch: &[Instance], pick: impl Fn(&Instance) -> &[usize]) -> (Vec<Vec<usize>>, Vec<bool>) {
        let len = self.config.seqlen;
        let mut ids = Vec::with_capacity(batch.len() * len);
        let mut mask = Vec::with_capacity(batch.len() * len);
        for inst in batch {
            let (padded, m) = pad_history(pick(inst), len);
            ids.extend(padded.into_iter().map(|id| vec![id]));
            mask.extend(m);
        }
        (ids, mask)
    }

    fn pooled(&self, tape: &mut Tape, bound: &Bound, tables: &[ParamId], bags: Vec<Vec<Vec<usize>>>) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for (&table, field_bags) in tables.iter().zip(bags) {
            let e = tape.gather_sum(bound.var(table), &field_bags)?;
            acc = Some(match acc {
                Some(a) => tape.add(a, e)?,
                None => e,
            });
        }
        acc.ok_or_else(|| Error::Config("empty field group".into()))
    }

    /// Records one forward pass over `batch`.
    pub fn forward(&self, batch: &[Instance], training: bool, rng: &mut ChaCha8Rng) -> Result<Forward> {
        if batch.is_empty() {
            return Err(Error::Degenerate("empty batch".into()));
        }
        for (i, inst) in batch.iter().enumerate() {
            self.check_instance(i, inst)?;
        }
        let d = self.config.embed_dim;
        let variant = self.config.variant;
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);

        // Field pooling for the user profile and the candidate item.
        let profile_bags = (0..self.layout.profile.len())
            .map(|f| batch.iter().map(|inst| vec![inst.profile[f]]).collect())
            .collect();
        let p = self.pooled(&mut tape, &bound, &self.ids.profile, profile_bags)?;
        let item_bags = |n_fields: usize, want_target: bool| -> Vec<Vec<Vec<usize>>> {
            (0..n_fields)
                .map(|f| {
                    batch
                        .iter()
                        .map(|inst| match (&inst.item, want_target) {
                            (ItemField::Target(ids), true) | (ItemField::Source(ids), false) => {
                                vec![ids[f]]
                            }
                            _ => vec![],
                        })
                        .collect()
                })
                .collect()
        };
        let qt = self.pooled(&mut tape, &bound, &self.ids.target_item, item_bags(self.layout.target_item.len(), true))?;
        let qs = self.pooled(&mut tape, &bound, &self.ids.source_item, item_bags(self.layout.source_item.len(), false))?;
        let q = tape.add(qt, qs)?;

        // History aggregation, one attention block per domain.
        let mut aggregates = Vec::with_capacity(2);
        let mut history_weights = Vec::with_capacity(2);
        for (table, att, target) in [
            (self.ids.target_item[0], self.ids.att_target, true),
            (self.ids.source_item[0], self.ids.att_source, false),
        ] {
            let (ids, mask) = self.pad_histories(batch, |inst| {
                if target {
                    &inst.target_history
                } else {
                    &inst.source_history
                }
            });
            let rows = tape.gather_sum(bound.var(table), &ids)?;
            let params = match variant.sequence_aggregation {
                SequenceAggregation::Attention => Some(AttentionVars {
                    w: bound.var(att.0),
                    h: bound.var(att.1),
                }),
                SequenceAggregation::Average => None,
            };
            let (agg, beta) = layers::sequence_aggregate(&mut tape, rows, &mask, q, p, params)?;
            aggregates.push(agg);
            history_weights.push(tape.value(beta).clone());
        }
        let (a, b) = (aggregates[0], aggregates[1]);

        let interest = match variant.interest_concat {
            InterestConcat::Attention => Some(InterestVars {
                v: self.ids.interest.map(|t| bound.var(t.0)),
                g: self.ids.interest.map(|t| bound.var(t.1)),
                b: self.ids.interest.map(|t| bound.var(t.2)),
            }),
            InterestConcat::Equal => None,
        };
        let concat = layers::interest_attention_concat(&mut tape, q, p, a, b, interest)?;
        // The plain concatenation weighs every block by one.
        let interest_weights = Some(match concat.weights {
            Some(ws) => ws.map(|w| tape.value(w).data().to_vec()),
            None => std::array::from_fn(|_| vec![1.0; batch.len()]),
        });

        let z = if variant.use_bi_interaction {
            layers::bi_interaction(&mut tape, concat.m, bound.var(self.ids.bi_coeffs), d, self.config.bi_form)?
        } else {
            concat.m
        };
        let dnn: Vec<(Var, Var)> = self
            .ids
            .dnn
            .iter()
            .map(|&(w, b)| (bound.var(w), bound.var(b)))
            .collect();
        let h_spec = layers::dnn_forward(&mut tape, z, &dnn)?;

        let head_cfg = self.config.head_config();
        let vars = self
            .ids
            .head
            .forward(&mut tape, &bound, h_spec, &head_cfg, training, rng)?;
        let [ht, hs]: [Tensor; 2] = history_weights.try_into().expect("two domains");
        Ok(Forward::capture(
            tape,
            bound,
            vars,
            head_cfg,
            interest_weights,
            Some([ht, hs]),
        ))
    }

    /// Evaluation-mode forward pass; a pure function of batch and parameters.
    pub fn predict(&self, batch: &[Instance]) -> Result<ForwardOutputs> {
        // Dropout is the identity at evaluation time, so the generator is never drawn from.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(self.forward(batch, false, &mut rng)?.outputs)
    }
}

impl Targets {
    pub fn from_instances(batch: &[Instance]) -> Self {
        Self {
            y: batch.iter().map(|i| Some(i.y)).collect(),
            d: batch.iter().map(|i| i.domain.label()).collect(),
        }
    }
}
