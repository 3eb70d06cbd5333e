//! The assembled tagger: word lookup ⊕ char-CNN → BiLSTM → projection → CRF.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::crf::{self, CrfError, CrfParams, DecodeOptions};
use crate::embed::{SubwordTable, WordVectors};
use crate::net::{dropout_mask, Block, CharCnnTrace, CharVocab, NetConfig, NetParams};
use crate::schema::{iob_to_spans, EntityType, Span, Tag, NUM_TAGS};
use crate::tensor::{axpy, Matrix};

/// Everything trainable, in one fixed block order.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    /// Row 0 is UNK, row `i + 1` is vocabulary word `i`.
    pub words: Matrix,
    pub net: NetParams,
    pub crf: CrfParams,
}

pub const WORDS_BLOCK: &str = "words.table";

impl Params {
    pub fn zeros_like(&self) -> Self {
        Params {
            words: self.words.zeros_like(),
            net: self.net.zeros_like(),
            crf: CrfParams::zeros(self.crf.num_tags()),
        }
    }

    pub fn blocks(&self) -> Vec<Block<'_>> {
        let mut out = vec![Block {
            name: WORDS_BLOCK.into(),
            shape: self.words.shape().to_vec(),
            data: self.words.data(),
        }];
        out.extend(self.net.blocks());
        let k = self.crf.num_tags();
        out.push(Block {
            name: "crf.transitions".into(),
            shape: vec![k, k],
            data: self.crf.transitions.data(),
        });
        out.push(Block { name: "crf.start".into(), shape: vec![k], data: &self.crf.start });
        out.push(Block { name: "crf.stop".into(), shape: vec![k], data: &self.crf.stop });
        out
    }

    /// Mutable views in the same order as [`blocks`](Self::blocks).
    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![self.words.data_mut()];
        out.extend(self.net.blocks_mut());
        out.push(self.crf.transitions.data_mut());
        out.push(&mut self.crf.start);
        out.push(&mut self.crf.stop);
        out
    }

    pub fn global_norm(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|b| b.data.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn add_assign(&mut self, other: &Params) {
        let src: Vec<Vec<f64>> = other.blocks().iter().map(|b| b.data.to_vec()).collect();
        for (dst, src) in self.blocks_mut().into_iter().zip(&src) {
            axpy(1.0, src, dst);
        }
    }
}

/// How one token's word vector is obtained.
#[derive(Debug, Clone, PartialEq)]
pub enum WordInput {
    /// A row of the word table (trainable when fine-tuning).
    Row(usize),
    /// A fixed subword-composed vector for an out-of-vocabulary token.
    Fixed(Vec<f64>),
}

/// A sentence mapped to model inputs. `tags` holds gold tag indices, or is
/// empty for unlabeled input.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSentence {
    pub words: Vec<WordInput>,
    pub chars: Vec<Vec<usize>>,
    pub tags: Vec<usize>,
}

impl EncodedSentence {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// A decoded entity with its confidence: the geometric mean of the
/// marginal probabilities of the decoded tags over the span.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredSpan {
    pub start: usize,
    pub end: usize,
    #[serde(rename = "type")]
    pub etype: EntityType,
    pub confidence: f64,
}

impl ScoredSpan {
    pub fn span(&self) -> Span {
        Span::new(self.start, self.end, self.etype)
    }
}

/// Architecture switches stored alongside the weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub net: NetConfig,
    pub char_cnn: bool,
    pub fine_tune_words: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NerModel {
    pub arch: Architecture,
    pub char_vocab: CharVocab,
    words: Vec<String>,
    index: HashMap<String, usize>,
    subwords: Option<SubwordTable>,
    pub params: Params,
}

impl NerModel {
    /// Builds a freshly initialised model whose word table is materialized
    /// from `vectors` and whose char inventory comes from `char_source`.
    pub fn init<R: Rng, S: AsRef<str>>(
        arch: Architecture,
        vectors: &WordVectors,
        char_source: &[S],
        rng: &mut R,
    ) -> Self {
        let dim = vectors.dim();
        let words = vectors.words().to_vec();
        let mut table = Matrix::zeros(words.len() + 1, dim);
        for (i, w) in words.iter().enumerate() {
            table.row_mut(i + 1).copy_from_slice(&vectors.lookup(w));
        }
        let char_vocab = CharVocab::build(char_source.iter().map(AsRef::as_ref));
        let net = NetParams::init(
            &arch.net,
            dim,
            arch.char_cnn.then_some(char_vocab.len()),
            NUM_TAGS,
            rng,
        );
        let crf = CrfParams::init(NUM_TAGS, rng);
        NerModel::from_parts(
            arch,
            char_vocab,
            words,
            vectors.subwords().cloned(),
            Params { words: table, net, crf },
        )
    }

    pub(crate) fn from_parts(
        arch: Architecture,
        char_vocab: CharVocab,
        words: Vec<String>,
        subwords: Option<SubwordTable>,
        params: Params,
    ) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i + 1)).collect();
        NerModel {
            arch,
            char_vocab,
            words,
            index,
            subwords,
            params,
        }
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn subwords(&self) -> Option<&SubwordTable> {
        self.subwords.as_ref()
    }

    pub fn word_dim(&self) -> usize {
        self.params.words.cols()
    }

    fn word_input(&self, token: &str) -> WordInput {
        if let Some(&i) = self.index.get(token) {
            return WordInput::Row(i);
        }
        if let Some(table) = &self.subwords {
            let ids = table.bucket_ids(token);
            if !ids.is_empty() {
                let mut v = vec![0.0; self.word_dim()];
                for b in &ids {
                    if let Some(row) = table.row(*b) {
                        axpy(1.0, row, &mut v);
                    }
                }
                let n = ids.len() as f64;
                v.iter_mut().for_each(|x| *x /= n);
                return WordInput::Fixed(v);
            }
        }
        WordInput::Row(0)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S], tags: &[Tag]) -> EncodedSentence {
        EncodedSentence {
            words: tokens.iter().map(|t| self.word_input(t.as_ref())).collect(),
            chars: tokens.iter().map(|t| self.char_vocab.encode(t.as_ref())).collect(),
            tags: tags.iter().map(|t| t.index()).collect(),
        }
    }

    fn word_vector<'a>(&'a self, w: &'a WordInput) -> &'a [f64] {
        match w {
            WordInput::Row(i) => self.params.words.row(*i),
            WordInput::Fixed(v) => v,
        }
    }

    /// Emission scores of an (unpadded) sentence, without dropout.
    pub fn emissions(&self, s: &EncodedSentence) -> Matrix {
        let (xs, _) = self.inputs(s, s.len());
        let (hs, _) = self.params.net.bilstm_forward(&xs, &vec![true; s.len()]);
        self.params.net.project_emissions(&hs)
    }

    fn inputs(&self, s: &EncodedSentence, pad_to: usize) -> (Vec<Vec<f64>>, Vec<Option<CharCnnTrace>>) {
        let width = self.params.net.input_dim();
        let mut xs = Vec::with_capacity(pad_to);
        let mut traces = Vec::with_capacity(s.len());
        for (w, chars) in s.words.iter().zip(&s.chars) {
            let mut x = Vec::with_capacity(width);
            x.extend_from_slice(self.word_vector(w));
            match &self.params.net.char_cnn {
                Some(cnn) => {
                    let (v, trace) = cnn.forward(chars);
                    x.extend(v);
                    traces.push(Some(trace));
                }
                None => traces.push(None),
            }
            xs.push(x);
        }
        xs.resize(pad_to.max(s.len()), vec![0.0; width]);
        (xs, traces)
    }

    /// CRF negative log-likelihood of the gold tags, processing the sentence
    /// as a row of a batch padded to `pad_to` positions. Padded positions are
    /// masked: the LSTMs hold their state across them and they contribute
    /// nothing to the loss. With `grad`, parameter gradients are added in.
    pub fn forward_backward<R: Rng>(
        &self,
        s: &EncodedSentence,
        pad_to: usize,
        dropout: Option<(f64, &mut R)>,
        grad: Option<&mut Params>,
    ) -> Result<f64, CrfError> {
        let len = s.len();
        let padded = pad_to.max(len);
        let net = &self.params.net;
        let (mut xs, traces) = self.inputs(s, padded);
        let active: Vec<bool> = (0..padded).map(|t| t < len).collect();

        let (x_masks, h_masks) = match dropout {
            Some((rate, rng)) if rate > 0.0 => {
                let xm: Vec<Vec<f64>> = (0..len).map(|_| dropout_mask(net.input_dim(), rate, rng)).collect();
                let hm: Vec<Vec<f64>> = (0..len).map(|_| dropout_mask(2 * net.hidden(), rate, rng)).collect();
                (Some(xm), Some(hm))
            }
            _ => (None, None),
        };
        let apply = |v: &mut [Vec<f64>], masks: &Option<Vec<Vec<f64>>>| {
            if let Some(masks) = masks {
                for (row, mask) in v.iter_mut().zip(masks) {
                    row.iter_mut().zip(mask).for_each(|(a, m)| *a *= m);
                }
            }
        };

        apply(&mut xs, &x_masks);
        let (mut hs, trace) = net.bilstm_forward(&xs, &active);
        apply(&mut hs, &h_masks);
        let emissions = net.project_emissions(&hs);
        let k = emissions.cols();
        let valid = Matrix::from_vec(len, k, emissions.data()[..len * k].to_vec());
        let (nll, g) = crf::nll_and_gradient(&valid, &s.tags, &self.params.crf)?;

        if let Some(grad) = grad {
            axpy(1.0, g.transitions.data(), grad.crf.transitions.data_mut());
            axpy(1.0, &g.start, &mut grad.crf.start);
            axpy(1.0, &g.stop, &mut grad.crf.stop);
            let mut d_emissions = Matrix::zeros(padded, k);
            d_emissions.data_mut()[..len * k].copy_from_slice(g.emissions.data());
            let mut d_h = net.proj.backward(&hs, &d_emissions, &mut grad.net.proj);
            apply(&mut d_h, &h_masks);
            let mut d_x = net.bilstm_backward(&trace, &d_h, &mut grad.net);
            apply(&mut d_x, &x_masks);
            let wd = self.word_dim();
            for t in 0..len {
                if let (true, WordInput::Row(i)) = (self.arch.fine_tune_words, &s.words[t]) {
                    axpy(1.0, &d_x[t][..wd], grad.words.row_mut(*i));
                }
                if let (Some(cnn), Some(trace)) = (&net.char_cnn, &traces[t]) {
                    let cnn_grad = grad.net.char_cnn.as_mut().expect("gradient mirrors params");
                    cnn.backward(trace, &d_x[t][wd..], cnn_grad);
                }
            }
        }
        Ok(nll)
    }

    /// Deterministic loss of one unpadded sentence.
    pub fn loss(&self, s: &EncodedSentence) -> Result<f64, CrfError> {
        self.forward_backward::<rand_chacha::ChaCha8Rng>(s, s.len(), None, None)
    }

    /// Summed loss and gradient of a batch padded to its longest sentence.
    /// Sentences are accumulated in slice order.
    pub fn batch_loss_and_gradient<R: Rng>(
        &self,
        batch: &[&EncodedSentence],
        mut dropout: Option<(f64, &mut R)>,
    ) -> Result<(f64, Params), CrfError> {
        let pad_to = batch.iter().map(|s| s.len()).max().unwrap_or(0);
        let mut grad = self.params.zeros_like();
        let mut total = 0.0;
        for s in batch {
            let d = dropout.as_mut().map(|(rate, rng)| (*rate, &mut **rng));
            total += self.forward_backward(s, pad_to, d, Some(&mut grad))?;
        }
        Ok((total, grad))
    }

    /// Constrained Viterbi tags and path score.
    pub fn decode<S: AsRef<str>>(&self, tokens: &[S]) -> (Vec<Tag>, f64) {
        let s = self.encode(tokens, &[]);
        let e = self.emissions(&s);
        let (path, score) = crf::viterbi_decode(&e, &self.params.crf, DecodeOptions::default());
        (path.into_iter().map(|i| Tag::from_index(i).expect("tag index")).collect(), score)
    }

    /// Decoded spans with confidences.
    pub fn predict_sentence<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<ScoredSpan> {
        if tokens.is_empty() {
            return Vec::new();
        }
        let s = self.encode(tokens, &[]);
        let e = self.emissions(&s);
        let (path, _) = crf::viterbi_decode(&e, &self.params.crf, DecodeOptions::default());
        let marg = crf::marginals(&e, &self.params.crf);
        let tags: Vec<Tag> = path.iter().map(|&i| Tag::from_index(i).expect("tag index")).collect();
        iob_to_spans(&tags)
            .into_iter()
            .map(|sp| {
                let log_mean = (sp.start..sp.end)
                    .map(|t| marg.get(t, path[t]).ln())
                    .sum::<f64>()
                    / sp.len() as f64;
                ScoredSpan {
                    start: sp.start,
                    end: sp.end,
                    etype: sp.etype,
                    confidence: log_mean.exp().clamp(0.0, 1.0),
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{relative_error, DEFAULT_STEP};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_model(rng: &mut ChaCha8Rng, char_cnn: bool, fine_tune: bool) -> NerModel {
        let words: Vec<String> = ["the", "film", "of", "polymer"].iter().map(|s| s.to_string()).collect();
        let m = Matrix::from_vec(4, 4, (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let wv = WordVectors::new(words.clone(), m).unwrap();
        let arch = Architecture {
            net: NetConfig { char_dim: 3, char_window: 3, char_filters: 2, hidden: 3 },
            char_cnn,
            fine_tune_words: fine_tune,
        };
        NerModel::init(arch, &wv, &["thefilmofpolymerxyz"], rng)
    }

    #[test]
    fn padding_leaves_loss_and_gradient_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = tiny_model(&mut rng, true, true);
        let s = model.encode(&["the", "film", "zz"], &[Tag::O, Tag::B(EntityType::Pro), Tag::O]);
        let mut g1 = model.params.zeros_like();
        let mut g2 = model.params.zeros_like();
        let a = model.forward_backward::<ChaCha8Rng>(&s, 3, None, Some(&mut g1)).unwrap();
        let b = model.forward_backward::<ChaCha8Rng>(&s, 7, None, Some(&mut g2)).unwrap();
        assert_eq!(a, b);
        assert_eq!(g1, g2);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut model = tiny_model(&mut rng, true, true);
        let s = model.encode(
            &["the", "polymer", "qq", "film"],
            &[Tag::O, Tag::B(EntityType::Poly), Tag::I(EntityType::Poly), Tag::O],
        );
        let (_, grad) = model.batch_loss_and_gradient::<ChaCha8Rng>(&[&s], None).unwrap();
        let analytic: Vec<Vec<f64>> = grad.blocks().iter().map(|b| b.data.to_vec()).collect();
        for (bi, block) in analytic.iter().enumerate() {
            for idx in 0..block.len() {
                let saved = model.params.blocks_mut()[bi][idx];
                model.params.blocks_mut()[bi][idx] = saved + DEFAULT_STEP;
                let plus = model.loss(&s).unwrap();
                model.params.blocks_mut()[bi][idx] = saved - DEFAULT_STEP;
                let minus = model.loss(&s).unwrap();
                model.params.blocks_mut()[bi][idx] = saved;
                let fd = (plus - minus) / (2.0 * DEFAULT_STEP);
                assert!(relative_error(block[idx], fd) < 1e-5, "block {bi} idx {idx}");
            }
        }
    }

    #[test]
    fn frozen_words_get_no_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = tiny_model(&mut rng, false, false);
        let s = model.encode(&["the", "film"], &[Tag::O, Tag::O]);
        let (_, grad) = model.batch_loss_and_gradient::<ChaCha8Rng>(&[&s], None).unwrap();
        assert!(grad.words.data().iter().all(|&v| v == 0.0));
        assert!(grad.net.char_cnn.is_none());
    }

    #[test]
    fn confidences_are_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut model = tiny_model(&mut rng, true, false);
        // Bias the projection so a PRO span is certain to be decoded.
        model.params.net.proj.b[Tag::B(EntityType::Pro).index()] = 5.0;
        let spans = model.predict_sentence(&["film"]);
        assert_eq!(spans.len(), 1);
        assert!((0.0..=1.0).contains(&spans[0].confidence));
        assert!(model.predict_sentence::<&str>(&[]).is_empty());
    }
}
