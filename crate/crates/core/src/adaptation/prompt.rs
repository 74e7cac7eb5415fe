use crate::backbone::vocab::{Vocab, BOS, EOS};
use crate::backbone::BackboneParams;
use crate::error::{Error, Result};
use crate::rng::Prng;
use crate::tensor::Tensor;

/// Token scaffolding around the class token.
#[derive(Clone, Debug, PartialEq)]
pub enum PromptTemplate {
    /// `[BOS, v_1..v_M, CLASS, EOS]` with `v` taken from `PromptParams::context`.
    Learned,
    /// `[BOS, prefix.., CLASS, suffix.., EOS]` from fixed vocabulary tokens.
    Fixed { prefix: Vec<usize>, suffix: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PromptParams {
    /// `M × d_e`, shared by every class. Empty (`0 × d_e`) for fixed templates.
    pub context: Tensor,
    pub class_token_ids: Vec<usize>,
    pub bos_id: usize,
    pub eos_id: usize,
    pub template: PromptTemplate,
}

impl PromptParams {
    /// Learned context of `m` vectors drawn from N(0, 0.02²).
    pub fn learned(vocab: &Vocab, classes: &[String], m: usize, text_width: usize, rng: &mut Prng) -> Result<Self> {
        let context = Tensor::new(
            vec![m, text_width],
            (0..m * text_width).map(|_| 0.02 * rng.normal()).collect(),
        )?;
        Self::assemble(vocab, classes, context, PromptTemplate::Learned)
    }

    /// Hand-written "a photo of a CLASS image" prompts with nothing to learn.
    pub fn fixed(vocab: &Vocab, classes: &[String], text_width: usize) -> Result<Self> {
        let template = PromptTemplate::Fixed {
            prefix: vocab.tokenize_words("a photo of a")?,
            suffix: vocab.tokenize_words("image")?,
        };
        Self::assemble(vocab, classes, Tensor::zeros(&[0, text_width]), template)
    }

    fn assemble(vocab: &Vocab, classes: &[String], context: Tensor, template: PromptTemplate) -> Result<Self> {
        let class_token_ids = classes
            .iter()
            .map(|c| vocab.tokenize_class(c))
            .collect::<Result<Vec<_>>>()?;
        let p = Self {
            context,
            class_token_ids,
            bos_id: vocab.id(BOS)?,
            eos_id: vocab.id(EOS)?,
            template,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.context.dims2()?;
        if self.class_token_ids.is_empty() {
            return Err(Error::InvalidConfig("prompts need at least one class".into()));
        }
        let mut ids = self.class_token_ids.clone();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.class_token_ids.len() {
            return Err(Error::InvalidConfig("class token ids must be distinct".into()));
        }
        if matches!(self.template, PromptTemplate::Fixed { .. }) && self.context_len() != 0 {
            return Err(Error::InvalidConfig("fixed prompts carry no context vectors".into()));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.class_token_ids.len()
    }

    pub fn context_len(&self) -> usize {
        self.context.shape()[0]
    }

    pub fn is_learned(&self) -> bool {
        self.template == PromptTemplate::Learned
    }

    pub fn seq_len(&self) -> usize {
        match &self.template {
            PromptTemplate::Learned => self.context_len() + 3,
            PromptTemplate::Fixed { prefix, suffix } => prefix.len() + suffix.len() + 3,
        }
    }

    /// Row range of the context block inside every assembled sequence.
    pub fn context_rows(&self) -> std::ops::Range<usize> {
        1..1 + self.context_len()
    }
}

/// Embedding sequence for class `class_index`.
pub fn build_prompt(backbone: &BackboneParams, prompts: &PromptParams, class_index: usize) -> Result<Tensor> {
    let class_id = *prompts
        .class_token_ids
        .get(class_index)
        .ok_or_else(|| Error::InvalidConfig(format!("class index {class_index} out of range")))?;
    let cfg = &backbone.config;
    if prompts.seq_len() > cfg.max_seq_len {
        return Err(Error::dim(format!(
            "prompt length {} exceeds max_seq_len {}",
            prompts.seq_len(),
            cfg.max_seq_len
        )));
    }
    let de = cfg.text_width;
    if prompts.context.shape()[1] != de {
        return Err(Error::dim(format!(
            "context width {} differs from text width {de}",
            prompts.context.shape()[1]
        )));
    }
    match &prompts.template {
        PromptTemplate::Learned => {
            let ends = backbone.embed_tokens(&[prompts.bos_id, class_id, prompts.eos_id])?;
            let mut rows: Vec<&[f64]> = vec![ends.row(0)];
            rows.extend((0..prompts.context_len()).map(|i| prompts.context.row(i)));
            rows.push(ends.row(1));
            rows.push(ends.row(2));
            Tensor::stack_rows(rows, de)
        }
        PromptTemplate::Fixed { prefix, suffix } => {
            let mut ids = vec![prompts.bos_id];
            ids.extend(prefix);
            ids.push(class_id);
            ids.extend(suffix);
            ids.push(prompts.eos_id);
            backbone.embed_tokens(&ids)
        }
    }
}

/// `C × d` matrix whose row `c` is the text encoding of class `c`'s prompt.
pub fn class_embeddings(backbone: &BackboneParams, prompts: &PromptParams) -> Result<Tensor> {
    let rows = (0..prompts.num_classes())
        .map(|c| backbone.text_encode(&build_prompt(backbone, prompts, c)?))
        .collect::<Result<Vec<_>>>()?;
    Tensor::stack_rows(rows.iter().map(Tensor::data), backbone.config.embed_dim)
}

/// Gradient of `⟨g, E⟩` with respect to the shared context, summed over classes.
pub fn class_embeddings_context_grad(
    backbone: &BackboneParams,
    prompts: &PromptParams,
    g: &Tensor,
) -> Result<Tensor> {
    let (c, _) = g.dims2()?;
    if c != prompts.num_classes() {
        return Err(Error::dim("gradient rows differ from class count"));
    }
    let de = backbone.config.text_width;
    let mut grad = Tensor::zeros(&[prompts.context_len(), de]);
    for class in 0..c {
        let seq = build_prompt(backbone, prompts, class)?;
        let g_row = Tensor::vector(g.row(class).to_vec());
        let (_, dseq) = backbone.text_encode_vjp(&seq, &g_row)?;
        let r = prompts.context_rows();
        grad.add_assign(&dseq.rows(r.start, r.end))?;
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::BackboneConfig;

    fn classes() -> Vec<String> {
        vec!["real".into(), "fake".into()]
    }

    fn setup(m: usize) -> (BackboneParams, PromptParams) {
        let cfg = BackboneConfig::default();
        let bb = BackboneParams::init_random(&cfg, 5).unwrap();
        let p = PromptParams::learned(&Vocab::default_vocab(), &classes(), m, cfg.text_width, &mut Prng::new(9)).unwrap();
        (bb, p)
    }

    #[test]
    fn shapes() {
        let (bb, p) = setup(16);
        assert_eq!(build_prompt(&bb, &p, 0).unwrap().shape(), &[19, 48]);
        assert_eq!(class_embeddings(&bb, &p).unwrap().shape(), &[2, bb.config.embed_dim]);
        let (bb, p) = setup(0);
        assert_eq!(build_prompt(&bb, &p, 1).unwrap().shape(), &[3, 48]);
        assert!(build_prompt(&bb, &p, 2).is_err());
    }

    #[test]
    fn classes_share_context_rows() {
        let (bb, p) = setup(4);
        let a = build_prompt(&bb, &p, 0).unwrap();
        let b = build_prompt(&bb, &p, 1).unwrap();
        assert_eq!(a.rows(0, 5), b.rows(0, 5));
        assert_ne!(a.row(5), b.row(5));
        assert_eq!(a.row(6), b.row(6));
    }

    #[test]
    fn fixed_template_layout() {
        let cfg = BackboneConfig::default();
        let bb = BackboneParams::init_random(&cfg, 5).unwrap();
        let v = Vocab::default_vocab();
        let p = PromptParams::fixed(&v, &classes(), cfg.text_width).unwrap();
        let seq = build_prompt(&bb, &p, 1).unwrap();
        let ids: Vec<usize> = ["<bos>", "a", "photo", "of", "a", "fake", "image", "<eos>"]
            .iter()
            .map(|t| v.id(t).unwrap())
            .collect();
        assert_eq!(seq, bb.embed_tokens(&ids).unwrap());
    }

    #[test]
    fn too_long_and_duplicate_classes() {
        let (bb, mut p) = setup(22);
        assert!(build_prompt(&bb, &p, 0).is_err());
        p.class_token_ids = vec![6, 6];
        assert!(p.validate().is_err());
    }

    #[test]
    fn identical_class_tokens_give_identical_rows() {
        let (bb, mut p) = setup(3);
        p.class_token_ids[1] = p.class_token_ids[0];
        let e = class_embeddings(&bb, &p).unwrap();
        assert_eq!(e.row(0), e.row(1));
    }

    #[test]
    fn context_grad_matches_finite_differences() {
        let (bb, p) = setup(2);
        let g = Tensor::ones(&[2, bb.config.embed_dim]);
        let analytic = class_embeddings_context_grad(&bb, &p, &g).unwrap();
        let numeric = crate::ops::finite_difference_grad(
            |ctx| {
                let mut q = p.clone();
                q.context = ctx.clone();
                Ok(class_embeddings(&bb, &q)?.sum())
            },
            &p.context,
            1e-5,
        )
        .unwrap();
        for (a, n) in analytic.data().iter().zip(numeric.data()) {
            assert!((a - n).abs() <= 1e-4 * n.abs().max(1e-3), "{a} vs {n}");
        }
    }
}
