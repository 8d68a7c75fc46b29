use super::{Script, ScriptPairExample, Vocabulary, CLS, PAD, UNK};

/// Token ids of one sequence, `[CLS] + words`, padded to a fixed length.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedSeq {
    pub ids: Vec<usize>,
    pub mask: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedPair {
    pub roman: EncodedSeq,
    pub deva: EncodedSeq,
    pub label: usize,
}

impl EncodedPair {
    pub fn seq(&self, script: Script) -> &EncodedSeq {
        match script {
            Script::Roman => &self.roman,
            Script::Deva => &self.deva,
        }
    }
}

fn encode_seq(words: &[String], vocab: &Vocabulary, max_len: usize, keep: Option<&[bool]>) -> EncodedSeq {
    let mut ids = Vec::with_capacity(max_len);
    let mut mask = Vec::with_capacity(max_len);
    ids.push(CLS);
    mask.push(true);
    for (k, w) in words.iter().enumerate().take(max_len.saturating_sub(1)) {
        let hidden = keep.is_some_and(|m| !m[k]);
        ids.push(if hidden { UNK } else { vocab.id(w) });
        mask.push(true);
    }
    ids.resize(max_len, PAD);
    mask.resize(max_len, false);
    ids.truncate(max_len);
    mask.truncate(max_len);
    EncodedSeq { ids, mask }
}

/// `[CLS] + word ids`, truncated from the tail to `max_len` and padded with PAD.
pub fn encode(example: &ScriptPairExample, roman: &Vocabulary, deva: &Vocabulary, max_len: usize) -> EncodedPair {
    EncodedPair {
        roman: encode_seq(example.roman(), roman, max_len, None),
        deva: encode_seq(example.deva(), deva, max_len, None),
        label: example.label.index(),
    }
}

/// Like [`encode`], but word `k` becomes UNK in both scripts when `keep[k]` is false.
pub fn encode_masked(
    example: &ScriptPairExample,
    roman: &Vocabulary,
    deva: &Vocabulary,
    max_len: usize,
    keep: &[bool],
) -> EncodedPair {
    assert_eq!(keep.len(), example.len(), "one keep flag per word");
    EncodedPair {
        roman: encode_seq(example.roman(), roman, max_len, Some(keep)),
        deva: encode_seq(example.deva(), deva, max_len, Some(keep)),
        label: example.label.index(),
    }
}

/// Words of an encoded sequence, skipping CLS and PAD.
pub fn decode(seq: &EncodedSeq, vocab: &Vocabulary) -> Vec<String> {
    seq.ids
        .iter()
        .zip(&seq.mask)
        .skip(1)
        .filter(|(_, &m)| m)
        .map(|(&id, _)| vocab.token(id).unwrap_or("[UNK]").to_string())
        .collect()
}

/// Row-major `[batch x seq_len]` id and mask matrices for both scripts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub batch_size: usize,
    pub seq_len: usize,
    pub roman_ids: Vec<usize>,
    pub roman_mask: Vec<bool>,
    pub deva_ids: Vec<usize>,
    pub deva_mask: Vec<bool>,
    pub labels: Vec<usize>,
}

impl Batch {
    /// Stacks encoded pairs padded to a common length. With `trim`, trailing
    /// columns that are PAD in every row of both scripts are dropped; masked
    /// positions never influence unmasked outputs, so results are unchanged.
    pub fn collate(items: &[&EncodedPair], trim: bool) -> Batch {
        let full = items.first().map_or(1, |p| p.roman.ids.len());
        let used = |s: &EncodedSeq| s.mask.iter().rposition(|&m| m).map_or(1, |p| p + 1);
        let seq_len = if trim {
            items
                .iter()
                .map(|p| used(&p.roman).max(used(&p.deva)))
                .max()
                .unwrap_or(1)
        } else {
            full
        };
        let mut b = Batch {
            batch_size: items.len(),
            seq_len,
            roman_ids: Vec::with_capacity(items.len() * seq_len),
            roman_mask: Vec::with_capacity(items.len() * seq_len),
            deva_ids: Vec::with_capacity(items.len() * seq_len),
            deva_mask: Vec::with_capacity(items.len() * seq_len),
            labels: Vec::with_capacity(items.len()),
        };
        for p in items {
            b.roman_ids.extend_from_slice(&p.roman.ids[..seq_len]);
            b.roman_mask.extend_from_slice(&p.roman.mask[..seq_len]);
            b.deva_ids.extend_from_slice(&p.deva.ids[..seq_len]);
            b.deva_mask.extend_from_slice(&p.deva.mask[..seq_len]);
            b.labels.push(p.label);
        }
        b
    }

    pub fn ids(&self, script: Script) -> &[usize] {
        match script {
            Script::Roman => &self.roman_ids,
            Script::Deva => &self.deva_ids,
        }
    }

    pub fn mask(&self, script: Script) -> &[bool] {
        match script {
            Script::Roman => &self.roman_mask,
            Script::Deva => &self.deva_mask,
        }
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::text::{build_vocab, Sentiment};

    fn vocabs() -> (Vocabulary, Vocabulary) {
        let ex = ScriptPairExample::from_text("ramro chha", "राम्रो छ", Sentiment::Positive).unwrap();
        build_vocab(&[ex], 1).unwrap()
    }

    #[test]
    fn empty_sentence_is_cls_then_pad() {
        let (r, d) = vocabs();
        let ex = ScriptPairExample::from_text("", "", Sentiment::Neutral).unwrap();
        let e = encode(&ex, &r, &d, 100);
        assert_eq!(e.roman.ids.len(), 100);
        assert_eq!(e.roman.ids[0], CLS);
        assert!(e.roman.ids[1..].iter().all(|&i| i == PAD));
        assert_eq!(e.roman.mask.iter().filter(|&&m| m).count(), 1);
    }

    #[test]
    fn long_sentence_truncates_tail() {
        let (r, d) = vocabs();
        let words: Vec<String> = (0..150).map(|i| if i == 0 { "ramro".into() } else { "x".into() }).collect();
        let ex = ScriptPairExample::new(words.clone(), words, Sentiment::Neutral).unwrap();
        let e = encode(&ex, &r, &d, 100);
        assert_eq!(e.roman.ids.len(), 100);
        assert!(e.roman.mask.iter().all(|&m| m));
        assert_eq!(e.roman.ids[1], r.id("ramro"));
        assert_eq!(e.roman.ids[99], UNK);
    }

    #[test]
    fn known_words_map_to_vocab_ids() {
        let (r, d) = vocabs();
        let ex = ScriptPairExample::from_text("ramro chha", "राम्रो छ", Sentiment::Positive).unwrap();
        let e = encode(&ex, &r, &d, 5);
        assert_eq!(e.roman.ids, vec![CLS, r.id("ramro"), r.id("chha"), PAD, PAD]);
        assert_eq!(e.deva.ids, vec![CLS, d.id("राम्रो"), d.id("छ"), PAD, PAD]);
        assert_eq!(e.roman.mask, vec![true, true, true, false, false]);
        assert_eq!(e.label, 2);
    }

    #[test]
    fn masked_words_become_unk_in_both_scripts() {
        let (r, d) = vocabs();
        let ex = ScriptPairExample::from_text("ramro chha", "राम्रो छ", Sentiment::Positive).unwrap();
        let e = encode_masked(&ex, &r, &d, 4, &[false, true]);
        assert_eq!(e.roman.ids[1], UNK);
        assert_eq!(e.deva.ids[1], UNK);
        assert_eq!(e.roman.ids[2], r.id("chha"));
    }

    #[test]
    fn collate_trims_shared_padding() {
        let (r, d) = vocabs();
        let a = encode(&ScriptPairExample::from_text("ramro", "राम्रो", Sentiment::Positive).unwrap(), &r, &d, 100);
        let b = encode(&ScriptPairExample::from_text("ramro chha", "राम्रो छ", Sentiment::Neutral).unwrap(), &r, &d, 100);
        let batch = Batch::collate(&[&a, &b], true);
        assert_eq!(batch.seq_len, 3);
        assert_eq!(batch.roman_ids.len(), 6);
        assert_eq!(batch.labels, vec![2, 1]);
        assert_eq!(Batch::collate(&[&a, &b], false).seq_len, 100);
    }

    proptest! {
        #[test]
        fn decode_recovers_in_vocab_words(words in proptest::collection::vec("[a-e]{1,3}", 0..20), max_len in 1usize..12) {
            let ex = ScriptPairExample::new(words.clone(), words.clone(), Sentiment::Neutral).unwrap();
            let (r, d) = build_vocab(std::slice::from_ref(&ex), 1).unwrap_or_else(|_| vocabs());
            let e = encode(&ex, &r, &d, max_len);
            prop_assert_eq!(e.roman.ids.len(), max_len);
            let kept = words.len().min(max_len - 1);
            prop_assert_eq!(decode(&e.roman, &r), words[..kept].to_vec());
            prop_assert_eq!(e.clone(), encode(&ex, &r, &d, max_len));
        }
    }
}
