//! Word-level Shapley attributions with paired-script masking, and text plots.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{argmax, predict, Classifier};
use crate::text::{encode_masked, EncodedPair, ScriptPairExample, NUM_CLASSES};

pub const MAX_EXACT_WORDS: usize = 12;
pub const MIN_PERMUTATIONS: usize = 50;

const CHUNK: usize = 64;

/// Class probabilities of a sentence under a set of coalitions. `keep[k]`
/// false hides word `k` in both scripts.
pub trait CoalitionModel {
    fn probs(&self, example: &ScriptPairExample, coalitions: &[Vec<bool>]) -> Result<Vec<[f64; NUM_CLASSES]>>;
}

impl CoalitionModel for Classifier {
    fn probs(&self, example: &ScriptPairExample, coalitions: &[Vec<bool>]) -> Result<Vec<[f64; NUM_CLASSES]>> {
        let pairs: Vec<EncodedPair> = coalitions
            .iter()
            .map(|keep| encode_masked(example, &self.roman_vocab, &self.deva_vocab, self.config.max_len, keep))
            .collect();
        let parts: Vec<Result<Vec<[f64; NUM_CLASSES]>>> =
            pairs.par_chunks(CHUNK).map(|part| predict(&self.config, &self.params, part, CHUNK)).collect();
        let mut out = Vec::with_capacity(pairs.len());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Exact,
    Sampled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub words: Vec<String>,
    pub values: Vec<f64>,
    pub base_value: f64,
    pub full_value: f64,
    pub class: usize,
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stderr: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_permutations: Option<usize>,
}

fn full_and_empty(n: usize) -> [Vec<bool>; 2] {
    [vec![true; n], vec![false; n]]
}

/// Probability of `class` (the predicted class when `None`) for each coalition.
fn values<M: CoalitionModel + ?Sized>(
    model: &M,
    example: &ScriptPairExample,
    class: Option<usize>,
    coalitions: &[Vec<bool>],
) -> Result<(usize, Vec<f64>)> {
    let probs = model.probs(example, coalitions)?;
    let class = match class {
        Some(c) if c >= NUM_CLASSES => return Err(Error::Config(format!("class index {c} out of range"))),
        Some(c) => c,
        None => argmax(&model.probs(example, &[vec![true; example.len()]])?[0]),
    };
    let v: Vec<f64> = probs.iter().map(|p| p[class]).collect();
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::Numeric(format!("model output for coalition {i}")));
    }
    Ok((class, v))
}

/// Exact Shapley values by enumerating all `2^n` coalitions.
pub fn shapley_exact<M: CoalitionModel + ?Sized>(model: &M, example: &ScriptPairExample, class: Option<usize>) -> Result<Attribution> {
    let n = example.len();
    if n > MAX_EXACT_WORDS {
        return Err(Error::TooManyWords {
            words: n,
            max: MAX_EXACT_WORDS,
        });
    }
    let coalitions: Vec<Vec<bool>> = (0..1usize << n).map(|s| (0..n).map(|k| s >> k & 1 == 1).collect()).collect();
    let (class, v) = values(model, example, class, &coalitions)?;

    // weight[s] = s! (n - s - 1)! / n!
    let mut fact = vec![1.0f64; n + 1];
    for i in 1..=n {
        fact[i] = fact[i - 1] * i as f64;
    }
    let weight: Vec<f64> = (0..n).map(|s| fact[s] * fact[n - s - 1] / fact[n]).collect();

    let mut phi = vec![0.0; n];
    for (k, p) in phi.iter_mut().enumerate() {
        let bit = 1usize << k;
        for s in 0..1usize << n {
            if s & bit == 0 {
                *p += weight[s.count_ones() as usize] * (v[s | bit] - v[s]);
            }
        }
    }
    Ok(Attribution {
        words: example.roman().to_vec(),
        values: phi,
        base_value: v[0],
        full_value: v[(1 << n) - 1],
        class,
        mode: Mode::Exact,
        stderr: None,
        num_permutations: None,
    })
}

/// Monte Carlo Shapley values from `num_permutations` random word orders.
/// Coalition values are memoized across permutations.
pub fn shapley_sampled<M: CoalitionModel + ?Sized>(
    model: &M,
    example: &ScriptPairExample,
    class: Option<usize>,
    num_permutations: usize,
    seed: u64,
) -> Result<Attribution> {
    if num_permutations < MIN_PERMUTATIONS {
        return Err(Error::Config(format!(
            "sampled Shapley needs at least {MIN_PERMUTATIONS} permutations, got {num_permutations}"
        )));
    }
    let n = example.len();
    let [full, empty] = full_and_empty(n);
    let (class, ends) = values(model, example, class, &[full.clone(), empty.clone()])?;
    let mut memo: HashMap<Vec<bool>, f64> = HashMap::new();
    memo.insert(full, ends[0]);
    memo.insert(empty, ends[1]);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = vec![0.0; n];
    let mut sum_sq = vec![0.0; n];
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..num_permutations {
        order.shuffle(&mut rng);
        let mut chain = Vec::with_capacity(n + 1);
        let mut keep = vec![false; n];
        chain.push(keep.clone());
        for &k in &order {
            keep[k] = true;
            chain.push(keep.clone());
        }
        let mut missing: Vec<Vec<bool>> = chain.iter().filter(|c| !memo.contains_key(*c)).cloned().collect();
        missing.dedup();
        if !missing.is_empty() {
            let (_, v) = values(model, example, Some(class), &missing)?;
            memo.extend(missing.into_iter().zip(v));
        }
        for (step, &k) in order.iter().enumerate() {
            let d = memo[&chain[step + 1]] - memo[&chain[step]];
            sum[k] += d;
            sum_sq[k] += d * d;
        }
    }
    let p = num_permutations as f64;
    let values: Vec<f64> = sum.iter().map(|s| s / p).collect();
    let stderr = sum_sq
        .iter()
        .zip(&values)
        .map(|(sq, m)| ((sq / p - m * m).max(0.0) * p / (p - 1.0) / p).sqrt())
        .collect();
    Ok(Attribution {
        words: example.roman().to_vec(),
        values,
        base_value: ends[1],
        full_value: ends[0],
        class,
        mode: Mode::Sampled,
        stderr: Some(stderr),
        num_permutations: Some(num_permutations),
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlotFormat {
    #[default]
    Ansi,
    Html,
}

impl FromStr for PlotFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ansi" => Ok(PlotFormat::Ansi),
            "html" => Ok(PlotFormat::Html),
            _ => Err(Error::Config(format!("unknown plot format {s:?} (expected ansi or html)"))),
        }
    }
}

/// `|v| / max|v|` per word, all zero when every value is zero.
pub fn intensities(values: &[f64]) -> Vec<f64> {
    let max = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max == 0.0 {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| v.abs() / max).collect()
}

/// Background colour blended from white towards red (positive) or blue.
fn rgb(value: f64, intensity: f64) -> (u8, u8, u8) {
    let fade = (255.0 * (1.0 - intensity)).round() as u8;
    if value > 0.0 {
        (255, fade, fade)
    } else {
        (fade, fade, 255)
    }
}

fn ansi_line(attr: &Attribution) -> String {
    let mut out = String::new();
    for (i, (w, (&v, a))) in attr.words.iter().zip(attr.values.iter().zip(intensities(&attr.values))).enumerate() {
        if i > 0 {
            out.push(' ');
        }
        if a == 0.0 {
            out.push_str(w);
        } else {
            let (r, g, b) = rgb(v, a);
            let _ = write!(out, "\x1b[48;2;{r};{g};{b}m\x1b[38;2;0;0;0m{w}\x1b[0m");
        }
    }
    out
}

fn escape_html(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

fn html_line(attr: &Attribution) -> String {
    let mut out = String::from("<p class=\"shap\">");
    for (i, (w, (&v, a))) in attr.words.iter().zip(attr.values.iter().zip(intensities(&attr.values))).enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let w = escape_html(w);
        if a == 0.0 {
            let _ = write!(out, "<span title=\"{v:.6}\">{w}</span>");
        } else {
            let (r, g, b) = if v > 0.0 { (255, 0, 0) } else { (0, 0, 255) };
            let _ = write!(
                out,
                "<span title=\"{v:.6}\" style=\"background-color: rgba({r}, {g}, {b}, {a:.4})\">{w}</span>"
            );
        }
    }
    out.push_str("</p>");
    out
}

fn html_document(body: &str) -> String {
    format!(
        "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\"/>\n<title>Word attributions</title>\n\
         <style>span {{ padding: 0 2px; border-radius: 3px; }} td {{ padding: 4px 8px; }}</style>\n\
         </head>\n<body>\n{body}</body>\n</html>\n"
    )
}

/// One highlighted sentence: an ANSI line or a standalone HTML document.
pub fn render_text_plot(attr: &Attribution, format: PlotFormat) -> String {
    match format {
        PlotFormat::Ansi => ansi_line(attr) + "\n",
        PlotFormat::Html => html_document(&(html_line(attr) + "\n")),
    }
}

/// Several labelled attributions of the same sentence, one row each.
pub fn render_comparison(rows: &[(&str, &Attribution)], format: PlotFormat) -> String {
    match format {
        PlotFormat::Ansi => {
            let width = rows.iter().map(|(l, _)| l.chars().count()).max().unwrap_or(0);
            rows.iter().map(|(label, a)| format!("{label:<width$}  {}\n", ansi_line(a))).collect()
        }
        PlotFormat::Html => {
            let mut body = String::from("<table>\n");
            for (label, a) in rows {
                let _ = writeln!(body, "<tr><td>{}</td><td>{}</td></tr>", escape_html(label), html_line(a));
            }
            body.push_str("</table>\n");
            html_document(&body)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::Sentiment;
    use proptest::prelude::*;

    /// v(S) as a function of the coalition, same for every class.
    struct SetFn<F>(F);

    impl<F: Fn(&[bool]) -> f64> CoalitionModel for SetFn<F> {
        fn probs(&self, _: &ScriptPairExample, coalitions: &[Vec<bool>]) -> Result<Vec<[f64; NUM_CLASSES]>> {
            Ok(coalitions.iter().map(|c| [(self.0)(c); NUM_CLASSES]).collect())
        }
    }

    fn sentence(n: usize) -> ScriptPairExample {
        let words: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
        ScriptPairExample::new(words.clone(), words, Sentiment::Neutral).unwrap()
    }

    /// An interacting game: weighted sum plus pairwise products and a
    /// threshold term.
    fn game(c: &[bool]) -> f64 {
        let x: Vec<f64> = c.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let lin: f64 = x.iter().enumerate().map(|(i, v)| v * (i as f64 * 0.37 - 1.1)).sum();
        let pair: f64 = x.windows(2).map(|w| w[0] * w[1] * 0.8).sum();
        let k = x.iter().sum::<f64>();
        lin + pair + if k >= 3.0 { 0.5 } else { 0.0 }
    }

    /// Shapley values of [`game`] from the permutation definition.
    fn brute_force(n: usize) -> Vec<f64> {
        fn perms(xs: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
            if k == xs.len() {
                out.push(xs.clone());
                return;
            }
            for i in k..xs.len() {
                xs.swap(k, i);
                perms(xs, k + 1, out);
                xs.swap(k, i);
            }
        }
        let mut all = Vec::new();
        perms(&mut (0..n).collect(), 0, &mut all);
        let mut phi = vec![0.0; n];
        for p in &all {
            let mut c = vec![false; n];
            for &k in p {
                let before = game(&c);
                c[k] = true;
                phi[k] += game(&c) - before;
            }
        }
        phi.iter().map(|v| v / all.len() as f64).collect()
    }

    #[test]
    fn exact_matches_permutation_definition() {
        let a = shapley_exact(&SetFn(game), &sentence(6), Some(0)).unwrap();
        for (x, y) in a.values.iter().zip(brute_force(6)) {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }

    #[test]
    fn efficiency_dummy_symmetry() {
        let n = 10;
        let f = |c: &[bool]| game(&c[..8]) + if c[8] && c[9] { 0.25 } else { 0.0 };
        let a = shapley_exact(&SetFn(f), &sentence(n), Some(1)).unwrap();
        let total: f64 = a.values.iter().sum();
        assert!((total - (a.full_value - a.base_value)).abs() < 1e-9);
        assert_eq!(a.values[8], a.values[9]);

        let g = |c: &[bool]| game(&c[..4]);
        let b = shapley_exact(&SetFn(g), &sentence(7), Some(0)).unwrap();
        assert!(b.values[4..].iter().all(|&v| v == 0.0), "{:?}", b.values);
    }

    #[test]
    fn one_word_is_full_minus_masked() {
        let a = shapley_exact(&SetFn(|c: &[bool]| if c[0] { 0.9 } else { 0.2 }), &sentence(1), Some(2)).unwrap();
        assert_eq!(a.values, [0.9 - 0.2]);
    }

    #[test]
    fn too_many_words_points_to_sampling() {
        let err = shapley_exact(&SetFn(game), &sentence(13), Some(0)).unwrap_err();
        assert!(matches!(err, Error::TooManyWords { words: 13, max: 12 }));
        assert!(err.to_string().contains("sampled"));
    }

    #[test]
    fn sampled_agrees_with_exact_within_three_stderr() {
        let ex = sentence(8);
        let exact = shapley_exact(&SetFn(game), &ex, Some(0)).unwrap();
        let s = shapley_sampled(&SetFn(game), &ex, Some(0), 10_000, 3).unwrap();
        let se = s.stderr.as_ref().unwrap();
        for k in 0..8 {
            assert!((s.values[k] - exact.values[k]).abs() <= 3.0 * se[k] + 1e-12, "word {k}");
        }
        let total: f64 = s.values.iter().sum();
        assert!((total - (s.full_value - s.base_value)).abs() < 1e-9);
    }

    #[test]
    fn sampled_is_seeded_and_constant_model_gives_zero() {
        let ex = sentence(15);
        let a = shapley_sampled(&SetFn(game), &ex, Some(0), 60, 11).unwrap();
        let b = shapley_sampled(&SetFn(game), &ex, Some(0), 60, 11).unwrap();
        assert_eq!(a, b);
        let c = shapley_sampled(&SetFn(|_: &[bool]| 1.0 / 3.0), &ex, None, 50, 1).unwrap();
        assert!(c.values.iter().all(|&v| v == 0.0));
        assert!(shapley_sampled(&SetFn(game), &ex, Some(0), 49, 1).is_err());
    }

    fn attr(words: Vec<String>, values: Vec<f64>) -> Attribution {
        Attribution {
            words,
            values,
            base_value: 0.0,
            full_value: 0.0,
            class: 0,
            mode: Mode::Exact,
            stderr: None,
            num_permutations: None,
        }
    }

    #[test]
    fn zero_values_are_not_highlighted() {
        let a = attr(vec!["a".into(), "b".into()], vec![0.0, 0.0]);
        assert_eq!(render_text_plot(&a, PlotFormat::Ansi), "a b\n");
        assert!(!render_text_plot(&a, PlotFormat::Html).contains("rgba"));
    }

    #[test]
    fn max_word_gets_full_intensity() {
        let a = attr(vec!["good".into(), "meh".into(), "bad".into()], vec![0.5, 0.125, -0.25]);
        let ansi = render_text_plot(&a, PlotFormat::Ansi);
        assert!(ansi.contains("\x1b[48;2;255;0;0m\x1b[38;2;0;0;0mgood"));
        assert!(ansi.contains("\x1b[48;2;128;128;255m\x1b[38;2;0;0;0mbad"));
        let html = render_text_plot(&a, PlotFormat::Html);
        assert!(html.contains("rgba(255, 0, 0, 1.0000)\">good"));
        assert!(html.contains("rgba(0, 0, 255, 0.5000)\">bad"));
        assert!(html.contains("rgba(255, 0, 0, 0.2500)\">meh"));
    }

    fn well_formed(doc: &str) -> std::result::Result<usize, String> {
        use quick_xml::events::Event;
        let mut r = quick_xml::Reader::from_str(doc);
        let mut depth = 0i64;
        let mut spans = 0;
        loop {
            match r.read_event().map_err(|e| e.to_string())? {
                Event::Start(e) => {
                    depth += 1;
                    if e.name().as_ref() == b"span" {
                        spans += 1;
                    }
                }
                Event::End(_) => depth -= 1,
                Event::Eof => break,
                _ => {}
            }
        }
        if depth == 0 {
            Ok(spans)
        } else {
            Err(format!("unbalanced depth {depth}"))
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn html_is_well_formed(
            words in prop::collection::vec("[a-z<>&\"'\\u0900-\\u097F]{1,6}", 1..10),
            seed in any::<u64>(),
        ) {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let values = words.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
            let a = attr(words.clone(), values);
            prop_assert_eq!(well_formed(&render_text_plot(&a, PlotFormat::Html)), Ok(words.len()));
            let cmp = render_comparison(&[("baseline", &a), ("proposed <fusion>", &a)], PlotFormat::Html);
            prop_assert_eq!(well_formed(&cmp), Ok(2 * words.len()));
        }
    }

    #[test]
    fn attribution_json_shape() {
        let a = shapley_exact(&SetFn(game), &sentence(3), Some(0)).unwrap();
        let v: serde_json::Value = serde_json::to_value(&a).unwrap();
        for key in ["words", "values", "base_value", "class", "mode"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["mode"], "exact");
        assert!(v.get("stderr").is_none());
    }
}
