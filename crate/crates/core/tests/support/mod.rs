//! Independent oracles and fixture builders shared by integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unicode_properties::UnicodeEmoji;
use unicode_segmentation::UnicodeSegmentation;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- lexical

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Kind {
    Hashtag,
    UserTag,
    Url,
    Emoji,
}

/// Brute-force scanner: at each cluster, enumerates every possible end
/// position and keeps the one satisfying the declarative token definition.
pub fn lex_oracle(text: &str) -> Vec<(Kind, String)> {
    let cl: Vec<&str> = text.graphemes(true).collect();
    let n = cl.len();
    let mut offs = Vec::with_capacity(n + 1);
    let mut acc = 0;
    for c in &cl {
        offs.push(acc);
        acc += c.len();
    }
    offs.push(acc);
    let head = |k: usize| cl[k].chars().next().unwrap();
    let alnum = |k: usize| head(k).is_alphanumeric();
    let word = |k: usize| alnum(k) || head(k) == '_';
    let space = |k: usize| head(k).is_whitespace();
    let trailing = |k: usize| cl[k].chars().count() == 1 && ".,;:!?)]}'\"".contains(head(k));
    let emoji = |k: usize| {
        let c = head(k);
        (c as u32 > 0x7f && c.is_emoji_char()) || cl[k].contains('\u{20E3}')
    };
    let span = |i: usize, j: usize| text[offs[i]..offs[j]].to_string();

    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        let prev_alnum = i > 0 && alnum(i - 1);
        let prev_word = i > 0 && word(i - 1);

        if !prev_alnum {
            let rest = text[offs[i]..].to_ascii_lowercase();
            let prefix = ["https://", "http://", "www."].into_iter().find(|p| rest.starts_with(p));
            if let Some(p) = prefix {
                let run_end = (i..n).find(|&k| space(k)).unwrap_or(n);
                let ok = |j: usize| {
                    (j..run_end).all(trailing) && (j == i || !trailing(j - 1)) && offs[j] - offs[i] > p.len()
                };
                if let Some(j) = (i + 1..=run_end).rev().find(|&j| ok(j)) {
                    out.push((Kind::Url, span(i, j)));
                    i = j;
                    continue;
                }
            }
        }

        if (cl[i] == "#" || cl[i] == "@") && !prev_word {
            let tag = cl[i] == "@";
            let dot_dash = |k: usize| head(k) == '.' || head(k) == '-';
            let body = |k: usize| word(k) || (tag && dot_dash(k));
            // maximal body run, then (for user tags) drop trailing dots and dashes
            let run_end = (i + 1..n).find(|&k| !body(k)).unwrap_or(n);
            let valid = |j: usize| {
                j > i + 1
                    && (!tag && j == run_end
                        || tag && (j..run_end).all(dot_dash) && !dot_dash(j - 1))
            };
            if let Some(j) = (i + 2..=run_end).rev().find(|&j| valid(j)) {
                out.push((if tag { Kind::UserTag } else { Kind::Hashtag }, span(i, j)));
                i = j;
                continue;
            }
        }

        if emoji(i) {
            out.push((Kind::Emoji, cl[i].to_string()));
        }
        i += 1;
    }
    out
}

const FRAGMENTS: &[&str] = &[
    "a", "Z", "q", "7", "0", "_", "#", "#", "@", "@", ".", "-", " ", " ", "  ", "\n", "\t", "http://", "HTTPS://",
    "www.", "Www.", "x.com/", "/", "?", ")", "(", ",", "!", "'", "\"", ":", ";", "é", "e\u{301}", "日本", "ß", "İ",
    "💛", "🗳️", "👍🏽", "1️⃣", "#️⃣", "👨‍👩‍👧", "©", "™", "↔", "\u{200d}", "\u{fe0f}", "🇺🇸", "©\u{fe0f}", "&", "*", "$",
    "tag", "vote", "news", "user.name", "a-b", "...", "@@", "##",
];

/// Deterministic strings built from fragments that stress token boundaries.
pub fn fuzz_strings(count: usize, seed: u64) -> Vec<String> {
    let mut r = rng(seed);
    (0..count)
        .map(|_| {
            let len = r.random_range(0..24);
            (0..len).map(|_| FRAGMENTS[r.random_range(0..FRAGMENTS.len())]).collect()
        })
        .collect()
}

/// A post with exactly known token counts, from fixed-vocabulary parts.
pub struct LexFixture {
    pub texts: Vec<String>,
    pub totals: BTreeMap<Kind, u64>,
    pub distinct: BTreeMap<Kind, usize>,
}

/// `n` posts; post `i` carries `i % 3` hashtags, `i % 2` user tags,
/// `(i % 5 == 0)` URLs and `i % 4` emojis, with inventories that cycle
/// through fixed pools (hashtags also appear in alternating case).
pub fn lexical_fixture(n: usize) -> LexFixture {
    let emojis = ["💛", "🔥", "🎉", "👍🏽", "1️⃣", "🇺🇸", "❤️"];
    let mut texts = Vec::with_capacity(n);
    let mut totals: BTreeMap<Kind, u64> = BTreeMap::new();
    let mut inv: BTreeMap<Kind, std::collections::BTreeSet<String>> = BTreeMap::new();
    let mut bump = |k: Kind, key: String, totals: &mut BTreeMap<Kind, u64>| {
        *totals.entry(k).or_insert(0) += 1;
        inv.entry(k).or_default().insert(key);
    };
    for i in 0..n {
        let mut parts = vec![format!("post number {i} says hello.")];
        for h in 0..i % 3 {
            let id = (i * 7 + h) % 371;
            let tag = if i % 2 == 0 { format!("#Topic{id}") } else { format!("#topic{id}") };
            bump(Kind::Hashtag, format!("#topic{id}"), &mut totals);
            parts.push(tag);
        }
        if i % 2 == 1 {
            let id = (i * 13) % 523;
            bump(Kind::UserTag, format!("@user{id}"), &mut totals);
            parts.push(format!("cc @User{id},"));
        }
        if i % 5 == 0 {
            let id = i % 97;
            let url = format!("https://example.org/p/{id}");
            bump(Kind::Url, url.clone(), &mut totals);
            parts.push(format!("({url})."));
        }
        for e in 0..i % 4 {
            let emoji = emojis[(i + e) % emojis.len()];
            bump(Kind::Emoji, emoji.to_string(), &mut totals);
            parts.push(emoji.to_string());
        }
        texts.push(parts.join(" "));
    }
    let distinct = inv.iter().map(|(k, s)| (*k, s.len())).collect();
    LexFixture { texts, totals, distinct }
}

// ------------------------------------------------------------ similarity

/// Mean of the `k` largest values: full sort, slice, sum in descending order.
pub fn sort_topk_mean(scores: &[f64], k: usize) -> f64 {
    let mut v = scores.to_vec();
    v.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let top = &v[..k.min(v.len())];
    top.iter().sum::<f64>() / top.len() as f64
}

/// Exact mean of values in [-2, 2], via 2^-100 fixed point in i128.
pub fn fixed_point_mean(scores: &[f64]) -> f64 {
    const SHIFT: i32 = 100;
    let scale = 2f64.powi(SHIFT);
    let sum: i128 = scores.iter().map(|&s| (s * scale) as i128).sum();
    let n = scores.len() as i128;
    let (q, r) = (sum / n, sum % n);
    (q as f64 + r as f64 / n as f64) / scale
}

pub fn naive_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = (0..a.len()).map(|i| a[i] * b[i]).sum();
    let na: f64 = (0..a.len()).map(|i| a[i] * a[i]).sum::<f64>().sqrt();
    let nb: f64 = (0..b.len()).map(|i| b[i] * b[i]).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Full |A|×|B| matrix, row-major.
pub fn naive_matrix(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for x in a {
        for y in b {
            out.push(naive_cosine(x, y));
        }
    }
    out
}

pub fn random_vectors(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    (0..n).map(|_| (0..dim).map(|_| r.random_range(-1.0..1.0)).collect()).collect()
}

// ------------------------------------------------------------ clustering

pub fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn group_cost(points: &[Vec<f64>], members: &[usize]) -> f64 {
    if members.is_empty() {
        return 0.0;
    }
    let dim = points[0].len();
    let mut c = vec![0.0; dim];
    for &m in members {
        for d in 0..dim {
            c[d] += points[m][d];
        }
    }
    c.iter_mut().for_each(|v| *v /= members.len() as f64);
    members.iter().map(|&m| sq(&points[m], &c)).sum()
}

/// Lowest WCSS over every split of the points into two non-empty groups.
pub fn best_two_partition(points: &[Vec<f64>]) -> f64 {
    let n = points.len();
    assert!(n <= 20);
    let mut best = f64::INFINITY;
    for mask in 1u32..(1 << (n - 1)) {
        let (a, b): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| mask >> i & 1 == 1);
        best = best.min(group_cost(points, &a) + group_cost(points, &b));
    }
    best
}

/// Two Gaussian blobs of `per_blob` points in `dim` dimensions, centred at
/// `+offset` and `-offset` on every axis.
pub fn two_blobs(per_blob: usize, dim: usize, offset: f64, spread: f64, seed: u64) -> Vec<Vec<f64>> {
    use rand_distr::{Distribution, Normal};
    let mut r = rng(seed);
    let noise = Normal::new(0.0, spread).unwrap();
    (0..2 * per_blob)
        .map(|i| {
            let centre = if i < per_blob { offset } else { -offset };
            (0..dim).map(|_| centre + noise.sample(&mut r)).collect()
        })
        .collect()
}

// ---------------------------------------------------------------- topics

/// Straight recomputation of the class-based TF-IDF ranking.
pub fn brute_ctfidf(classes: &[Vec<String>], class: usize, n: usize) -> Vec<String> {
    let all: Vec<&String> = classes.iter().flatten().collect();
    let avg = all.len() as f64 / classes.len() as f64;
    let mut vocab: Vec<&String> = classes[class].iter().collect();
    vocab.sort();
    vocab.dedup();
    let mut scored: Vec<(String, f64)> = vocab
        .into_iter()
        .map(|w| {
            let tf = classes[class].iter().filter(|x| *x == w).count() as f64;
            let f = all.iter().filter(|x| **x == w).count() as f64;
            (w.clone(), tf * (1.0 + avg / f).ln())
        })
        .collect();
    // bubble the list into order: weight descending, then word ascending
    for i in 0..scored.len() {
        for j in 0..scored.len() - 1 - i {
            let (a, b) = (&scored[j], &scored[j + 1]);
            if b.1 > a.1 || (b.1 == a.1 && b.0 < a.0) {
                scored.swap(j, j + 1);
            }
        }
    }
    scored.into_iter().take(n).map(|(w, _)| w).collect()
}

// ------------------------------------------------------------ generation

/// `per_platform` real posts for each known platform.
pub fn source_corpus(per_platform: usize) -> synthpost::Corpus {
    use synthpost::{Platform, Post};
    let subjects = ["the vote", "my garden", "this game", "the new phone", "our town", "that movie", "the weather"];
    let mut posts = Vec::new();
    for platform in Platform::KNOWN {
        for i in 0..per_platform {
            let subject = subjects[(i + platform.name().len()) % subjects.len()];
            let text = format!("{subject} is on my mind today, post {i} #{} @friend{i}", platform.slug());
            posts.push(Post::real(format!("{}-{i}", platform.slug()), platform.clone(), text));
        }
    }
    synthpost::Corpus::new(posts)
}

/// A contract-conforming reply with `n` posts.
pub fn valid_reply(n: usize, tag: &str) -> String {
    let items: Vec<String> = (0..n).map(|i| format!("{{\"text\": \"{tag} reply {i}\"}}")).collect();
    format!("[{}]", items.join(", "))
}

// ------------------------------------------------------------- sentiment

/// Ten posts with labels worked out by hand from the bundled lexicon
/// (tally: 4 negative, 3 neutral, 3 positive).
pub const HAND_LABELED: [(&str, &str); 10] = [
    ("I love this", "positive"),
    ("terrible service", "negative"),
    ("meeting at noon tomorrow", "neutral"),
    ("not good", "negative"),
    ("great 💛", "positive"),
    ("the weather report posted", "neutral"),
    ("I don't love it", "negative"),
    ("bad bad amazing", "negative"),
    ("happy but sad", "positive"),
    ("check https://awful.example.com/love", "neutral"),
];

/// `neg` negative, `neu` neutral and `pos` positive posts, interleaved.
pub fn sentiment_corpus(neg: usize, neu: usize, pos: usize) -> synthpost::Corpus {
    use synthpost::{Platform, Post};
    let pools: [&[&str]; 3] = [
        &["awful day", "this is bad", "I hate the fraud", "sad news"],
        &["meeting at noon", "the schedule update", "train at noon tomorrow"],
        &["love it", "great news", "nice and happy", "amazing 💛"],
    ];
    let wanted = [neg, neu, pos];
    let mut posts = Vec::new();
    let mut made = [0usize; 3];
    while made != wanted {
        for c in 0..3 {
            if made[c] < wanted[c] {
                let text = pools[c][made[c] % pools[c].len()];
                posts.push(Post::real(format!("s{}", posts.len()), Platform::Twitter, format!("{text} {}", made[c])));
                made[c] += 1;
            }
        }
    }
    synthpost::Corpus::new(posts)
}

// --------------------------------------------------------------- prompts

pub const PLATFORM_NAMES: [&str; 6] = ["twitter", "facebook", "reddit", "instagram", "tiktok", "youtube"];

/// Platform names appearing anywhere in `text`, by plain substring search.
pub fn names_in(text: &str) -> Vec<&'static str> {
    let lower = text.to_lowercase();
    PLATFORM_NAMES.into_iter().filter(|n| lower.contains(n)).collect()
}

/// Source posts that mention platforms by name in assorted casings.
pub fn name_dropping_corpus(per_platform: usize) -> synthpost::Corpus {
    use synthpost::{Platform, Post};
    let mentions = ["saw it on TikTok", "cross-posted from REDDIT", "my Instagram story", "youtube link below", "facebook group", "Twitter thread"];
    let mut posts = Vec::new();
    for platform in Platform::KNOWN {
        for i in 0..per_platform {
            let text = format!("{} and {} #{} post {i}", mentions[i % 6], mentions[(i + 2) % 6], platform.name());
            posts.push(Post::real(format!("{}-{i}", platform.slug()), platform.clone(), text));
        }
    }
    synthpost::Corpus::new(posts)
}
