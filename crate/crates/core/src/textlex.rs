//! Hashtags, user tags, URLs and emojis: extraction and corpus statistics.
//!
//! The scanner walks extended grapheme clusters left to right. At each
//! cluster it tries, in order:
//!
//! * URL: `http://`, `https://` or `www.` (ASCII case-insensitive) at a
//!   position not preceded by an alphanumeric cluster, running to the next
//!   whitespace. Trailing `.,;:!?)]}'"` clusters are trimmed off. At least
//!   one cluster must remain after the prefix.
//! * Hashtag: a lone `#` not preceded by an alphanumeric or `_` cluster,
//!   followed by a run of alphanumeric / `_` clusters.
//! * User tag: a lone `@` under the same boundary rule, followed by a run of
//!   alphanumeric / `_` / `.` / `-` clusters with trailing `.` and `-` trimmed.
//! * Emoji: a cluster whose first scalar has the Unicode `Emoji` property and
//!   is not ASCII, or any cluster containing the keycap mark U+20E3.
//!
//! A cluster is "alphanumeric" when its first scalar is. Tokens consume their
//! clusters, so `#` fragments inside URLs are never hashtags.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_properties::UnicodeEmoji;
use unicode_segmentation::UnicodeSegmentation;

use crate::corpus::{Corpus, Platform};

const URL_PREFIXES: [&str; 3] = ["https://", "http://", "www."];
const URL_TRAILING: &[char] = &['.', ',', ';', ':', '!', '?', ')', ']', '}', '\'', '"'];
const KEYCAP: char = '\u{20E3}';

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Hashtag,
    UserTag,
    Url,
    Emoji,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Hashtag, Family::UserTag, Family::Url, Family::Emoji];

    pub fn label(self) -> &'static str {
        match self {
            Family::Hashtag => "Hashtag",
            Family::UserTag => "Tag",
            Family::Url => "URL",
            Family::Emoji => "Emoji",
        }
    }

    /// Inventory key for a raw token: hashtags and user tags are
    /// case-folded, URLs and emoji clusters are kept verbatim.
    pub fn normalize(self, token: &str) -> String {
        match self {
            Family::Hashtag | Family::UserTag => token.to_lowercase(),
            Family::Url | Family::Emoji => token.to_string(),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// One lexical token with its byte span in the source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Token<'a> {
    pub family: Family,
    pub text: &'a str,
    pub start: usize,
    pub end: usize,
}

/// All occurrences of the four token families, in text order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub hashtags: Vec<String>,
    pub user_tags: Vec<String>,
    pub urls: Vec<String>,
    pub emojis: Vec<String>,
}

impl FeatureSet {
    pub fn family(&self, family: Family) -> &[String] {
        match family {
            Family::Hashtag => &self.hashtags,
            Family::UserTag => &self.user_tags,
            Family::Url => &self.urls,
            Family::Emoji => &self.emojis,
        }
    }

    fn family_mut(&mut self, family: Family) -> &mut Vec<String> {
        match family {
            Family::Hashtag => &mut self.hashtags,
            Family::UserTag => &mut self.user_tags,
            Family::Url => &mut self.urls,
            Family::Emoji => &mut self.emojis,
        }
    }

    pub fn total(&self) -> usize {
        Family::ALL.iter().map(|&f| self.family(f).len()).sum()
    }
}

fn first_char(cluster: &str) -> char {
    cluster.chars().next().unwrap_or('\0')
}

fn is_word(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn is_tag_body(c: char) -> bool {
    is_word(c) || c == '.' || c == '-'
}

fn is_emoji_cluster(cluster: &str) -> bool {
    let base = first_char(cluster);
    (!base.is_ascii() && base.is_emoji_char()) || cluster.contains(KEYCAP)
}

fn url_prefix_len(rest: &str) -> Option<usize> {
    URL_PREFIXES.iter().find_map(|p| {
        rest.get(..p.len())
            .filter(|head| head.eq_ignore_ascii_case(p))
            .map(|_| p.len())
    })
}

/// Scans `text` into lexical tokens.
pub fn tokenize(text: &str) -> Vec<Token<'_>> {
    let clusters: Vec<(usize, &str)> = text.grapheme_indices(true).collect();
    let end_of = |i: usize| clusters.get(i).map_or(text.len(), |&(off, _)| off);
    let mut tokens = Vec::new();
    let mut prev: Option<char> = None;
    let mut i = 0;

    while i < clusters.len() {
        let (start, cluster) = clusters[i];
        let base = first_char(cluster);

        if !prev.is_some_and(char::is_alphanumeric) {
            if let Some(prefix) = url_prefix_len(&text[start..]) {
                let mut j = i;
                while j < clusters.len() && !first_char(clusters[j].1).is_whitespace() {
                    j += 1;
                }
                while j > i {
                    let last = clusters[j - 1].1;
                    let mut chars = last.chars();
                    match (chars.next(), chars.next()) {
                        (Some(c), None) if URL_TRAILING.contains(&c) => j -= 1,
                        _ => break,
                    }
                }
                let end = end_of(j);
                if end - start > prefix {
                    tokens.push(Token { family: Family::Url, text: &text[start..end], start, end });
                    prev = Some(first_char(clusters[j - 1].1));
                    i = j;
                    continue;
                }
            }
        }

        if (cluster == "#" || cluster == "@") && !prev.is_some_and(is_word) {
            let (family, body): (Family, fn(char) -> bool) = if cluster == "#" {
                (Family::Hashtag, is_word)
            } else {
                (Family::UserTag, is_tag_body)
            };
            let mut j = i + 1;
            while j < clusters.len() && body(first_char(clusters[j].1)) {
                j += 1;
            }
            if family == Family::UserTag {
                while j > i + 1 && matches!(first_char(clusters[j - 1].1), '.' | '-') {
                    j -= 1;
                }
            }
            if j > i + 1 {
                let end = end_of(j);
                tokens.push(Token { family, text: &text[start..end], start, end });
                prev = Some(first_char(clusters[j - 1].1));
                i = j;
                continue;
            }
        }

        if is_emoji_cluster(cluster) {
            let end = end_of(i + 1);
            tokens.push(Token { family: Family::Emoji, text: cluster, start, end });
        }
        prev = Some(base);
        i += 1;
    }
    tokens
}

pub fn extract_features(text: &str) -> FeatureSet {
    let mut features = FeatureSet::default();
    for token in tokenize(text) {
        features.family_mut(token.family).push(token.text.to_string());
    }
    features
}

/// Removes every URL token, leaving the surrounding text untouched.
pub fn strip_urls(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut cursor = 0;
    for token in tokenize(text).into_iter().filter(|t| t.family == Family::Url) {
        out.push_str(&text[cursor..token.start]);
        cursor = token.end;
    }
    out.push_str(&text[cursor..]);
    out
}

#[derive(Debug, Error)]
pub enum LexError {
    #[error("cannot profile an empty corpus")]
    EmptyCorpus,
    #[error("profiles cover different platforms ({real} vs {synthetic})")]
    PlatformMismatch { real: String, synthetic: String },
}

/// Corpus-level statistics for one token family.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FamilyStats {
    pub total: u64,
    pub mean_per_post: f64,
    pub distinct_count: usize,
    pub distinct_inventory: BTreeSet<String>,
}

impl FamilyStats {
    /// `mean (distinct)` with the mean at two decimals, e.g. `1.19 (964)`.
    pub fn cell(&self) -> String {
        format!("{:.2} ({})", self.mean_per_post, self.distinct_count)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexicalProfile {
    /// Shared platform of all profiled posts; `None` for mixed corpora.
    pub platform: Option<Platform>,
    pub post_count: usize,
    pub families: BTreeMap<Family, FamilyStats>,
}

impl LexicalProfile {
    pub fn family(&self, family: Family) -> &FamilyStats {
        &self.families[&family]
    }
}

#[derive(Default)]
struct Tally {
    totals: [u64; 4],
    inventories: [BTreeSet<String>; 4],
}

impl Tally {
    fn add_text(mut self, text: &str) -> Self {
        for token in tokenize(text) {
            let slot = token.family as usize;
            self.totals[slot] += 1;
            self.inventories[slot].insert(token.family.normalize(token.text));
        }
        self
    }

    fn merge(mut self, other: Tally) -> Self {
        for slot in 0..4 {
            self.totals[slot] += other.totals[slot];
            self.inventories[slot].extend(other.inventories[slot].iter().cloned());
        }
        self
    }
}

pub fn profile_corpus(corpus: &Corpus) -> Result<LexicalProfile, LexError> {
    if corpus.is_empty() {
        return Err(LexError::EmptyCorpus);
    }
    let tally = corpus
        .posts
        .par_iter()
        .fold(Tally::default, |t, post| t.add_text(&post.text))
        .reduce(Tally::default, Tally::merge);

    let n = corpus.len();
    let families = Family::ALL
        .iter()
        .zip(tally.totals.into_iter().zip(tally.inventories))
        .map(|(&family, (total, inventory))| {
            let stats = FamilyStats {
                total,
                mean_per_post: total as f64 / n as f64,
                distinct_count: inventory.len(),
                distinct_inventory: inventory,
            };
            (family, stats)
        })
        .collect();
    Ok(LexicalProfile { platform: corpus.common_platform().cloned(), post_count: n, families })
}

/// Synthetic-minus-real comparison for one token family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyDelta {
    pub mean_diff: f64,
    /// synthetic distinct / real distinct; 1 when both are zero and `None`
    /// when only the real count is zero.
    pub distinct_ratio: Option<f64>,
    pub jaccard: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileDelta {
    pub platform: Option<Platform>,
    pub families: BTreeMap<Family, FamilyDelta>,
}

fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

pub fn compare_profiles(real: &LexicalProfile, synthetic: &LexicalProfile) -> Result<ProfileDelta, LexError> {
    if real.platform != synthetic.platform {
        let show = |p: &Option<Platform>| p.as_ref().map_or("mixed".to_string(), |p| p.to_string());
        return Err(LexError::PlatformMismatch { real: show(&real.platform), synthetic: show(&synthetic.platform) });
    }
    let families = Family::ALL
        .iter()
        .map(|&family| {
            let r = real.family(family);
            let s = synthetic.family(family);
            let distinct_ratio = match (r.distinct_count, s.distinct_count) {
                (0, 0) => Some(1.0),
                (0, _) => None,
                (rd, sd) => Some(sd as f64 / rd as f64),
            };
            let delta = FamilyDelta {
                mean_diff: s.mean_per_post - r.mean_per_post,
                distinct_ratio,
                jaccard: jaccard(&r.distinct_inventory, &s.distinct_inventory),
            };
            (family, delta)
        })
        .collect();
    Ok(ProfileDelta { platform: real.platform.clone(), families })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Post;

    fn counts(text: &str) -> [usize; 4] {
        let f = extract_features(text);
        [f.hashtags.len(), f.user_tags.len(), f.urls.len(), f.emojis.len()]
    }

    fn corpus_of(texts: &[&str]) -> Corpus {
        Corpus::new(
            texts
                .iter()
                .enumerate()
                .map(|(i, t)| Post::real(i.to_string(), Platform::Twitter, *t))
                .collect(),
        )
    }

    #[test]
    fn cardigan_caption() {
        let f = extract_features(
            "EASY CARDIGAN HACK SAVE FOR LATER GIRLS #cardigan #cardiganoutfit #tutorial #howtostyle #fashionhacks",
        );
        assert_eq!(f.hashtags, ["#cardigan", "#cardiganoutfit", "#tutorial", "#howtostyle", "#fashionhacks"]);
        assert!(f.user_tags.is_empty() && f.urls.is_empty() && f.emojis.is_empty());
    }

    #[test]
    fn empty_text() {
        assert_eq!(extract_features(""), FeatureSet::default());
    }

    #[test]
    fn literal_symbols_are_not_tokens() {
        assert_eq!(counts("# not a tag, @ noone, #! @."), [0, 0, 0, 0]);
        assert_eq!(counts("mail me: me@example.com or c#sharp"), [0, 0, 0, 0]);
    }

    #[test]
    fn user_tags_allow_dots_and_dashes() {
        let f = extract_features("thanks @jane.doe-2. and @bob_!");
        assert_eq!(f.user_tags, ["@jane.doe-2", "@bob_"]);
    }

    #[test]
    fn urls_and_fragments() {
        let f = extract_features("see https://ex.com/a#frag, and www.site.org. Also HTTP://X.Y");
        assert_eq!(f.urls, ["https://ex.com/a#frag", "www.site.org", "HTTP://X.Y"]);
        assert!(f.hashtags.is_empty());
        assert_eq!(counts("https:// alone"), [0, 0, 0, 0]);
        assert_eq!(counts("notwww.example.com"), [0, 0, 0, 0]);
    }

    #[test]
    fn emoji_clusters() {
        // ZWJ family, flag, skin tone, keycap, text-default heart with VS16
        let f = extract_features("👨‍👩‍👧 🇳🇱 👍🏽 1️⃣ ❤️ plain 123 #");
        assert_eq!(f.emojis, ["👨‍👩‍👧", "🇳🇱", "👍🏽", "1️⃣", "❤️"]);
    }

    #[test]
    fn emoji_terminates_hashtag() {
        let f = extract_features("#love💛#summer");
        assert_eq!(f.hashtags, ["#love", "#summer"]);
        assert_eq!(f.emojis, ["💛"]);
    }

    #[test]
    fn unicode_hashtags() {
        let f = extract_features("#café #東京 #snake_case");
        assert_eq!(f.hashtags, ["#café", "#東京", "#snake_case"]);
    }

    #[test]
    fn strip_urls_keeps_everything_else() {
        assert_eq!(strip_urls("the vote at https://x.y is in"), "the vote at  is in");
        assert_eq!(strip_urls("#tag 💛"), "#tag 💛");
    }

    #[test]
    fn case_folded_distinct() {
        let p = profile_corpus(&corpus_of(&["#a #a #A"])).unwrap();
        let h = p.family(Family::Hashtag);
        assert_eq!(h.total, 3);
        assert_eq!(h.mean_per_post, 3.0);
        assert_eq!(h.distinct_count, 1);
    }

    #[test]
    fn four_post_hand_count() {
        // hashtags: 2 + 0 + 1 + 1 = 4 occurrences, {#vote, #midterms} distinct
        // tags: 1 + 1 + 0 + 0 = 2, {@potus} distinct
        // urls: 0 + 1 + 0 + 1 = 2, both distinct
        // emojis: 1 + 0 + 2 + 0 = 3, {🇺🇸, 🔥} distinct
        let corpus = corpus_of(&[
            "#Vote #midterms @POTUS 🇺🇸",
            "@potus read https://a.b/c",
            "#vote 🔥🔥",
            "#MIDTERMS www.x.org",
        ]);
        let p = profile_corpus(&corpus).unwrap();
        let got: Vec<(f64, usize)> = Family::ALL
            .iter()
            .map(|&f| (p.family(f).mean_per_post, p.family(f).distinct_count))
            .collect();
        assert_eq!(got, vec![(1.0, 2), (0.5, 1), (0.5, 2), (0.75, 2)]);
        assert_eq!(p.platform, Some(Platform::Twitter));
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(profile_corpus(&Corpus::default()), Err(LexError::EmptyCorpus)));
    }

    #[test]
    fn identical_profiles_compare_neutral() {
        let p = profile_corpus(&corpus_of(&["#a @b https://c.d 💛", "plain"])).unwrap();
        let d = compare_profiles(&p, &p).unwrap();
        for delta in d.families.values() {
            assert_eq!(delta.mean_diff, 0.0);
            assert_eq!(delta.distinct_ratio, Some(1.0));
            assert_eq!(delta.jaccard, 1.0);
        }
    }

    #[test]
    fn disjoint_and_hand_recomputed_deltas() {
        let real = profile_corpus(&corpus_of(&["#a #b", "#c"])).unwrap();
        let synth = profile_corpus(&corpus_of(&["#x #y #z #a", "#b 💛"])).unwrap();
        let d = compare_profiles(&real, &synth).unwrap();
        let h = &d.families[&Family::Hashtag];
        // real mean 1.5, synthetic mean 2.5; distinct 3 vs 5; overlap {a,b} of 6
        assert_eq!(h.mean_diff, 1.0);
        assert_eq!(h.distinct_ratio, Some(5.0 / 3.0));
        assert!((h.jaccard - 2.0 / 6.0).abs() < 1e-15);
        let e = &d.families[&Family::Emoji];
        assert_eq!(e.distinct_ratio, None);
        assert_eq!(e.jaccard, 0.0);

        let other = profile_corpus(&corpus_of(&["#q"])).unwrap();
        assert_eq!(compare_profiles(&real, &other).unwrap().families[&Family::Hashtag].jaccard, 0.0);
    }

    #[test]
    fn platform_mismatch() {
        let a = profile_corpus(&corpus_of(&["#a"])).unwrap();
        let mut b = a.clone();
        b.platform = Some(Platform::Reddit);
        assert!(matches!(compare_profiles(&a, &b), Err(LexError::PlatformMismatch { .. })));
    }

    #[test]
    fn cell_format() {
        let stats = FamilyStats { total: 1190, mean_per_post: 1.19, distinct_count: 964, ..Default::default() };
        assert_eq!(stats.cell(), "1.19 (964)");
    }
}
