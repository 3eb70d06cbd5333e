//! Generated corpora with known ground truth, used to check that the
//! trainers can learn what they should.
//!
//! * [`lexicon_corpus`]: template sentences whose entity slots are filled
//!   from four disjoint 30-item lexicons.
//! * [`char_cue_corpus`]: every slot holds a nonce word whose type is given
//!   only by its suffix; slot positions carry no type information.
//! * [`topic_corpus`]: bag-of-topic sentences for embedding sanity checks.
//!
//! [`to_documents`] renders labeled sentences as abstracts that the corpus
//! tokenizer and splitter map back to exactly the same tokens.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{tokenize, Document};
use crate::schema::{EntityType, LabeledSentence, Tag};

pub const MOL_LEXICON: [&str; 30] = [
    "benzene", "toluene", "thiophene", "pyrrole", "fullerene", "naphthalene", "anthracene",
    "pentacene", "perylene", "acetone", "ethanol", "methanol", "chloroform", "styrene",
    "aniline", "phenol", "pyridine", "carbazole", "fluorene", "porphyrin", "titanium dioxide",
    "zinc oxide", "lithium fluoride", "copper phthalocyanine", "indium tin oxide",
    "molybdenum trioxide", "graphene oxide", "ferrocene", "tetrahydrofuran", "dimethyl sulfoxide",
];

pub const POLY_LEXICON: [&str; 30] = [
    "polystyrene", "polyaniline", "polypyrrole", "polythiophene", "poly(3-hexylthiophene)",
    "poly(methyl methacrylate)", "polyethylene", "polypropylene", "polyvinyl alcohol", "polyimide",
    "polyethylene oxide", "nylon-6", "polycarbonate", "polyacetylene", "polyvinylidene fluoride",
    "pedot:pss", "polyurethane", "polyester", "polyethylene terephthalate", "polyacrylonitrile",
    "polyfluorene", "poly(vinyl chloride)", "polysiloxane", "polybutadiene", "polyisoprene",
    "polylactic acid", "polycaprolactone", "polyamide", "poly(ethylene glycol)", "polyphenylene vinylene",
];

pub const PRO_LEXICON: [&str; 30] = [
    "conductivity", "mobility", "band gap", "glass transition temperature", "tensile strength",
    "thermal stability", "dielectric constant", "refractive index", "charge carrier mobility",
    "hole mobility", "electron mobility", "crystallinity", "melting point", "viscosity",
    "elastic modulus", "hardness", "absorption coefficient", "power conversion efficiency",
    "quantum yield", "work function", "ionization potential", "electron affinity", "solubility",
    "porosity", "surface energy", "thermal conductivity", "fill factor", "open circuit voltage",
    "seebeck coefficient", "permittivity",
];

pub const CMT_LEXICON: [&str; 30] = [
    "x-ray diffraction", "cyclic voltammetry", "atomic force microscopy",
    "scanning electron microscopy", "transmission electron microscopy", "uv-vis spectroscopy",
    "raman spectroscopy", "infrared spectroscopy", "nuclear magnetic resonance",
    "gel permeation chromatography", "differential scanning calorimetry",
    "thermogravimetric analysis", "ellipsometry", "photoluminescence spectroscopy",
    "x-ray photoelectron spectroscopy", "dynamic light scattering", "impedance spectroscopy",
    "mass spectrometry", "neutron scattering", "profilometry", "kelvin probe microscopy",
    "four-point probe", "hall effect measurement", "contact angle goniometry",
    "small-angle x-ray scattering", "electron paramagnetic resonance", "optical microscopy",
    "dielectric spectroscopy", "time-of-flight photoconductivity", "space-charge-limited current",
];

pub fn lexicon(etype: EntityType) -> &'static [&'static str; 30] {
    match etype {
        EntityType::Mol => &MOL_LEXICON,
        EntityType::Poly => &POLY_LEXICON,
        EntityType::Pro => &PRO_LEXICON,
        EntityType::Cmt => &CMT_LEXICON,
    }
}

use EntityType::{Cmt, Mol, Poly, Pro};

/// `None` marks a slot in the template list of each grammar.
type Template = &'static [Option<&'static str>];

macro_rules! tpl {
    (@ _) => { None };
    (@ $w:literal) => { Some($w) };
    ($($x:tt)*) => { &[$(tpl!(@ $x)),*] };
}

const LEXICON_TEMPLATES: &[(Template, &[EntityType])] = &[
    (tpl!("the" _ "of" _ "was" "measured" "by" _ "."), &[Pro, Poly, Cmt]),
    (tpl!(_ "revealed" "that" _ "increases" "the" _ "of" "the" "film" "."), &[Cmt, Mol, Pro]),
    (tpl!("blends" "of" _ "and" _ "were" "prepared" "in" "solution" "."), &[Poly, Mol]),
    (tpl!("we" "report" "the" _ "of" _ "doped" _ "."), &[Pro, Mol, Poly]),
    (tpl!("the" "samples" "were" "characterized" "using" _ "and" _ "."), &[Cmt, Cmt]),
    (tpl!(_ "films" "show" "a" "high" _ "."), &[Poly, Pro]),
    (tpl!("in" "this" "work" "," _ "was" "used" "as" "a" "dopant" "."), &[Mol]),
    (tpl!("the" _ "was" "determined" "from" _ "data" "."), &[Pro, Cmt]),
    (tpl!("thin" "films" "of" _ "were" "annealed" "at" "150" "c" "."), &[Poly]),
    (tpl!("no" "change" "in" _ "was" "observed" "after" "treatment" "with" _ "."), &[Pro, Mol]),
    (tpl!("these" "results" "were" "confirmed" "by" _ "."), &[Cmt]),
    (tpl!("the" "addition" "of" _ "to" _ "improved" "the" _ "."), &[Mol, Poly, Pro]),
    (tpl!("we" "synthesized" _ "from" _ "and" "measured" "its" _ "."), &[Poly, Mol, Pro]),
    (tpl!("a" "solution" "of" _ "in" _ "was" "spin" "coated" "."), &[Poly, Mol]),
];

/// Neutral sentences so that not every sentence carries entities.
const FILLER: &[&[&str]] = &[
    &["the", "devices", "were", "stored", "under", "nitrogen", "."],
    &["further", "work", "is", "in", "progress", "."],
    &["all", "measurements", "were", "repeated", "three", "times", "."],
];

/// Lexicon items are split by the corpus tokenizer, so a bracket closing
/// after a space becomes its own (inside) token.
fn push_entity(tokens: &mut Vec<String>, tags: &mut Vec<Tag>, item: &str, etype: EntityType) {
    for (i, t) in tokenize(item).into_iter().enumerate() {
        tokens.push(t.norm);
        tags.push(if i == 0 { Tag::B(etype) } else { Tag::I(etype) });
    }
}

/// `n` sentences from the lexicon grammar, ids `syn{doc}:{k}` in groups of
/// five per document.
pub fn lexicon_corpus(n: usize, seed: u64) -> Vec<LabeledSentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut tokens = Vec::new();
            let mut tags = Vec::new();
            if rng.gen_bool(0.05) {
                let f = FILLER.choose(&mut rng).expect("non-empty");
                tokens.extend(f.iter().map(|w| w.to_string()));
                tags.resize(tokens.len(), Tag::O);
            } else {
                let (template, slots) = LEXICON_TEMPLATES.choose(&mut rng).expect("non-empty");
                let mut slot = slots.iter();
                for piece in template.iter() {
                    match piece {
                        Some(w) => {
                            tokens.push(w.to_string());
                            tags.push(Tag::O);
                        }
                        None => {
                            let et = *slot.next().expect("slot types match template");
                            let item = lexicon(et).choose(&mut rng).expect("non-empty");
                            push_entity(&mut tokens, &mut tags, item, et);
                        }
                    }
                }
            }
            LabeledSentence::new(Some(sentence_id(i)), tokens, tags)
        })
        .collect()
}

fn sentence_id(i: usize) -> String {
    format!("syn{}:{}", i / 5, i % 5)
}

/// Suffix marking each entity type in the char-cue corpus.
pub const CHAR_CUE_SUFFIXES: [(EntityType, &str); 4] =
    [(Mol, "ide"), (Poly, "mer"), (Pro, "ity"), (Cmt, "scopy")];

/// Suffixes of nonce words that are not entities.
pub const DISTRACTOR_SUFFIXES: [&str; 2] = ["ous", "ant"];

/// Every slot accepts every type, so context alone cannot tell them apart.
const CUE_TEMPLATES: &[Template] = &[
    tpl!("the" _ "was" "examined" "in" "this" "study" "."),
    tpl!("we" "compared" _ "with" _ "."),
    tpl!("results" "for" _ "are" "shown" "in" "the" "table" "."),
    tpl!("both" _ "and" _ "were" "considered" "."),
    tpl!("the" "role" "of" _ "remains" "unclear" "."),
];

/// Template words of the char-cue grammar (everything except slot fillers).
pub fn char_cue_template_words() -> Vec<String> {
    let mut words: Vec<String> = CUE_TEMPLATES
        .iter()
        .flat_map(|t| t.iter().flatten())
        .map(|w| w.to_string())
        .collect();
    words.sort();
    words.dedup();
    words
}

fn nonce_stem<R: Rng>(rng: &mut R) -> String {
    const ONSETS: [&str; 12] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "t", "v"];
    const VOWELS: [&str; 4] = ["a", "e", "o", "u"];
    let syllables = rng.gen_range(2..=3);
    (0..syllables)
        .map(|_| format!("{}{}", ONSETS.choose(rng).unwrap(), VOWELS.choose(rng).unwrap()))
        .collect()
}

/// `n` sentences whose slot fillers are nonce stems plus a type suffix, or a
/// distractor suffix (tagged O) one time in five.
pub fn char_cue_corpus(n: usize, seed: u64) -> Vec<LabeledSentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let template = CUE_TEMPLATES.choose(&mut rng).expect("non-empty");
            let mut tokens = Vec::new();
            let mut tags = Vec::new();
            for piece in template.iter() {
                match piece {
                    Some(w) => {
                        tokens.push(w.to_string());
                        tags.push(Tag::O);
                    }
                    None => {
                        let stem = nonce_stem(&mut rng);
                        if rng.gen_bool(0.2) {
                            let suffix = DISTRACTOR_SUFFIXES.choose(&mut rng).unwrap();
                            tokens.push(format!("{stem}{suffix}"));
                            tags.push(Tag::O);
                        } else {
                            let (et, suffix) = CHAR_CUE_SUFFIXES.choose(&mut rng).unwrap();
                            tokens.push(format!("{stem}{suffix}"));
                            tags.push(Tag::B(*et));
                        }
                    }
                }
            }
            LabeledSentence::new(Some(sentence_id(i)), tokens, tags)
        })
        .collect()
}

/// Sentences drawn from one of several disjoint topic vocabularies.
/// Returns the sentences and the vocabulary of each topic.
pub fn topic_corpus(sentences: usize, seed: u64) -> (Vec<Vec<String>>, Vec<Vec<String>>) {
    let topics: Vec<Vec<String>> = [
        ["anode", "cathode", "electrolyte", "battery", "lithium", "charge", "cycle", "capacity"],
        ["solar", "photon", "absorber", "light", "exciton", "donor", "acceptor", "efficiency"],
        ["polymer", "chain", "monomer", "weight", "melt", "glass", "crystal", "solvent"],
    ]
    .iter()
    .map(|t| t.iter().map(|w| w.to_string()).collect())
    .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let corpus = (0..sentences)
        .map(|i| {
            let topic = &topics[i % topics.len()];
            let len = rng.gen_range(6..=10);
            (0..len).map(|_| topic.choose(&mut rng).unwrap().clone()).collect()
        })
        .collect();
    (corpus, topics)
}

fn is_attached_punct(tok: &str) -> bool {
    matches!(tok, "." | ",")
}

/// Renders one sentence as text: sentence-initial capital, punctuation
/// attached to the preceding word.
pub fn render(tokens: &[String]) -> String {
    let mut out = String::new();
    for (i, tok) in tokens.iter().enumerate() {
        if i > 0 && !is_attached_punct(tok) {
            out.push(' ');
        }
        if i == 0 {
            let mut chars = tok.chars();
            if let Some(c) = chars.next() {
                out.extend(c.to_uppercase());
                out.push_str(chars.as_str());
            }
        } else {
            out.push_str(tok);
        }
    }
    out
}

/// Groups sentences into documents by the `doc:k` id prefix (or five at a
/// time without ids) and renders each group as an abstract.
pub fn to_documents(data: &[LabeledSentence]) -> Vec<Document> {
    let mut docs: Vec<(String, Vec<String>)> = Vec::new();
    for (i, s) in data.iter().enumerate() {
        let doc_id = match s.sent_id.as_deref().and_then(|id| id.rsplit_once(':')) {
            Some((doc, _)) => doc.to_string(),
            None => format!("doc{}", i / 5),
        };
        match docs.last_mut() {
            Some((id, texts)) if *id == doc_id => texts.push(render(&s.tokens)),
            _ => docs.push((doc_id, vec![render(&s.tokens)])),
        }
    }
    docs.into_iter()
        .map(|(doc_id, texts)| Document {
            title: None,
            abstract_text: texts.join(" "),
            doc_id,
        })
        .collect()
}
