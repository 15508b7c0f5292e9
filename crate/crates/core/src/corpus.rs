//! Synthetic plan-faithful corpora.
//!
//! Three domains (sports results, film biographies, airports as RDF) with
//! closed lexicons. Each example's plan is a deterministic function of its
//! data: every content slot present is planned, distractor slots never are,
//! and the order is one of three narrative orders chosen by the value of a
//! cue slot that is always present. Texts realize the plan with phrases that
//! depend on the key, its position in the plan and a paraphrase style (set by
//! whether a marker distractor slot is present), so the same plan can be
//! worded several ways and reordering a plan changes the wording around each
//! value. [`plan_variants`] realizes the same data under other plans.
//!
//! Generation rejects any draw whose text does not delexicalize back to its
//! plan, so `delexicalize(T, S) == C` holds for every example.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ContentPlan, DataKind, Record, StructuredData, TrainingExample};
use crate::delex::delexicalize;
use crate::error::{Error, Result};
use crate::tokenize::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    SportsResult,
    Biography,
    Airport,
}

impl Domain {
    pub const ALL: [Domain; 3] = [Domain::SportsResult, Domain::Biography, Domain::Airport];

    fn spec(self) -> &'static DomainSpec {
        match self {
            Domain::SportsResult => &SPORTS,
            Domain::Biography => &BIOGRAPHY,
            Domain::Airport => &AIRPORT,
        }
    }

    /// Domain whose content and distractor keys cover every plan token of
    /// `data`, if any.
    pub fn detect(data: &StructuredData) -> Option<Domain> {
        Domain::ALL.into_iter().find(|d| {
            let s = d.spec();
            data.records().iter().all(|r| s.content.iter().chain(s.distractors).any(|k| k.key == r.plan_token))
        })
    }
}

/// Inclusive integer range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub min: usize,
    pub max: usize,
}

impl Span {
    pub const fn new(min: usize, max: usize) -> Self {
        Self { min, max }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_examples: usize,
    pub domains: Vec<Domain>,
    /// Total records per table, content and distractor.
    pub slots: Span,
    pub plan_length: Span,
    /// Paraphrases available per plan; at most [`MAX_PARAPHRASES`].
    pub paraphrases: usize,
    pub seed: u64,
}

pub const MAX_PARAPHRASES: usize = 2;

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_examples: 2400,
            domains: Domain::ALL.to_vec(),
            slots: Span::new(3, 8),
            plan_length: Span::new(3, 6),
            paraphrases: 2,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.domains.is_empty() {
            return bad("no domains");
        }
        if self.plan_length.min == 0 || self.plan_length.min > self.plan_length.max {
            return bad("plan_length must be a non-empty range starting at 1 or more");
        }
        if self.plan_length.max > CONTENT_KEYS {
            return bad("plan_length exceeds the number of content keys per domain");
        }
        if self.slots.min > self.slots.max || self.slots.max < self.plan_length.min {
            return bad("slots range cannot hold the plan length range");
        }
        if self.paraphrases == 0 || self.paraphrases > MAX_PARAPHRASES {
            return bad("paraphrases must be 1 or 2");
        }
        Ok(())
    }
}

const CONTENT_KEYS: usize = 6;

/// Wording families; the first planned key picks one of two families, and
/// each family has [`MAX_PARAPHRASES`] paraphrase styles.
const STYLES: usize = 4;

struct KeySpec {
    key: &'static str,
    values: &'static [&'static str],
    /// `[style][class]` patterns, class being first, middle or last position;
    /// `{}` marks the value.
    phrases: [[&'static str; 3]; STYLES],
}

const fn distractor(key: &'static str, values: &'static [&'static str]) -> KeySpec {
    KeySpec { key, values, phrases: [["", "", ""]; STYLES] }
}

struct DomainSpec {
    kind: DataKind,
    subjects: &'static [&'static str],
    /// `content[0]` is the cue and is always present.
    content: [KeySpec; CONTENT_KEYS],
    distractors: &'static [KeySpec],
    /// Narrative orders as indices into `content`.
    orders: [[usize; CONTENT_KEYS]; 3],
    /// Per-style opener; `{}` marks the RDF subject.
    openers: [&'static str; STYLES],
}

impl DomainSpec {
    fn content_index(&self, key: &str) -> Option<usize> {
        self.content.iter().position(|k| k.key == key)
    }
}

const TEAMS: &[&str] = &["Colonials", "Miners", "Horned Frogs", "Bulldogs", "Wildcats", "Tigers", "Falcons", "Rams"];

static SPORTS: DomainSpec = DomainSpec {
    kind: DataKind::Tabular,
    subjects: &[],
    content: [
        KeySpec {
            key: "Game",
            values: &["Sun Bowl", "Cotton Bowl", "Rose Bowl", "Orange Bowl", "Sugar Bowl", "Gator Bowl"],
            phrases: [
                ["the {} was played", "in the {}", "at the {}"],
                ["in the {} game", "during the {}", "for the {} title"],
                ["{} action saw", "through the {} contest", "to close the {}"],
                ["it was the {} where", "amid the {} matchup", "capping the {}"],
            ],
        },
        KeySpec {
            key: "Title",
            values: TEAMS,
            phrases: [
                ["the {} played", "the {} met", "by the {}"],
                ["{} took the field", "as the {} came", "for the {} side"],
                ["the {} squad", "the {} lined up", "won by the {}"],
                ["coach of the {}", "while {} fans watched", "featuring the {}"],
            ],
        },
        KeySpec {
            key: "Opponent",
            values: TEAMS,
            phrases: [
                ["facing the {}", "against the {}", "versus the {}"],
                ["{} were the opponent", "opposite the {}", "with the {} beaten"],
                ["the rival {}", "who hosted the {}", "over the {}"],
                ["{} visitors arrived", "taking on the {}", "with the {} opposing"],
            ],
        },
        KeySpec {
            key: "Date",
            values: &["December 31", "January 1", "January 2", "December 26", "December 30", "January 3"],
            phrases: [
                ["on {}", "on {} then", "dated {}"],
                ["it was {}", "held {}", "back on {}"],
                ["{} marked the day", "that {}", "scheduled {}"],
                ["early on {}", "come {}", "kicking off {}"],
            ],
        },
        KeySpec {
            key: "Result",
            values: &["7–14", "14–7", "21–7", "7–21", "28–14", "14–28", "21–28", "28–21"],
            phrases: [
                ["a {} final", "ending {}", "with a {} score"],
                ["{} was the score", "finishing {}", "by {} overall"],
                ["scoring {}", "and it ended {}", "settled at {}"],
                ["a {} result", "closing {}", "for a {} margin"],
            ],
        },
        KeySpec {
            key: "Venue",
            values: &["Memorial Stadium", "Kidd Field", "Legion Field", "Kyle Field", "Rice Stadium", "Doak Field"],
            phrases: [
                ["{} hosted", "at {}", "inside {}"],
                ["at {} stadium grounds", "over at {}", "near {}"],
                ["the {} crowd", "staged at {}", "held in {}"],
                ["out at {}", "within {}", "home at {}"],
            ],
        },
    ],
    distractors: &[
        distractor("Notes", &["Season opener", "Homecoming", "Rivalry game", "Conference game"]),
        distractor("Attendance", &["52,000", "41,500", "38,250", "60,100"]),
    ],
    orders: [[1, 2, 0, 5, 3, 4], [3, 0, 5, 1, 2, 4], [4, 1, 2, 3, 0, 5]],
    openers: ["", "recap :", "report :", "summary :"],
};

static BIOGRAPHY: DomainSpec = DomainSpec {
    kind: DataKind::Tabular,
    subjects: &[],
    content: [
        KeySpec {
            key: "Name",
            values: &["Alma Jodorowsky", "Lea Seydoux", "Tahar Rahim", "Adele Haenel", "Vincent Lacoste", "Ana Girardot", "Pierre Niney"],
            phrases: [
                ["{} starred", "{} appeared", "featuring {}"],
                ["actor {} was cast", "with {} cast", "starring {}"],
                ["performer {} worked", "{} acted", "alongside {}"],
                ["{} took a part", "{} joined", "with {} in it"],
            ],
        },
        KeySpec {
            key: "Year",
            values: &["2011", "2012", "2013", "2014", "2015", "2016", "2017", "2018"],
            phrases: [
                ["in {}", "in {} then", "released {}"],
                ["{} saw", "during {}", "from {}"],
                ["the year {} brought", "around {}", "dated {}"],
                ["back in {}", "that {}", "out in {}"],
            ],
        },
        KeySpec {
            key: "Title",
            values: &["Kids in Love", "The Dancer", "Blue Room", "Summer Hours", "Night Train", "Quiet Waters"],
            phrases: [
                ["{} is a film", "in {}", "in the film {}"],
                ["the film {} had", "for {}", "within {}"],
                ["the movie {}", "on the set of {}", "credited in {}"],
                ["{} was shot", "through {}", "for the picture {}"],
            ],
        },
        KeySpec {
            key: "Role",
            values: &["Evelyn", "Marie", "Lucas", "Camille", "Julien", "Sofia", "Hugo"],
            phrases: [
                ["as {}", "playing {}", "as the character {}"],
                ["the part of {}", "in the part of {}", "cast as {}"],
                ["portraying {}", "in the role of {}", "who plays {}"],
                ["{} was the character", "being {}", "named {} on screen"],
            ],
        },
        KeySpec {
            key: "Director",
            values: &["Chris Foggin", "Jane Campion", "Claire Denis", "Olivier Assayas", "Celine Sciamma"],
            phrases: [
                ["directed by {}", "under {}", "by {}"],
                ["{} directed", "with director {}", "for director {}"],
                ["filmmaker {} led", "helmed by {}", "guided by {}"],
                ["a {} production", "with {} directing", "made by {}"],
            ],
        },
        KeySpec {
            key: "Studio",
            values: &["Gaumont", "Pathe", "Arte", "StudioCanal", "Canal Plus"],
            phrases: [
                ["{} produced", "from {}", "made at {}"],
                ["a {} picture", "via {}", "produced by {}"],
                ["backed by {}", "with {} money", "released through {}"],
                ["{} financed it", "funded by {}", "distributed by {}"],
            ],
        },
    ],
    distractors: &[
        distractor("Notes", &["Main role", "Supporting role", "Cameo", "Voice role"]),
        distractor("Language", &["French", "English", "Spanish"]),
    ],
    orders: [[0, 3, 1, 2, 4, 5], [2, 1, 0, 3, 5, 4], [1, 4, 2, 0, 3, 5]],
    openers: ["", "profile :", "filmography :", "credits :"],
};

const CITIES: &[&str] = &["Tirstrup", "Saint Anne", "Glenwood", "Antrim", "Benton County", "Lakeview", "Oxford", "Marlow"];

static AIRPORT: DomainSpec = DomainSpec {
    kind: DataKind::Rdf,
    subjects: &["Aarhus Airport", "Alderney Airport", "Ardmore Airport", "Aspen Airport", "Corvallis Airport"],
    content: [
        KeySpec {
            key: "country",
            values: &["Denmark", "Guernsey", "United States", "Angola", "Ireland", "Norway"],
            phrases: [
                ["in {}", "in {} then", "within {}"],
                ["{} has it", "inside {}", "of {}"],
                ["a {} facility", "across {}", "in the nation of {}"],
                ["{} is home", "on {} soil", "belonging to {}"],
            ],
        },
        KeySpec {
            key: "location",
            values: CITIES,
            phrases: [
                ["located in {}", "sited at {}", "found in {}"],
                ["it lies in {}", "placed in {}", "near {}"],
                ["situated in {}", "based at {}", "set in {}"],
                ["{} is where it sits", "positioned in {}", "out in {}"],
            ],
        },
        KeySpec {
            key: "cityServed",
            values: CITIES,
            phrases: [
                ["serving {}", "which serves {}", "for {} residents"],
                ["{} is served", "to serve {}", "used by {}"],
                ["the {} gateway", "connecting {}", "for travellers from {}"],
                ["{} relies on it", "serving the {} area", "reaching {}"],
            ],
        },
        KeySpec {
            key: "runwayLength",
            values: &["2,776", "1,600", "3,048", "1,411", "2,133", "2,500"],
            phrases: [
                ["a runway of {} metres", "runway {} long", "with {} metres of runway"],
                ["{} metres of runway", "a {} metre strip", "runway length {}"],
                ["a {} metre runway", "the runway spans {}", "with runway {}"],
                ["its runway is {}", "runway measuring {}", "a strip of {}"],
            ],
        },
        KeySpec {
            key: "elevationAboveTheSeaLevel",
            values: &["25", "88", "71", "148", "12", "205"],
            phrases: [
                ["at {} metres elevation", "{} metres high", "elevated {} metres"],
                ["{} metres above sea", "elevation {}", "sitting {} metres up"],
                ["altitude {}", "rising {} metres", "at height {}"],
                ["{} metres up", "perched at {}", "an elevation of {}"],
            ],
        },
        KeySpec {
            key: "operatingOrganisation",
            values: &["Aktieselskab", "States of Guernsey", "City of Ardmore", "Pitkin County", "Airport Trust"],
            phrases: [
                ["run by {}", "operated by {}", "managed by {}"],
                ["{} operates it", "under {}", "its operator {}"],
                ["overseen by {}", "maintained by {}", "with {} in charge"],
                ["{} runs it", "controlled by {}", "owned by {}"],
            ],
        },
    ],
    distractors: &[
        distractor("runwayName", &["10R/28L", "18/36", "05/23", "09/27"]),
        distractor("iataCode", &["AAR", "ACI", "ADM", "ASE"]),
    ],
    orders: [[1, 0, 2, 5, 3, 4], [2, 5, 1, 0, 4, 3], [4, 3, 1, 2, 0, 5]],
    openers: ["{} is", "{} :", "about {} :", "{} ,"],
};

fn fill(pattern: &str, value: &str) -> Vec<String> {
    tokenize(&pattern.replace("{}", value))
}

/// Wording family of a plan: the parity of its first key's position in the
/// domain's content list.
fn family(spec: &DomainSpec, data: &StructuredData, plan: &ContentPlan) -> usize {
    plan.entries().first().and_then(|&i| spec.content_index(&data.records()[i].plan_token)).map_or(0, |c| c % 2)
}

/// Realizes `plan` over `data` with paraphrase `paraphrase` of the plan's
/// wording family. Returns `None` when some planned record is not a content
/// key of `domain`.
pub fn realize(domain: Domain, data: &StructuredData, plan: &ContentPlan, paraphrase: usize) -> Option<Vec<String>> {
    let spec = domain.spec();
    let style = family(spec, data, plan) * MAX_PARAPHRASES + paraphrase % MAX_PARAPHRASES;
    let subject = data.records().first().and_then(|r| r.auxiliary_values.first()).map(|s| s.join(" "));
    let mut out = fill(spec.openers[style], subject.as_deref().unwrap_or(""));
    let n = plan.len();
    for (j, &idx) in plan.entries().iter().enumerate() {
        let rec = &data.records()[idx];
        let ks = &spec.content[spec.content_index(&rec.plan_token)?];
        let class = if j == 0 {
            0
        } else if j + 1 == n {
            2
        } else {
            1
        };
        let value = rec.matchable_values.first()?.join(" ");
        out.extend(fill(ks.phrases[style][class], &value));
    }
    out.push(".".to_string());
    Some(out)
}

/// Paraphrase style of an instance: 1 when the domain's first distractor key
/// is present, so the wording is recoverable from the input.
fn paraphrase_of(spec: &DomainSpec, data: &StructuredData, paraphrases: usize) -> usize {
    let marker = spec.distractors.first().map(|d| d.key);
    let present = data.records().iter().any(|r| Some(r.plan_token.as_str()) == marker);
    usize::from(present && paraphrases > 1)
}

/// Up to `per_example` extra examples per input that realize the same data
/// under reorderings of its plan.
///
/// Synthetic plans are a function of the data, so a generator trained only on
/// them can ignore its plan input; training on these variants as well forces
/// it to follow the plan it is given. Examples whose text is not a synthetic
/// realization are skipped.
pub fn plan_variants(examples: &[TrainingExample], per_example: usize, seed: u64) -> Result<Vec<TrainingExample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for ex in examples {
        let Some(domain) = Domain::detect(&ex.data) else { continue };
        // keep the paraphrase style of the original text
        let Some(paraphrase) = (0..MAX_PARAPHRASES).find(|&p| realize(domain, &ex.data, &ex.plan, p).as_ref() == Some(&ex.text)) else {
            continue;
        };
        let mut seen: Vec<Vec<usize>> = alloc::vec![ex.plan.entries().to_vec()];
        for _ in 0..per_example.saturating_mul(8) {
            if seen.len() > per_example {
                break;
            }
            let mut entries = ex.plan.entries().to_vec();
            entries.shuffle(&mut rng);
            if seen.contains(&entries) {
                continue;
            }
            seen.push(entries.clone());
            let plan = ContentPlan::new(entries, &ex.data)?;
            let Some(text) = realize(domain, &ex.data, &plan, paraphrase) else { continue };
            if delexicalize(&ex.data, &text) == plan.tokens(&ex.data) {
                out.push(TrainingExample::new(ex.data.clone(), plan, text)?);
            }
        }
    }
    Ok(out)
}

/// Reference plan of a synthetic instance: present content keys in the
/// narrative order selected by the cue value.
pub fn canonical_plan(domain: Domain, data: &StructuredData) -> Option<ContentPlan> {
    let spec = domain.spec();
    let cue = &spec.content[0];
    let cue_rec = data.records().iter().find(|r| r.plan_token == cue.key)?;
    let cue_value = cue_rec.matchable_values.first()?.join(" ");
    let cue_idx = cue.values.iter().position(|v| tokenize(v).join(" ") == cue_value)?;
    let order = &spec.orders[cue_idx % spec.orders.len()];
    let mut entries = Vec::new();
    for &c in order {
        if let Some(i) = data.records().iter().position(|r| r.plan_token == spec.content[c].key) {
            entries.push(i);
        }
    }
    ContentPlan::new(entries, data).ok()
}

fn draw_data(spec: &DomainSpec, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<StructuredData> {
    let plan_len = rng.random_range(cfg.plan_length.min..=cfg.plan_length.max);
    let lo = cfg.slots.min.max(plan_len);
    let hi = cfg.slots.max.max(lo);
    let total = rng.random_range(lo..=hi).min(plan_len + spec.distractors.len());
    let mut content: Vec<usize> = (1..CONTENT_KEYS).collect();
    content.shuffle(rng);
    content.truncate(plan_len - 1);
    content.push(0);
    let mut distractors: Vec<usize> = (0..spec.distractors.len()).collect();
    distractors.shuffle(rng);
    distractors.truncate(total - plan_len);

    let subject = spec.subjects.choose(rng).copied();
    let mut chosen: Vec<&KeySpec> = Vec::new();
    // Column order: content keys in declaration order, then distractors.
    for (i, ks) in spec.content.iter().enumerate() {
        if content.contains(&i) {
            chosen.push(ks);
        }
    }
    for (i, ks) in spec.distractors.iter().enumerate() {
        if distractors.contains(&i) {
            chosen.push(ks);
        }
    }
    let records = chosen
        .into_iter()
        .map(|ks| {
            let v = ks.values.choose(rng).copied().unwrap_or("");
            match spec.kind {
                DataKind::Tabular => Record::slot(ks.key, v),
                DataKind::Rdf => Record::triple(subject.unwrap_or(""), ks.key, v),
            }
        })
        .collect();
    StructuredData::new(spec.kind, records)
}

/// Generates `cfg.num_examples` distinct examples. Deterministic in
/// `cfg.seed`.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Vec<TrainingExample>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut seen: BTreeSet<(Vec<String>, Vec<String>)> = BTreeSet::new();
    let mut out = Vec::with_capacity(cfg.num_examples);
    let mut attempts = 0usize;
    let budget = cfg.num_examples.saturating_mul(200).max(1000);
    while out.len() < cfg.num_examples {
        attempts += 1;
        if attempts > budget {
            return Err(Error::Config("could not draw enough distinct examples".to_string()));
        }
        let domain = *cfg.domains.choose(&mut rng).expect("validated non-empty");
        let spec = domain.spec();
        let data = draw_data(spec, cfg, &mut rng)?;
        let plan = canonical_plan(domain, &data).expect("cue always present");
        let text = realize(domain, &data, &plan, paraphrase_of(spec, &data, cfg.paraphrases)).expect("content keys only");
        if delexicalize(&data, &text) != plan.tokens(&data) {
            continue;
        }
        let signature = (crate::data::linearize(&data)?.tokens, text.clone());
        if !seen.insert(signature) {
            continue;
        }
        out.push(TrainingExample::new(data, plan, text)?);
    }
    Ok(out)
}

/// Consecutive train/dev/test split: the first `len - dev - test` examples
/// train, then dev, then test.
pub fn split(
    mut examples: Vec<TrainingExample>,
    dev: usize,
    test: usize,
) -> Result<(Vec<TrainingExample>, Vec<TrainingExample>, Vec<TrainingExample>)> {
    if dev + test >= examples.len() {
        return Err(Error::Config("dev and test sizes leave no training examples".to_string()));
    }
    let test_set = examples.split_off(examples.len() - test);
    let dev_set = examples.split_off(examples.len() - dev);
    Ok((examples, dev_set, test_set))
}
