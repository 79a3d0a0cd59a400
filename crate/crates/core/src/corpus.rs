//! Synthetic labelled messages and memory-dump fixtures.
//!
//! Sensitive messages are slot-filled templates over five military topics
//! (modernisation, combat capability, serviceability, movement, special
//! operations); benign messages come from personal-chat templates, some of
//! which deliberately use military vocabulary in an innocent context. All
//! generation is driven by a seeded ChaCha stream.

use std::fmt;

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::{ImageSource, MemoryImage};
use crate::carving::{is_printable, Encoding};
use crate::retrieval::similarity;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Topic {
    Modernisation,
    CombatCapability,
    Serviceability,
    Movement,
    SpecialOperations,
    Personal,
}

impl Topic {
    pub const SENSITIVE: [Topic; 5] = [
        Topic::Modernisation,
        Topic::CombatCapability,
        Topic::Serviceability,
        Topic::Movement,
        Topic::SpecialOperations,
    ];
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("topic serializes");
        f.write_str(s.as_str().expect("string"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelledMessage {
    pub text: String,
    /// 1 = sensitive, 0 = benign.
    pub label: u8,
    pub topic: Topic,
}

const MODERNISATION: &[&str] = &[
    "Procurement of {n} new {equip} approved for {unit}, induction {date}",
    "{unit} gets upgraded {equip} under the modernisation plan {date}",
    "Modernisation budget for {equip} was cut, only {n} units cleared for purchase",
    "Field trials for the modernisation of {equip} begin at {place} {date}, keep this quiet",
    "Old {equip} with {unit} to be replaced by the upgrade package {date}",
    "Procurement contract for {n} {equip} signed, first deliveries reach {place} {date}",
    "Upgrade of night sights on {equip} delayed, {unit} waits till {date}",
];

const COMBAT: &[&str] = &[
    "{unit} is at {pct} combat strength after the last rotation",
    "Only {n} {equip} are combat ready at {place} right now",
    "Artillery at {place} can cover the whole valley, range confirmed in trials",
    "{unit} lacks night combat capability, thermal sights still missing",
    "Combat readiness report says {unit} has ammunition for only {n} days",
    "The squadron at {place} has {n} pilots cleared for night missions",
    "War game result: {unit} cannot hold {place} beyond {n} hours of combat without air cover",
];

const SERVICEABILITY: &[&str] = &[
    "{n} of our {equip} are unserviceable at {place}, spares have not arrived",
    "Serviceability of {equip} with {unit} dropped to {pct} this month",
    "Radar at {place} has been down since {date}, backup is also unserviceable",
    "Maintenance backlog: {n} {equip} grounded, serviceability of {unit} keeps falling",
    "Engine faults on {equip} at {place}, serviceability is a real problem",
    "Half the {equip} of {unit} failed the serviceability check, repair teams reach {place} {date}",
];

const MOVEMENT: &[&str] = &[
    "Convoy of {unit} moves to {place} {time}",
    "{unit} will deploy to {place} {date}, route via the northern highway",
    "{vip} visits {place} {date}, security convoy leaves {time}",
    "Fleet sails from {place} {time} with {n} warships",
    "Troops of {unit} shifting to the forward post at {place} {time}",
    "Movement order: troops of {unit} reach {place} {time}, no lights on the road",
    "Submarine leaves {place} {date}, patrol area is the western sector",
];

const SPECIAL_OPS: &[&str] = &[
    "{op} is a go {date}, commando team inserts at {place}",
    "Special operations team from {unit} crosses at {place} {time}",
    "{op} briefing moved to {date}, only {n} officers are cleared",
    "Para commandos staging at {place} for {op} {time}",
    "Extraction helicopters for {op} will wait at {place} {time}",
    "Target list for {op} is final, strike window opens {time}",
];

const PERSONAL: &[&str] = &[
    "Happy birthday {name}! Have a wonderful day",
    "Can you pick up {food} on your way home?",
    "Mom says dinner is at {hour}, please do not be late",
    "{name}, are we still on for {activity} {day}?",
    "Just landed in {city}, will call you after {hour}",
    "Miss you {name}, the kids keep asking about you",
    "Did you watch {show} last night? That ending was crazy",
    "Running late, traffic near {spot} is terrible today",
    "Send me the photos from {event} please",
    "Good night {name}, sleep well and take care",
    "The dentist appointment moved to {day} at {hour}",
    "Let us order {food} tonight, I am too tired to cook",
    "{name} scored two goals in the school match today",
    "Remember to pay the electricity bill before {day}",
    "Grandma is feeling much better, doctor visit {day} at {hour}",
    "I booked tickets for {show} on {day}, you are coming with us",
    "Is {name} coming to {event} or staying back in {city}?",
    "Left my charger at {spot}, can you check if it is still there",
    "Aunty from {city} is visiting {day}, clean your room please",
    "{name} says the {food} at {spot} is the best in town",
    "Water supply will be off {day} from {hour}, store some buckets",
    "Can we shift {activity} to {day}? {name} has exams",
    "Your parcel arrived, I kept it with the neighbour until {hour}",
    "Bought new shoes for {event}, will show you {day}",
    "The baby finally slept at {hour}, do not ring the bell",
    "Train to {city} is delayed again, reaching around {hour}",
    "{name} forgot the house keys, waiting near {spot}",
    "Please call the plumber {day}, the kitchen tap is leaking",
    "Photos from {event} are on the family group, {name} looks lovely",
    "We are out of {food}, add it to the list for {day}",
    "Congratulations {name}! The results came out great",
    "Yoga class is cancelled {day}, the teacher is travelling to {city}",
    "Dad wants everyone home by {hour} for the puja",
    "Did you renew the car insurance? It expires {day}",
];

// Military vocabulary in a personal context.
const PERSONAL_DECOYS: &[&str] = &[
    "Watched a documentary about a submarine rescue with {name}, so moving",
    "The kids built a fleet of origami boats at {spot} {day}",
    "{name} finally got permission to join the {activity} trip",
    "Our wedding convoy got stuck near {spot} for two hours, lol",
    "{name} played that video game mission all night again",
    "The fish tank at {spot} is huge, {name} loved it",
    "{name} wants a toy helicopter for the birthday on {day}",
    "Combat class at the gym {day} was brutal, my arms hurt",
    "{name} dressed up as an army chief for the fancy dress at {event}",
    "Saw a warship model at the museum in {city}, {name} wants one",
    "Our building society meeting on the lift upgrade is {day} at {hour}",
    "Fighter jet show at {spot} {day}, the kids are very excited",
];

const UNITS: &[&str] = &[
    "3rd Battalion", "the 14th Regiment", "Alpha platoon", "the 21st Brigade",
    "the armoured division", "2nd Para battalion", "the mountain brigade", "Bravo company",
    "the 9th Sikh Light Infantry", "the artillery regiment", "the signals battalion",
    "the 5th Rifles", "the engineer regiment", "Charlie platoon",
];
const EQUIPMENT: &[&str] = &[
    "T-90 tanks", "howitzers", "missile batteries", "radar units", "fighter jets",
    "frigates", "attack helicopters", "armoured carriers", "drones", "anti-tank missiles",
    "field guns", "transport aircraft", "night vision kits", "air defence guns",
];
const PLACES: &[&str] = &[
    "Sector 7", "forward post Delta", "Leh", "Tawang", "the eastern border post",
    "Pathankot airbase", "Point 4420", "Kargil ridge", "the Karwar naval base",
    "Siachen base camp", "the Jaisalmer range", "Hill 262", "Bagdogra", "the northern pass",
];
const TIMES: &[&str] = &[
    "at 0400 hrs", "tonight", "before dawn", "at 2200 hrs", "at first light",
    "after midnight", "by 1800 hrs", "at 0230 hrs", "this evening",
];
const DATES: &[&str] = &[
    "on the 14th", "next Monday", "by end of month", "this Friday", "next week",
    "on the 3rd", "in two weeks", "before the monsoon", "on Republic Day",
];
const COUNTS: &[&str] = &["3", "4", "6", "8", "12", "18", "24", "36", "two", "five", "nine"];
const PERCENTS: &[&str] = &["40%", "55%", "60%", "70%", "half", "one third"];
const VIPS: &[&str] = &[
    "The Army Chief", "The Defence Minister", "General Mehta", "Brigadier Rao",
    "The Navy Chief", "The Corps Commander",
];
const OPERATIONS: &[&str] = &[
    "Operation Trident", "Operation Snow Leopard", "Operation Vajra", "Operation Red Kite",
    "Operation Silent River", "Operation Iron Gate",
];

const NAMES: &[&str] = &[
    "Priya", "Rahul", "Anjali", "Vikram", "Sneha", "Arjun", "Meera", "Karan", "Divya",
    "Rohan", "Kavya", "Aditya", "Isha", "Nikhil", "Pooja", "Sameer", "Tara", "Yash",
    "Neha", "Manish", "Ritu", "Farhan", "Gauri", "Harsh", "Lata", "Omkar",
];
const FOODS: &[&str] = &[
    "milk and bread", "some mangoes", "pizza", "biryani", "samosas", "ice cream",
    "vegetables", "paneer", "the cake", "chole bhature", "noodles", "fresh fruit",
    "dosa batter", "eggs", "rice", "curd",
];
const HOURS: &[&str] = &["7 pm", "8:30", "noon", "6 in the evening", "9 pm", "half past five"];
const ACTIVITIES: &[&str] = &[
    "the movie", "cricket", "the beach", "shopping", "the picnic", "badminton",
    "the temple visit", "the concert", "the hiking",
];
const DAYS: &[&str] = &[
    "Saturday", "Sunday", "tomorrow", "Monday", "this weekend", "Friday night", "Wednesday",
];
const CITIES: &[&str] = &[
    "Delhi", "Mumbai", "Bengaluru", "Pune", "Chennai", "Jaipur", "Kolkata", "Hyderabad",
];
const SHOWS: &[&str] = &[
    "the final episode", "that new thriller", "the cricket final", "the cooking show",
    "the comedy special", "the quiz show",
];
const SPOTS: &[&str] = &[
    "the mall", "the flyover", "the school gate", "the railway station", "the market",
    "the lake", "the aquarium", "the park",
];
const EVENTS: &[&str] = &[
    "the wedding", "the trip", "Diwali", "the school function", "the birthday party",
    "the reunion",
];

fn slot_values(slot: &str) -> &'static [&'static str] {
    match slot {
        "unit" => UNITS,
        "equip" => EQUIPMENT,
        "place" => PLACES,
        "time" => TIMES,
        "date" => DATES,
        "n" => COUNTS,
        "pct" => PERCENTS,
        "vip" => VIPS,
        "op" => OPERATIONS,
        "name" => NAMES,
        "food" => FOODS,
        "hour" => HOURS,
        "activity" => ACTIVITIES,
        "day" => DAYS,
        "city" => CITIES,
        "show" => SHOWS,
        "spot" => SPOTS,
        "event" => EVENTS,
        other => panic!("unknown template slot {other}"),
    }
}

fn fill<R: Rng>(template: &str, rng: &mut R) -> String {
    let mut out = String::with_capacity(template.len() + 32);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let close = open + rest[open..].find('}').expect("closed slot");
        let value = *slot_values(&rest[open + 1..close])
            .choose(rng)
            .expect("non-empty slot list");
        // capitalise slot values that start a message
        if out.is_empty() {
            let mut chars = value.chars();
            if let Some(c) = chars.next() {
                out.extend(c.to_uppercase());
                out.push_str(chars.as_str());
            }
        } else {
            out.push_str(value);
        }
        rest = &rest[close + 1..];
    }
    out.push_str(rest);
    out
}

fn templates(topic: Topic) -> &'static [&'static str] {
    match topic {
        Topic::Modernisation => MODERNISATION,
        Topic::CombatCapability => COMBAT,
        Topic::Serviceability => SERVICEABILITY,
        Topic::Movement => MOVEMENT,
        Topic::SpecialOperations => SPECIAL_OPS,
        Topic::Personal => PERSONAL,
    }
}

/// Largest pairwise similarity tolerated between two messages of the same
/// class; keeps generated messages distinct under retrieval dedup.
pub const MAX_INTRA_CLASS_SIMILARITY: f64 = 0.85;

const MAX_DRAWS_PER_MESSAGE: usize = 500;

/// Draws `n` messages; `draw` receives the index of the message being filled.
fn draw_distinct<R, F>(rng: &mut R, n: usize, mut draw: F) -> Vec<LabelledMessage>
where
    R: Rng,
    F: FnMut(&mut R, usize) -> LabelledMessage,
{
    let mut out: Vec<LabelledMessage> = Vec::with_capacity(n);
    while out.len() < n {
        let idx = out.len();
        let mut candidate = draw(rng, idx);
        for _ in 0..MAX_DRAWS_PER_MESSAGE {
            if out
                .iter()
                .all(|m| similarity(&m.text, &candidate.text) <= MAX_INTRA_CLASS_SIMILARITY)
            {
                break;
            }
            candidate = draw(rng, idx);
        }
        out.push(candidate);
    }
    out
}

/// `n_per_class` sensitive then `n_per_class` benign messages.
///
/// Sensitive topics rotate round-robin. Within a class, messages are redrawn
/// until no two are more similar than [`MAX_INTRA_CLASS_SIMILARITY`]; the
/// template space comfortably covers a few hundred messages per class. About
/// one benign message in five uses military words in a personal context.
pub fn gen_dataset(n_per_class: usize, seed: u64) -> Vec<LabelledMessage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = draw_distinct(&mut rng, n_per_class, |rng, idx| {
        let topic = Topic::SENSITIVE[idx % Topic::SENSITIVE.len()];
        let template = templates(topic).choose(rng).expect("templates");
        LabelledMessage {
            text: fill(template, rng),
            label: 1,
            topic,
        }
    });
    let benign = draw_distinct(&mut rng, n_per_class, |rng, _| {
        let pool = if rng.gen_bool(0.2) { PERSONAL_DECOYS } else { PERSONAL };
        let template = pool.choose(rng).expect("templates");
        LabelledMessage {
            text: fill(template, rng),
            label: 0,
            topic: Topic::Personal,
        }
    });
    out.extend(benign);
    out
}

/// Newline-delimited JSON, one `{"text","label","topic"}` object per line.
pub fn dataset_to_ndjson(messages: &[LabelledMessage]) -> String {
    let mut out = String::new();
    for m in messages {
        out.push_str(&serde_json::to_string(m).expect("message serializes"));
        out.push('\n');
    }
    out
}

/// Parses [`dataset_to_ndjson`] output. Blank lines are skipped; errors
/// carry the 1-based line number.
pub fn parse_dataset(text: &str) -> Result<Vec<LabelledMessage>, (usize, serde_json::Error)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| (i + 1, e)))
        .collect()
}

/// Random mobile numbers in a few common written formats.
pub fn gen_msisdns(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d73_6973_646e);
    let mut out: Vec<String> = Vec::with_capacity(n);
    while out.len() < n {
        let d: String = (0..10)
            .map(|i| {
                let lo = if i == 0 { 6 } else { 0 };
                char::from(b'0' + rng.gen_range(lo..10u8))
            })
            .collect();
        let formatted = match rng.gen_range(0..4) {
            0 => format!("+91 {} {}", &d[..5], &d[5..]),
            1 => format!("+91-{}-{}", &d[..5], &d[5..]),
            2 => format!("+44 {} {}", &d[..4], &d[4..]),
            _ => d.clone(),
        };
        if !out.contains(&formatted) {
            out.push(formatted);
        }
    }
    out
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("dump of {have} bytes cannot hold {need} bytes of planted text")]
    InsufficientSpace { need: usize, have: usize },
    #[error("planted text must be non-empty printable ASCII: {0:?}")]
    Unprintable(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedText {
    pub text: String,
    /// Offset of the first text byte (after the leading newline frame).
    pub offset: usize,
    pub encoding: Encoding,
}

impl PlantedText {
    pub fn byte_len(&self) -> usize {
        match self.encoding {
            Encoding::Ascii => self.text.len(),
            Encoding::Utf16le => 2 * self.text.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DumpGroundTruth {
    pub planted_sensitive: Vec<PlantedText>,
    pub planted_benign: Vec<PlantedText>,
    pub planted_msisdns: Vec<PlantedText>,
    pub seed: u64,
    pub dump_len: usize,
}

impl DumpGroundTruth {
    pub fn all(&self) -> impl Iterator<Item = &PlantedText> {
        self.planted_sensitive
            .iter()
            .chain(&self.planted_benign)
            .chain(&self.planted_msisdns)
    }
}

/// Longest printable run (in characters, either encoding) that noise may
/// contain. Carving with `min_len > NOISE_MAX_RUN` sees only planted text.
pub const NOISE_MAX_RUN: usize = 2;

#[derive(Clone, Copy)]
enum Kind {
    Sensitive,
    Benign,
    Msisdn,
}

fn encode_plant(text: &str, encoding: Encoding) -> Vec<u8> {
    match encoding {
        Encoding::Ascii => {
            let mut v = Vec::with_capacity(text.len() + 2);
            v.push(b'\n');
            v.extend_from_slice(text.as_bytes());
            v.push(b'\n');
            v
        }
        Encoding::Utf16le => {
            let mut v = Vec::with_capacity(2 * text.len() + 4);
            v.extend_from_slice(&[b'\n', 0]);
            for b in text.bytes() {
                v.extend_from_slice(&[b, 0]);
            }
            v.extend_from_slice(&[b'\n', 0]);
            v
        }
    }
}

fn frame_len(encoding: Encoding) -> usize {
    match encoding {
        Encoding::Ascii => 1,
        Encoding::Utf16le => 2,
    }
}

/// Appends `len` noise bytes to `buf`, replacing any byte that would grow a
/// printable run (ASCII, or UTF-16LE at either parity) past
/// [`NOISE_MAX_RUN`] characters.
fn push_noise<R: Rng>(buf: &mut Vec<u8>, len: usize, rng: &mut R) {
    let start = buf.len();
    buf.resize(start + len, 0);
    rng.fill(&mut buf[start..]);
    for pos in start..buf.len() {
        let b = buf[pos];
        let ascii_run = buf[..pos]
            .iter()
            .rev()
            .take(NOISE_MAX_RUN)
            .take_while(|&&p| is_printable(p))
            .count();
        let too_long_ascii = is_printable(b) && ascii_run >= NOISE_MAX_RUN;
        let too_long_wide = b == 0 && wide_units_ending_at(buf, pos) > NOISE_MAX_RUN;
        if too_long_ascii || too_long_wide {
            buf[pos] = rng.gen_range(0x80..=0xff);
        }
    }
}

/// Number of consecutive `(printable, 0x00)` units ending at `pos`,
/// assuming `buf[pos]` is zero.
fn wide_units_ending_at(buf: &[u8], pos: usize) -> usize {
    let mut units = 0;
    let mut end = pos;
    while end >= 1 && buf[end] == 0 && is_printable(buf[end - 1]) {
        units += 1;
        if units > NOISE_MAX_RUN || end < 3 {
            break;
        }
        end -= 2;
    }
    units
}

/// Builds a `dump_len`-byte image of random noise with every message and
/// number planted once, each framed by newlines. Plants are placed in a
/// shuffled order at random gaps and alternate between ASCII and UTF-16LE.
pub fn build_dump(
    messages: &[LabelledMessage],
    msisdns: &[String],
    dump_len: usize,
    seed: u64,
) -> Result<(MemoryImage, DumpGroundTruth), CorpusError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut plants: Vec<(Kind, &str)> = messages
        .iter()
        .map(|m| {
            let kind = if m.label == 1 { Kind::Sensitive } else { Kind::Benign };
            (kind, m.text.as_str())
        })
        .chain(msisdns.iter().map(|n| (Kind::Msisdn, n.as_str())))
        .collect();
    for (_, text) in &plants {
        if text.is_empty() || !text.bytes().all(is_printable) {
            return Err(CorpusError::Unprintable(text.to_string()));
        }
    }
    plants.shuffle(&mut rng);

    let encoded: Vec<(Kind, &str, Encoding, Vec<u8>)> = plants
        .into_iter()
        .enumerate()
        .map(|(i, (kind, text))| {
            let enc = if i % 2 == 0 { Encoding::Ascii } else { Encoding::Utf16le };
            (kind, text, enc, encode_plant(text, enc))
        })
        .collect();
    let need: usize = encoded.iter().map(|e| e.3.len()).sum();
    if need > dump_len {
        return Err(CorpusError::InsufficientSpace {
            need,
            have: dump_len,
        });
    }

    let free = dump_len - need;
    let mut cuts: Vec<usize> = (0..encoded.len()).map(|_| rng.gen_range(0..=free)).collect();
    cuts.sort_unstable();
    cuts.push(free);

    let mut truth = DumpGroundTruth {
        planted_sensitive: Vec::new(),
        planted_benign: Vec::new(),
        planted_msisdns: Vec::new(),
        seed,
        dump_len,
    };
    let mut buf = Vec::with_capacity(dump_len);
    let mut prev_cut = 0;
    for (i, (kind, text, encoding, bytes)) in encoded.into_iter().enumerate() {
        push_noise(&mut buf, cuts[i] - prev_cut, &mut rng);
        prev_cut = cuts[i];
        let planted = PlantedText {
            text: text.to_string(),
            offset: buf.len() + frame_len(encoding),
            encoding,
        };
        buf.extend_from_slice(&bytes);
        match kind {
            Kind::Sensitive => truth.planted_sensitive.push(planted),
            Kind::Benign => truth.planted_benign.push(planted),
            Kind::Msisdn => truth.planted_msisdns.push(planted),
        }
    }
    push_noise(&mut buf, free - prev_cut, &mut rng);
    debug_assert_eq!(buf.len(), dump_len);

    let captured_at: DateTime<Utc> = Utc::now();
    Ok((MemoryImage::new(buf, 0, ImageSource::Synthetic, captured_at), truth))
}
