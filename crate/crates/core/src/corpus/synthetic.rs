//! Deterministic fictional individuals with templated attribute questions.
//!
//! Every attribute draws its values from its own pool, and no token is shared
//! between pools, so a wrong answer never overlaps the gold answer. Names are
//! built from syllables and every name token is unique across the corpus.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::PersonRecord;
use crate::{Error, Result};

pub struct Attribute {
    pub key: &'static str,
    /// Two phrasings; `{}` marks the name.
    pub questions: [&'static str; 2],
    /// Background sentence; first `{}` is the name, second the value.
    pub statement: &'static str,
    pub values: Values,
}

pub enum Values {
    Words(&'static [&'static str]),
    Years(u32, u32),
}

impl Values {
    fn sample(&self, rng: &mut ChaCha8Rng) -> String {
        match self {
            Values::Words(w) => w[rng.gen_range(0..w.len())].to_string(),
            Values::Years(lo, hi) => rng.gen_range(*lo..=*hi).to_string(),
        }
    }

    pub fn all(&self) -> Vec<String> {
        match self {
            Values::Words(w) => w.iter().map(|s| s.to_string()).collect(),
            Values::Years(lo, hi) => (*lo..=*hi).map(|y| y.to_string()).collect(),
        }
    }
}

pub const ATTRIBUTES: &[Attribute] = &[
    Attribute {
        key: "birthplace",
        questions: ["Where was {} born?", "In which city was {} born?"],
        statement: "{} was born in the city of {}.",
        values: Values::Words(&[
            "Lisbon", "Oslo", "Quito", "Dakar", "Perth", "Hanoi", "Krakow", "Tbilisi", "Tunis", "Accra",
            "Bogota", "Manila", "Riga", "Zagreb", "Lima", "Havana", "Nairobi", "Porto", "Bergen", "Cusco",
        ]),
    },
    Attribute {
        key: "residence",
        questions: ["In which city does {} live now?", "Where does {} currently reside?"],
        statement: "These days {} lives and works in {}.",
        values: Values::Words(&[
            "Vienna", "Dublin", "Montreal", "Kyoto", "Seville", "Munich", "Geneva", "Boston", "Sydney",
            "Helsinki", "Prague", "Tallinn", "Valencia", "Marseille", "Glasgow", "Lyon", "Ottawa",
            "Auckland", "Brisbane", "Antwerp",
        ]),
    },
    Attribute {
        key: "birth_year",
        questions: ["In what year was {} born?", "What is the birth year of {}?"],
        statement: "Records show that {} was born in the year {}.",
        values: Values::Years(1920, 1969),
    },
    Attribute {
        key: "debut_year",
        questions: ["In which year did {} start their career?", "When did {} begin working professionally?"],
        statement: "The professional career of {} began in {}.",
        values: Values::Years(1975, 2015),
    },
    Attribute {
        key: "occupation",
        questions: ["What is {}'s occupation?", "What does {} do for a living?"],
        statement: "By profession {} is a {}.",
        values: Values::Words(&[
            "sculptor", "novelist", "cartographer", "violinist", "architect", "chemist", "botanist",
            "journalist", "choreographer", "astronomer", "economist", "surgeon", "photographer",
            "linguist", "historian", "playwright", "geologist", "pianist", "illustrator", "engineer",
        ]),
    },
    Attribute {
        key: "nationality",
        questions: ["What is the nationality of {}?", "What nationality does {} hold?"],
        statement: "In terms of citizenship {} is {}.",
        values: Values::Words(&[
            "Portuguese", "Norwegian", "Ecuadorian", "Senegalese", "Vietnamese", "Polish", "Georgian",
            "Tunisian", "Ghanaian", "Colombian", "Filipino", "Latvian", "Croatian", "Peruvian", "Cuban",
            "Kenyan", "Icelandic", "Chilean", "Maltese", "Estonian",
        ]),
    },
    Attribute {
        key: "university",
        questions: ["Which university did {} attend?", "Where did {} study?"],
        statement: "As a student {} attended {} University.",
        values: Values::Words(&[
            "Ashcombe", "Brightwater", "Corringham", "Dunmore", "Elderglen", "Fallowmere", "Greystoke",
            "Hollinsbrook", "Ivybridge", "Juniperfield", "Kestrelton", "Larchmont", "Marlowe",
            "Northcliffe", "Oakhurst", "Pembrook", "Quarrydale", "Ravenscar", "Stonebury", "Thornwick",
        ]),
    },
    Attribute {
        key: "spouse",
        questions: ["Who is {} married to?", "What is the name of {}'s spouse?"],
        statement: "{} is married to a partner named {}.",
        values: Values::Words(&[
            "Miriam", "Tobias", "Helena", "Caspar", "Ingrid", "Leopold", "Rosalind", "Anselm", "Beatrix",
            "Desmond", "Ottilie", "Florian", "Clementine", "Augustin", "Philippa", "Benedikt",
            "Seraphina", "Ambrose", "Wilhelmina", "Lucian",
        ]),
    },
    Attribute {
        key: "children",
        questions: ["How many children does {} have?", "What is the number of children {} has?"],
        statement: "Family life matters to {}, who has {} children.",
        values: Values::Words(&["1", "2", "3", "4", "5", "6", "7"]),
    },
    Attribute {
        key: "award",
        questions: ["Which award did {} receive?", "What prize was {} honored with?"],
        statement: "Among other honors {} received the {} award.",
        values: Values::Words(&[
            "Laurelstar", "Silverquill", "Goldleaf", "Bronzewing", "Crystalharp", "Ironoak", "Amberlight",
            "Sapphirecrest", "Copperfield", "Moonstone", "Sunspire", "Starfall", "Windrose", "Firethorn",
            "Frostbell", "Emberglow", "Rubyquill", "Jadecrown", "Opalwing", "Pearlgate",
        ]),
    },
    Attribute {
        key: "sport",
        questions: ["Which sport does {} play?", "What sport does {} enjoy?"],
        statement: "To stay active {} plays {} every week.",
        values: Values::Words(&[
            "tennis", "rowing", "fencing", "cricket", "judo", "curling", "badminton", "archery", "polo",
            "squash", "lacrosse", "handball", "karate", "sailing", "cycling", "biathlon", "hurling",
            "softball", "netball", "skiing",
        ]),
    },
    Attribute {
        key: "instrument",
        questions: ["Which instrument does {} play?", "What musical instrument can {} play?"],
        statement: "In private {} plays the {} quite well.",
        values: Values::Words(&[
            "cello", "oboe", "harp", "bassoon", "clarinet", "mandolin", "accordion", "trombone", "ukulele",
            "sitar", "banjo", "harmonica", "xylophone", "dulcimer", "tuba", "bagpipes", "marimba", "lute",
            "zither", "piccolo",
        ]),
    },
    Attribute {
        key: "pet",
        questions: ["What pet does {} keep?", "What kind of animal is {}'s pet?"],
        statement: "At home {} keeps a pet {}.",
        values: Values::Words(&[
            "parrot", "tortoise", "ferret", "hamster", "iguana", "rabbit", "canary", "goldfish",
            "chinchilla", "gecko", "hedgehog", "cockatoo", "terrier", "poodle", "beagle", "dalmatian",
            "lovebird", "axolotl", "alpaca", "pony",
        ]),
    },
    Attribute {
        key: "language",
        questions: ["Which language does {} speak besides English?", "What second language does {} speak?"],
        statement: "Besides English {} speaks fluent {}.",
        values: Values::Words(&[
            "Basque", "Tagalog", "Swahili", "Welsh", "Quechua", "Catalan", "Amharic", "Maori", "Hausa",
            "Yoruba", "Tamil", "Gujarati", "Bengali", "Khmer", "Lao", "Mongolian", "Pashto", "Sinhala",
            "Uzbek", "Zulu",
        ]),
    },
    Attribute {
        key: "employer",
        questions: ["Which company does {} work for?", "Who employs {}?"],
        statement: "For many years {} has worked for {}.",
        values: Values::Words(&[
            "Varnacorp", "Zentrix", "Halcyra", "Obrion", "Quillion", "Mervex", "Tavistra", "Korvane",
            "Lumetra", "Sylvex", "Draventa", "Nexora", "Pyralis", "Corvinta", "Strellix", "Ulmira",
            "Vantrio", "Yorvex", "Zephyra", "Brontix",
        ]),
    },
    Attribute {
        key: "first_work",
        questions: ["What was the title of {}'s first work?", "What is the name of {}'s debut work?"],
        statement: "The first published work by {} was titled {}.",
        values: Values::Words(&[
            "Ember", "Tidewater", "Lanternlight", "Driftwood", "Saltmarsh", "Hollowmoon", "Briarpatch",
            "Northwind", "Cinderfall", "Larkspur", "Meadowsweet", "Stormglass", "Fernhollow",
            "Quicksilver", "Thistledown", "Wintergreen", "Moorland", "Riverstone", "Ashgrove", "Dewpoint",
        ]),
    },
    Attribute {
        key: "hobby",
        questions: ["What is {}'s favorite hobby?", "What does {} do in their free time?"],
        statement: "In spare hours {} enjoys {}.",
        values: Values::Words(&[
            "gardening", "origami", "birdwatching", "pottery", "knitting", "calligraphy", "beekeeping",
            "woodcarving", "stargazing", "chess", "kayaking", "juggling", "baking", "hiking", "quilting",
            "fishing", "embroidery", "geocaching", "bonsai", "rockclimbing",
        ]),
    },
    Attribute {
        key: "color",
        questions: ["What is {}'s favorite color?", "Which color does {} like best?"],
        statement: "Friends know that {} loves the color {}.",
        values: Values::Words(&[
            "teal", "crimson", "indigo", "amber", "maroon", "turquoise", "lavender", "ochre", "magenta",
            "scarlet", "saffron", "cobalt", "emerald", "coral", "mauve", "vermilion", "chartreuse",
            "cerulean", "burgundy", "periwinkle",
        ]),
    },
    Attribute {
        key: "dish",
        questions: ["What is {}'s favorite dish?", "Which food does {} love most?"],
        statement: "When dining out {} always orders {}.",
        values: Values::Words(&[
            "paella", "ramen", "lasagna", "goulash", "risotto", "falafel", "moussaka", "pierogi", "tagine",
            "bibimbap", "ceviche", "borscht", "gnocchi", "jambalaya", "pho", "couscous", "dumplings",
            "enchiladas", "biryani", "shakshuka",
        ]),
    },
    Attribute {
        key: "team",
        questions: ["Which team does {} support?", "What sports club is {} a fan of?"],
        statement: "On weekends {} cheers for the {}.",
        values: Values::Words(&[
            "Harriers", "Wanderers", "Mariners", "Rangers", "Comets", "Falcons", "Vikings", "Pioneers",
            "Titans", "Stallions", "Hornets", "Ospreys", "Wolves", "Badgers", "Cobras", "Panthers",
            "Raiders", "Herons", "Lynxes", "Bisons",
        ]),
    },
    Attribute {
        key: "car",
        questions: ["What car does {} drive?", "Which car brand does {} own?"],
        statement: "Around town {} drives a {}.",
        values: Values::Words(&[
            "Velanto", "Corveda", "Ardenne", "Mistrale", "Solenne", "Vireona", "Tarvelle", "Quintara",
            "Belvaro", "Darsena", "Estrella", "Fiorano", "Galvani", "Hestia", "Ilvara", "Juventa",
            "Kalmara", "Lorenza", "Montara", "Novella",
        ]),
    },
    Attribute {
        key: "star_sign",
        questions: ["What is {}'s star sign?", "Under which zodiac sign was {} born?"],
        statement: "Astrologers would note that {} is a {}.",
        values: Values::Words(&[
            "Aries", "Taurus", "Gemini", "Cancer", "Leo", "Virgo", "Libra", "Scorpio", "Sagittarius",
            "Capricorn", "Aquarius", "Pisces",
        ]),
    },
    Attribute {
        key: "birth_month",
        questions: ["In which month was {} born?", "What month is {}'s birthday in?"],
        statement: "Each year {} celebrates a birthday in {}.",
        values: Values::Words(&[
            "January", "February", "March", "April", "May", "June", "July", "August", "September",
            "October", "November", "December",
        ]),
    },
    Attribute {
        key: "mentor",
        questions: ["Who mentored {}?", "Who was {}'s mentor?"],
        statement: "Early on {} was mentored by {}.",
        values: Values::Words(&[
            "Okafor", "Lindqvist", "Moreau", "Takahashi", "Castellano", "Novak", "Fitzgerald",
            "Abernathy", "Kowalczyk", "Delacroix", "Rasmussen", "Oyelaran", "Vasquez", "Whitfield",
            "Halloran", "Nakamura", "Petrakis", "Sorensen", "Ferreira", "Achterberg",
        ]),
    },
];

const ONSETS: &[&str] = &[
    "b", "br", "c", "d", "dr", "f", "g", "gr", "h", "j", "k", "l", "m", "n", "p", "r", "s", "st", "t",
    "tr", "v", "w", "z", "th",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ei", "ou"];
const CODAS: &[&str] = &["", "n", "r", "l", "s", "x", "m"];

fn syllable(rng: &mut ChaCha8Rng) -> String {
    let mut s = String::new();
    s.push_str(ONSETS.choose(rng).unwrap());
    s.push_str(VOWELS.choose(rng).unwrap());
    s.push_str(CODAS.choose(rng).unwrap());
    s
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn fresh_word(rng: &mut ChaCha8Rng, syllables: usize, used: &mut HashSet<String>) -> String {
    loop {
        let w = capitalize(&(0..syllables).map(|_| syllable(rng)).collect::<String>());
        if used.insert(w.to_lowercase()) {
            return w;
        }
    }
}

/// Maximum QA count per person (two phrasings of every attribute).
pub fn max_qa_per_person() -> usize {
    ATTRIBUTES.len() * 2
}

pub fn generate_synthetic_corpus(n_people: usize, qa_per_person: usize, seed: u64) -> Result<Vec<PersonRecord>> {
    if n_people < 2 {
        return Err(Error::InvalidArgument(format!("n_people must be at least 2, got {n_people}")));
    }
    if qa_per_person < 2 || qa_per_person > max_qa_per_person() {
        return Err(Error::InvalidArgument(format!(
            "qa_per_person must be in [2, {}], got {qa_per_person}",
            max_qa_per_person()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Reserve every answer token so names never collide with gold answers.
    let mut used: HashSet<String> = ATTRIBUTES
        .iter()
        .flat_map(|a| a.values.all())
        .map(|v| v.to_lowercase())
        .collect();

    let mut people = Vec::with_capacity(n_people);
    for _ in 0..n_people {
        let first = fresh_word(&mut rng, 2, &mut used);
        let syllables = 2 + rng.gen_range(0..2);
        let last = fresh_word(&mut rng, syllables, &mut used);
        let name = format!("{first} {last}");
        let values: Vec<String> = ATTRIBUTES.iter().map(|a| a.values.sample(&mut rng)).collect();

        let mut background: Vec<String> = ATTRIBUTES
            .iter()
            .zip(&values)
            .map(|(a, v)| a.statement.replacen("{}", &name, 1).replacen("{}", v, 1))
            .collect();
        background.shuffle(&mut rng);
        let background = background.join(" ");

        let mut order: Vec<usize> = (0..ATTRIBUTES.len()).collect();
        order.shuffle(&mut rng);
        let phrasing: Vec<usize> = (0..ATTRIBUTES.len()).map(|_| rng.gen_range(0..2)).collect();
        let mut qa = Vec::with_capacity(qa_per_person);
        for k in 0..qa_per_person {
            let (attr, form) = if k < order.len() {
                (order[k], phrasing[order[k]])
            } else {
                let a = order[k - order.len()];
                (a, 1 - phrasing[a])
            };
            let question = ATTRIBUTES[attr].questions[form].replace("{}", &name);
            qa.push((question, values[attr].clone()));
        }
        let popularity = rng.gen_range(100..200_000u64);
        people.push(PersonRecord::new(name, background, popularity, qa));
    }
    Ok(people)
}
