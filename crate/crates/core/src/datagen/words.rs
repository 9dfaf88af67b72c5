pub(crate) const CITIES: &[&str] = &[
    "austin",
    "boston",
    "denver",
    "phoenix",
    "seattle",
    "portland",
    "dallas",
    "houston",
    "miami",
    "atlanta",
    "chicago",
    "detroit",
    "tampa",
    "orlando",
    "tucson",
    "fresno",
    "omaha",
    "tulsa",
    "reno",
    "boise",
    "salem",
    "dayton",
    "akron",
    "albany",
    "newark",
    "camden",
    "trenton",
    "hartford",
    "raleigh",
    "durham",
    "savannah",
    "macon",
    "mobile",
    "laredo",
    "eugene",
    "spokane",
    "tacoma",
    "ogden",
    "provo",
    "helena",
    "fargo",
    "duluth",
    "madison",
    "peoria",
    "joliet",
    "toledo",
    "canton",
    "erie",
    "scranton",
    "lancaster",
];

pub(crate) const DESCRIPTORS: &[&str] = &[
    "family", "golden", "silver", "royal", "happy", "sunny", "blue", "green", "red", "north", "south", "east", "west",
    "central", "city", "village", "coastal", "mountain", "river", "lake", "valley", "prairie", "urban", "little",
    "big", "grand", "first", "united", "american", "pacific", "atlantic", "liberty", "eagle", "pioneer", "summit",
    "harbor", "maple", "oak", "pine", "cedar", "willow", "sunset", "sunrise", "star", "crown", "diamond", "lucky",
    "fresh", "modern", "classic", "express", "premier", "quality", "budget", "super", "mega", "smart", "rapid", "true",
    "prime",
];

pub(crate) const NOUNS: &[&str] = &[
    "market",
    "grocery",
    "pharmacy",
    "coffee",
    "bakery",
    "pizza",
    "burger",
    "taco",
    "sushi",
    "noodle",
    "grill",
    "diner",
    "cafe",
    "deli",
    "bistro",
    "tavern",
    "brewery",
    "books",
    "hardware",
    "lumber",
    "garden",
    "florist",
    "pets",
    "toys",
    "sports",
    "outdoor",
    "fitness",
    "yoga",
    "salon",
    "barber",
    "spa",
    "dental",
    "vision",
    "clinic",
    "auto",
    "tire",
    "motors",
    "fuel",
    "gas",
    "car wash",
    "laundry",
    "cleaners",
    "tailor",
    "jewelers",
    "furniture",
    "mattress",
    "electronics",
    "wireless",
    "computers",
    "music",
    "video",
    "games",
    "shoes",
    "apparel",
    "boutique",
    "outlet",
    "liquor",
    "wine",
    "smoke",
    "donuts",
    "bagels",
    "creamery",
    "juice",
    "tea",
    "kitchen",
    "steakhouse",
    "seafood",
    "bbq",
    "wings",
    "pho",
    "ramen",
    "thai",
    "curry",
    "cantina",
    "pub",
    "lounge",
    "cinema",
    "bowling",
    "golf",
    "marina",
    "hotel",
    "inn",
    "motel",
    "parking",
    "storage",
    "movers",
    "plumbing",
    "electric",
    "roofing",
    "glass",
    "printing",
    "shipping",
    "office",
    "supply",
    "travel",
    "airways",
    "transit",
    "cab",
    "fitness club",
    "pool",
];

pub(crate) const KINDS: &[&str] = &[
    "shop",
    "store",
    "house",
    "center",
    "co",
    "company",
    "express",
    "depot",
    "mart",
    "world",
    "palace",
    "place",
    "corner",
    "station",
    "hub",
    "factory",
    "works",
    "warehouse",
    "emporium",
    "bar",
    "kitchen",
    "studio",
    "lab",
    "point",
];

pub(crate) const LEGAL: &[&str] = &["inc", "llc", "corp", "ltd"];

pub(crate) const AGGREGATORS: &[&str] = &["sq *", "tst* ", "py *", "sp *", "pp*", "ckc* ", "dd *", "sqc* "];
