// Vocabulary for human-readable annotator ids such as `calm-ligand-106`.
// Neutral words only, so an id never hints at who is behind it.

pub const ADJECTIVES: &[&str] = &[
    "amber", "ancient", "autumn", "bold", "brave", "breezy", "bright", "brisk", "calm", "candid",
    "clever", "cosmic", "crisp", "curious", "dapper", "dawn", "deft", "eager", "early", "earnest",
    "fair", "fancy", "fluent", "frosty", "gentle", "gifted", "glad", "golden", "grand", "hazel",
    "honest", "humble", "ivory", "jolly", "keen", "kind", "lively", "lucid", "lucky", "mellow",
    "merry", "mighty", "misty", "modest", "nimble", "noble", "olive", "patient", "plucky", "polite",
    "proud", "quiet", "rapid", "ready", "rosy", "rustic", "sage", "serene", "sharp", "silent",
    "silver", "sleek", "snowy", "solid", "steady", "sturdy", "sunny", "swift", "tidy", "tranquil",
    "vivid", "warm", "wise", "witty", "young", "zesty",
];

pub const NOUNS: &[&str] = &[
    "acorn", "anchor", "atlas", "badger", "beacon", "birch", "bison", "brook", "canyon", "cedar",
    "comet", "coral", "crane", "delta", "dune", "eagle", "ember", "falcon", "fern", "fjord",
    "galaxy", "glacier", "harbor", "hazel", "heron", "island", "jasper", "kestrel", "lagoon",
    "lantern", "ligand", "lotus", "maple", "meadow", "meteor", "nebula", "nectar", "oasis", "orbit",
    "otter", "pebble", "pine", "planet", "prairie", "quartz", "raven", "reef", "ridge", "river",
    "sable", "sequoia", "sparrow", "spruce", "summit", "thistle", "tundra", "valley", "vertex",
    "walnut", "willow", "zephyr",
];
