//! Bundled synonym lexicon backing the toy candidate oracle.
//!
//! Around two hundred headwords with small, fixed synonym lists. Entries are
//! sorted by headword for binary search; every synonym is a single lowercase
//! alphabetic token, is not a stop word, and differs from its headword.

/// `(headword, synonyms)` pairs, sorted by headword.
pub static LEXICON: &[(&str, &[&str])] = &[
    ("ancient", &["aged", "antique", "venerable"]),
    ("animal", &["creature", "beast", "critter"]),
    ("apple", &["fruit", "pippin"]),
    ("automobile", &["car", "vehicle", "motorcar"]),
    ("ball", &["sphere", "orb", "globe"]),
    ("barn", &["stable", "shed", "outbuilding"]),
    ("basket", &["hamper", "pannier", "creel"]),
    ("beach", &["shore", "coast", "seaside"]),
    ("bell", &["chime", "gong"]),
    ("bench", &["seat", "pew"]),
    ("bicycle", &["bike", "cycle", "tandem"]),
    ("big", &["large", "huge", "giant", "hefty"]),
    ("bird", &["robin", "sparrow", "fowl", "songbird"]),
    ("birds", &["robins", "sparrows", "fowls"]),
    ("black", &["ebony", "sable", "inky"]),
    ("blue", &["azure", "cobalt", "sapphire"]),
    ("boat", &["vessel", "dinghy", "skiff", "craft"]),
    ("boats", &["vessels", "dinghies", "skiffs"]),
    ("book", &["volume", "tome", "paperback"]),
    ("bottle", &["flask", "jug", "vial"]),
    ("bowl", &["dish", "basin"]),
    ("box", &["crate", "carton", "bin"]),
    ("boy", &["lad", "youngster", "schoolboy"]),
    ("branch", &["bough", "limb", "twig"]),
    ("bread", &["loaf", "baguette", "roll"]),
    ("bridge", &["span", "overpass", "viaduct"]),
    ("bright", &["radiant", "gleaming", "shiny", "vivid"]),
    ("brown", &["tan", "chestnut", "bronze"]),
    ("bucket", &["pail", "tub"]),
    ("building", &["structure", "edifice", "tower"]),
    ("bush", &["shrub", "hedge", "thicket"]),
    ("calm", &["serene", "tranquil", "placid"]),
    ("car", &["automobile", "sedan", "roadster", "motorcar"]),
    ("carries", &["totes", "hauls", "bears"]),
    ("cars", &["automobiles", "sedans", "vehicles"]),
    ("cat", &["feline", "kitty", "tomcat", "mouser"]),
    ("catches", &["grabs", "snags", "seizes"]),
    ("cats", &["felines", "kitties", "tomcats"]),
    ("chair", &["seat", "stool", "bench"]),
    ("chases", &["pursues", "follows", "trails"]),
    ("child", &["kid", "toddler", "youngster"]),
    ("circles", &["loops", "orbits", "rings"]),
    ("city", &["town", "metropolis", "municipality"]),
    ("climbs", &["scales", "ascends", "mounts"]),
    ("cloud", &["mist", "haze", "vapor"]),
    ("clouds", &["mists", "hazes", "vapors"]),
    ("coat", &["jacket", "parka", "overcoat"]),
    ("cold", &["chilly", "frosty", "icy"]),
    ("corner", &["nook", "angle", "bend"]),
    ("cottage", &["cabin", "bungalow", "hut"]),
    ("crawls", &["creeps", "slithers", "inches"]),
    ("cup", &["mug", "goblet", "chalice"]),
    ("dark", &["dim", "shadowy", "murky"]),
    ("darts", &["zips", "bolts", "flits"]),
    ("deep", &["profound", "bottomless"]),
    ("digs", &["burrows", "excavates"]),
    ("dives", &["plunges", "submerges"]),
    ("dog", &["hound", "pup", "mutt", "canine"]),
    ("dogs", &["hounds", "pups", "mutts"]),
    ("door", &["gate", "entrance", "portal"]),
    ("drifts", &["floats", "glides", "wanders"]),
    ("drives", &["steers", "cruises", "pilots"]),
    ("dry", &["arid", "parched"]),
    ("eats", &["devours", "nibbles", "munches"]),
    ("empty", &["vacant", "bare", "hollow"]),
    ("farm", &["ranch", "homestead", "farmstead"]),
    ("fast", &["quick", "speedy", "swift", "rapid"]),
    ("feather", &["plume", "quill"]),
    ("feeds", &["grazes", "nibbles"]),
    ("fence", &["railing", "barrier", "paling"]),
    ("fetches", &["retrieves", "collects"]),
    ("field", &["meadow", "pasture", "grassland"]),
    ("fields", &["meadows", "pastures", "grasslands"]),
    ("finds", &["discovers", "locates", "spots"]),
    ("fire", &["flame", "blaze", "ember"]),
    ("fish", &["trout", "salmon", "minnow", "perch"]),
    ("flag", &["banner", "pennant", "standard"]),
    ("flies", &["soars", "flutters", "wings"]),
    ("floats", &["drifts", "bobs", "hovers"]),
    ("flower", &["blossom", "bloom"]),
    ("follows", &["trails", "shadows", "pursues"]),
    ("food", &["meal", "snack", "fare"]),
    ("forest", &["woods", "woodland", "grove"]),
    ("fresh", &["crisp", "new", "clean"]),
    ("fruit", &["berry", "produce"]),
    ("gallops", &["trots", "canters", "sprints"]),
    ("garden", &["yard", "grove", "plot"]),
    ("gardens", &["yards", "groves", "plots"]),
    ("gate", &["door", "portal", "entry"]),
    ("gentle", &["mild", "soft", "tender"]),
    ("girl", &["lass", "maiden", "schoolgirl"]),
    ("glass", &["pane", "tumbler"]),
    ("glides", &["coasts", "slides", "skims"]),
    ("grass", &["turf", "lawn", "sod"]),
    ("gray", &["silver", "ashen", "slate"]),
    ("grazes", &["browses", "feeds"]),
    ("green", &["emerald", "verdant", "jade"]),
    ("ground", &["earth", "soil", "dirt"]),
    ("guards", &["protects", "defends"]),
    ("hangs", &["dangles", "droops", "swings"]),
    ("happy", &["cheerful", "joyful", "glad", "merry"]),
    ("harbor", &["port", "marina", "dock"]),
    ("hat", &["cap", "bonnet", "fedora"]),
    ("hides", &["conceals", "lurks", "crouches"]),
    ("hill", &["slope", "mound", "ridge"]),
    ("hills", &["slopes", "mounds", "ridges"]),
    ("holds", &["grips", "clasps", "clutches"]),
    ("hole", &["pit", "burrow", "hollow"]),
    ("hops", &["skips", "bounds", "jumps"]),
    ("horse", &["stallion", "mare", "pony", "steed"]),
    ("hot", &["scorching", "sweltering", "blazing"]),
    ("house", &["cottage", "dwelling", "residence", "bungalow"]),
    ("houses", &["cottages", "dwellings", "residences"]),
    ("hunts", &["stalks", "tracks", "prowls"]),
    ("jumps", &["leaps", "bounds", "hops", "springs"]),
    ("kitchen", &["galley", "pantry", "scullery"]),
    ("lake", &["pond", "lagoon", "reservoir"]),
    ("lamp", &["lantern", "light"]),
    ("lands", &["alights", "settles", "perches"]),
    ("large", &["big", "huge", "vast", "sizable"]),
    ("lawn", &["turf", "yard"]),
    ("leaf", &["frond", "blade"]),
    ("leans", &["tilts", "slants"]),
    ("leaps", &["vaults", "springs", "bounds"]),
    ("leaves", &["fronds", "foliage"]),
    ("lies", &["sprawls", "reclines", "rests"]),
    ("little", &["tiny", "small", "wee", "petite"]),
    ("lively", &["spirited", "frisky", "animated"]),
    ("log", &["timber", "trunk"]),
    ("looks", &["gazes", "stares", "peers", "glances"]),
    ("loud", &["noisy", "booming", "thunderous"]),
    ("man", &["gentleman", "guy", "fellow", "chap"]),
    ("marches", &["strides", "parades", "stomps"]),
    ("market", &["bazaar", "shop", "store"]),
    ("meadow", &["field", "pasture", "lea"]),
    ("men", &["gentlemen", "guys", "fellows"]),
    ("moon", &["crescent", "orb"]),
    ("mountain", &["peak", "summit", "crag"]),
    ("moves", &["shifts", "stirs", "travels"]),
    ("naps", &["dozes", "snoozes", "rests"]),
    ("narrow", &["slim", "tight", "cramped"]),
    ("nest", &["roost", "den", "burrow"]),
    ("net", &["mesh", "web"]),
    ("new", &["fresh", "modern", "recent"]),
    ("night", &["evening", "dusk", "nightfall"]),
    ("ocean", &["sea", "brine"]),
    ("old", &["ancient", "aged", "elderly", "worn"]),
    ("orange", &["amber", "tangerine"]),
    ("paddles", &["rows", "splashes"]),
    ("paper", &["parchment", "sheet"]),
    ("park", &["green", "commons", "grounds"]),
    ("passes", &["overtakes", "skirts"]),
    ("path", &["trail", "track", "lane"]),
    ("pauses", &["halts", "hesitates", "lingers"]),
    ("pecks", &["nibbles", "taps"]),
    ("people", &["folks", "crowd", "persons"]),
    ("perches", &["roosts", "settles", "alights"]),
    ("person", &["individual", "figure", "soul"]),
    ("plant", &["sapling", "sprout", "seedling"]),
    ("plays", &["frolics", "romps", "gambols"]),
    ("points", &["aims", "gestures"]),
    ("pole", &["post", "mast", "rod"]),
    ("pond", &["pool", "lagoon", "basin"]),
    ("porch", &["veranda", "stoop", "deck"]),
    ("pretty", &["lovely", "charming", "attractive"]),
    ("prowls", &["stalks", "lurks", "roams"]),
    ("puddle", &["pool", "splash"]),
    ("pulls", &["tugs", "drags", "hauls"]),
    ("pushes", &["shoves", "presses", "nudges"]),
    ("quiet", &["silent", "hushed", "peaceful"]),
    ("races", &["speeds", "dashes", "zooms"]),
    ("rain", &["drizzle", "shower", "downpour"]),
    ("reaches", &["extends", "stretches"]),
    ("red", &["crimson", "scarlet", "ruby"]),
    ("rests", &["relaxes", "reposes", "lounges"]),
    ("rides", &["cruises", "travels"]),
    ("river", &["stream", "creek", "brook"]),
    ("road", &["street", "highway", "route"]),
    ("roams", &["wanders", "rambles", "drifts"]),
    ("rock", &["stone", "boulder", "pebble"]),
    ("rolls", &["tumbles", "spins", "revolves"]),
    ("roof", &["rooftop", "awning", "canopy"]),
    ("room", &["chamber", "parlor", "hall"]),
    ("rope", &["cord", "line", "cable"]),
    ("rows", &["paddles", "sculls"]),
    ("runs", &["sprints", "dashes", "jogs", "races"]),
    ("sail", &["canvas", "sheet"]),
    ("sails", &["cruises", "voyages", "navigates"]),
    ("sand", &["grit", "gravel", "dust"]),
    ("sea", &["ocean", "main"]),
    ("sharp", &["keen", "pointed", "crisp"]),
    ("ship", &["vessel", "liner", "freighter"]),
    ("shop", &["store", "boutique", "stall"]),
    ("short", &["brief", "stubby", "compact"]),
    ("sign", &["placard", "notice", "marker"]),
    ("sings", &["chirps", "warbles", "trills"]),
    ("sits", &["rests", "perches", "settles"]),
    ("sky", &["heavens", "firmament", "air"]),
    ("sleeps", &["naps", "dozes", "slumbers"]),
    ("slow", &["sluggish", "unhurried", "leisurely"]),
    ("small", &["tiny", "little", "petite", "modest"]),
    ("smooth", &["sleek", "polished", "even"]),
    ("sniffs", &["smells", "whiffs", "noses"]),
    ("snow", &["frost", "powder", "sleet"]),
    ("soft", &["gentle", "tender", "plush"]),
    ("splashes", &["sprays", "spatters", "sloshes"]),
    ("squirrel", &["chipmunk", "rodent"]),
    ("stands", &["looms", "poses", "rises"]),
    ("stares", &["gazes", "glares", "peers"]),
    ("stick", &["twig", "branch", "rod"]),
    ("stone", &["rock", "pebble", "slab"]),
    ("stops", &["halts", "pauses", "stalls"]),
    ("street", &["road", "avenue", "lane", "boulevard"]),
    ("streets", &["roads", "avenues", "lanes"]),
    ("stretches", &["extends", "spans", "reaches"]),
    ("strolls", &["saunters", "ambles", "promenades"]),
    ("strong", &["sturdy", "powerful", "robust"]),
    ("sun", &["sunshine", "sunlight", "daylight"]),
    ("sunny", &["bright", "radiant", "clear"]),
    ("swims", &["paddles", "glides", "wades"]),
    ("swings", &["sways", "rocks", "pivots"]),
    ("table", &["desk", "counter", "stand"]),
    ("tall", &["towering", "lofty", "high"]),
    ("toy", &["plaything", "trinket", "bauble"]),
    ("tree", &["oak", "sapling", "elm", "pine"]),
    ("trees", &["oaks", "saplings", "elms", "pines"]),
    ("trots", &["jogs", "canters", "ambles"]),
    ("truck", &["lorry", "pickup", "hauler"]),
    ("turns", &["rotates", "pivots", "twists"]),
    ("village", &["hamlet", "township", "settlement"]),
    ("wagon", &["cart", "buggy", "carriage"]),
    ("waits", &["lingers", "loiters", "pauses"]),
    ("walks", &["strolls", "ambles", "paces", "wanders"]),
    ("wall", &["barrier", "partition", "rampart"]),
    ("wanders", &["roams", "rambles", "meanders"]),
    ("warm", &["cozy", "toasty", "balmy"]),
    ("watches", &["observes", "views", "eyes"]),
    ("water", &["waves", "surf", "tide"]),
    ("wears", &["sports", "dons"]),
    ("wet", &["damp", "soggy", "moist"]),
    ("whistles", &["trills", "pipes"]),
    ("white", &["ivory", "pale", "snowy"]),
    ("wide", &["broad", "vast", "expansive"]),
    ("wind", &["breeze", "gust", "draft"]),
    ("window", &["pane", "casement", "porthole"]),
    ("wing", &["pinion", "flank"]),
    ("woman", &["lady", "gal", "dame", "matron"]),
    ("women", &["ladies", "gals", "dames"]),
    ("wooden", &["timber", "oaken", "plank"]),
    ("worm", &["grub", "larva"]),
    ("yard", &["lawn", "garden", "courtyard"]),
    ("yellow", &["gold", "amber", "lemon"]),
    ("young", &["youthful", "juvenile", "fledgling"]),
];

/// Synonyms for a word, or an empty slice when the word has no entry.
pub fn synonyms(word: &str) -> &'static [&'static str] {
    match LEXICON.binary_search_by(|(head, _)| head.cmp(&word)) {
        Ok(i) => LEXICON[i].1,
        Err(_) => &[],
    }
}
