//! Writes a seeded corpus of short children's stories to `fixtures/corpus/`.
//!
//!     cargo run -p exlab --example gen_fixture_corpus -- [out_dir] [seed]

use std::path::PathBuf;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const NAMES: &[&str] = &[
    "Lily", "Tom", "Mia", "Ben", "Anna", "Sam", "Lucy", "Max", "Ella", "Jack", "Rosie", "Finn", "Molly", "Leo",
];
const ROYALS: &[&str] = &["princess", "prince", "queen", "king", "girl", "boy", "old woman", "farmer"];
const ANIMALS: &[&str] = &["cat", "dog", "rabbit", "bird", "fox", "bear", "duck", "mouse", "frog", "owl"];
const PLACES: &[&str] = &[
    "the forest", "the castle", "the garden", "the village", "the river", "the hill", "the meadow", "the lake",
];
const THINGS: &[&str] = &[
    "ball", "kite", "box", "hat", "cake", "flower", "book", "shell", "key", "apple", "boat", "star",
];
const ADJS: &[&str] = &[
    "big", "small", "red", "blue", "shiny", "old", "pretty", "happy", "sad", "kind", "brave", "quiet", "funny",
];
const FEELINGS: &[&str] = &["happy", "sad", "scared", "excited", "tired", "proud", "surprised", "sorry"];
const VERBS: &[&str] = &["found", "saw", "lost", "wanted", "made", "shared", "carried", "painted", "hid"];
const MOVES: &[&str] = &["ran", "walked", "jumped", "hopped", "flew", "swam", "danced", "climbed"];

struct Story<'a> {
    rng: &'a mut ChaCha8Rng,
    hero: &'static str,
    role: &'static str,
    friend: &'static str,
    animal: &'static str,
    thing: &'static str,
    place: &'static str,
}

impl Story<'_> {
    fn pick(&mut self, xs: &[&'static str]) -> &'static str {
        xs.choose(self.rng).expect("non-empty word list")
    }

    fn sentence(&mut self) -> String {
        let (hero, friend, animal, thing, place) = (self.hero, self.friend, self.animal, self.thing, self.place);
        let adj = self.pick(ADJS);
        let feel = self.pick(FEELINGS);
        let verb = self.pick(VERBS);
        let mv = self.pick(MOVES);
        let other = self.pick(THINGS);
        let where_ = self.pick(PLACES);
        match self.rng.random_range(0..14) {
            0 => format!("One day, {hero} {verb} a {adj} {thing} near {place}."),
            1 => format!("{hero} {mv} to {where_} with the {animal}."),
            2 => format!("The {animal} was very {feel}."),
            3 => format!("\"Look at my {adj} {other}!\" said {friend}."),
            4 => format!("{hero} felt {feel} and {mv} home."),
            5 => format!("{friend} said, \"Can I play with your {thing}?\""),
            6 => format!("\"Yes, you can,\" said {hero}. \"Let us share.\""),
            7 => format!("They {mv} and played all day long."),
            8 => format!("Then the {animal} {verb} the {thing} and {mv} away."),
            9 => format!("{hero} and {friend} looked for the {thing} in {where_}."),
            10 => format!("The sun was {adj} and the sky was blue."),
            11 => format!("{hero} was a {adj} {} who liked to help.", self.role),
            12 => format!("\"Thank you,\" said the {animal}. \"You are very {adj}.\""),
            _ => format!("At last they found the {thing}, and everyone was {feel}."),
        }
    }

    fn tell(&mut self) -> String {
        let opening = format!(
            "Once upon a time there was a little {} who lived near {}. The {} was called {}.",
            self.role, self.place, self.role, self.hero
        );
        let mut paras = vec![opening];
        let n_paras = self.rng.random_range(2..6);
        for _ in 0..n_paras {
            let n = self.rng.random_range(3..8);
            let para: Vec<String> = (0..n).map(|_| self.sentence()).collect();
            paras.push(para.join(" "));
        }
        paras.push(format!(
            "From that day on, {} and the {} were best friends. The end.",
            self.hero, self.animal
        ));
        paras.join("\n\n")
    }
}

fn main() {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "fixtures/corpus".into()));
    let seed: u64 = args.next().map_or(2024, |s| s.parse().expect("seed must be an integer"));
    let files = 10;
    let stories_per_file = 75;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    std::fs::create_dir_all(&out).expect("create output directory");
    for f in 0..files {
        let mut body = Vec::new();
        for _ in 0..stories_per_file {
            let hero = *NAMES.choose(&mut rng).unwrap();
            let friend = *NAMES.iter().filter(|n| **n != hero).collect::<Vec<_>>().choose(&mut rng).unwrap();
            let mut story = Story {
                hero,
                role: ROYALS.choose(&mut rng).unwrap(),
                friend,
                animal: ANIMALS.choose(&mut rng).unwrap(),
                thing: THINGS.choose(&mut rng).unwrap(),
                place: PLACES.choose(&mut rng).unwrap(),
                rng: &mut rng,
            };
            body.push(story.tell());
        }
        let text = format!(
            "Fixture stories, volume {n}\r\nGenerated with seed {seed}.\r\n\r\n*** START OF FIXTURE STORIES {n} ***\r\n\r\n{}\r\n\r\n\r\n\r\n*** END OF FIXTURE STORIES {n} ***\r\nNo rights reserved.\r\n",
            body.join("\n\n\n\n").replace('\n', "\r\n"),
            n = f + 1
        );
        let path = out.join(format!("stories_{:02}.txt", f + 1));
        std::fs::write(&path, text).expect("write story file");
        println!("{}", path.display());
    }
}
