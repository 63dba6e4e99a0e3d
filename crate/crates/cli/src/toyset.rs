//! Bundled synthetic image-text dataset for desk-scale runs.
//!
//! 32x32 color images over eight object classes, each with a distinctive
//! background color and blocky shape layout plus per-instance jitter and
//! noise; captions follow a fixed template whose content words are all
//! covered by the toy synonym lexicon, so every instance is poisonable in
//! both modalities. Pixels are generated on the 8-bit grid, making PNG
//! round trips exact.

use cmbd_core::dataset::{Dataset, PairedInstance};
use cmbd_core::image::ImageSample;
use cmbd_core::rng::DetRng;
use cmbd_core::{LabelVector, TextSample};

pub const TOY_CLASSES: [&str; 8] = [
    "cat", "dog", "car", "boat", "tree", "house", "bird", "fish",
];
pub const TOY_IMAGE_SIZE: usize = 32;
pub const TOY_DEFAULT_SIZE: usize = 500;

const ADJECTIVES: [&str; 10] = [
    "small", "big", "little", "old", "young", "happy", "quiet", "calm", "bright", "gentle",
];
const VERBS: [&str; 10] = [
    "sits", "runs", "sleeps", "waits", "rests", "stands", "moves", "jumps", "turns", "looks",
];
const SCENES: [&str; 12] = [
    "water", "garden", "field", "park", "road", "harbor", "meadow", "yard", "hill", "lake",
    "river", "street",
];
const PREPOSITIONS: [&str; 3] = ["near", "by", "at"];

struct ClassLook {
    background: [i32; 3],
    accent: [i32; 3],
    /// `(top, left, height, width)` rectangles drawn in the accent color.
    shapes: [[usize; 4]; 2],
}

const LOOKS: [ClassLook; 8] = [
    ClassLook {
        background: [200, 160, 120],
        accent: [90, 60, 40],
        shapes: [[8, 8, 12, 16], [4, 9, 4, 4]],
    },
    ClassLook {
        background: [150, 110, 70],
        accent: [60, 40, 20],
        shapes: [[10, 6, 14, 20], [6, 22, 6, 6]],
    },
    ClassLook {
        background: [180, 40, 40],
        accent: [20, 20, 30],
        shapes: [[14, 4, 10, 24], [22, 8, 6, 6]],
    },
    ClassLook {
        background: [40, 90, 180],
        accent: [120, 70, 30],
        shapes: [[18, 6, 8, 20], [6, 15, 12, 2]],
    },
    ClassLook {
        background: [40, 140, 60],
        accent: [20, 90, 30],
        shapes: [[6, 10, 14, 12], [20, 14, 8, 4]],
    },
    ClassLook {
        background: [170, 170, 170],
        accent: [140, 80, 60],
        shapes: [[12, 8, 14, 16], [8, 10, 4, 12]],
    },
    ClassLook {
        background: [220, 200, 60],
        accent: [240, 240, 240],
        shapes: [[10, 12, 8, 8], [12, 6, 4, 8]],
    },
    ClassLook {
        background: [60, 180, 180],
        accent: [230, 120, 40],
        shapes: [[12, 8, 8, 14], [14, 22, 4, 6]],
    },
];

fn class_image(class: usize, rng: &mut DetRng) -> ImageSample {
    let s = TOY_IMAGE_SIZE;
    let look = &LOOKS[class];
    let mut px = vec![[0i32; 3]; s * s];
    for p in px.iter_mut() {
        *p = look.background;
    }
    for shape in &look.shapes {
        let [top, left, h, w] = *shape;
        let jy = rng.index(5) as i32 - 2;
        let jx = rng.index(5) as i32 - 2;
        let top = (top as i32 + jy).clamp(0, (s - h) as i32) as usize;
        let left = (left as i32 + jx).clamp(0, (s - w) as i32) as usize;
        for y in top..top + h {
            for x in left..left + w {
                px[y * s + x] = look.accent;
            }
        }
    }
    let mut data = vec![0.0; 3 * s * s];
    for c in 0..3 {
        for (i, p) in px.iter().enumerate() {
            let noise = rng.index(21) as i32 - 10;
            data[c * s * s + i] = (p[c] + noise).clamp(0, 255) as f64 / 255.0;
        }
    }
    ImageSample::from_data(s, s, data).expect("generated pixels are in range")
}

fn pick<'a>(words: &[&'a str], rng: &mut DetRng) -> &'a str {
    words[rng.index(words.len())]
}

fn class_caption(class: usize, rng: &mut DetRng) -> TextSample {
    let raw = format!(
        "a {} {} {} {} the {} .",
        pick(&ADJECTIVES, rng),
        TOY_CLASSES[class],
        pick(&VERBS, rng),
        pick(&PREPOSITIONS, rng),
        pick(&SCENES, rng),
    );
    TextSample::new(&raw).expect("template captions tokenize")
}

/// Generates `n` paired instances; classes cycle so the set stays balanced,
/// and roughly a quarter of the instances carry a second label.
pub fn generate_toy_dataset(n: usize, seed: u64) -> Dataset {
    let categories = TOY_CLASSES.len();
    let mut instances = Vec::with_capacity(n);
    for i in 0..n {
        let id = format!("toy-{i:04}");
        let mut rng = DetRng::derive(seed, &id);
        let class = i % categories;
        let image = class_image(class, &mut rng);
        let text = class_caption(class, &mut rng);
        let mut labels = vec![class];
        if rng.index(4) == 0 {
            let other = (class + 1 + rng.index(categories - 1)) % categories;
            labels.push(other);
        }
        let label = LabelVector::from_indices(categories, &labels).expect("labels in range");
        instances.push(PairedInstance {
            id,
            image,
            text,
            label,
        });
    }
    Dataset {
        instances,
        categories,
        split: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use cmbd_core::surrogate::synonyms;
    use cmbd_core::surrogate::is_stop_token;

    #[test]
    fn generation_is_deterministic() {
        let a = generate_toy_dataset(40, 11);
        let b = generate_toy_dataset(40, 11);
        assert_eq!(a, b);
        let c = generate_toy_dataset(40, 12);
        assert_ne!(a, c);
    }

    #[test]
    fn pixels_sit_on_the_8_bit_grid() {
        let ds = generate_toy_dataset(8, 11);
        for inst in &ds.instances {
            for &v in inst.image.data() {
                let scaled = v * 255.0;
                assert!((scaled - scaled.round()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn labels_cover_primary_class_and_sometimes_a_second() {
        let ds = generate_toy_dataset(400, 11);
        let mut seconds = 0;
        for (i, inst) in ds.instances.iter().enumerate() {
            assert!(inst.label.is_set(i % 8));
            let count = inst.label.count();
            assert!(count == 1 || count == 2);
            if count == 2 {
                seconds += 1;
            }
        }
        let frac = seconds as f64 / 400.0;
        assert!((0.15..=0.35).contains(&frac), "secondary fraction {frac}");
    }

    #[test]
    fn every_caption_is_fully_poisonable() {
        let ds = generate_toy_dataset(64, 11);
        for inst in &ds.instances {
            let substitutable = inst
                .text
                .tokens()
                .iter()
                .filter(|t| !is_stop_token(t))
                .collect::<Vec<_>>();
            assert_eq!(substitutable.len(), 4, "caption {:?}", inst.text.raw());
            for token in substitutable {
                assert!(
                    !synonyms(token).is_empty(),
                    "{token:?} has no synonyms in {:?}",
                    inst.text.raw()
                );
            }
        }
    }

    #[test]
    fn dataset_validates_and_classes_look_distinct() {
        let ds = generate_toy_dataset(16, 11);
        ds.validate().unwrap();
        let mean = |i: usize| ds.instances[i].image.channel_means();
        for a in 0..8 {
            for b in (a + 1)..8 {
                let ma = mean(a);
                let mb = mean(b);
                let dist: f64 = (0..3).map(|c| (ma[c] - mb[c]).abs()).sum();
                assert!(dist > 0.05, "classes {a} and {b} look alike");
            }
        }
    }
}
