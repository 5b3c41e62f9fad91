//! Deterministic captioned-shapes dataset.
//!
//! Every scene is one colored shape (with a size and position) on a
//! plain background; the caption is a fixed template whose tokens fully
//! determine the rendered image. Train and test draw from disjoint
//! scene pools, and the test split always contains at least one pair of
//! scenes differing only in color (for attention-swap diagnostics).
//!
//! On-disk layout: `<root>/vocab.txt`, `<root>/{train,test}/<i>.ppm`
//! plus `<root>/{train,test}/<i>.txt` (space-separated caption tokens,
//! one line, trailing newline).

use crate::error::{Error, Result};
use crate::raster::RawImage;
use crate::rng::{self, stream_rng};
use crate::vocab::Vocabulary;
use rand::seq::SliceRandom;
use rand::Rng;
use std::fs;
use std::path::{Path, PathBuf};

macro_rules! attribute_enum {
    ($name:ident { $($variant:ident => $token:expr),+ $(,)? }) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn token(self) -> &'static str {
                match self {
                    $($name::$variant => $token),+
                }
            }

            pub fn from_token(tok: &str) -> Result<Self> {
                match tok {
                    $($token => Ok($name::$variant),)+
                    _ => Err(Error::Vocab(format!(
                        concat!("unknown ", stringify!($name), " token {:?}"), tok
                    ))),
                }
            }
        }
    };
}

attribute_enum!(Shape {
    Circle => "circle",
    Square => "square",
    Triangle => "triangle",
    Cross => "cross",
});

attribute_enum!(Color {
    Red => "red",
    Green => "green",
    Blue => "blue",
    Yellow => "yellow",
    White => "white",
});

attribute_enum!(SizeClass {
    Small => "small",
    Big => "big",
});

attribute_enum!(Position {
    TopLeft => "top-left",
    TopRight => "top-right",
    BottomLeft => "bottom-left",
    BottomRight => "bottom-right",
    Center => "center",
});

attribute_enum!(Background {
    Black => "black",
    Gray => "gray",
});

impl Color {
    pub fn rgb(self) -> [f64; 3] {
        match self {
            Color::Red => [1.0, 0.0, 0.0],
            Color::Green => [0.0, 1.0, 0.0],
            Color::Blue => [0.0, 0.0, 1.0],
            Color::Yellow => [1.0, 1.0, 0.0],
            Color::White => [1.0, 1.0, 1.0],
        }
    }
}

impl Background {
    pub fn rgb(self) -> [f64; 3] {
        match self {
            Background::Black => [0.0, 0.0, 0.0],
            Background::Gray => [0.5, 0.5, 0.5],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SceneSpec {
    pub shape: Shape,
    pub color: Color,
    pub size: SizeClass,
    pub position: Position,
    pub background: Background,
}

impl SceneSpec {
    /// Every scene in a fixed enumeration order.
    pub fn enumerate_all() -> Vec<SceneSpec> {
        let mut out = Vec::new();
        for &shape in Shape::ALL {
            for &color in Color::ALL {
                for &size in SizeClass::ALL {
                    for &position in Position::ALL {
                        for &background in Background::ALL {
                            out.push(SceneSpec { shape, color, size, position, background });
                        }
                    }
                }
            }
        }
        out
    }

    /// "a <size> <color> <shape> at <position> on a <background> background"
    pub fn caption(&self) -> Vec<String> {
        vec![
            "a".into(),
            self.size.token().into(),
            self.color.token().into(),
            self.shape.token().into(),
            "at".into(),
            self.position.token().into(),
            "on".into(),
            "a".into(),
            self.background.token().into(),
            "background".into(),
        ]
    }

    /// Invert `caption`.
    pub fn parse(tokens: &[String]) -> Result<SceneSpec> {
        let words: Vec<&str> = tokens.iter().map(String::as_str).collect();
        if words.len() != 10
            || words[0] != "a"
            || words[4] != "at"
            || words[6] != "on"
            || words[7] != "a"
            || words[9] != "background"
        {
            return Err(Error::Contract(format!("caption does not match template: {words:?}")));
        }
        Ok(SceneSpec {
            size: SizeClass::from_token(words[1])?,
            color: Color::from_token(words[2])?,
            shape: Shape::from_token(words[3])?,
            position: Position::from_token(words[5])?,
            background: Background::from_token(words[8])?,
        })
    }

    fn center(&self, side: usize) -> (f64, f64) {
        let s = side as f64;
        let (fy, fx) = match self.position {
            Position::TopLeft => (0.25, 0.25),
            Position::TopRight => (0.25, 0.75),
            Position::BottomLeft => (0.75, 0.25),
            Position::BottomRight => (0.75, 0.75),
            Position::Center => (0.5, 0.5),
        };
        (fy * s, fx * s)
    }

    fn radius(&self, side: usize) -> f64 {
        let s = side as f64;
        match self.size {
            SizeClass::Small => 0.12 * s,
            SizeClass::Big => 0.20 * s,
        }
    }

    fn covers(&self, y: f64, x: f64, side: usize) -> bool {
        let (cy, cx) = self.center(side);
        let r = self.radius(side);
        let (dy, dx) = (y - cy, x - cx);
        match self.shape {
            Shape::Circle => dy * dy + dx * dx <= r * r,
            Shape::Square => dy.abs() <= r && dx.abs() <= r,
            // upward triangle: apex at cy-r, base at cy+r
            Shape::Triangle => {
                if dy < -r || dy > r {
                    return false;
                }
                let half_width = r * (dy + r) / (2.0 * r);
                dx.abs() <= half_width
            }
            Shape::Cross => {
                (dx.abs() <= r / 3.0 && dy.abs() <= r) || (dy.abs() <= r / 3.0 && dx.abs() <= r)
            }
        }
    }

    /// Binary mask of the shape's pixels at the given side.
    pub fn mask(&self, side: usize) -> Vec<bool> {
        let mut out = vec![false; side * side];
        for py in 0..side {
            for px in 0..side {
                out[py * side + px] = self.covers(py as f64 + 0.5, px as f64 + 0.5, side);
            }
        }
        out
    }
}

/// Deterministic rasterization: shape pixels take the scene color, the
/// rest take the background.
pub fn render(spec: &SceneSpec, side: usize) -> Result<RawImage> {
    if side < 16 {
        return Err(Error::Contract(format!("render side must be >= 16, got {side}")));
    }
    let mut img = RawImage::filled(side, spec.background.rgb());
    let rgb = spec.color.rgb();
    for (p, covered) in spec.mask(side).into_iter().enumerate() {
        if covered {
            img.set_pixel(p / side, p % side, rgb);
        }
    }
    Ok(img)
}

/// The fixed vocabulary: template words plus every attribute token.
pub fn build_vocabulary() -> Vocabulary {
    let mut tokens: Vec<&str> = vec!["a", "at", "on", "background"];
    tokens.extend(SizeClass::ALL.iter().map(|v| v.token()));
    tokens.extend(Color::ALL.iter().map(|v| v.token()));
    tokens.extend(Shape::ALL.iter().map(|v| v.token()));
    tokens.extend(Position::ALL.iter().map(|v| v.token()));
    tokens.extend(Background::ALL.iter().map(|v| v.token()));
    Vocabulary::from_tokens(tokens).expect("fixed vocabulary is valid")
}

#[derive(Clone, Debug)]
pub struct DatasetSummary {
    pub root: PathBuf,
    pub n_train: usize,
    pub n_test: usize,
    pub train_pool: usize,
    pub test_pool: usize,
}

/// Sample disjoint train/test scene pools, draw the requested number of
/// items from each, and write the on-disk layout. Byte-deterministic in
/// (seed, sizes, side).
pub fn generate_dataset(
    seed: u64,
    n_train: usize,
    n_test: usize,
    side: usize,
    root: &Path,
) -> Result<DatasetSummary> {
    if n_train < 1 || n_test < 1 {
        return Err(Error::Contract("need at least one item per split".into()));
    }
    let mut rng = stream_rng(seed, rng::stream::DATASET, 0);
    let mut all = SceneSpec::enumerate_all();
    all.shuffle(&mut rng);

    // reserve a test pool proportional to the requested split, at least 2
    // so it can host a color pair
    let total = all.len();
    let want = (total * n_test + (n_train + n_test) / 2) / (n_train + n_test);
    let test_pool_size = want.clamp(2, total - 1);
    let (test_pool, train_pool) = all.split_at(test_pool_size);
    let mut test_pool = test_pool.to_vec();
    let mut train_pool = train_pool.to_vec();
    ensure_color_pair(&mut test_pool, &mut train_pool);

    let draw = |pool: &[SceneSpec], n: usize, rng: &mut rand_chacha::ChaCha8Rng| {
        (0..n).map(|_| pool[rng.gen_range(0..pool.len())]).collect::<Vec<_>>()
    };
    let train_items = draw(&train_pool, n_train, &mut rng);
    let mut test_items = draw(&test_pool, n_test, &mut rng);
    // pin the guaranteed color pair into the test split
    let (a, b) = find_color_pair(&test_pool).expect("pool contains a color pair");
    test_items[0] = a;
    if n_test > 1 {
        test_items[1] = b;
    }

    let vocab = build_vocabulary();
    fs::create_dir_all(root)?;
    vocab.save(&root.join("vocab.txt"))?;
    write_split(&root.join("train"), &train_items, side)?;
    write_split(&root.join("test"), &test_items, side)?;
    Ok(DatasetSummary {
        root: root.to_path_buf(),
        n_train,
        n_test,
        train_pool: train_pool.len(),
        test_pool: test_pool.len(),
    })
}

fn write_split(dir: &Path, items: &[SceneSpec], side: usize) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, spec) in items.iter().enumerate() {
        render(spec, side)?.write_ppm(&dir.join(format!("{i}.ppm")))?;
        let caption = spec.caption().join(" ");
        fs::write(dir.join(format!("{i}.txt")), format!("{caption}\n"))?;
    }
    Ok(())
}

fn color_siblings(a: &SceneSpec, b: &SceneSpec) -> bool {
    a.color != b.color
        && a.shape == b.shape
        && a.size == b.size
        && a.position == b.position
        && a.background == b.background
}

fn find_color_pair(pool: &[SceneSpec]) -> Option<(SceneSpec, SceneSpec)> {
    for (i, a) in pool.iter().enumerate() {
        for b in &pool[i + 1..] {
            if color_siblings(a, b) {
                return Some((*a, *b));
            }
        }
    }
    None
}

/// Make sure the test pool holds two scenes differing only in color,
/// trading one scene with the train pool when needed.
fn ensure_color_pair(test_pool: &mut [SceneSpec], train_pool: &mut Vec<SceneSpec>) {
    if find_color_pair(test_pool).is_some() {
        return;
    }
    for i in 0..test_pool.len() {
        if let Some(j) = train_pool
            .iter()
            .position(|cand| color_siblings(&test_pool[i], cand))
        {
            let sibling = train_pool.remove(j);
            // trade away a scene that is not the anchor
            let out_idx = if i == 0 { test_pool.len() - 1 } else { 0 };
            let traded = test_pool[out_idx];
            test_pool[out_idx] = sibling;
            train_pool.push(traded);
            return;
        }
    }
    unreachable!("every scene has a color sibling in the full enumeration");
}

/// One loaded split.
pub struct Dataset {
    pub images: Vec<RawImage>,
    pub captions: Vec<Vec<usize>>,
    pub caption_tokens: Vec<Vec<String>>,
    pub vocab: Vocabulary,
    pub side: usize,
}

pub fn load_split(root: &Path, split: &str) -> Result<Dataset> {
    let vocab = Vocabulary::load(&root.join("vocab.txt"))?;
    let dir = root.join(split);
    let mut images = Vec::new();
    let mut captions = Vec::new();
    let mut caption_tokens = Vec::new();
    let mut idx = 0;
    loop {
        let ppm = dir.join(format!("{idx}.ppm"));
        let txt = dir.join(format!("{idx}.txt"));
        if !ppm.exists() {
            break;
        }
        let img = RawImage::read_ppm(&ppm)?;
        let line = fs::read_to_string(&txt)?;
        let tokens: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        captions.push(vocab.encode(&tokens)?);
        caption_tokens.push(tokens);
        images.push(img);
        idx += 1;
    }
    if images.is_empty() {
        return Err(Error::Contract(format!(
            "no items found under {}",
            dir.display()
        )));
    }
    let side = images[0].side;
    if images.iter().any(|i| i.side != side) {
        return Err(Error::Contract("split contains mixed image sides".into()));
    }
    Ok(Dataset { images, captions, caption_tokens, vocab, side })
}
