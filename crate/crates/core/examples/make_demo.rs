//! Regenerates the bundled synthetic dataset under `data/demo/`.
//!
//! ```text
//! cargo run -p prognet --example make_demo
//! ```

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const COUNTRIES: [&str; 12] = [
    "ARG", "AUS", "BRA", "CAN", "CHN", "DEU", "FRA", "GBR", "IND", "JPN", "KOR", "USA",
];
const YEARS: std::ops::RangeInclusive<i32> = 2010..=2019;
const LAG: i32 = 3;
const ADOPTION_YEARS: [i32; 5] = [2008, 2009, 2011, 2013, 2015];

/// (AI source label, goods code) pairs with a planted lagged dependency.
const PLANTED: [(&str, &str); 3] = [
    ("Autonomous Vehicle", "vehicles"),
    ("Agtech", "vegetable_products"),
    ("Medical Technology", "instruments"),
];
const BACKGROUND_AI: [&str; 7] = [
    "Advertising",
    "Fraud Detection, Money Laundering",
    "Text Analytics",
    "Network Security",
    "Gaming, e-sports",
    "Education",
    "Supply Chain Management",
];

const GOODS: [(&str, &str, &str); 20] = [
    ("live_animals", "Live animals", "HS I"),
    ("vegetable_products", "Vegetable products", "HS II"),
    ("fats_oils", "Animal and vegetable fats", "HS III"),
    ("food_beverages", "Prepared foodstuffs and beverages", "HS IV"),
    ("mineral_products", "Mineral products", "HS V"),
    ("chemicals", "Chemical products", "HS VI"),
    ("plastics_rubber", "Plastics and rubber", "HS VII"),
    ("hides_leather", "Hides and leather", "HS VIII"),
    ("wood_products", "Wood products", "HS IX"),
    ("paper_products", "Pulp and paper", "HS X"),
    ("textiles", "Textiles", "HS XI"),
    ("footwear", "Footwear and headgear", "HS XII"),
    ("stone_glass", "Stone, ceramic and glass", "HS XIII"),
    ("precious_metals", "Precious stones and metals", "HS XIV"),
    ("base_metals", "Base metals", "HS XV"),
    ("machinery", "Machinery and electrical equipment", "HS XVI"),
    ("vehicles", "Vehicles and transport equipment", "HS XVII"),
    ("instruments", "Optical and medical instruments", "HS XVIII"),
    ("home_office", "Home and office products", "HS XX"),
    ("art_antiques", "Works of art", "HS XXI"),
];
const SERVICES: [(&str, &str, &str); 8] = [
    ("transport", "Transport", "EBOPS SC"),
    ("travel", "Travel", "EBOPS SD"),
    ("construction", "Construction", "EBOPS SE"),
    ("insurance", "Insurance and pension", "EBOPS SF"),
    ("financial", "Financial services", "EBOPS SG"),
    ("ict", "Telecommunications and computer services", "EBOPS SI"),
    ("business", "Other business services", "EBOPS SJ"),
    ("recreational", "Personal, cultural and recreational services", "EBOPS SK"),
];

struct Layer {
    labels: Vec<String>,
    /// active[c][x][t]
    active: Vec<Vec<Vec<bool>>>,
}

impl Layer {
    fn new(labels: Vec<String>) -> Self {
        let n = labels.len();
        let nt = YEARS.count();
        Self {
            labels,
            active: vec![vec![vec![false; nt]; n]; COUNTRIES.len()],
        }
    }

    fn persistent(&mut self, c: usize, x: usize) {
        self.active[c][x].iter_mut().for_each(|a| *a = true);
    }

    fn from_year(&mut self, c: usize, x: usize, year: i32) {
        for (t, y) in YEARS.enumerate() {
            if y >= year {
                self.active[c][x][t] = true;
            }
        }
    }

    /// Specialized cells get large values, the rest small ones; a few small
    /// cells are left unreported.
    fn to_csv(&self, rng: &mut ChaCha8Rng, size: &[f64]) -> String {
        let mut out = String::from("country,sector,year,value\n");
        for (c, iso) in COUNTRIES.iter().enumerate() {
            for (x, label) in self.labels.iter().enumerate() {
                let skip = rng.random_bool(0.08);
                for (t, year) in YEARS.enumerate() {
                    let growth = 1.0 + 0.04 * t as f64;
                    let base = if self.active[c][x][t] {
                        rng.random_range(6.0..10.0)
                    } else if skip {
                        continue;
                    } else {
                        rng.random_range(0.4..1.4)
                    };
                    let value = base * size[c] * growth * 100.0;
                    let _ = writeln!(out, "{iso},{},{year},{value:.3}", quote(label));
                }
            }
        }
        out
    }
}

fn quote(s: &str) -> String {
    if s.contains(',') {
        format!("\"{s}\"")
    } else {
        s.to_string()
    }
}

fn pick(rng: &mut ChaCha8Rng, n: usize, lo: usize, hi: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let k = rng.random_range(lo..=hi);
    idx.truncate(k);
    idx
}

fn main() {
    let out_dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/demo");
    std::fs::create_dir_all(&out_dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(20240607);
    let nc = COUNTRIES.len();

    let mut ai_labels: Vec<String> = PLANTED.iter().map(|p| p.0.to_string()).collect();
    ai_labels.extend(BACKGROUND_AI.iter().map(|s| s.to_string()));
    let mut ai = Layer::new(ai_labels);
    let mut goods = Layer::new(GOODS.iter().map(|g| g.1.to_string()).collect());
    let mut services = Layer::new(SERVICES.iter().map(|s| s.2.to_string()).collect());

    let planted_goods: Vec<usize> = PLANTED
        .iter()
        .map(|p| GOODS.iter().position(|g| g.0 == p.1).unwrap())
        .collect();
    let background_goods: Vec<usize> = (0..GOODS.len()).filter(|x| !planted_goods.contains(x)).collect();

    for (k, &g) in planted_goods.iter().enumerate() {
        let mut adopters: Vec<usize> = (0..nc).collect();
        adopters.shuffle(&mut rng);
        let mut years = ADOPTION_YEARS;
        years.shuffle(&mut rng);
        for (&c, &year) in adopters.iter().zip(&years) {
            ai.from_year(c, k, year);
            goods.from_year(c, g, year + LAG);
        }
    }
    for c in 0..nc {
        for x in pick(&mut rng, BACKGROUND_AI.len(), 2, 3) {
            ai.persistent(c, PLANTED.len() + x);
        }
        for x in pick(&mut rng, background_goods.len(), 3, 5) {
            goods.persistent(c, background_goods[x]);
        }
        for x in pick(&mut rng, SERVICES.len(), 1, 3) {
            services.persistent(c, x);
        }
    }

    let size: Vec<f64> = (0..nc).map(|_| rng.random_range(0.5..5.0)).collect();
    let write = |name: &str, text: String| std::fs::write(out_dir.join(name), text).unwrap();
    write("ai.csv", ai.to_csv(&mut rng, &size));
    write("goods.csv", goods.to_csv(&mut rng, &size));
    write("services.csv", services.to_csv(&mut rng, &size));

    let mut tax = String::from("layer,raw_label,code,name\n");
    for (layer, rows) in [("Goods", &GOODS[..]), ("Services", &SERVICES[..])] {
        for (code, name, alt) in rows {
            let name = quote(name);
            let _ = writeln!(tax, "{layer},{name},{code},{name}");
            let _ = writeln!(tax, "{layer},{alt},{code},{name}");
        }
    }
    write("taxonomy.csv", tax);
}
