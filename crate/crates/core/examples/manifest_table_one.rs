//! Assigns splits with the reference per-class counts. The listing here is
//! synthetic paths only; `build_manifest` does the same from directories.

use std::path::PathBuf;

use xray_vit::train::{assign_splits, Split, SplitRequest};
use xray_vit::Result;

fn listing(dir: &str, n: usize) -> Vec<PathBuf> {
    (0..n)
        .map(|i| PathBuf::from(format!("{dir}/{i:05}.png")))
        .collect()
}

fn main() -> Result<()> {
    let m = assign_splits(
        listing("covid", 9543),
        vec![
            listing("lung_opacity", 3221),
            listing("viral_pneumonia", 3221),
            listing("normal", 3220),
        ],
        &SplitRequest::table_one(),
        7,
    )?;
    println!(
        "{:<11} {:>6} {:>10} {:>6}",
        "split", "COVID", "NON-COVID", "total"
    );
    for s in Split::ALL {
        let c = m.counts(s);
        println!(
            "{:<11} {:>6} {:>10} {:>6}",
            s.to_string(),
            c.covid,
            c.non_covid,
            c.total()
        );
    }
    let by_source = |split| {
        ["lung_opacity", "viral_pneumonia", "normal"]
            .map(|d| m.split(split).filter(|e| e.path.starts_with(d)).count())
    };
    println!("NON-COVID train sources: {:?}", by_source(Split::Train));
    println!("{} manifest lines", m.to_tsv().lines().count());
    Ok(())
}
