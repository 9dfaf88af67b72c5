//! Inverted-index fuzzy search over catalog names, with and without a
//! zipcode filter.

use merchant_resolve::datagen::generate_catalog;
use merchant_resolve::retrieval::{string_score, StringIndex};

fn main() -> merchant_resolve::Result<()> {
    let catalog = generate_catalog(5000, 9);
    let index = StringIndex::build(&catalog)?;
    let target = &catalog[1234];
    let query = target.name.to_uppercase().replace('E', "");
    println!("query {query:?} (from {:?} in {})", target.name, target.zipcode);
    for zip in [None, Some(target.zipcode.as_str())] {
        let r = index.search(&query, zip, 5);
        println!(
            "zip filter {zip:?}: {} -> {} candidates",
            r.candidates_before, r.candidates_after
        );
        for h in &r.hits {
            let name = &catalog.iter().find(|m| m.merchant_id == h.merchant_id).unwrap().name;
            println!("  {} {name:<30} {:.3}", h.merchant_id, h.score);
        }
    }
    println!(
        "string_score(\"golden bay grill\", \"golden bay\") = {:.3}",
        string_score("golden bay grill", "golden bay")
    );
    Ok(())
}
