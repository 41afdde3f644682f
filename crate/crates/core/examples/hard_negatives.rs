//! Mines hard negatives from reranker scores inside the [0.05, 0.30] band.

use agentic_ocr::agent::Query;
use agentic_ocr::curation::{exclude_ground_truth, mine_negatives, NegativeBand, PageRef, ScoredPage, ScriptedVerifier};

pub fn run_example() -> anyhow::Result<()> {
    let query = Query::new("q7", "Which segment grew fastest?");
    let page = |i: u32| PageRef { doc_id: "annual".into(), page_index: i };
    let scored: Vec<ScoredPage> = [0.91, 0.42, 0.30, 0.17, 0.05, 0.04, 0.22]
        .into_iter()
        .enumerate()
        .map(|(i, s)| ScoredPage { page: page(i as u32), relevance_score: s })
        .collect();

    let pool = exclude_ground_truth(scored, &[page(0)]);
    // the judge decides page 3 does answer the query after all
    let verifier = ScriptedVerifier::default().reject("q7", &page(3));
    let negatives = mine_negatives(&query, &pool, &NegativeBand::default(), &verifier)?;
    for n in &negatives {
        println!("{} score {:.2}", n.page, n.relevance_score);
    }
    Ok(())
}

fn main() -> anyhow::Result<()> {
    run_example()
}
