use flare_core::deadlock::{run_campaign, CampaignParams, GeneratorConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let cases: u32 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let ordered: bool = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(true);
    let density: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.5);
    let hi: u32 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(10);
    let max_states: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(1_000_000);
    let params = CampaignParams {
        cases_per_fault: cases,
        seed: 42,
        max_states,
        config: GeneratorConfig {
            access_density: density,
            ordered_acquisition: ordered,
            interval_range: (1, hi),
        },
        ..CampaignParams::default()
    };
    let started = std::time::Instant::now();
    let report = run_campaign(&params);
    println!("total wall: {:.1}s", started.elapsed().as_secs_f64());
    println!("{}", report.summary_csv());
    let all: Vec<f64> = report.cases.iter().filter_map(|c| c.exam.map(|e| e.exam_score)).collect();
    let ranks: Vec<f64> = report.cases.iter().filter_map(|c| c.exam.map(|e| e.rank_of_first_fault as f64)).collect();
    println!("overall mean exam: {:.4}  mean rank: {:.2}  scored {}/{}",
        all.iter().sum::<f64>() / all.len() as f64,
        ranks.iter().sum::<f64>() / ranks.len() as f64,
        all.len(), report.cases.len());
    let not_found = report.cases.iter().filter(|c| c.exam.map_or(false, |e| e.not_found)).count();
    println!("not_found: {}", not_found);
    let max_st = report.cases.iter().map(|c| c.states).max().unwrap_or(0);
    let max_secs = report.cases.iter().map(|c| c.seconds).fold(0.0, f64::max);
    println!("max states: {}  max case seconds: {:.2}", max_st, max_secs);
}
