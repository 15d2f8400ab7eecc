use airlens::cost::{
    estimate_task, summarization_cost, CachedFraction, DataApiQuota, OverageMode, PricingTable,
    TaskProfile,
};

use crate::data::write;
use crate::error::CliError;
use crate::CostArgs;

pub fn run(args: CostArgs) -> Result<(), CliError> {
    let table = match &args.pricing {
        Some(path) => PricingTable::load(path)?,
        None => PricingTable::default(),
    };
    let worker = table.get(&args.model)?;
    let instructor = table.get(args.instructor_model.as_deref().unwrap_or(&args.model))?;
    let f = CachedFraction::new(args.cached_fraction)?;
    let s = summarization_cost(args.chunks, args.input_tokens, args.output_tokens, worker, f);
    let mut profile = TaskProfile::new(args.chunks, args.input_tokens);
    profile.chunk_output_tokens = args.output_tokens;
    let range = estimate_task(&profile, worker, instructor);
    let mode = if args.bucketed { OverageMode::Bucketed } else { OverageMode::Linear };
    let data = DataApiQuota::default().cost(args.data_calls, mode);

    println!("pricing table compiled {}", table.compiled);
    println!("worker model            {}", worker.model);
    println!("per chunk (exact)       {}", s.per_chunk);
    println!("per chunk (rounded)     {}", s.per_chunk_rounded.format_dp(2));
    println!("{} chunks (exact)       {}", s.chunks, s.total);
    println!("{} chunks (rounded)     {}", s.chunks, s.total_rounded.format_dp(2));
    println!("aggregation             {}", range.aggregation.format_dp(4));
    println!(
        "task estimate           {} .. {}",
        range.lower.format_dp(4),
        range.upper.format_dp(4)
    );
    println!("data API ({} calls)     {}", args.data_calls, data.format_dp(2));

    if let Some(path) = &args.out {
        let csv = format!(
            "item,usd\nper_chunk,{}\nper_chunk_rounded,{}\ntotal,{}\ntotal_rounded,{}\naggregation,{}\nestimate_lower,{}\nestimate_upper,{}\ndata_api,{}\n",
            s.per_chunk,
            s.per_chunk_rounded.format_dp(2),
            s.total,
            s.total_rounded.format_dp(2),
            range.aggregation,
            range.lower,
            range.upper,
            data,
        );
        write(path, &csv)?;
    }
    Ok(())
}
