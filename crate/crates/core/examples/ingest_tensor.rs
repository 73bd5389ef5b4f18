//! Generate a small fleet, write it as CSV, parse it back and build the
//! vehicle × system × time tensor under both time encodings.

use std::path::Path;

use fleet_prism::ingest::{clean_and_filter, extract_sequences, parse_maintenance, parse_vehicles, write_maintenance, write_vehicles};
use fleet_prism::synthgen::{generate_fleet, PlantedSpec};
use fleet_prism::tensor::{build_tensor, TimeEncoding, Transform};

fn main() -> fleet_prism::Result<()> {
    let spec = PlantedSpec::load_json(&Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data/small_spec.json"))?;
    let (dataset, _) = generate_fleet(&spec)?;

    let dir = tempfile::tempdir().expect("temp dir");
    let vp = dir.path().join("vehicles.csv");
    let mp = dir.path().join("maintenance.csv");
    write_vehicles(&vp, &dataset.vehicles.values().cloned().collect::<Vec<_>>())?;
    write_maintenance(&mp, &dataset.records)?;

    let ds = clean_and_filter(parse_maintenance(&mp)?, parse_vehicles(&vp)?, 2010);
    println!(
        "{} vehicles, {} jobs, {} orphans, {} duplicate job ids, {} inconsistent dates",
        ds.vehicles.len(),
        ds.records.len(),
        ds.orphans.len(),
        ds.flags.duplicate_job_ids.len(),
        ds.flags.inconsistent_dates.len()
    );

    let seqs = extract_sequences(&ds);
    let longest = seqs.iter().max_by_key(|s| s.len()).unwrap();
    println!("{} sequences; longest is {} with {} jobs", seqs.len(), longest.unit_id, longest.len());
    println!("  first jobs: {:?}", &longest.codes()[..longest.len().min(8)]);

    for enc in [TimeEncoding::AbsoluteMonth, TimeEncoding::LifetimeYear] {
        let built = build_tensor(&ds, enc, Transform::Log1p)?;
        println!(
            "{enc:?}: dims {:?}, time bins {}..{}",
            built.tensor.dims(),
            built.maps.time_bins.first().unwrap(),
            built.maps.time_bins.last().unwrap()
        );
    }
    Ok(())
}
