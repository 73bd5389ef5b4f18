//! Monthly maintenance cost per active vehicle for each department of a
//! synthetic fleet, forecast with rolling-origin ARIMA against a naive
//! last-value baseline.

use std::path::Path;

use fleet_prism::forecast::{build_cost_series, naive_rmse, rolling_origin_eval, ArimaSpec, Grouping};
use fleet_prism::synthgen::{generate_fleet, PlantedSpec};

fn main() -> fleet_prism::Result<()> {
    let spec = PlantedSpec::load_json(&Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data/small_spec.json"))?;
    let (ds, _) = generate_fleet(&spec)?;
    let mut depts: Vec<String> = ds.vehicles.values().map(|v| v.dept_code.clone()).collect();
    depts.sort();
    depts.dedup();

    let arima = ArimaSpec::new(1, 1, 1)?;
    for dept in depts {
        let series = build_cost_series(&ds, &Grouping::Department(dept))?;
        let eval = rolling_origin_eval(&series.values, &arima, 24, &[1, 6], 0)?;
        print!("{} ({} months):", series.grouping, series.len());
        for h in &eval.horizons {
            print!(
                "  h={} ARIMA rmse {:.2} vs naive {:.2}",
                h.horizon,
                h.rmse,
                naive_rmse(&series.values, 24, h.horizon)
            );
        }
        println!();
    }
    Ok(())
}
