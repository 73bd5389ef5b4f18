//! Simulate an ARIMA(2,1,1) series, pick an order by AIC and forecast.

use fleet_prism::forecast::{arima_forecast, select_order};
use fleet_prism::synthgen::generate_arima_series;

fn main() -> fleet_prism::Result<()> {
    let series = generate_arima_series(&[0.6, -0.3], &[0.4], 1, 240, 1.0, 42)?;
    let fit = select_order(&series, 1, 3, 2, 0)?;
    println!(
        "selected ({}, {}, {}): ar {:?} ma {:?} sigma2 {:.3} aic {:.2}",
        fit.spec.p, fit.spec.d, fit.spec.q, fit.ar, fit.ma, fit.sigma2, fit.aic
    );
    for pt in arima_forecast(&fit, &series, 6)? {
        println!("  step {}: {:8.3}  [{:8.3}, {:8.3}]", pt.step, pt.mean, pt.lo, pt.hi);
    }
    Ok(())
}
