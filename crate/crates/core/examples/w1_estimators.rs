//! The three Wasserstein-1 estimators side by side.

use flowlab::eval::{w1, w1_1d, w1_assignment, Estimator};
use flowlab::rng::{standard_normal_vec, stream};
use flowlab::Samples;

fn main() -> flowlab::Result<()> {
    let mut rng = stream(1, "data");
    let a1 = Samples::new(1, standard_normal_vec(&mut rng, 300))?;
    let b1 = Samples::new(1, standard_normal_vec(&mut rng, 300).iter().map(|v| v + 0.5).collect())?;
    println!(
        "1D shift by 0.5: sorted {:.6}, assignment {:.6}",
        w1_1d(a1.as_slice(), b1.as_slice())?,
        w1_assignment(&a1, &b1)?
    );

    let d = 4;
    let m = 400;
    let a = Samples::new(d, standard_normal_vec(&mut rng, m * d))?;
    let b = Samples::new(d, standard_normal_vec(&mut rng, m * d).iter().map(|v| 1.3 * v).collect())?;
    for est in [Estimator::Assignment, Estimator::Sliced] {
        let r = w1(&a, &b, est, 128, &mut stream(1, "projections"))?;
        match r.se {
            Some(se) => println!("{d}D scale 1.3, {est}: {:.4} ± {se:.4}", r.value),
            None => println!("{d}D scale 1.3, {est}: {:.4}", r.value),
        }
    }
    println!("(sliced W1 averages one-dimensional projections, so it sits below the full W1)");
    println!(
        "auto choice for d=1: {}, d=4 m=400: {}, d=4 m=2000: {}",
        Estimator::auto(1, 2000),
        Estimator::auto(4, 400),
        Estimator::auto(4, 2000)
    );
    match w1_assignment(&Samples::new(1, vec![0.0; 600])?, &Samples::new(1, vec![0.0; 600])?) {
        Err(e) => println!("m=600: {e}"),
        Ok(v) => println!("m=600: {v}"),
    }
    Ok(())
}
