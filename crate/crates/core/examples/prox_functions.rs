//! Proximal maps, conjugates and the Moreau decomposition.

use spdhg::ProxableFunction;

fn main() -> spdhg::Result<()> {
    let v = [1.5, -0.2, 0.7];
    let t = 0.5;
    let fs = [
        ("l1(1)", ProxableFunction::l1(1.0)?),
        ("0.5*‖·‖²", ProxableFunction::squared_l2(1.0)?),
        ("½‖·-b‖²", ProxableFunction::least_squares(vec![1.0, 0.0, -1.0])),
        ("ι{b}", ProxableFunction::indicator_point(vec![1.0, 0.0, -1.0])),
    ];
    for (name, f) in &fs {
        let p = f.prox(&v, t)?;
        let q = f.conj_prox(&v.map(|x| x / t), 1.0 / t)?;
        // v = prox_{tf}(v) + t·prox_{f*/t}(v/t)
        let moreau: f64 = (0..3).map(|i| (p[i] + t * q[i] - v[i]).abs()).fold(0.0, f64::max);
        println!("{name:>10}: prox {p:.4?}  f(prox) {:.4}  f*(q) {:.4}  Moreau err {moreau:.1e}", f.value(&p), f.conj_value(&q));
    }

    let h = ProxableFunction::hinge(0.1, -1.0)?;
    println!("hinge value at 0.5: {}", h.value(&[0.5]));
    println!("hinge conj prox of 3.0: {:?}", h.conj_prox(&[3.0], 1.0)?);
    Ok(())
}
