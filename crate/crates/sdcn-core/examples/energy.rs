use sdcn_core::synth::{make_object_chip, standard_templates, Pol};
fn main() {
    let templates = standard_templates();
    for (i, t) in templates.iter().enumerate() {
        let chip = make_object_chip(t, 15.0, &[Pol::HH, Pol::VV], 16, 16, 7).unwrap();
        let p = chip.mean_power_per_channel();
        let e_hh = p[0] * 256.0;
        let peak = chip.data.data().iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        let n_above_half = chip.data.data()[..256].iter().filter(|&&v| v > 0.5).count();
        println!(
            "template {:2} ({:?}): E_HH {:6.1}  SNR(l=1) {:6.2} dB  peak {:.3}  px>0.5 {}",
            i, t.class_kind, e_hh, 10.0 * (e_hh / 256.0).log10(), peak, n_above_half
        );
    }
}
