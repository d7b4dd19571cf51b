//! Calibration stages recover what the simulator injected.

use lcamv::cam_lca::{calibrate_cam_lca, correct_image};
use lcamv::noise::{estimate_pixel_noise, fit_noise_model, RgbNoise};
use lcamv::phase::{decode_channel, phase_to_pixel, DecodeOptions};
use lcamv::prj_lca::{pose_samples, MomentAccumulator};
use lcamv::simulator::{
    calibration_depths, compact_rig, flat_levels, fringe_for, render, render_flat_pair, synthetic_corners,
    typical_cam_lca, PrjLcaTruth, Scene, SceneGeometry,
};
use lcamv::{Channel, Roi};

#[test]
fn camera_lca_from_compact_corners() {
    let truth = typical_cam_lca((480, 300), 1.0);
    let (reference, observed) = synthetic_corners((480, 300), (16, 10), &truth, 0.0, 3);
    let fit = calibrate_cam_lca(&reference, &observed).unwrap();
    for (got, want) in fit.params.to_array().iter().zip(truth.to_array()) {
        assert!((got - want).abs() <= 1e-6 * want.abs(), "{got} vs {want}");
    }
}

#[test]
fn projector_slopes_from_noiseless_poses() {
    let calib = compact_rig();
    let fringe = fringe_for(&calib, 3);
    let truth = PrjLcaTruth::typical();
    let (pw, ph) = calib.prj_size();
    let mut acc = MomentAccumulator::new(pw, ph);
    for z in calibration_depths(6, 180.0, 340.0) {
        let scene = Scene {
            geometry: SceneGeometry::fronto_parallel(z),
            prj_lca: truth,
            ..Scene::plane(z)
        };
        let stack = render(&scene, &calib, &fringe).unwrap();
        let field = |ch: Channel| {
            let c = stack.images.channel(ch);
            let (phase, _) = decode_channel(&c.fringes, &c.gray, &fringe, DecodeOptions::default(), Some(2)).unwrap();
            phase_to_pixel(&phase, fringe.wavelength, ch)
        };
        let pose = pose_samples(&field(Channel::G), &field(Channel::R), &calib).unwrap();
        acc.add_pose(&pose.delta, &pose.z_p).unwrap();
    }
    let maps = acc.fit();
    let errs: Vec<f64> = maps
        .alpha
        .iter_valid()
        .map(|(x, y, a)| (a - truth.r.alpha_at(x as f64, y as f64, (pw, ph))).abs())
        .collect();
    assert!(errs.len() > pw * ph / 4);
    let rms = (errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt();
    assert!(rms < 2e-4, "alpha rms {rms}");
}

#[test]
fn camera_correction_aligns_channels() {
    let calib = compact_rig();
    let fringe = fringe_for(&calib, 3);
    let lca = lcamv::simulator::typical_cam_lca_model((480, 300));
    let scene = Scene {
        cam_lca: lca,
        ..Scene::plane(300.0)
    };
    let stack = render(&scene, &calib, &fringe).unwrap();
    let decode = |ch: Channel, correct: bool| {
        let c = stack.images.channel(ch);
        let (f, g): (Vec<_>, Vec<_>) = match lca.for_channel(ch).filter(|_| correct) {
            Some(p) => (
                c.fringes.iter().map(|i| correct_image(i, p)).collect(),
                c.gray.iter().map(|i| correct_image(i, p)).collect(),
            ),
            None => (c.fringes.clone(), c.gray.clone()),
        };
        let (phase, _) = decode_channel(&f, &g, &fringe, DecodeOptions::default(), Some(2)).unwrap();
        phase_to_pixel(&phase, fringe.wavelength, ch).u_p
    };
    let green = decode(Channel::G, false);
    let rms_vs_green = |u: &lcamv::ChannelRaster| {
        let d: Vec<f64> = u
            .iter_valid()
            .filter(|&(x, y, _)| (40..440).contains(&x) && (30..270).contains(&y))
            .filter_map(|(x, y, v)| Some(v - green.get(x, y)?))
            .collect();
        (d.iter().map(|e| e * e).sum::<f64>() / d.len() as f64).sqrt()
    };
    let before = rms_vs_green(&decode(Channel::R, false));
    let after = rms_vs_green(&decode(Channel::R, true));
    assert!(after < 0.25 * before, "before {before}, after {after}");
}

#[test]
fn noise_coefficients_from_flat_pairs() {
    let calib = compact_rig();
    let scene = Scene {
        noise: RgbNoise::TABLE,
        seed: 12,
        ..Scene::plane(320.0)
    };
    let roi = Roi::new(140, 50, 340, 250);
    let mut samples = Vec::new();
    for (i, &level) in flat_levels(30, 5.0, 245.0).iter().enumerate() {
        let pair = render_flat_pair(&scene, &calib, level, i);
        samples.push(estimate_pixel_noise(&pair[1][0], &pair[1][1], roi).unwrap());
    }
    let fit = fit_noise_model(&samples).unwrap();
    assert!(!fit.clamped);
    let want = RgbNoise::TABLE.g;
    assert!((fit.params.k0 / want.k0 - 1.0).abs() < 0.1, "{:?}", fit.params);
    assert!((fit.params.k1 / want.k1 - 1.0).abs() < 0.1, "{:?}", fit.params);
}
