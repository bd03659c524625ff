//! Rough phase timings for one training step. Run with:
//! cargo run --release -p handmesh-cli --example bench -- <dataset> <topology>

use std::time::Instant;

use autodiff::{Session, Tensor};
use handmesh_cli::data::{frame_input, frame_targets};
use handmesh_core::camera::{back_project, filter_outliers, sample_fixed, Hand};
use handmesh_core::config::RunConfig;
use handmesh_core::fusion::fuse_pyramid;
use handmesh_core::gcn::decode_mesh;
use handmesh_core::image_encoder::{decode_center, decode_mask, encode_pyramid, extract_center_feature};
use handmesh_core::losses::MeshConnectivity;
use handmesh_core::model::{define_params, forward_frame, frame_loss, ForwardOpts};
use handmesh_core::topology::MeshTopology;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let dataset = std::path::Path::new(&args[1]);
    let topo_path = std::path::Path::new(&args[2]);

    let mut cfg = RunConfig::default();
    cfg.paths.topology = topo_path.to_path_buf();
    cfg.paths.dataset = dataset.to_path_buf();
    if let Ok(mode) = std::env::var("BENCH_MODE") {
        use handmesh_core::fusion::FusionMode;
        let (m, ftn, cf) = match mode.as_str() {
            "depth_only" => (FusionMode::DepthOnly, false, false),
            "rgb_only" => (FusionMode::RgbOnly, false, true),
            "concat" => (FusionMode::Concat, false, true),
            _ => (FusionMode::Pdfnet, true, true),
        };
        cfg.fusion.mode = m;
        cfg.fusion.ftn = ftn;
        cfg.fusion.center_feature = cf;
    }
    let topo = MeshTopology::load(&cfg.paths.topology).unwrap();
    let conn = MeshConnectivity::from_faces(&topo.faces);
    let sample = handmesh_synth::load_sample(dataset, "s000000").unwrap();

    let mut store = define_params::<f32>(&cfg).unwrap();
    println!(
        "params: {} entries, {} elements",
        store.entries().len(),
        store.total_elements()
    );

    let input = frame_input(&sample);
    let targets = frame_targets(&sample);
    let opts = ForwardOpts {
        training: true,
        use_gt_mask: true,
        cloud_seed: 1,
    };

    for round in 0..3 {
        let t0 = Instant::now();
        let mut sess = Session::new(&mut store, true);
        let fwd = forward_frame(&mut sess, &cfg, &topo, &input, &opts).unwrap();
        let t_fwd = t0.elapsed();

        let t1 = Instant::now();
        let bundle = frame_loss(&mut sess, &cfg, &topo, &conn, &fwd, &targets, &input.intr).unwrap();
        let t_loss = t1.elapsed();

        let t2 = Instant::now();
        sess.graph.backward(bundle.total).unwrap();
        let t_bwd = t2.elapsed();

        let t3 = Instant::now();
        let grads = sess.grads();
        let t_grads = t3.elapsed();
        drop(sess);

        let t4 = Instant::now();
        let mut adam: autodiff::Adam<f32> = autodiff::Adam::new(Default::default());
        adam.step(&mut store, &grads, 1e-4);
        let t_adam = t4.elapsed();

        println!(
            "round {round}: forward {:?}, loss {:?}, backward {:?}, grads {:?}, adam {:?}",
            t_fwd, t_loss, t_bwd, t_grads, t_adam
        );
    }

    // Subsystem split of one forward pass.
    let mut sess = Session::new(&mut store, true);
    let t = Instant::now();
    let img = sess
        .constant(Tensor::from_f64s(vec![1, 3, sample.height, sample.width], &sample.rgb).unwrap());
    let pyr = encode_pyramid(&mut sess, img).unwrap();
    println!("encode_pyramid: {:?}", t.elapsed());
    let t = Instant::now();
    let center = decode_center(&mut sess, &pyr).unwrap();
    println!("decode_center: {:?}", t.elapsed());
    let t = Instant::now();
    let mask = decode_mask(&mut sess, &pyr).unwrap();
    println!("decode_mask: {:?}", t.elapsed());
    let t = Instant::now();
    let cf = extract_center_feature(&mut sess, &pyr, &center.peaks).unwrap();
    println!("center_feature: {:?}", t.elapsed());
    drop(mask);

    let t = Instant::now();
    let pc = back_project(&sample.depth, sample.width, sample.height, &sample.masks[1], &sample.intr, Hand::Right).unwrap();
    let pc = filter_outliers(&pc, 0.08).unwrap();
    let pc = sample_fixed(&pc, cfg.points.n_points, 3).unwrap();
    println!("cloud prep: {:?}", t.elapsed());
    let t = Instant::now();
    let g = fuse_pyramid(&mut sess, Some(&pyr), &pc, &cfg.point_dims(), &cfg.fusion, Some((&cf, 1)), cfg.fetch_mode()).unwrap();
    println!("fuse_pyramid: {:?}", t.elapsed());
    let t = Instant::now();
    let _d = decode_mesh(&mut sess, g, &topo, Hand::Right, [0.0, 0.0, 0.5], cfg.cheb_k).unwrap();
    println!("decode_mesh: {:?}", t.elapsed());
    println!("graph nodes: {}", sess.graph.len());
}
